#pragma once

#include "tsad/graph.hpp"
#include "tsad/timeseries.hpp"

#include <json.hpp>

#include <cstdint>
#include <vector>

namespace tsad {

/// Additive level shift of `magnitude` on `nodes` over [start, start + length) of one split.
struct AnomalySpec {
    Split split = Split::test;
    std::size_t start = 0;
    std::size_t length = 1;
    double magnitude = 1.0;
    std::vector<std::size_t> nodes;
};

/// Randomly placed, non-overlapping level shifts for one split.
struct RandomAnomalyPlan {
    std::size_t count = 0;
    std::size_t min_length = 5;
    std::size_t max_length = 20;
    double magnitude = 1.0;
    std::size_t nodes_per_anomaly = 1;
    std::size_t margin = 10;  // keep-out zone at both ends of the split and between anomalies
};

/**
 * Graph-diffusion process x(t+1) = diffusion * A_hat x(t) + persistence * x(t) + e(t)
 * on a random ground-truth graph, where A_hat is the normalised adjacency.
 *
 * The innovation e(t) is white with standard deviation `noise` when
 * noise_coupling is 0. A positive coupling draws e(t) from a Gaussian Markov
 * field with precision (I + noise_coupling * L) / noise^2, L the graph
 * Laplacian, so neighbouring series also share contemporaneous shocks.
 */
struct SyntheticConfig {
    std::size_t num_nodes = 10;
    std::size_t train_length = 2000;
    std::size_t validation_length = 1000;
    std::size_t test_length = 1000;
    double edge_probability = 0.2;
    bool connect_isolated = true;  // give every isolated node one random neighbour
    double diffusion = 0.6;
    double persistence = 0.3;
    double noise = 0.1;
    double noise_coupling = 0.0;
    std::size_t burn_in = 200;
    std::vector<AnomalySpec> anomalies;
    RandomAnomalyPlan validation_plan;
    RandomAnomalyPlan test_plan;
};

struct SyntheticDataset {
    TimeSeriesSet train;
    TimeSeriesSet validation;
    TimeSeriesSet test;
    AdjacencyMatrix ground_truth;
};

SyntheticDataset generate_synthetic(const SyntheticConfig& config, std::uint64_t seed);

/// Largest |eigenvalue| of the transition matrix diffusion * A_hat + persistence * I.
double transition_spectral_radius(const AdjacencyMatrix& ground_truth, double diffusion, double persistence);

SyntheticConfig synthetic_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SyntheticConfig& config);

} // namespace tsad
