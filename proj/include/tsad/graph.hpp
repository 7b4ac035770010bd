#pragma once

#include "tsad/timeseries.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string_view>
#include <vector>

namespace tsad {

enum class GraphSource { fully_connected, file, random, mb_inferred, ground_truth, normalized };

std::string_view to_string(GraphSource source);

/**
 * Undirected weighted graph over the series.
 *
 * A raw adjacency is symmetric, finite, non-negative with a zero diagonal.
 * normalize() produces the propagation operator D^-1/2 (A + I) D^-1/2, which
 * carries self-loops and is flagged with is_normalized().
 */
class AdjacencyMatrix {
public:
    AdjacencyMatrix(Eigen::MatrixXd weights, GraphSource source, bool normalized = false);

    const Eigen::MatrixXd& weights() const { return weights_; }
    Eigen::Index size() const { return weights_.rows(); }
    GraphSource source() const { return source_; }
    bool is_normalized() const { return normalized_; }

    /// Number of undirected off-diagonal edges with non-zero weight.
    std::size_t edge_count() const;
    /// edge_count() / C(n, 2); 0 for a single node.
    double density() const;

private:
    Eigen::MatrixXd weights_;
    GraphSource source_;
    bool normalized_;
};

AdjacencyMatrix fully_connected(Eigen::Index n);

/// Erdos-Renyi graph: each unordered pair is an edge with probability p.
AdjacencyMatrix random_graph(Eigen::Index n, double edge_probability, std::uint64_t seed);

/// Edge list, one "i j [weight]" per line, 0-based indices; '#' starts a comment.
AdjacencyMatrix load_graph(const std::filesystem::path& path, Eigen::Index n);
void save_graph(const std::filesystem::path& path, const AdjacencyMatrix& adjacency);

AdjacencyMatrix normalize(const AdjacencyMatrix& adjacency);

/// F1 of the off-diagonal edge set of `estimate` against `truth`; 1 when both are empty.
double edge_f1(const AdjacencyMatrix& estimate, const AdjacencyMatrix& truth);

// -- lasso / Meinshausen-Buhlmann neighbourhood selection --------------------

struct LassoOptions {
    double tolerance = 1e-8;  // stop when the largest coefficient change in a sweep falls below
    int max_sweeps = 10000;
};

struct LassoResult {
    Eigen::VectorXd coefficients;
    int sweeps = 0;
    bool converged = false;
};

/// Minimises (1/2n)||y - X b||^2 + lambda ||b||_1 by cyclic coordinate descent.
LassoResult lasso_coordinate_descent(const Eigen::MatrixXd& x,
                                     const Eigen::VectorXd& y,
                                     double lambda,
                                     const LassoOptions& options = {});

/// Smallest lambda whose lasso solution is identically zero: max_j |x_j' y| / n.
double lasso_lambda_max(const Eigen::MatrixXd& x, const Eigen::VectorXd& y);

enum class MbRule { either, both };  // OR / AND symmetrisation

std::string_view to_string(MbRule rule);
MbRule mb_rule_from_string(std::string_view name);

struct MbOptions {
    /// Absolute penalty applied to every node. When unset, each node uses
    /// lambda_ratio * lambda_max(node).
    std::optional<double> lambda;
    double lambda_ratio = 0.1;
    MbRule rule = MbRule::either;
    LassoOptions lasso;
    unsigned workers = 1;
};

struct MbResult {
    AdjacencyMatrix graph;
    MbRule rule;
    std::vector<double> lambdas;    // penalty used per node
    Eigen::MatrixXd coefficients;   // row i: regression of node i on the others (zero diagonal)
    Eigen::VectorXd mean;           // standardisation statistics of the training data
    Eigen::VectorXd stddev;
};

MbResult infer_mb(const TimeSeriesSet& train, const MbOptions& options = {});

nlohmann::json mb_metadata(const MbResult& result);

} // namespace tsad
