#pragma once

#include "tsad/detectors.hpp"
#include "tsad/graph.hpp"
#include "tsad/metrics.hpp"
#include "tsad/synthetic.hpp"
#include "tsad/thresholding.hpp"
#include "tsad/timeseries.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace tsad {

// -- configuration ------------------------------------------------------------

struct CsvDatasetPaths {
    std::filesystem::path train;
    std::filesystem::path validation;
    std::filesystem::path test;
    std::optional<std::filesystem::path> train_labels;
    std::optional<std::filesystem::path> validation_labels;
    std::optional<std::filesystem::path> test_labels;
    std::optional<std::filesystem::path> ground_truth_graph;
};

/// Exactly one of `synthetic` and `csv` is set.
struct DatasetSpec {
    std::optional<SyntheticConfig> synthetic;
    std::optional<std::uint64_t> seed;  // synthetic generator seed; the experiment seed when unset
    std::optional<CsvDatasetPaths> csv;
    bool minmax_scaling = true;         // scaler fit on the training split
};

enum class DetectorKind { ar, graph_filter, reconstruction, combined };

std::string_view to_string(DetectorKind kind);
DetectorKind detector_kind_from_string(std::string_view name);

struct DetectorSpec {
    DetectorKind kind = DetectorKind::graph_filter;
    Eigen::Index filter_order = 2;
    double ridge = default_ridge;
    std::optional<Eigen::Index> components;  // reconstruction rank; N when unset
    double gamma = 0.5;                      // forecast weight of the combined detector
    Aggregation aggregation = Aggregation::max;

    bool graph_aware() const { return kind == DetectorKind::graph_filter || kind == DetectorKind::combined; }
};

enum class GraphKind { fully_connected, random, file, mb, ground_truth };

std::string_view to_string(GraphKind kind);
GraphKind graph_kind_from_string(std::string_view name);

struct GraphSpec {
    GraphKind kind = GraphKind::fully_connected;
    std::string name;                         // row label; defaults to the kind
    std::optional<double> edge_probability;   // random: ground-truth density when unset
    std::optional<std::uint64_t> seed;        // random: derived from the experiment seed when unset
    std::filesystem::path path;               // file
    MbOptions mb;                             // mb

    std::string label() const { return name.empty() ? std::string(to_string(kind)) : name; }
};

struct ThresholdSpec {
    ThresholdStrategy strategy = ThresholdStrategy::best_f1;
    std::size_t bins = 256;
    DynamicThresholdOptions dynamic;
};

enum class HistogramScale { linear, log };

struct HistogramSpec {
    bool enabled = true;
    std::size_t bins = 50;
    HistogramScale scale = HistogramScale::log;
    double epsilon = 1e-9;
};

struct StudySpec {
    std::size_t trials = 50;
    /// Keys among window, ridge, filter_order, components, gamma; each maps to a list of values.
    nlohmann::json search_space = nlohmann::json::object();
};

struct ExperimentConfig {
    DatasetSpec dataset;
    Eigen::Index window = 10;
    DetectorSpec detector;
    GraphSpec graph;
    ThresholdSpec threshold;
    EvaluationOptions metrics;
    HistogramSpec histogram;
    std::vector<GraphSpec> topologies;  // ablation
    StudySpec study;                    // correlation study
    std::filesystem::path output_dir = "results";
    std::uint64_t seed = 0;
    unsigned workers = 1;
};

/// Parses and validates a config; `base_dir` resolves relative paths.
ExperimentConfig experiment_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});

/// Canonical form of every field that influences results (excludes output_dir and workers).
nlohmann::json to_json(const ExperimentConfig& config);

/// FNV-1a 64 hash of the canonical config, as 16 hex digits.
std::string config_hash(const ExperimentConfig& config);

// -- pipeline stages ----------------------------------------------------------

struct PreparedData {
    TimeSeriesSet train;
    TimeSeriesSet validation;
    TimeSeriesSet test;
    std::optional<AdjacencyMatrix> ground_truth;
};

/// Raw splits as generated or read from disk.
PreparedData load_dataset(const DatasetSpec& spec, std::uint64_t experiment_seed);

/// load_dataset followed by min-max scaling fit on the training split (when enabled).
PreparedData prepare_data(const ExperimentConfig& config);

/// Throws ConfigError unless 1 <= window < T for every split.
void check_window(Eigen::Index window, const PreparedData& data);

struct GraphBuild {
    AdjacencyMatrix graph;
    nlohmann::json metadata;
};

GraphBuild build_graph(const GraphSpec& spec, const PreparedData& data, std::uint64_t seed, unsigned workers);

/// Fitted detector with normalisation statistics from the validation split.
struct TrainedDetector {
    DetectorSpec spec;
    Eigen::Index window = 0;
    std::vector<Model> models;  // one model, or forecast then reconstruction for the combined detector
    std::vector<NormalizationStats> stats;
};

TrainedDetector train_detector(const ExperimentConfig& config,
                               const TimeSeriesSet& train,
                               const std::optional<AdjacencyMatrix>& graph);

/// Fits per-model median/IQR on the validation errors.
void calibrate(TrainedDetector& detector, const TimeSeriesSet& validation);

ScoreSeries score_detector(const TrainedDetector& detector, const TimeSeriesSet& data);

/// Mean squared error over the fully normal windows of `data`, averaged across the detector's models.
double validation_loss(const TrainedDetector& detector, const TimeSeriesSet& data);

nlohmann::json to_json(const TrainedDetector& detector);
TrainedDetector trained_detector_from_json(const nlohmann::json& j);

/// Static strategies are fit on validation scores; the dynamic strategy runs on the test scores.
ThresholdDecision fit_threshold(const ThresholdSpec& spec,
                                const ScoreSeries& validation_scores,
                                std::span<const std::uint8_t> validation_labels);

// -- histograms ---------------------------------------------------------------

struct Histogram {
    HistogramScale scale = HistogramScale::linear;
    double epsilon = 1e-9;
    std::vector<double> edges;  // bins + 1 edges in the (possibly log-transformed) score domain
    std::vector<std::size_t> normal;
    std::vector<std::size_t> anomalous;
    std::optional<double> threshold;  // raw score units
};

Histogram export_histograms(std::span<const double> scores,
                            std::span<const std::uint8_t> labels,
                            std::size_t bins,
                            HistogramScale scale,
                            double epsilon = 1e-9,
                            std::optional<double> threshold = std::nullopt);

/// Writes `<stem>.csv` (bin_left,bin_right,count_normal,count_anomalous) and `<stem>.json` with the threshold.
void write_histogram(const std::filesystem::path& stem, const Histogram& histogram);

// -- experiments --------------------------------------------------------------

struct ResultRow {
    std::string model;
    std::string topology;
    MetricReport report;
    ThresholdDecision threshold;
    nlohmann::json graph;  // edge count, density, and builder metadata
    int vus_roc_rank = 1;  // 1 = best, 2 = second best, ...
    int vus_pr_rank = 1;
    std::optional<Histogram> histogram;
};

struct BenchmarkResult {
    std::vector<ResultRow> rows;
    nlohmann::json provenance;
};

/// train -> calibrate on validation -> threshold on validation -> score test -> predict -> evaluate.
/// When `artifacts` is set the model, score series, threshold and predictions are written there as well.
BenchmarkResult run_experiment(const ExperimentConfig& config,
                               const std::optional<std::filesystem::path>& artifacts = std::nullopt);

/// One row per topology in config.topologies with otherwise identical settings.
BenchmarkResult run_topology_ablation(const ExperimentConfig& config);

struct TrialRecord {
    std::size_t index = 0;
    nlohmann::json parameters;
    std::optional<Trial> trial;
    std::string error;  // set when the trial failed
};

struct CorrelationStudy {
    std::vector<TrialRecord> trials;
    CorrelationMatrix correlation;
    nlohmann::json provenance;
};

/// Seeded sampling of the search-space grid; metrics on the full validation split.
CorrelationStudy run_correlation_study(const ExperimentConfig& config);

/// Correlation study over precomputed trials (no fitting).
CorrelationStudy correlation_from_trials(std::vector<TrialRecord> trials);

void write_report(const std::filesystem::path& dir, const BenchmarkResult& result, const ExperimentConfig& config);
void write_study(const std::filesystem::path& dir, const CorrelationStudy& study);

nlohmann::json to_json(const BenchmarkResult& result, const ExperimentConfig& config);
std::string report_csv(const BenchmarkResult& result);

/// Rows in the generate-command layout: <dir>/{train,validation,test}.csv, *_labels.csv, ground_truth_graph.txt.
void write_dataset(const std::filesystem::path& dir, const PreparedData& data);

} // namespace tsad
