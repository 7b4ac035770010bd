#pragma once

#include "tsad/graph.hpp"
#include "tsad/timeseries.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include <optional>
#include <span>
#include <string_view>
#include <variant>
#include <vector>

namespace tsad {

enum class ForecastKind { ar_per_node, graph_filter };
enum class Aggregation { max, mean };

std::string_view to_string(ForecastKind kind);
std::string_view to_string(Aggregation aggregation);
Aggregation aggregation_from_string(std::string_view name);

inline constexpr double default_ridge = 1e-3;
inline constexpr double score_epsilon = 1e-9;

/**
 * Linear one-step forecaster x_hat(t+1) = f(X(t)).
 *
 * ar_per_node: node i predicts from its own window with its own length-w
 * coefficient vector. graph_filter: x_hat = sum_k A_hat^k X theta_k with
 * K+1 coefficient vectors shared by all nodes. Both carry an unpenalised
 * per-node intercept.
 */
class ForecastModel {
public:
    ForecastModel(ForecastKind kind,
                  Eigen::Index window,
                  std::vector<Eigen::VectorXd> coefficients,
                  Eigen::VectorXd intercepts,
                  Eigen::MatrixXd propagation,
                  double ridge);

    ForecastKind kind() const { return kind_; }
    Eigen::Index window() const { return window_; }
    Eigen::Index num_series() const { return intercepts_.size(); }
    /// K for graph filters, 0 for per-node autoregression.
    Eigen::Index filter_order() const;
    const std::vector<Eigen::VectorXd>& coefficients() const { return coefficients_; }
    const Eigen::VectorXd& intercepts() const { return intercepts_; }
    /// Normalised adjacency A_hat (graph filters only; empty otherwise).
    const Eigen::MatrixXd& propagation() const { return propagation_; }
    double ridge() const { return ridge_; }

    Eigen::VectorXd predict(const Eigen::MatrixXd& window) const;

private:
    ForecastKind kind_;
    Eigen::Index window_;
    std::vector<Eigen::VectorXd> coefficients_;
    Eigen::VectorXd intercepts_;
    Eigen::MatrixXd propagation_;
    double ridge_;
};

/// PCA-style reconstructor over flattened windows (entry i*w + j is node i, lag j).
class ReconstructionModel {
public:
    ReconstructionModel(Eigen::Index num_series,
                        Eigen::Index window,
                        Eigen::MatrixXd basis,
                        Eigen::VectorXd mean,
                        double explained_variance_ratio);

    Eigen::Index num_series() const { return num_series_; }
    Eigen::Index window() const { return window_; }
    Eigen::Index components() const { return basis_.cols(); }
    const Eigen::MatrixXd& basis() const { return basis_; }
    const Eigen::VectorXd& mean() const { return mean_; }
    double explained_variance_ratio() const { return explained_variance_ratio_; }

    Eigen::MatrixXd reconstruct(const Eigen::MatrixXd& window) const;

private:
    Eigen::Index num_series_;
    Eigen::Index window_;
    Eigen::MatrixXd basis_;
    Eigen::VectorXd mean_;
    double explained_variance_ratio_;
};

using Model = std::variant<ForecastModel, ReconstructionModel>;

ForecastModel fit_ar(const WindowBatch& train, double ridge = default_ridge);

/// `adjacency` must already be normalised (see normalize()).
ForecastModel fit_graph_filter(const WindowBatch& train,
                               const AdjacencyMatrix& adjacency,
                               Eigen::Index filter_order,
                               double ridge = default_ridge);

/// Retains the leading `components` principal directions; clamps (with a warning) to the data rank.
ReconstructionModel fit_reconstructor(const WindowBatch& train, Eigen::Index components);

/// Solves (G + ridge I) theta = rhs. Throws NumericalError for singular systems at ridge 0.
Eigen::VectorXd solve_ridge(const Eigen::MatrixXd& gram, const Eigen::VectorXd& rhs, double ridge);

// -- scoring ------------------------------------------------------------------

struct NormalizationStats {
    Eigen::VectorXd median;
    Eigen::VectorXd iqr;
};

/// Unnormalised per-node errors: |forecast - target|, or the RMS window residual for reconstructors.
struct RawErrors {
    Eigen::MatrixXd errors;          // N x B
    std::vector<std::size_t> times;  // timestamp each column is attributed to
};

RawErrors residual_errors(const Model& model, const WindowBatch& data);

NormalizationStats fit_normalization(const RawErrors& errors);

/// Anomaly scores aligned to timestamps. global_scores()[t] is the aggregation of node_scores().col(t).
class ScoreSeries {
public:
    ScoreSeries(Eigen::MatrixXd node_scores,
                std::vector<std::size_t> times,
                Aggregation aggregation = Aggregation::max,
                std::optional<NormalizationStats> stats = std::nullopt);

    const Eigen::MatrixXd& node_scores() const { return node_scores_; }
    const std::vector<double>& global_scores() const { return global_; }
    const std::vector<std::size_t>& times() const { return times_; }
    Aggregation aggregation() const { return aggregation_; }
    const std::optional<NormalizationStats>& stats() const { return stats_; }
    std::size_t size() const { return times_.size(); }
    Eigen::Index num_series() const { return node_scores_.rows(); }

private:
    Eigen::MatrixXd node_scores_;
    std::vector<double> global_;
    std::vector<std::size_t> times_;
    Aggregation aggregation_;
    std::optional<NormalizationStats> stats_;
};

enum class StatsMode { fit_on_data, precomputed };

struct ScoreOptions {
    StatsMode mode = StatsMode::fit_on_data;
    std::optional<NormalizationStats> stats;  // required in precomputed mode
    Aggregation aggregation = Aggregation::max;
    double epsilon = score_epsilon;
};

/// Robust per-node scores (err - median) / max(IQR, eps), clipped below at 0.
ScoreSeries score(const Model& model, const WindowBatch& data, const ScoreOptions& options = {});

ScoreSeries normalize_errors(const RawErrors& errors,
                             const NormalizationStats& stats,
                             Aggregation aggregation = Aggregation::max,
                             double epsilon = score_epsilon);

/// gamma * forecast + (1 - gamma) * reconstruction on the shared timestamps.
ScoreSeries combine_scores(const ScoreSeries& forecast, const ScoreSeries& reconstruction, double gamma);

/// Global labels at the timestamps covered by `scores`.
Labels labels_at(const ScoreSeries& scores, std::span<const std::uint8_t> labels);

/// Mean squared error over windows whose every timestamp (inputs and target) is labelled normal.
double normal_window_mse(const Model& model, const WindowBatch& data, std::span<const std::uint8_t> labels);

// -- serialisation ------------------------------------------------------------

nlohmann::json to_json(const Model& model);
Model model_from_json(const nlohmann::json& j);
nlohmann::json to_json(const NormalizationStats& stats);
NormalizationStats stats_from_json(const nlohmann::json& j);

void write_scores_csv(const std::filesystem::path& path,
                      const ScoreSeries& scores,
                      const std::vector<std::string>& names = {});
ScoreSeries read_scores_csv(const std::filesystem::path& path, Aggregation aggregation = Aggregation::max);

} // namespace tsad
