#pragma once

#include "tsad/timeseries.hpp"

#include <json.hpp>

#include <array>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace tsad {

struct PointwiseResult {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::size_t tp = 0;
    std::size_t fp = 0;
    std::size_t fn = 0;
    std::size_t tn = 0;
};

PointwiseResult pointwise(std::span<const std::uint8_t> predictions, std::span<const std::uint8_t> labels);

double harmonic_mean(double a, double b);

// -- range-based metrics ------------------------------------------------------

enum class PositionBias { flat, front, back, middle };
enum class CardinalityPenalty { none, inverse };

std::string_view to_string(PositionBias bias);
std::string_view to_string(CardinalityPenalty penalty);
PositionBias position_bias_from_string(std::string_view name);
CardinalityPenalty cardinality_from_string(std::string_view name);

struct RangeMetricConfig {
    double alpha = 0.0;  // existence weight for recall; precision always uses 0
    PositionBias bias = PositionBias::flat;
    CardinalityPenalty cardinality = CardinalityPenalty::inverse;
};

/// Weight of the position with 1-based `rank` inside a range of `length` positions.
double position_weight(PositionBias bias, std::size_t rank, std::size_t length);

/**
 * Range recall: mean over real ranges of
 *   alpha * Existence + (1 - alpha) * gamma(x) * omega,
 * where omega is the bias-weighted fraction of the range covered by predictions
 * and x the number of predicted ranges overlapping it.
 * An empty real set scores 1 (with a warning).
 */
double range_recall(const LabelRanges& real, const LabelRanges& predicted, const RangeMetricConfig& config);

/// Range recall with the two sets swapped and alpha = 0.
double range_precision(const LabelRanges& real, const LabelRanges& predicted, const RangeMetricConfig& config);

// -- threshold-agnostic metrics ----------------------------------------------

/// Unique score values beyond which the threshold sweep is subsampled to this many quantiles.
inline constexpr std::size_t max_exact_thresholds = 100000;

struct AucPair {
    double roc = 0.0;
    double pr = 0.0;
};

/// ROC (trapezoidal) and PR (step-wise, precision 1 at zero recall) areas for labels in [0, 1].
AucPair auc(std::span<const double> scores, std::span<const double> labels);
double auc_roc(std::span<const double> scores, std::span<const double> labels);
double auc_pr(std::span<const double> scores, std::span<const double> labels);

/// Labels softened by a linear buffer of width `buffer` around every anomaly range.
std::vector<double> buffered_labels(std::span<const std::uint8_t> labels, std::size_t buffer);

/// Half the median range length (rounded down), capped at 250.
std::size_t default_vus_buffer(std::span<const std::uint8_t> labels);

/// Mean AUC over buffer widths 0..max_buffer. Requires 2 * max_buffer < T.
AucPair vus(std::span<const double> scores,
            std::span<const std::uint8_t> labels,
            std::size_t max_buffer,
            unsigned workers = 1);

// -- correlation --------------------------------------------------------------

/// Sample Pearson correlation. Throws DataError for constant inputs.
double pearson(std::span<const double> x, std::span<const double> y);

// -- reports ------------------------------------------------------------------

inline constexpr std::array<std::string_view, 8> metric_columns = {"P",   "R",   "F1",      "P_T",
                                                                   "R_T", "F1_T", "VUS-ROC", "VUS-PR"};

struct MetricReport {
    PointwiseResult point;
    double range_precision = 0.0;
    double range_recall = 0.0;
    double range_f1 = 0.0;
    double vus_roc = 0.0;
    double vus_pr = 0.0;
    RangeMetricConfig config;
    std::size_t vus_buffer = 0;

    /// Values in metric_columns order.
    std::array<double, 8> values() const;
};

struct EvaluationOptions {
    RangeMetricConfig range;
    std::optional<std::size_t> vus_buffer;  // default_vus_buffer() when unset
    unsigned workers = 1;
};

MetricReport evaluate(std::span<const double> scores,
                      std::span<const std::uint8_t> predictions,
                      std::span<const std::uint8_t> labels,
                      const EvaluationOptions& options = {});

nlohmann::json to_json(const MetricReport& report);
nlohmann::json to_json(const RangeMetricConfig& config);
RangeMetricConfig range_config_from_json(const nlohmann::json& j);

std::string metric_csv_header();
std::string metric_csv_row(const MetricReport& report);

struct Trial {
    double validation_loss = 0.0;
    MetricReport report;
};

/// Pairwise Pearson correlations over validation_loss and every metric column.
/// Entries involving a constant column are undefined (nullopt).
struct CorrelationMatrix {
    std::vector<std::string> labels;
    std::vector<std::vector<std::optional<double>>> values;

    /// Row of correlations between the validation loss and each metric column.
    std::vector<std::optional<double>> loss_row() const { return values.front(); }
};

CorrelationMatrix loss_metric_correlation(const std::vector<Trial>& trials);

nlohmann::json to_json(const CorrelationMatrix& matrix);
std::string correlation_csv(const CorrelationMatrix& matrix);

} // namespace tsad
