#pragma once

#include "tsad/timeseries.hpp"

#include <json.hpp>

#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

namespace tsad {

enum class ThresholdStrategy { best_f1, otsu, dynamic };

std::string_view to_string(ThresholdStrategy strategy);
ThresholdStrategy threshold_strategy_from_string(std::string_view name);

struct DynamicThresholdOptions {
    std::size_t window = 100;
    double k = 3.0;
    double epsilon = 1e-9;
    bool freeze_on_flag = true;  // flagged points do not enter later rolling statistics
};

/// Outcome of a thresholding strategy. A point is flagged iff its score is strictly above the threshold.
struct ThresholdDecision {
    ThresholdStrategy strategy = ThresholdStrategy::best_f1;
    double threshold = 0.0;                // static strategies
    std::vector<double> threshold_series;  // dynamic: per-point threshold, +inf during warm-up
    Labels predictions;
    std::size_t bins = 0;                  // otsu
    DynamicThresholdOptions dynamic;       // dynamic
    double objective = 0.0;                // F1 (best_f1) or between-class variance (otsu)
};

/// Maximises point-wise F1 over midpoints of consecutive distinct scores plus two sentinels.
/// Ties go to the largest threshold.
ThresholdDecision best_f1_threshold(std::span<const double> scores, std::span<const std::uint8_t> labels);

/// Otsu's method on a `bins`-bin histogram over [min, max]; ties go to the smallest boundary.
ThresholdDecision otsu_threshold(std::span<const double> scores, std::size_t bins = 256);

/// Rolling mean + k * max(std, eps) over the previous `window` unflagged points.
ThresholdDecision dynamic_threshold(std::span<const double> scores, const DynamicThresholdOptions& options = {});

/// Re-applies a static decision to new scores (strict '>'); dynamic decisions are recomputed on `scores`.
ThresholdDecision apply_threshold(const ThresholdDecision& decision, std::span<const double> scores);

Labels predict_above(std::span<const double> scores, double threshold);

/// Point-wise F1 of predictions against labels (0 when undefined).
double f1_score(std::span<const std::uint8_t> predictions, std::span<const std::uint8_t> labels);

nlohmann::json to_json(const ThresholdDecision& decision, bool include_series = false);
ThresholdDecision threshold_from_json(const nlohmann::json& j);

/// Writes predictions in the label CSV format: header "global" followed by one 0/1 per row.
void write_predictions_csv(const std::filesystem::path& path, const ThresholdDecision& decision);

} // namespace tsad
