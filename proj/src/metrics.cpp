#include "tsad/metrics.hpp"

#include "tsad/csv.hpp"
#include "tsad/error.hpp"
#include "tsad/json_util.hpp"
#include "tsad/parallel.hpp"
#include "tsad/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace tsad {

double harmonic_mean(double a, double b)
{
    return a + b > 0.0 ? 2.0 * a * b / (a + b) : 0.0;
}

PointwiseResult pointwise(std::span<const std::uint8_t> predictions, std::span<const std::uint8_t> labels)
{
    if (predictions.size() != labels.size()) {
        throw DataError("pointwise: predictions (" + std::to_string(predictions.size()) + ") and labels (" +
                        std::to_string(labels.size()) + ") differ in length");
    }
    PointwiseResult r;
    for (std::size_t t = 0; t < labels.size(); ++t) {
        const bool p = predictions[t] != 0;
        const bool l = labels[t] != 0;
        r.tp += p && l;
        r.fp += p && !l;
        r.fn += !p && l;
        r.tn += !p && !l;
    }
    r.precision = r.tp + r.fp > 0 ? static_cast<double>(r.tp) / static_cast<double>(r.tp + r.fp) : 0.0;
    r.recall = r.tp + r.fn > 0 ? static_cast<double>(r.tp) / static_cast<double>(r.tp + r.fn) : 0.0;
    r.f1 = harmonic_mean(r.precision, r.recall);
    return r;
}

// -- range-based metrics ------------------------------------------------------

std::string_view to_string(PositionBias bias)
{
    switch (bias) {
    case PositionBias::flat:
        return "flat";
    case PositionBias::front:
        return "front";
    case PositionBias::back:
        return "back";
    case PositionBias::middle:
        return "middle";
    }
    return "unknown";
}

std::string_view to_string(CardinalityPenalty penalty)
{
    return penalty == CardinalityPenalty::none ? "none" : "inverse";
}

PositionBias position_bias_from_string(std::string_view name)
{
    for (auto b : {PositionBias::flat, PositionBias::front, PositionBias::back, PositionBias::middle}) {
        if (to_string(b) == name) {
            return b;
        }
    }
    throw ConfigError("unknown position bias '" + std::string(name) + "'");
}

CardinalityPenalty cardinality_from_string(std::string_view name)
{
    if (name == "none") {
        return CardinalityPenalty::none;
    }
    if (name == "inverse") {
        return CardinalityPenalty::inverse;
    }
    throw ConfigError("unknown cardinality penalty '" + std::string(name) + "'");
}

double position_weight(PositionBias bias, std::size_t rank, std::size_t length)
{
    switch (bias) {
    case PositionBias::flat:
        return 1.0;
    case PositionBias::front:
        return static_cast<double>(length - rank + 1);
    case PositionBias::back:
        return static_cast<double>(rank);
    case PositionBias::middle:
        return static_cast<double>(2 * rank <= length ? rank : length - rank + 1);
    }
    return 1.0;
}

namespace {

void check_config(const RangeMetricConfig& config)
{
    if (!(config.alpha >= 0.0 && config.alpha <= 1.0)) {
        throw ConfigError("range metric alpha must lie in [0, 1]");
    }
}

double overlap_reward(const LabelRanges& targets, const LabelRanges& others, double alpha, const RangeMetricConfig& config,
                      std::string_view empty_message)
{
    check_config(config);
    if (targets.horizon() != others.horizon()) {
        throw DataError("range metrics: real and predicted ranges have different horizons");
    }
    if (targets.empty()) {
        warn(empty_message);
        return 1.0;
    }
    const auto& mine = targets.ranges();
    const auto& theirs = others.ranges();
    double total = 0.0;
    std::size_t first = 0;  // first range in `theirs` that may still overlap
    for (const auto& r : mine) {
        while (first < theirs.size() && theirs[first].end <= r.start) {
            ++first;
        }
        std::size_t hits = 0;
        double covered = 0.0;
        for (std::size_t k = first; k < theirs.size() && theirs[k].start < r.end; ++k) {
            ++hits;
            const auto lo = std::max(r.start, theirs[k].start);
            const auto hi = std::min(r.end, theirs[k].end);
            for (auto p = lo; p < hi; ++p) {
                covered += position_weight(config.bias, p - r.start + 1, r.length());
            }
        }
        double weight_total = 0.0;
        for (std::size_t rank = 1; rank <= r.length(); ++rank) {
            weight_total += position_weight(config.bias, rank, r.length());
        }
        const double existence = hits > 0 ? 1.0 : 0.0;
        const double gamma =
            config.cardinality == CardinalityPenalty::inverse && hits > 1 ? 1.0 / static_cast<double>(hits) : 1.0;
        total += alpha * existence + (1.0 - alpha) * gamma * (covered / weight_total);
    }
    return total / static_cast<double>(mine.size());
}

} // namespace

double range_recall(const LabelRanges& real, const LabelRanges& predicted, const RangeMetricConfig& config)
{
    return overlap_reward(real, predicted, config.alpha, config, "range recall: no real anomaly ranges; defined as 1");
}

double range_precision(const LabelRanges& real, const LabelRanges& predicted, const RangeMetricConfig& config)
{
    return overlap_reward(predicted, real, 0.0, config, "range precision: no predicted ranges; defined as 1");
}

// -- threshold-agnostic metrics ----------------------------------------------

AucPair auc(std::span<const double> scores, std::span<const double> labels)
{
    if (scores.size() != labels.size()) {
        throw DataError("auc: scores and labels differ in length");
    }
    double positives = 0.0;
    double negatives = 0.0;
    for (std::size_t t = 0; t < labels.size(); ++t) {
        if (!std::isfinite(scores[t])) {
            throw DataError("auc: scores must be finite");
        }
        if (!(labels[t] >= 0.0 && labels[t] <= 1.0)) {
            throw DataError("auc: labels must lie in [0, 1]");
        }
        positives += labels[t];
        negatives += 1.0 - labels[t];
    }
    if (positives <= 0.0) {
        throw DataError("auc: no positive labels; ROC is undefined");
    }
    if (negatives <= 0.0) {
        throw DataError("auc: no negative labels; false-positive rate is undefined");
    }

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] > scores[b]; });

    // Cumulative (tp, fp) after each group of tied scores, i.e. at each midpoint threshold.
    std::vector<std::pair<double, double>> curve;
    double tp = 0.0;
    double fp = 0.0;
    std::size_t k = 0;
    while (k < order.size()) {
        const double value = scores[order[k]];
        while (k < order.size() && scores[order[k]] == value) {
            tp += labels[order[k]];
            fp += 1.0 - labels[order[k]];
            ++k;
        }
        curve.emplace_back(tp, fp);
    }
    if (curve.size() > max_exact_thresholds) {
        std::vector<std::pair<double, double>> thinned;
        thinned.reserve(max_exact_thresholds);
        for (std::size_t q = 1; q <= max_exact_thresholds; ++q) {
            thinned.push_back(curve[q * curve.size() / max_exact_thresholds - 1]);
        }
        curve = std::move(thinned);
    }

    AucPair out;
    double prev_tp = 0.0;
    double prev_fp = 0.0;
    double roc_area = 0.0;  // in units of positives * negatives
    for (const auto& [c_tp, c_fp] : curve) {
        roc_area += (c_fp - prev_fp) * (c_tp + prev_tp) / 2.0;
        const double precision = c_tp + c_fp > 0.0 ? c_tp / (c_tp + c_fp) : 1.0;
        out.pr += (c_tp - prev_tp) / positives * precision;
        prev_tp = c_tp;
        prev_fp = c_fp;
    }
    out.roc = roc_area / (positives * negatives);
    out.roc = std::clamp(out.roc, 0.0, 1.0);
    out.pr = std::clamp(out.pr, 0.0, 1.0);
    return out;
}

double auc_roc(std::span<const double> scores, std::span<const double> labels)
{
    return auc(scores, labels).roc;
}

double auc_pr(std::span<const double> scores, std::span<const double> labels)
{
    return auc(scores, labels).pr;
}

std::vector<double> buffered_labels(std::span<const std::uint8_t> labels, std::size_t buffer)
{
    const auto ranges = extract_ranges(labels);
    std::vector<double> out(labels.size(), 0.0);
    const double width = static_cast<double>(buffer + 1);
    for (const auto& r : ranges.ranges()) {
        for (auto t = r.start; t < r.end; ++t) {
            out[t] = 1.0;
        }
        for (std::size_t d = 1; d <= buffer; ++d) {
            const double value = 1.0 - static_cast<double>(d) / width;
            if (r.start >= d) {
                out[r.start - d] = std::max(out[r.start - d], value);
            }
            // The first point after the range is at distance 1.
            const auto after = r.end - 1 + d;
            if (after < out.size()) {
                out[after] = std::max(out[after], value);
            }
        }
    }
    return out;
}

std::size_t default_vus_buffer(std::span<const std::uint8_t> labels)
{
    const auto ranges = extract_ranges(labels);
    if (ranges.empty()) {
        return 0;
    }
    std::vector<double> lengths;
    for (const auto& r : ranges.ranges()) {
        lengths.push_back(static_cast<double>(r.length()));
    }
    const auto half = static_cast<std::size_t>(std::floor(stats::median(lengths) / 2.0));
    return std::min<std::size_t>(half, 250);
}

AucPair vus(std::span<const double> scores, std::span<const std::uint8_t> labels, std::size_t max_buffer, unsigned workers)
{
    if (scores.size() != labels.size()) {
        throw DataError("vus: scores and labels differ in length");
    }
    if (2 * max_buffer >= labels.size()) {
        throw ConfigError("vus: buffer L = " + std::to_string(max_buffer) + " must be below half the series length " +
                          std::to_string(labels.size()));
    }
    std::vector<AucPair> slices(max_buffer + 1);
    parallel_for(slices.size(), workers, [&](std::size_t l) {
        const auto soft = buffered_labels(labels, l);
        slices[l] = auc(scores, soft);
    });
    AucPair out;
    for (const auto& s : slices) {
        out.roc += s.roc;
        out.pr += s.pr;
    }
    out.roc /= static_cast<double>(slices.size());
    out.pr /= static_cast<double>(slices.size());
    return out;
}

// -- correlation --------------------------------------------------------------

double pearson(std::span<const double> x, std::span<const double> y)
{
    if (x.size() != y.size()) {
        throw DataError("pearson: inputs differ in length");
    }
    if (x.size() < 2) {
        throw DataError("pearson: need at least two observations");
    }
    // Welford-style running co-moments.
    double mean_x = 0.0;
    double mean_y = 0.0;
    double m2x = 0.0;
    double m2y = 0.0;
    double cxy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double n = static_cast<double>(i + 1);
        const double dx = x[i] - mean_x;
        const double dy = y[i] - mean_y;
        mean_x += dx / n;
        mean_y += dy / n;
        m2x += dx * (x[i] - mean_x);
        m2y += dy * (y[i] - mean_y);
        cxy += dx * (y[i] - mean_y);
    }
    if (!(m2x > 0.0) || !(m2y > 0.0)) {
        throw DataError("pearson: constant input vector");
    }
    return std::clamp(cxy / std::sqrt(m2x * m2y), -1.0, 1.0);
}

// -- reports ------------------------------------------------------------------

std::array<double, 8> MetricReport::values() const
{
    return {point.precision, point.recall, point.f1, range_precision, range_recall, range_f1, vus_roc, vus_pr};
}

MetricReport evaluate(std::span<const double> scores,
                      std::span<const std::uint8_t> predictions,
                      std::span<const std::uint8_t> labels,
                      const EvaluationOptions& options)
{
    if (scores.size() != labels.size()) {
        throw DataError("evaluate: scores and labels differ in length");
    }
    MetricReport r;
    r.config = options.range;
    r.point = pointwise(predictions, labels);
    const auto real = extract_ranges(labels);
    const auto predicted = extract_ranges(predictions);
    r.range_recall = range_recall(real, predicted, options.range);
    r.range_precision = range_precision(real, predicted, options.range);
    r.range_f1 = harmonic_mean(r.range_precision, r.range_recall);
    r.vus_buffer = options.vus_buffer.value_or(default_vus_buffer(labels));
    const auto v = vus(scores, labels, r.vus_buffer, options.workers);
    r.vus_roc = v.roc;
    r.vus_pr = v.pr;
    return r;
}

nlohmann::json to_json(const RangeMetricConfig& config)
{
    return {{"alpha", config.alpha}, {"bias", to_string(config.bias)}, {"cardinality", to_string(config.cardinality)}};
}

RangeMetricConfig range_config_from_json(const nlohmann::json& j)
{
    constexpr std::string_view ctx = "range_metrics";
    json_util::check_keys(j, {"alpha", "bias", "cardinality"}, ctx);
    RangeMetricConfig c;
    c.alpha = json_util::get_or(j, "alpha", c.alpha, ctx);
    c.bias = position_bias_from_string(json_util::get_or<std::string>(j, "bias", "flat", ctx));
    c.cardinality = cardinality_from_string(json_util::get_or<std::string>(j, "cardinality", "inverse", ctx));
    check_config(c);
    return c;
}

nlohmann::json to_json(const MetricReport& report)
{
    nlohmann::json metrics = nlohmann::json::object();
    const auto values = report.values();
    for (std::size_t c = 0; c < metric_columns.size(); ++c) {
        metrics[std::string(metric_columns[c])] = values[c];
    }
    return {{"metrics", metrics},
            {"counts", {{"TP", report.point.tp}, {"FP", report.point.fp}, {"FN", report.point.fn}, {"TN", report.point.tn}}},
            {"range_config", to_json(report.config)},
            {"vus_buffer", report.vus_buffer}};
}

std::string metric_csv_header()
{
    std::vector<std::string> cells(metric_columns.begin(), metric_columns.end());
    return csv::join(cells);
}

std::string metric_csv_row(const MetricReport& report)
{
    std::vector<std::string> cells;
    for (double v : report.values()) {
        cells.push_back(csv::format_double(v));
    }
    return csv::join(cells);
}

CorrelationMatrix loss_metric_correlation(const std::vector<Trial>& trials)
{
    if (trials.size() < 2) {
        throw DataError("loss_metric_correlation: need at least two trials");
    }
    CorrelationMatrix m;
    m.labels.emplace_back("validation_loss");
    for (auto c : metric_columns) {
        m.labels.emplace_back(c);
    }
    std::vector<std::vector<double>> columns(m.labels.size());
    for (const auto& trial : trials) {
        columns[0].push_back(trial.validation_loss);
        const auto values = trial.report.values();
        for (std::size_t c = 0; c < values.size(); ++c) {
            columns[c + 1].push_back(values[c]);
        }
    }
    const auto constant = [](const std::vector<double>& v) {
        return std::all_of(v.begin(), v.end(), [&](double x) { return x == v.front(); });
    };
    m.values.assign(m.labels.size(), std::vector<std::optional<double>>(m.labels.size()));
    for (std::size_t a = 0; a < columns.size(); ++a) {
        for (std::size_t b = 0; b < columns.size(); ++b) {
            if (!constant(columns[a]) && !constant(columns[b])) {
                m.values[a][b] = a == b ? 1.0 : pearson(columns[a], columns[b]);
            }
        }
    }
    return m;
}

nlohmann::json to_json(const CorrelationMatrix& matrix)
{
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& row : matrix.values) {
        nlohmann::json r = nlohmann::json::array();
        for (const auto& v : row) {
            r.push_back(v ? nlohmann::json(*v) : nlohmann::json(nullptr));
        }
        rows.push_back(std::move(r));
    }
    return {{"labels", matrix.labels}, {"values", rows}};
}

std::string correlation_csv(const CorrelationMatrix& matrix)
{
    std::vector<std::string> header{""};
    header.insert(header.end(), matrix.labels.begin(), matrix.labels.end());
    std::string out = csv::join(header) + "\n";
    for (std::size_t a = 0; a < matrix.labels.size(); ++a) {
        std::vector<std::string> cells{matrix.labels[a]};
        for (const auto& v : matrix.values[a]) {
            cells.push_back(v ? csv::format_double(*v) : "NA");
        }
        out += csv::join(cells) + "\n";
    }
    return out;
}

} // namespace tsad
