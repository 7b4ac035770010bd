#include "tsad/thresholding.hpp"

#include "tsad/error.hpp"
#include "tsad/json_util.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <numeric>

namespace tsad {

std::string_view to_string(ThresholdStrategy strategy)
{
    switch (strategy) {
    case ThresholdStrategy::best_f1:
        return "best_f1";
    case ThresholdStrategy::otsu:
        return "otsu";
    case ThresholdStrategy::dynamic:
        return "dynamic";
    }
    return "unknown";
}

ThresholdStrategy threshold_strategy_from_string(std::string_view name)
{
    if (name == "best_f1") {
        return ThresholdStrategy::best_f1;
    }
    if (name == "otsu") {
        return ThresholdStrategy::otsu;
    }
    if (name == "dynamic") {
        return ThresholdStrategy::dynamic;
    }
    throw ConfigError("unknown threshold strategy '" + std::string(name) + "'");
}

namespace {

void require_finite(std::span<const double> scores, std::string_view who)
{
    if (scores.empty()) {
        throw DataError(std::string(who) + ": empty score series");
    }
    for (double s : scores) {
        if (!std::isfinite(s)) {
            throw DataError(std::string(who) + ": scores must be finite");
        }
    }
}

double f1_from_counts(double tp, double fp, double fn)
{
    const double denom = 2.0 * tp + fp + fn;
    return denom > 0.0 ? 2.0 * tp / denom : 0.0;
}

} // namespace

Labels predict_above(std::span<const double> scores, double threshold)
{
    Labels out(scores.size());
    for (std::size_t t = 0; t < scores.size(); ++t) {
        out[t] = scores[t] > threshold ? 1 : 0;
    }
    return out;
}

double f1_score(std::span<const std::uint8_t> predictions, std::span<const std::uint8_t> labels)
{
    if (predictions.size() != labels.size()) {
        throw DataError("f1: predictions and labels differ in length");
    }
    double tp = 0;
    double fp = 0;
    double fn = 0;
    for (std::size_t t = 0; t < labels.size(); ++t) {
        tp += predictions[t] && labels[t];
        fp += predictions[t] && !labels[t];
        fn += !predictions[t] && labels[t];
    }
    return f1_from_counts(tp, fp, fn);
}

ThresholdDecision best_f1_threshold(std::span<const double> scores, std::span<const std::uint8_t> labels)
{
    require_finite(scores, "best_f1_threshold");
    if (scores.size() != labels.size()) {
        throw DataError("best_f1_threshold: scores and labels differ in length");
    }
    const auto positives = static_cast<double>(std::count_if(labels.begin(), labels.end(), [](auto l) { return l != 0; }));
    if (positives == 0) {
        throw DataError("best_f1_threshold: validation labels contain no anomalies");
    }

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] > scores[b]; });

    // Sweep thresholds from high to low. A candidate between two distinct values flags every point above it.
    const double top = scores[order.front()];
    const double bottom = scores[order.back()];
    double best_threshold = top + 1.0;
    double best_f1 = 0.0;
    double tp = 0;
    double fp = 0;
    std::size_t k = 0;
    while (k < order.size()) {
        const double value = scores[order[k]];
        while (k < order.size() && scores[order[k]] == value) {
            (labels[order[k]] ? tp : fp) += 1;
            ++k;
        }
        const double candidate = k < order.size() ? value + (scores[order[k]] - value) / 2.0 : bottom - 1.0;
        const double f1 = f1_from_counts(tp, fp, positives - tp);
        if (f1 > best_f1) {
            best_f1 = f1;
            best_threshold = candidate;
        }
    }
    ThresholdDecision d;
    d.strategy = ThresholdStrategy::best_f1;
    d.threshold = best_threshold;
    d.predictions = predict_above(scores, best_threshold);
    d.objective = best_f1;
    return d;
}

ThresholdDecision otsu_threshold(std::span<const double> scores, std::size_t bins)
{
    require_finite(scores, "otsu_threshold");
    if (bins < 2) {
        throw ConfigError("otsu_threshold: need at least two bins");
    }
    const auto [lo_it, hi_it] = std::minmax_element(scores.begin(), scores.end());
    const double lo = *lo_it;
    const double hi = *hi_it;
    if (!(hi > lo)) {
        throw DataError("otsu_threshold: constant scores admit no class separation");
    }
    const double width = (hi - lo) / static_cast<double>(bins);
    std::vector<double> counts(bins, 0.0);
    for (double s : scores) {
        auto b = static_cast<std::size_t>((s - lo) / width);
        counts[std::min(b, bins - 1)] += 1.0;
    }
    std::vector<double> centers(bins);
    for (std::size_t b = 0; b < bins; ++b) {
        centers[b] = lo + (static_cast<double>(b) + 0.5) * width;
    }
    const double total = static_cast<double>(scores.size());
    double total_sum = 0.0;
    for (std::size_t b = 0; b < bins; ++b) {
        total_sum += counts[b] * centers[b];
    }

    double best_var = -1.0;
    std::size_t best_boundary = 1;
    double w0 = 0.0;
    double sum0 = 0.0;
    for (std::size_t boundary = 1; boundary < bins; ++boundary) {
        w0 += counts[boundary - 1];
        sum0 += counts[boundary - 1] * centers[boundary - 1];
        const double w1 = total - w0;
        if (w0 == 0.0 || w1 == 0.0) {
            continue;
        }
        const double mu0 = sum0 / w0;
        const double mu1 = (total_sum - sum0) / w1;
        const double var = (w0 / total) * (w1 / total) * (mu0 - mu1) * (mu0 - mu1);
        if (var > best_var) {
            best_var = var;
            best_boundary = boundary;
        }
    }
    ThresholdDecision d;
    d.strategy = ThresholdStrategy::otsu;
    d.bins = bins;
    // The top boundary is hi itself; use lo + b * width for interior ones.
    d.threshold = lo + static_cast<double>(best_boundary) * width;
    d.predictions = predict_above(scores, d.threshold);
    d.objective = std::max(best_var, 0.0);
    return d;
}

ThresholdDecision dynamic_threshold(std::span<const double> scores, const DynamicThresholdOptions& options)
{
    require_finite(scores, "dynamic_threshold");
    if (options.window < 2) {
        throw ConfigError("dynamic_threshold: window must be at least 2");
    }
    if (options.window > scores.size()) {
        throw DataError("dynamic_threshold: window " + std::to_string(options.window) + " exceeds series length " +
                        std::to_string(scores.size()));
    }
    if (!(options.k >= 0.0) || !(options.epsilon > 0.0)) {
        throw ConfigError("dynamic_threshold: need k >= 0 and epsilon > 0");
    }
    ThresholdDecision d;
    d.strategy = ThresholdStrategy::dynamic;
    d.dynamic = options;
    d.predictions.assign(scores.size(), 0);
    d.threshold_series.assign(scores.size(), std::numeric_limits<double>::infinity());

    // Rolling buffer of the last `window` admitted scores. The sums are recomputed
    // from the buffer at each step so that results do not drift with series length.
    std::deque<double> recent;
    for (std::size_t t = 0; t < scores.size(); ++t) {
        bool flagged = false;
        if (t >= options.window) {
            const double n = static_cast<double>(recent.size());
            double mean = 0.0;
            for (double v : recent) {
                mean += v;
            }
            mean /= n;
            double var = 0.0;
            for (double v : recent) {
                var += (v - mean) * (v - mean);
            }
            const double sd = std::sqrt(var / n);
            const double tau = mean + options.k * std::max(sd, options.epsilon);
            d.threshold_series[t] = tau;
            flagged = scores[t] > tau;
            d.predictions[t] = flagged ? 1 : 0;
        }
        if (!(flagged && options.freeze_on_flag)) {
            recent.push_back(scores[t]);
            if (recent.size() > options.window) {
                recent.pop_front();
            }
        }
    }
    return d;
}

ThresholdDecision apply_threshold(const ThresholdDecision& decision, std::span<const double> scores)
{
    if (decision.strategy == ThresholdStrategy::dynamic) {
        return dynamic_threshold(scores, decision.dynamic);
    }
    ThresholdDecision out = decision;
    out.predictions = predict_above(scores, decision.threshold);
    return out;
}

nlohmann::json to_json(const ThresholdDecision& decision, bool include_series)
{
    nlohmann::json j = {{"strategy", to_string(decision.strategy)}};
    switch (decision.strategy) {
    case ThresholdStrategy::best_f1:
        j["threshold"] = decision.threshold;
        j["validation_f1"] = decision.objective;
        break;
    case ThresholdStrategy::otsu:
        j["threshold"] = decision.threshold;
        j["bins"] = decision.bins;
        j["between_class_variance"] = decision.objective;
        break;
    case ThresholdStrategy::dynamic:
        j["window"] = decision.dynamic.window;
        j["k"] = decision.dynamic.k;
        j["epsilon"] = decision.dynamic.epsilon;
        j["freeze_on_flag"] = decision.dynamic.freeze_on_flag;
        if (include_series) {
            nlohmann::json series = nlohmann::json::array();
            for (double v : decision.threshold_series) {
                series.push_back(std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr));
            }
            j["threshold_series"] = std::move(series);
        }
        break;
    }
    std::size_t flagged = 0;
    for (auto p : decision.predictions) {
        flagged += p;
    }
    j["flagged"] = flagged;
    return j;
}

ThresholdDecision threshold_from_json(const nlohmann::json& j)
{
    constexpr std::string_view ctx = "threshold";
    ThresholdDecision d;
    d.strategy = threshold_strategy_from_string(json_util::get_required<std::string>(j, "strategy", ctx));
    if (d.strategy == ThresholdStrategy::dynamic) {
        d.dynamic.window = json_util::get_or<std::size_t>(j, "window", d.dynamic.window, ctx);
        d.dynamic.k = json_util::get_or(j, "k", d.dynamic.k, ctx);
        d.dynamic.epsilon = json_util::get_or(j, "epsilon", d.dynamic.epsilon, ctx);
        d.dynamic.freeze_on_flag = json_util::get_or(j, "freeze_on_flag", d.dynamic.freeze_on_flag, ctx);
    } else {
        d.threshold = json_util::get_required<double>(j, "threshold", ctx);
        d.bins = json_util::get_or<std::size_t>(j, "bins", 0, ctx);
    }
    return d;
}

void write_predictions_csv(const std::filesystem::path& path, const ThresholdDecision& decision)
{
    write_label_vector_csv(path, decision.predictions);
}

} // namespace tsad
