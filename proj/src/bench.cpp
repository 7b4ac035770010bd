#include "tsad/bench.hpp"

#include "tsad/csv.hpp"
#include "tsad/error.hpp"
#include "tsad/json_util.hpp"
#include "tsad/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

namespace tsad {

using json_util::get_or;

namespace {

template <class Fn>
auto run_stage(std::string_view name, Fn&& fn) -> decltype(fn())
{
    try {
        return fn();
    } catch (const Error& e) {
        if (!e.stage().empty()) {
            throw;
        }
        throw e.with_stage(std::string(name));
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(e.what()).with_stage(std::string(name));
    } catch (const std::filesystem::filesystem_error& e) {
        throw DataError(e.what()).with_stage(std::string(name));
    }
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint32_t stream)
{
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), stream, 0x5eedu};
    std::uint32_t out[2];
    seq.generate(out, out + 2);
    return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p)
{
    std::filesystem::path path(p);
    return path.is_absolute() || base.empty() ? path : base / path;
}

std::filesystem::path existing_file(const std::filesystem::path& base, const std::string& p, std::string_view what)
{
    auto path = resolve(base, p);
    if (!std::filesystem::is_regular_file(path)) {
        throw ConfigError(std::string(what) + ": file not found: " + path.string());
    }
    return path;
}

std::optional<std::filesystem::path> optional_file(const nlohmann::json& j, const char* key,
                                                   const std::filesystem::path& base, std::string_view ctx)
{
    if (!j.contains(key) || j.at(key).is_null()) {
        return std::nullopt;
    }
    return existing_file(base, json_util::get_required<std::string>(j, key, ctx), std::string(ctx) + "." + key);
}

DatasetSpec dataset_from_json(const nlohmann::json& j, const std::filesystem::path& base)
{
    constexpr std::string_view ctx = "dataset";
    json_util::check_keys(j, {"synthetic", "csv", "seed", "scaling"}, ctx);
    DatasetSpec d;
    const auto scaling = get_or<std::string>(j, "scaling", "minmax", ctx);
    if (scaling != "minmax" && scaling != "none") {
        throw ConfigError("dataset.scaling must be 'minmax' or 'none'");
    }
    d.minmax_scaling = scaling == "minmax";
    if (j.contains("seed")) {
        d.seed = json_util::get_required<std::uint64_t>(j, "seed", ctx);
    }
    const bool has_synthetic = j.contains("synthetic");
    const bool has_csv = j.contains("csv");
    if (has_synthetic == has_csv) {
        throw ConfigError("dataset: specify exactly one of 'synthetic' or 'csv'");
    }
    if (has_synthetic) {
        d.synthetic = synthetic_config_from_json(j.at("synthetic"));
        return d;
    }
    const auto& c = j.at("csv");
    constexpr std::string_view cctx = "dataset.csv";
    json_util::check_keys(c,
                          {"train", "validation", "test", "train_labels", "validation_labels", "test_labels",
                           "ground_truth_graph"},
                          cctx);
    CsvDatasetPaths paths;
    paths.train = existing_file(base, json_util::get_required<std::string>(c, "train", cctx), "dataset.csv.train");
    paths.validation =
        existing_file(base, json_util::get_required<std::string>(c, "validation", cctx), "dataset.csv.validation");
    paths.test = existing_file(base, json_util::get_required<std::string>(c, "test", cctx), "dataset.csv.test");
    paths.train_labels = optional_file(c, "train_labels", base, cctx);
    paths.validation_labels = optional_file(c, "validation_labels", base, cctx);
    paths.test_labels = optional_file(c, "test_labels", base, cctx);
    paths.ground_truth_graph = optional_file(c, "ground_truth_graph", base, cctx);
    d.csv = std::move(paths);
    return d;
}

DetectorSpec detector_from_json(const nlohmann::json& j)
{
    constexpr std::string_view ctx = "detector";
    json_util::check_keys(j, {"kind", "filter_order", "ridge", "components", "gamma", "aggregation"}, ctx);
    DetectorSpec d;
    d.kind = detector_kind_from_string(get_or<std::string>(j, "kind", "graph_filter", ctx));
    d.filter_order = get_or(j, "filter_order", d.filter_order, ctx);
    d.ridge = get_or(j, "ridge", d.ridge, ctx);
    if (j.contains("components") && !j.at("components").is_null()) {
        d.components = json_util::get_required<Eigen::Index>(j, "components", ctx);
    }
    d.gamma = get_or(j, "gamma", d.gamma, ctx);
    d.aggregation = aggregation_from_string(get_or<std::string>(j, "aggregation", "max", ctx));
    if (d.filter_order < 0) {
        throw ConfigError("detector.filter_order must be non-negative");
    }
    if (!(d.ridge >= 0.0) || !std::isfinite(d.ridge)) {
        throw ConfigError("detector.ridge must be a finite non-negative number");
    }
    if (d.components && *d.components < 1) {
        throw ConfigError("detector.components must be positive");
    }
    if (!(d.gamma >= 0.0 && d.gamma <= 1.0)) {
        throw ConfigError("detector.gamma must lie in [0, 1]");
    }
    return d;
}

nlohmann::json to_json(const DetectorSpec& d)
{
    return {{"kind", to_string(d.kind)},
            {"filter_order", d.filter_order},
            {"ridge", d.ridge},
            {"components", d.components ? nlohmann::json(*d.components) : nlohmann::json(nullptr)},
            {"gamma", d.gamma},
            {"aggregation", to_string(d.aggregation)}};
}

GraphSpec graph_from_json(const nlohmann::json& j, const std::filesystem::path& base)
{
    constexpr std::string_view ctx = "graph";
    json_util::check_keys(j, {"kind", "name", "edge_probability", "seed", "path", "lambda", "lambda_ratio", "rule"}, ctx);
    GraphSpec g;
    g.kind = graph_kind_from_string(get_or<std::string>(j, "kind", "fully_connected", ctx));
    g.name = get_or<std::string>(j, "name", "", ctx);
    if (j.contains("edge_probability") && !j.at("edge_probability").is_null()) {
        g.edge_probability = json_util::get_required<double>(j, "edge_probability", ctx);
        if (!(*g.edge_probability >= 0.0 && *g.edge_probability <= 1.0)) {
            throw ConfigError("graph.edge_probability must lie in [0, 1]");
        }
    }
    if (j.contains("seed") && !j.at("seed").is_null()) {
        g.seed = json_util::get_required<std::uint64_t>(j, "seed", ctx);
    }
    if (g.kind == GraphKind::file) {
        g.path = existing_file(base, json_util::get_required<std::string>(j, "path", ctx), "graph.path");
    }
    if (j.contains("lambda") && !j.at("lambda").is_null()) {
        g.mb.lambda = json_util::get_required<double>(j, "lambda", ctx);
        if (!(*g.mb.lambda >= 0.0)) {
            throw ConfigError("graph.lambda must be non-negative");
        }
    }
    g.mb.lambda_ratio = get_or(j, "lambda_ratio", g.mb.lambda_ratio, ctx);
    if (!(g.mb.lambda_ratio >= 0.0)) {
        throw ConfigError("graph.lambda_ratio must be non-negative");
    }
    g.mb.rule = mb_rule_from_string(get_or<std::string>(j, "rule", "or", ctx));
    return g;
}

nlohmann::json to_json(const GraphSpec& g)
{
    nlohmann::json j = {{"kind", to_string(g.kind)}, {"name", g.label()}};
    switch (g.kind) {
    case GraphKind::random:
        j["edge_probability"] = g.edge_probability ? nlohmann::json(*g.edge_probability) : nlohmann::json(nullptr);
        j["seed"] = g.seed ? nlohmann::json(*g.seed) : nlohmann::json(nullptr);
        break;
    case GraphKind::file:
        j["path"] = g.path.string();
        break;
    case GraphKind::mb:
        j["lambda"] = g.mb.lambda ? nlohmann::json(*g.mb.lambda) : nlohmann::json(nullptr);
        j["lambda_ratio"] = g.mb.lambda_ratio;
        j["rule"] = to_string(g.mb.rule);
        break;
    default:
        break;
    }
    return j;
}

ThresholdSpec threshold_spec_from_json(const nlohmann::json& j)
{
    constexpr std::string_view ctx = "threshold";
    json_util::check_keys(j, {"strategy", "bins", "window", "k", "epsilon", "freeze_on_flag"}, ctx);
    ThresholdSpec t;
    t.strategy = threshold_strategy_from_string(get_or<std::string>(j, "strategy", "best_f1", ctx));
    t.bins = get_or(j, "bins", t.bins, ctx);
    t.dynamic.window = get_or(j, "window", t.dynamic.window, ctx);
    t.dynamic.k = get_or(j, "k", t.dynamic.k, ctx);
    t.dynamic.epsilon = get_or(j, "epsilon", t.dynamic.epsilon, ctx);
    t.dynamic.freeze_on_flag = get_or(j, "freeze_on_flag", t.dynamic.freeze_on_flag, ctx);
    if (t.bins < 2) {
        throw ConfigError("threshold.bins must be at least 2");
    }
    if (t.dynamic.window < 2) {
        throw ConfigError("threshold.window must be at least 2");
    }
    if (!(t.dynamic.k >= 0.0) || !(t.dynamic.epsilon > 0.0)) {
        throw ConfigError("threshold: need k >= 0 and epsilon > 0");
    }
    return t;
}

nlohmann::json to_json(const ThresholdSpec& t)
{
    return {{"strategy", to_string(t.strategy)},
            {"bins", t.bins},
            {"window", t.dynamic.window},
            {"k", t.dynamic.k},
            {"epsilon", t.dynamic.epsilon},
            {"freeze_on_flag", t.dynamic.freeze_on_flag}};
}

std::string_view to_string(HistogramScale scale)
{
    return scale == HistogramScale::log ? "log" : "linear";
}

HistogramSpec histogram_spec_from_json(const nlohmann::json& j)
{
    constexpr std::string_view ctx = "histogram";
    json_util::check_keys(j, {"enabled", "bins", "scale", "epsilon"}, ctx);
    HistogramSpec h;
    h.enabled = get_or(j, "enabled", h.enabled, ctx);
    h.bins = get_or(j, "bins", h.bins, ctx);
    const auto scale = get_or<std::string>(j, "scale", "log", ctx);
    if (scale != "log" && scale != "linear") {
        throw ConfigError("histogram.scale must be 'log' or 'linear'");
    }
    h.scale = scale == "log" ? HistogramScale::log : HistogramScale::linear;
    h.epsilon = get_or(j, "epsilon", h.epsilon, ctx);
    if (h.bins < 2) {
        throw ConfigError("histogram.bins must be at least 2");
    }
    if (!(h.epsilon > 0.0)) {
        throw ConfigError("histogram.epsilon must be positive");
    }
    return h;
}

const std::vector<std::string_view> study_keys = {"components", "filter_order", "gamma", "ridge", "window"};

StudySpec study_from_json(const nlohmann::json& j)
{
    constexpr std::string_view ctx = "study";
    json_util::check_keys(j, {"trials", "search_space"}, ctx);
    StudySpec s;
    s.trials = get_or(j, "trials", s.trials, ctx);
    if (j.contains("search_space")) {
        s.search_space = j.at("search_space");
        json_util::check_keys(s.search_space, {"components", "filter_order", "gamma", "ridge", "window"},
                              "study.search_space");
        for (const auto& item : s.search_space.items()) {
            if (!item.value().is_array() || item.value().empty()) {
                throw ConfigError("study.search_space." + item.key() + " must be a non-empty list");
            }
            for (const auto& v : item.value()) {
                if (!v.is_number()) {
                    throw ConfigError("study.search_space." + item.key() + " must contain numbers");
                }
            }
        }
    }
    return s;
}

EvaluationOptions metrics_from_json(const nlohmann::json& j)
{
    constexpr std::string_view ctx = "metrics";
    json_util::check_keys(j, {"range", "vus_buffer"}, ctx);
    EvaluationOptions m;
    if (j.contains("range")) {
        m.range = range_config_from_json(j.at("range"));
    }
    if (j.contains("vus_buffer") && !j.at("vus_buffer").is_null()) {
        m.vus_buffer = json_util::get_required<std::size_t>(j, "vus_buffer", ctx);
    }
    return m;
}

std::string detector_label(const DetectorSpec& d)
{
    return std::string(to_string(d.kind));
}

} // namespace

// -- enums --------------------------------------------------------------------

std::string_view to_string(DetectorKind kind)
{
    switch (kind) {
    case DetectorKind::ar:
        return "ar";
    case DetectorKind::graph_filter:
        return "graph_filter";
    case DetectorKind::reconstruction:
        return "reconstruction";
    case DetectorKind::combined:
        return "combined";
    }
    return "unknown";
}

DetectorKind detector_kind_from_string(std::string_view name)
{
    for (auto k : {DetectorKind::ar, DetectorKind::graph_filter, DetectorKind::reconstruction, DetectorKind::combined}) {
        if (to_string(k) == name) {
            return k;
        }
    }
    throw ConfigError("unknown detector kind '" + std::string(name) + "'");
}

std::string_view to_string(GraphKind kind)
{
    switch (kind) {
    case GraphKind::fully_connected:
        return "fully_connected";
    case GraphKind::random:
        return "random";
    case GraphKind::file:
        return "file";
    case GraphKind::mb:
        return "mb";
    case GraphKind::ground_truth:
        return "ground_truth";
    }
    return "unknown";
}

GraphKind graph_kind_from_string(std::string_view name)
{
    for (auto k : {GraphKind::fully_connected, GraphKind::random, GraphKind::file, GraphKind::mb, GraphKind::ground_truth}) {
        if (to_string(k) == name) {
            return k;
        }
    }
    throw ConfigError("unknown graph kind '" + std::string(name) + "'");
}

// -- configuration ------------------------------------------------------------

ExperimentConfig experiment_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir)
{
    constexpr std::string_view ctx = "config";
    try {
        json_util::check_keys(j,
                              {"dataset", "window", "detector", "graph", "threshold", "metrics", "histogram",
                               "topologies", "study", "output_dir", "seed", "workers", "artifacts"},
                              ctx);
        ExperimentConfig c;
        if (!j.contains("dataset")) {
            throw ConfigError("config: missing required key 'dataset'");
        }
        c.dataset = dataset_from_json(j.at("dataset"), base_dir);
        c.window = get_or(j, "window", c.window, ctx);
        if (c.window < 1) {
            throw ConfigError("config.window must be positive");
        }
        if (j.contains("detector")) {
            c.detector = detector_from_json(j.at("detector"));
        }
        if (j.contains("graph")) {
            c.graph = graph_from_json(j.at("graph"), base_dir);
        }
        if (j.contains("threshold")) {
            c.threshold = threshold_spec_from_json(j.at("threshold"));
        }
        if (j.contains("metrics")) {
            c.metrics = metrics_from_json(j.at("metrics"));
        }
        if (j.contains("histogram")) {
            c.histogram = histogram_spec_from_json(j.at("histogram"));
        }
        if (j.contains("topologies")) {
            if (!j.at("topologies").is_array()) {
                throw ConfigError("config.topologies must be a list of graph specs");
            }
            for (const auto& t : j.at("topologies")) {
                c.topologies.push_back(graph_from_json(t, base_dir));
            }
        }
        if (j.contains("study")) {
            c.study = study_from_json(j.at("study"));
        }
        c.output_dir = resolve(base_dir, get_or<std::string>(j, "output_dir", "results", ctx));
        c.seed = get_or<std::uint64_t>(j, "seed", c.seed, ctx);
        c.workers = get_or<unsigned>(j, "workers", c.workers, ctx);
        if (c.workers < 1) {
            throw ConfigError("config.workers must be at least 1");
        }
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
}

nlohmann::json to_json(const ExperimentConfig& c)
{
    nlohmann::json dataset = {{"scaling", c.dataset.minmax_scaling ? "minmax" : "none"}};
    if (c.dataset.synthetic) {
        dataset["synthetic"] = to_json(*c.dataset.synthetic);
        dataset["seed"] = c.dataset.seed.value_or(c.seed);
    } else if (c.dataset.csv) {
        const auto& p = *c.dataset.csv;
        const auto opt = [](const std::optional<std::filesystem::path>& x) {
            return x ? nlohmann::json(x->string()) : nlohmann::json(nullptr);
        };
        dataset["csv"] = {{"train", p.train.string()},
                          {"validation", p.validation.string()},
                          {"test", p.test.string()},
                          {"train_labels", opt(p.train_labels)},
                          {"validation_labels", opt(p.validation_labels)},
                          {"test_labels", opt(p.test_labels)},
                          {"ground_truth_graph", opt(p.ground_truth_graph)}};
    }
    nlohmann::json topologies = nlohmann::json::array();
    for (const auto& t : c.topologies) {
        topologies.push_back(to_json(t));
    }
    return {{"dataset", dataset},
            {"window", c.window},
            {"detector", to_json(c.detector)},
            {"graph", to_json(c.graph)},
            {"threshold", to_json(c.threshold)},
            {"metrics",
             {{"range", to_json(c.metrics.range)},
              {"vus_buffer", c.metrics.vus_buffer ? nlohmann::json(*c.metrics.vus_buffer) : nlohmann::json(nullptr)}}},
            {"histogram",
             {{"enabled", c.histogram.enabled},
              {"bins", c.histogram.bins},
              {"scale", to_string(c.histogram.scale)},
              {"epsilon", c.histogram.epsilon}}},
            {"topologies", topologies},
            {"study", {{"trials", c.study.trials}, {"search_space", c.study.search_space}}},
            {"seed", c.seed}};
}

std::string config_hash(const ExperimentConfig& config)
{
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char ch : to_json(config).dump()) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

// -- data and graphs ----------------------------------------------------------

PreparedData load_dataset(const DatasetSpec& spec, std::uint64_t experiment_seed)
{
    if (spec.synthetic) {
        auto d = generate_synthetic(*spec.synthetic, spec.seed.value_or(experiment_seed));
        return {std::move(d.train), std::move(d.validation), std::move(d.test), std::move(d.ground_truth)};
    }
    if (!spec.csv) {
        throw ConfigError("dataset: no source configured");
    }
    const auto& p = *spec.csv;
    auto train = load_csv(p.train, p.train_labels, Split::train);
    auto validation = load_csv(p.validation, p.validation_labels, Split::validation);
    auto test = load_csv(p.test, p.test_labels, Split::test);
    if (validation.num_series() != train.num_series() || test.num_series() != train.num_series()) {
        throw DataError("dataset: splits have different numbers of series");
    }
    std::optional<AdjacencyMatrix> truth;
    if (p.ground_truth_graph) {
        truth = load_graph(*p.ground_truth_graph, train.num_series());
    }
    return {std::move(train), std::move(validation), std::move(test), std::move(truth)};
}

PreparedData prepare_data(const ExperimentConfig& config)
{
    auto data = load_dataset(config.dataset, config.seed);
    if (!config.dataset.minmax_scaling) {
        return data;
    }
    const auto scaler = MinMaxScaler::fit(data.train);
    return {scaler.apply(data.train), scaler.apply(data.validation), scaler.apply(data.test), data.ground_truth};
}

void check_window(Eigen::Index window, const PreparedData& data)
{
    for (const auto* split : {&data.train, &data.validation, &data.test}) {
        if (window < 1 || window >= split->length()) {
            throw ConfigError("window size w = " + std::to_string(window) + " must satisfy 1 <= w < T = " +
                              std::to_string(split->length()) + " (" + std::string(to_string(split->split())) +
                              " split)");
        }
    }
}

GraphBuild build_graph(const GraphSpec& spec, const PreparedData& data, std::uint64_t seed, unsigned workers)
{
    const auto n = data.train.num_series();
    nlohmann::json meta = {{"kind", to_string(spec.kind)}};
    auto finish = [&](AdjacencyMatrix g) {
        meta["edges"] = g.edge_count();
        meta["density"] = g.density();
        return GraphBuild{std::move(g), std::move(meta)};
    };
    switch (spec.kind) {
    case GraphKind::fully_connected:
        return finish(fully_connected(n));
    case GraphKind::random: {
        double p = 0.0;
        if (spec.edge_probability) {
            p = *spec.edge_probability;
        } else if (data.ground_truth) {
            p = data.ground_truth->density();
        } else {
            throw ConfigError("random graph: set edge_probability (no ground truth density to match)");
        }
        const auto graph_seed = spec.seed.value_or(derive_seed(seed, 5));
        meta["edge_probability"] = p;
        meta["seed"] = graph_seed;
        return finish(random_graph(n, p, graph_seed));
    }
    case GraphKind::file:
        meta["path"] = spec.path.string();
        return finish(load_graph(spec.path, n));
    case GraphKind::mb: {
        auto options = spec.mb;
        options.workers = workers;
        auto result = infer_mb(data.train, options);
        meta["mb"] = mb_metadata(result);
        return finish(std::move(result.graph));
    }
    case GraphKind::ground_truth:
        if (!data.ground_truth) {
            throw ConfigError("ground_truth topology requested but the dataset has no ground-truth graph");
        }
        return finish(*data.ground_truth);
    }
    throw ConfigError("unknown graph kind");
}

// -- detectors ----------------------------------------------------------------

TrainedDetector train_detector(const ExperimentConfig& config,
                               const TimeSeriesSet& train,
                               const std::optional<AdjacencyMatrix>& graph)
{
    const auto& spec = config.detector;
    TrainedDetector d;
    d.spec = spec;
    d.window = config.window;
    const auto fit_forecast = [&]() -> Model {
        const auto windows = make_windows(train, config.window, WindowMode::forecast);
        if (spec.kind == DetectorKind::ar) {
            return fit_ar(windows, spec.ridge);
        }
        if (!graph) {
            throw ConfigError("graph-filter detector needs a graph");
        }
        const auto propagation = graph->is_normalized() ? *graph : normalize(*graph);
        return fit_graph_filter(windows, propagation, spec.filter_order, spec.ridge);
    };
    const auto fit_recon = [&]() -> Model {
        const auto windows = make_windows(train, config.window, WindowMode::reconstruct);
        const auto limit = train.num_series() * config.window;
        const auto r = spec.components.value_or(train.num_series());
        if (r > limit) {
            throw ConfigError("detector.components = " + std::to_string(r) + " exceeds N*w = " + std::to_string(limit));
        }
        return fit_reconstructor(windows, r);
    };
    switch (spec.kind) {
    case DetectorKind::ar:
    case DetectorKind::graph_filter:
        d.models.push_back(fit_forecast());
        break;
    case DetectorKind::reconstruction:
        d.models.push_back(fit_recon());
        break;
    case DetectorKind::combined:
        d.models.push_back(fit_forecast());
        d.models.push_back(fit_recon());
        break;
    }
    return d;
}

namespace {

WindowMode mode_of(const Model& m)
{
    return std::holds_alternative<ForecastModel>(m) ? WindowMode::forecast : WindowMode::reconstruct;
}

} // namespace

void calibrate(TrainedDetector& detector, const TimeSeriesSet& validation)
{
    detector.stats.clear();
    for (const auto& m : detector.models) {
        const auto windows = make_windows(validation, detector.window, mode_of(m));
        detector.stats.push_back(fit_normalization(residual_errors(m, windows)));
    }
}

ScoreSeries score_detector(const TrainedDetector& detector, const TimeSeriesSet& data)
{
    if (detector.stats.size() != detector.models.size()) {
        throw ConfigError("detector has no normalisation statistics; calibrate on validation data first");
    }
    std::vector<ScoreSeries> parts;
    for (std::size_t k = 0; k < detector.models.size(); ++k) {
        const auto& m = detector.models[k];
        ScoreOptions options;
        options.mode = StatsMode::precomputed;
        options.stats = detector.stats[k];
        options.aggregation = detector.spec.aggregation;
        parts.push_back(score(m, make_windows(data, detector.window, mode_of(m)), options));
    }
    if (parts.size() == 1) {
        return std::move(parts.front());
    }
    return combine_scores(parts[0], parts[1], detector.spec.gamma);
}

double validation_loss(const TrainedDetector& detector, const TimeSeriesSet& data)
{
    double total = 0.0;
    for (const auto& m : detector.models) {
        total += normal_window_mse(m, make_windows(data, detector.window, mode_of(m)), data.global_labels());
    }
    return total / static_cast<double>(detector.models.size());
}

nlohmann::json to_json(const TrainedDetector& detector)
{
    nlohmann::json models = nlohmann::json::array();
    for (const auto& m : detector.models) {
        models.push_back(to_json(m));
    }
    nlohmann::json stats = nlohmann::json::array();
    for (const auto& s : detector.stats) {
        stats.push_back(to_json(s));
    }
    return {{"detector", to_json(detector.spec)}, {"window", detector.window}, {"models", models}, {"stats", stats}};
}

TrainedDetector trained_detector_from_json(const nlohmann::json& j)
{
    try {
        json_util::check_keys(j, {"detector", "window", "models", "stats"}, "trained_detector");
        TrainedDetector d;
        d.spec = detector_from_json(j.at("detector"));
        d.window = json_util::get_required<Eigen::Index>(j, "window", "trained_detector");
        for (const auto& m : j.at("models")) {
            d.models.push_back(model_from_json(m));
        }
        for (const auto& s : j.at("stats")) {
            d.stats.push_back(stats_from_json(s));
        }
        const std::size_t expected = d.spec.kind == DetectorKind::combined ? 2 : 1;
        if (d.models.size() != expected) {
            throw ConfigError("trained detector: expected " + std::to_string(expected) + " model(s)");
        }
        for (const auto& m : d.models) {
            if (std::visit([](const auto& x) { return x.window(); }, m) != d.window) {
                throw ConfigError("trained detector: model window differs from the declared window");
            }
        }
        return d;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("trained detector JSON: ") + e.what());
    }
}

ThresholdDecision fit_threshold(const ThresholdSpec& spec,
                                const ScoreSeries& validation_scores,
                                std::span<const std::uint8_t> validation_labels)
{
    switch (spec.strategy) {
    case ThresholdStrategy::best_f1:
        return best_f1_threshold(validation_scores.global_scores(), labels_at(validation_scores, validation_labels));
    case ThresholdStrategy::otsu:
        return otsu_threshold(validation_scores.global_scores(), spec.bins);
    case ThresholdStrategy::dynamic: {
        ThresholdDecision d;
        d.strategy = ThresholdStrategy::dynamic;
        d.dynamic = spec.dynamic;
        return d;
    }
    }
    throw ConfigError("unknown threshold strategy");
}

// -- histograms ---------------------------------------------------------------

Histogram export_histograms(std::span<const double> scores,
                            std::span<const std::uint8_t> labels,
                            std::size_t bins,
                            HistogramScale scale,
                            double epsilon,
                            std::optional<double> threshold)
{
    if (bins < 2) {
        throw ConfigError("histogram: need at least two bins");
    }
    if (scores.size() != labels.size()) {
        throw DataError("histogram: scores and labels differ in length");
    }
    if (scores.empty()) {
        throw DataError("histogram: empty score series");
    }
    std::vector<double> values(scores.size());
    for (std::size_t t = 0; t < scores.size(); ++t) {
        if (!std::isfinite(scores[t])) {
            throw DataError("histogram: scores must be finite");
        }
        if (scale == HistogramScale::log) {
            if (scores[t] + epsilon <= 0.0) {
                throw DataError("histogram: log scale needs score + epsilon > 0");
            }
            values[t] = std::log10(scores[t] + epsilon);
        } else {
            values[t] = scores[t];
        }
    }
    auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
    double lo = *lo_it;
    double hi = *hi_it;
    if (!(hi > lo)) {
        lo -= 0.5;
        hi += 0.5;
    }
    Histogram h;
    h.scale = scale;
    h.epsilon = epsilon;
    h.threshold = threshold;
    h.normal.assign(bins, 0);
    h.anomalous.assign(bins, 0);
    const double width = (hi - lo) / static_cast<double>(bins);
    for (std::size_t b = 0; b < bins; ++b) {
        h.edges.push_back(lo + static_cast<double>(b) * width);
    }
    h.edges.push_back(hi);
    for (std::size_t t = 0; t < values.size(); ++t) {
        const auto b = std::min(static_cast<std::size_t>((values[t] - lo) / width), bins - 1);
        (labels[t] ? h.anomalous : h.normal)[b] += 1;
    }
    const auto total = [](const std::vector<std::size_t>& c) {
        std::size_t s = 0;
        for (auto x : c) {
            s += x;
        }
        return s;
    };
    if (total(h.normal) == 0) {
        warn("histogram: no normal timestamps; normal counts are all zero");
    }
    if (total(h.anomalous) == 0) {
        warn("histogram: no anomalous timestamps; anomalous counts are all zero");
    }
    return h;
}

void write_histogram(const std::filesystem::path& stem, const Histogram& h)
{
    std::string out = "bin_left,bin_right,count_normal,count_anomalous\n";
    for (std::size_t b = 0; b < h.normal.size(); ++b) {
        out += csv::format_double(h.edges[b]) + "," + csv::format_double(h.edges[b + 1]) + "," +
               std::to_string(h.normal[b]) + "," + std::to_string(h.anomalous[b]) + "\n";
    }
    auto csv_path = stem;
    csv_path += ".csv";
    csv::write_text(csv_path, out);

    nlohmann::json meta = {{"scale", to_string(h.scale)}, {"epsilon", h.epsilon}, {"bins", h.normal.size()}};
    if (h.threshold) {
        meta["threshold"] = *h.threshold;
        meta["threshold_binned"] =
            h.scale == HistogramScale::log ? std::log10(std::max(*h.threshold + h.epsilon, h.epsilon)) : *h.threshold;
    } else {
        meta["threshold"] = nullptr;
    }
    auto json_path = stem;
    json_path += ".json";
    csv::write_text(json_path, meta.dump(2) + "\n");
}

// -- experiments --------------------------------------------------------------

namespace {

struct PipelineOutput {
    ResultRow row;
    TrainedDetector detector;
    ScoreSeries validation_scores;
    ScoreSeries test_scores;
};

PipelineOutput run_pipeline(const ExperimentConfig& config,
                            const PreparedData& data,
                            const std::optional<GraphSpec>& graph_spec,
                            unsigned workers)
{
    run_stage("windowing", [&] { check_window(config.window, data); });
    std::optional<GraphBuild> graph;
    if (config.detector.graph_aware()) {
        if (!graph_spec) {
            throw ConfigError("graph-aware detector without a graph spec").with_stage("graph");
        }
        graph = run_stage("graph", [&] { return build_graph(*graph_spec, data, config.seed, workers); });
    }
    auto detector = run_stage("train", [&] {
        return train_detector(config, data.train, graph ? std::optional(graph->graph) : std::nullopt);
    });
    run_stage("calibrate", [&] { calibrate(detector, data.validation); });
    auto validation_scores = run_stage("score", [&] { return score_detector(detector, data.validation); });
    auto test_scores = run_stage("score", [&] { return score_detector(detector, data.test); });
    auto decision = run_stage("threshold", [&] {
        return fit_threshold(config.threshold, validation_scores, data.validation.global_labels());
    });
    decision = run_stage("predict", [&] { return apply_threshold(decision, test_scores.global_scores()); });
    const auto test_labels = run_stage("evaluate", [&] { return labels_at(test_scores, data.test.global_labels()); });
    auto options = config.metrics;
    options.workers = workers;
    auto report = run_stage("evaluate", [&] {
        return evaluate(test_scores.global_scores(), decision.predictions, test_labels, options);
    });

    ResultRow row;
    row.model = detector_label(config.detector);
    row.topology = graph ? graph_spec->label() : "none";
    row.report = report;
    row.threshold = decision;
    row.graph = graph ? graph->metadata : nlohmann::json(nullptr);
    if (config.histogram.enabled) {
        std::optional<double> overlay;
        if (decision.strategy != ThresholdStrategy::dynamic) {
            overlay = decision.threshold;
        }
        row.histogram = run_stage("histogram", [&] {
            return export_histograms(test_scores.global_scores(), test_labels, config.histogram.bins,
                                     config.histogram.scale, config.histogram.epsilon, overlay);
        });
    }
    return {std::move(row), std::move(detector), std::move(validation_scores), std::move(test_scores)};
}

nlohmann::json provenance(const ExperimentConfig& config, const std::vector<const ScoreSeries*>& tests)
{
    nlohmann::json p = {{"config_hash", config_hash(config)}, {"seed", config.seed}};
    if (!tests.empty() && tests.front()->size() > 0) {
        p["test_range"] = {tests.front()->times().front(), tests.front()->times().back()};
    }
    return p;
}

void assign_ranks(std::vector<ResultRow>& rows)
{
    for (auto& r : rows) {
        r.vus_roc_rank = 1;
        r.vus_pr_rank = 1;
        for (const auto& other : rows) {
            r.vus_roc_rank += other.report.vus_roc > r.report.vus_roc;
            r.vus_pr_rank += other.report.vus_pr > r.report.vus_pr;
        }
    }
}

Labels full_horizon_predictions(const ScoreSeries& scores, const ThresholdDecision& decision, std::size_t horizon)
{
    Labels out(horizon, 0);
    for (std::size_t k = 0; k < scores.size(); ++k) {
        out[scores.times()[k]] = decision.predictions[k];
    }
    return out;
}

} // namespace

BenchmarkResult run_experiment(const ExperimentConfig& config, const std::optional<std::filesystem::path>& artifacts)
{
    const auto data = run_stage("data", [&] { return prepare_data(config); });
    auto out = run_pipeline(config, data, config.graph, config.workers);
    BenchmarkResult result;
    result.provenance = provenance(config, {&out.test_scores});
    if (artifacts) {
        run_stage("write", [&] {
            csv::write_text(*artifacts / "model.json", to_json(out.detector).dump(2) + "\n");
            write_scores_csv(*artifacts / "scores_validation.csv", out.validation_scores, data.validation.names());
            write_scores_csv(*artifacts / "scores_test.csv", out.test_scores, data.test.names());
            csv::write_text(*artifacts / "threshold.json", to_json(out.row.threshold).dump(2) + "\n");
            write_label_vector_csv(*artifacts / "predictions_test.csv",
                                   full_horizon_predictions(out.test_scores, out.row.threshold,
                                                            static_cast<std::size_t>(data.test.length())));
        });
    }
    result.rows.push_back(std::move(out.row));
    return result;
}

BenchmarkResult run_topology_ablation(const ExperimentConfig& config)
{
    if (!config.detector.graph_aware()) {
        throw ConfigError("topology ablation needs a graph-aware detector (graph_filter or combined), got '" +
                          std::string(to_string(config.detector.kind)) + "'")
            .with_stage("ablate");
    }
    if (config.topologies.empty()) {
        throw ConfigError("topology ablation needs at least one entry in 'topologies'").with_stage("ablate");
    }
    const auto data = run_stage("data", [&] { return prepare_data(config); });
    std::vector<std::optional<PipelineOutput>> outputs(config.topologies.size());
    const unsigned inner = config.topologies.size() > 1 ? 1u : config.workers;
    parallel_for(outputs.size(), config.workers,
                 [&](std::size_t k) { outputs[k] = run_pipeline(config, data, config.topologies[k], inner); });
    BenchmarkResult result;
    result.provenance = provenance(config, {&outputs.front()->test_scores});
    for (auto& o : outputs) {
        result.rows.push_back(std::move(o->row));
    }
    assign_ranks(result.rows);
    return result;
}

namespace {

struct GridPoint {
    nlohmann::json parameters = nlohmann::json::object();
};

std::vector<GridPoint> expand_grid(const nlohmann::json& space)
{
    std::vector<GridPoint> grid(1);
    // nlohmann::json objects iterate in sorted key order.
    for (const auto& item : space.items()) {
        std::vector<GridPoint> next;
        for (const auto& g : grid) {
            for (const auto& v : item.value()) {
                auto p = g;
                p.parameters[item.key()] = v;
                next.push_back(std::move(p));
            }
        }
        grid = std::move(next);
    }
    return grid;
}

ExperimentConfig apply_parameters(ExperimentConfig config, const nlohmann::json& params)
{
    for (const auto& item : params.items()) {
        const auto& key = item.key();
        const auto& v = item.value();
        if (key == "window") {
            config.window = v.get<Eigen::Index>();
        } else if (key == "ridge") {
            config.detector.ridge = v.get<double>();
        } else if (key == "filter_order") {
            config.detector.filter_order = v.get<Eigen::Index>();
        } else if (key == "components") {
            config.detector.components = v.get<Eigen::Index>();
        } else if (key == "gamma") {
            config.detector.gamma = v.get<double>();
        }
    }
    if (config.window < 1 || config.detector.ridge < 0.0 || config.detector.filter_order < 0 ||
        (config.detector.components && *config.detector.components < 1) || config.detector.gamma < 0.0 ||
        config.detector.gamma > 1.0) {
        throw ConfigError("study: parameter value out of range in " + params.dump());
    }
    return config;
}

} // namespace

CorrelationStudy correlation_from_trials(std::vector<TrialRecord> trials)
{
    std::vector<Trial> ok;
    for (const auto& t : trials) {
        if (t.trial) {
            ok.push_back(*t.trial);
        }
    }
    if (ok.size() < 2) {
        throw DataError("correlation study: fewer than two successful trials (" + std::to_string(ok.size()) + ")");
    }
    CorrelationStudy study;
    study.correlation = loss_metric_correlation(ok);
    study.trials = std::move(trials);
    return study;
}

CorrelationStudy run_correlation_study(const ExperimentConfig& config)
{
    if (config.study.trials < 2) {
        throw ConfigError("study.trials must be at least 2").with_stage("study");
    }
    const auto data = run_stage("data", [&] { return prepare_data(config); });
    std::optional<GraphBuild> graph;
    if (config.detector.graph_aware()) {
        graph = run_stage("graph", [&] { return build_graph(config.graph, data, config.seed, config.workers); });
    }
    const auto grid = run_stage("study", [&] { return expand_grid(config.study.search_space); });

    std::vector<std::size_t> picks;
    if (grid.size() > config.study.trials) {
        std::vector<std::size_t> order(grid.size());
        for (std::size_t k = 0; k < order.size(); ++k) {
            order[k] = k;
        }
        std::mt19937_64 rng(derive_seed(config.seed, 6));
        std::shuffle(order.begin(), order.end(), rng);
        picks.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(config.study.trials));
    } else {
        for (std::size_t k = 0; k < config.study.trials; ++k) {
            picks.push_back(k % grid.size());
        }
    }

    std::vector<TrialRecord> records(picks.size());
    parallel_for(records.size(), config.workers, [&](std::size_t k) {
        auto& rec = records[k];
        rec.index = k;
        rec.parameters = grid[picks[k]].parameters;
        try {
            const auto trial_config = apply_parameters(config, rec.parameters);
            check_window(trial_config.window, data);
            auto detector = train_detector(trial_config, data.train,
                                           graph ? std::optional(graph->graph) : std::nullopt);
            calibrate(detector, data.validation);
            const auto scores = score_detector(detector, data.validation);
            const auto labels = labels_at(scores, data.validation.global_labels());
            auto decision = fit_threshold(trial_config.threshold, scores, data.validation.global_labels());
            decision = apply_threshold(decision, scores.global_scores());
            Trial t;
            t.validation_loss = validation_loss(detector, data.validation);
            t.report = evaluate(scores.global_scores(), decision.predictions, labels, trial_config.metrics);
            rec.trial = t;
        } catch (const Error& e) {
            rec.error = e.what();
        } catch (const nlohmann::json::exception& e) {
            rec.error = e.what();
        }
    });
    for (const auto& rec : records) {
        if (!rec.error.empty()) {
            warn("study trial " + std::to_string(rec.index) + " failed: " + rec.error);
        }
    }
    auto study = run_stage("correlate", [&] { return correlation_from_trials(std::move(records)); });
    study.provenance = {{"config_hash", config_hash(config)}, {"seed", config.seed}, {"grid_size", grid.size()}};
    return study;
}

// -- reports ------------------------------------------------------------------

nlohmann::json to_json(const BenchmarkResult& result, const ExperimentConfig& config)
{
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t k = 0; k < result.rows.size(); ++k) {
        const auto& r = result.rows[k];
        auto row = to_json(r.report);
        row["model"] = r.model;
        row["topology"] = r.topology;
        row["threshold"] = to_json(r.threshold);
        row["graph"] = r.graph;
        row["rank"] = {{"VUS-ROC", r.vus_roc_rank}, {"VUS-PR", r.vus_pr_rank}};
        row["histogram"] = r.histogram ? nlohmann::json("histogram_" + std::to_string(k)) : nlohmann::json(nullptr);
        rows.push_back(std::move(row));
    }
    return {{"provenance", result.provenance}, {"config", to_json(config)}, {"rows", rows}};
}

std::string report_csv(const BenchmarkResult& result)
{
    std::string out = "model,topology," + metric_csv_header() + ",VUS-ROC_rank,VUS-PR_rank\n";
    for (const auto& r : result.rows) {
        out += csv::join({r.model, r.topology}) + "," + metric_csv_row(r.report) + "," + std::to_string(r.vus_roc_rank) +
               "," + std::to_string(r.vus_pr_rank) + "\n";
    }
    return out;
}

void write_report(const std::filesystem::path& dir, const BenchmarkResult& result, const ExperimentConfig& config)
{
    csv::write_text(dir / "report.json", to_json(result, config).dump(2) + "\n");
    csv::write_text(dir / "report.csv", report_csv(result));
    for (std::size_t k = 0; k < result.rows.size(); ++k) {
        if (result.rows[k].histogram) {
            write_histogram(dir / ("histogram_" + std::to_string(k)), *result.rows[k].histogram);
        }
    }
}

void write_study(const std::filesystem::path& dir, const CorrelationStudy& study)
{
    std::vector<std::string> keys;
    for (const auto& rec : study.trials) {
        for (const auto& item : rec.parameters.items()) {
            if (std::find(keys.begin(), keys.end(), item.key()) == keys.end()) {
                keys.push_back(item.key());
            }
        }
    }
    std::sort(keys.begin(), keys.end());
    std::vector<std::string> header{"trial"};
    header.insert(header.end(), keys.begin(), keys.end());
    header.emplace_back("validation_loss");
    for (auto c : metric_columns) {
        header.emplace_back(c);
    }
    header.emplace_back("error");
    std::string out = csv::join(header) + "\n";
    nlohmann::json trials = nlohmann::json::array();
    for (const auto& rec : study.trials) {
        std::vector<std::string> cells{std::to_string(rec.index)};
        for (const auto& key : keys) {
            cells.push_back(rec.parameters.contains(key) ? rec.parameters.at(key).dump() : "");
        }
        nlohmann::json jt = {{"trial", rec.index}, {"parameters", rec.parameters}};
        if (rec.trial) {
            cells.push_back(csv::format_double(rec.trial->validation_loss));
            for (double v : rec.trial->report.values()) {
                cells.push_back(csv::format_double(v));
            }
            cells.emplace_back("");
            jt["validation_loss"] = rec.trial->validation_loss;
            jt["report"] = to_json(rec.trial->report);
        } else {
            cells.insert(cells.end(), metric_columns.size() + 1, "NA");
            auto message = rec.error;
            std::replace(message.begin(), message.end(), ',', ';');
            cells.push_back(message);
            jt["error"] = rec.error;
        }
        out += csv::join(cells) + "\n";
        trials.push_back(std::move(jt));
    }
    csv::write_text(dir / "trials.csv", out);
    csv::write_text(dir / "correlation.csv", correlation_csv(study.correlation));
    nlohmann::json doc = {{"provenance", study.provenance}, {"correlation", to_json(study.correlation)}, {"trials", trials}};
    csv::write_text(dir / "study.json", doc.dump(2) + "\n");
}

void write_dataset(const std::filesystem::path& dir, const PreparedData& data)
{
    write_csv(dir / "train.csv", data.train);
    write_labels_csv(dir / "train_labels.csv", data.train);
    write_csv(dir / "validation.csv", data.validation);
    write_labels_csv(dir / "validation_labels.csv", data.validation);
    write_csv(dir / "test.csv", data.test);
    write_labels_csv(dir / "test_labels.csv", data.test);
    if (data.ground_truth) {
        save_graph(dir / "ground_truth_graph.txt", *data.ground_truth);
    }
}

} // namespace tsad
