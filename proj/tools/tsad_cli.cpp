// Command-line front end: one subcommand per pipeline stage plus the
// benchmark drivers. Every subcommand reads a JSON experiment config.

#include "tsad/bench.hpp"
#include "tsad/csv.hpp"
#include "tsad/error.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <functional>
#include <iostream>
#include <map>

namespace {

struct CommonOptions {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::optional<unsigned> workers;
};

struct Invocation {
    tsad::ExperimentConfig config;
    nlohmann::json artifacts = nlohmann::json::object();
    std::filesystem::path base_dir;
};

Invocation load(const CommonOptions& opts)
{
    const std::filesystem::path path(opts.config);
    if (!std::filesystem::is_regular_file(path)) {
        throw tsad::ConfigError("config file not found: " + path.string());
    }
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(tsad::csv::read_text(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw tsad::ConfigError(path.string() + ": " + e.what());
    }
    Invocation inv;
    inv.base_dir = path.parent_path();
    inv.config = tsad::experiment_config_from_json(j, inv.base_dir);
    if (j.contains("artifacts")) {
        inv.artifacts = j.at("artifacts");
        if (!inv.artifacts.is_object()) {
            throw tsad::ConfigError("config.artifacts must be an object of file paths");
        }
    }
    if (opts.seed) {
        inv.config.seed = *opts.seed;
    }
    if (opts.out) {
        inv.config.output_dir = *opts.out;
    }
    if (opts.workers) {
        if (*opts.workers < 1) {
            throw tsad::ConfigError("--workers must be at least 1");
        }
        inv.config.workers = *opts.workers;
    }
    return inv;
}

/// Path of an intermediate: config.artifacts[key] if given, else <output_dir>/<fallback>.
std::filesystem::path artifact(const Invocation& inv, const std::string& key, const std::string& fallback)
{
    if (inv.artifacts.contains(key)) {
        std::filesystem::path p(inv.artifacts.at(key).get<std::string>());
        return p.is_absolute() ? p : inv.base_dir / p;
    }
    return inv.config.output_dir / fallback;
}

std::filesystem::path existing(const std::filesystem::path& p)
{
    if (!std::filesystem::is_regular_file(p)) {
        throw tsad::DataError("input file not found: " + p.string() + " (run the previous stage or set config.artifacts)");
    }
    return p;
}

void write_json(const std::filesystem::path& p, const nlohmann::json& j)
{
    tsad::csv::write_text(p, j.dump(2) + "\n");
}

nlohmann::json read_json(const std::filesystem::path& p)
{
    try {
        return nlohmann::json::parse(tsad::csv::read_text(existing(p)));
    } catch (const nlohmann::json::parse_error& e) {
        throw tsad::DataError(p.string() + ": " + e.what());
    }
}

tsad::Labels at_times(const tsad::ScoreSeries& scores, const tsad::Labels& full)
{
    return tsad::labels_at(scores, full);
}

int cmd_generate(const Invocation& inv)
{
    if (!inv.config.dataset.synthetic) {
        throw tsad::ConfigError("generate needs dataset.synthetic");
    }
    const auto data = tsad::load_dataset(inv.config.dataset, inv.config.seed);
    tsad::write_dataset(inv.config.output_dir, data);
    write_json(inv.config.output_dir / "dataset.json",
               {{"synthetic", tsad::to_json(*inv.config.dataset.synthetic)},
                {"seed", inv.config.dataset.seed.value_or(inv.config.seed)},
                {"config_hash", tsad::config_hash(inv.config)}});
    return 0;
}

int cmd_infer_graph(const Invocation& inv)
{
    const auto data = tsad::prepare_data(inv.config);
    const auto built = tsad::build_graph(inv.config.graph, data, inv.config.seed, inv.config.workers);
    tsad::save_graph(inv.config.output_dir / "graph.txt", built.graph);
    auto meta = built.metadata;
    if (data.ground_truth) {
        meta["ground_truth_edge_f1"] = tsad::edge_f1(built.graph, *data.ground_truth);
    }
    write_json(inv.config.output_dir / "graph.json", meta);
    return 0;
}

int cmd_train(const Invocation& inv)
{
    const auto data = tsad::prepare_data(inv.config);
    tsad::check_window(inv.config.window, data);
    std::optional<tsad::AdjacencyMatrix> graph;
    if (inv.config.detector.graph_aware()) {
        graph = tsad::build_graph(inv.config.graph, data, inv.config.seed, inv.config.workers).graph;
    }
    auto detector = tsad::train_detector(inv.config, data.train, graph);
    tsad::calibrate(detector, data.validation);
    write_json(inv.config.output_dir / "model.json", tsad::to_json(detector));
    return 0;
}

int cmd_score(const Invocation& inv)
{
    const auto detector = tsad::trained_detector_from_json(read_json(artifact(inv, "model", "model.json")));
    const auto data = tsad::prepare_data(inv.config);
    tsad::write_scores_csv(inv.config.output_dir / "scores_validation.csv",
                           tsad::score_detector(detector, data.validation), data.validation.names());
    tsad::write_scores_csv(inv.config.output_dir / "scores_test.csv", tsad::score_detector(detector, data.test),
                           data.test.names());
    return 0;
}

int cmd_threshold(const Invocation& inv)
{
    const auto aggregation = inv.config.detector.aggregation;
    const auto validation =
        tsad::read_scores_csv(existing(artifact(inv, "validation_scores", "scores_validation.csv")), aggregation);
    const auto test = tsad::read_scores_csv(existing(artifact(inv, "test_scores", "scores_test.csv")), aggregation);
    const auto data = tsad::prepare_data(inv.config);
    auto decision = tsad::fit_threshold(inv.config.threshold, validation, data.validation.global_labels());
    decision = tsad::apply_threshold(decision, test.global_scores());
    write_json(inv.config.output_dir / "threshold.json", tsad::to_json(decision, true));
    tsad::Labels full(static_cast<std::size_t>(data.test.length()), 0);
    for (std::size_t k = 0; k < test.size(); ++k) {
        full.at(test.times()[k]) = decision.predictions[k];
    }
    tsad::write_label_vector_csv(inv.config.output_dir / "predictions_test.csv", full);
    return 0;
}

int cmd_evaluate(const Invocation& inv)
{
    const auto scores = tsad::read_scores_csv(existing(artifact(inv, "test_scores", "scores_test.csv")),
                                              inv.config.detector.aggregation);
    const auto predictions = tsad::load_label_vector_csv(existing(artifact(inv, "predictions", "predictions_test.csv")));
    const auto data = tsad::prepare_data(inv.config);
    if (predictions.size() != static_cast<std::size_t>(data.test.length())) {
        throw tsad::DataError("predictions cover " + std::to_string(predictions.size()) +
                              " timestamps but the test split has " + std::to_string(data.test.length()));
    }
    const auto labels = at_times(scores, data.test.global_labels());
    const auto predicted = at_times(scores, predictions);
    auto options = inv.config.metrics;
    options.workers = inv.config.workers;
    const auto report = tsad::evaluate(scores.global_scores(), predicted, labels, options);
    write_json(inv.config.output_dir / "metrics.json", tsad::to_json(report));
    tsad::csv::write_text(inv.config.output_dir / "metrics.csv",
                          tsad::metric_csv_header() + "\n" + tsad::metric_csv_row(report) + "\n");
    return 0;
}

int cmd_benchmark(const Invocation& inv)
{
    const auto result = tsad::run_experiment(inv.config, inv.config.output_dir);
    tsad::write_report(inv.config.output_dir, result, inv.config);
    return 0;
}

int cmd_ablate(const Invocation& inv)
{
    const auto result = tsad::run_topology_ablation(inv.config);
    tsad::write_report(inv.config.output_dir, result, inv.config);
    return 0;
}

int cmd_correlate(const Invocation& inv)
{
    const auto study = tsad::run_correlation_study(inv.config);
    tsad::write_study(inv.config.output_dir, study);
    return 0;
}

int cmd_histogram(const Invocation& inv)
{
    const auto scores = tsad::read_scores_csv(existing(artifact(inv, "test_scores", "scores_test.csv")),
                                              inv.config.detector.aggregation);
    const auto data = tsad::prepare_data(inv.config);
    std::optional<double> threshold;
    const auto threshold_path = artifact(inv, "threshold", "threshold.json");
    if (std::filesystem::is_regular_file(threshold_path)) {
        const auto j = read_json(threshold_path);
        if (j.contains("threshold") && j.at("threshold").is_number()) {
            threshold = j.at("threshold").get<double>();
        }
    }
    const auto& h = inv.config.histogram;
    const auto hist = tsad::export_histograms(scores.global_scores(), at_times(scores, data.test.global_labels()),
                                              h.bins, h.scale, h.epsilon, threshold);
    tsad::write_histogram(inv.config.output_dir / "histogram", hist);
    return 0;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Benchmark engine for score-based multivariate time-series anomaly detection over graphs"};
    app.require_subcommand(1);

    const std::vector<std::pair<std::string, std::string>> commands = {
        {"generate", "Generate a synthetic graph-diffusion dataset"},
        {"infer-graph", "Build the configured graph (e.g. Meinshausen-Buhlmann) from the training split"},
        {"train", "Fit the detector and its normalisation statistics"},
        {"score", "Score the validation and test splits with a trained model"},
        {"threshold", "Choose a threshold and write test predictions"},
        {"evaluate", "Compute point-wise, range-based and VUS metrics"},
        {"benchmark", "Run the full pipeline and write a report"},
        {"ablate", "Compare graph topologies with a graph-aware detector"},
        {"correlate", "Correlate validation loss with test metrics over a hyperparameter grid"},
        {"histogram", "Export normal/anomalous score histograms"},
    };
    const std::map<std::string, std::function<int(const Invocation&)>> handlers = {
        {"generate", cmd_generate},   {"infer-graph", cmd_infer_graph}, {"train", cmd_train},
        {"score", cmd_score},         {"threshold", cmd_threshold},     {"evaluate", cmd_evaluate},
        {"benchmark", cmd_benchmark}, {"ablate", cmd_ablate},           {"correlate", cmd_correlate},
        {"histogram", cmd_histogram},
    };

    CommonOptions opts;
    std::string chosen;
    for (const auto& [name, help] : commands) {
        auto* sub = app.add_subcommand(name, help);
        sub->add_option("config", opts.config, "JSON experiment config")->required();
        sub->add_option("--seed", opts.seed, "Override the experiment seed");
        sub->add_option("--out", opts.out, "Override the output directory");
        sub->add_option("--workers", opts.workers, "Worker threads");
        sub->callback([&chosen, name = name] { chosen = name; });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return static_cast<int>(tsad::ErrorKind::config);
    }

    try {
        return handlers.at(chosen)(load(opts));
    } catch (const tsad::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return static_cast<int>(e.kind());
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return static_cast<int>(tsad::ErrorKind::config);
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return static_cast<int>(tsad::ErrorKind::data);
    }
}
