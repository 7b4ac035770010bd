#include "tsad/bench.hpp"
#include "tsad/csv.hpp"
#include "tsad/error.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

using namespace tsad;
using nlohmann::json;

namespace {

json small_config()
{
    return json::parse(R"({
        "dataset": {"synthetic": {"num_nodes": 5, "train_length": 400, "validation_length": 300,
                                  "test_length": 300, "edge_probability": 0.4,
                                  "validation_plan": {"count": 3, "min_length": 3, "max_length": 8, "magnitude": 1.0},
                                  "test_plan": {"count": 3, "min_length": 3, "max_length": 8, "magnitude": 1.0}}},
        "window": 4,
        "detector": {"kind": "graph_filter", "filter_order": 2},
        "graph": {"kind": "ground_truth"},
        "metrics": {"vus_buffer": 3},
        "seed": 7
    })");
}

ExperimentConfig parse(const json& j)
{
    return experiment_config_from_json(j);
}

std::string slurp(const std::filesystem::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::filesystem::path scratch(const std::string& name)
{
    const auto dir = std::filesystem::temp_directory_path() / "tsad_bench_test" / name;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

struct CollectWarnings {
    std::vector<std::string> seen;
    WarningHandler previous;
    CollectWarnings() : previous(set_warning_handler([this](std::string_view m) { seen.emplace_back(m); })) {}
    ~CollectWarnings() { set_warning_handler(previous); }
};

} // namespace

TEST_CASE("config parsing defaults and canonical form")
{
    const auto c = parse(small_config());
    CHECK(c.window == 4);
    CHECK(c.detector.kind == DetectorKind::graph_filter);
    CHECK(c.detector.ridge == default_ridge);
    CHECK(c.graph.kind == GraphKind::ground_truth);
    CHECK(c.threshold.strategy == ThresholdStrategy::best_f1);
    CHECK(c.metrics.vus_buffer == std::optional<std::size_t>(3));
    CHECK(c.metrics.range.alpha == 0.0);
    CHECK(c.seed == 7);

    const auto again = parse(to_json(c));
    CHECK(to_json(again) == to_json(c));
    CHECK(config_hash(again) == config_hash(c));
    CHECK(config_hash(c).size() == 16);

    auto other = small_config();
    other["output_dir"] = "somewhere/else";
    other["workers"] = 3;
    CHECK(config_hash(parse(other)) == config_hash(c));
    other["seed"] = 8;
    CHECK(config_hash(parse(other)) != config_hash(c));
}

TEST_CASE("config errors")
{
    const auto bad = [](auto mutate) {
        auto j = small_config();
        mutate(j);
        CHECK_THROWS_AS(parse(j), ConfigError);
    };
    bad([](json& j) { j["unknown_key"] = 1; });
    bad([](json& j) { j.erase("dataset"); });
    bad([](json& j) { j["window"] = 0; });
    bad([](json& j) { j["detector"]["kind"] = "lstm"; });
    bad([](json& j) { j["detector"]["gamma"] = 2.0; });
    bad([](json& j) { j["detector"]["ridge"] = -1.0; });
    bad([](json& j) { j["graph"]["kind"] = "magic"; });
    bad([](json& j) { j["graph"]["edge_probability"] = 1.5; });
    bad([](json& j) { j["threshold"] = {{"strategy", "otsu"}, {"bins", 1}}; });
    bad([](json& j) { j["threshold"] = {{"strategy", "dynamic"}, {"window", 1}}; });
    bad([](json& j) { j["metrics"]["range"] = {{"alpha", -0.1}}; });
    bad([](json& j) { j["histogram"] = {{"scale", "cubic"}}; });
    bad([](json& j) { j["study"] = {{"search_space", {{"window", json::array()}}}}; });
    bad([](json& j) { j["study"] = {{"search_space", {{"depth", {1, 2}}}}}; });
    bad([](json& j) { j["study"] = {{"search_space", {{"window", {"a"}}}}}; });
    bad([](json& j) { j["workers"] = 0; });
    bad([](json& j) { j["dataset"]["csv"] = {{"train", "nope.csv"}, {"validation", "nope.csv"}, {"test", "nope.csv"}}; });
    bad([](json& j) { j["window"] = "ten"; });
}

TEST_CASE("experiments are deterministic and worker-independent")
{
    auto j = small_config();
    const auto a = run_experiment(parse(j));
    j["workers"] = 4;
    const auto b = run_experiment(parse(j));
    CHECK(to_json(a, parse(small_config())).dump() == to_json(b, parse(small_config())).dump());
    CHECK(report_csv(a) == report_csv(b));
    REQUIRE(a.rows.size() == 1);
    CHECK(a.rows[0].model == "graph_filter");
    CHECK(a.rows[0].topology == "ground_truth");
    CHECK(a.provenance["config_hash"] == config_hash(parse(j)));
}

TEST_CASE("stage isolation: persisted artifacts reproduce the in-memory pipeline")
{
    const auto config = parse(small_config());
    const auto dir = scratch("stages");
    const auto result = run_experiment(config, dir);

    const auto data = prepare_data(config);
    const auto detector = trained_detector_from_json(json::parse(slurp(dir / "model.json")));
    const auto test_scores = score_detector(detector, data.test);
    const auto stored = read_scores_csv(dir / "scores_test.csv");
    CHECK(stored.times() == test_scores.times());
    CHECK((stored.node_scores() - test_scores.node_scores()).cwiseAbs().maxCoeff() < 1e-12);

    const auto decision = threshold_from_json(json::parse(slurp(dir / "threshold.json")));
    CHECK(decision.threshold == result.rows[0].threshold.threshold);
    const auto applied = apply_threshold(decision, stored.global_scores());
    const auto predictions = load_label_vector_csv(dir / "predictions_test.csv");
    REQUIRE(predictions.size() == static_cast<std::size_t>(data.test.length()));
    for (std::size_t k = 0; k < stored.size(); ++k) {
        CHECK(predictions[stored.times()[k]] == applied.predictions[k]);
    }
    const auto labels = labels_at(stored, data.test.global_labels());
    EvaluationOptions o = config.metrics;
    const auto report = evaluate(stored.global_scores(), applied.predictions, labels, o);
    const auto expected = result.rows[0].report.values();
    const auto got = report.values();
    for (std::size_t c = 0; c < got.size(); ++c) {
        CHECK(std::abs(got[c] - expected[c]) < 1e-12);
    }
}

TEST_CASE("stage errors carry the stage name")
{
    auto j = small_config();
    j["window"] = 300;
    try {
        run_experiment(parse(j));
        FAIL("expected a config error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::config);
        CHECK(e.stage() == "windowing");
        CHECK(std::string(e.what()).find("[windowing]") != std::string::npos);
    }

    auto k = small_config();
    k["detector"]["components"] = 1000;
    k["detector"]["kind"] = "reconstruction";
    try {
        run_experiment(parse(k));
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.stage() == "train");
    }
}

TEST_CASE("every detector kind runs end to end")
{
    for (const char* kind : {"ar", "graph_filter", "reconstruction", "combined"}) {
        auto j = small_config();
        j["detector"]["kind"] = kind;
        const auto r = run_experiment(parse(j));
        REQUIRE(r.rows.size() == 1);
        CHECK(r.rows[0].model == kind);
        CHECK(r.rows[0].report.vus_roc >= 0.0);
        CHECK(r.rows[0].report.vus_roc <= 1.0);
        if (std::string(kind) == "ar" || std::string(kind) == "reconstruction") {
            CHECK(r.rows[0].topology == "none");
        }
    }
}

TEST_CASE("trained detector JSON round trip")
{
    auto j = small_config();
    j["detector"]["kind"] = "combined";
    const auto config = parse(j);
    const auto data = prepare_data(config);
    const auto graph = build_graph(config.graph, data, config.seed, 1);
    auto det = train_detector(config, data.train, graph.graph);
    calibrate(det, data.validation);
    const auto back = trained_detector_from_json(json::parse(to_json(det).dump()));
    const auto a = score_detector(det, data.test);
    const auto b = score_detector(back, data.test);
    CHECK(a.node_scores() == b.node_scores());
    CHECK(validation_loss(det, data.validation) == validation_loss(back, data.validation));

    auto uncalibrated = train_detector(config, data.train, graph.graph);
    CHECK_THROWS_AS(score_detector(uncalibrated, data.test), ConfigError);
}

TEST_CASE("graph builders")
{
    auto j = small_config();
    const auto config = parse(j);
    const auto data = prepare_data(config);
    REQUIRE(data.ground_truth);

    GraphSpec full;
    CHECK(build_graph(full, data, 1, 1).graph.edge_count() == 10);

    GraphSpec rnd;
    rnd.kind = GraphKind::random;
    const auto r1 = build_graph(rnd, data, 1, 1);
    const auto r2 = build_graph(rnd, data, 1, 1);
    CHECK(r1.graph.weights() == r2.graph.weights());
    CHECK(r1.metadata.contains("edge_probability"));
    CHECK(r1.metadata["edge_probability"].get<double>() == doctest::Approx(data.ground_truth->density()));

    GraphSpec mb;
    mb.kind = GraphKind::mb;
    const auto m = build_graph(mb, data, 1, 1);
    CHECK(m.graph.size() == 5);

    const auto dir = scratch("graphs");
    save_graph(dir / "g.txt", *data.ground_truth);
    GraphSpec file;
    file.kind = GraphKind::file;
    file.path = dir / "g.txt";
    CHECK(build_graph(file, data, 1, 1).graph.weights() == data.ground_truth->weights());
}

TEST_CASE("topology ablation")
{
    auto j = small_config();
    j["topologies"] = json::parse(R"([{"kind": "ground_truth"}, {"kind": "fully_connected"},
                                      {"kind": "random", "name": "sparse", "edge_probability": 0.1}])");
    const auto config = parse(j);
    const auto result = run_topology_ablation(config);
    REQUIRE(result.rows.size() == 3);
    CHECK(result.rows[0].topology == "ground_truth");
    CHECK(result.rows[1].topology == "fully_connected");
    CHECK(result.rows[2].topology == "sparse");
    for (const auto& r : result.rows) {
        int better = 0;
        for (const auto& o : result.rows) {
            better += o.report.vus_roc > r.report.vus_roc;
        }
        CHECK(r.vus_roc_rank == better + 1);
        CHECK(r.graph.contains("edges"));
    }

    auto par = j;
    par["workers"] = 3;
    CHECK(report_csv(run_topology_ablation(parse(par))) == report_csv(result));

    auto ar = j;
    ar["detector"]["kind"] = "ar";
    try {
        run_topology_ablation(parse(ar));
        FAIL("expected a ConfigError");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::config);
        CHECK(e.stage() == "ablate");
    }
    auto none = small_config();
    CHECK_THROWS_AS(run_topology_ablation(parse(none)), Error);
}

TEST_CASE("report CSV column order")
{
    const auto result = run_experiment(parse(small_config()));
    const auto csv_text = report_csv(result);
    const auto header = csv_text.substr(0, csv_text.find('\n'));
    CHECK(header == "model,topology,P,R,F1,P_T,R_T,F1_T,VUS-ROC,VUS-PR,VUS-ROC_rank,VUS-PR_rank");
    const auto dir = scratch("report");
    write_report(dir, result, parse(small_config()));
    CHECK(std::filesystem::exists(dir / "report.json"));
    CHECK(slurp(dir / "report.csv") == csv_text);
    CHECK(std::filesystem::exists(dir / "histogram_0.csv"));
    CHECK(std::filesystem::exists(dir / "histogram_0.json"));
}

TEST_CASE("correlation study")
{
    auto j = small_config();
    j["study"] = json::parse(R"({"trials": 6, "search_space": {"window": [2, 4, 6], "ridge": [0.001, 1.0]}})");
    const auto study = run_correlation_study(parse(j));
    CHECK(study.trials.size() == 6);
    CHECK(study.correlation.labels.size() == 9);
    for (const auto& v : study.correlation.loss_row()) {
        if (v) {
            CHECK(*v >= -1.0 - 1e-12);
            CHECK(*v <= 1.0 + 1e-12);
        }
    }
    const auto again = run_correlation_study(parse(j));
    CHECK(correlation_csv(again.correlation) == correlation_csv(study.correlation));

    const auto dir = scratch("study");
    write_study(dir, study);
    CHECK(std::filesystem::exists(dir / "trials.csv"));
    CHECK(std::filesystem::exists(dir / "correlation.csv"));
    CHECK(std::filesystem::exists(dir / "study.json"));
}

TEST_CASE("a single grid point yields undefined correlations")
{
    auto j = small_config();
    j["study"] = json::parse(R"({"trials": 5, "search_space": {"window": [4]}})");
    const auto study = run_correlation_study(parse(j));
    REQUIRE(study.trials.size() == 5);
    for (const auto& t : study.trials) {
        REQUIRE(t.trial);
        CHECK(t.trial->validation_loss == study.trials[0].trial->validation_loss);
        CHECK(t.trial->report.values() == study.trials[0].trial->report.values());
    }
    for (const auto& v : study.correlation.loss_row()) {
        CHECK_FALSE(v.has_value());
    }
    CHECK(correlation_csv(study.correlation).find("NA") != std::string::npos);
}

TEST_CASE("failed trials are recorded and skipped")
{
    CollectWarnings w;
    auto j = small_config();
    j["study"] = json::parse(R"({"trials": 3, "search_space": {"window": [2, 4, 1000]}})");
    const auto study = run_correlation_study(parse(j));
    std::size_t failed = 0;
    for (const auto& t : study.trials) {
        failed += !t.trial.has_value();
    }
    CHECK(failed == 1);
    CHECK_FALSE(w.seen.empty());

    auto k = small_config();
    k["study"] = json::parse(R"({"trials": 2, "search_space": {"window": [1000]}})");
    CHECK_THROWS_AS(run_correlation_study(parse(k)), Error);
}

TEST_CASE("correlation passthrough over precomputed trials")
{
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<TrialRecord> recs;
    for (std::size_t i = 0; i < 50; ++i) {
        TrialRecord r;
        r.index = i;
        Trial t;
        t.validation_loss = u(rng);
        t.report.point.f1 = 1.0 - t.validation_loss + 0.01 * u(rng);
        t.report.vus_roc = u(rng);
        r.trial = t;
        recs.push_back(r);
    }
    recs.push_back(TrialRecord{50, json::object(), std::nullopt, "boom"});
    const auto study = correlation_from_trials(recs);
    CHECK(study.trials.size() == 51);
    const auto row = study.correlation.loss_row();
    CHECK(*row[3] < -0.99);
    CHECK(std::abs(*row[7]) < 0.5);
    CHECK_FALSE(row[1].has_value());
    CHECK_THROWS_AS(correlation_from_trials({recs[0], recs[50]}), DataError);
}

TEST_CASE("histograms separate well-separated classes")
{
    std::mt19937_64 rng(4);
    std::normal_distribution<double> lo(1.0, 0.1);
    std::normal_distribution<double> hi(100.0, 5.0);
    std::vector<double> s;
    Labels l;
    for (int i = 0; i < 900; ++i) {
        s.push_back(std::abs(lo(rng)));
        l.push_back(0);
    }
    for (int i = 0; i < 100; ++i) {
        s.push_back(hi(rng));
        l.push_back(1);
    }
    const auto h = export_histograms(s, l, 20, HistogramScale::log, 1e-9, 10.0);
    CHECK(h.edges.size() == 21);
    std::size_t last_normal = 0;
    std::size_t first_anomalous = h.anomalous.size();
    for (std::size_t b = 0; b < h.normal.size(); ++b) {
        if (h.normal[b]) {
            last_normal = b;
        }
        if (h.anomalous[b] && first_anomalous == h.anomalous.size()) {
            first_anomalous = b;
        }
    }
    CHECK(last_normal < first_anomalous);
    std::size_t total = 0;
    for (std::size_t b = 0; b < h.normal.size(); ++b) {
        total += h.normal[b] + h.anomalous[b];
    }
    CHECK(total == s.size());

    const auto dir = scratch("hist");
    write_histogram(dir / "h", h);
    const auto meta = json::parse(slurp(dir / "h.json"));
    CHECK(meta["threshold"].get<double>() == 10.0);
    CHECK(meta["threshold_binned"].get<double>() == doctest::Approx(1.0));
    CHECK(slurp(dir / "h.csv").rfind("bin_left,bin_right,count_normal,count_anomalous\n", 0) == 0);
}

TEST_CASE("histograms of identical distributions nearly coincide")
{
    std::mt19937_64 rng(5);
    std::exponential_distribution<double> e(1.0);
    std::vector<double> s;
    Labels l;
    for (int i = 0; i < 20000; ++i) {
        s.push_back(e(rng));
        l.push_back(i % 2);
    }
    const auto h = export_histograms(s, l, 30, HistogramScale::linear);
    double tv = 0.0;
    for (std::size_t b = 0; b < h.normal.size(); ++b) {
        tv += std::abs(static_cast<double>(h.normal[b]) / 10000.0 - static_cast<double>(h.anomalous[b]) / 10000.0);
    }
    CHECK(tv / 2.0 < 0.05);
}

TEST_CASE("histogram warnings and errors")
{
    CollectWarnings w;
    const std::vector<double> s = {1, 2, 3};
    const auto h = export_histograms(s, Labels{0, 0, 0}, 4, HistogramScale::linear);
    CHECK(w.seen.size() == 1);
    CHECK(h.anomalous == std::vector<std::size_t>(4, 0));
    const auto c = export_histograms(std::vector<double>{2, 2}, Labels{0, 1}, 2, HistogramScale::linear);
    CHECK(c.edges.front() == 1.5);
    CHECK(c.edges.back() == 2.5);
    CHECK_THROWS_AS(export_histograms(s, Labels{0, 0, 1}, 1, HistogramScale::linear), ConfigError);
    CHECK_THROWS_AS(export_histograms(std::vector<double>{-1.0}, Labels{0}, 2, HistogramScale::log), DataError);
}

TEST_CASE("dataset round trip through CSV")
{
    const auto config = parse(small_config());
    const auto data = load_dataset(config.dataset, config.seed);
    const auto dir = scratch("dataset");
    write_dataset(dir, data);
    json j = {{"dataset",
               {{"csv",
                 {{"train", "train.csv"},
                  {"validation", "validation.csv"},
                  {"test", "test.csv"},
                  {"train_labels", "train_labels.csv"},
                  {"validation_labels", "validation_labels.csv"},
                  {"test_labels", "test_labels.csv"},
                  {"ground_truth_graph", "ground_truth_graph.txt"}}}}}};
    const auto csv_config = experiment_config_from_json(j, dir);
    const auto back = load_dataset(csv_config.dataset, 0);
    CHECK((back.test.values() - data.test.values()).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(back.test.global_labels() == data.test.global_labels());
    REQUIRE(back.ground_truth);
    CHECK(back.ground_truth->weights() == data.ground_truth->weights());
}

TEST_CASE("fifty-trial study stays within correlation bounds")
{
    CollectWarnings w;
    auto j = small_config();
    j["study"] = json::parse(R"({"trials": 50, "search_space": {"window": [2, 3, 4, 5, 6], "ridge": [0.0001, 0.001, 0.01, 0.1, 1.0],
                                                               "filter_order": [0, 1, 2]}})");
    j["workers"] = 2;
    const auto study = run_correlation_study(parse(j));
    CHECK(study.trials.size() == 50);
    CHECK(study.provenance["grid_size"] == 75);
    for (const auto& row : study.correlation.values) {
        for (const auto& v : row) {
            if (v) {
                CHECK(*v >= -1.0 - 1e-12);
                CHECK(*v <= 1.0 + 1e-12);
            }
        }
    }
}

TEST_CASE("two pinned trials pass straight through to Pearson")
{
    std::vector<TrialRecord> recs(2);
    for (std::size_t i = 0; i < 2; ++i) {
        Trial t;
        t.validation_loss = 0.5 + static_cast<double>(i);
        t.report.vus_roc = 0.9 - 0.2 * static_cast<double>(i);
        t.report.point.f1 = 0.3 + 0.1 * static_cast<double>(i);
        recs[i].index = i;
        recs[i].trial = t;
    }
    const auto study = correlation_from_trials(recs);
    const std::vector<double> loss = {0.5, 1.5};
    const std::vector<double> roc = {0.9, 0.7};
    const std::vector<double> f1 = {0.3, 0.4};
    CHECK(*study.correlation.loss_row()[7] == pearson(loss, roc));
    CHECK(*study.correlation.loss_row()[3] == pearson(loss, f1));
}

TEST_CASE("single-topology ablation ranks itself first")
{
    auto j = small_config();
    j["topologies"] = json::parse(R"([{"kind": "fully_connected"}])");
    const auto r = run_topology_ablation(parse(j));
    REQUIRE(r.rows.size() == 1);
    CHECK(r.rows[0].vus_roc_rank == 1);
    CHECK(r.rows[0].vus_pr_rank == 1);
}

TEST_CASE("single-run rows assemble into the ablation table")
{
    auto j = small_config();
    j["topologies"] = json::parse(R"([{"kind": "ground_truth"}, {"kind": "fully_connected"}, {"kind": "mb"}])");
    const auto table = run_topology_ablation(parse(j));
    std::string assembled;
    for (std::size_t k = 0; k < table.rows.size(); ++k) {
        auto single = small_config();
        single["graph"] = j["topologies"][k];
        const auto row = run_experiment(parse(single)).rows.front();
        CHECK(row.report.values() == table.rows[k].report.values());
        assembled += row.model + "," + row.topology + "," + metric_csv_row(row.report) + "\n";
    }
    std::string from_table;
    std::istringstream lines(report_csv(table));
    std::string line;
    std::getline(lines, line);
    while (std::getline(lines, line)) {
        // Drop the two rank columns.
        for (int c = 0; c < 2; ++c) {
            line.erase(line.rfind(','));
        }
        from_table += line + "\n";
    }
    CHECK(assembled == from_table);
}
