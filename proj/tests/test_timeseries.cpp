#include "tsad/csv.hpp"
#include "tsad/error.hpp"
#include "tsad/synthetic.hpp"
#include "tsad/timeseries.hpp"

#include <doctest.h>

#include <filesystem>
#include <random>

using namespace tsad;

namespace {

std::filesystem::path temp_dir(const std::string& name)
{
    auto dir = std::filesystem::temp_directory_path() / ("tsad_ts_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

TimeSeriesSet ramp(Eigen::Index n, Eigen::Index t)
{
    Eigen::MatrixXd v(n, t);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < t; ++j) {
            v(i, j) = static_cast<double>(10 * i + j);
        }
    }
    return TimeSeriesSet(v, {}, Split::train);
}

} // namespace

TEST_CASE("csv cells are parsed strictly")
{
    CHECK(csv::parse_double("1.5", "x") == 1.5);
    CHECK(csv::parse_double(" -2e3 ", "x") == -2000.0);
    CHECK_THROWS_AS(csv::parse_double("", "x"), DataError);
    CHECK_THROWS_AS(csv::parse_double("1.5abc", "x"), DataError);
    CHECK_THROWS_AS(csv::parse_double("nan", "x"), DataError);
    CHECK_THROWS_AS(csv::parse_double("inf", "x"), DataError);
    for (double v : {0.1, 1.0 / 3.0, 1e-300, -123456.789}) {
        CHECK(csv::parse_double(csv::format_double(v), "x") == v);
    }
}

TEST_CASE("errors carry their exit code and stage")
{
    const DataError e("bad");
    CHECK(static_cast<int>(e.kind()) == 2);
    const auto tagged = e.with_stage("windowing");
    CHECK(tagged.stage() == "windowing");
    CHECK(std::string(tagged.what()) == "[windowing] bad");
    CHECK(static_cast<int>(ConfigError("x").kind()) == 1);
    CHECK(static_cast<int>(NumericalError("x").kind()) == 3);
}

TEST_CASE("time series set validation")
{
    CHECK_THROWS_AS(TimeSeriesSet(Eigen::MatrixXd(0, 5), {}, Split::train), DataError);
    CHECK_THROWS_AS(TimeSeriesSet(Eigen::MatrixXd::Zero(2, 1), {}, Split::train), DataError);
    Eigen::MatrixXd bad = Eigen::MatrixXd::Zero(2, 3);
    bad(1, 1) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(TimeSeriesSet(bad, {}, Split::train), DataError);

    LabelMatrix node = LabelMatrix::Zero(2, 4);
    node(1, 2) = 1;
    TimeSeriesSet s(Eigen::MatrixXd::Zero(2, 4), {"a", "b"}, Split::test, node);
    CHECK(s.global_labels() == Labels{0, 0, 1, 0});
    CHECK(s.has_node_labels());

    // A global label must cover every anomalous node label.
    CHECK_THROWS_AS(TimeSeriesSet(Eigen::MatrixXd::Zero(2, 4), {}, Split::test, node, Labels{0, 0, 0, 0}), DataError);

    TimeSeriesSet g(Eigen::MatrixXd::Zero(2, 4), {}, Split::test, std::nullopt, Labels{1, 0, 0, 1});
    CHECK_FALSE(g.has_node_labels());
    CHECK(g.names() == std::vector<std::string>{"s0", "s1"});
}

TEST_CASE("load_csv shapes and errors")
{
    const auto dir = temp_dir("load");
    std::string data = "a,b,c\n";
    std::string labels = "a,b,c\n";
    for (int t = 0; t < 100; ++t) {
        data += std::to_string(t) + "," + std::to_string(2 * t) + ",0.5\n";
        labels += t == 40 ? "0,1,0\n" : "0,0,0\n";
    }
    csv::write_text(dir / "d.csv", data);
    csv::write_text(dir / "l.csv", labels);
    const auto s = load_csv(dir / "d.csv", dir / "l.csv", Split::test);
    CHECK(s.num_series() == 3);
    CHECK(s.length() == 100);
    CHECK(s.global_labels()[40] == 1);
    CHECK(s.node_labels()(1, 40) == 1);
    CHECK(s.values()(1, 7) == 14.0);

    const auto unlabeled = load_csv(dir / "d.csv");
    CHECK(std::count(unlabeled.global_labels().begin(), unlabeled.global_labels().end(), 1) == 0);

    // 99 label rows against 100 data rows.
    csv::write_text(dir / "short.csv", labels.substr(0, labels.rfind("0,0,0\n")));
    CHECK_THROWS_WITH_AS(load_csv(dir / "d.csv", dir / "short.csv"), doctest::Contains("dimension mismatch"), DataError);

    auto two = labels;
    two.replace(two.find("0,1,0"), 5, "0,2,0");
    csv::write_text(dir / "two.csv", two);
    CHECK_THROWS_AS(load_csv(dir / "d.csv", dir / "two.csv"), DataError);

    csv::write_text(dir / "nonnum.csv", "a,b\n1,x\n2,3\n");
    CHECK_THROWS_AS(load_csv(dir / "nonnum.csv"), DataError);
    csv::write_text(dir / "nan.csv", "a,b\n1,nan\n2,3\n");
    CHECK_THROWS_AS(load_csv(dir / "nan.csv"), DataError);
    csv::write_text(dir / "one.csv", "a,b\n1,2\n");
    CHECK_THROWS_AS(load_csv(dir / "one.csv"), DataError);

    // A single label column is taken as global labels.
    std::string global = "global\n";
    for (int t = 0; t < 100; ++t) {
        global += t >= 10 && t < 15 ? "1\n" : "0\n";
    }
    csv::write_text(dir / "g.csv", global);
    const auto gs = load_csv(dir / "d.csv", dir / "g.csv");
    CHECK_FALSE(gs.has_node_labels());
    CHECK(std::count(gs.global_labels().begin(), gs.global_labels().end(), 1) == 5);
}

TEST_CASE("csv round trip preserves values exactly")
{
    const auto dir = temp_dir("roundtrip");
    std::mt19937_64 rng(3);
    std::normal_distribution<double> nd;
    Eigen::MatrixXd v(3, 50);
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        v.data()[i] = nd(rng);
    }
    LabelMatrix node = LabelMatrix::Zero(3, 50);
    node(2, 10) = 1;
    TimeSeriesSet s(v, {"x", "y", "z"}, Split::validation, node);
    write_csv(dir / "v.csv", s);
    write_labels_csv(dir / "l.csv", s);
    const auto back = load_csv(dir / "v.csv", dir / "l.csv", Split::validation);
    CHECK(back.values() == s.values());
    CHECK(back.node_labels() == s.node_labels());
    CHECK(back.names() == s.names());
}

TEST_CASE("make_windows counts, anchors and alignment")
{
    const auto s = ramp(2, 5);
    const auto f = make_windows(s, 2, WindowMode::forecast);
    REQUIRE(f.size() == 3);
    CHECK(f.anchor_times() == std::vector<std::size_t>{1, 2, 3});
    for (std::size_t i = 0; i < f.size(); ++i) {
        const auto a = static_cast<Eigen::Index>(f.anchor_times()[i]);
        CHECK(f.target(i) == s.values().col(a + 1));
        CHECK(f.input(i) == s.values().middleCols(a - 1, 2));
        CHECK(f.scored_time(i) == f.anchor_times()[i] + 1);
    }
    CHECK_THROWS_AS(make_windows(s, 5, WindowMode::forecast), ConfigError);
    CHECK_THROWS_AS(make_windows(s, 0, WindowMode::forecast), ConfigError);

    const auto r = make_windows(ramp(2, 4), 2, WindowMode::reconstruct);
    REQUIRE(r.size() == 3);
    CHECK(r.scored_time(2) == 3);
    CHECK_THROWS_AS(r.target(0), ConfigError);
}

TEST_CASE("extract_ranges examples")
{
    const Labels l{0, 1, 1, 0, 1};
    const auto r = extract_ranges(l);
    REQUIRE(r.size() == 2);
    CHECK(r.ranges()[0] == Range{1, 3});
    CHECK(r.ranges()[1] == Range{4, 5});
    CHECK(r.horizon() == 5);
    CHECK(extract_ranges(Labels{0, 0, 0}).empty());
    const auto all = extract_ranges(Labels{1, 1, 1, 1});
    REQUIRE(all.size() == 1);
    CHECK(all.ranges()[0] == Range{0, 4});
    CHECK(extract_ranges(Labels{}).horizon() == 0);
}

TEST_CASE("label ranges validation")
{
    CHECK_THROWS_AS(LabelRanges::from_intervals({{2, 2}}, 5), DataError);
    CHECK_THROWS_AS(LabelRanges::from_intervals({{2, 6}}, 5), DataError);
    CHECK_THROWS_AS(LabelRanges::from_intervals({{0, 3}, {2, 4}}, 5), DataError);
    CHECK_THROWS_AS(LabelRanges::from_intervals({{0, 2}, {2, 4}}, 5), DataError);
    CHECK_NOTHROW(LabelRanges::from_intervals({{0, 2}, {3, 4}}, 5));
}

TEST_CASE("property: expand and extract are inverse")
{
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 300; ++trial) {
        std::uniform_int_distribution<std::size_t> len(1, 80);
        const auto t = len(rng);
        std::vector<Range> ranges;
        std::size_t pos = std::uniform_int_distribution<std::size_t>(0, 3)(rng);
        while (pos < t) {
            const auto end = std::min(t, pos + std::uniform_int_distribution<std::size_t>(1, 6)(rng));
            ranges.push_back({pos, end});
            pos = end + 1 + std::uniform_int_distribution<std::size_t>(0, 5)(rng);
        }
        const auto lr = LabelRanges::from_intervals(ranges, t);
        const auto points = expand_to_points(lr);
        CHECK(points.size() == t);
        CHECK(extract_ranges(points) == lr);
    }
}

TEST_CASE("min-max scaler")
{
    Eigen::MatrixXd v(2, 3);
    v << 1, 3, 5, 7, 7, 7;
    TimeSeriesSet train(v, {}, Split::train);
    const auto scaler = MinMaxScaler::fit(train);
    const auto out = scaler.apply(train);
    CHECK(out.values()(0, 0) == 0.0);
    CHECK(out.values()(0, 2) == 1.0);
    CHECK(out.values()(0, 1) == 0.5);
    CHECK(out.values().row(1).isZero());
    Eigen::MatrixXd w(3, 3);
    w.setZero();
    CHECK_THROWS_AS(scaler.apply(TimeSeriesSet(w, {}, Split::test)), DataError);
}

TEST_CASE("synthetic generator is deterministic and labels the injected intervals")
{
    SyntheticConfig c;
    c.num_nodes = 5;
    c.train_length = 300;
    c.validation_length = 200;
    c.test_length = 400;
    c.anomalies = {{Split::test, 10, 80, 1.0, {0}},
                   {Split::test, 120, 5, 1.0, {1}},
                   {Split::test, 150, 5, 1.0, {2}},
                   {Split::test, 200, 5, 1.0, {3}},
                   {Split::test, 250, 5, 1.0, {4, 0}}};
    const auto a = generate_synthetic(c, 42);
    const auto b = generate_synthetic(c, 42);
    CHECK(a.train.values() == b.train.values());
    CHECK(a.test.values() == b.test.values());
    CHECK(a.ground_truth.weights() == b.ground_truth.weights());
    CHECK(std::count(a.test.global_labels().begin(), a.test.global_labels().end(), 1) == 100);
    CHECK(a.test.node_labels()(0, 252) == 1);
    CHECK(a.test.node_labels()(4, 252) == 1);
    CHECK(a.train.length() == 300);
    CHECK(a.validation.length() == 200);

    const auto other = generate_synthetic(c, 43);
    CHECK(other.test.values() != a.test.values());
}

TEST_CASE("zero-magnitude anomalies keep labels and leave values untouched")
{
    SyntheticConfig c;
    c.num_nodes = 4;
    c.train_length = 100;
    c.validation_length = 100;
    c.test_length = 100;
    const auto clean = generate_synthetic(c, 5);
    c.anomalies = {{Split::test, 20, 10, 0.0, {1, 2}}};
    const auto zero = generate_synthetic(c, 5);
    CHECK(zero.test.values() == clean.test.values());
    CHECK(std::count(zero.test.global_labels().begin(), zero.test.global_labels().end(), 1) == 10);
}

TEST_CASE("synthetic config errors")
{
    SyntheticConfig c;
    c.diffusion = 0.9;
    c.persistence = 0.5;
    CHECK_THROWS_AS(generate_synthetic(c, 1), ConfigError);

    SyntheticConfig d;
    d.test_length = 50;
    d.anomalies = {{Split::test, 45, 10, 1.0, {0}}};
    CHECK_THROWS_AS(generate_synthetic(d, 1), ConfigError);

    CHECK_THROWS_AS(synthetic_config_from_json(nlohmann::json{{"num_nodse", 3}}), ConfigError);
    const auto round = synthetic_config_from_json(to_json(d));
    CHECK(round.test_length == 50);
    CHECK(round.anomalies.size() == 1);
}

TEST_CASE("random anomaly plans place non-overlapping ranges")
{
    SyntheticConfig c;
    c.num_nodes = 6;
    c.train_length = 200;
    c.validation_length = 500;
    c.test_length = 500;
    c.test_plan.count = 6;
    c.test_plan.min_length = 5;
    c.test_plan.max_length = 15;
    c.validation_plan.count = 3;
    const auto d = generate_synthetic(c, 9);
    CHECK(extract_ranges(d.test.global_labels()).size() == 6);
    CHECK(extract_ranges(d.validation.global_labels()).size() == 3);
    CHECK(std::count(d.train.global_labels().begin(), d.train.global_labels().end(), 1) == 0);
}

TEST_CASE("property: stable synthetic process stays bounded over a long horizon")
{
    SyntheticConfig c;
    c.num_nodes = 8;
    c.train_length = 100000;
    c.validation_length = 10;
    c.test_length = 10;
    c.diffusion = 0.6;
    c.persistence = 0.35;
    const auto d = generate_synthetic(c, 17);
    CHECK(d.train.values().allFinite());
    CHECK(d.train.values().cwiseAbs().maxCoeff() < 10.0);
}
