#include "tsad/error.hpp"
#include "tsad/thresholding.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <filesystem>
#include <random>

using namespace tsad;

TEST_CASE("best-F1 examples")
{
    const std::vector<double> s = {1, 2, 3, 4};
    const Labels l = {0, 0, 1, 1};
    const auto d = best_f1_threshold(s, l);
    CHECK(d.threshold == 2.5);
    CHECK(d.objective == 1.0);
    CHECK(d.predictions == l);

    const auto all = best_f1_threshold(s, Labels{1, 1, 1, 1});
    CHECK(all.threshold < 1.0);
    CHECK(all.objective == 1.0);

    CHECK_THROWS_AS(best_f1_threshold(s, Labels{0, 0, 0, 0}), DataError);
    CHECK_THROWS_AS(best_f1_threshold(std::vector<double>{}, Labels{}), DataError);
    CHECK_THROWS_AS(best_f1_threshold(s, Labels{0, 1}), DataError);
}

TEST_CASE("best-F1 tie keeps the largest threshold")
{
    // Flagging {4} or everything both give F1 = 2/3.
    const std::vector<double> s = {1, 2, 3, 4};
    const auto d = best_f1_threshold(s, Labels{1, 0, 0, 1});
    CHECK(d.objective == doctest::Approx(2.0 / 3.0));
    CHECK(d.threshold == 3.5);

    CHECK(best_f1_threshold(s, Labels{0, 1, 0, 1}).threshold == 1.5);
    CHECK(best_f1_threshold(std::vector<double>{1, 4}, Labels{1, 1}).threshold == 0.0);
}

TEST_CASE("best-F1 is optimal over a dense threshold grid")
{
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int rep = 0; rep < 50; ++rep) {
        std::vector<double> s(60);
        for (auto& v : s) {
            v = std::round(u(rng) * 20.0) / 10.0;  // plenty of ties
        }
        auto l = oracle::random_labels(rng, s.size(), 0.1, 5);
        l[0] = 1;
        const auto d = best_f1_threshold(s, l);
        CHECK(d.objective == doctest::Approx(oracle::pointwise_f1(s, l, d.threshold)).epsilon(1e-15));
        for (int g = 0; g <= 2000; ++g) {
            const double tau = -0.5 + 3.0 * g / 2000.0;
            CHECK(oracle::pointwise_f1(s, l, tau) <= d.objective + 1e-12);
        }
    }
}

TEST_CASE("Otsu examples")
{
    const std::vector<double> s = {0, 0, 1, 1};
    const auto d = otsu_threshold(s, 2);
    CHECK(d.threshold == 0.5);
    CHECK(d.predictions == Labels{0, 0, 1, 1});

    std::mt19937_64 rng(2);
    std::normal_distribution<double> a(0.0, 0.1);
    std::normal_distribution<double> b(5.0, 0.1);
    std::vector<double> clusters;
    for (int i = 0; i < 500; ++i) {
        clusters.push_back(a(rng));
        clusters.push_back(b(rng));
    }
    const auto c = otsu_threshold(clusters);
    for (std::size_t i = 0; i < clusters.size(); ++i) {
        CHECK(c.predictions[i] == (i % 2 == 1 ? 1 : 0));
    }

    CHECK_THROWS_AS(otsu_threshold(std::vector<double>{2, 2, 2}), DataError);
    CHECK_THROWS_AS(otsu_threshold(s, 1), ConfigError);
}

TEST_CASE("Otsu predictions are invariant to positive affine maps")
{
    std::mt19937_64 rng(3);
    std::exponential_distribution<double> e(1.0);
    for (int rep = 0; rep < 20; ++rep) {
        std::vector<double> s(300);
        for (auto& v : s) {
            v = e(rng);
        }
        std::vector<double> t(s.size());
        for (std::size_t i = 0; i < s.size(); ++i) {
            t[i] = 3.0 * s[i] + 7.0;
        }
        const auto ds = otsu_threshold(s, 64);
        const auto dt = otsu_threshold(t, 64);
        CHECK(dt.threshold == doctest::Approx(3.0 * ds.threshold + 7.0));
        std::size_t diff = 0;
        for (std::size_t i = 0; i < s.size(); ++i) {
            diff += ds.predictions[i] != dt.predictions[i];
        }
        // Only points sitting on the boundary up to rounding may differ.
        CHECK(diff <= 1);
    }
}

TEST_CASE("dynamic threshold flags an isolated spike")
{
    std::vector<double> s(300);
    std::mt19937_64 rng(4);
    std::normal_distribution<double> n(0.0, 1.0);
    for (auto& v : s) {
        v = n(rng) * 0.1;
    }
    s[200] = 10.0;
    DynamicThresholdOptions o;
    o.window = 50;
    o.k = 5;
    const auto d = dynamic_threshold(s, o);
    CHECK(d.predictions[200] == 1);
    std::size_t flagged = 0;
    for (auto p : d.predictions) {
        flagged += p;
    }
    CHECK(flagged == 1);
    for (std::size_t t = 0; t < o.window; ++t) {
        CHECK(std::isinf(d.threshold_series[t]));
        CHECK(d.predictions[t] == 0);
    }
}

TEST_CASE("dynamic threshold false-alarm rate on i.i.d. noise")
{
    std::vector<double> s(100000);
    std::mt19937_64 rng(5);
    std::normal_distribution<double> n(0.0, 1.0);
    for (auto& v : s) {
        v = n(rng);
    }
    DynamicThresholdOptions o;
    o.window = 100;
    o.k = 10;
    const auto d = dynamic_threshold(s, o);
    std::size_t flagged = 0;
    for (auto p : d.predictions) {
        flagged += p;
    }
    CHECK(static_cast<double>(flagged) / static_cast<double>(s.size()) < 1e-3);
}

TEST_CASE("dynamic threshold on a ramp with k = 0 flags everything after warm-up")
{
    std::vector<double> s(50);
    for (std::size_t t = 0; t < s.size(); ++t) {
        s[t] = static_cast<double>(t);
    }
    DynamicThresholdOptions o;
    o.window = 5;
    o.k = 0;
    const auto d = dynamic_threshold(s, o);
    for (std::size_t t = 0; t < s.size(); ++t) {
        CHECK(d.predictions[t] == (t >= 5 ? 1 : 0));
    }
    // Frozen statistics: the threshold never moves once flagging starts.
    CHECK(d.threshold_series[49] == d.threshold_series[5]);

    o.freeze_on_flag = false;
    const auto unfrozen = dynamic_threshold(s, o);
    CHECK(unfrozen.threshold_series[49] > unfrozen.threshold_series[5]);

    o.window = 1;
    CHECK_THROWS_AS(dynamic_threshold(s, o), ConfigError);
    o.window = 51;
    CHECK_THROWS_AS(dynamic_threshold(s, o), DataError);
}

TEST_CASE("strict inequality and monotonicity")
{
    const std::vector<double> s = {1, 2, 2, 3};
    CHECK(predict_above(s, 2.0) == Labels{0, 0, 0, 1});
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> r(200);
    for (auto& v : r) {
        v = u(rng);
    }
    Labels previous(r.size(), 1);
    for (double tau = -0.1; tau <= 1.1; tau += 0.05) {
        const auto p = predict_above(r, tau);
        for (std::size_t i = 0; i < r.size(); ++i) {
            CHECK(p[i] <= previous[i]);
        }
        previous = p;
    }
}

TEST_CASE("static decisions re-apply verbatim; dynamic ones recompute")
{
    const std::vector<double> val = {0.0, 1.0, 2.0, 3.0};
    const auto d = best_f1_threshold(val, Labels{0, 0, 1, 1});
    const std::vector<double> test = {0.0, 1.6, 1.4, 9.0};
    CHECK(apply_threshold(d, test).predictions == Labels{0, 1, 0, 1});

    DynamicThresholdOptions o;
    o.window = 2;
    ThresholdDecision dyn;
    dyn.strategy = ThresholdStrategy::dynamic;
    dyn.dynamic = o;
    CHECK(apply_threshold(dyn, test).predictions == dynamic_threshold(test, o).predictions);
}

TEST_CASE("threshold JSON round trip and prediction file")
{
    const auto d = otsu_threshold(std::vector<double>{0, 0.2, 1, 1.1}, 8);
    const auto back = threshold_from_json(nlohmann::json::parse(to_json(d).dump()));
    CHECK(back.strategy == ThresholdStrategy::otsu);
    CHECK(back.threshold == d.threshold);
    CHECK(back.bins == 8);

    ThresholdDecision dyn;
    dyn.strategy = ThresholdStrategy::dynamic;
    dyn.dynamic.window = 7;
    dyn.dynamic.k = 2.5;
    const auto dyn_back = threshold_from_json(to_json(dyn));
    CHECK(dyn_back.dynamic.window == 7);
    CHECK(dyn_back.dynamic.k == 2.5);
    CHECK_THROWS_AS(threshold_from_json(nlohmann::json{{"strategy", "magic"}}), ConfigError);

    const auto path = std::filesystem::temp_directory_path() / "tsad_thr" / "pred.csv";
    std::filesystem::create_directories(path.parent_path());
    write_predictions_csv(path, d);
    CHECK(load_label_vector_csv(path) == d.predictions);
}
