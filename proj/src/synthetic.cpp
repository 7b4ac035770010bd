#include "tsad/synthetic.hpp"

#include "tsad/error.hpp"
#include "tsad/json_util.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <numeric>
#include <random>

namespace tsad {

namespace {

std::mt19937_64 stream(std::uint64_t seed, std::uint32_t id)
{
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), id};
    return std::mt19937_64(seq);
}

AdjacencyMatrix make_ground_truth(const SyntheticConfig& cfg, std::uint64_t seed)
{
    const auto n = static_cast<Eigen::Index>(cfg.num_nodes);
    auto graph_rng = stream(seed, 1);
    const auto raw = random_graph(n, cfg.edge_probability, graph_rng());
    Eigen::MatrixXd w = raw.weights();
    if (cfg.connect_isolated && n > 1) {
        auto rng = stream(seed, 4);
        for (Eigen::Index i = 0; i < n; ++i) {
            if (w.row(i).sum() == 0.0) {
                std::uniform_int_distribution<Eigen::Index> pick(0, n - 2);
                auto j = pick(rng);
                j += j >= i;
                w(i, j) = w(j, i) = 1.0;
            }
        }
    }
    return AdjacencyMatrix(std::move(w), GraphSource::ground_truth);
}

std::size_t split_length(const SyntheticConfig& cfg, Split split)
{
    switch (split) {
    case Split::train:
        return cfg.train_length;
    case Split::validation:
        return cfg.validation_length;
    case Split::test:
        return cfg.test_length;
    }
    return 0;
}

std::size_t split_offset(const SyntheticConfig& cfg, Split split)
{
    switch (split) {
    case Split::train:
        return 0;
    case Split::validation:
        return cfg.train_length;
    case Split::test:
        return cfg.train_length + cfg.validation_length;
    }
    return 0;
}

void validate_anomaly(const SyntheticConfig& cfg, const AnomalySpec& a)
{
    const auto len = split_length(cfg, a.split);
    if (a.length == 0 || a.start + a.length > len) {
        throw ConfigError("anomaly interval [" + std::to_string(a.start) + ", " + std::to_string(a.start + a.length) +
                          ") lies outside the " + std::string(to_string(a.split)) + " split of length " +
                          std::to_string(len));
    }
    if (a.nodes.empty()) {
        throw ConfigError("anomaly must affect at least one node");
    }
    for (auto node : a.nodes) {
        if (node >= cfg.num_nodes) {
            throw ConfigError("anomaly node " + std::to_string(node) + " out of range");
        }
    }
    if (!std::isfinite(a.magnitude)) {
        throw ConfigError("anomaly magnitude must be finite");
    }
}

void place_random(const SyntheticConfig& cfg,
                  const RandomAnomalyPlan& plan,
                  Split split,
                  std::mt19937_64& rng,
                  std::vector<AnomalySpec>& anomalies)
{
    if (plan.count == 0) {
        return;
    }
    const auto len = split_length(cfg, split);
    if (plan.min_length == 0 || plan.max_length < plan.min_length) {
        throw ConfigError("random anomaly plan: invalid length bounds");
    }
    if (plan.nodes_per_anomaly == 0 || plan.nodes_per_anomaly > cfg.num_nodes) {
        throw ConfigError("random anomaly plan: nodes_per_anomaly must lie in [1, num_nodes]");
    }
    if (len < 2 * plan.margin + plan.max_length) {
        throw ConfigError("random anomaly plan does not fit in the " + std::string(to_string(split)) + " split");
    }
    std::uniform_int_distribution<std::size_t> length_dist(plan.min_length, plan.max_length);
    std::vector<std::size_t> node_ids(cfg.num_nodes);
    for (std::size_t k = 0; k < plan.count; ++k) {
        bool placed = false;
        for (int attempt = 0; attempt < 10000 && !placed; ++attempt) {
            const auto length = length_dist(rng);
            std::uniform_int_distribution<std::size_t> start_dist(plan.margin, len - plan.margin - length);
            const auto start = start_dist(rng);
            const bool clash = std::any_of(anomalies.begin(), anomalies.end(), [&](const AnomalySpec& a) {
                return a.split == split && start < a.start + a.length + plan.margin && a.start < start + length + plan.margin;
            });
            if (clash) {
                continue;
            }
            std::iota(node_ids.begin(), node_ids.end(), std::size_t{0});
            std::shuffle(node_ids.begin(), node_ids.end(), rng);
            std::vector<std::size_t> nodes(node_ids.begin(),
                                           node_ids.begin() + static_cast<std::ptrdiff_t>(plan.nodes_per_anomaly));
            std::sort(nodes.begin(), nodes.end());
            anomalies.push_back({split, start, length, plan.magnitude, std::move(nodes)});
            placed = true;
        }
        if (!placed) {
            throw ConfigError("could not place " + std::to_string(plan.count) + " non-overlapping anomalies in the " +
                              std::string(to_string(split)) + " split");
        }
    }
}

} // namespace

double transition_spectral_radius(const AdjacencyMatrix& ground_truth, double diffusion, double persistence)
{
    const auto a_hat = normalize(ground_truth);
    const auto n = a_hat.size();
    const Eigen::MatrixXd m = diffusion * a_hat.weights() + persistence * Eigen::MatrixXd::Identity(n, n);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m, Eigen::EigenvaluesOnly);
    return eig.eigenvalues().cwiseAbs().maxCoeff();
}

SyntheticDataset generate_synthetic(const SyntheticConfig& cfg, std::uint64_t seed)
{
    if (cfg.num_nodes < 1) {
        throw ConfigError("synthetic: num_nodes must be positive");
    }
    if (cfg.train_length < 2 || cfg.validation_length < 2 || cfg.test_length < 2) {
        throw ConfigError("synthetic: every split needs at least 2 timestamps");
    }
    if (!(cfg.noise >= 0.0) || !(cfg.noise_coupling >= 0.0)) {
        throw ConfigError("synthetic: noise and noise_coupling must be non-negative");
    }

    const auto ground_truth = make_ground_truth(cfg, seed);
    const auto radius = transition_spectral_radius(ground_truth, cfg.diffusion, cfg.persistence);
    if (!(radius < 1.0)) {
        throw ConfigError("synthetic: unstable process, spectral radius " + std::to_string(radius) + " >= 1");
    }

    std::vector<AnomalySpec> anomalies = cfg.anomalies;
    for (const auto& a : anomalies) {
        validate_anomaly(cfg, a);
    }
    auto anomaly_rng = stream(seed, 3);
    place_random(cfg, cfg.validation_plan, Split::validation, anomaly_rng, anomalies);
    place_random(cfg, cfg.test_plan, Split::test, anomaly_rng, anomalies);

    const auto n = static_cast<Eigen::Index>(cfg.num_nodes);
    const auto total = static_cast<Eigen::Index>(cfg.train_length + cfg.validation_length + cfg.test_length);
    const auto a_hat = normalize(ground_truth);
    const Eigen::MatrixXd transition =
        cfg.diffusion * a_hat.weights() + cfg.persistence * Eigen::MatrixXd::Identity(n, n);

    Eigen::MatrixXd shock_factor;  // upper Cholesky factor U of the innovation precision (U'U = Q)
    if (cfg.noise_coupling > 0.0) {
        const Eigen::MatrixXd& w = ground_truth.weights();
        Eigen::MatrixXd laplacian = -w;
        laplacian.diagonal() = w.rowwise().sum();
        const Eigen::MatrixXd precision = Eigen::MatrixXd::Identity(n, n) + cfg.noise_coupling * laplacian;
        shock_factor = precision.llt().matrixU();
    }

    auto noise_rng = stream(seed, 2);
    std::normal_distribution<double> gauss(0.0, 1.0);
    Eigen::VectorXd state = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd shock(n);
    Eigen::MatrixXd values(n, total);
    const auto steps = static_cast<Eigen::Index>(cfg.burn_in) + total;
    for (Eigen::Index step = 0; step < steps; ++step) {
        for (Eigen::Index i = 0; i < n; ++i) {
            shock[i] = gauss(noise_rng);
        }
        if (cfg.noise_coupling > 0.0) {
            shock = shock_factor.triangularView<Eigen::Upper>().solve(shock);
        }
        state = transition * state + cfg.noise * shock;
        const auto t = step - static_cast<Eigen::Index>(cfg.burn_in);
        if (t >= 0) {
            values.col(t) = state;
        }
    }

    LabelMatrix labels = LabelMatrix::Zero(n, total);
    for (const auto& a : anomalies) {
        const auto offset = static_cast<Eigen::Index>(split_offset(cfg, a.split) + a.start);
        for (auto node : a.nodes) {
            const auto i = static_cast<Eigen::Index>(node);
            for (Eigen::Index t = offset; t < offset + static_cast<Eigen::Index>(a.length); ++t) {
                values(i, t) += a.magnitude;
                labels(i, t) = 1;
            }
        }
    }

    std::vector<std::string> names;
    for (Eigen::Index i = 0; i < n; ++i) {
        names.push_back("s" + std::to_string(i));
    }
    const TimeSeriesSet full(std::move(values), std::move(names), Split::train, std::move(labels));
    const auto tr = static_cast<Eigen::Index>(cfg.train_length);
    const auto va = static_cast<Eigen::Index>(cfg.validation_length);
    return SyntheticDataset{full.slice(0, tr, Split::train), full.slice(tr, tr + va, Split::validation),
                            full.slice(tr + va, total, Split::test), ground_truth};
}

// ---------------------------------------------------------------------------

namespace {

RandomAnomalyPlan plan_from_json(const nlohmann::json& j, std::string_view ctx)
{
    using json_util::get_or;
    json_util::check_keys(j, {"count", "min_length", "max_length", "magnitude", "nodes_per_anomaly", "margin"}, ctx);
    RandomAnomalyPlan p;
    p.count = get_or(j, "count", p.count, ctx);
    p.min_length = get_or(j, "min_length", p.min_length, ctx);
    p.max_length = get_or(j, "max_length", p.max_length, ctx);
    p.magnitude = get_or(j, "magnitude", p.magnitude, ctx);
    p.nodes_per_anomaly = get_or(j, "nodes_per_anomaly", p.nodes_per_anomaly, ctx);
    p.margin = get_or(j, "margin", p.margin, ctx);
    return p;
}

nlohmann::json plan_to_json(const RandomAnomalyPlan& p)
{
    return {{"count", p.count},         {"min_length", p.min_length},
            {"max_length", p.max_length}, {"magnitude", p.magnitude},
            {"nodes_per_anomaly", p.nodes_per_anomaly}, {"margin", p.margin}};
}

} // namespace

SyntheticConfig synthetic_config_from_json(const nlohmann::json& j)
{
    using json_util::get_or;
    constexpr std::string_view ctx = "synthetic";
    json_util::check_keys(j,
                          {"num_nodes", "train_length", "validation_length", "test_length", "edge_probability",
                           "connect_isolated", "diffusion", "persistence", "noise", "noise_coupling", "burn_in",
                           "anomalies", "validation_plan", "test_plan"},
                          ctx);
    SyntheticConfig c;
    c.num_nodes = get_or(j, "num_nodes", c.num_nodes, ctx);
    c.train_length = get_or(j, "train_length", c.train_length, ctx);
    c.validation_length = get_or(j, "validation_length", c.validation_length, ctx);
    c.test_length = get_or(j, "test_length", c.test_length, ctx);
    c.edge_probability = get_or(j, "edge_probability", c.edge_probability, ctx);
    c.connect_isolated = get_or(j, "connect_isolated", c.connect_isolated, ctx);
    c.diffusion = get_or(j, "diffusion", c.diffusion, ctx);
    c.persistence = get_or(j, "persistence", c.persistence, ctx);
    c.noise = get_or(j, "noise", c.noise, ctx);
    c.noise_coupling = get_or(j, "noise_coupling", c.noise_coupling, ctx);
    c.burn_in = get_or(j, "burn_in", c.burn_in, ctx);
    if (j.contains("anomalies")) {
        for (const auto& a : j.at("anomalies")) {
            constexpr std::string_view actx = "synthetic.anomalies[]";
            json_util::check_keys(a, {"split", "start", "length", "magnitude", "nodes"}, actx);
            AnomalySpec spec;
            spec.split = split_from_string(get_or<std::string>(a, "split", "test", actx));
            spec.start = json_util::get_required<std::size_t>(a, "start", actx);
            spec.length = json_util::get_required<std::size_t>(a, "length", actx);
            spec.magnitude = get_or(a, "magnitude", spec.magnitude, actx);
            spec.nodes = json_util::get_required<std::vector<std::size_t>>(a, "nodes", actx);
            c.anomalies.push_back(std::move(spec));
        }
    }
    if (j.contains("validation_plan")) {
        c.validation_plan = plan_from_json(j.at("validation_plan"), "synthetic.validation_plan");
    }
    if (j.contains("test_plan")) {
        c.test_plan = plan_from_json(j.at("test_plan"), "synthetic.test_plan");
    }
    return c;
}

nlohmann::json to_json(const SyntheticConfig& c)
{
    nlohmann::json anomalies = nlohmann::json::array();
    for (const auto& a : c.anomalies) {
        anomalies.push_back({{"split", to_string(a.split)},
                             {"start", a.start},
                             {"length", a.length},
                             {"magnitude", a.magnitude},
                             {"nodes", a.nodes}});
    }
    return {{"num_nodes", c.num_nodes},
            {"train_length", c.train_length},
            {"validation_length", c.validation_length},
            {"test_length", c.test_length},
            {"edge_probability", c.edge_probability},
            {"connect_isolated", c.connect_isolated},
            {"diffusion", c.diffusion},
            {"persistence", c.persistence},
            {"noise", c.noise},
            {"noise_coupling", c.noise_coupling},
            {"burn_in", c.burn_in},
            {"anomalies", anomalies},
            {"validation_plan", plan_to_json(c.validation_plan)},
            {"test_plan", plan_to_json(c.test_plan)}};
}

} // namespace tsad
