#include "tsad/graph.hpp"

#include "tsad/csv.hpp"
#include "tsad/error.hpp"
#include "tsad/parallel.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

namespace tsad {

std::string_view to_string(GraphSource source)
{
    switch (source) {
    case GraphSource::fully_connected:
        return "fully_connected";
    case GraphSource::file:
        return "file";
    case GraphSource::random:
        return "random";
    case GraphSource::mb_inferred:
        return "mb_inferred";
    case GraphSource::ground_truth:
        return "ground_truth";
    case GraphSource::normalized:
        return "normalized";
    }
    return "unknown";
}

AdjacencyMatrix::AdjacencyMatrix(Eigen::MatrixXd weights, GraphSource source, bool normalized)
    : weights_(std::move(weights)), source_(source), normalized_(normalized)
{
    if (weights_.rows() < 1 || weights_.rows() != weights_.cols()) {
        throw DataError("adjacency matrix must be square and non-empty");
    }
    if (!weights_.allFinite()) {
        throw DataError("adjacency matrix contains NaN or Inf");
    }
    if ((weights_.array() < 0.0).any()) {
        throw DataError("adjacency matrix has negative weights");
    }
    if (weights_ != weights_.transpose()) {
        throw DataError("adjacency matrix is not symmetric");
    }
    if (!normalized_ && (weights_.diagonal().array() != 0.0).any()) {
        throw DataError("adjacency matrix must have a zero diagonal");
    }
}

std::size_t AdjacencyMatrix::edge_count() const
{
    std::size_t count = 0;
    for (Eigen::Index i = 0; i < size(); ++i) {
        for (Eigen::Index j = i + 1; j < size(); ++j) {
            count += weights_(i, j) != 0.0;
        }
    }
    return count;
}

double edge_f1(const AdjacencyMatrix& estimate, const AdjacencyMatrix& truth)
{
    if (estimate.size() != truth.size()) {
        throw DataError("edge_f1: graphs have different node counts");
    }
    const auto& a = estimate.weights();
    const auto& b = truth.weights();
    double tp = 0.0;
    double fp = 0.0;
    double fn = 0.0;
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        for (Eigen::Index j = i + 1; j < a.cols(); ++j) {
            tp += a(i, j) != 0.0 && b(i, j) != 0.0;
            fp += a(i, j) != 0.0 && b(i, j) == 0.0;
            fn += a(i, j) == 0.0 && b(i, j) != 0.0;
        }
    }
    const double denom = 2.0 * tp + fp + fn;
    return denom > 0.0 ? 2.0 * tp / denom : 1.0;
}

double AdjacencyMatrix::density() const
{
    const auto n = static_cast<double>(size());
    return size() < 2 ? 0.0 : static_cast<double>(edge_count()) / (n * (n - 1.0) / 2.0);
}

AdjacencyMatrix fully_connected(Eigen::Index n)
{
    if (n < 1) {
        throw ConfigError("fully_connected: n must be positive");
    }
    Eigen::MatrixXd w = Eigen::MatrixXd::Ones(n, n);
    w.diagonal().setZero();
    return AdjacencyMatrix(std::move(w), GraphSource::fully_connected);
}

AdjacencyMatrix random_graph(Eigen::Index n, double edge_probability, std::uint64_t seed)
{
    if (n < 1) {
        throw ConfigError("random_graph: n must be positive");
    }
    if (!(edge_probability >= 0.0 && edge_probability <= 1.0)) {
        throw ConfigError("random_graph: edge probability must lie in [0, 1]");
    }
    std::mt19937_64 rng(seed);
    std::bernoulli_distribution coin(edge_probability);
    Eigen::MatrixXd w = Eigen::MatrixXd::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = i + 1; j < n; ++j) {
            if (coin(rng)) {
                w(i, j) = w(j, i) = 1.0;
            }
        }
    }
    return AdjacencyMatrix(std::move(w), GraphSource::random);
}

namespace {

Eigen::Index parse_index(const std::string& token, Eigen::Index n, const std::string& context)
{
    long long value = -1;
    const auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
    if (ec != std::errc() || ptr != token.data() + token.size()) {
        throw DataError(context + ": invalid node index '" + token + "'");
    }
    if (value < 0 || value >= n) {
        throw DataError(context + ": node index " + token + " out of range [0, " + std::to_string(n) + ")");
    }
    return static_cast<Eigen::Index>(value);
}

} // namespace

AdjacencyMatrix load_graph(const std::filesystem::path& path, Eigen::Index n)
{
    if (n < 1) {
        throw ConfigError("load_graph: n must be positive");
    }
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open graph file '" + path.string() + "'");
    }
    Eigen::MatrixXd w = Eigen::MatrixXd::Zero(n, n);
    std::set<std::pair<Eigen::Index, Eigen::Index>> seen;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string::npos) {
            line.erase(hash);
        }
        std::istringstream tokens(line);
        std::vector<std::string> parts;
        for (std::string tok; tokens >> tok;) {
            parts.push_back(tok);
        }
        if (parts.empty()) {
            continue;
        }
        const auto context = path.string() + ":" + std::to_string(line_no);
        if (parts.size() < 2 || parts.size() > 3) {
            throw DataError(context + ": expected 'i j [weight]'");
        }
        const auto i = parse_index(parts[0], n, context);
        const auto j = parse_index(parts[1], n, context);
        if (i == j) {
            throw DataError(context + ": self-loop on node " + std::to_string(i));
        }
        const double weight = parts.size() == 3 ? csv::parse_double(parts[2], context) : 1.0;
        if (weight < 0.0) {
            throw DataError(context + ": negative weight");
        }
        if (!seen.emplace(std::min(i, j), std::max(i, j)).second) {
            throw DataError(context + ": duplicate edge (" + std::to_string(i) + ", " + std::to_string(j) + ")");
        }
        w(i, j) = w(j, i) = weight;
    }
    return AdjacencyMatrix(std::move(w), GraphSource::file);
}

void save_graph(const std::filesystem::path& path, const AdjacencyMatrix& adjacency)
{
    if (adjacency.is_normalized()) {
        throw ConfigError("save_graph: expects a raw adjacency, not a normalised operator");
    }
    std::string out = "# nodes " + std::to_string(adjacency.size()) + ", source " +
                      std::string(to_string(adjacency.source())) + "\n";
    const auto& w = adjacency.weights();
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
        for (Eigen::Index j = i + 1; j < w.cols(); ++j) {
            if (w(i, j) != 0.0) {
                out += std::to_string(i) + " " + std::to_string(j) + " " + csv::format_double(w(i, j)) + "\n";
            }
        }
    }
    csv::write_text(path, out);
}

AdjacencyMatrix normalize(const AdjacencyMatrix& adjacency)
{
    if (adjacency.is_normalized()) {
        throw ConfigError("normalize: adjacency is already normalised");
    }
    const auto n = adjacency.size();
    Eigen::MatrixXd b = adjacency.weights() + Eigen::MatrixXd::Identity(n, n);
    const Eigen::VectorXd inv_sqrt = b.rowwise().sum().array().rsqrt();
    Eigen::MatrixXd out = inv_sqrt.asDiagonal() * b * inv_sqrt.asDiagonal();
    // Restore exact symmetry lost to rounding in the two diagonal scalings.
    out = (0.5 * (out + out.transpose())).eval();
    return AdjacencyMatrix(std::move(out), GraphSource::normalized, true);
}

// ---------------------------------------------------------------------------

double lasso_lambda_max(const Eigen::MatrixXd& x, const Eigen::VectorXd& y)
{
    if (x.cols() == 0) {
        return 0.0;
    }
    return (x.transpose() * y).cwiseAbs().maxCoeff() / static_cast<double>(x.rows());
}

LassoResult lasso_coordinate_descent(const Eigen::MatrixXd& x,
                                     const Eigen::VectorXd& y,
                                     double lambda,
                                     const LassoOptions& options)
{
    if (lambda < 0.0 || !std::isfinite(lambda)) {
        throw ConfigError("lasso: lambda must be a finite non-negative number");
    }
    if (x.rows() != y.size()) {
        throw DataError("lasso: design and response lengths differ");
    }
    const auto n = static_cast<double>(x.rows());
    const auto p = x.cols();
    const Eigen::VectorXd col_sq = x.colwise().squaredNorm().transpose() / n;

    LassoResult result;
    result.coefficients = Eigen::VectorXd::Zero(p);
    Eigen::VectorXd residual = y;
    auto& beta = result.coefficients;

    for (int sweep = 1; sweep <= options.max_sweeps; ++sweep) {
        double max_change = 0.0;
        for (Eigen::Index j = 0; j < p; ++j) {
            if (col_sq[j] == 0.0) {
                continue;
            }
            const double rho = x.col(j).dot(residual) / n + col_sq[j] * beta[j];
            const double shrunk = std::copysign(std::max(std::abs(rho) - lambda, 0.0), rho);
            const double updated = shrunk / col_sq[j];
            const double change = updated - beta[j];
            if (change != 0.0) {
                residual -= change * x.col(j);
                beta[j] = updated;
                max_change = std::max(max_change, std::abs(change));
            }
        }
        result.sweeps = sweep;
        if (max_change < options.tolerance) {
            result.converged = true;
            break;
        }
    }
    return result;
}

std::string_view to_string(MbRule rule)
{
    return rule == MbRule::either ? "or" : "and";
}

MbRule mb_rule_from_string(std::string_view name)
{
    if (name == "or" || name == "OR") {
        return MbRule::either;
    }
    if (name == "and" || name == "AND") {
        return MbRule::both;
    }
    throw ConfigError("unknown MB symmetrisation rule '" + std::string(name) + "'");
}

MbResult infer_mb(const TimeSeriesSet& train, const MbOptions& options)
{
    if (options.lambda && (*options.lambda < 0.0 || !std::isfinite(*options.lambda))) {
        throw ConfigError("infer_mb: lambda must be non-negative");
    }
    if (!options.lambda && !(options.lambda_ratio >= 0.0)) {
        throw ConfigError("infer_mb: lambda ratio must be non-negative");
    }
    const auto n = train.num_series();
    const auto t = train.length();
    if (t <= n) {
        warn("infer_mb: " + std::to_string(t) + " samples for " + std::to_string(n) +
             " series; neighbourhood selection is unreliable when T <= N");
    }

    // Samples in rows, standardised to zero mean and unit (population) variance.
    Eigen::MatrixXd z = train.values().transpose();
    const Eigen::VectorXd mean = z.colwise().mean().transpose();
    z.rowwise() -= mean.transpose();
    const Eigen::VectorXd stddev = (z.colwise().squaredNorm().transpose() / static_cast<double>(t)).cwiseSqrt();
    for (Eigen::Index j = 0; j < n; ++j) {
        if (!(stddev[j] > 0.0)) {
            throw DataError("infer_mb: series '" + train.names()[static_cast<std::size_t>(j)] +
                            "' is constant (zero variance)");
        }
    }
    z = z * stddev.cwiseInverse().asDiagonal();

    Eigen::MatrixXd coef = Eigen::MatrixXd::Zero(n, n);
    std::vector<double> lambdas(static_cast<std::size_t>(n), 0.0);

    parallel_for(static_cast<std::size_t>(n), options.workers, [&](std::size_t node) {
        const auto i = static_cast<Eigen::Index>(node);
        if (n == 1) {
            return;
        }
        Eigen::MatrixXd others(t, n - 1);
        for (Eigen::Index j = 0, k = 0; j < n; ++j) {
            if (j != i) {
                others.col(k++) = z.col(j);
            }
        }
        const Eigen::VectorXd y = z.col(i);
        const double lambda = options.lambda ? *options.lambda : options.lambda_ratio * lasso_lambda_max(others, y);
        const auto fit = lasso_coordinate_descent(others, y, lambda, options.lasso);
        if (!fit.converged) {
            warn("infer_mb: lasso for node " + std::to_string(i) + " stopped after " + std::to_string(fit.sweeps) +
                 " sweeps without converging");
        }
        for (Eigen::Index j = 0, k = 0; j < n; ++j) {
            if (j != i) {
                coef(i, j) = fit.coefficients[k++];
            }
        }
        lambdas[node] = lambda;
    });

    Eigen::MatrixXd w = Eigen::MatrixXd::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = i + 1; j < n; ++j) {
            const bool ij = coef(i, j) != 0.0;
            const bool ji = coef(j, i) != 0.0;
            const bool edge = options.rule == MbRule::either ? (ij || ji) : (ij && ji);
            if (edge) {
                w(i, j) = w(j, i) = std::max(std::abs(coef(i, j)), std::abs(coef(j, i)));
            }
        }
    }

    return MbResult{AdjacencyMatrix(std::move(w), GraphSource::mb_inferred), options.rule, std::move(lambdas),
                    std::move(coef), mean, stddev};
}

nlohmann::json mb_metadata(const MbResult& result)
{
    const auto to_vec = [](const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
    return {
        {"method", "meinshausen_buhlmann"},
        {"rule", to_string(result.rule)},
        {"lambda", result.lambdas},
        {"edges", result.graph.edge_count()},
        {"standardization", {{"mean", to_vec(result.mean)}, {"stddev", to_vec(result.stddev)}}},
    };
}

} // namespace tsad
