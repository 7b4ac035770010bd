#include "tsad/detectors.hpp"

#include "tsad/csv.hpp"
#include "tsad/error.hpp"
#include "tsad/json_util.hpp"
#include "tsad/stats.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>

namespace tsad {

std::string_view to_string(ForecastKind kind)
{
    return kind == ForecastKind::ar_per_node ? "ar_per_node" : "graph_filter";
}

std::string_view to_string(Aggregation aggregation)
{
    return aggregation == Aggregation::max ? "max" : "mean";
}

Aggregation aggregation_from_string(std::string_view name)
{
    if (name == "max") {
        return Aggregation::max;
    }
    if (name == "mean") {
        return Aggregation::mean;
    }
    throw ConfigError("unknown score aggregation '" + std::string(name) + "'");
}

// -- ForecastModel ------------------------------------------------------------

ForecastModel::ForecastModel(ForecastKind kind,
                             Eigen::Index window,
                             std::vector<Eigen::VectorXd> coefficients,
                             Eigen::VectorXd intercepts,
                             Eigen::MatrixXd propagation,
                             double ridge)
    : kind_(kind), window_(window), coefficients_(std::move(coefficients)), intercepts_(std::move(intercepts)),
      propagation_(std::move(propagation)), ridge_(ridge)
{
    if (window_ < 1) {
        throw ConfigError("forecast model: window must be positive");
    }
    const auto n = intercepts_.size();
    if (n < 1) {
        throw ConfigError("forecast model: needs at least one series");
    }
    if (kind_ == ForecastKind::ar_per_node) {
        if (static_cast<Eigen::Index>(coefficients_.size()) != n) {
            throw ConfigError("ar_per_node model needs one coefficient vector per node");
        }
        if (propagation_.size() != 0) {
            throw ConfigError("ar_per_node model takes no adjacency");
        }
    } else {
        if (coefficients_.empty()) {
            throw ConfigError("graph_filter model needs K+1 >= 1 coefficient vectors");
        }
        if (propagation_.rows() != n || propagation_.cols() != n) {
            throw ConfigError("graph_filter adjacency must be N x N");
        }
    }
    for (const auto& c : coefficients_) {
        if (c.size() != window_) {
            throw ConfigError("forecast model: coefficient vectors must have length w");
        }
    }
}

Eigen::Index ForecastModel::filter_order() const
{
    return kind_ == ForecastKind::graph_filter ? static_cast<Eigen::Index>(coefficients_.size()) - 1 : 0;
}

Eigen::VectorXd ForecastModel::predict(const Eigen::MatrixXd& window) const
{
    if (window.rows() != num_series() || window.cols() != window_) {
        throw DataError("forecast model: window shape mismatch");
    }
    Eigen::VectorXd out = intercepts_;
    if (kind_ == ForecastKind::ar_per_node) {
        for (Eigen::Index i = 0; i < num_series(); ++i) {
            out[i] += window.row(i).dot(coefficients_[static_cast<std::size_t>(i)]);
        }
        return out;
    }
    Eigen::MatrixXd hop = window;
    for (std::size_t k = 0; k < coefficients_.size(); ++k) {
        if (k > 0) {
            hop = propagation_ * hop;
        }
        out += hop * coefficients_[k];
    }
    return out;
}

// -- ReconstructionModel ------------------------------------------------------

ReconstructionModel::ReconstructionModel(Eigen::Index num_series,
                                         Eigen::Index window,
                                         Eigen::MatrixXd basis,
                                         Eigen::VectorXd mean,
                                         double explained_variance_ratio)
    : num_series_(num_series), window_(window), basis_(std::move(basis)), mean_(std::move(mean)),
      explained_variance_ratio_(explained_variance_ratio)
{
    const auto dim = num_series_ * window_;
    if (num_series_ < 1 || window_ < 1) {
        throw ConfigError("reconstruction model: invalid dimensions");
    }
    if (basis_.rows() != dim || mean_.size() != dim) {
        throw ConfigError("reconstruction model: basis/mean dimension must be N*w");
    }
    if (basis_.cols() < 1 || basis_.cols() > dim) {
        throw ConfigError("reconstruction model: component count must lie in [1, N*w]");
    }
}

namespace {

Eigen::VectorXd flatten(const Eigen::MatrixXd& window)
{
    Eigen::VectorXd v(window.size());
    for (Eigen::Index i = 0; i < window.rows(); ++i) {
        for (Eigen::Index j = 0; j < window.cols(); ++j) {
            v[i * window.cols() + j] = window(i, j);
        }
    }
    return v;
}

Eigen::MatrixXd unflatten(const Eigen::VectorXd& v, Eigen::Index rows, Eigen::Index cols)
{
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        for (Eigen::Index j = 0; j < cols; ++j) {
            m(i, j) = v[i * cols + j];
        }
    }
    return m;
}

} // namespace

Eigen::MatrixXd ReconstructionModel::reconstruct(const Eigen::MatrixXd& window) const
{
    if (window.rows() != num_series_ || window.cols() != window_) {
        throw DataError("reconstruction model: window shape mismatch");
    }
    const Eigen::VectorXd centered = flatten(window) - mean_;
    const Eigen::VectorXd projected = mean_ + basis_ * (basis_.transpose() * centered);
    return unflatten(projected, num_series_, window_);
}

// -- fitting ------------------------------------------------------------------

Eigen::VectorXd solve_ridge(const Eigen::MatrixXd& gram, const Eigen::VectorXd& rhs, double ridge)
{
    if (!(ridge >= 0.0) || !std::isfinite(ridge)) {
        throw ConfigError("ridge penalty must be a finite non-negative number");
    }
    Eigen::MatrixXd system = gram;
    system.diagonal().array() += ridge;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(system);
    // LDLT's rcond estimate stays finite on exactly rank-deficient systems, so also look at the pivots.
    const auto pivots = ldlt.vectorD().cwiseAbs();
    const bool degenerate = !(pivots.minCoeff() > 1e-12 * pivots.maxCoeff());
    const bool singular = ldlt.info() != Eigen::Success || (ridge == 0.0 && (degenerate || !(ldlt.rcond() > 1e-12)));
    if (singular) {
        throw NumericalError("singular normal equations (collinear inputs); use a ridge penalty mu > 0");
    }
    Eigen::VectorXd theta = ldlt.solve(rhs);
    if (!theta.allFinite()) {
        throw NumericalError("ridge solve produced non-finite coefficients; use a larger ridge penalty");
    }
    return theta;
}

namespace {

void require_forecast_batch(const WindowBatch& train)
{
    if (train.mode() != WindowMode::forecast) {
        throw ConfigError("forecast models need forecast-mode windows");
    }
    if (static_cast<Eigen::Index>(train.size()) < train.window_size() + 1) {
        throw DataError("need at least w+1 = " + std::to_string(train.window_size() + 1) +
                        " training windows, got " + std::to_string(train.size()));
    }
}

} // namespace

ForecastModel fit_ar(const WindowBatch& train, double ridge)
{
    require_forecast_batch(train);
    const auto n = train.num_series();
    const auto w = train.window_size();
    const auto b = static_cast<Eigen::Index>(train.size());

    std::vector<Eigen::VectorXd> coefficients;
    Eigen::VectorXd intercepts(n);
    Eigen::MatrixXd design(b, w);
    Eigen::VectorXd response(b);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index r = 0; r < b; ++r) {
            design.row(r) = train.input(static_cast<std::size_t>(r)).row(i);
            response[r] = train.target(static_cast<std::size_t>(r))[i];
        }
        const Eigen::RowVectorXd design_mean = design.colwise().mean();
        const double response_mean = response.mean();
        const Eigen::MatrixXd centered = design.rowwise() - design_mean;
        const Eigen::VectorXd centered_y = response.array() - response_mean;
        Eigen::VectorXd theta = solve_ridge(centered.transpose() * centered, centered.transpose() * centered_y, ridge);
        intercepts[i] = response_mean - design_mean.dot(theta);
        coefficients.push_back(std::move(theta));
    }
    return ForecastModel(ForecastKind::ar_per_node, w, std::move(coefficients), std::move(intercepts),
                         Eigen::MatrixXd(), ridge);
}

ForecastModel fit_graph_filter(const WindowBatch& train,
                               const AdjacencyMatrix& adjacency,
                               Eigen::Index filter_order,
                               double ridge)
{
    require_forecast_batch(train);
    if (filter_order < 0) {
        throw ConfigError("graph filter order K must be non-negative");
    }
    if (!adjacency.is_normalized()) {
        throw ConfigError("fit_graph_filter expects a normalised adjacency (call normalize first)");
    }
    const auto n = train.num_series();
    if (adjacency.size() != n) {
        throw ConfigError("adjacency has " + std::to_string(adjacency.size()) + " nodes but data has " +
                          std::to_string(n) + " series");
    }
    const auto w = train.window_size();
    const auto b = static_cast<Eigen::Index>(train.size());
    const auto dim = (filter_order + 1) * w;
    const Eigen::MatrixXd& a_hat = adjacency.weights();

    // Per-node feature blocks: row r of features[i] is node i's row of [X, A X, ..., A^K X].
    std::vector<Eigen::MatrixXd> features(static_cast<std::size_t>(n), Eigen::MatrixXd(b, dim));
    Eigen::MatrixXd responses(b, n);
    for (Eigen::Index r = 0; r < b; ++r) {
        Eigen::MatrixXd hop = train.input(static_cast<std::size_t>(r));
        for (Eigen::Index k = 0; k <= filter_order; ++k) {
            if (k > 0) {
                hop = a_hat * hop;
            }
            for (Eigen::Index i = 0; i < n; ++i) {
                features[static_cast<std::size_t>(i)].block(r, k * w, 1, w) = hop.row(i);
            }
        }
        responses.row(r) = train.target(static_cast<std::size_t>(r)).transpose();
    }

    // Per-node intercepts are unpenalised, so centre each node's block separately.
    Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(dim, dim);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(dim);
    std::vector<Eigen::RowVectorXd> feature_means;
    Eigen::VectorXd response_means(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        auto& f = features[static_cast<std::size_t>(i)];
        feature_means.emplace_back(f.colwise().mean());
        response_means[i] = responses.col(i).mean();
        f.rowwise() -= feature_means.back();
        const Eigen::VectorXd y = responses.col(i).array() - response_means[i];
        gram.noalias() += f.transpose() * f;
        rhs.noalias() += f.transpose() * y;
    }
    const Eigen::VectorXd theta = solve_ridge(gram, rhs, ridge);

    std::vector<Eigen::VectorXd> coefficients;
    for (Eigen::Index k = 0; k <= filter_order; ++k) {
        coefficients.emplace_back(theta.segment(k * w, w));
    }
    Eigen::VectorXd intercepts(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        intercepts[i] = response_means[i] - feature_means[static_cast<std::size_t>(i)].dot(theta);
    }
    return ForecastModel(ForecastKind::graph_filter, w, std::move(coefficients), std::move(intercepts), a_hat, ridge);
}

ReconstructionModel fit_reconstructor(const WindowBatch& train, Eigen::Index components)
{
    if (train.mode() != WindowMode::reconstruct) {
        throw ConfigError("reconstructor needs reconstruction-mode windows");
    }
    if (train.size() < 2) {
        throw DataError("reconstructor needs at least two training windows");
    }
    const auto n = train.num_series();
    const auto w = train.window_size();
    const auto dim = n * w;
    if (components < 1 || components > dim) {
        throw ConfigError("component count r must lie in [1, N*w] = [1, " + std::to_string(dim) + "]");
    }
    const auto b = static_cast<Eigen::Index>(train.size());
    Eigen::MatrixXd data(b, dim);
    for (Eigen::Index r = 0; r < b; ++r) {
        data.row(r) = flatten(train.input(static_cast<std::size_t>(r))).transpose();
    }
    const Eigen::VectorXd mean = data.colwise().mean().transpose();
    data.rowwise() -= mean.transpose();
    const Eigen::MatrixXd covariance = (data.transpose() * data) / static_cast<double>(b);

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(covariance);
    if (eig.info() != Eigen::Success) {
        throw NumericalError("eigendecomposition of the window covariance failed");
    }
    // Eigen returns ascending eigenvalues; walk from the top.
    const Eigen::VectorXd values = eig.eigenvalues().cwiseMax(0.0);
    const double top = values[dim - 1];
    Eigen::Index rank = 0;
    for (Eigen::Index k = dim - 1; k >= 0; --k) {
        if (top > 0.0 && values[k] > 1e-10 * top) {
            ++rank;
        }
    }
    auto r = components;
    if (r > std::max<Eigen::Index>(rank, 1)) {
        r = std::max<Eigen::Index>(rank, 1);
        warn("reconstructor: requested " + std::to_string(components) + " components but the training windows have rank " +
             std::to_string(rank) + "; using " + std::to_string(r));
    }

    Eigen::MatrixXd basis(dim, r);
    double retained = 0.0;
    for (Eigen::Index c = 0; c < r; ++c) {
        Eigen::VectorXd v = eig.eigenvectors().col(dim - 1 - c);
        Eigen::Index pivot = 0;
        v.cwiseAbs().maxCoeff(&pivot);
        if (v[pivot] < 0.0) {
            v = -v;
        }
        basis.col(c) = v;
        retained += values[dim - 1 - c];
    }
    const double total = values.sum();
    const double ratio = total > 0.0 ? retained / total : 1.0;
    return ReconstructionModel(n, w, std::move(basis), mean, ratio);
}

// -- scoring ------------------------------------------------------------------

namespace {

Eigen::Index model_window(const Model& model)
{
    return std::visit([](const auto& m) { return m.window(); }, model);
}

Eigen::Index model_series(const Model& model)
{
    return std::visit([](const auto& m) { return m.num_series(); }, model);
}

} // namespace

RawErrors residual_errors(const Model& model, const WindowBatch& data)
{
    if (model_window(model) != data.window_size()) {
        throw ConfigError("window size mismatch: model uses " + std::to_string(model_window(model)) + ", data " +
                          std::to_string(data.window_size()));
    }
    if (data.size() > 0 && model_series(model) != data.num_series()) {
        throw ConfigError("series count mismatch between model and data");
    }
    RawErrors out;
    const auto n = model_series(model);
    out.errors.resize(n, static_cast<Eigen::Index>(data.size()));
    out.times.reserve(data.size());
    for (std::size_t r = 0; r < data.size(); ++r) {
        const auto col = static_cast<Eigen::Index>(r);
        if (const auto* fm = std::get_if<ForecastModel>(&model)) {
            if (data.mode() != WindowMode::forecast) {
                throw ConfigError("forecast model needs forecast-mode windows");
            }
            out.errors.col(col) = (fm->predict(data.input(r)) - data.target(r)).cwiseAbs();
        } else {
            const auto& rm = std::get<ReconstructionModel>(model);
            const auto& x = data.input(r);
            const Eigen::MatrixXd residual = rm.reconstruct(x) - x;
            out.errors.col(col) = (residual.rowwise().squaredNorm() / static_cast<double>(x.cols())).cwiseSqrt();
        }
        out.times.push_back(data.scored_time(r));
    }
    return out;
}

NormalizationStats fit_normalization(const RawErrors& errors)
{
    if (errors.errors.cols() == 0) {
        throw DataError("cannot fit normalisation statistics on an empty error set");
    }
    const auto n = errors.errors.rows();
    NormalizationStats s{Eigen::VectorXd(n), Eigen::VectorXd(n)};
    for (Eigen::Index i = 0; i < n; ++i) {
        std::vector<double> row(static_cast<std::size_t>(errors.errors.cols()));
        for (Eigen::Index c = 0; c < errors.errors.cols(); ++c) {
            row[static_cast<std::size_t>(c)] = errors.errors(i, c);
        }
        s.median[i] = stats::quantile(row, 0.5);
        s.iqr[i] = stats::quantile(row, 0.75) - stats::quantile(row, 0.25);
    }
    return s;
}

ScoreSeries::ScoreSeries(Eigen::MatrixXd node_scores,
                         std::vector<std::size_t> times,
                         Aggregation aggregation,
                         std::optional<NormalizationStats> stats)
    : node_scores_(std::move(node_scores)), times_(std::move(times)), aggregation_(aggregation),
      stats_(std::move(stats))
{
    if (static_cast<std::size_t>(node_scores_.cols()) != times_.size()) {
        throw DataError("score series: times and score columns differ in length");
    }
    if (!node_scores_.allFinite() || (node_scores_.array() < 0.0).any()) {
        throw NumericalError("score series: scores must be finite and non-negative");
    }
    for (std::size_t k = 1; k < times_.size(); ++k) {
        if (times_[k] <= times_[k - 1]) {
            throw DataError("score series: times must be strictly increasing");
        }
    }
    global_.resize(times_.size());
    for (Eigen::Index c = 0; c < node_scores_.cols(); ++c) {
        global_[static_cast<std::size_t>(c)] =
            aggregation_ == Aggregation::max ? node_scores_.col(c).maxCoeff() : node_scores_.col(c).mean();
    }
}

ScoreSeries normalize_errors(const RawErrors& errors,
                             const NormalizationStats& stats,
                             Aggregation aggregation,
                             double epsilon)
{
    const auto n = errors.errors.rows();
    if (stats.median.size() != n || stats.iqr.size() != n) {
        throw ConfigError("normalisation statistics do not match the series count");
    }
    Eigen::MatrixXd scores(n, errors.errors.cols());
    for (Eigen::Index i = 0; i < n; ++i) {
        const double scale = std::max(stats.iqr[i], epsilon);
        scores.row(i) = ((errors.errors.row(i).array() - stats.median[i]) / scale).cwiseMax(0.0);
    }
    return ScoreSeries(std::move(scores), errors.times, aggregation, stats);
}

ScoreSeries score(const Model& model, const WindowBatch& data, const ScoreOptions& options)
{
    const auto errors = residual_errors(model, data);
    if (options.mode == StatsMode::precomputed) {
        if (!options.stats) {
            throw ConfigError("precomputed scoring mode requires normalisation statistics");
        }
        return normalize_errors(errors, *options.stats, options.aggregation, options.epsilon);
    }
    return normalize_errors(errors, fit_normalization(errors), options.aggregation, options.epsilon);
}

ScoreSeries combine_scores(const ScoreSeries& forecast, const ScoreSeries& reconstruction, double gamma)
{
    if (!(gamma >= 0.0 && gamma <= 1.0)) {
        throw ConfigError("combination weight gamma must lie in [0, 1]");
    }
    if (forecast.num_series() != reconstruction.num_series()) {
        throw DataError("cannot combine score series with different node counts");
    }
    std::vector<std::pair<Eigen::Index, Eigen::Index>> shared;
    std::size_t a = 0;
    std::size_t b = 0;
    const auto& ta = forecast.times();
    const auto& tb = reconstruction.times();
    while (a < ta.size() && b < tb.size()) {
        if (ta[a] == tb[b]) {
            shared.emplace_back(static_cast<Eigen::Index>(a++), static_cast<Eigen::Index>(b++));
        } else if (ta[a] < tb[b]) {
            ++a;
        } else {
            ++b;
        }
    }
    if (shared.empty()) {
        throw DataError("forecast and reconstruction scores share no timestamps");
    }
    if (shared.size() != ta.size() || shared.size() != tb.size()) {
        warn("combine_scores: trimmed to " + std::to_string(shared.size()) + " shared timestamps (forecast " +
             std::to_string(ta.size()) + ", reconstruction " + std::to_string(tb.size()) + ")");
    }
    Eigen::MatrixXd combined(forecast.num_series(), static_cast<Eigen::Index>(shared.size()));
    std::vector<std::size_t> times;
    times.reserve(shared.size());
    for (std::size_t k = 0; k < shared.size(); ++k) {
        const auto [ia, ib] = shared[k];
        combined.col(static_cast<Eigen::Index>(k)) =
            gamma * forecast.node_scores().col(ia) + (1.0 - gamma) * reconstruction.node_scores().col(ib);
        times.push_back(ta[static_cast<std::size_t>(ia)]);
    }
    return ScoreSeries(std::move(combined), std::move(times), forecast.aggregation());
}

Labels labels_at(const ScoreSeries& scores, std::span<const std::uint8_t> labels)
{
    Labels out;
    out.reserve(scores.size());
    for (auto t : scores.times()) {
        if (t >= labels.size()) {
            throw DataError("score timestamp " + std::to_string(t) + " beyond label horizon " +
                            std::to_string(labels.size()));
        }
        out.push_back(labels[t]);
    }
    return out;
}

double normal_window_mse(const Model& model, const WindowBatch& data, std::span<const std::uint8_t> labels)
{
    const auto w = static_cast<std::size_t>(data.window_size());
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t r = 0; r < data.size(); ++r) {
        const auto anchor = data.anchor_times()[r];
        const auto last = data.mode() == WindowMode::forecast ? anchor + 1 : anchor;
        if (last >= labels.size()) {
            throw DataError("window extends beyond the label horizon");
        }
        bool normal = true;
        for (auto t = anchor + 1 - w; t <= last && normal; ++t) {
            normal = labels[t] == 0;
        }
        if (!normal) {
            continue;
        }
        if (const auto* fm = std::get_if<ForecastModel>(&model)) {
            total += (fm->predict(data.input(r)) - data.target(r)).squaredNorm();
            count += static_cast<std::size_t>(fm->num_series());
        } else {
            const auto& rm = std::get<ReconstructionModel>(model);
            total += (rm.reconstruct(data.input(r)) - data.input(r)).squaredNorm();
            count += static_cast<std::size_t>(data.input(r).size());
        }
    }
    if (count == 0) {
        throw DataError("no fully normal windows to compute the validation loss on");
    }
    return total / static_cast<double>(count);
}

// -- serialisation ------------------------------------------------------------

namespace {

std::vector<double> to_vec(const Eigen::VectorXd& v)
{
    return std::vector<double>(v.data(), v.data() + v.size());
}

Eigen::VectorXd from_vec(const std::vector<double>& v)
{
    return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

nlohmann::json matrix_to_json(const Eigen::MatrixXd& m)
{
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        rows.push_back(to_vec(m.row(i).transpose()));
    }
    return rows;
}

Eigen::MatrixXd matrix_from_json(const nlohmann::json& j, std::string_view ctx)
{
    const auto rows = j.get<std::vector<std::vector<double>>>();
    if (rows.empty()) {
        return {};
    }
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != rows.front().size()) {
            throw ConfigError(std::string(ctx) + ": ragged matrix");
        }
        m.row(static_cast<Eigen::Index>(i)) = from_vec(rows[i]).transpose();
    }
    return m;
}

} // namespace

nlohmann::json to_json(const Model& model)
{
    if (const auto* fm = std::get_if<ForecastModel>(&model)) {
        nlohmann::json coefficients = nlohmann::json::array();
        for (const auto& c : fm->coefficients()) {
            coefficients.push_back(to_vec(c));
        }
        nlohmann::json j = {{"kind", to_string(fm->kind())},
                            {"window", fm->window()},
                            {"num_series", fm->num_series()},
                            {"filter_order", fm->filter_order()},
                            {"ridge", fm->ridge()},
                            {"coefficients", coefficients},
                            {"intercepts", to_vec(fm->intercepts())}};
        if (fm->kind() == ForecastKind::graph_filter) {
            j["propagation"] = matrix_to_json(fm->propagation());
        }
        return j;
    }
    const auto& rm = std::get<ReconstructionModel>(model);
    return {{"kind", "subspace_projection"},
            {"window", rm.window()},
            {"num_series", rm.num_series()},
            {"components", rm.components()},
            {"explained_variance_ratio", rm.explained_variance_ratio()},
            {"mean", to_vec(rm.mean())},
            {"basis", matrix_to_json(rm.basis())}};
}

Model model_from_json(const nlohmann::json& j)
{
    constexpr std::string_view ctx = "model";
    try {
        const auto kind = json_util::get_required<std::string>(j, "kind", ctx);
        const auto window = json_util::get_required<Eigen::Index>(j, "window", ctx);
        if (kind == "ar_per_node" || kind == "graph_filter") {
            std::vector<Eigen::VectorXd> coefficients;
            for (const auto& c : j.at("coefficients")) {
                coefficients.push_back(from_vec(c.get<std::vector<double>>()));
            }
            Eigen::MatrixXd propagation;
            if (kind == "graph_filter") {
                propagation = matrix_from_json(j.at("propagation"), ctx);
            }
            return ForecastModel(kind == "ar_per_node" ? ForecastKind::ar_per_node : ForecastKind::graph_filter, window,
                                 std::move(coefficients), from_vec(j.at("intercepts").get<std::vector<double>>()),
                                 std::move(propagation), json_util::get_or(j, "ridge", default_ridge, ctx));
        }
        if (kind == "subspace_projection") {
            return ReconstructionModel(json_util::get_required<Eigen::Index>(j, "num_series", ctx), window,
                                       matrix_from_json(j.at("basis"), ctx),
                                       from_vec(j.at("mean").get<std::vector<double>>()),
                                       json_util::get_or(j, "explained_variance_ratio", 1.0, ctx));
        }
        throw ConfigError("unknown model kind '" + kind + "'");
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("model JSON: ") + e.what());
    }
}

nlohmann::json to_json(const NormalizationStats& stats)
{
    return {{"median", to_vec(stats.median)}, {"iqr", to_vec(stats.iqr)}};
}

NormalizationStats stats_from_json(const nlohmann::json& j)
{
    constexpr std::string_view ctx = "normalization_stats";
    NormalizationStats s{from_vec(json_util::get_required<std::vector<double>>(j, "median", ctx)),
                         from_vec(json_util::get_required<std::vector<double>>(j, "iqr", ctx))};
    if (s.median.size() != s.iqr.size()) {
        throw ConfigError("normalisation statistics: median and iqr differ in length");
    }
    return s;
}

void write_scores_csv(const std::filesystem::path& path,
                      const ScoreSeries& scores,
                      const std::vector<std::string>& names)
{
    std::string out = "time";
    for (Eigen::Index i = 0; i < scores.num_series(); ++i) {
        out += ',';
        out += static_cast<std::size_t>(i) < names.size() ? names[static_cast<std::size_t>(i)] : "s" + std::to_string(i);
    }
    out += ",global\n";
    for (std::size_t c = 0; c < scores.size(); ++c) {
        out += std::to_string(scores.times()[c]);
        for (Eigen::Index i = 0; i < scores.num_series(); ++i) {
            out += ',';
            out += csv::format_double(scores.node_scores()(i, static_cast<Eigen::Index>(c)));
        }
        out += ',';
        out += csv::format_double(scores.global_scores()[c]);
        out += '\n';
    }
    csv::write_text(path, out);
}

ScoreSeries read_scores_csv(const std::filesystem::path& path, Aggregation aggregation)
{
    const auto table = csv::read(path);
    if (table.header.size() < 3 || table.header.front() != "time" || table.header.back() != "global") {
        throw DataError(path.string() + ": expected columns time,<nodes...>,global");
    }
    const auto n = static_cast<Eigen::Index>(table.header.size() - 2);
    Eigen::MatrixXd scores(n, static_cast<Eigen::Index>(table.rows.size()));
    std::vector<std::size_t> times;
    std::vector<double> global;
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const auto& row = table.rows[r];
        const auto context = path.string() + " row " + std::to_string(r + 2);
        const double t = csv::parse_double(row[0], context);
        if (t < 0.0 || t != std::floor(t)) {
            throw DataError(context + ": time must be a non-negative integer");
        }
        times.push_back(static_cast<std::size_t>(t));
        for (Eigen::Index i = 0; i < n; ++i) {
            scores(i, static_cast<Eigen::Index>(r)) = csv::parse_double(row[static_cast<std::size_t>(i) + 1], context);
        }
        global.push_back(csv::parse_double(row.back(), context));
    }
    ScoreSeries out(std::move(scores), std::move(times), aggregation);
    if (out.global_scores() != global) {
        throw DataError(path.string() + ": global column is not the " + std::string(to_string(aggregation)) +
                        " of the node columns");
    }
    return out;
}

} // namespace tsad
