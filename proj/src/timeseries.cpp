#include "tsad/timeseries.hpp"

#include "tsad/csv.hpp"
#include "tsad/error.hpp"

#include <cmath>

namespace tsad {

std::string_view to_string(Split split)
{
    switch (split) {
    case Split::train:
        return "train";
    case Split::validation:
        return "validation";
    case Split::test:
        return "test";
    }
    return "unknown";
}

Split split_from_string(std::string_view name)
{
    if (name == "train") {
        return Split::train;
    }
    if (name == "validation") {
        return Split::validation;
    }
    if (name == "test") {
        return Split::test;
    }
    throw ConfigError("unknown split '" + std::string(name) + "'");
}

// ---------------------------------------------------------------------------

TimeSeriesSet::TimeSeriesSet(Eigen::MatrixXd values,
                             std::vector<std::string> names,
                             Split split,
                             std::optional<LabelMatrix> node_labels,
                             std::optional<Labels> global_labels)
    : values_(std::move(values)), names_(std::move(names)), split_(split)
{
    const auto n = values_.rows();
    const auto t = values_.cols();
    if (n < 1) {
        throw DataError("time series set needs at least one series");
    }
    if (t < 2) {
        throw DataError("time series set needs at least two timestamps, got " + std::to_string(t));
    }
    if (!values_.allFinite()) {
        throw DataError("time series values contain NaN or Inf");
    }
    if (names_.empty()) {
        for (Eigen::Index i = 0; i < n; ++i) {
            names_.push_back("s" + std::to_string(i));
        }
    }
    if (static_cast<Eigen::Index>(names_.size()) != n) {
        throw DataError("expected " + std::to_string(n) + " series names, got " + std::to_string(names_.size()));
    }

    if (node_labels) {
        if (node_labels->rows() != n || node_labels->cols() != t) {
            throw DataError("node label shape does not match values");
        }
        if ((node_labels->array() > 1).any()) {
            throw DataError("node labels must be 0 or 1");
        }
        node_labels_ = std::move(*node_labels);
    } else {
        node_labels_ = LabelMatrix::Zero(n, t);
        has_node_labels_ = !global_labels.has_value();
    }

    if (global_labels) {
        if (static_cast<Eigen::Index>(global_labels->size()) != t) {
            throw DataError("global label length does not match values");
        }
        for (Eigen::Index j = 0; j < t; ++j) {
            const auto g = (*global_labels)[static_cast<std::size_t>(j)];
            if (g > 1) {
                throw DataError("global labels must be 0 or 1");
            }
            if (g == 0 && (node_labels_.col(j).array() != 0).any()) {
                throw DataError("global label is 0 at t=" + std::to_string(j) + " but a node label is 1");
            }
        }
        global_labels_ = std::move(*global_labels);
    } else {
        global_labels_.resize(static_cast<std::size_t>(t));
        for (Eigen::Index j = 0; j < t; ++j) {
            global_labels_[static_cast<std::size_t>(j)] = (node_labels_.col(j).array() != 0).any() ? 1 : 0;
        }
    }
}

TimeSeriesSet TimeSeriesSet::with_values(Eigen::MatrixXd values) const
{
    if (values.rows() != values_.rows() || values.cols() != values_.cols()) {
        throw DataError("with_values: shape mismatch");
    }
    if (has_node_labels_) {
        return TimeSeriesSet(std::move(values), names_, split_, node_labels_, global_labels_);
    }
    return TimeSeriesSet(std::move(values), names_, split_, std::nullopt, global_labels_);
}

TimeSeriesSet TimeSeriesSet::slice(Eigen::Index begin, Eigen::Index end, Split split) const
{
    if (begin < 0 || end > length() || end - begin < 2) {
        throw DataError("slice [" + std::to_string(begin) + ", " + std::to_string(end) + ") is invalid");
    }
    const auto count = end - begin;
    Labels global(global_labels_.begin() + begin, global_labels_.begin() + end);
    if (has_node_labels_) {
        return TimeSeriesSet(values_.middleCols(begin, count), names_, split,
                             LabelMatrix(node_labels_.middleCols(begin, count)), std::move(global));
    }
    return TimeSeriesSet(values_.middleCols(begin, count), names_, split, std::nullopt, std::move(global));
}

// ---------------------------------------------------------------------------

namespace {

std::uint8_t parse_label(std::string_view cell, const std::string& context)
{
    if (cell == "0") {
        return 0;
    }
    if (cell == "1") {
        return 1;
    }
    throw DataError(context + ": label cell '" + std::string(cell) + "' is not 0 or 1");
}

} // namespace

TimeSeriesSet load_csv(const std::filesystem::path& path,
                       const std::optional<std::filesystem::path>& label_path,
                       Split split)
{
    const auto table = csv::read(path);
    const auto n = static_cast<Eigen::Index>(table.header.size());
    const auto t = static_cast<Eigen::Index>(table.rows.size());
    if (t < 2) {
        throw DataError(path.string() + ": need at least 2 data rows, found " + std::to_string(t));
    }
    Eigen::MatrixXd values(n, t);
    for (Eigen::Index j = 0; j < t; ++j) {
        const auto& row = table.rows[static_cast<std::size_t>(j)];
        for (Eigen::Index i = 0; i < n; ++i) {
            values(i, j) = csv::parse_double(row[static_cast<std::size_t>(i)],
                                             path.string() + " row " + std::to_string(j + 2));
        }
    }

    if (!label_path) {
        return TimeSeriesSet(std::move(values), table.header, split, LabelMatrix::Zero(n, t));
    }

    const auto labels = csv::read(*label_path);
    if (static_cast<Eigen::Index>(labels.rows.size()) != t) {
        throw DataError("dimension mismatch: " + path.string() + " has " + std::to_string(t) + " rows but " +
                        label_path->string() + " has " + std::to_string(labels.rows.size()));
    }
    const auto context = label_path->string();
    if (labels.header.size() == 1 && n != 1) {
        Labels global(static_cast<std::size_t>(t));
        for (Eigen::Index j = 0; j < t; ++j) {
            global[static_cast<std::size_t>(j)] = parse_label(labels.rows[static_cast<std::size_t>(j)][0], context);
        }
        return TimeSeriesSet(std::move(values), table.header, split, std::nullopt, std::move(global));
    }
    if (static_cast<Eigen::Index>(labels.header.size()) != n) {
        throw DataError("dimension mismatch: " + path.string() + " has " + std::to_string(n) + " columns but " +
                        context + " has " + std::to_string(labels.header.size()));
    }
    LabelMatrix node(n, t);
    for (Eigen::Index j = 0; j < t; ++j) {
        for (Eigen::Index i = 0; i < n; ++i) {
            node(i, j) = parse_label(labels.rows[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)], context);
        }
    }
    return TimeSeriesSet(std::move(values), table.header, split, std::move(node));
}

void write_csv(const std::filesystem::path& path, const TimeSeriesSet& data)
{
    std::string out = csv::join(data.names()) + "\n";
    const auto& v = data.values();
    for (Eigen::Index j = 0; j < v.cols(); ++j) {
        for (Eigen::Index i = 0; i < v.rows(); ++i) {
            if (i) {
                out += ',';
            }
            out += csv::format_double(v(i, j));
        }
        out += '\n';
    }
    csv::write_text(path, out);
}

void write_labels_csv(const std::filesystem::path& path, const TimeSeriesSet& data)
{
    if (!data.has_node_labels()) {
        write_label_vector_csv(path, data.global_labels());
        return;
    }
    std::string out = csv::join(data.names()) + "\n";
    const auto& l = data.node_labels();
    for (Eigen::Index j = 0; j < l.cols(); ++j) {
        for (Eigen::Index i = 0; i < l.rows(); ++i) {
            if (i) {
                out += ',';
            }
            out += l(i, j) ? '1' : '0';
        }
        out += '\n';
    }
    csv::write_text(path, out);
}

void write_label_vector_csv(const std::filesystem::path& path, std::span<const std::uint8_t> labels)
{
    std::string out = "global\n";
    for (auto l : labels) {
        out += l ? "1\n" : "0\n";
    }
    csv::write_text(path, out);
}

Labels load_label_vector_csv(const std::filesystem::path& path)
{
    const auto table = csv::read(path);
    if (table.header.size() != 1) {
        throw DataError(path.string() + ": expected a single label column");
    }
    Labels labels;
    labels.reserve(table.rows.size());
    for (const auto& row : table.rows) {
        labels.push_back(parse_label(row[0], path.string()));
    }
    return labels;
}

// ---------------------------------------------------------------------------

WindowBatch::WindowBatch(Eigen::Index window_size,
                         WindowMode mode,
                         std::vector<Eigen::MatrixXd> inputs,
                         std::vector<Eigen::VectorXd> targets,
                         std::vector<std::size_t> anchor_times)
    : window_size_(window_size), mode_(mode), inputs_(std::move(inputs)), targets_(std::move(targets)),
      anchors_(std::move(anchor_times))
{
    if (window_size_ < 1) {
        throw ConfigError("window size must be positive");
    }
    if (inputs_.size() != anchors_.size()) {
        throw DataError("window batch: inputs and anchor times differ in length");
    }
    if (mode_ == WindowMode::forecast && targets_.size() != inputs_.size()) {
        throw DataError("window batch: forecast mode needs one target per window");
    }
    if (mode_ == WindowMode::reconstruct && !targets_.empty()) {
        throw DataError("window batch: reconstruction targets are the inputs themselves");
    }
    if (!inputs_.empty()) {
        num_series_ = inputs_.front().rows();
    }
    for (std::size_t i = 0; i < inputs_.size(); ++i) {
        if (inputs_[i].rows() != num_series_ || inputs_[i].cols() != window_size_) {
            throw DataError("window batch: inconsistent window shape at index " + std::to_string(i));
        }
        if (mode_ == WindowMode::forecast && targets_[i].size() != num_series_) {
            throw DataError("window batch: inconsistent target size at index " + std::to_string(i));
        }
    }
}

const Eigen::VectorXd& WindowBatch::target(std::size_t i) const
{
    if (mode_ != WindowMode::forecast) {
        throw ConfigError("window batch: next-step targets exist only in forecast mode");
    }
    return targets_[i];
}

std::size_t WindowBatch::scored_time(std::size_t i) const
{
    return mode_ == WindowMode::forecast ? anchors_[i] + 1 : anchors_[i];
}

WindowBatch make_windows(const TimeSeriesSet& data, Eigen::Index w, WindowMode mode)
{
    const auto t = data.length();
    if (w < 1) {
        throw ConfigError("window size must be positive, got " + std::to_string(w));
    }
    if (w >= t) {
        throw ConfigError("window size " + std::to_string(w) + " must be smaller than series length " +
                          std::to_string(t));
    }
    const auto& v = data.values();
    const auto last_anchor = mode == WindowMode::forecast ? t - 2 : t - 1;
    std::vector<Eigen::MatrixXd> inputs;
    std::vector<Eigen::VectorXd> targets;
    std::vector<std::size_t> anchors;
    const auto count = static_cast<std::size_t>(last_anchor - (w - 1) + 1);
    inputs.reserve(count);
    anchors.reserve(count);
    for (Eigen::Index a = w - 1; a <= last_anchor; ++a) {
        inputs.emplace_back(v.middleCols(a - w + 1, w));
        if (mode == WindowMode::forecast) {
            targets.emplace_back(v.col(a + 1));
        }
        anchors.push_back(static_cast<std::size_t>(a));
    }
    return WindowBatch(w, mode, std::move(inputs), std::move(targets), std::move(anchors));
}

// ---------------------------------------------------------------------------

LabelRanges LabelRanges::from_intervals(std::vector<Range> ranges, std::size_t horizon)
{
    for (std::size_t i = 0; i < ranges.size(); ++i) {
        const auto& r = ranges[i];
        if (r.end <= r.start) {
            throw DataError("range [" + std::to_string(r.start) + ", " + std::to_string(r.end) + ") is empty");
        }
        if (r.end > horizon) {
            throw DataError("range [" + std::to_string(r.start) + ", " + std::to_string(r.end) +
                            ") exceeds horizon " + std::to_string(horizon));
        }
        if (i > 0) {
            const auto& prev = ranges[i - 1];
            if (r.start < prev.end) {
                throw DataError("ranges overlap or are unsorted at index " + std::to_string(i));
            }
            if (r.start == prev.end) {
                throw DataError("ranges are adjacent at index " + std::to_string(i) + " (not maximal runs)");
            }
        }
    }
    LabelRanges out;
    out.ranges_ = std::move(ranges);
    out.horizon_ = horizon;
    return out;
}

LabelRanges extract_ranges(std::span<const std::uint8_t> labels)
{
    std::vector<Range> ranges;
    std::size_t t = 0;
    while (t < labels.size()) {
        if (labels[t]) {
            auto end = t;
            while (end < labels.size() && labels[end]) {
                ++end;
            }
            ranges.push_back({t, end});
            t = end;
        } else {
            ++t;
        }
    }
    return LabelRanges::from_intervals(std::move(ranges), labels.size());
}

Labels expand_to_points(const LabelRanges& ranges)
{
    Labels points(ranges.horizon(), 0);
    for (const auto& r : ranges.ranges()) {
        std::fill(points.begin() + static_cast<std::ptrdiff_t>(r.start),
                  points.begin() + static_cast<std::ptrdiff_t>(r.end), 1);
    }
    return points;
}

// ---------------------------------------------------------------------------

MinMaxScaler MinMaxScaler::fit(const TimeSeriesSet& train)
{
    MinMaxScaler s;
    s.min_ = train.values().rowwise().minCoeff();
    s.range_ = train.values().rowwise().maxCoeff() - s.min_;
    return s;
}

TimeSeriesSet MinMaxScaler::apply(const TimeSeriesSet& data) const
{
    if (data.num_series() != min_.size()) {
        throw DataError("scaler fitted on " + std::to_string(min_.size()) + " series, data has " +
                        std::to_string(data.num_series()));
    }
    Eigen::MatrixXd scaled(data.num_series(), data.length());
    for (Eigen::Index i = 0; i < scaled.rows(); ++i) {
        if (range_[i] > 0.0) {
            scaled.row(i) = (data.values().row(i).array() - min_[i]) / range_[i];
        } else {
            scaled.row(i).setZero();
        }
    }
    return data.with_values(std::move(scaled));
}

} // namespace tsad
