#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace tsad {

/// Binary point labels, one entry per timestamp (0 = normal, 1 = anomalous).
using Labels = std::vector<std::uint8_t>;
using LabelMatrix = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>;

enum class Split { train, validation, test };

std::string_view to_string(Split split);
Split split_from_string(std::string_view name);

/**
 * N aligned series of length T with anomaly labels.
 *
 * Values are stored N x T (row = series, column = timestamp). When only
 * global labels are available the per-node labels are kept as zeros and
 * has_node_labels() reports false; node-level evaluation must not use them.
 */
class TimeSeriesSet {
public:
    TimeSeriesSet(Eigen::MatrixXd values,
                  std::vector<std::string> names,
                  Split split,
                  std::optional<LabelMatrix> node_labels = std::nullopt,
                  std::optional<Labels> global_labels = std::nullopt);

    Eigen::Index num_series() const { return values_.rows(); }
    Eigen::Index length() const { return values_.cols(); }

    const Eigen::MatrixXd& values() const { return values_; }
    const LabelMatrix& node_labels() const { return node_labels_; }
    const Labels& global_labels() const { return global_labels_; }
    const std::vector<std::string>& names() const { return names_; }
    Split split() const { return split_; }
    bool has_node_labels() const { return has_node_labels_; }

    /// Same labels and names, new values (shape must match).
    TimeSeriesSet with_values(Eigen::MatrixXd values) const;

    /// Timestamps [begin, end) as a new set with the given split tag.
    TimeSeriesSet slice(Eigen::Index begin, Eigen::Index end, Split split) const;

private:
    Eigen::MatrixXd values_;
    std::vector<std::string> names_;
    Split split_;
    LabelMatrix node_labels_;
    Labels global_labels_;
    bool has_node_labels_ = true;
};

/// Reads a data CSV (header of series names, one row per timestamp) and an
/// optional label CSV of the same shape, or a single label column that is
/// taken as global labels.
TimeSeriesSet load_csv(const std::filesystem::path& path,
                       const std::optional<std::filesystem::path>& label_path = std::nullopt,
                       Split split = Split::train);

void write_csv(const std::filesystem::path& path, const TimeSeriesSet& data);
/// Per-node label CSV when node labels exist, otherwise a single "global" column.
void write_labels_csv(const std::filesystem::path& path, const TimeSeriesSet& data);
/// Single-column label file (header "global").
void write_label_vector_csv(const std::filesystem::path& path, std::span<const std::uint8_t> labels);
Labels load_label_vector_csv(const std::filesystem::path& path);

enum class WindowMode { forecast, reconstruct };

/**
 * Sliding windows X(t) = [x(t-w+1) .. x(t)] of shape N x w.
 *
 * Forecast mode pairs each window with the next observation x(t+1);
 * reconstruction mode targets the window itself. anchor_times() holds t
 * (0-based) for each window.
 */
class WindowBatch {
public:
    WindowBatch(Eigen::Index window_size,
                WindowMode mode,
                std::vector<Eigen::MatrixXd> inputs,
                std::vector<Eigen::VectorXd> targets,
                std::vector<std::size_t> anchor_times);

    Eigen::Index window_size() const { return window_size_; }
    WindowMode mode() const { return mode_; }
    std::size_t size() const { return inputs_.size(); }
    Eigen::Index num_series() const { return num_series_; }

    const Eigen::MatrixXd& input(std::size_t i) const { return inputs_[i]; }
    /// Next-step target; forecast mode only.
    const Eigen::VectorXd& target(std::size_t i) const;
    const std::vector<std::size_t>& anchor_times() const { return anchors_; }

    /// Timestamp each window's score is attributed to: t+1 when forecasting, t when reconstructing.
    std::size_t scored_time(std::size_t i) const;

private:
    Eigen::Index window_size_;
    WindowMode mode_;
    Eigen::Index num_series_ = 0;
    std::vector<Eigen::MatrixXd> inputs_;
    std::vector<Eigen::VectorXd> targets_;
    std::vector<std::size_t> anchors_;
};

WindowBatch make_windows(const TimeSeriesSet& data, Eigen::Index w, WindowMode mode);

/// Half-open interval [start, end) of timestamps.
struct Range {
    std::size_t start = 0;
    std::size_t end = 0;

    std::size_t length() const { return end - start; }
    bool operator==(const Range&) const = default;
};

/// Sorted, non-overlapping, non-adjacent anomaly intervals over a horizon.
class LabelRanges {
public:
    LabelRanges() = default;

    /// Validates ordering, disjointness, non-adjacency and horizon bounds (DataError).
    static LabelRanges from_intervals(std::vector<Range> ranges, std::size_t horizon);

    const std::vector<Range>& ranges() const { return ranges_; }
    std::size_t horizon() const { return horizon_; }
    std::size_t size() const { return ranges_.size(); }
    bool empty() const { return ranges_.empty(); }

    bool operator==(const LabelRanges&) const = default;

private:
    std::vector<Range> ranges_;
    std::size_t horizon_ = 0;
};

LabelRanges extract_ranges(std::span<const std::uint8_t> labels);
Labels expand_to_points(const LabelRanges& ranges);

/// Per-series min-max scaling fit on one split and applied to others.
/// Constant series map to 0.
class MinMaxScaler {
public:
    static MinMaxScaler fit(const TimeSeriesSet& train);

    TimeSeriesSet apply(const TimeSeriesSet& data) const;

    const Eigen::VectorXd& minimum() const { return min_; }
    const Eigen::VectorXd& range() const { return range_; }

private:
    Eigen::VectorXd min_;
    Eigen::VectorXd range_;
};

} // namespace tsad
