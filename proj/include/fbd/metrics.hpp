#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fbd/errors.hpp"
#include "fbd/pipeline.hpp"

namespace fbd {

inline void check_same_shape(const Eigen::MatrixXd& y, const Eigen::MatrixXd& y_hat,
                             const char* op) {
    if (y.rows() != y_hat.rows() || y.cols() != y_hat.cols())
        throw DimensionMismatch(std::string(op) + ": shapes " + std::to_string(y.rows()) + "x" +
                                std::to_string(y.cols()) + " vs " + std::to_string(y_hat.rows()) +
                                "x" + std::to_string(y_hat.cols()));
}

/// Mean squared error over all entries.
inline double mse(const Eigen::MatrixXd& y, const Eigen::MatrixXd& y_hat) {
    check_same_shape(y, y_hat, "mse");
    return (y - y_hat).squaredNorm() / static_cast<double>(y.size());
}

/// Mean absolute error over all entries.
inline double mae(const Eigen::MatrixXd& y, const Eigen::MatrixXd& y_hat) {
    check_same_shape(y, y_hat, "mae");
    return (y - y_hat).cwiseAbs().sum() / static_cast<double>(y.size());
}

enum class Split { validation, test };

inline std::string to_string(Split s) { return s == Split::validation ? "validation" : "test"; }

inline Split split_from_string(const std::string& name) {
    if (name == "validation") return Split::validation;
    if (name == "test") return Split::test;
    throw InvalidConfig("unknown split \"" + name + "\"");
}

/// One (run, split) evaluation result.
struct MetricRecord {
    std::string dataset;
    Variant variant = Variant::backbone_only;
    long horizon = 0;
    std::uint64_t seed = 0;
    Split split = Split::test;
    double mse = 0.0;
    double mae = 0.0;
};

/// Multi-seed summary of one table cell; n_seeds == 0 marks a failed cell.
struct AggregateRow {
    std::string dataset;
    Variant variant = Variant::backbone_only;
    long horizon = 0;
    Split split = Split::test;
    double mean_mse = 0.0;
    double stderr_mse = 0.0;
    double mean_mae = 0.0;
    double stderr_mae = 0.0;
    long n_seeds = 0;
};

namespace detail {

struct MeanStderr {
    double mean = 0.0;
    double stderr = 0.0;
};

inline MeanStderr mean_stderr(const std::vector<double>& values) {
    const double n = static_cast<double>(values.size());
    MeanStderr out;
    for (double v : values) out.mean += v;
    out.mean /= n;
    if (values.size() > 1) {
        double ss = 0.0;
        for (double v : values) ss += (v - out.mean) * (v - out.mean);
        out.stderr = std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
    }
    return out;
}

inline std::string format_value(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

inline std::string format_cell(double mean, double stderr) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.3f ±%.3f", mean, stderr);
    return buf;
}

}  // namespace detail

/// Collapse the seeds of one (dataset, variant, horizon, split) group.
/// Mixed groups are a caller error.
inline AggregateRow aggregate_group(const std::vector<MetricRecord>& records) {
    if (records.empty()) throw EmptyResults("aggregate: empty record group");
    const MetricRecord& head = records.front();
    std::vector<double> mses, maes;
    for (const MetricRecord& r : records) {
        if (r.dataset != head.dataset || r.variant != head.variant ||
            r.horizon != head.horizon || r.split != head.split)
            throw InvalidConfig("aggregate: group mixes (dataset, variant, horizon, split) keys");
        mses.push_back(r.mse);
        maes.push_back(r.mae);
    }
    AggregateRow row;
    row.dataset = head.dataset;
    row.variant = head.variant;
    row.horizon = head.horizon;
    row.split = head.split;
    const auto m1 = detail::mean_stderr(mses);
    const auto m2 = detail::mean_stderr(maes);
    row.mean_mse = m1.mean;
    row.stderr_mse = m1.stderr;
    row.mean_mae = m2.mean;
    row.stderr_mae = m2.stderr;
    row.n_seeds = static_cast<long>(records.size());
    return row;
}

/// Group records by (dataset, split, horizon, variant) and aggregate each
/// group; output order is deterministic in that key order.
inline std::vector<AggregateRow> aggregate(const std::vector<MetricRecord>& records) {
    std::map<std::tuple<std::string, std::string, long, std::string>, std::vector<MetricRecord>> groups;
    for (const MetricRecord& r : records)
        groups[{r.dataset, to_string(r.split), r.horizon, to_string(r.variant)}].push_back(r);
    std::vector<AggregateRow> rows;
    rows.reserve(groups.size());
    for (const auto& [key, group] : groups) rows.push_back(aggregate_group(group));
    return rows;
}

/// dataset,variant,horizon,split,mean_mse,stderr_mse,mean_mae,stderr_mae,n_seeds
/// with failed cells (n_seeds 0) left empty.
inline void emit_table_csv(const std::vector<AggregateRow>& rows, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out << "dataset,variant,horizon,split,mean_mse,stderr_mse,mean_mae,stderr_mae,n_seeds\n";
    for (const AggregateRow& r : rows) {
        out << r.dataset << ',' << to_string(r.variant) << ',' << r.horizon << ','
            << to_string(r.split) << ',';
        if (r.n_seeds > 0)
            out << detail::format_value(r.mean_mse) << ',' << detail::format_value(r.stderr_mse)
                << ',' << detail::format_value(r.mean_mae) << ','
                << detail::format_value(r.stderr_mae);
        else
            out << ",,,";
        out << ',' << r.n_seeds << '\n';
    }
    if (!out) throw IoError("write failed for " + path);
}

/// One markdown table per (dataset, split): variants as columns, horizons as
/// rows, "mean ±stderr" MSE cells; failed cells render as FAILED.
inline std::string render_table_markdown(const std::vector<AggregateRow>& rows) {
    std::map<std::pair<std::string, std::string>,
             std::map<long, std::map<std::string, const AggregateRow*>>>
        tables;
    std::map<std::pair<std::string, std::string>, std::vector<std::string>> column_order;
    for (const AggregateRow& r : rows) {
        const auto key = std::make_pair(r.dataset, to_string(r.split));
        const std::string variant = to_string(r.variant);
        tables[key][r.horizon][variant] = &r;
        auto& cols = column_order[key];
        if (std::find(cols.begin(), cols.end(), variant) == cols.end()) cols.push_back(variant);
    }

    std::string md;
    for (const auto& [key, horizons] : tables) {
        const auto& cols = column_order[key];
        md += "## " + key.first + " (" + key.second + " MSE)\n\n";
        md += "| horizon |";
        for (const auto& c : cols) md += " " + c + " |";
        md += "\n|---|";
        for (std::size_t i = 0; i < cols.size(); ++i) md += "---|";
        md += "\n";
        for (const auto& [horizon, cells] : horizons) {
            md += "| " + std::to_string(horizon) + " |";
            for (const auto& c : cols) {
                const auto it = cells.find(c);
                if (it == cells.end())
                    md += "  |";
                else if (it->second->n_seeds == 0)
                    md += " FAILED |";
                else
                    md += " " + detail::format_cell(it->second->mean_mse, it->second->stderr_mse) +
                          " |";
            }
            md += "\n";
        }
        md += "\n";
    }
    return md;
}

inline void emit_table_markdown(const std::vector<AggregateRow>& rows, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out << render_table_markdown(rows);
    if (!out) throw IoError("write failed for " + path);
}

struct EvalMetrics {
    double mse = 0.0;
    double mae = 0.0;
};

/**
 * Inference-mode evaluation: one forward per window (blurring variants draw
 * one sample each from the given stream), per-window metrics averaged.
 */
inline EvalMetrics evaluate_windows(const PipelineModel& model, const Eigen::VectorXd& params,
                                    const std::vector<Window>& windows, RngStream& rng) {
    if (windows.empty()) throw EmptySplit("evaluate: no windows");
    EvalMetrics sums;
    for (const Window& w : windows) {
        const PipelineOutput out = model.forward(params, w, Mode::infer, rng);
        sums.mse += mse(w.future, out.y_d);
        sums.mae += mae(w.future, out.y_d);
    }
    sums.mse /= static_cast<double>(windows.size());
    sums.mae /= static_cast<double>(windows.size());
    return sums;
}

/**
 * Plot-point emission for one window: step,y_true,y_f,y_b,y_d rows over the
 * horizon (absolute step index, first target channel), with the y_b cell
 * empty when the variant has no blur stage.
 */
inline void emit_forecast_points(const PipelineModel& model, const Eigen::VectorXd& params,
                                 const Window& window, const std::string& path,
                                 const NoiseFn& noise) {
    const PipelineOutput out = model.forward(params, window, Mode::infer, noise);
    std::ofstream file(path, std::ios::binary);
    if (!file) throw IoError("cannot write " + path);
    file << "step,y_true,y_f,y_b,y_d\n";
    for (Eigen::Index i = 0; i < window.horizon(); ++i) {
        file << (window.cutoff + i) << ',' << detail::format_value(window.future(i, 0)) << ','
             << detail::format_value(out.y_f(i, 0)) << ',';
        if (out.has_blur) file << detail::format_value(out.y_b(i, 0));
        file << ',' << detail::format_value(out.y_d(i, 0)) << '\n';
    }
    if (!file) throw IoError("write failed for " + path);
}

inline void emit_forecast_points(const PipelineModel& model, const Eigen::VectorXd& params,
                                 const Window& window, const std::string& path, RngStream& rng) {
    emit_forecast_points(model, params, window, path, noise_from_rng(rng));
}

}  // namespace fbd
