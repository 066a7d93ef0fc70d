#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fbd/errors.hpp"
#include "fbd/rng.hpp"

namespace fbd {

/**
 * A regularly sampled multivariate series: per-step covariates and one or
 * more target channels. time_index is 0,1,2,... after ingestion; loaders
 * reject gapped input.
 */
struct RawSeries {
    std::vector<long> time_index;
    Eigen::MatrixXd features;  // L x d_x
    Eigen::MatrixXd targets;   // L x d_y, d_y >= 1
    std::vector<std::string> feature_names;
    std::vector<std::string> target_names;

    long length() const { return static_cast<long>(targets.rows()); }
    Eigen::Index feature_dim() const { return features.cols(); }
    Eigen::Index target_dim() const { return targets.cols(); }
};

/// Per-channel standardization statistics, ordered [features | targets].
struct NormStats {
    Eigen::VectorXd mean;
    Eigen::VectorXd std;  // >= 1e-8; constant channels are replaced by 1

    Eigen::Index channels() const { return mean.size(); }
};

/**
 * One training/eval sample. history covers steps [cutoff-lookback, cutoff)
 * with columns [features | targets]; future covers [cutoff, cutoff+horizon)
 * targets; future_features carries the known covariates over the horizon.
 */
struct Window {
    Eigen::MatrixXd history;          // lookback x (d_x + d_y)
    Eigen::MatrixXd future;           // horizon x d_y
    Eigen::MatrixXd future_features;  // horizon x d_x
    long cutoff = 0;

    Eigen::Index lookback() const { return history.rows(); }
    Eigen::Index horizon() const { return future.rows(); }
    Eigen::Index feature_dim() const { return future_features.cols(); }
    Eigen::Index target_dim() const { return future.cols(); }
};

struct WindowSplit {
    std::vector<Window> train;
    std::vector<Window> validation;
    std::vector<Window> test;
};

/// Two sinusoids (slow + fast) plus AR(1) noise; the desk-scale stand-in
/// for the benchmark series.
struct SynthConfig {
    long length = 3000;
    double coarse_period = 96.0;
    double coarse_amp = 1.0;
    double fine_period = 8.0;
    double fine_amp = 0.3;
    double ar_coeff = 0.5;   // in [0, 1)
    double ar_std = 0.05;
    std::uint64_t seed = 7;
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    bool quoted = false;
    for (char ch : line) {
        if (ch == '"') {
            quoted = !quoted;
        } else if (ch == ',' && !quoted) {
            cells.push_back(cell);
            cell.clear();
        } else if (ch != '\r') {
            cell.push_back(ch);
        }
    }
    cells.push_back(cell);
    return cells;
}

inline std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t");
    if (begin == std::string::npos) return "";
    const auto end = s.find_last_not_of(" \t");
    return s.substr(begin, end - begin + 1);
}

inline bool parse_double(const std::string& text, double& out) {
    const std::string t = trim(text);
    if (t.empty()) return false;
    char* end = nullptr;
    out = std::strtod(t.c_str(), &end);
    return end == t.c_str() + t.size() && std::isfinite(out);
}

inline bool parse_long(const std::string& text, long long& out) {
    const std::string t = trim(text);
    if (t.empty()) return false;
    char* end = nullptr;
    out = std::strtoll(t.c_str(), &end, 10);
    return end == t.c_str() + t.size();
}

// days since 1970-01-01 (Howard Hinnant's days_from_civil)
inline long long days_from_civil(long long y, unsigned m, unsigned d) {
    y -= m <= 2;
    const long long era = (y >= 0 ? y : y - 399) / 400;
    const unsigned yoe = static_cast<unsigned>(y - era * 400);
    const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
    const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return era * 146097 + static_cast<long long>(doe) - 719468;
}

/// Accepts "YYYY-MM-DD", optionally followed by "T" or " " and "HH:MM[:SS]",
/// with an optional trailing "Z". Returns epoch seconds (UTC).
inline bool parse_iso8601(const std::string& text, long long& out_seconds) {
    std::string t = trim(text);
    if (!t.empty() && t.back() == 'Z') t.pop_back();
    int year, month, day, hour = 0, minute = 0, second = 0;
    int consumed = 0;
    if (std::sscanf(t.c_str(), "%d-%d-%d%n", &year, &month, &day, &consumed) != 3) return false;
    std::string rest = t.substr(consumed);
    if (!rest.empty()) {
        if (rest[0] != 'T' && rest[0] != ' ') return false;
        rest = rest.substr(1);
        const int fields = std::sscanf(rest.c_str(), "%d:%d:%d%n", &hour, &minute, &second, &consumed);
        if (fields < 2) return false;
        if (fields == 2) {
            if (std::sscanf(rest.c_str(), "%d:%d%n", &hour, &minute, &consumed) != 2) return false;
            second = 0;
        }
        if (static_cast<std::size_t>(consumed) != rest.size()) return false;
    }
    if (month < 1 || month > 12 || day < 1 || day > 31) return false;
    if (hour < 0 || hour > 23 || minute < 0 || minute > 59 || second < 0 || second > 60) return false;
    out_seconds = days_from_civil(year, static_cast<unsigned>(month), static_cast<unsigned>(day)) * 86400ll +
                  hour * 3600ll + minute * 60ll + second;
    return true;
}

}  // namespace detail

/**
 * Load a CSV series. The first column is the time axis: either integers or
 * ISO-8601 timestamps, required to be strictly increasing with a uniform
 * stride (gaps are rejected); it is converted to a 0-based step index.
 * Remaining columns are picked out by name.
 */
inline RawSeries load_csv(const std::string& path, const std::vector<std::string>& target_cols,
                          const std::vector<std::string>& feature_cols) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open CSV file: " + path);

    std::string header_line;
    if (!std::getline(in, header_line)) throw EmptyFile("empty CSV file: " + path);
    const std::vector<std::string> header = detail::split_csv_line(header_line);

    auto column_of = [&](const std::string& name) {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (detail::trim(header[i]) == name) return static_cast<long>(i);
        throw MissingColumn("column \"" + name + "\" not found in " + path);
    };

    std::vector<long> target_idx, feature_idx;
    for (const auto& c : target_cols) target_idx.push_back(column_of(c));
    for (const auto& c : feature_cols) feature_idx.push_back(column_of(c));
    if (target_idx.empty()) throw MissingColumn("no target columns configured for " + path);

    std::vector<long long> raw_time;
    std::vector<std::vector<double>> target_rows, feature_rows;
    std::string line;
    long data_row = 0;
    while (std::getline(in, line)) {
        if (detail::trim(line).empty()) continue;
        ++data_row;
        const std::vector<std::string> cells = detail::split_csv_line(line);
        if (cells.size() < header.size())
            throw NonNumericCell(data_row, header.empty() ? "?" : header.back());

        long long t;
        if (!detail::parse_long(cells[0], t) && !detail::parse_iso8601(cells[0], t))
            throw NonNumericCell(data_row, detail::trim(header[0]));
        raw_time.push_back(t);

        auto read_cells = [&](const std::vector<long>& idx, std::vector<double>& out) {
            out.reserve(idx.size());
            for (long col : idx) {
                double v;
                if (!detail::parse_double(cells[static_cast<std::size_t>(col)], v))
                    throw NonNumericCell(data_row, detail::trim(header[static_cast<std::size_t>(col)]));
                out.push_back(v);
            }
        };
        std::vector<double> trow, frow;
        read_cells(target_idx, trow);
        read_cells(feature_idx, frow);
        target_rows.push_back(std::move(trow));
        feature_rows.push_back(std::move(frow));
    }
    if (raw_time.empty()) throw EmptyFile("CSV has a header but no data rows: " + path);

    // Uniform stride requirement; any constant positive stride maps to unit steps.
    const long n = static_cast<long>(raw_time.size());
    if (n > 1) {
        const long long stride = raw_time[1] - raw_time[0];
        if (stride <= 0) throw InvalidConfig("time column is not strictly increasing in " + path);
        for (long i = 1; i < n; ++i)
            if (raw_time[static_cast<std::size_t>(i)] - raw_time[static_cast<std::size_t>(i - 1)] != stride)
                throw InvalidConfig("time column has gaps or irregular sampling at data row " +
                                    std::to_string(i + 1) + " in " + path);
    }

    RawSeries series;
    series.time_index.resize(static_cast<std::size_t>(n));
    for (long i = 0; i < n; ++i) series.time_index[static_cast<std::size_t>(i)] = i;
    series.targets.resize(n, static_cast<Eigen::Index>(target_idx.size()));
    series.features.resize(n, static_cast<Eigen::Index>(feature_idx.size()));
    for (long i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < target_idx.size(); ++j)
            series.targets(i, static_cast<Eigen::Index>(j)) = target_rows[static_cast<std::size_t>(i)][j];
        for (std::size_t j = 0; j < feature_idx.size(); ++j)
            series.features(i, static_cast<Eigen::Index>(j)) = feature_rows[static_cast<std::size_t>(i)][j];
    }
    series.target_names = target_cols;
    series.feature_names = feature_cols;
    return series;
}

/**
 * Deterministic synthetic series: slow sinusoid + fast sinusoid + AR(1)
 * noise, with sin/cos step encodings at both periods as covariates.
 */
inline RawSeries synth_multiscale(const SynthConfig& cfg) {
    if (cfg.length < 1) throw InvalidConfig("synth: length must be >= 1");
    if (cfg.coarse_period <= 0 || cfg.fine_period <= 0)
        throw InvalidConfig("synth: periods must be positive");
    if (cfg.fine_period >= cfg.coarse_period)
        throw InvalidConfig("synth: fine_period must be smaller than coarse_period");
    if (cfg.ar_coeff < 0.0 || cfg.ar_coeff >= 1.0)
        throw InvalidConfig("synth: ar_coeff must lie in [0, 1)");
    if (cfg.ar_std < 0.0) throw InvalidConfig("synth: ar_std must be non-negative");

    RawSeries series;
    const long n = cfg.length;
    series.time_index.resize(static_cast<std::size_t>(n));
    series.targets.resize(n, 1);
    series.features.resize(n, 4);
    series.target_names = {"y"};
    series.feature_names = {"sin_coarse", "cos_coarse", "sin_fine", "cos_fine"};

    RngStream rng(cfg.seed, 0);
    double ar = 0.0;
    for (long t = 0; t < n; ++t) {
        series.time_index[static_cast<std::size_t>(t)] = t;
        const double wc = 2.0 * M_PI * static_cast<double>(t) / cfg.coarse_period;
        const double wf = 2.0 * M_PI * static_cast<double>(t) / cfg.fine_period;
        ar = cfg.ar_coeff * ar + cfg.ar_std * rng.normal();
        series.targets(t, 0) = cfg.coarse_amp * std::sin(wc) + cfg.fine_amp * std::sin(wf) + ar;
        series.features(t, 0) = std::sin(wc);
        series.features(t, 1) = std::cos(wc);
        series.features(t, 2) = std::sin(wf);
        series.features(t, 3) = std::cos(wf);
    }
    return series;
}

/**
 * Per-channel mean/std over the first floor(train_fraction * L) steps only,
 * so no statistics leak from validation/test. Population std; channels with
 * std below 1e-8 get std 1.
 */
inline NormStats zscore_fit(const RawSeries& series, double train_fraction) {
    if (train_fraction <= 0.0 || train_fraction > 1.0)
        throw InvalidConfig("zscore_fit: train_fraction must lie in (0, 1]");
    const long prefix = static_cast<long>(std::floor(train_fraction * static_cast<double>(series.length())));
    if (prefix < 1) throw InvalidConfig("zscore_fit: training prefix is empty");

    const Eigen::Index dx = series.feature_dim();
    const Eigen::Index dy = series.target_dim();
    NormStats stats;
    stats.mean.resize(dx + dy);
    stats.std.resize(dx + dy);

    auto fit_channel = [&](const Eigen::VectorXd& column, Eigen::Index out) {
        const auto head = column.head(prefix);
        const double mean = head.mean();
        const double var = (head.array() - mean).square().sum() / static_cast<double>(prefix);
        double std = std::sqrt(var);
        if (std < 1e-8) std = 1.0;
        stats.mean(out) = mean;
        stats.std(out) = std;
    };
    for (Eigen::Index c = 0; c < dx; ++c) fit_channel(series.features.col(c), c);
    for (Eigen::Index c = 0; c < dy; ++c) fit_channel(series.targets.col(c), dx + c);
    return stats;
}

inline void check_channels(const RawSeries& series, const NormStats& stats) {
    if (stats.channels() != series.feature_dim() + series.target_dim())
        throw ChannelMismatch("zscore: series has " +
                              std::to_string(series.feature_dim() + series.target_dim()) +
                              " channels, stats have " + std::to_string(stats.channels()));
}

inline RawSeries zscore_apply(const RawSeries& series, const NormStats& stats) {
    check_channels(series, stats);
    RawSeries out = series;
    const Eigen::Index dx = series.feature_dim();
    for (Eigen::Index c = 0; c < dx; ++c)
        out.features.col(c) = (series.features.col(c).array() - stats.mean(c)) / stats.std(c);
    for (Eigen::Index c = 0; c < series.target_dim(); ++c)
        out.targets.col(c) = (series.targets.col(c).array() - stats.mean(dx + c)) / stats.std(dx + c);
    return out;
}

inline RawSeries zscore_invert(const RawSeries& series, const NormStats& stats) {
    check_channels(series, stats);
    RawSeries out = series;
    const Eigen::Index dx = series.feature_dim();
    for (Eigen::Index c = 0; c < dx; ++c)
        out.features.col(c) = series.features.col(c).array() * stats.std(c) + stats.mean(c);
    for (Eigen::Index c = 0; c < series.target_dim(); ++c)
        out.targets.col(c) = series.targets.col(c).array() * stats.std(dx + c) + stats.mean(dx + c);
    return out;
}

/**
 * Sliding windows: floor((L - lookback - horizon) / stride) + 1 of them,
 * window i cutting off at lookback + i*stride.
 */
inline std::vector<Window> make_windows(const RawSeries& series, long lookback, long horizon,
                                        long stride = 1) {
    if (lookback < 1 || horizon < 1) throw InvalidConfig("make_windows: lookback and horizon must be >= 1");
    if (stride < 1) throw InvalidConfig("make_windows: stride must be >= 1");
    const long length = series.length();
    if (length < lookback + horizon)
        throw SeriesTooShort("make_windows: series length " + std::to_string(length) +
                             " < lookback + horizon = " + std::to_string(lookback + horizon));

    const long count = (length - lookback - horizon) / stride + 1;
    const Eigen::Index dx = series.feature_dim();
    const Eigen::Index dy = series.target_dim();

    std::vector<Window> windows;
    windows.reserve(static_cast<std::size_t>(count));
    for (long i = 0; i < count; ++i) {
        const long cutoff = lookback + i * stride;
        Window w;
        w.cutoff = cutoff;
        w.history.resize(lookback, dx + dy);
        w.history.leftCols(dx) = series.features.middleRows(cutoff - lookback, lookback);
        w.history.rightCols(dy) = series.targets.middleRows(cutoff - lookback, lookback);
        w.future = series.targets.middleRows(cutoff, horizon);
        w.future_features = series.features.middleRows(cutoff, horizon);
        windows.push_back(std::move(w));
    }
    return windows;
}

/**
 * Contiguous-in-time partition: earliest windows train, latest test. Counts
 * follow the fractions with floor rounding (train and validation floored,
 * remainder to test).
 */
inline WindowSplit split_windows(std::vector<Window> windows,
                                 double train_fraction = 0.8, double val_fraction = 0.1,
                                 double test_fraction = 0.1) {
    const double sum = train_fraction + val_fraction + test_fraction;
    if (std::abs(sum - 1.0) > 1e-9)
        throw BadFractions("split_windows: fractions sum to " + std::to_string(sum) + ", expected 1");
    if (train_fraction < 0 || val_fraction < 0 || test_fraction < 0)
        throw BadFractions("split_windows: fractions must be non-negative");

    const long n = static_cast<long>(windows.size());
    const long n_train = static_cast<long>(std::floor(train_fraction * static_cast<double>(n)));
    const long n_val = static_cast<long>(std::floor(val_fraction * static_cast<double>(n)));

    WindowSplit split;
    split.train.assign(windows.begin(), windows.begin() + n_train);
    split.validation.assign(windows.begin() + n_train, windows.begin() + n_train + n_val);
    split.test.assign(windows.begin() + n_train + n_val, windows.end());
    return split;
}

}  // namespace fbd
