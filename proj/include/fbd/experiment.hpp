#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "fbd/config.hpp"
#include "fbd/data.hpp"
#include "fbd/errors.hpp"
#include "fbd/metrics.hpp"
#include "fbd/sha256.hpp"
#include "fbd/trainer.hpp"

namespace fbd {

inline std::array<std::uint8_t, 32> config_hash(const ExperimentConfig& config) {
    return Sha256::digest(emit_config(config));
}

inline RawSeries build_series(const DatasetConfig& dataset) {
    if (dataset.source == "synth") return synth_multiscale(dataset.synth);
    return load_csv(dataset.csv_path, dataset.target_columns, dataset.feature_columns);
}

struct PreparedData {
    NormStats stats;
    WindowSplit split;
};

/// Normalizes with statistics from the train prefix, then windows and splits.
inline PreparedData prepare_windows(const ExperimentConfig& config, const RawSeries& series,
                                    long horizon) {
    PreparedData out;
    out.stats = zscore_fit(series, config.windowing.train_fraction);
    const RawSeries normalized = zscore_apply(series, out.stats);
    const std::vector<Window> windows =
        make_windows(normalized, config.windowing.lookback, horizon, config.windowing.stride);
    out.split = split_windows(windows, config.windowing.train_fraction,
                              config.windowing.val_fraction, config.windowing.test_fraction);
    return out;
}

namespace detail {

inline void require_writable(std::ofstream& file, const std::string& path) {
    if (!file) throw IoError("cannot write " + path);
}

}  // namespace detail

/// Writes a series in the CSV schema load_csv reads back: integer time column
/// first, then targets, then features.
inline void write_series_csv(const RawSeries& series, const std::string& path) {
    std::ofstream file(path, std::ios::binary);
    detail::require_writable(file, path);
    file << "time";
    for (const auto& name : series.target_names) file << ',' << name;
    for (const auto& name : series.feature_names) file << ',' << name;
    file << '\n';
    for (Eigen::Index i = 0; i < series.length(); ++i) {
        file << series.time_index[static_cast<std::size_t>(i)];
        for (Eigen::Index c = 0; c < series.target_dim(); ++c)
            file << ',' << detail::format_real(series.targets(i, c));
        for (Eigen::Index c = 0; c < series.feature_dim(); ++c)
            file << ',' << detail::format_real(series.features(i, c));
        file << '\n';
    }
    if (!file.flush()) throw IoError("cannot write " + path);
}

struct CellKey {
    std::string dataset;
    Variant variant = Variant::backbone_only;
    long horizon = 0;
    std::uint64_t seed = 0;
};

inline std::string cell_stem(const CellKey& key) {
    return key.dataset + "_" + to_string(key.variant) + "_h" + std::to_string(key.horizon) + "_s" +
           std::to_string(key.seed);
}

struct CellResult {
    CellKey key;
    Checkpoint checkpoint;
    MetricRecord validation;
    MetricRecord test;
};

/// Trains one (variant, horizon, seed) cell and scores it on the held-out
/// splits with a fixed evaluation stream.
inline CellResult run_cell(const ExperimentConfig& config, const PreparedData& data,
                           Variant variant, long horizon, std::uint64_t seed) {
    CellResult cell;
    cell.key = {config.dataset.name, variant, horizon, seed};

    const TrainConfig train_cfg = config.to_train_config(variant, seed);
    cell.checkpoint = fit(data.split, train_cfg);
    cell.checkpoint.config_hash = config_hash(config);

    const PipelineModel model = model_from_checkpoint(cell.checkpoint);
    auto score = [&](const std::vector<Window>& windows, Split split) {
        RngStream eval_rng(seed, streams::eval);
        const EvalMetrics m = evaluate_windows(model, cell.checkpoint.params, windows, eval_rng);
        MetricRecord record;
        record.dataset = config.dataset.name;
        record.variant = variant;
        record.horizon = horizon;
        record.seed = seed;
        record.split = split;
        record.mse = m.mse;
        record.mae = m.mae;
        return record;
    };
    cell.validation = score(data.split.validation, Split::validation);
    cell.test = score(data.split.test, Split::test);
    return cell;
}

inline void write_checkpoint_files(const std::string& out_dir, const CellResult& cell) {
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(out_dir) / "checkpoints");
    fs::create_directories(fs::path(out_dir) / "history");
    const std::string stem = cell_stem(cell.key);
    save_checkpoint(cell.checkpoint,
                    (fs::path(out_dir) / "checkpoints" / (stem + ".ckpt")).string());

    const std::string history_path = (fs::path(out_dir) / "history" / (stem + ".csv")).string();
    std::ofstream file(history_path, std::ios::binary);
    detail::require_writable(file, history_path);
    file << "epoch,train_mse,val_mse\n";
    for (std::size_t e = 0; e < cell.checkpoint.history.size(); ++e) {
        file << (e + 1) << ',' << detail::format_value(cell.checkpoint.history[e].train_mse) << ','
             << detail::format_value(cell.checkpoint.history[e].val_mse) << '\n';
    }
    if (!file.flush()) throw IoError("cannot write " + history_path);
}

inline void write_records_csv(const std::vector<MetricRecord>& records, const std::string& path) {
    std::ofstream file(path, std::ios::binary);
    detail::require_writable(file, path);
    file << "dataset,variant,horizon,seed,split,mse,mae\n";
    for (const auto& r : records) {
        file << r.dataset << ',' << to_string(r.variant) << ',' << r.horizon << ',' << r.seed << ','
             << to_string(r.split) << ',' << detail::format_value(r.mse) << ','
             << detail::format_value(r.mae) << '\n';
    }
    if (!file.flush()) throw IoError("cannot write " + path);
}

inline std::vector<MetricRecord> read_records_csv(const std::string& path) {
    std::ifstream file(path, std::ios::binary);
    if (!file) throw IoError("cannot read " + path);
    std::string line;
    if (!std::getline(file, line)) throw EmptyFile(path);
    std::vector<MetricRecord> records;
    long row = 1;
    while (std::getline(file, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const std::vector<std::string> cells = detail::split_csv_line(line);
        if (cells.size() != 7)
            throw IoError(path + ": row " + std::to_string(row) + " has " +
                          std::to_string(cells.size()) + " columns, expected 7");
        MetricRecord r;
        r.dataset = cells[0];
        r.variant = variant_from_string(cells[1]);
        long long horizon = 0, seed = 0;
        if (!detail::parse_long(cells[2], horizon)) throw NonNumericCell(row, "horizon");
        if (!detail::parse_long(cells[3], seed)) throw NonNumericCell(row, "seed");
        r.horizon = static_cast<long>(horizon);
        r.seed = static_cast<std::uint64_t>(seed);
        r.split = split_from_string(cells[4]);
        if (!detail::parse_double(cells[5], r.mse)) throw NonNumericCell(row, "mse");
        if (!detail::parse_double(cells[6], r.mae)) throw NonNumericCell(row, "mae");
        records.push_back(std::move(r));
        ++row;
    }
    return records;
}

struct AblationOutcome {
    std::vector<CellResult> cells;
    std::vector<MetricRecord> records;
    std::vector<std::string> failures;  // one "<stem>: <message>" per failed cell
};

namespace detail {

struct CellTask {
    Variant variant;
    long horizon = 0;
    std::uint64_t seed = 0;
    std::size_t data_index = 0;
};

}  // namespace detail

/**
 * Runs the variants x horizons x seeds grid. Cells are independent; `workers`
 * threads pull tasks from a shared counter and fill result slots, so output
 * order matches the deterministic task order regardless of scheduling. A
 * failed cell is recorded and the remaining cells still run.
 */
inline AblationOutcome run_ablation(const ExperimentConfig& config, const RawSeries& series,
                                    int workers = 1) {
    std::vector<std::optional<PreparedData>> prepared(config.windowing.horizons.size());
    std::vector<std::string> prep_errors(config.windowing.horizons.size());
    for (std::size_t h = 0; h < config.windowing.horizons.size(); ++h) {
        try {
            prepared[h] = prepare_windows(config, series, config.windowing.horizons[h]);
        } catch (const std::exception& e) {
            prep_errors[h] = e.what();
        }
    }

    std::vector<detail::CellTask> tasks;
    for (Variant variant : config.model.variants)
        for (std::size_t h = 0; h < config.windowing.horizons.size(); ++h)
            for (std::uint64_t seed : config.run.seeds)
                tasks.push_back({variant, config.windowing.horizons[h], seed, h});

    std::vector<std::optional<CellResult>> slots(tasks.size());
    std::vector<std::string> errors(tasks.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= tasks.size()) return;
            const auto& t = tasks[i];
            if (!prepared[t.data_index]) {
                errors[i] = prep_errors[t.data_index];
                continue;
            }
            try {
                slots[i] = run_cell(config, *prepared[t.data_index], t.variant, t.horizon, t.seed);
            } catch (const std::exception& e) {
                errors[i] = e.what();
            }
        }
    };
    const int n_threads = std::max(1, std::min<int>(workers, static_cast<int>(tasks.size())));
    if (n_threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(static_cast<std::size_t>(n_threads));
        for (int i = 0; i < n_threads; ++i) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    AblationOutcome outcome;
    for (std::size_t i = 0; i < tasks.size(); ++i) {
        if (slots[i]) {
            outcome.cells.push_back(std::move(*slots[i]));
            outcome.records.push_back(outcome.cells.back().validation);
            outcome.records.push_back(outcome.cells.back().test);
        } else {
            const CellKey key{config.dataset.name, tasks[i].variant, tasks[i].horizon,
                              tasks[i].seed};
            outcome.failures.push_back(cell_stem(key) + ": " + errors[i]);
        }
    }
    return outcome;
}

namespace detail {

/// Test-split table rows; a (variant, horizon) group with any failed seed is
/// reported as failed rather than averaged over a partial seed set.
inline std::vector<AggregateRow> aggregate_with_failures(const ExperimentConfig& config,
                                                         const AblationOutcome& outcome) {
    std::vector<MetricRecord> usable;
    for (const auto& r : outcome.records)
        if (r.split == Split::test) usable.push_back(r);
    std::vector<AggregateRow> failed_rows;
    for (Variant variant : config.model.variants) {
        for (long horizon : config.windowing.horizons) {
            const std::string stem_prefix =
                config.dataset.name + "_" + to_string(variant) + "_h" + std::to_string(horizon) + "_s";
            const bool failed = std::any_of(
                outcome.failures.begin(), outcome.failures.end(),
                [&](const std::string& f) { return f.rfind(stem_prefix, 0) == 0; });
            if (!failed) continue;
            std::erase_if(usable, [&](const MetricRecord& r) {
                return r.variant == variant && r.horizon == horizon;
            });
            AggregateRow row;
            row.dataset = config.dataset.name;
            row.variant = variant;
            row.horizon = horizon;
            row.split = Split::test;
            row.n_seeds = 0;
            failed_rows.push_back(row);
        }
    }
    std::vector<AggregateRow> rows = aggregate(usable);
    rows.insert(rows.end(), failed_rows.begin(), failed_rows.end());
    std::sort(rows.begin(), rows.end(), [](const AggregateRow& a, const AggregateRow& b) {
        return std::tie(a.dataset, a.split, a.horizon, a.variant) <
               std::tie(b.dataset, b.split, b.horizon, b.variant);
    });
    return rows;
}

}  // namespace detail

inline void write_ablation_outputs(const ExperimentConfig& config, const AblationOutcome& outcome,
                                   const std::string& out_dir) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    write_config(config, (fs::path(out_dir) / "config.txt").string());
    for (const auto& cell : outcome.cells) write_checkpoint_files(out_dir, cell);
    write_records_csv(outcome.records, (fs::path(out_dir) / "records.csv").string());

    const std::vector<AggregateRow> rows = detail::aggregate_with_failures(config, outcome);
    emit_table_csv(rows, (fs::path(out_dir) / "aggregate.csv").string());
    emit_table_markdown(rows, (fs::path(out_dir) / "tables.md").string());

    if (!outcome.failures.empty()) {
        const std::string path = (fs::path(out_dir) / "failures.txt").string();
        std::ofstream file(path, std::ios::binary);
        detail::require_writable(file, path);
        for (const auto& f : outcome.failures) file << f << '\n';
        if (!file.flush()) throw IoError("cannot write " + path);
    }
}

struct ReportPaths {
    std::string summary;
    std::string forecast_best;
    std::string forecast_worst;
};

/**
 * Rebuilds tables from records.csv and, when a trained GP-blur checkpoint is
 * present, emits forecast points for its best and worst test windows.
 */
inline ReportPaths generate_report(const std::string& results_dir) {
    namespace fs = std::filesystem;
    const fs::path dir(results_dir);
    const fs::path records_path = dir / "records.csv";
    if (!fs::exists(records_path)) throw EmptyResults(results_dir + ": no records.csv");
    const std::vector<MetricRecord> records = read_records_csv(records_path.string());
    if (records.empty()) throw EmptyResults(results_dir + ": records.csv has no rows");

    ReportPaths paths;
    paths.summary = (dir / "report.md").string();
    emit_table_markdown(aggregate(records), paths.summary);

    // Best/worst forecast emission wants the strongest GP-blur cell: the
    // test record with the lowest MSE whose checkpoint file exists.
    const MetricRecord* best_cell = nullptr;
    for (const auto& r : records) {
        if (r.variant != Variant::gp_blur || r.split != Split::test) continue;
        if (!best_cell || r.mse < best_cell->mse) best_cell = &r;
    }
    const fs::path config_path = dir / "config.txt";
    if (!best_cell || !fs::exists(config_path)) return paths;
    const CellKey key{best_cell->dataset, best_cell->variant, best_cell->horizon, best_cell->seed};
    const fs::path ckpt_path = dir / "checkpoints" / (cell_stem(key) + ".ckpt");
    if (!fs::exists(ckpt_path)) return paths;

    const ExperimentConfig config = load_config(config_path.string());
    const RawSeries series = build_series(config.dataset);
    const PreparedData data = prepare_windows(config, series, best_cell->horizon);
    const Checkpoint ckpt = load_checkpoint(ckpt_path.string());
    const PipelineModel model = model_from_checkpoint(ckpt);

    std::size_t best_i = 0, worst_i = 0;
    double best_mse = std::numeric_limits<double>::infinity(), worst_mse = -1.0;
    for (std::size_t i = 0; i < data.split.test.size(); ++i) {
        RngStream rng(ckpt.seed, streams::eval);
        const EvalMetrics m =
            evaluate_windows(model, ckpt.params, {data.split.test[i]}, rng);
        if (m.mse < best_mse) best_mse = m.mse, best_i = i;
        if (m.mse > worst_mse) worst_mse = m.mse, worst_i = i;
    }
    if (data.split.test.empty()) return paths;
    paths.forecast_best = (dir / "forecast_best.csv").string();
    paths.forecast_worst = (dir / "forecast_worst.csv").string();
    RngStream rng_best(ckpt.seed, streams::eval), rng_worst(ckpt.seed, streams::eval);
    emit_forecast_points(model, ckpt.params, data.split.test[best_i], paths.forecast_best,
                         rng_best);
    emit_forecast_points(model, ckpt.params, data.split.test[worst_i], paths.forecast_worst,
                         rng_worst);
    return paths;
}

}  // namespace fbd
