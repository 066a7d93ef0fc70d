#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fbd/fbd.hpp"

namespace {

fbd::ExperimentConfig load_or_default(const std::string& path) {
    if (path.empty()) return fbd::ExperimentConfig{};
    return fbd::load_config(path);
}

void check_synth_length(const fbd::ExperimentConfig& config) {
    if (config.dataset.source != "synth") return;
    const long max_horizon =
        *std::max_element(config.windowing.horizons.begin(), config.windowing.horizons.end());
    if (config.dataset.synth.length < config.windowing.lookback + max_horizon)
        throw fbd::InvalidConfig(
            "config: length " + std::to_string(config.dataset.synth.length) +
            " is below lookback + horizon = " +
            std::to_string(config.windowing.lookback + max_horizon) +
            "; no window fits");
}

int cmd_synth(const fbd::ExperimentConfig& config, const std::string& out_dir) {
    check_synth_length(config);
    const fbd::RawSeries series = fbd::build_series(config.dataset);
    std::filesystem::create_directories(out_dir);
    const std::string path =
        (std::filesystem::path(out_dir) / (config.dataset.name + ".csv")).string();
    fbd::write_series_csv(series, path);
    std::printf("wrote %s (%lld rows)\n", path.c_str(),
                static_cast<long long>(series.length()));
    return 0;
}

int cmd_train(const fbd::ExperimentConfig& config, const std::string& variant_name, long horizon,
              long long seed, const std::string& out_dir) {
    const fbd::Variant variant = variant_name.empty() ? config.model.variants.front()
                                                      : fbd::variant_from_string(variant_name);
    const long tau = horizon > 0 ? horizon : config.windowing.horizons.front();
    const std::uint64_t s =
        seed >= 0 ? static_cast<std::uint64_t>(seed) : config.run.seeds.front();

    const fbd::RawSeries series = fbd::build_series(config.dataset);
    const fbd::PreparedData data = fbd::prepare_windows(config, series, tau);
    const fbd::CellResult cell = fbd::run_cell(config, data, variant, tau, s);
    std::filesystem::create_directories(out_dir);
    fbd::write_checkpoint_files(out_dir, cell);
    std::printf("%s: val mse %.6g, test mse %.6g, best epoch %lld\n",
                fbd::cell_stem(cell.key).c_str(), cell.validation.mse, cell.test.mse,
                static_cast<long long>(cell.checkpoint.best_epoch));
    return 0;
}

int cmd_ablate(const fbd::ExperimentConfig& config, const std::string& out_dir, int workers) {
    const fbd::RawSeries series = fbd::build_series(config.dataset);
    const fbd::AblationOutcome outcome = fbd::run_ablation(config, series, workers);
    fbd::write_ablation_outputs(config, outcome, out_dir);
    std::printf("wrote %s (%zu cells, %zu failed)\n",
                (std::filesystem::path(out_dir) / "tables.md").string().c_str(),
                outcome.cells.size() + outcome.failures.size(), outcome.failures.size());
    for (const auto& failure : outcome.failures)
        std::fprintf(stderr, "failed cell %s\n", failure.c_str());
    return outcome.failures.empty() ? 0 : 1;
}

int cmd_gradcheck(std::uint64_t seed) {
    const fbd::GradCheckDims dims;
    std::printf("toy dims: lookback=%lld horizon=%lld inducing=%lld\n",
                static_cast<long long>(dims.lookback), static_cast<long long>(dims.horizon),
                static_cast<long long>(dims.inducing));
    const std::vector<fbd::GradCheckResult> results = fbd::run_gradcheck(dims, seed);
    int failed = 0;
    for (const auto& r : results) {
        std::printf("%-24s max rel err %.3e  tol %.0e  %s\n", r.component.c_str(), r.max_rel_err,
                    r.tolerance, r.pass ? "pass" : "FAIL");
        if (!r.pass) ++failed;
    }
    std::printf("gradcheck: %zu/%zu checks passed\n", results.size() - failed, results.size());
    return failed == 0 ? 0 : 1;
}

int cmd_report(const std::string& results_dir) {
    const fbd::ReportPaths paths = fbd::generate_report(results_dir);
    std::printf("wrote %s\n", paths.summary.c_str());
    if (!paths.forecast_best.empty())
        std::printf("wrote %s\nwrote %s\n", paths.forecast_best.c_str(),
                    paths.forecast_worst.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"forecast-blur-denoise benchmark harness"};
    app.require_subcommand(1);

    std::string config_path, variant_name, out_dir = "results";
    long horizon = 0;
    long long seed = -1;
    int workers = 1;
    std::uint64_t gradcheck_seed = 42;
    std::string results_dir;

    auto* synth = app.add_subcommand("synth", "generate the configured synthetic series as CSV");
    synth->add_option("--config", config_path, "experiment config file");
    synth->add_option("--out", out_dir, "output directory");

    auto* train = app.add_subcommand("train", "train one variant/horizon/seed cell");
    train->add_option("--config", config_path, "experiment config file");
    train->add_option("--variant", variant_name, "pipeline variant name");
    train->add_option("--horizon", horizon, "forecast horizon");
    train->add_option("--seed", seed, "training seed");
    train->add_option("--out", out_dir, "output directory");

    auto* ablate = app.add_subcommand("ablate", "run the variants x horizons x seeds grid");
    ablate->add_option("--config", config_path, "experiment config file");
    ablate->add_option("--out", out_dir, "output directory");
    ablate->add_option("--workers", workers, "parallel training workers");

    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient verification");
    gradcheck->add_option("--seed", gradcheck_seed, "probe seed");

    auto* report = app.add_subcommand("report", "aggregate records and emit forecast points");
    report->add_option("--out", results_dir, "results directory to scan")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*synth) return cmd_synth(load_or_default(config_path), out_dir);
        if (*train)
            return cmd_train(load_or_default(config_path), variant_name, horizon, seed, out_dir);
        if (*ablate) return cmd_ablate(load_or_default(config_path), out_dir, workers);
        if (*gradcheck) return cmd_gradcheck(gradcheck_seed);
        if (*report) return cmd_report(results_dir);
    } catch (const fbd::Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return e.exit_code();
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
