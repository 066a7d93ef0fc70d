#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "fbd/data.hpp"
#include "fbd/errors.hpp"
#include "fbd/pipeline.hpp"
#include "fbd/trainer.hpp"

namespace fbd {

struct DatasetConfig {
    std::string name = "synth";
    std::string source = "synth";  // synth | csv
    std::string csv_path;
    std::vector<std::string> target_columns = {"y"};
    std::vector<std::string> feature_columns = {"sin_coarse", "cos_coarse", "sin_fine", "cos_fine"};
    SynthConfig synth;
};

struct WindowingConfig {
    long lookback = 192;
    std::vector<long> horizons = {24, 48, 72, 96};
    long stride = 1;
    double train_fraction = 0.8;
    double val_fraction = 0.1;
    double test_fraction = 0.1;
};

struct ModelConfig {
    std::vector<Variant> variants = {Variant::backbone_only, Variant::gp_blur};
    BackboneSpec backbone;
};

struct TrainingConfig {
    double lambda = 0.001;
    long batch_size = 256;
    long epochs = 50;
    long warmup_steps = 1000;
    double base_scale = 1.0;
    CheckpointSelection selection = CheckpointSelection::best_validation;
};

struct RunConfig {
    std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
    std::string out_dir = "results";
    long workers = 1;
};

struct ExperimentConfig {
    DatasetConfig dataset;
    WindowingConfig windowing;
    ModelConfig model;
    GpInit gp;
    TrainingConfig training;
    RunConfig run;

    void validate() const {
        if (dataset.source != "synth" && dataset.source != "csv")
            throw InvalidConfig("dataset.source must be synth or csv");
        if (dataset.source == "csv") {
            if (dataset.csv_path.empty()) throw InvalidConfig("dataset.csv_path is required for csv source");
            if (!std::filesystem::exists(dataset.csv_path))
                throw InvalidConfig("dataset.csv_path does not exist: " + dataset.csv_path);
        }
        if (dataset.target_columns.empty()) throw InvalidConfig("dataset.target_columns must be non-empty");
        if (windowing.lookback < 1) throw InvalidConfig("windowing.lookback must be >= 1");
        if (windowing.horizons.empty()) throw InvalidConfig("windowing.horizons must be non-empty");
        for (long h : windowing.horizons)
            if (h < 1) throw InvalidConfig("windowing.horizons entries must be >= 1");
        if (windowing.stride < 1) throw InvalidConfig("windowing.stride must be >= 1");
        if (model.variants.empty()) throw InvalidConfig("model.variants must be non-empty");
        if (model.backbone.kind == BackboneKind::mlp) {
            if (model.backbone.hidden < 1) throw InvalidConfig("model.hidden must be >= 1");
            if (model.backbone.layers < 1 || model.backbone.layers > 2)
                throw InvalidConfig("model.layers must be 1 or 2");
        }
        if (run.seeds.empty()) throw InvalidConfig("run.seeds must be non-empty");
        if (run.workers < 1) throw InvalidConfig("run.workers must be >= 1");
        TrainConfig probe = to_train_config(model.variants.front(), run.seeds.front());
        probe.validate();
    }

    TrainConfig to_train_config(Variant variant, std::uint64_t seed) const {
        TrainConfig cfg;
        cfg.variant = variant;
        cfg.backbone = model.backbone;
        cfg.gp = gp;
        cfg.lambda = training.lambda;
        cfg.batch_size = training.batch_size;
        cfg.epochs = training.epochs;
        cfg.warmup_steps = training.warmup_steps;
        cfg.base_scale = training.base_scale;
        cfg.seed = seed;
        cfg.selection = training.selection;
        return cfg;
    }
};

namespace detail {

inline std::string format_real(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> items;
    std::string item;
    std::stringstream ss(text);
    while (std::getline(ss, item, ',')) {
        const std::string t = trim(item);
        if (!t.empty()) items.push_back(t);
    }
    return items;
}

inline long parse_config_long(const std::string& key, const std::string& value) {
    long long out;
    if (!parse_long(value, out)) throw InvalidConfig("config: " + key + " must be an integer, got \"" + value + "\"");
    return static_cast<long>(out);
}

inline double parse_config_real(const std::string& key, const std::string& value) {
    double out;
    if (!parse_double(value, out)) throw InvalidConfig("config: " + key + " must be a number, got \"" + value + "\"");
    return out;
}

inline std::string join(const std::vector<std::string>& items) {
    std::string out;
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (i > 0) out += ", ";
        out += items[i];
    }
    return out;
}

}  // namespace detail

/// Canonical emission; parse(emit(cfg)) reproduces cfg exactly (reals are
/// printed with 17 significant digits).
inline std::string emit_config(const ExperimentConfig& cfg) {
    std::ostringstream out;
    out << "[dataset]\n";
    out << "name = " << cfg.dataset.name << "\n";
    out << "source = " << cfg.dataset.source << "\n";
    if (!cfg.dataset.csv_path.empty()) out << "csv_path = " << cfg.dataset.csv_path << "\n";
    out << "target_columns = " << detail::join(cfg.dataset.target_columns) << "\n";
    out << "feature_columns = " << detail::join(cfg.dataset.feature_columns) << "\n";
    out << "synth_length = " << cfg.dataset.synth.length << "\n";
    out << "synth_coarse_period = " << detail::format_real(cfg.dataset.synth.coarse_period) << "\n";
    out << "synth_coarse_amp = " << detail::format_real(cfg.dataset.synth.coarse_amp) << "\n";
    out << "synth_fine_period = " << detail::format_real(cfg.dataset.synth.fine_period) << "\n";
    out << "synth_fine_amp = " << detail::format_real(cfg.dataset.synth.fine_amp) << "\n";
    out << "synth_ar_coeff = " << detail::format_real(cfg.dataset.synth.ar_coeff) << "\n";
    out << "synth_ar_std = " << detail::format_real(cfg.dataset.synth.ar_std) << "\n";
    out << "synth_seed = " << cfg.dataset.synth.seed << "\n";
    out << "\n[windowing]\n";
    out << "lookback = " << cfg.windowing.lookback << "\n";
    {
        std::vector<std::string> hs;
        for (long h : cfg.windowing.horizons) hs.push_back(std::to_string(h));
        out << "horizons = " << detail::join(hs) << "\n";
    }
    out << "stride = " << cfg.windowing.stride << "\n";
    out << "train_fraction = " << detail::format_real(cfg.windowing.train_fraction) << "\n";
    out << "val_fraction = " << detail::format_real(cfg.windowing.val_fraction) << "\n";
    out << "test_fraction = " << detail::format_real(cfg.windowing.test_fraction) << "\n";
    out << "\n[model]\n";
    {
        std::vector<std::string> vs;
        for (Variant v : cfg.model.variants) vs.push_back(to_string(v));
        out << "variants = " << detail::join(vs) << "\n";
    }
    out << "backbone = " << to_string(cfg.model.backbone.kind) << "\n";
    out << "hidden = " << cfg.model.backbone.hidden << "\n";
    out << "layers = " << cfg.model.backbone.layers << "\n";
    out << "\n[gp]\n";
    out << "inducing = " << cfg.gp.inducing << "\n";
    out << "lengthscale = " << detail::format_real(cfg.gp.lengthscale) << "\n";
    out << "amplitude = " << detail::format_real(cfg.gp.amplitude) << "\n";
    out << "noise = " << detail::format_real(cfg.gp.noise) << "\n";
    out << "\n[training]\n";
    out << "lambda = " << detail::format_real(cfg.training.lambda) << "\n";
    out << "batch_size = " << cfg.training.batch_size << "\n";
    out << "epochs = " << cfg.training.epochs << "\n";
    out << "warmup_steps = " << cfg.training.warmup_steps << "\n";
    out << "base_scale = " << detail::format_real(cfg.training.base_scale) << "\n";
    out << "selection = "
        << (cfg.training.selection == CheckpointSelection::best_validation ? "best" : "final")
        << "\n";
    out << "\n[run]\n";
    {
        std::vector<std::string> ss;
        for (std::uint64_t s : cfg.run.seeds) ss.push_back(std::to_string(s));
        out << "seeds = " << detail::join(ss) << "\n";
    }
    out << "out_dir = " << cfg.run.out_dir << "\n";
    out << "workers = " << cfg.run.workers << "\n";
    return out.str();
}

/**
 * Flat-sectioned INI-style parser. Unknown sections or keys are rejected so
 * typos fail loudly; '#' starts a comment line.
 */
inline ExperimentConfig parse_config(const std::string& text) {
    ExperimentConfig cfg;
    std::istringstream in(text);
    std::string line, section;
    long line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string t = detail::trim(line);
        if (t.empty() || t[0] == '#') continue;
        if (t.front() == '[') {
            if (t.back() != ']')
                throw InvalidConfig("config line " + std::to_string(line_no) + ": malformed section header");
            section = t.substr(1, t.size() - 2);
            if (section != "dataset" && section != "windowing" && section != "model" &&
                section != "gp" && section != "training" && section != "run")
                throw InvalidConfig("config: unknown section [" + section + "]");
            continue;
        }
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw InvalidConfig("config line " + std::to_string(line_no) + ": expected key = value");
        const std::string key = detail::trim(t.substr(0, eq));
        const std::string value = detail::trim(t.substr(eq + 1));
        const std::string qkey = section + "." + key;

        if (section == "dataset") {
            if (key == "name") cfg.dataset.name = value;
            else if (key == "source") cfg.dataset.source = value;
            else if (key == "csv_path") cfg.dataset.csv_path = value;
            else if (key == "target_columns") cfg.dataset.target_columns = detail::split_list(value);
            else if (key == "feature_columns") cfg.dataset.feature_columns = detail::split_list(value);
            else if (key == "synth_length") cfg.dataset.synth.length = detail::parse_config_long(qkey, value);
            else if (key == "synth_coarse_period") cfg.dataset.synth.coarse_period = detail::parse_config_real(qkey, value);
            else if (key == "synth_coarse_amp") cfg.dataset.synth.coarse_amp = detail::parse_config_real(qkey, value);
            else if (key == "synth_fine_period") cfg.dataset.synth.fine_period = detail::parse_config_real(qkey, value);
            else if (key == "synth_fine_amp") cfg.dataset.synth.fine_amp = detail::parse_config_real(qkey, value);
            else if (key == "synth_ar_coeff") cfg.dataset.synth.ar_coeff = detail::parse_config_real(qkey, value);
            else if (key == "synth_ar_std") cfg.dataset.synth.ar_std = detail::parse_config_real(qkey, value);
            else if (key == "synth_seed") cfg.dataset.synth.seed = static_cast<std::uint64_t>(detail::parse_config_long(qkey, value));
            else throw InvalidConfig("config: unknown key " + qkey);
        } else if (section == "windowing") {
            if (key == "lookback") cfg.windowing.lookback = detail::parse_config_long(qkey, value);
            else if (key == "horizons") {
                cfg.windowing.horizons.clear();
                for (const auto& item : detail::split_list(value))
                    cfg.windowing.horizons.push_back(detail::parse_config_long(qkey, item));
            } else if (key == "stride") cfg.windowing.stride = detail::parse_config_long(qkey, value);
            else if (key == "train_fraction") cfg.windowing.train_fraction = detail::parse_config_real(qkey, value);
            else if (key == "val_fraction") cfg.windowing.val_fraction = detail::parse_config_real(qkey, value);
            else if (key == "test_fraction") cfg.windowing.test_fraction = detail::parse_config_real(qkey, value);
            else throw InvalidConfig("config: unknown key " + qkey);
        } else if (section == "model") {
            if (key == "variants") {
                cfg.model.variants.clear();
                for (const auto& item : detail::split_list(value))
                    cfg.model.variants.push_back(variant_from_string(item));
            } else if (key == "backbone") cfg.model.backbone.kind = backbone_kind_from_string(value);
            else if (key == "hidden") cfg.model.backbone.hidden = detail::parse_config_long(qkey, value);
            else if (key == "layers") cfg.model.backbone.layers = detail::parse_config_long(qkey, value);
            else throw InvalidConfig("config: unknown key " + qkey);
        } else if (section == "gp") {
            if (key == "inducing") cfg.gp.inducing = detail::parse_config_long(qkey, value);
            else if (key == "lengthscale") cfg.gp.lengthscale = detail::parse_config_real(qkey, value);
            else if (key == "amplitude") cfg.gp.amplitude = detail::parse_config_real(qkey, value);
            else if (key == "noise") cfg.gp.noise = detail::parse_config_real(qkey, value);
            else throw InvalidConfig("config: unknown key " + qkey);
        } else if (section == "training") {
            if (key == "lambda") cfg.training.lambda = detail::parse_config_real(qkey, value);
            else if (key == "batch_size") cfg.training.batch_size = detail::parse_config_long(qkey, value);
            else if (key == "epochs") cfg.training.epochs = detail::parse_config_long(qkey, value);
            else if (key == "warmup_steps") cfg.training.warmup_steps = detail::parse_config_long(qkey, value);
            else if (key == "base_scale") cfg.training.base_scale = detail::parse_config_real(qkey, value);
            else if (key == "selection") {
                if (value == "best") cfg.training.selection = CheckpointSelection::best_validation;
                else if (value == "final") cfg.training.selection = CheckpointSelection::final_epoch;
                else throw InvalidConfig("config: training.selection must be best or final");
            } else throw InvalidConfig("config: unknown key " + qkey);
        } else if (section == "run") {
            if (key == "seeds") {
                cfg.run.seeds.clear();
                for (const auto& item : detail::split_list(value))
                    cfg.run.seeds.push_back(static_cast<std::uint64_t>(detail::parse_config_long(qkey, item)));
            } else if (key == "out_dir") cfg.run.out_dir = value;
            else if (key == "workers") cfg.run.workers = detail::parse_config_long(qkey, value);
            else throw InvalidConfig("config: unknown key " + qkey);
        } else {
            throw InvalidConfig("config line " + std::to_string(line_no) + ": key outside any section");
        }
    }
    return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InvalidConfig("cannot open config file: " + path);
    std::ostringstream text;
    text << in.rdbuf();
    ExperimentConfig cfg = parse_config(text.str());
    cfg.validate();
    return cfg;
}

inline void write_config(const ExperimentConfig& cfg, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write config " + path);
    out << emit_config(cfg);
    if (!out) throw IoError("write failed for config " + path);
}

}  // namespace fbd
