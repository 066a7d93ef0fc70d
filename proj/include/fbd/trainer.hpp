#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fbd/data.hpp"
#include "fbd/errors.hpp"
#include "fbd/gp_blur.hpp"
#include "fbd/metrics.hpp"
#include "fbd/pipeline.hpp"
#include "fbd/rng.hpp"

namespace fbd {

/// Stream ids carved out of one run seed; fixed so runs are reproducible.
namespace streams {
inline constexpr std::uint64_t forecaster_init = 1;
inline constexpr std::uint64_t denoiser_init = 2;
inline constexpr std::uint64_t blur = 3;
inline constexpr std::uint64_t shuffle = 4;
inline constexpr std::uint64_t eval = 5;
}  // namespace streams

enum class CheckpointSelection { best_validation, final_epoch };

struct TrainConfig {
    Variant variant = Variant::gp_blur;
    BackboneSpec backbone;
    GpInit gp;
    double lambda = 0.001;
    long batch_size = 256;
    long epochs = 50;
    long warmup_steps = 1000;
    double base_scale = 1.0;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    std::uint64_t seed = 0;
    CheckpointSelection selection = CheckpointSelection::best_validation;

    void validate() const {
        if (lambda < 0.0) throw InvalidConfig("train: lambda must be >= 0");
        if (batch_size < 1) throw InvalidConfig("train: batch_size must be >= 1");
        if (epochs < 0) throw InvalidConfig("train: epochs must be >= 0");
        if (warmup_steps < 1) throw InvalidConfig("train: warmup_steps must be >= 1");
        if (base_scale <= 0.0) throw InvalidConfig("train: base_scale must be positive");
    }
};

/// lr = base_scale * min(step^-1/2, step * warmup^-3/2); peaks at the
/// warmup boundary.
inline double warmup_lr(long step, long warmup_steps, double base_scale) {
    if (step < 1) throw InvalidConfig("warmup_lr: step must be >= 1");
    const double s = static_cast<double>(step);
    const double w = static_cast<double>(warmup_steps);
    return base_scale * std::min(1.0 / std::sqrt(s), s / (w * std::sqrt(w)));
}

struct AdamState {
    Eigen::VectorXd m;
    Eigen::VectorXd v;
    std::int64_t step = 0;

    explicit AdamState(Eigen::Index n = 0)
        : m(Eigen::VectorXd::Zero(n)), v(Eigen::VectorXd::Zero(n)) {}
};

/// Standard bias-corrected Adam update, in place.
inline void adam_step(Eigen::VectorXd& params, const Eigen::VectorXd& grad, AdamState& state,
                      double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) {
    if (params.size() != grad.size() || params.size() != state.m.size() ||
        params.size() != state.v.size())
        throw LengthMismatch("adam_step: parameter/gradient/state lengths disagree");
    state.step += 1;
    state.m = beta1 * state.m + (1.0 - beta1) * grad;
    state.v = beta2 * state.v + (1.0 - beta2) * grad.cwiseProduct(grad);
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
    params.array() -=
        lr * (state.m.array() / c1) / ((state.v.array() / c2).sqrt() + eps);
}

/// The minimized training objective: mean squared error minus the weighted
/// evidence bound (the bound is maximized, hence the sign).
inline double composite_loss(const Eigen::MatrixXd& y_d, const Eigen::MatrixXd& y,
                             double elbo_value, double lambda) {
    return mse(y, y_d) - lambda * elbo_value;
}

struct EpochMetrics {
    double train_mse = 0.0;
    double val_mse = 0.0;
};

struct Checkpoint {
    Variant variant = Variant::backbone_only;
    BackboneSpec backbone;
    GpInit gp;
    Eigen::Index lookback = 0;
    Eigen::Index feature_dim = 0;
    Eigen::Index target_dim = 0;
    Eigen::Index horizon = 0;
    std::uint64_t seed = 0;

    Eigen::VectorXd params;
    AdamState adam;
    std::int64_t best_epoch = 0;
    std::vector<EpochMetrics> history;
    std::array<std::uint8_t, 32> config_hash{};
};

inline PipelineModel build_model(const TrainConfig& cfg, Eigen::Index lookback,
                                 Eigen::Index feature_dim, Eigen::Index target_dim,
                                 Eigen::Index horizon) {
    return PipelineModel(cfg.variant, cfg.backbone, lookback, feature_dim, target_dim, horizon,
                         cfg.gp);
}

inline PipelineModel model_from_checkpoint(const Checkpoint& ckpt) {
    return PipelineModel(ckpt.variant, ckpt.backbone, ckpt.lookback, ckpt.feature_dim,
                         ckpt.target_dim, ckpt.horizon, ckpt.gp);
}

namespace detail {

/**
 * The shared epoch loop. Shuffles, batches, accumulates mean composite-loss
 * gradients (pipeline chain plus the weighted evidence-bound term for GP
 * variants), steps Adam under the warmup schedule, tracks the selected
 * checkpoint. freeze_forecaster zeroes that gradient slice (residual stage 2).
 */
inline Checkpoint run_training(const PipelineModel& model, const WindowSplit& split,
                               const TrainConfig& cfg, Eigen::VectorXd params,
                               bool freeze_forecaster) {
    if (split.train.empty()) throw EmptySplit("train: training split is empty");

    RngStream blur_rng(cfg.seed, streams::blur);
    RngStream shuffle_rng(cfg.seed, streams::shuffle);
    RngStream eval_rng(cfg.seed, streams::eval);

    const Eigen::Index n_params = model.param_size();
    const Eigen::Index horizon = model.horizon();
    const Eigen::Index dy = model.target_dim();
    const double out_entries = static_cast<double>(horizon * dy);
    const bool elbo_active = model.has_gp() && cfg.lambda != 0.0;

    AdamState adam(n_params);
    std::vector<std::size_t> order(split.train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    Checkpoint ckpt;
    ckpt.variant = model.variant();
    ckpt.backbone = cfg.backbone;
    ckpt.gp = cfg.gp;
    if (model.has_gp()) ckpt.gp.inducing = model.gp_inducing();
    ckpt.lookback = model.lookback();
    ckpt.feature_dim = model.feature_dim();
    ckpt.target_dim = dy;
    ckpt.horizon = horizon;
    ckpt.seed = cfg.seed;
    ckpt.params = params;
    ckpt.adam = adam;
    ckpt.best_epoch = 0;
    double best_val = std::numeric_limits<double>::infinity();

    for (long epoch = 1; epoch <= cfg.epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        double epoch_sq_err = 0.0;

        long batch_index = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
            ++batch_index;
            const std::size_t stop =
                std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            const double batch_n = static_cast<double>(stop - start);

            Eigen::VectorXd grads = Eigen::VectorXd::Zero(n_params);
            Eigen::MatrixXd stacked_y_f;
            if (elbo_active) stacked_y_f.resize(horizon, static_cast<Eigen::Index>(stop - start) * dy);

            double batch_sq_err = 0.0;
            for (std::size_t k = start; k < stop; ++k) {
                const Window& window = split.train[order[k]];
                const PipelineOutput out = model.forward(params, window, Mode::train, blur_rng);
                const Eigen::MatrixXd err = out.y_d - window.future;
                batch_sq_err += err.squaredNorm() / out_entries;
                grads += model.backward(params, out, 2.0 / out_entries * err);
                if (elbo_active)
                    stacked_y_f.middleCols(static_cast<Eigen::Index>(k - start) * dy, dy) = out.y_f;
            }
            grads /= batch_n;

            double batch_loss = batch_sq_err / batch_n;
            if (elbo_active) {
                const GPParams gp = model.gp_params(params);
                batch_loss -= cfg.lambda * elbo(gp, stacked_y_f) / batch_n;
                grads.segment(model.blur_offset(), model.blur_size()) -=
                    cfg.lambda / batch_n * elbo_backward(gp, stacked_y_f);
            }
            if (!std::isfinite(batch_loss) || !grads.allFinite())
                throw NonFiniteLoss("non-finite loss at epoch " + std::to_string(epoch) +
                                    ", batch " + std::to_string(batch_index));

            if (freeze_forecaster)
                grads.segment(model.forecaster_offset(), model.forecaster_size()).setZero();

            const double lr = warmup_lr(adam.step + 1, cfg.warmup_steps, cfg.base_scale);
            adam_step(params, grads, adam, lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
            if (model.has_iso())
                params(model.blur_offset()) = std::clamp(params(model.blur_offset()), 0.0, 0.1);

            epoch_sq_err += batch_sq_err;
        }

        EpochMetrics metrics;
        metrics.train_mse = epoch_sq_err / static_cast<double>(order.size());
        metrics.val_mse = split.validation.empty()
                              ? std::numeric_limits<double>::quiet_NaN()
                              : evaluate_windows(model, params, split.validation, eval_rng).mse;
        ckpt.history.push_back(metrics);

        const bool take =
            cfg.selection == CheckpointSelection::final_epoch || split.validation.empty()
                ? epoch == cfg.epochs
                : metrics.val_mse < best_val;
        if (take) {
            best_val = metrics.val_mse;
            ckpt.params = params;
            ckpt.adam = adam;
            ckpt.best_epoch = epoch;
        }
    }
    return ckpt;
}

}  // namespace detail

/// Joint training of every variant except residual boosting.
inline Checkpoint train(const WindowSplit& split, const TrainConfig& cfg) {
    cfg.validate();
    if (cfg.variant == Variant::residual_boost)
        throw InvalidConfig("train: residual boosting trains in two stages, use train_rb");
    if (split.train.empty()) throw EmptySplit("train: training split is empty");

    const Window& probe = split.train.front();
    const PipelineModel model = build_model(cfg, probe.lookback(), probe.feature_dim(),
                                            probe.target_dim(), probe.horizon());
    RngStream forecaster_rng(cfg.seed, streams::forecaster_init);
    RngStream denoiser_rng(cfg.seed, streams::denoiser_init);
    return detail::run_training(model, split, cfg,
                                model.init_params(forecaster_rng, denoiser_rng), false);
}

/**
 * Residual boosting: stage 1 trains the forecaster alone; stage 2 freezes it
 * and fits the second model so that forecast + head approximates the truth,
 * which is exactly fitting the head to the stage-1 residuals.
 */
inline Checkpoint train_rb(const WindowSplit& split, const TrainConfig& cfg) {
    cfg.validate();
    if (split.train.empty()) throw EmptySplit("train: training split is empty");

    TrainConfig stage1 = cfg;
    stage1.variant = Variant::backbone_only;
    const Checkpoint base = train(split, stage1);

    const Window& probe = split.train.front();
    TrainConfig stage2 = cfg;
    stage2.variant = Variant::residual_boost;
    const PipelineModel model = build_model(stage2, probe.lookback(), probe.feature_dim(),
                                            probe.target_dim(), probe.horizon());
    RngStream forecaster_rng(cfg.seed, streams::forecaster_init);
    RngStream denoiser_rng(cfg.seed, streams::denoiser_init);
    Eigen::VectorXd params = model.init_params(forecaster_rng, denoiser_rng);
    params.segment(model.forecaster_offset(), model.forecaster_size()) = base.params;

    return detail::run_training(model, split, stage2, std::move(params), true);
}

/// Variant dispatch.
inline Checkpoint fit(const WindowSplit& split, const TrainConfig& cfg) {
    return cfg.variant == Variant::residual_boost ? train_rb(split, cfg) : train(split, cfg);
}

namespace detail {

inline void write_bytes(std::ofstream& out, const void* data, std::size_t len) {
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(len));
}

inline void write_u64(std::ofstream& out, std::uint64_t value) {
    std::array<std::uint8_t, 8> bytes;
    for (int i = 0; i < 8; ++i) bytes[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(value >> (8 * i));
    write_bytes(out, bytes.data(), 8);
}

inline void write_f64(std::ofstream& out, double value) {
    write_u64(out, std::bit_cast<std::uint64_t>(value));
}

inline void write_block(std::ofstream& out, const std::string& name, const double* data,
                        std::uint64_t count) {
    write_u64(out, name.size());
    write_bytes(out, name.data(), name.size());
    write_u64(out, count);
    for (std::uint64_t i = 0; i < count; ++i) write_f64(out, data[i]);
}

inline std::uint64_t read_u64(std::ifstream& in) {
    std::array<std::uint8_t, 8> bytes;
    in.read(reinterpret_cast<char*>(bytes.data()), 8);
    std::uint64_t value = 0;
    for (int i = 7; i >= 0; --i) value = (value << 8) | bytes[static_cast<std::size_t>(i)];
    return value;
}

inline std::vector<double> read_block(std::ifstream& in, const std::string& expected,
                                      const std::string& path) {
    const std::uint64_t name_len = read_u64(in);
    std::string name(name_len, '\0');
    in.read(name.data(), static_cast<std::streamsize>(name_len));
    if (!in || name != expected)
        throw IoError("checkpoint " + path + ": expected block \"" + expected + "\", found \"" +
                      name + "\"");
    const std::uint64_t count = read_u64(in);
    std::vector<double> values(count);
    for (std::uint64_t i = 0; i < count; ++i)
        values[i] = std::bit_cast<double>(read_u64(in));
    if (!in) throw IoError("checkpoint " + path + ": truncated block \"" + expected + "\"");
    return values;
}

}  // namespace detail

/**
 * Versioned binary checkpoint: magic "FBD1", a 32-byte config hash, then
 * named length-prefixed blocks of little-endian float64 values, one per
 * parameter group plus optimizer state and metric history. Round-trips
 * bit-exactly.
 */
inline void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint " + path);
    detail::write_bytes(out, "FBD1", 4);
    detail::write_bytes(out, ckpt.config_hash.data(), ckpt.config_hash.size());

    const std::vector<double> meta = {
        1.0,  // format version
        static_cast<double>(static_cast<int>(ckpt.variant)),
        static_cast<double>(static_cast<int>(ckpt.backbone.kind)),
        static_cast<double>(ckpt.backbone.hidden),
        static_cast<double>(ckpt.backbone.layers),
        static_cast<double>(ckpt.lookback),
        static_cast<double>(ckpt.feature_dim),
        static_cast<double>(ckpt.target_dim),
        static_cast<double>(ckpt.horizon),
        static_cast<double>(ckpt.gp.inducing),
        ckpt.gp.lengthscale,
        ckpt.gp.amplitude,
        ckpt.gp.noise,
        static_cast<double>(ckpt.adam.step),
        static_cast<double>(ckpt.best_epoch),
        static_cast<double>(ckpt.seed & 0xffffffffull),
        static_cast<double>(ckpt.seed >> 32),
    };
    detail::write_block(out, "meta", meta.data(), meta.size());

    std::vector<double> history;
    history.reserve(ckpt.history.size() * 2);
    for (const EpochMetrics& m : ckpt.history) {
        history.push_back(m.train_mse);
        history.push_back(m.val_mse);
    }
    detail::write_block(out, "history", history.data(), history.size());

    const PipelineModel model = model_from_checkpoint(ckpt);
    if (ckpt.params.size() != model.param_size())
        throw DimensionMismatch("save_checkpoint: parameter vector disagrees with the model");
    detail::write_block(out, "forecaster", ckpt.params.data() + model.forecaster_offset(),
                        static_cast<std::uint64_t>(model.forecaster_size()));
    detail::write_block(out, "denoiser", ckpt.params.data() + model.denoiser_offset(),
                        static_cast<std::uint64_t>(model.denoiser_size()));
    detail::write_block(out, "blur", ckpt.params.data() + model.blur_offset(),
                        static_cast<std::uint64_t>(model.blur_size()));
    detail::write_block(out, "adam_m", ckpt.adam.m.data(),
                        static_cast<std::uint64_t>(ckpt.adam.m.size()));
    detail::write_block(out, "adam_v", ckpt.adam.v.data(),
                        static_cast<std::uint64_t>(ckpt.adam.v.size()));
    if (!out) throw IoError("write failed for checkpoint " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::string(magic, 4) != "FBD1")
        throw IoError("checkpoint " + path + ": bad magic bytes");

    Checkpoint ckpt;
    in.read(reinterpret_cast<char*>(ckpt.config_hash.data()),
            static_cast<std::streamsize>(ckpt.config_hash.size()));

    const std::vector<double> meta = detail::read_block(in, "meta", path);
    if (meta.size() != 17 || meta[0] != 1.0)
        throw IoError("checkpoint " + path + ": unsupported meta block");
    ckpt.variant = static_cast<Variant>(static_cast<int>(meta[1]));
    ckpt.backbone.kind = static_cast<BackboneKind>(static_cast<int>(meta[2]));
    ckpt.backbone.hidden = static_cast<Eigen::Index>(meta[3]);
    ckpt.backbone.layers = static_cast<Eigen::Index>(meta[4]);
    ckpt.lookback = static_cast<Eigen::Index>(meta[5]);
    ckpt.feature_dim = static_cast<Eigen::Index>(meta[6]);
    ckpt.target_dim = static_cast<Eigen::Index>(meta[7]);
    ckpt.horizon = static_cast<Eigen::Index>(meta[8]);
    ckpt.gp.inducing = static_cast<Eigen::Index>(meta[9]);
    ckpt.gp.lengthscale = meta[10];
    ckpt.gp.amplitude = meta[11];
    ckpt.gp.noise = meta[12];
    ckpt.adam.step = static_cast<std::int64_t>(meta[13]);
    ckpt.best_epoch = static_cast<std::int64_t>(meta[14]);
    ckpt.seed = static_cast<std::uint64_t>(meta[15]) |
                (static_cast<std::uint64_t>(meta[16]) << 32);

    const std::vector<double> history = detail::read_block(in, "history", path);
    for (std::size_t i = 0; i + 1 < history.size(); i += 2)
        ckpt.history.push_back({history[i], history[i + 1]});

    const std::vector<double> forecaster = detail::read_block(in, "forecaster", path);
    const std::vector<double> denoiser = detail::read_block(in, "denoiser", path);
    const std::vector<double> blur = detail::read_block(in, "blur", path);
    const std::vector<double> adam_m = detail::read_block(in, "adam_m", path);
    const std::vector<double> adam_v = detail::read_block(in, "adam_v", path);

    const PipelineModel model = model_from_checkpoint(ckpt);
    if (static_cast<Eigen::Index>(forecaster.size()) != model.forecaster_size() ||
        static_cast<Eigen::Index>(denoiser.size()) != model.denoiser_size() ||
        static_cast<Eigen::Index>(blur.size()) != model.blur_size())
        throw IoError("checkpoint " + path + ": block sizes disagree with the model layout");

    ckpt.params.resize(model.param_size());
    std::copy(forecaster.begin(), forecaster.end(), ckpt.params.data() + model.forecaster_offset());
    std::copy(denoiser.begin(), denoiser.end(), ckpt.params.data() + model.denoiser_offset());
    std::copy(blur.begin(), blur.end(), ckpt.params.data() + model.blur_offset());
    ckpt.adam.m = Eigen::Map<const Eigen::VectorXd>(adam_m.data(),
                                                    static_cast<Eigen::Index>(adam_m.size()));
    ckpt.adam.v = Eigen::Map<const Eigen::VectorXd>(adam_v.data(),
                                                    static_cast<Eigen::Index>(adam_v.size()));
    return ckpt;
}

}  // namespace fbd
