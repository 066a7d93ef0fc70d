#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fbd/backbone.hpp"
#include "fbd/data.hpp"
#include "fbd/errors.hpp"
#include "fbd/gp_blur.hpp"

namespace fbd {

/**
 * The model variants under study:
 *  - backbone_only: forecaster alone.
 *  - gp_blur:       forecast -> GP blur -> denoise (train and inference).
 *  - iso_blur:      forecast -> isotropic blur -> denoise.
 *  - no_blur:       forecast -> denoise, the blur replaced by identity.
 *  - residual_boost: forecaster plus a second model fit to its residuals.
 *  - train_blur:    GP blur during training only, identity at inference.
 */
enum class Variant {
    backbone_only,
    gp_blur,
    iso_blur,
    no_blur,
    residual_boost,
    train_blur,
};

inline const std::vector<Variant>& all_variants() {
    static const std::vector<Variant> v{Variant::backbone_only, Variant::gp_blur,
                                        Variant::iso_blur,      Variant::no_blur,
                                        Variant::residual_boost, Variant::train_blur};
    return v;
}

inline std::string to_string(Variant v) {
    switch (v) {
        case Variant::backbone_only: return "backbone";
        case Variant::gp_blur: return "gp-blur";
        case Variant::iso_blur: return "iso-blur";
        case Variant::no_blur: return "no-blur";
        case Variant::residual_boost: return "residual";
        case Variant::train_blur: return "train-blur";
    }
    throw InvalidConfig("unknown variant value");
}

inline Variant variant_from_string(const std::string& name) {
    for (Variant v : all_variants())
        if (to_string(v) == name) return v;
    throw InvalidConfig("unknown variant \"" + name +
                        "\" (expected backbone, gp-blur, iso-blur, no-blur, residual, train-blur)");
}

enum class Mode { train, infer };

/// Test hook type: produces the standard-normal draws the blur consumes.
using NoiseFn = std::function<Eigen::MatrixXd(Eigen::Index, Eigen::Index)>;

inline NoiseFn noise_from_rng(RngStream& rng) {
    return [&rng](Eigen::Index rows, Eigen::Index cols) { return rng.normal_matrix(rows, cols); };
}

inline NoiseFn zero_noise() {
    return [](Eigen::Index rows, Eigen::Index cols) {
        return Eigen::MatrixXd::Zero(rows, cols);
    };
}

/**
 * Denoiser input contract: history rows first and untouched, then one row
 * per horizon step carrying [known future covariates | blurred forecast].
 */
inline Eigen::MatrixXd denoiser_input(const Window& window, const Eigen::MatrixXd& y_b) {
    const Eigen::Index lookback = window.lookback();
    const Eigen::Index horizon = window.horizon();
    const Eigen::Index dx = window.feature_dim();
    const Eigen::Index dy = window.target_dim();
    if (y_b.rows() != horizon || y_b.cols() != dy)
        throw DimensionMismatch("denoiser_input: blurred forecast must be " +
                                std::to_string(horizon) + "x" + std::to_string(dy));
    if (window.history.cols() != dx + dy)
        throw DimensionMismatch("denoiser_input: history width disagrees with feature/target dims");

    Eigen::MatrixXd input(lookback + horizon, dx + dy);
    input.topRows(lookback) = window.history;
    input.block(lookback, 0, horizon, dx) = window.future_features;
    input.block(lookback, dx, horizon, dy) = y_b;
    return input;
}

/// One forward pass with everything backward needs riding along.
struct PipelineOutput {
    Eigen::MatrixXd y_f;  // coarse forecast
    Eigen::MatrixXd y_b;  // blurred forecast; empty iff has_blur is false
    Eigen::MatrixXd y_d;  // final prediction
    bool has_blur = false;

    Variant variant = Variant::backbone_only;
    Mode mode = Mode::infer;
    ForwardCache forecaster_cache;
    ForwardCache denoiser_cache;
    BlurDraw blur;
    bool blur_sampled = false;  // a stochastic draw actually happened
    double sigma_iso = 0.0;     // the unclamped trainable value (iso variant)
};

struct GpInit {
    Eigen::Index inducing = 0;  // 0 = max(4, horizon/4)
    double lengthscale = 0.2;
    // Near-identity start: the corruption stays gentle out of the box and the
    // evidence bound is free to grow it when the data supports a wider blur.
    double amplitude = 0.002;
    double noise = 5e-4;
};

/**
 * A variant wired to concrete backbones and window dimensions. Parameters
 * live in one flat vector laid out [forecaster | denoiser | blur], where the
 * blur segment is the flat GP parameters, the isotropic width, or empty.
 */
class PipelineModel {
  public:
    PipelineModel(Variant variant, const BackboneSpec& backbone, Eigen::Index lookback,
                  Eigen::Index feature_dim, Eigen::Index target_dim, Eigen::Index horizon,
                  const GpInit& gp_init = {})
        : variant_(variant),
          lookback_(lookback),
          feature_dim_(feature_dim),
          target_dim_(target_dim),
          horizon_(horizon),
          gp_init_(gp_init) {
        forecaster_ = make_backbone(backbone, lookback, feature_dim + target_dim, horizon, target_dim);
        if (variant != Variant::backbone_only)
            denoiser_ = make_backbone(backbone, lookback + horizon, feature_dim + target_dim,
                                      horizon, target_dim);
        if (has_gp() && gp_init_.inducing == 0)
            gp_init_.inducing = std::max<Eigen::Index>(4, horizon / 4);
    }

    Variant variant() const { return variant_; }
    Eigen::Index lookback() const { return lookback_; }
    Eigen::Index horizon() const { return horizon_; }
    Eigen::Index feature_dim() const { return feature_dim_; }
    Eigen::Index target_dim() const { return target_dim_; }
    const Backbone& forecaster() const { return *forecaster_; }
    const Backbone& denoiser() const {
        if (!denoiser_) throw DimensionMismatch("pipeline: variant has no denoiser");
        return *denoiser_;
    }

    bool has_denoiser() const { return denoiser_ != nullptr; }
    bool has_gp() const { return variant_ == Variant::gp_blur || variant_ == Variant::train_blur; }
    bool has_iso() const { return variant_ == Variant::iso_blur; }
    Eigen::Index gp_inducing() const { return has_gp() ? gp_init_.inducing : 0; }

    Eigen::Index forecaster_offset() const { return 0; }
    Eigen::Index forecaster_size() const { return forecaster_->param_size(); }
    Eigen::Index denoiser_offset() const { return forecaster_size(); }
    Eigen::Index denoiser_size() const { return denoiser_ ? denoiser_->param_size() : 0; }
    Eigen::Index blur_offset() const { return denoiser_offset() + denoiser_size(); }
    Eigen::Index blur_size() const {
        if (has_gp()) return gp_flat_size(gp_init_.inducing);
        return has_iso() ? 1 : 0;
    }
    Eigen::Index param_size() const { return blur_offset() + blur_size(); }

    /// Forecaster weights from one stream, denoiser from a second; the blur
    /// segment starts at library defaults (KL exactly zero for the GP).
    Eigen::VectorXd init_params(RngStream& forecaster_rng, RngStream& denoiser_rng) const {
        Eigen::VectorXd params(param_size());
        params.segment(forecaster_offset(), forecaster_size()) = forecaster_->init_params(forecaster_rng);
        if (denoiser_)
            params.segment(denoiser_offset(), denoiser_size()) = denoiser_->init_params(denoiser_rng);
        if (has_gp())
            params.segment(blur_offset(), blur_size()) =
                gp_to_flat(default_gp_params(horizon_, gp_init_.lengthscale, gp_init_.amplitude,
                                             gp_init_.noise, gp_init_.inducing));
        else if (has_iso())
            params(blur_offset()) = 0.05;
        return params;
    }

    GPParams gp_params(const Eigen::VectorXd& params) const {
        if (!has_gp()) throw DimensionMismatch("pipeline: variant carries no gp parameters");
        check_params(params);
        return gp_from_flat(params.segment(blur_offset(), blur_size()), gp_init_.inducing);
    }

    double sigma_iso(const Eigen::VectorXd& params) const {
        if (!has_iso()) throw DimensionMismatch("pipeline: variant carries no isotropic width");
        check_params(params);
        return params(blur_offset());
    }

    PipelineOutput forward(const Eigen::VectorXd& params, const Window& window, Mode mode,
                           const NoiseFn& noise) const {
        check_params(params);
        check_window(window);

        PipelineOutput out;
        out.variant = variant_;
        out.mode = mode;
        out.y_f = forecaster_->forward(segment(params, forecaster_offset(), forecaster_size()),
                                       window.history, out.forecaster_cache);

        if (variant_ == Variant::backbone_only) {
            out.y_d = out.y_f;
            return out;
        }

        const bool blur_active =
            variant_ == Variant::gp_blur || variant_ == Variant::iso_blur ||
            (variant_ == Variant::train_blur && mode == Mode::train);
        if (blur_active) {
            const Eigen::MatrixXd eps = noise(horizon_, target_dim_);
            if (has_gp()) {
                out.blur = sample_blur_with_eps(out.y_f, gp_params(params), eps);
            } else {
                out.sigma_iso = params(blur_offset());
                out.blur = isotropic_blur_with_eps(out.y_f, out.sigma_iso, eps);
            }
            out.y_b = out.blur.blurred;
            out.blur_sampled = true;
        } else {
            out.y_b = out.y_f;
        }
        out.has_blur = true;

        const Eigen::MatrixXd head = denoiser_->forward(
            segment(params, denoiser_offset(), denoiser_size()), denoiser_input(window, out.y_b),
            out.denoiser_cache);
        out.y_d = variant_ == Variant::residual_boost ? Eigen::MatrixXd(out.y_f + head) : head;
        return out;
    }

    PipelineOutput forward(const Eigen::VectorXd& params, const Window& window, Mode mode,
                           RngStream& rng) const {
        return forward(params, window, mode, noise_from_rng(rng));
    }

    /**
     * Flat gradient of <grad_y_d, y_d>. The chain runs denoiser -> blurred
     * slice -> blur -> forecaster. The residual head is trained on detached
     * residuals, so there the forecaster sees only the skip path.
     */
    Eigen::VectorXd backward(const Eigen::VectorXd& params, const PipelineOutput& out,
                             const Eigen::MatrixXd& grad_y_d) const {
        check_params(params);
        if (out.variant != variant_)
            throw StaleCache("pipeline: output came from a different variant");
        if (grad_y_d.rows() != horizon_ || grad_y_d.cols() != target_dim_)
            throw ShapeMismatch("pipeline: grad_y_d must be " + std::to_string(horizon_) + "x" +
                                std::to_string(target_dim_));

        Eigen::VectorXd grads = Eigen::VectorXd::Zero(param_size());

        Eigen::MatrixXd grad_y_f;
        if (variant_ == Variant::backbone_only) {
            grad_y_f = grad_y_d;
        } else {
            const BackboneGrads denoiser_grads =
                denoiser_->backward(segment(params, denoiser_offset(), denoiser_size()),
                                    out.denoiser_cache, grad_y_d);
            grads.segment(denoiser_offset(), denoiser_size()) = denoiser_grads.params;
            const Eigen::MatrixXd grad_y_b =
                denoiser_grads.input.block(lookback_, feature_dim_, horizon_, target_dim_);

            if (variant_ == Variant::residual_boost) {
                grad_y_f = grad_y_d;  // skip path only; the head input is detached
            } else if (out.blur_sampled) {
                if (has_gp()) {
                    const BlurGrads blur_grads =
                        blur_backward(out.blur, grad_y_b, gp_params(params), out.y_f);
                    grads.segment(blur_offset(), blur_size()) = blur_grads.gp;
                    grad_y_f = blur_grads.y_f;
                } else {
                    grads(blur_offset()) =
                        isotropic_blur_backward(out.blur, grad_y_b, out.sigma_iso);
                    grad_y_f = grad_y_b;
                }
            } else {
                grad_y_f = grad_y_b;  // identity blur
            }
        }

        const BackboneGrads forecaster_grads = forecaster_->backward(
            segment(params, forecaster_offset(), forecaster_size()), out.forecaster_cache, grad_y_f);
        grads.segment(forecaster_offset(), forecaster_size()) = forecaster_grads.params;
        return grads;
    }

  private:
    void check_params(const Eigen::VectorXd& params) const {
        if (params.size() != param_size())
            throw DimensionMismatch("pipeline: expected " + std::to_string(param_size()) +
                                    " parameters, got " + std::to_string(params.size()));
    }

    void check_window(const Window& window) const {
        if (window.lookback() != lookback_ || window.horizon() != horizon_ ||
            window.feature_dim() != feature_dim_ || window.target_dim() != target_dim_)
            throw DimensionMismatch("pipeline: window dims disagree with the model");
    }

    static Eigen::VectorXd segment(const Eigen::VectorXd& params, Eigen::Index offset,
                                   Eigen::Index size) {
        return params.segment(offset, size);
    }

    Variant variant_;
    Eigen::Index lookback_, feature_dim_, target_dim_, horizon_;
    GpInit gp_init_;
    std::shared_ptr<const Backbone> forecaster_;
    std::shared_ptr<const Backbone> denoiser_;
};

}  // namespace fbd
