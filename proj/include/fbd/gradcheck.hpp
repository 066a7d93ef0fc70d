#pragma once

#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fbd/backbone.hpp"
#include "fbd/gp_blur.hpp"
#include "fbd/numerics.hpp"
#include "fbd/pipeline.hpp"
#include "fbd/rng.hpp"

namespace fbd {

struct GradCheckResult {
    std::string component;
    double max_rel_err = 0.0;
    double tolerance = 0.0;
    bool pass = false;
};

/// Test seam: may replace the analytic gradient of a named component before
/// it is compared (used to prove the checker catches wrong gradients).
using GradTamper = std::function<Eigen::VectorXd(const std::string&, Eigen::VectorXd)>;

struct GradCheckDims {
    Eigen::Index lookback = 8;
    Eigen::Index horizon = 4;
    Eigen::Index inducing = 2;
    Eigen::Index feature_dim = 2;
    Eigen::Index target_dim = 1;
};

namespace detail {

inline Window random_window(const GradCheckDims& dims, RngStream& rng) {
    Window w;
    w.history = 0.5 * rng.normal_matrix(dims.lookback, dims.feature_dim + dims.target_dim);
    w.future = 0.5 * rng.normal_matrix(dims.horizon, dims.target_dim);
    w.future_features = 0.5 * rng.normal_matrix(dims.horizon, dims.feature_dim);
    w.cutoff = dims.lookback;
    return w;
}

inline GPParams small_gp(const GradCheckDims& dims, RngStream& rng) {
    GPParams gp;
    gp.log_lengthscale = std::log(0.3);
    gp.log_amplitude = std::log(0.4);
    gp.log_noise = std::log(0.1);
    gp.inducing_locations = Eigen::VectorXd::LinSpaced(dims.inducing, 0.1, 0.9);
    gp.var_mean = 0.1 * rng.normal_vector(dims.inducing);
    gp.var_chol = Eigen::MatrixXd::Zero(dims.inducing, dims.inducing);
    for (Eigen::Index i = 0; i < dims.inducing; ++i) {
        for (Eigen::Index j = 0; j < i; ++j) gp.var_chol(i, j) = 0.1 * rng.normal();
        gp.var_chol(i, i) = 0.5 + 0.2 * rng.uniform();
    }
    return gp;
}

inline GradCheckResult check_one(const std::string& component, double tolerance,
                                 const std::function<double(const Eigen::VectorXd&)>& f,
                                 const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& grad,
                                 const Eigen::VectorXd& point, const GradTamper& tamper) {
    auto tampered = [&](const Eigen::VectorXd& x) {
        Eigen::VectorXd g = grad(x);
        return tamper ? tamper(component, std::move(g)) : g;
    };
    GradCheckResult result;
    result.component = component;
    result.tolerance = tolerance;
    result.max_rel_err = finite_diff_check(f, tampered, point);
    result.pass = result.max_rel_err <= tolerance;
    return result;
}

inline GradCheckResult check_backbone(const std::string& component, const Backbone& net,
                                      RngStream& rng, const GradTamper& tamper) {
    const Eigen::VectorXd params0 = net.init_params(rng);
    const Eigen::MatrixXd input0 = 0.5 * rng.normal_matrix(net.in_rows(), net.in_cols());
    const Eigen::MatrixXd target = 0.5 * rng.normal_matrix(net.out_rows(), net.out_cols());

    // One point packs [params | input]; f = half the squared error of the output.
    Eigen::VectorXd point(params0.size() + input0.size());
    point << params0, flatten_rows(input0);
    auto unpack = [&](const Eigen::VectorXd& x) {
        return std::make_pair(Eigen::VectorXd(x.head(params0.size())),
                              unflatten_rows(x.tail(input0.size()), net.in_rows(), net.in_cols()));
    };
    auto f = [&](const Eigen::VectorXd& x) {
        const auto [p, in] = unpack(x);
        return 0.5 * (net.forward(p, in) - target).squaredNorm();
    };
    auto grad = [&](const Eigen::VectorXd& x) {
        const auto [p, in] = unpack(x);
        ForwardCache cache;
        const Eigen::MatrixXd out = net.forward(p, in, cache);
        const BackboneGrads g = net.backward(p, cache, out - target);
        Eigen::VectorXd flat(x.size());
        flat << g.params, flatten_rows(g.input);
        return flat;
    };
    return check_one(component, 1e-4, f, grad, point, tamper);
}

inline GradCheckResult check_pipeline(const std::string& component, double tolerance,
                                      Variant variant, const GradCheckDims& dims, RngStream& rng,
                                      const GradTamper& tamper) {
    BackboneSpec spec;  // linear keeps the finite-difference surface mild
    GpInit gp_init;
    gp_init.inducing = dims.inducing;
    const PipelineModel model(variant, spec, dims.lookback, dims.feature_dim, dims.target_dim,
                              dims.horizon, gp_init);
    const Window window = random_window(dims, rng);
    RngStream init_a(rng.next_u64(), 0), init_b(rng.next_u64(), 0);
    const Eigen::VectorXd point = model.init_params(init_a, init_b);
    const Eigen::MatrixXd eps = rng.normal_matrix(dims.horizon, dims.target_dim);
    const NoiseFn fixed_eps = [eps](Eigen::Index, Eigen::Index) { return eps; };

    auto f = [&, fixed_eps](const Eigen::VectorXd& x) {
        const PipelineOutput out = model.forward(x, window, Mode::train, fixed_eps);
        return 0.5 * (out.y_d - window.future).squaredNorm();
    };
    auto grad = [&, fixed_eps](const Eigen::VectorXd& x) {
        const PipelineOutput out = model.forward(x, window, Mode::train, fixed_eps);
        return model.backward(x, out, out.y_d - window.future);
    };
    return check_one(component, tolerance, f, grad, point, tamper);
}

}  // namespace detail

/**
 * The full finite-difference suite at toy dimensions. Every entry compares a
 * hand-written gradient against central differences; tolerances are 1e-4 for
 * plain backbones and 1e-3 for anything passing through a Cholesky factor.
 */
inline std::vector<GradCheckResult> run_gradcheck(const GradCheckDims& dims = {},
                                                  std::uint64_t seed = 42,
                                                  const GradTamper& tamper = nullptr) {
    std::vector<GradCheckResult> results;
    RngStream rng(seed, 0);

    {
        const LinearBackbone net(dims.lookback, dims.feature_dim + dims.target_dim, dims.horizon,
                                 dims.target_dim);
        results.push_back(detail::check_backbone("linear backbone", net, rng, tamper));
    }
    {
        const MlpBackbone net(dims.lookback, dims.feature_dim + dims.target_dim, dims.horizon,
                              dims.target_dim, 16, 2);
        results.push_back(detail::check_backbone("mlp backbone", net, rng, tamper));
    }

    {
        const GPParams gp0 = detail::small_gp(dims, rng);
        const Eigen::MatrixXd y_f = 0.5 * rng.normal_matrix(dims.horizon, dims.target_dim);
        const Eigen::MatrixXd eps = rng.normal_matrix(dims.horizon, dims.target_dim);
        auto f = [&](const Eigen::VectorXd& x) {
            const BlurDraw draw = sample_blur_with_eps(y_f, gp_from_flat(x, dims.inducing), eps);
            return 0.5 * draw.blurred.squaredNorm();
        };
        auto grad = [&](const Eigen::VectorXd& x) {
            const GPParams gp = gp_from_flat(x, dims.inducing);
            const BlurDraw draw = sample_blur_with_eps(y_f, gp, eps);
            return blur_backward(draw, draw.blurred, gp, y_f).gp;
        };
        results.push_back(
            detail::check_one("blur reparameterization", 1e-3, f, grad, gp_to_flat(gp0), tamper));
    }

    {
        const GPParams gp0 = detail::small_gp(dims, rng);
        const Eigen::MatrixXd obs = 0.5 * rng.normal_matrix(dims.horizon, 2);
        auto f = [&](const Eigen::VectorXd& x) {
            return elbo(gp_from_flat(x, dims.inducing), obs);
        };
        auto grad = [&](const Eigen::VectorXd& x) {
            return elbo_backward(gp_from_flat(x, dims.inducing), obs);
        };
        results.push_back(
            detail::check_one("evidence bound", 1e-3, f, grad, gp_to_flat(gp0), tamper));
    }

    results.push_back(detail::check_pipeline("pipeline backbone-only", 1e-4,
                                             Variant::backbone_only, dims, rng, tamper));
    results.push_back(
        detail::check_pipeline("pipeline no-blur", 1e-4, Variant::no_blur, dims, rng, tamper));
    results.push_back(
        detail::check_pipeline("pipeline iso-blur", 1e-3, Variant::iso_blur, dims, rng, tamper));
    results.push_back(
        detail::check_pipeline("pipeline gp-blur", 1e-3, Variant::gp_blur, dims, rng, tamper));
    results.push_back(
        detail::check_pipeline("pipeline train-blur", 1e-3, Variant::train_blur, dims, rng, tamper));

    {
        // Residual head: the forecaster is detached from the head input, so
        // only the head parameters are finite-differenced; the forecaster
        // slice must equal the plain skip-path gradient.
        BackboneSpec spec;
        const PipelineModel model(Variant::residual_boost, spec, dims.lookback, dims.feature_dim,
                                  dims.target_dim, dims.horizon);
        const Window window = detail::random_window(dims, rng);
        RngStream init_a(rng.next_u64(), 0), init_b(rng.next_u64(), 0);
        const Eigen::VectorXd base = model.init_params(init_a, init_b);
        const NoiseFn no_noise = zero_noise();

        auto with_head = [&](const Eigen::VectorXd& head) {
            Eigen::VectorXd full = base;
            full.segment(model.denoiser_offset(), model.denoiser_size()) = head;
            return full;
        };
        auto f = [&](const Eigen::VectorXd& head) {
            const PipelineOutput out = model.forward(with_head(head), window, Mode::train, no_noise);
            return 0.5 * (out.y_d - window.future).squaredNorm();
        };
        auto grad = [&](const Eigen::VectorXd& head) {
            const Eigen::VectorXd full = with_head(head);
            const PipelineOutput out = model.forward(full, window, Mode::train, no_noise);
            const Eigen::VectorXd g = model.backward(full, out, out.y_d - window.future);
            return Eigen::VectorXd(g.segment(model.denoiser_offset(), model.denoiser_size()));
        };
        GradCheckResult head_check = detail::check_one(
            "pipeline residual", 1e-4, f, grad,
            base.segment(model.denoiser_offset(), model.denoiser_size()), tamper);

        // Skip-path contract: forecaster gradient is exactly the loss gradient
        // pushed through the forecaster alone.
        const PipelineOutput out = model.forward(base, window, Mode::train, no_noise);
        const Eigen::MatrixXd upstream = out.y_d - window.future;
        const Eigen::VectorXd g = model.backward(base, out, upstream);
        ForwardCache cache;
        model.forecaster().forward(base.segment(model.forecaster_offset(), model.forecaster_size()),
                                   window.history, cache);
        const BackboneGrads direct = model.forecaster().backward(
            base.segment(model.forecaster_offset(), model.forecaster_size()), cache, upstream);
        const double skip_err =
            (g.segment(model.forecaster_offset(), model.forecaster_size()) - direct.params)
                .cwiseAbs()
                .maxCoeff();
        head_check.max_rel_err = std::max(head_check.max_rel_err, skip_err);
        head_check.pass = head_check.max_rel_err <= head_check.tolerance;
        results.push_back(head_check);
    }

    {
        // Composite objective for the GP variant: the mse chain plus the
        // weighted evidence bound on frozen forecasts (its observations are
        // gradient-blocked, so the finite difference holds them fixed too).
        BackboneSpec spec;
        GpInit gp_init;
        gp_init.inducing = dims.inducing;
        const PipelineModel model(Variant::gp_blur, spec, dims.lookback, dims.feature_dim,
                                  dims.target_dim, dims.horizon, gp_init);
        const Window window = detail::random_window(dims, rng);
        RngStream init_a(rng.next_u64(), 0), init_b(rng.next_u64(), 0);
        const Eigen::VectorXd point = model.init_params(init_a, init_b);
        const Eigen::MatrixXd eps = rng.normal_matrix(dims.horizon, dims.target_dim);
        const NoiseFn fixed_eps = [eps](Eigen::Index, Eigen::Index) { return eps; };
        const double lambda = 0.001;
        const Eigen::MatrixXd obs =
            model.forward(point, window, Mode::train, fixed_eps).y_f;  // frozen

        auto f = [&, fixed_eps](const Eigen::VectorXd& x) {
            const PipelineOutput out = model.forward(x, window, Mode::train, fixed_eps);
            const double err = (out.y_d - window.future).squaredNorm() /
                               static_cast<double>(out.y_d.size());
            return err - lambda * elbo(model.gp_params(x), obs);
        };
        auto grad = [&, fixed_eps](const Eigen::VectorXd& x) {
            const PipelineOutput out = model.forward(x, window, Mode::train, fixed_eps);
            Eigen::VectorXd g = model.backward(
                x, out, 2.0 / static_cast<double>(out.y_d.size()) * (out.y_d - window.future));
            g.segment(model.blur_offset(), model.blur_size()) -=
                lambda * elbo_backward(model.gp_params(x), obs);
            return g;
        };
        results.push_back(detail::check_one("composite objective", 1e-3, f, grad, point, tamper));
    }

    return results;
}

}  // namespace fbd
