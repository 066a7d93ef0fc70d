#pragma once

#include <algorithm>
#include <cmath>
#include <string>

#include <Eigen/Dense>

#include "fbd/errors.hpp"
#include "fbd/numerics.hpp"
#include "fbd/rng.hpp"

namespace fbd {

/**
 * Learnable blur parameters: an RBF kernel over normalized horizon time
 * (log-parameterized hypers), M inducing locations, and a variational
 * Gaussian N(var_mean, var_chol var_chol^T) over the inducing values.
 */
struct GPParams {
    double log_lengthscale = 0.0;
    double log_amplitude = 0.0;
    double log_noise = 0.0;
    Eigen::VectorXd inducing_locations;  // M, normalized time
    Eigen::VectorXd var_mean;            // M
    Eigen::MatrixXd var_chol;            // M x M lower triangular, diag > 0

    Eigen::Index inducing_count() const { return inducing_locations.size(); }
    double lengthscale() const { return std::exp(log_lengthscale); }
    double amplitude() const { return std::exp(log_amplitude); }
    double noise() const { return std::exp(log_noise); }

    void validate() const {
        const Eigen::Index m = inducing_count();
        if (m < 1) throw InvalidConfig("gp: at least one inducing point required");
        if (var_mean.size() != m || var_chol.rows() != m || var_chol.cols() != m)
            throw DimensionMismatch("gp: variational parameter shapes disagree with inducing count");
        if (!(var_chol.diagonal().array() > 0.0).all())
            throw InvalidConfig("gp: var_chol diagonal must be strictly positive");
        if (!std::isfinite(log_lengthscale) || !std::isfinite(log_amplitude) ||
            !std::isfinite(log_noise) || !inducing_locations.allFinite() ||
            !var_mean.allFinite() || !var_chol.allFinite())
            throw NonFiniteValue("gp: parameters contain non-finite entries");
    }
};

/// Flat layout: [log_lengthscale, log_amplitude, log_noise, inducing (M),
/// var_mean (M), var_chol lower triangle row-wise with the diagonal as log].
inline Eigen::Index gp_flat_size(Eigen::Index inducing_count) {
    return 3 + 2 * inducing_count + inducing_count * (inducing_count + 1) / 2;
}

inline Eigen::VectorXd gp_to_flat(const GPParams& gp) {
    gp.validate();
    const Eigen::Index m = gp.inducing_count();
    Eigen::VectorXd flat(gp_flat_size(m));
    flat(0) = gp.log_lengthscale;
    flat(1) = gp.log_amplitude;
    flat(2) = gp.log_noise;
    flat.segment(3, m) = gp.inducing_locations;
    flat.segment(3 + m, m) = gp.var_mean;
    Eigen::Index k = 3 + 2 * m;
    for (Eigen::Index i = 0; i < m; ++i)
        for (Eigen::Index j = 0; j <= i; ++j)
            flat(k++) = i == j ? std::log(gp.var_chol(i, i)) : gp.var_chol(i, j);
    return flat;
}

inline GPParams gp_from_flat(const Eigen::VectorXd& flat, Eigen::Index inducing_count) {
    if (flat.size() != gp_flat_size(inducing_count))
        throw DimensionMismatch("gp_from_flat: expected " +
                                std::to_string(gp_flat_size(inducing_count)) + " values, got " +
                                std::to_string(flat.size()));
    GPParams gp;
    gp.log_lengthscale = flat(0);
    gp.log_amplitude = flat(1);
    gp.log_noise = flat(2);
    gp.inducing_locations = flat.segment(3, inducing_count);
    gp.var_mean = flat.segment(3 + inducing_count, inducing_count);
    gp.var_chol = Eigen::MatrixXd::Zero(inducing_count, inducing_count);
    Eigen::Index k = 3 + 2 * inducing_count;
    for (Eigen::Index i = 0; i < inducing_count; ++i)
        for (Eigen::Index j = 0; j <= i; ++j)
            gp.var_chol(i, j) = i == j ? std::exp(flat(k++)) : flat(k++);
    return gp;
}

/// Normalized horizon time points t_i = i / horizon.
inline Eigen::VectorXd horizon_times(Eigen::Index horizon) {
    if (horizon < 1) throw InvalidConfig("horizon_times: horizon must be >= 1");
    Eigen::VectorXd t(horizon);
    for (Eigen::Index i = 0; i < horizon; ++i)
        t(i) = static_cast<double>(i) / static_cast<double>(horizon);
    return t;
}

/// K[i,j] = amplitude^2 * exp(-(s_i - t_j)^2 / (2 lengthscale^2)).
inline Eigen::MatrixXd rbf_kernel(const Eigen::VectorXd& s, const Eigen::VectorXd& t,
                                  double lengthscale, double amplitude) {
    const double a2 = amplitude * amplitude;
    const double inv_2l2 = 0.5 / (lengthscale * lengthscale);
    Eigen::MatrixXd k(s.size(), t.size());
    for (Eigen::Index i = 0; i < s.size(); ++i)
        for (Eigen::Index j = 0; j < t.size(); ++j) {
            const double d = s(i) - t(j);
            k(i, j) = a2 * std::exp(-d * d * inv_2l2);
        }
    return k;
}

inline Eigen::MatrixXd rbf_kernel(const Eigen::VectorXd& s, const Eigen::VectorXd& t,
                                  const GPParams& gp) {
    return rbf_kernel(s, t, gp.lengthscale(), gp.amplitude());
}

/// Shared intermediates for the Nystrom covariance, sampling, and the ELBO.
struct GPWork {
    Eigen::VectorXd times;       // horizon points
    Eigen::MatrixXd cross;       // C = k(times, inducing), horizon x M
    Eigen::MatrixXd gram;        // Q0 = k(inducing, inducing), M x M, no jitter
    JitteredCholesky gram_chol;  // factor of Q0 + jitter*I
    Eigen::MatrixXd projector;   // A = C (Q0 + jitter*I)^-1, horizon x M
};

inline GPWork gp_work(const GPParams& gp, const Eigen::VectorXd& times) {
    gp.validate();
    GPWork w;
    w.times = times;
    w.cross = rbf_kernel(times, gp.inducing_locations, gp);
    w.gram = rbf_kernel(gp.inducing_locations, gp.inducing_locations, gp);
    w.gram_chol = cholesky_jittered(w.gram);
    w.projector = cholesky_solve(w.gram_chol.factor, w.cross.transpose()).transpose();
    return w;
}

/// Low-rank covariance over the horizon: C (Q0 + jitter*I)^-1 C^T.
inline Eigen::MatrixXd nystrom_cov(const Eigen::VectorXd& horizon_points, const GPParams& gp) {
    const GPWork w = gp_work(gp, horizon_points);
    return w.projector * w.cross.transpose();
}

inline Eigen::MatrixXd nystrom_cov(Eigen::Index horizon, const GPParams& gp) {
    return nystrom_cov(horizon_times(horizon), gp);
}

/**
 * One reparameterized corruption of a forecast block: blurred = forecast +
 * factor * eps per channel. Everything needed by blur_backward rides along.
 */
struct BlurDraw {
    Eigen::MatrixXd blurred;  // horizon x d_y
    Eigen::MatrixXd eps;      // horizon x d_y standard normals
    LowerTriangular factor;   // cholesky of the blur covariance
    Eigen::MatrixXd cov;      // factor factor^T
    GPWork work;
    double params_checksum = 0.0;
    bool from_gp = false;
};

inline BlurDraw sample_blur_with_eps(const Eigen::MatrixXd& y_f, const GPParams& gp,
                                     const Eigen::MatrixXd& eps) {
    if (eps.rows() != y_f.rows() || eps.cols() != y_f.cols())
        throw DimensionMismatch("sample_blur: eps shape disagrees with forecast");
    if (!y_f.allFinite()) throw NonFiniteValue("sample_blur: forecast has non-finite entries");

    BlurDraw draw;
    draw.work = gp_work(gp, horizon_times(y_f.rows()));
    const Eigen::MatrixXd nystrom = draw.work.projector * draw.work.cross.transpose();
    draw.cov = 0.5 * (nystrom + nystrom.transpose());
    const double sigma2 = gp.noise() * gp.noise();
    draw.cov.diagonal().array() += sigma2;
    draw.factor = cholesky(draw.cov);
    draw.eps = eps;
    draw.blurred = y_f + draw.factor.mat.triangularView<Eigen::Lower>() * eps;
    draw.params_checksum = gp_to_flat(gp).sum();
    draw.from_gp = true;
    return draw;
}

inline BlurDraw sample_blur(const Eigen::MatrixXd& y_f, const GPParams& gp, RngStream& rng) {
    return sample_blur_with_eps(y_f, gp, rng.normal_matrix(y_f.rows(), y_f.cols()));
}

/// Blur with sigma_iso * I in place of the GP covariance; sigma_iso is
/// clamped into [0, 0.1].
inline BlurDraw isotropic_blur_with_eps(const Eigen::MatrixXd& y_f, double sigma_iso,
                                        const Eigen::MatrixXd& eps) {
    if (eps.rows() != y_f.rows() || eps.cols() != y_f.cols())
        throw DimensionMismatch("isotropic_blur: eps shape disagrees with forecast");
    const double sigma = std::clamp(sigma_iso, 0.0, 0.1);
    BlurDraw draw;
    draw.factor.mat = sigma * Eigen::MatrixXd::Identity(y_f.rows(), y_f.rows());
    draw.cov = sigma * sigma * Eigen::MatrixXd::Identity(y_f.rows(), y_f.rows());
    draw.eps = eps;
    draw.blurred = y_f + sigma * eps;
    draw.params_checksum = sigma;
    return draw;
}

inline BlurDraw isotropic_blur(const Eigen::MatrixXd& y_f, double sigma_iso, RngStream& rng) {
    return isotropic_blur_with_eps(y_f, sigma_iso, rng.normal_matrix(y_f.rows(), y_f.cols()));
}

namespace detail {

/// Gradients through the kernel matrices C = k(t, x) and Q0 = k(x, x) given
/// their cotangents, accumulated into the hyperparameter slots.
struct KernelPullback {
    double d_log_lengthscale = 0.0;
    double d_log_amplitude = 0.0;
    Eigen::VectorXd d_inducing;
};

inline KernelPullback kernel_pullback(const GPWork& w, const GPParams& gp,
                                      const Eigen::MatrixXd& cross_bar,
                                      const Eigen::MatrixXd& gram_bar) {
    const double l2 = gp.lengthscale() * gp.lengthscale();
    const Eigen::Index m = gp.inducing_count();
    KernelPullback out;
    out.d_inducing = Eigen::VectorXd::Zero(m);

    out.d_log_amplitude = 2.0 * ((cross_bar.array() * w.cross.array()).sum() +
                                 (gram_bar.array() * w.gram.array()).sum());

    for (Eigen::Index i = 0; i < w.times.size(); ++i)
        for (Eigen::Index k = 0; k < m; ++k) {
            const double d = w.times(i) - gp.inducing_locations(k);
            const double cc = cross_bar(i, k) * w.cross(i, k);
            out.d_log_lengthscale += cc * d * d / l2;
            out.d_inducing(k) += cc * d / l2;
        }
    for (Eigen::Index k = 0; k < m; ++k)
        for (Eigen::Index j = 0; j < m; ++j) {
            const double e = gp.inducing_locations(k) - gp.inducing_locations(j);
            out.d_log_lengthscale += gram_bar(k, j) * w.gram(k, j) * e * e / l2;
            out.d_inducing(k) += (gram_bar(k, j) + gram_bar(j, k)) * w.gram(k, j) * (-e) / l2;
        }
    return out;
}

/// Cotangent of A = C Q^-1 pushed back onto C and Q (entrywise gradients).
inline void projector_pullback(const GPWork& w, const Eigen::MatrixXd& projector_bar,
                               Eigen::MatrixXd& cross_bar, Eigen::MatrixXd& gram_bar) {
    const Eigen::MatrixXd g = cholesky_solve(w.gram_chol.factor, projector_bar.transpose()).transpose();
    cross_bar += g;
    gram_bar -= w.projector.transpose() * g;
}

/// Murray-style pullback through Sigma = L L^T: given L_bar, returns the
/// symmetric Sigma_bar.
inline Eigen::MatrixXd cholesky_pullback(const LowerTriangular& factor, const Eigen::MatrixXd& l_bar) {
    const Eigen::MatrixXd lt_lbar = factor.mat.transpose() * l_bar;
    Eigen::MatrixXd phi = lt_lbar.triangularView<Eigen::Lower>();
    phi.diagonal() *= 0.5;
    // G = L^-T phi L^-1
    const Eigen::MatrixXd inner =
        factor.mat.transpose().triangularView<Eigen::Upper>().solve(phi.transpose()).transpose();
    const Eigen::MatrixXd g = factor.mat.transpose().triangularView<Eigen::Upper>().solve(inner);
    return 0.5 * (g + g.transpose());
}

}  // namespace detail

struct BlurGrads {
    Eigen::VectorXd gp;      // flat layout of gp_to_flat
    Eigen::MatrixXd y_f;     // horizon x d_y
};

/**
 * Gradient of <upstream, blurred> with eps held fixed: the mean path is the
 * identity, and the covariance path runs through the Cholesky factor, the
 * Nystrom form, and the kernel hyperparameters. Variational parameters do
 * not enter sampling and receive zero gradient.
 */
inline BlurGrads blur_backward(const BlurDraw& draw, const Eigen::MatrixXd& upstream,
                               const GPParams& gp, const Eigen::MatrixXd& y_f) {
    if (!draw.from_gp) throw StaleDraw("blur_backward: draw was not produced by sample_blur");
    if (upstream.rows() != draw.blurred.rows() || upstream.cols() != draw.blurred.cols())
        throw StaleDraw("blur_backward: upstream shape disagrees with the draw");
    if (draw.params_checksum != gp_to_flat(gp).sum())
        throw StaleDraw("blur_backward: draw was produced under different gp parameters");
    const Eigen::MatrixXd replay =
        y_f + draw.factor.mat.triangularView<Eigen::Lower>() * draw.eps;
    if ((replay - draw.blurred).cwiseAbs().maxCoeff() != 0.0)
        throw StaleDraw("blur_backward: draw was produced under a different forecast");

    const Eigen::Index m = gp.inducing_count();
    BlurGrads grads;
    grads.y_f = upstream;

    // d<upstream, L eps>/dL, lower triangle only.
    Eigen::MatrixXd l_bar = (upstream * draw.eps.transpose()).triangularView<Eigen::Lower>();
    const Eigen::MatrixXd sigma_bar = detail::cholesky_pullback(draw.factor, l_bar);

    const double sigma2 = gp.noise() * gp.noise();
    const double d_log_noise = 2.0 * sigma2 * sigma_bar.trace();

    Eigen::MatrixXd cross_bar = 2.0 * sigma_bar * draw.work.projector;
    Eigen::MatrixXd gram_bar =
        -draw.work.projector.transpose() * sigma_bar * draw.work.projector;
    const detail::KernelPullback kp = detail::kernel_pullback(draw.work, gp, cross_bar, gram_bar);

    grads.gp = Eigen::VectorXd::Zero(gp_flat_size(m));
    grads.gp(0) = kp.d_log_lengthscale;
    grads.gp(1) = kp.d_log_amplitude;
    grads.gp(2) = d_log_noise;
    grads.gp.segment(3, m) = kp.d_inducing;
    return grads;
}

/// Gradient of <upstream, blurred> for the isotropic blur: the scalar width
/// collects <upstream, eps>; zero if the requested width sat outside [0, 0.1].
inline double isotropic_blur_backward(const BlurDraw& draw, const Eigen::MatrixXd& upstream,
                                      double sigma_iso) {
    if (draw.from_gp) throw StaleDraw("isotropic_blur_backward: draw came from the gp blur");
    if (upstream.rows() != draw.blurred.rows() || upstream.cols() != draw.blurred.cols())
        throw StaleDraw("isotropic_blur_backward: upstream shape disagrees with the draw");
    if (sigma_iso < 0.0 || sigma_iso > 0.1) return 0.0;
    return (upstream.array() * draw.eps.array()).sum();
}

/**
 * Sparse variational evidence lower bound with Gaussian likelihood, summed
 * over channels of obs. With A = C Q^-1, mu = A m, and marginal variances
 * v_i = a^2 - (A C^T)_ii + (A S A^T)_ii:
 *
 *   sum_{c,i} [ log N(obs[i,c] | mu_i, sigma^2) - v_i / (2 sigma^2) ]
 *     - d_y * KL( N(m, S) || N(0, Q) )
 */
inline double elbo(const GPParams& gp, const Eigen::MatrixXd& obs, const Eigen::VectorXd& times) {
    if (obs.rows() != times.size())
        throw DimensionMismatch("elbo: obs rows disagree with horizon points");
    if (!obs.allFinite()) throw NonFiniteValue("elbo: observations contain non-finite entries");

    const GPWork w = gp_work(gp, times);
    const Eigen::Index horizon = times.size();
    const double d_y = static_cast<double>(obs.cols());
    const double a2 = gp.amplitude() * gp.amplitude();
    const double sigma2 = gp.noise() * gp.noise();

    const Eigen::VectorXd mu = w.projector * gp.var_mean;
    const Eigen::VectorXd q = (w.projector.array() * w.cross.array()).rowwise().sum();
    const Eigen::MatrixXd p = w.projector * gp.var_chol;
    const Eigen::VectorXd v =
        Eigen::VectorXd::Constant(horizon, a2) - q + p.rowwise().squaredNorm();

    const Eigen::MatrixXd resid = obs.colwise() - mu;
    const double data_term =
        d_y * static_cast<double>(horizon) * (-0.5 * std::log(2.0 * M_PI) - gp.log_noise) -
        resid.squaredNorm() / (2.0 * sigma2) - d_y * v.sum() / (2.0 * sigma2);

    const Eigen::VectorXd qinv_m = cholesky_solve(w.gram_chol.factor, gp.var_mean);
    const Eigen::MatrixXd s = gp.var_chol * gp.var_chol.transpose();
    const double trace_term = cholesky_solve(w.gram_chol.factor, s).trace();
    const double log_det_q = cholesky_log_det(w.gram_chol.factor);
    const double log_det_s = 2.0 * gp.var_chol.diagonal().array().log().sum();
    const double kl = 0.5 * (trace_term + gp.var_mean.dot(qinv_m) -
                             static_cast<double>(gp.inducing_count()) + log_det_q - log_det_s);
    return data_term - d_y * kl;
}

inline double elbo(const GPParams& gp, const Eigen::MatrixXd& obs) {
    return elbo(gp, obs, horizon_times(obs.rows()));
}

/// Exact gradient of elbo() with respect to every flat parameter.
inline Eigen::VectorXd elbo_backward(const GPParams& gp, const Eigen::MatrixXd& obs,
                                     const Eigen::VectorXd& times) {
    if (obs.rows() != times.size())
        throw DimensionMismatch("elbo_backward: obs rows disagree with horizon points");

    const GPWork w = gp_work(gp, times);
    const Eigen::Index m = gp.inducing_count();
    const Eigen::Index horizon = times.size();
    const double d_y = static_cast<double>(obs.cols());
    const double a2 = gp.amplitude() * gp.amplitude();
    const double sigma2 = gp.noise() * gp.noise();

    const Eigen::VectorXd mu = w.projector * gp.var_mean;
    const Eigen::VectorXd q = (w.projector.array() * w.cross.array()).rowwise().sum();
    const Eigen::MatrixXd p = w.projector * gp.var_chol;
    const Eigen::VectorXd v =
        Eigen::VectorXd::Constant(horizon, a2) - q + p.rowwise().squaredNorm();
    const Eigen::MatrixXd resid = obs.colwise() - mu;

    Eigen::VectorXd grads = Eigen::VectorXd::Zero(gp_flat_size(m));

    grads(2) = -d_y * static_cast<double>(horizon) +
               (resid.squaredNorm() + d_y * v.sum()) / sigma2;

    const Eigen::VectorXd mu_bar = resid.rowwise().sum() / sigma2;
    const double v_bar = -d_y / (2.0 * sigma2);

    grads(1) += v_bar * static_cast<double>(horizon) * 2.0 * a2;

    Eigen::MatrixXd projector_bar = Eigen::MatrixXd::Zero(horizon, m);
    Eigen::MatrixXd cross_bar = Eigen::MatrixXd::Zero(horizon, m);
    Eigen::MatrixXd gram_bar = Eigen::MatrixXd::Zero(m, m);
    Eigen::MatrixXd chol_bar;  // cotangent of var_chol as a dense matrix
    Eigen::VectorXd mean_bar;  // cotangent of var_mean

    const Eigen::MatrixXd p_bar = 2.0 * v_bar * p;
    chol_bar = w.projector.transpose() * p_bar;
    projector_bar += p_bar * gp.var_chol.transpose();

    projector_bar += mu_bar * gp.var_mean.transpose();
    mean_bar = w.projector.transpose() * mu_bar;

    projector_bar += -v_bar * w.cross;
    cross_bar += -v_bar * w.projector;

    detail::projector_pullback(w, projector_bar, cross_bar, gram_bar);

    // KL(N(m, S) || N(0, Q)) enters as -d_y * KL.
    const Eigen::MatrixXd qinv_chol = cholesky_solve(w.gram_chol.factor, gp.var_chol);
    const Eigen::VectorXd qinv_m = cholesky_solve(w.gram_chol.factor, gp.var_mean);
    const Eigen::MatrixXd s = gp.var_chol * gp.var_chol.transpose();
    const Eigen::MatrixXd qinv = cholesky_solve(
        w.gram_chol.factor, Eigen::MatrixXd::Identity(m, m));
    Eigen::MatrixXd kl_chol_bar = qinv_chol;
    kl_chol_bar.diagonal() -= gp.var_chol.diagonal().cwiseInverse();
    const Eigen::MatrixXd kl_gram_bar =
        0.5 * (-cholesky_solve(w.gram_chol.factor, s) * qinv - qinv_m * qinv_m.transpose() + qinv);

    mean_bar += -d_y * qinv_m;
    chol_bar += -d_y * kl_chol_bar;
    gram_bar += -d_y * kl_gram_bar;

    const detail::KernelPullback kp = detail::kernel_pullback(w, gp, cross_bar, gram_bar);
    grads(0) += kp.d_log_lengthscale;
    grads(1) += kp.d_log_amplitude;
    grads.segment(3, m) += kp.d_inducing;
    grads.segment(3 + m, m) = mean_bar;

    Eigen::Index k = 3 + 2 * m;
    for (Eigen::Index i = 0; i < m; ++i)
        for (Eigen::Index j = 0; j <= i; ++j)
            grads(k++) = i == j ? chol_bar(i, i) * gp.var_chol(i, i) : chol_bar(i, j);
    return grads;
}

inline Eigen::VectorXd elbo_backward(const GPParams& gp, const Eigen::MatrixXd& obs) {
    return elbo_backward(gp, obs, horizon_times(obs.rows()));
}

/// Library defaults: M = max(4, horizon/4) equally spaced inducing points,
/// zero variational mean, var_chol = chol(gram) so the KL starts at zero.
inline GPParams default_gp_params(Eigen::Index horizon, double lengthscale = 0.2,
                                  double amplitude = 0.002, double noise = 5e-4,
                                  Eigen::Index inducing = 0) {
    GPParams gp;
    gp.log_lengthscale = std::log(lengthscale);
    gp.log_amplitude = std::log(amplitude);
    gp.log_noise = std::log(noise);
    const Eigen::Index m = inducing > 0 ? inducing : std::max<Eigen::Index>(4, horizon / 4);
    gp.inducing_locations = Eigen::VectorXd::LinSpaced(m, 0.0, 1.0);
    gp.var_mean = Eigen::VectorXd::Zero(m);
    gp.var_chol =
        cholesky(rbf_kernel(gp.inducing_locations, gp.inducing_locations, gp)).mat;
    gp.validate();
    return gp;
}

}  // namespace fbd
