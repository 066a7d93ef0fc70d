#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "fbd/errors.hpp"
#include "fbd/rng.hpp"

namespace fbd {

/// Lower-triangular factor. Factorization routines guarantee a strictly
/// positive diagonal; scaled-identity factors (isotropic blur) may carry 0.
struct LowerTriangular {
    Eigen::MatrixXd mat;

    Eigen::Index dim() const { return mat.rows(); }

    /// L * v without touching the upper triangle.
    Eigen::VectorXd apply(const Eigen::VectorXd& v) const {
        return mat.triangularView<Eigen::Lower>() * v;
    }
};

inline const std::vector<double>& default_jitter_schedule() {
    static const std::vector<double> schedule{0.0, 1e-8, 1e-6, 1e-4};
    return schedule;
}

struct JitteredCholesky {
    LowerTriangular factor;
    double jitter = 0.0;
};

/**
 * Cholesky factorization with an escalating jitter schedule: returns L with
 * L*L^T = A + j*I for the smallest schedule entry j that factorizes.
 * Throws NotFactorizable once the schedule is exhausted.
 */
inline JitteredCholesky cholesky_jittered(const Eigen::MatrixXd& a,
                                          const std::vector<double>& schedule = default_jitter_schedule()) {
    if (a.rows() != a.cols()) throw DimensionMismatch("cholesky: matrix is not square");
    const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
    if ((a - a.transpose()).cwiseAbs().maxCoeff() > 1e-9 * scale)
        throw NotSymmetric("cholesky: matrix is not symmetric within 1e-9");

    for (double jitter : schedule) {
        Eigen::MatrixXd shifted = a;
        if (jitter > 0.0) shifted.diagonal().array() += jitter;
        Eigen::LLT<Eigen::MatrixXd> llt(shifted);
        if (llt.info() == Eigen::Success) {
            Eigen::MatrixXd l = llt.matrixL();
            if ((l.diagonal().array() > 0.0).all()) return {LowerTriangular{std::move(l)}, jitter};
        }
    }
    throw NotFactorizable("cholesky: jitter schedule exhausted (n=" + std::to_string(a.rows()) + ")");
}

inline LowerTriangular cholesky(const Eigen::MatrixXd& a,
                                const std::vector<double>& schedule = default_jitter_schedule()) {
    return cholesky_jittered(a, schedule).factor;
}

/// Solves (L L^T) X = B by two triangular solves.
inline Eigen::MatrixXd cholesky_solve(const LowerTriangular& factor, const Eigen::MatrixXd& b) {
    if (factor.dim() != b.rows())
        throw DimensionMismatch("cholesky_solve: factor dim " + std::to_string(factor.dim()) +
                                " vs rhs rows " + std::to_string(b.rows()));
    const Eigen::MatrixXd y = factor.mat.triangularView<Eigen::Lower>().solve(b);
    return factor.mat.transpose().triangularView<Eigen::Upper>().solve(y);
}

/// log det(L L^T) = 2 * sum(log diag L).
inline double cholesky_log_det(const LowerTriangular& factor) {
    return 2.0 * factor.mat.diagonal().array().log().sum();
}

struct MvnDraw {
    Eigen::VectorXd sample;
    Eigen::VectorXd eps;  // the raw standard-normal draw, kept for gradient flow
};

/// sample = mean + L * eps for a given eps (deterministic path, used by test
/// hooks and reparameterized gradients).
inline MvnDraw mvn_sample_with_eps(const Eigen::VectorXd& mean, const LowerTriangular& factor,
                                   const Eigen::VectorXd& eps) {
    if (factor.dim() != mean.size() || eps.size() != mean.size())
        throw DimensionMismatch("mvn_sample: mean/factor/eps dimensions disagree");
    return {mean + factor.apply(eps), eps};
}

inline MvnDraw mvn_sample(const Eigen::VectorXd& mean, const LowerTriangular& factor, RngStream& rng) {
    if (factor.dim() != mean.size())
        throw DimensionMismatch("mvn_sample: mean/factor dimensions disagree");
    return mvn_sample_with_eps(mean, factor, rng.normal_vector(mean.size()));
}

/**
 * Central-difference check of an analytic gradient.
 *
 * Per coordinate: numeric = (f(x+h e_i) - f(x-h e_i)) / (2h),
 * rel err = |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
 * Returns the maximum relative error over coordinates.
 */
inline double finite_diff_check(const std::function<double(const Eigen::VectorXd&)>& f,
                                const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& grad_f,
                                const Eigen::VectorXd& point, double h = 1e-5) {
    const Eigen::VectorXd analytic = grad_f(point);
    if (analytic.size() != point.size())
        throw DimensionMismatch("finite_diff_check: gradient length disagrees with point");
    double max_rel_err = 0.0;
    Eigen::VectorXd x = point;
    for (Eigen::Index i = 0; i < point.size(); ++i) {
        x(i) = point(i) + h;
        const double f_plus = f(x);
        x(i) = point(i) - h;
        const double f_minus = f(x);
        x(i) = point(i);
        if (!std::isfinite(f_plus) || !std::isfinite(f_minus))
            throw NonFiniteValue("finite_diff_check: non-finite evaluation at coordinate " + std::to_string(i));
        const double numeric = (f_plus - f_minus) / (2.0 * h);
        const double denom = std::max({std::abs(analytic(i)), std::abs(numeric), 1e-8});
        max_rel_err = std::max(max_rel_err, std::abs(analytic(i) - numeric) / denom);
    }
    return max_rel_err;
}

}  // namespace fbd
