#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

#include "fbd/data.hpp"
#include "fbd/gp_blur.hpp"
#include "fbd/rng.hpp"

namespace fbd::test {

/// Dense RBF Gram matrix over the given times, no inducing approximation.
inline Eigen::MatrixXd dense_kernel(const Eigen::VectorXd& times, const GPParams& gp) {
    return rbf_kernel(times, times, gp);
}

/// Exact GP log marginal likelihood log N(obs_col | 0, K + noise^2 I), summed
/// over observation columns. Independent oracle: plain dense algebra via
/// Eigen's LLT, no reuse of the library's ELBO pieces.
inline double exact_log_marginal(const GPParams& gp, const Eigen::MatrixXd& obs,
                                 const Eigen::VectorXd& times) {
    const Eigen::Index n = times.size();
    const double noise_var = gp.noise() * gp.noise();
    const Eigen::MatrixXd cov =
        dense_kernel(times, gp) + noise_var * Eigen::MatrixXd::Identity(n, n);
    const Eigen::LLT<Eigen::MatrixXd> llt(cov);
    double log_det = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) log_det += 2.0 * std::log(llt.matrixL()(i, i));
    double total = 0.0;
    for (Eigen::Index c = 0; c < obs.cols(); ++c) {
        const Eigen::VectorXd alpha = llt.solve(obs.col(c));
        total += -0.5 * obs.col(c).dot(alpha) - 0.5 * log_det -
                 0.5 * static_cast<double>(n) * std::log(2.0 * std::acos(-1.0));
    }
    return total;
}

/// The exact posterior over inducing values when the inducing points sit on
/// the observation grid: mean K (K + noise^2 I)^-1 y, covariance
/// noise^2 (K + noise^2 I)^-1 K. Plugging these into the variational family
/// collapses the bound to the exact log marginal likelihood.
inline void set_exact_posterior(GPParams& gp, const Eigen::VectorXd& obs_col,
                                const Eigen::VectorXd& times) {
    const Eigen::Index n = times.size();
    const double noise_var = gp.noise() * gp.noise();
    const Eigen::MatrixXd kernel = dense_kernel(times, gp);
    const Eigen::MatrixXd cov = kernel + noise_var * Eigen::MatrixXd::Identity(n, n);
    const Eigen::LLT<Eigen::MatrixXd> llt(cov);
    gp.inducing_locations = times;
    gp.var_mean = kernel * llt.solve(obs_col);
    const Eigen::MatrixXd post_cov = noise_var * llt.solve(kernel);
    const Eigen::MatrixXd sym = 0.5 * (post_cov + post_cov.transpose());
    gp.var_chol = Eigen::LLT<Eigen::MatrixXd>(sym).matrixL();
}

/// Scratch directory removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& prefix = "fbd_test") {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() /
                (prefix + "_" + std::to_string(rd()) + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const std::filesystem::path& path() const { return path_; }
    std::string file(const std::string& name) const { return (path_ / name).string(); }

private:
    std::filesystem::path path_;
};

inline Window random_window(RngStream& rng, Eigen::Index lookback, Eigen::Index horizon,
                            Eigen::Index feature_dim, Eigen::Index target_dim) {
    Window w;
    w.history = rng.normal_matrix(lookback, feature_dim + target_dim);
    w.future = rng.normal_matrix(horizon, target_dim);
    w.future_features = rng.normal_matrix(horizon, feature_dim);
    w.cutoff = lookback;
    return w;
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("test support: cannot open " + path);
    std::ostringstream out;
    out << in.rdbuf();
    return out.str();
}

}  // namespace fbd::test
