#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include <Eigen/Dense>

namespace fbd {

/**
 * Seeded, stream-addressable random source.
 *
 * The generator is pinned so that draw sequences are reproducible across
 * platforms and builds: the core engine is std::mt19937_64 (output fully
 * specified by the standard), seeded from (seed, stream_id) through
 * splitmix64, and all real-valued transforms are written out explicitly
 * rather than delegated to implementation-defined distributions.
 *
 * Value semantics: copy a stream to fork its state; a single instance is
 * consumed sequentially.
 */
class RngStream {
public:
    RngStream(std::uint64_t seed, std::uint64_t stream_id)
        : seed_(seed), stream_id_(stream_id),
          engine_(mix(mix(seed) ^ mix(stream_id * 0x9E3779B97F4A7C15ull + 1))) {}

    std::uint64_t seed() const { return seed_; }
    std::uint64_t stream_id() const { return stream_id_; }

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform draw in [0, 1) with 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1p-53; }

    /// Uniform integer in [0, n), n >= 1. Modulo bias is negligible for n << 2^64.
    std::uint64_t uniform_index(std::uint64_t n) { return next_u64() % n; }

    /**
     * Standard normal draw via the Box-Muller cosine branch. Consumes two
     * uniforms per draw; u1 is shifted into (0, 1] so the log is finite.
     */
    double normal() {
        const double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1p-53;
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    Eigen::VectorXd normal_vector(Eigen::Index n) {
        Eigen::VectorXd v(n);
        for (Eigen::Index i = 0; i < n; ++i) v(i) = normal();
        return v;
    }

    /// Column-major fill; the traversal order is part of the pinned contract.
    Eigen::MatrixXd normal_matrix(Eigen::Index rows, Eigen::Index cols) {
        Eigen::MatrixXd m(rows, cols);
        for (Eigen::Index c = 0; c < cols; ++c)
            for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = normal();
        return m;
    }

    /// In-place Fisher-Yates; std::shuffle is implementation-defined, this is not.
    template <typename T>
    void shuffle(std::vector<T>& items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(uniform_index(i));
            std::swap(items[i - 1], items[j]);
        }
    }

private:
    static std::uint64_t mix(std::uint64_t x) {
        // splitmix64 finalizer
        x += 0x9E3779B97F4A7C15ull;
        x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
        x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
        return x ^ (x >> 31);
    }

    std::uint64_t seed_;
    std::uint64_t stream_id_;
    std::mt19937_64 engine_;
};

}  // namespace fbd
