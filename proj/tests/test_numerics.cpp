#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "fbd/numerics.hpp"
#include "fbd/rng.hpp"
#include "fbd/sha256.hpp"

#include "support.hpp"

using Catch::Approx;

TEST_CASE("rng golden vector for seed 42 stream 0") {
    // Pinned draws: the generator algorithm is fixed, so these values must
    // hold on every platform and build.
    const std::uint64_t expected[16] = {
        0x25e615d185cb1ef3ull, 0x318bccde25986a48ull, 0xa02a6bc4698ca594ull, 0x9b7ed38fd557b536ull,
        0x01c7217e4dcbc6feull, 0x006c480d4b712bf8ull, 0xc0a5f07639a53007ull, 0x1c27abfbeceab64cull,
        0x5992d499fe33c395ull, 0x2092bfed705271b4ull, 0xc3be1a396d76784bull, 0x4003c37deef2d8dfull,
        0x89716ee6b064ddbbull, 0x740c8df7e8085487ull, 0xc56413136b7c744dull, 0x58ea016c636f5724ull,
    };
    fbd::RngStream rng(42, 0);
    for (std::uint64_t v : expected) CHECK(rng.next_u64() == v);
}

TEST_CASE("rng determinism and stream separation") {
    fbd::RngStream a(123, 4), b(123, 4), c(123, 5), d(124, 4);
    bool all_equal = true, c_differs = false, d_differs = false;
    for (int i = 0; i < 64; ++i) {
        const std::uint64_t va = a.next_u64();
        all_equal = all_equal && va == b.next_u64();
        c_differs = c_differs || va != c.next_u64();
        d_differs = d_differs || va != d.next_u64();
    }
    CHECK(all_equal);
    CHECK(c_differs);
    CHECK(d_differs);
}

TEST_CASE("rng uniform range and mean") {
    fbd::RngStream rng(9, 0);
    double sum = 0.0;
    for (int i = 0; i < 100000; ++i) {
        const double u = rng.uniform();
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
        sum += u;
    }
    CHECK(sum / 100000.0 == Approx(0.5).margin(0.01));
}

TEST_CASE("rng normal moments") {
    fbd::RngStream rng(11, 2);
    const int n = 200000;
    double sum = 0.0, sum_sq = 0.0;
    for (int i = 0; i < n; ++i) {
        const double x = rng.normal();
        sum += x;
        sum_sq += x * x;
    }
    CHECK(sum / n == Approx(0.0).margin(0.01));
    CHECK(sum_sq / n == Approx(1.0).margin(0.02));
}

TEST_CASE("rng uniform_index stays in range and covers values") {
    fbd::RngStream rng(3, 1);
    std::vector<int> counts(7, 0);
    for (int i = 0; i < 7000; ++i) {
        const std::size_t k = rng.uniform_index(7);
        REQUIRE(k < 7);
        ++counts[k];
    }
    for (int c : counts) CHECK(c > 700);
}

TEST_CASE("rng shuffle is a permutation and is seeded") {
    std::vector<int> base(10);
    for (int i = 0; i < 10; ++i) base[static_cast<std::size_t>(i)] = i;
    std::vector<int> x = base, y = base;
    fbd::RngStream ra(5, 0), rb(5, 0);
    ra.shuffle(x);
    rb.shuffle(y);
    CHECK(x == y);
    std::vector<int> sorted = x;
    std::sort(sorted.begin(), sorted.end());
    CHECK(sorted == base);
}

TEST_CASE("normal_matrix fills deterministically by column") {
    fbd::RngStream a(21, 0), b(21, 0);
    const Eigen::MatrixXd m = a.normal_matrix(3, 2);
    Eigen::MatrixXd expected(3, 2);
    for (Eigen::Index c = 0; c < 2; ++c)
        for (Eigen::Index r = 0; r < 3; ++r) expected(r, c) = b.normal();
    CHECK((m - expected).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("cholesky identity") {
    const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(5, 5);
    const fbd::JitteredCholesky f = fbd::cholesky_jittered(eye);
    CHECK(f.jitter == 0.0);
    CHECK((f.factor.mat - eye).cwiseAbs().maxCoeff() == Approx(0.0).margin(1e-14));
}

TEST_CASE("cholesky hand factorization") {
    Eigen::MatrixXd a(2, 2);
    a << 4, 2, 2, 3;
    const fbd::LowerTriangular l = fbd::cholesky(a);
    CHECK(l.mat(0, 0) == Approx(2.0));
    CHECK(l.mat(0, 1) == 0.0);
    CHECK(l.mat(1, 0) == Approx(1.0));
    CHECK(l.mat(1, 1) == Approx(std::sqrt(2.0)));
}

TEST_CASE("cholesky construct-then-factor recovers the product") {
    fbd::RngStream rng(17, 0);
    for (const Eigen::Index n : {2, 8, 64, 512}) {
        Eigen::MatrixXd l0 = Eigen::MatrixXd::Zero(n, n);
        for (Eigen::Index i = 0; i < n; ++i) {
            for (Eigen::Index j = 0; j < i; ++j) l0(i, j) = 0.3 * rng.normal();
            l0(i, i) = 0.5 + rng.uniform();
        }
        const Eigen::MatrixXd a = l0 * l0.transpose();
        const fbd::LowerTriangular l = fbd::cholesky(a);
        const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
        CHECK((l.mat * l.mat.transpose() - a).cwiseAbs().maxCoeff() <= 1e-8 * scale);
        for (Eigen::Index i = 0; i < n; ++i) REQUIRE(l.mat(i, i) > 0.0);
    }
}

TEST_CASE("cholesky jitter escalation on a singular matrix") {
    Eigen::MatrixXd a = Eigen::MatrixXd::Ones(3, 3);  // rank one
    const fbd::JitteredCholesky f = fbd::cholesky_jittered(a);
    CHECK(f.jitter > 0.0);
    const Eigen::MatrixXd target = a + f.jitter * Eigen::MatrixXd::Identity(3, 3);
    CHECK((f.factor.mat * f.factor.mat.transpose() - target).cwiseAbs().maxCoeff() <= 1e-8);
}

TEST_CASE("cholesky rejects what the schedule cannot fix") {
    Eigen::MatrixXd a(2, 2);
    a << 1, 0, 0, -1;
    CHECK_THROWS_AS(fbd::cholesky_jittered(a), fbd::NotFactorizable);
}

TEST_CASE("cholesky rejects asymmetric input") {
    Eigen::MatrixXd a(2, 2);
    a << 1, 0.5, 0.2, 1;
    CHECK_THROWS_AS(fbd::cholesky_jittered(a), fbd::NotSymmetric);
}

TEST_CASE("cholesky_solve matches a dense solve") {
    fbd::RngStream rng(23, 0);
    const Eigen::MatrixXd g = rng.normal_matrix(6, 6);
    const Eigen::MatrixXd a =
        g * g.transpose() + 0.5 * Eigen::MatrixXd::Identity(6, 6);
    const Eigen::MatrixXd rhs = rng.normal_matrix(6, 3);
    const Eigen::MatrixXd x = fbd::cholesky_solve(fbd::cholesky(a), rhs);
    CHECK((a * x - rhs).cwiseAbs().maxCoeff() <= 1e-10);
}

TEST_CASE("cholesky_log_det matches the dense determinant") {
    fbd::RngStream rng(29, 0);
    const Eigen::MatrixXd g = rng.normal_matrix(5, 5);
    const Eigen::MatrixXd a = g * g.transpose() + Eigen::MatrixXd::Identity(5, 5);
    CHECK(fbd::cholesky_log_det(fbd::cholesky(a)) == Approx(std::log(a.determinant())).epsilon(1e-10));
}

TEST_CASE("mvn sample with zero eps returns the mean") {
    Eigen::MatrixXd a(3, 3);
    a << 2, 0.3, 0.1, 0.3, 1.5, 0.2, 0.1, 0.2, 1.0;
    const fbd::LowerTriangular l = fbd::cholesky(a);
    const Eigen::VectorXd mean = Eigen::Vector3d(1.0, -2.0, 0.5);
    const fbd::MvnDraw draw = fbd::mvn_sample_with_eps(mean, l, Eigen::VectorXd::Zero(3));
    CHECK((draw.sample - mean).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("mvn sample determinism") {
    const fbd::LowerTriangular l = fbd::cholesky(Eigen::MatrixXd::Identity(4, 4));
    const Eigen::VectorXd mean = Eigen::VectorXd::Zero(4);
    fbd::RngStream a(42, 7), b(42, 7);
    const fbd::MvnDraw da = fbd::mvn_sample(mean, l, a);
    const fbd::MvnDraw db = fbd::mvn_sample(mean, l, b);
    CHECK((da.sample - db.sample).cwiseAbs().maxCoeff() == 0.0);
    CHECK((da.eps - db.eps).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("mvn sample dimension mismatch") {
    const fbd::LowerTriangular l = fbd::cholesky(Eigen::MatrixXd::Identity(4, 4));
    fbd::RngStream rng(1, 0);
    CHECK_THROWS_AS(fbd::mvn_sample(Eigen::VectorXd::Zero(3), l, rng), fbd::DimensionMismatch);
}

TEST_CASE("mvn sample tiny factor std over many draws") {
    fbd::LowerTriangular l;
    l.mat = 1e-4 * Eigen::MatrixXd::Identity(2, 2);
    const Eigen::VectorXd mean = Eigen::Vector2d(3.0, -1.0);
    fbd::RngStream rng(5, 5);
    const int n = 100000;
    Eigen::Vector2d sum_sq = Eigen::Vector2d::Zero();
    for (int i = 0; i < n; ++i) {
        const fbd::MvnDraw d = fbd::mvn_sample(mean, l, rng);
        sum_sq += (d.sample - mean).cwiseProduct(d.sample - mean);
    }
    for (int k = 0; k < 2; ++k)
        CHECK(std::sqrt(sum_sq(k) / n) == Approx(1e-4).epsilon(0.05));
}

TEST_CASE("mvn empirical covariance approaches the factor product") {
    fbd::RngStream gen(31, 0);
    Eigen::MatrixXd l0 = Eigen::MatrixXd::Zero(8, 8);
    for (Eigen::Index i = 0; i < 8; ++i) {
        for (Eigen::Index j = 0; j < i; ++j) l0(i, j) = 0.2 * gen.normal();
        l0(i, i) = 0.8 + 0.4 * gen.uniform();
    }
    const Eigen::MatrixXd target = l0 * l0.transpose();
    fbd::LowerTriangular l;
    l.mat = l0;
    const Eigen::VectorXd mean = Eigen::VectorXd::Zero(8);
    fbd::RngStream rng(32, 0);
    const int n = 10000;
    Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(8, 8);
    for (int i = 0; i < n; ++i) {
        const fbd::MvnDraw d = fbd::mvn_sample(mean, l, rng);
        acc += d.sample * d.sample.transpose();
    }
    acc /= n;
    const double scale = target.cwiseAbs().maxCoeff();
    CHECK((acc - target).cwiseAbs().maxCoeff() <= 0.05 * scale);
}

TEST_CASE("finite_diff_check on an exact quadratic") {
    auto f = [](const Eigen::VectorXd& x) { return 0.5 * x.squaredNorm(); };
    auto grad = [](const Eigen::VectorXd& x) { return Eigen::VectorXd(x); };
    Eigen::VectorXd point(3);
    point << 0.3, -1.2, 2.0;
    CHECK(fbd::finite_diff_check(f, grad, point) <= 1e-6);
}

TEST_CASE("finite_diff_check on sine") {
    auto f = [](const Eigen::VectorXd& x) { return std::sin(x(0)); };
    auto grad = [](const Eigen::VectorXd& x) {
        Eigen::VectorXd g(1);
        g << std::cos(x(0));
        return g;
    };
    Eigen::VectorXd point(1);
    point << 0.3;
    CHECK(fbd::finite_diff_check(f, grad, point) <= 1e-6);
}

TEST_CASE("finite_diff_check flags a wrong gradient") {
    auto f = [](const Eigen::VectorXd& x) { return 0.5 * x.squaredNorm(); };
    auto wrong = [](const Eigen::VectorXd& x) { return Eigen::VectorXd(2.0 * x); };
    Eigen::VectorXd point(1);
    point << 1.0;
    CHECK(fbd::finite_diff_check(f, wrong, point) == Approx(0.5).margin(1e-4));
}

TEST_CASE("finite_diff_check rejects non-finite evaluations") {
    auto f = [](const Eigen::VectorXd& x) { return std::log(x(0)); };
    auto grad = [](const Eigen::VectorXd& x) { return Eigen::VectorXd(x.cwiseInverse()); };
    Eigen::VectorXd point(1);
    point << 0.0;  // log evaluates to -inf inside the stencil
    CHECK_THROWS_AS(fbd::finite_diff_check(f, grad, point), fbd::NonFiniteValue);
}

TEST_CASE("lower triangular apply matches dense multiply") {
    fbd::RngStream rng(41, 0);
    Eigen::MatrixXd l0 = Eigen::MatrixXd::Zero(4, 4);
    for (Eigen::Index i = 0; i < 4; ++i) {
        for (Eigen::Index j = 0; j <= i; ++j) l0(i, j) = rng.normal();
        l0(i, i) = std::abs(l0(i, i)) + 0.1;
    }
    fbd::LowerTriangular l;
    l.mat = l0;
    const Eigen::VectorXd v = rng.normal_vector(4);
    CHECK((l.apply(v) - l0 * v).cwiseAbs().maxCoeff() <= 1e-14);
    CHECK(l.dim() == 4);
}

TEST_CASE("sha256 known vectors") {
    CHECK(fbd::Sha256::hex_digest("") ==
          "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    CHECK(fbd::Sha256::hex_digest("abc") ==
          "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    CHECK(fbd::Sha256::hex_digest("The quick brown fox jumps over the lazy dog") ==
          "d7a8fbb307d7809469ca9abcb0082e4f8d5651e46d3cdb762d02d0bf37c9e592");
}

TEST_CASE("sha256 streaming equals one-shot") {
    fbd::Sha256 h;
    h.update("fore");
    h.update("cast");
    CHECK(h.finish() == fbd::Sha256::digest("forecast"));
}
