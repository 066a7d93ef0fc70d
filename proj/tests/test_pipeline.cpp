#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "fbd/numerics.hpp"
#include "fbd/pipeline.hpp"

#include "support.hpp"

using Catch::Approx;
using fbd::test::random_window;

namespace {

constexpr Eigen::Index kLookback = 8, kHorizon = 4, kFeatures = 2, kTargets = 1;

fbd::PipelineModel make_model(fbd::Variant variant) {
    fbd::BackboneSpec spec;
    fbd::GpInit gp;
    gp.inducing = 2;
    return fbd::PipelineModel(variant, spec, kLookback, kFeatures, kTargets, kHorizon, gp);
}

Eigen::VectorXd init_for(const fbd::PipelineModel& model, std::uint64_t seed) {
    fbd::RngStream a(seed, 1), b(seed, 2);
    return model.init_params(a, b);
}

}  // namespace

TEST_CASE("variant names round trip") {
    for (fbd::Variant v : fbd::all_variants()) {
        CHECK(fbd::variant_from_string(fbd::to_string(v)) == v);
    }
    CHECK(fbd::to_string(fbd::Variant::gp_blur) == "gp-blur");
    CHECK(fbd::to_string(fbd::Variant::backbone_only) == "backbone");
    CHECK_THROWS_AS(fbd::variant_from_string("diffusion"), fbd::InvalidConfig);
}

TEST_CASE("denoiser input hand layout") {
    fbd::Window w;
    w.history.resize(2, 2);
    w.history << 0.1, 1.0, 0.2, 2.0;  // [feature | target] rows
    w.future.resize(1, 1);
    w.future << 9.0;
    w.future_features.resize(1, 1);
    w.future_features << 0.3;
    w.cutoff = 2;
    Eigen::MatrixXd y_b(1, 1);
    y_b << 7.5;
    const Eigen::MatrixXd in = fbd::denoiser_input(w, y_b);
    REQUIRE(in.rows() == 3);
    REQUIRE(in.cols() == 2);
    CHECK(in(0, 0) == 0.1);
    CHECK(in(0, 1) == 1.0);
    CHECK(in(1, 0) == 0.2);
    CHECK(in(1, 1) == 2.0);
    CHECK(in(2, 0) == 0.3);
    CHECK(in(2, 1) == 7.5);
}

TEST_CASE("denoiser input sensitivity is one cell per blurred entry") {
    fbd::RngStream rng(1, 0);
    const fbd::Window w = random_window(rng, kLookback, kHorizon, kFeatures, kTargets);
    const Eigen::MatrixXd y_b = rng.normal_matrix(kHorizon, kTargets);
    const Eigen::MatrixXd base = fbd::denoiser_input(w, y_b);
    for (Eigen::Index i = 0; i < kHorizon; ++i) {
        for (Eigen::Index c = 0; c < kTargets; ++c) {
            Eigen::MatrixXd bumped = y_b;
            bumped(i, c) += 1.0;
            const Eigen::MatrixXd in = fbd::denoiser_input(w, bumped);
            Eigen::MatrixXd diff = (in - base).cwiseAbs();
            CHECK(diff.sum() == 1.0);
            CHECK(diff(kLookback + i, kFeatures + c) == 1.0);
        }
    }
}

TEST_CASE("oracle blur feeds the true future to the denoiser") {
    fbd::RngStream rng(2, 0);
    const fbd::Window w = random_window(rng, kLookback, kHorizon, kFeatures, kTargets);
    const Eigen::MatrixXd in = fbd::denoiser_input(w, w.future);
    CHECK((in.block(kLookback, kFeatures, kHorizon, kTargets) - w.future)
              .cwiseAbs()
              .maxCoeff() == 0.0);
}

TEST_CASE("backbone-only output contract") {
    const fbd::PipelineModel model = make_model(fbd::Variant::backbone_only);
    CHECK_FALSE(model.has_denoiser());
    const Eigen::VectorXd params = init_for(model, 3);
    fbd::RngStream rng(4, 0);
    for (int rep = 0; rep < 20; ++rep) {
        const fbd::Window w = random_window(rng, kLookback, kHorizon, kFeatures, kTargets);
        fbd::RngStream noise(5, 0);
        const fbd::PipelineOutput out = model.forward(params, w, fbd::Mode::train, noise);
        CHECK((out.y_d - out.y_f).cwiseAbs().maxCoeff() == 0.0);
        CHECK_FALSE(out.has_blur);
    }
}

TEST_CASE("gp blur with zero noise and an identity denoiser reproduces the forecast") {
    const fbd::PipelineModel model = make_model(fbd::Variant::gp_blur);
    Eigen::VectorXd params = init_for(model, 6);

    // Hand-built linear denoiser that copies the blurred block of its input.
    params.segment(model.denoiser_offset(), model.denoiser_size()).setZero();
    const Eigen::Index in_cols = kFeatures + kTargets;
    const Eigen::Index out_total = kHorizon * kTargets;
    for (Eigen::Index i = 0; i < kHorizon; ++i) {
        for (Eigen::Index c = 0; c < kTargets; ++c) {
            const Eigen::Index in_flat = (kLookback + i) * in_cols + kFeatures + c;
            const Eigen::Index out_flat = i * kTargets + c;
            params(model.denoiser_offset() + in_flat * out_total + out_flat) = 1.0;
        }
    }

    fbd::RngStream rng(7, 0);
    const fbd::Window w = random_window(rng, kLookback, kHorizon, kFeatures, kTargets);
    const fbd::PipelineOutput out =
        model.forward(params, w, fbd::Mode::train, fbd::zero_noise());
    CHECK((out.y_b - out.y_f).cwiseAbs().maxCoeff() == 0.0);
    CHECK((out.y_d - out.y_f).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("train-blur contract differs between modes") {
    const fbd::PipelineModel model = make_model(fbd::Variant::train_blur);
    const Eigen::VectorXd params = init_for(model, 8);
    fbd::RngStream rng(9, 0);
    const fbd::Window w = random_window(rng, kLookback, kHorizon, kFeatures, kTargets);

    fbd::RngStream train_noise(10, 0);
    const fbd::PipelineOutput trained = model.forward(params, w, fbd::Mode::train, train_noise);
    CHECK(trained.has_blur);
    CHECK(trained.blur_sampled);
    CHECK((trained.y_b - trained.y_f).cwiseAbs().maxCoeff() > 0.0);

    fbd::RngStream infer_noise(10, 0);
    const fbd::PipelineOutput inferred = model.forward(params, w, fbd::Mode::infer, infer_noise);
    CHECK(inferred.has_blur);
    CHECK_FALSE(inferred.blur_sampled);
    CHECK((inferred.y_b - inferred.y_f).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("gp and iso blur stay active at inference") {
    for (fbd::Variant v : {fbd::Variant::gp_blur, fbd::Variant::iso_blur}) {
        const fbd::PipelineModel model = make_model(v);
        const Eigen::VectorXd params = init_for(model, 11);
        fbd::RngStream rng(12, 0);
        const fbd::Window w = random_window(rng, kLookback, kHorizon, kFeatures, kTargets);
        fbd::RngStream noise(13, 0);
        const fbd::PipelineOutput out = model.forward(params, w, fbd::Mode::infer, noise);
        CHECK(out.has_blur);
        CHECK((out.y_b - out.y_f).cwiseAbs().maxCoeff() > 0.0);
    }
}

TEST_CASE("residual variant adds the head output to the forecast") {
    fbd::BackboneSpec spec;
    const fbd::PipelineModel model(fbd::Variant::residual_boost, spec, kLookback, kFeatures,
                                   kTargets, kHorizon);
    const Eigen::VectorXd params = init_for(model, 14);
    fbd::RngStream rng(15, 0);
    const fbd::Window w = random_window(rng, kLookback, kHorizon, kFeatures, kTargets);
    fbd::RngStream noise(16, 0);
    const fbd::PipelineOutput out = model.forward(params, w, fbd::Mode::train, noise);

    // The head sees the forecast itself in the blurred slot.
    const Eigen::MatrixXd head_in = fbd::denoiser_input(w, out.y_f);
    const Eigen::MatrixXd head = model.denoiser().forward(
        params.segment(model.denoiser_offset(), model.denoiser_size()), head_in);
    CHECK((out.y_d - (out.y_f + head)).cwiseAbs().maxCoeff() <= 1e-14);
    CHECK((out.y_b - out.y_f).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("pipeline output contracts hold over 200 random windows") {
    fbd::RngStream window_rng(17, 0);
    std::vector<fbd::PipelineModel> models;
    std::vector<Eigen::VectorXd> params;
    for (fbd::Variant v : fbd::all_variants()) {
        models.push_back(make_model(v));
        params.push_back(init_for(models.back(), 18 + static_cast<std::uint64_t>(v)));
    }
    fbd::RngStream noise(19, 0);
    for (int rep = 0; rep < 200; ++rep) {
        const fbd::Window w = random_window(window_rng, kLookback, kHorizon, kFeatures, kTargets);
        const fbd::Mode mode = rep % 2 == 0 ? fbd::Mode::train : fbd::Mode::infer;
        for (std::size_t k = 0; k < models.size(); ++k) {
            const fbd::PipelineOutput out = models[k].forward(params[k], w, mode, noise);
            REQUIRE(out.y_f.rows() == kHorizon);
            REQUIRE(out.y_f.cols() == kTargets);
            REQUIRE(out.y_d.rows() == kHorizon);
            REQUIRE(out.y_d.cols() == kTargets);
            REQUIRE(out.y_f.allFinite());
            REQUIRE(out.y_d.allFinite());
            switch (models[k].variant()) {
                case fbd::Variant::backbone_only:
                    CHECK_FALSE(out.has_blur);
                    CHECK((out.y_d - out.y_f).cwiseAbs().maxCoeff() == 0.0);
                    break;
                case fbd::Variant::no_blur:
                    CHECK(out.has_blur);
                    CHECK_FALSE(out.blur_sampled);
                    CHECK((out.y_b - out.y_f).cwiseAbs().maxCoeff() == 0.0);
                    break;
                case fbd::Variant::gp_blur:
                case fbd::Variant::iso_blur:
                    CHECK(out.has_blur);
                    CHECK(out.blur_sampled);
                    break;
                case fbd::Variant::train_blur:
                    CHECK(out.has_blur);
                    CHECK(out.blur_sampled == (mode == fbd::Mode::train));
                    if (mode == fbd::Mode::infer)
                        CHECK((out.y_b - out.y_f).cwiseAbs().maxCoeff() == 0.0);
                    break;
                case fbd::Variant::residual_boost:
                    CHECK(out.has_blur);
                    CHECK_FALSE(out.blur_sampled);
                    break;
            }
        }
    }
}

TEST_CASE("gp blur output converges to the no-blur output as noise vanishes") {
    const fbd::PipelineModel gp_model = make_model(fbd::Variant::gp_blur);
    const fbd::PipelineModel plain_model = make_model(fbd::Variant::no_blur);
    Eigen::VectorXd gp_params = init_for(gp_model, 20);
    const Eigen::VectorXd plain_params = gp_params.head(plain_model.param_size());

    // Forecaster and denoiser share weights; the gp slice gets silenced.
    fbd::GPParams gp = gp_model.gp_params(gp_params);
    gp.log_amplitude = -20.0;
    gp.log_noise = -20.0;
    gp_params.segment(gp_model.blur_offset(), gp_model.blur_size()) = fbd::gp_to_flat(gp);

    fbd::RngStream rng(21, 0);
    for (int rep = 0; rep < 10; ++rep) {
        const fbd::Window w = random_window(rng, kLookback, kHorizon, kFeatures, kTargets);
        fbd::RngStream noise(22, 0);
        const fbd::PipelineOutput a = gp_model.forward(gp_params, w, fbd::Mode::train, noise);
        fbd::RngStream unused(22, 0);
        const fbd::PipelineOutput b =
            plain_model.forward(plain_params, w, fbd::Mode::train, unused);
        CHECK((a.y_d - b.y_d).cwiseAbs().maxCoeff() <= 1e-6);
    }
}

TEST_CASE("consecutive train forwards draw fresh blur") {
    const fbd::PipelineModel model = make_model(fbd::Variant::gp_blur);
    const Eigen::VectorXd params = init_for(model, 23);
    fbd::RngStream rng(24, 0);
    const fbd::Window w = random_window(rng, kLookback, kHorizon, kFeatures, kTargets);
    fbd::RngStream noise(25, 0);
    const fbd::PipelineOutput first = model.forward(params, w, fbd::Mode::train, noise);
    const fbd::PipelineOutput second = model.forward(params, w, fbd::Mode::train, noise);
    CHECK((first.y_b - second.y_b).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("zero loss gradient produces zero parameter gradient") {
    for (fbd::Variant v : fbd::all_variants()) {
        const fbd::PipelineModel model = make_model(v);
        const Eigen::VectorXd params = init_for(model, 26);
        fbd::RngStream rng(27, 0);
        const fbd::Window w = random_window(rng, kLookback, kHorizon, kFeatures, kTargets);
        fbd::RngStream noise(28, 0);
        const fbd::PipelineOutput out = model.forward(params, w, fbd::Mode::train, noise);
        const Eigen::VectorXd grads =
            model.backward(params, out, Eigen::MatrixXd::Zero(kHorizon, kTargets));
        CHECK(grads.cwiseAbs().maxCoeff() == 0.0);
    }
}

TEST_CASE("iso blur sigma parameter receives gradient") {
    const fbd::PipelineModel model = make_model(fbd::Variant::iso_blur);
    const Eigen::VectorXd params = init_for(model, 29);
    REQUIRE(model.blur_size() == 1);
    CHECK(model.sigma_iso(params) == Approx(0.05));
    fbd::RngStream rng(30, 0);
    const fbd::Window w = random_window(rng, kLookback, kHorizon, kFeatures, kTargets);
    fbd::RngStream noise(31, 0);
    const fbd::PipelineOutput out = model.forward(params, w, fbd::Mode::train, noise);
    const Eigen::VectorXd grads = model.backward(params, out, Eigen::MatrixXd::Ones(kHorizon, 1));
    bool saw_nonzero = grads(model.blur_offset()) != 0.0;
    CHECK(saw_nonzero);
}

TEST_CASE("pipeline rejects mismatched windows") {
    const fbd::PipelineModel model = make_model(fbd::Variant::gp_blur);
    const Eigen::VectorXd params = init_for(model, 32);
    fbd::RngStream rng(33, 0);
    const fbd::Window wrong = random_window(rng, kLookback + 1, kHorizon, kFeatures, kTargets);
    fbd::RngStream noise(34, 0);
    CHECK_THROWS_AS(model.forward(params, wrong, fbd::Mode::train, noise), fbd::DimensionMismatch);
    CHECK_THROWS_AS(model.forward(params.head(params.size() - 1),
                                  random_window(rng, kLookback, kHorizon, kFeatures, kTargets),
                                  fbd::Mode::train, noise),
                    fbd::DimensionMismatch);
}
