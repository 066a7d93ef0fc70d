#include <algorithm>
#include <set>
#include <string>
#include <vector>

#include <catch2/catch_amalgamated.hpp>

#include "fbd/gradcheck.hpp"

namespace {

const std::vector<std::string> kExpectedComponents{
    "linear backbone",        "mlp backbone",       "blur reparameterization",
    "evidence bound",         "pipeline backbone-only", "pipeline no-blur",
    "pipeline iso-blur",      "pipeline gp-blur",   "pipeline train-blur",
    "pipeline residual",      "composite objective",
};

const fbd::GradCheckResult& find(const std::vector<fbd::GradCheckResult>& results,
                                 const std::string& component) {
    const auto it = std::find_if(results.begin(), results.end(),
                                 [&](const auto& r) { return r.component == component; });
    REQUIRE(it != results.end());
    return *it;
}

}  // namespace

TEST_CASE("gradcheck passes for every component at default dims") {
    const std::vector<fbd::GradCheckResult> results = fbd::run_gradcheck();
    REQUIRE(results.size() == kExpectedComponents.size());

    std::set<std::string> seen;
    for (const auto& r : results) {
        INFO(r.component << " max rel err " << r.max_rel_err << " tol " << r.tolerance);
        CHECK(r.pass);
        CHECK(r.max_rel_err <= r.tolerance);
        seen.insert(r.component);
    }
    for (const auto& name : kExpectedComponents) CHECK(seen.count(name) == 1);
}

TEST_CASE("gradcheck tolerances split by numerical difficulty") {
    const auto results = fbd::run_gradcheck();
    CHECK(find(results, "linear backbone").tolerance == 1e-4);
    CHECK(find(results, "mlp backbone").tolerance == 1e-4);
    CHECK(find(results, "pipeline backbone-only").tolerance == 1e-4);
    CHECK(find(results, "blur reparameterization").tolerance == 1e-3);
    CHECK(find(results, "evidence bound").tolerance == 1e-3);
    CHECK(find(results, "pipeline gp-blur").tolerance == 1e-3);
    CHECK(find(results, "composite objective").tolerance == 1e-3);
}

TEST_CASE("gradcheck is deterministic in dims and seed") {
    const auto first = fbd::run_gradcheck();
    const auto second = fbd::run_gradcheck();
    REQUIRE(first.size() == second.size());
    for (std::size_t i = 0; i < first.size(); ++i) {
        CHECK(first[i].component == second[i].component);
        CHECK(first[i].max_rel_err == second[i].max_rel_err);
    }
}

TEST_CASE("gradcheck covers non-default shapes") {
    fbd::GradCheckDims dims;
    dims.lookback = 6;
    dims.horizon = 3;
    dims.inducing = 3;
    dims.feature_dim = 1;
    dims.target_dim = 2;
    for (const auto& r : fbd::run_gradcheck(dims, 9)) {
        INFO(r.component << " max rel err " << r.max_rel_err);
        CHECK(r.pass);
    }
}

TEST_CASE("a corrupted gradient is reported under the offending component") {
    const std::string victim = GENERATE(std::string("evidence bound"),
                                        std::string("linear backbone"),
                                        std::string("pipeline gp-blur"));
    const fbd::GradTamper tamper = [&](const std::string& component, Eigen::VectorXd grad) {
        if (component == victim) grad(0) += 0.5 + std::abs(grad(0));
        return grad;
    };
    const auto results = fbd::run_gradcheck({}, 42, tamper);
    for (const auto& r : results) {
        INFO(r.component);
        if (r.component == victim)
            CHECK_FALSE(r.pass);
        else
            CHECK(r.pass);
    }
}
