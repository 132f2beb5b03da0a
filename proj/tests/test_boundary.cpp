#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "safemargin/boundary.hpp"
#include "safemargin/oracle.hpp"
#include "test_support.hpp"

using namespace safemargin;
using namespace sm_test;

namespace {

Mat random_spd(std::mt19937& rng, int m) {
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    Mat A(m, m);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j)
            A(i, j) = dist(rng);
    return A.transpose() * A + 0.5 * Mat::Identity(m, m);
}

Vec random_vec(std::mt19937& rng, int m, double lo = -2.0, double hi = 2.0) {
    std::uniform_real_distribution<double> dist(lo, hi);
    Vec v(m);
    for (int i = 0; i < m; ++i)
        v[i] = dist(rng);
    return v;
}

} // namespace

TEST_CASE("backtrack arithmetic") {
    Vec p = vec2(0.0, 0.0);
    Vec target = vec2(1.0, 0.0);
    auto candidate = [&target](const Vec&) { return target; };

    // member at m = 0
    auto always = [](const Vec&) { return true; };
    auto [r0, m0] = backtrack(candidate, p, always, 10);
    CHECK(m0 == 0);
    CHECK(r0[0] == 1.0);

    // member fails at m = 0, 1 and passes at m = 2: p + (target - p)/4
    auto quarter = [](const Vec& q) { return q[0] <= 0.26; };
    auto [r2, m2] = backtrack(candidate, p, quarter, 10);
    CHECK(m2 == 2);
    CHECK(r2[0] == doctest::Approx(0.25).epsilon(1e-15));

    // exhaustion
    auto never = [](const Vec&) { return false; };
    CHECK_THROWS_AS(backtrack(candidate, p, never, 5), LineSearchFailed);
}

TEST_CASE("tangent rotation, normalization and sign continuity") {
    Vec w = vec2(1.0, 0.0);
    Vec eta = tangent(w);
    CHECK(eta[0] == doctest::Approx(0.0));
    CHECK(eta[1] == doctest::Approx(1.0));

    eta = tangent(vec2(3.0, 4.0));
    CHECK(eta[0] == doctest::Approx(-0.8));
    CHECK(eta[1] == doctest::Approx(0.6));

    // config tie-break for the first step
    eta = tangent(w, nullptr, -1);
    CHECK(eta[1] == doctest::Approx(-1.0));

    // continuation keeps the direction aligned with the previous tangent
    Vec prev = vec2(0.1, -0.995);
    eta = tangent(vec2(3.0, 4.0), &prev);
    CHECK(eta.dot(prev) > 0.0);

    // orthogonality is exact for random inputs
    std::mt19937 rng(7u);
    for (int i = 0; i < 100; ++i) {
        Vec v = random_vec(rng, 2);
        if (v.norm() == 0.0)
            continue;
        Vec t = tangent(v);
        CHECK(std::abs(t.dot(v)) <= 1e-12 * v.norm());
        CHECK(t.norm() == doctest::Approx(1.0).epsilon(1e-14));
    }

    CHECK_THROWS_AS(tangent(vec2(0.0, 0.0)), ZeroGradient);
}

TEST_CASE("sqp_step closed form") {
    // hand-checked instance
    Metric metric(Mat::Identity(2, 2));
    Vec p0 = vec2(0.0, 0.0);
    Vec p = vec2(1.0, 0.0);
    Vec w = vec2(1.0, 0.0);
    Vec next = sqp_step(p, p0, metric, w, 0.5, 0.1);
    CHECK(next[0] == doctest::Approx(0.6).epsilon(1e-15));
    CHECK(next[1] == doctest::Approx(0.0));

    CHECK_THROWS_AS(sqp_step(p, p0, metric, vec2(0.0, 0.0), 0.5, 0.1), ZeroGradient);
}

TEST_CASE("sqp_step satisfies the linearized constraint exactly") {
    std::mt19937 rng(20250101u);
    for (int trial = 0; trial < 100; ++trial) {
        const int m = 2 + (trial % 3);  // 2..4 dimensional
        Metric metric(random_spd(rng, m));
        Vec p0 = random_vec(rng, m);
        Vec p = random_vec(rng, m);
        Vec w = random_vec(rng, m);
        if (w.norm() < 1e-3)
            continue;
        std::uniform_real_distribution<double> gd(0.01, 1.0);
        const double g = gd(rng);
        const double eps = 0.1 * gd(rng);
        Vec next = sqp_step(p, p0, metric, w, g, eps);
        // g + w.(F(p) - p) == eps
        const double residual = g + w.dot(next - p) - eps;
        CHECK(std::abs(residual) <= 1e-12);
    }
}

TEST_CASE("sqp_step fixed point at KKT conditions") {
    // g = eps and P(p - p0) parallel to w  =>  F(p) = p
    std::mt19937 rng(99u);
    Metric metric(random_spd(rng, 2));
    Vec p0 = random_vec(rng, 2);
    Vec w = random_vec(rng, 2);
    const double lambda = 0.37;
    Vec p = p0 + lambda * metric.solve(w);  // P(p-p0) = lambda w
    const double eps = 1e-3;
    Vec next = sqp_step(p, p0, metric, w, eps, eps);
    CHECK((next - p).norm() <= 1e-13 * std::max(1.0, p.norm()));
}

TEST_CASE("boundary_1d on SMIB with p2 frozen") {
    SystemModel model = load_smib();
    const Vec p0 = vec2(1.9, 1.5);

    BoundaryPoint bp = boundary_1d(model, p0, /*axis=*/0, model.algo);
    CHECK(bp.iterations <= 30);
    CHECK(bp.g_residual <= model.algo.tol_g);
    CHECK(bp.p[1] == 1.5);  // frozen coordinate untouched
    CHECK(classify(model, bp.p).recovered());

    // oracle: ray bisection along the same axis
    const Vec p_oracle = ray_bisect(model, p0, vec2(1.2, 1.5), 1e-6);
    CHECK(std::abs(bp.p[0] - p_oracle[0]) <= 1e-3);

    // already-converged start returns immediately
    BoundaryPoint again = boundary_1d(model, bp.p, 0, model.algo);
    CHECK(again.iterations == 0);
    CHECK(again.p[0] == bp.p[0]);

    CHECK_THROWS_AS(boundary_1d(model, vec2(1.9, 1.85), 0, model.algo),
                    std::invalid_argument);
}

TEST_CASE("trace_2d follows the SMIB boundary") {
    SystemModel model = load_smib();
    BoundaryPoint seed = boundary_1d(model, vec2(1.9, 1.5), /*axis=*/1, model.algo);

    const int n_points = 6;
    std::vector<BoundaryPoint> trace = trace_2d(model, seed.p, model.algo, n_points);
    REQUIRE(static_cast<int>(trace.size()) == n_points);

    Vec prev = seed.p;
    for (const auto& bp : trace) {
        CHECK(bp.g_residual <= model.algo.tol_g);
        CHECK(classify(model, bp.p).recovered());
        const double spacing = (bp.p - prev).norm();
        CHECK(spacing >= 0.8 * model.algo.kappa);
        CHECK(spacing <= 1.2 * model.algo.kappa);
        // eta is unit and orthogonal to the hyperplane residual direction
        CHECK(bp.eta.norm() == doctest::Approx(1.0).epsilon(1e-12));
        prev = bp.p;
    }

    // each traced point sits on the true boundary: bisect a short
    // perpendicular segment through it and compare
    for (const auto& bp : trace) {
        Vec normal(2);
        normal << bp.eta[1], -bp.eta[0];
        Vec inward = bp.p - 0.02 * normal;
        Vec outward = bp.p + 0.02 * normal;
        if (!classify(model, inward).recovered())
            std::swap(inward, outward);
        REQUIRE(classify(model, inward).recovered());
        REQUIRE_FALSE(classify(model, outward).recovered());
        Vec b = ray_bisect(model, inward, outward, 1e-6);
        CHECK((bp.p - b).norm() <= 1e-3);
    }

    // refusing a far-from-boundary start
    CHECK_THROWS_AS(trace_2d(model, vec2(1.9, 1.5), model.algo, 3),
                    std::invalid_argument);

    // the live-tangent corrector variant traces the same boundary
    AlgoOptions live = model.algo;
    live.corrector_eta_frozen = false;
    std::vector<BoundaryPoint> live_trace = trace_2d(model, seed.p, live, 3);
    for (std::size_t i = 0; i < live_trace.size(); ++i) {
        CHECK(live_trace[i].g_residual <= model.algo.tol_g);
        CHECK((live_trace[i].p - trace[i].p).norm() <= 0.2 * model.algo.kappa);
    }
}

TEST_CASE("margin_sqp on SMIB") {
    SystemModel model = load_smib();
    const Vec p0 = vec2(1.9, 1.5);

    MarginResult result = margin_sqp(model, p0, model.algo);
    CHECK(result.converged);
    CHECK(result.iterations <= 60);
    CHECK(result.margin > 0.0);
    CHECK(result.margin == model.metric.distance(result.p_star, p0));

    // |G(p_star) - eps| within tol_g and every history iterate Recovered
    GEvaluation ge = eval_G(model, result.p_star);
    REQUIRE(ge.status.recovered());
    CHECK(std::abs(*ge.g - model.algo.epsilon) <= model.algo.tol_g);
    for (const auto& h : result.history)
        CHECK(classify(model, h.p).recovered());

    // footnote case: epsilon >= G(p0) returns p0 exactly with margin 0
    AlgoOptions fat = model.algo;
    fat.epsilon = 0.01;  // above G(p0) ~ 5.13e-3
    MarginResult trivial = margin_sqp(model, p0, fat);
    CHECK(trivial.converged);
    CHECK(trivial.margin == 0.0);
    CHECK(trivial.p_star[0] == p0[0]);
    CHECK(trivial.p_star[1] == p0[1]);
    CHECK(trivial.iterations == 0);

    CHECK_THROWS_AS(margin_sqp(model, vec2(1.9, 1.85), model.algo),
                    std::invalid_argument);
}

TEST_CASE("margin_sqp is invariant under uniform metric scaling") {
    SystemModel model_i = load_smib();

    nlohmann::json cfg = load_config_json("smib.json");
    cfg["metric"]["P"] = {{4.0, 0.0}, {0.0, 4.0}};
    SystemModel model_4i = build_model(cfg);

    const Vec p0 = vec2(1.9, 1.5);
    MarginResult a = margin_sqp(model_i, p0, model_i.algo);
    MarginResult b = margin_sqp(model_4i, p0, model_4i.algo);
    REQUIRE(a.converged);
    REQUIRE(b.converged);
    // identical argmin, margin exactly doubled
    CHECK(a.p_star[0] == b.p_star[0]);
    CHECK(a.p_star[1] == b.p_star[1]);
    CHECK(b.margin == 2.0 * a.margin);
}

TEST_CASE("margin_sqp handles higher-dimensional parameter spaces") {
    // a third parameter the dynamics never reference: the SQP must leave it
    // untouched and reproduce the 2-D margin
    nlohmann::json cfg = load_config_json("smib.json");
    cfg["system"]["params"] = {"p1", "p2", "p3"};
    cfg["nominal"]["p"] = {1.9, 1.5, 0.7};
    cfg["metric"]["P"] = {{1.0, 0.0, 0.0}, {0.0, 1.0, 0.0}, {0.0, 0.0, 1.0}};
    SystemModel model3 = build_model(cfg);
    SystemModel model2 = load_smib();

    MarginResult r3 = margin_sqp(model3, model3.p0, model3.algo);
    MarginResult r2 = margin_sqp(model2, model2.p0, model2.algo);
    REQUIRE(r3.converged);
    CHECK(r3.p_star[2] == 0.7);
    CHECK(r3.margin == doctest::Approx(r2.margin).epsilon(1e-10));
}

TEST_CASE("margin_sqp throws MaxIterations with the partial result attached") {
    SystemModel model = load_smib();
    AlgoOptions tight = model.algo;
    tight.max_iter = 1;
    try {
        margin_sqp(model, vec2(1.9, 1.5), tight);
        FAIL("expected MaxIterations");
    } catch (const MaxIterations& e) {
        CHECK_FALSE(e.partial.converged);
        CHECK(e.partial.history.size() >= 1);
    }
}
