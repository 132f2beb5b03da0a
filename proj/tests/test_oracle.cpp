#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "safemargin/oracle.hpp"
#include "test_support.hpp"

using namespace safemargin;
using namespace sm_test;

TEST_CASE("classify_grid flags and determinism") {
    SystemModel model = load_smib();
    // small box straddling the boundary near (1.9, 1.507)
    std::vector<std::array<double, 2>> box = {{1.88, 1.92}, {1.48, 1.54}};
    std::vector<int> res = {5, 7};

    OracleGrid serial = classify_grid_serial(model, box, res, /*with_g=*/true);
    OracleGrid parallel = classify_grid(model, box, res, true, /*jobs=*/2);

    CHECK(serial.size() == 35);
    CHECK(serial.recovered == parallel.recovered);
    for (std::size_t i = 0; i < serial.size(); ++i) {
        const bool na = std::isnan(serial.g[i]);
        CHECK(na == std::isnan(parallel.g[i]));
        if (!na)
            CHECK(serial.g[i] == parallel.g[i]);
    }

    // both flags present across the boundary
    bool any_in = false, any_out = false;
    for (auto f : serial.recovered)
        (f ? any_in : any_out) = true;
    CHECK(any_in);
    CHECK(any_out);

    // recovered cells carry positive G
    for (std::size_t i = 0; i < serial.size(); ++i)
        if (serial.recovered[i]) {
            CHECK_FALSE(std::isnan(serial.g[i]));
            CHECK(serial.g[i] > 0.0);
        }

    // lattice point layout: row-major, declared parameter order
    CHECK(serial.point(0)[0] == doctest::Approx(1.88));
    CHECK(serial.point(0)[1] == doctest::Approx(1.48));
    CHECK(serial.point(6)[1] == doctest::Approx(1.54));  // last of first row
    CHECK(serial.point(7)[0] == doctest::Approx(1.89));  // second row
}

TEST_CASE("grid deep inside the recovery region is fully recovered") {
    SystemModel model = load_smib();
    std::vector<std::array<double, 2>> box = {{1.95, 2.0}, {1.30, 1.35}};
    OracleGrid grid = classify_grid_serial(model, box, {2, 2}, false);
    for (auto f : grid.recovered)
        CHECK(f == 1);
}

TEST_CASE("ray_bisect brackets the boundary") {
    SystemModel model = load_smib();
    const Vec p_in = vec2(1.9, 1.5);
    const Vec p_out = vec2(1.9, 1.9);

    Vec b = ray_bisect(model, p_in, p_out, 1e-6);
    CHECK(b[1] > 1.5);
    CHECK(b[1] < 1.9);
    CHECK(classify(model, b).recovered());

    Vec just_out = b;
    just_out[1] += 1e-4;
    CHECK_FALSE(classify(model, just_out).recovered());
    Vec just_in = b;
    just_in[1] -= 1e-4;
    CHECK(classify(model, just_in).recovered());

    // exactly k midpoint classifications for tol = L / 2^k
    const double L = (p_out - p_in).norm();
    int calls = -1;
    ray_bisect(model, p_in, p_out, L / 16.0, &calls);
    CHECK(calls == 4);
    ray_bisect(model, p_in, p_out, 2.0 * L, &calls);
    CHECK(calls == 0);

    CHECK_THROWS_AS(ray_bisect(model, vec2(1.9, 1.85), p_out, 1e-4), InvalidBracket);
    CHECK_THROWS_AS(ray_bisect(model, p_in, vec2(1.9, 1.505), 1e-4), InvalidBracket);
}

TEST_CASE("brute_margin fans the boundary") {
    SystemModel model = load_smib();
    const Vec p0 = vec2(1.9, 1.5);

    BruteMarginResult coarse = brute_margin(model, p0, model.metric, 90, 1e-5, 0.25, 2);
    // measured closest distance is about 6.0e-3 toward (-0.53, 0.85)
    CHECK(coarse.margin > 4e-3);
    CHECK(coarse.margin < 8e-3);
    CHECK(classify(model, coarse.p_b).recovered());

    // finer fans can only get closer (nested directions)
    BruteMarginResult fine = brute_margin(model, p0, model.metric, 180, 1e-5, 0.25, 2);
    CHECK(fine.margin <= coarse.margin + 1e-12);

    CHECK_THROWS_AS(brute_margin(model, p0, model.metric, 45, 1e-5, 1e-4, 1),
                    NoBoundaryFound);
    CHECK_THROWS_AS(brute_margin(model, vec2(1.9, 1.85), model.metric, 8, 1e-4, 0.25, 1),
                    std::invalid_argument);
}

TEST_CASE("brute_margin from a boundary-adjacent point is below the ray tol") {
    SystemModel model = load_smib();
    Vec near = ray_bisect(model, vec2(1.9, 1.5), vec2(1.9, 1.9), 1e-7);
    REQUIRE(classify(model, near).recovered());
    const double tol = 1e-5;
    BruteMarginResult r = brute_margin(model, near, model.metric, 16, tol, 0.02, 2);
    CHECK(r.margin <= tol);
}

TEST_CASE("brute_margin is deterministic across job counts") {
    SystemModel model = load_smib();
    const Vec p0 = vec2(1.9, 1.5);
    BruteMarginResult a = brute_margin(model, p0, model.metric, 16, 1e-4, 0.25, 1);
    BruteMarginResult b = brute_margin(model, p0, model.metric, 16, 1e-4, 0.25, 2);
    CHECK(a.margin == b.margin);
    CHECK(a.p_b[0] == b.p_b[0]);
    CHECK(a.p_b[1] == b.p_b[1]);
}

TEST_CASE("brute_margin metric scaling is exact") {
    SystemModel model_i = load_smib();
    nlohmann::json cfg = load_config_json("smib.json");
    cfg["metric"]["P"] = {{4.0, 0.0}, {0.0, 4.0}};
    SystemModel model_4i = build_model(cfg);

    const Vec p0 = vec2(1.9, 1.5);
    const double tol = 1e-5;
    BruteMarginResult a = brute_margin(model_i, p0, model_i.metric, 64, tol, 0.25, 2);
    BruteMarginResult b = brute_margin(model_4i, p0, model_4i.metric, 64, tol, 0.25, 2);
    // doubling P scales distances by exactly 2; the bisection grids nest, so
    // the margins agree to the bisection tolerance
    CHECK(std::abs(b.margin - 2.0 * a.margin) <= 2.0 * tol);
    CHECK((a.p_b - b.p_b).norm() <= 2.0 * tol);
}
