// Benchmark: serial reference grid kernel vs the OpenMP-parallel one.
// Verifies that both produce bit-identical results before timing them.

#include <chrono>
#include <cstdio>
#include <cstring>
#include <string>
#include <thread>
#include <vector>

#include "safemargin/model.hpp"
#include "safemargin/oracle.hpp"

using namespace safemargin;

namespace {

double time_ms(const std::function<void()>& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const auto t1 = std::chrono::steady_clock::now();
    return std::chrono::duration<double, std::milli>(t1 - t0).count();
}

bool grids_identical(const OracleGrid& a, const OracleGrid& b) {
    if (a.recovered != b.recovered)
        return false;
    if (a.g.size() != b.g.size())
        return false;
    for (std::size_t i = 0; i < a.g.size(); ++i) {
        const bool na = std::isnan(a.g[i]), nb = std::isnan(b.g[i]);
        if (na != nb || (!na && a.g[i] != b.g[i]))
            return false;
    }
    return true;
}

} // namespace

int main(int argc, char** argv) {
    if (argc < 2) {
        std::fprintf(stderr,
                     "usage: bench_grid CONFIG [res_per_axis=21] [with_g=1] [max_jobs]\n");
        return 1;
    }
    const std::string config = argv[1];
    const int res_n = argc > 2 ? std::atoi(argv[2]) : 21;
    const bool with_g = argc > 3 ? std::atoi(argv[3]) != 0 : true;
    const unsigned hw = std::thread::hardware_concurrency();
    const int max_jobs = argc > 4 ? std::atoi(argv[4]) : (hw ? static_cast<int>(hw) : 2);

    SystemModel model = load_model(config);
    if (model.m != 2) {
        std::fprintf(stderr, "bench_grid expects a 2-parameter model\n");
        return 1;
    }

    // box centered on the nominal value
    std::vector<std::array<double, 2>> box = {
        {model.p0[0] - 0.3, model.p0[0] + 0.3},
        {model.p0[1] - 0.3, model.p0[1] + 0.4},
    };
    std::vector<int> res = {res_n, res_n};

    OracleGrid ref;
    const double t_serial = time_ms([&] {
        ref = classify_grid_serial(model, box, res, with_g);
    });
    std::printf("grid %dx%d (with_g=%d)\n", res_n, res_n, with_g ? 1 : 0);
    std::printf("%-10s %10.1f ms   speedup %5.2fx\n", "serial", t_serial, 1.0);

    for (int jobs = 1; jobs <= max_jobs; jobs *= 2) {
        OracleGrid par;
        const double t_par = time_ms([&] {
            par = classify_grid(model, box, res, with_g, jobs);
        });
        const bool same = grids_identical(ref, par);
        std::printf("%-7s %2d %10.1f ms   speedup %5.2fx   %s\n", "jobs", jobs,
                    t_par, t_serial / t_par, same ? "identical" : "MISMATCH");
        if (!same)
            return 1;
    }
    return 0;
}
