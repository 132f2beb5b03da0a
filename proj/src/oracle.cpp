#include "safemargin/oracle.hpp"

#include <cmath>
#include <limits>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace safemargin {

namespace {

std::size_t lattice_size(const std::vector<int>& res) {
    std::size_t total = 1;
    for (int r : res)
        total *= static_cast<std::size_t>(r);
    return total;
}

void check_box(const std::vector<std::array<double, 2>>& box,
               const std::vector<int>& res, int m) {
    if (static_cast<int>(box.size()) != m || static_cast<int>(res.size()) != m)
        throw std::invalid_argument("grid box/res dimension must match parameter count");
    for (int r : res)
        if (r < 2)
            throw std::invalid_argument("grid resolution must be >= 2 per axis");
    for (const auto& [lo, hi] : box)
        if (!(lo < hi))
            throw std::invalid_argument("grid box must have lo < hi per axis");
}

} // namespace

Vec OracleGrid::point(std::size_t flat_index) const {
    const int m = static_cast<int>(res.size());
    Vec p(m);
    std::size_t rem = flat_index;
    for (int a = m - 1; a >= 0; --a) {
        const std::size_t idx = rem % static_cast<std::size_t>(res[a]);
        rem /= static_cast<std::size_t>(res[a]);
        p[a] = box[a][0] + (box[a][1] - box[a][0]) *
                               static_cast<double>(idx) / (res[a] - 1);
    }
    return p;
}

namespace {

// Shared per-point kernel: classification flag, optionally G.
void grid_point(const SystemModel& model, const OracleGrid& grid, std::size_t i,
                bool with_g, std::uint8_t& flag, double& g_out) {
    const Vec p = grid.point(i);
    const RecoveryStatus status = classify(model, p);
    flag = status.recovered() ? 1 : 0;
    g_out = std::numeric_limits<double>::quiet_NaN();
    if (with_g && flag) {
        const GEvaluation ge = eval_G(model, p);
        if (ge.g)
            g_out = *ge.g;
    }
}

} // namespace

OracleGrid classify_grid_serial(const SystemModel& model,
                                const std::vector<std::array<double, 2>>& box,
                                const std::vector<int>& res, bool with_g) {
    check_box(box, res, model.m);
    OracleGrid grid;
    grid.box = box;
    grid.res = res;
    grid.has_g = with_g;
    const std::size_t total = lattice_size(res);
    grid.recovered.assign(total, 0);
    grid.g.assign(total, std::numeric_limits<double>::quiet_NaN());
    for (std::size_t i = 0; i < total; ++i)
        grid_point(model, grid, i, with_g, grid.recovered[i], grid.g[i]);
    return grid;
}

OracleGrid classify_grid(const SystemModel& model,
                         const std::vector<std::array<double, 2>>& box,
                         const std::vector<int>& res, bool with_g, int jobs) {
    check_box(box, res, model.m);
    if (jobs < 1)
        throw std::invalid_argument("jobs must be >= 1");
    OracleGrid grid;
    grid.box = box;
    grid.res = res;
    grid.has_g = with_g;
    const std::size_t total = lattice_size(res);
    grid.recovered.assign(total, 0);
    grid.g.assign(total, std::numeric_limits<double>::quiet_NaN());

    std::exception_ptr first_error = nullptr;
    const long long count = static_cast<long long>(total);
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic, 1) num_threads(jobs)
#endif
    for (long long i = 0; i < count; ++i) {
        try {
            grid_point(model, grid, static_cast<std::size_t>(i), with_g,
                       grid.recovered[i], grid.g[i]);
        } catch (...) {
#ifdef _OPENMP
#pragma omp critical
#endif
            {
                if (!first_error)
                    first_error = std::current_exception();
            }
        }
    }
    if (first_error)
        std::rethrow_exception(first_error);
    return grid;
}

Vec ray_bisect(const SystemModel& model, const Vec& p_in, const Vec& p_out,
               double tol, int* classify_calls) {
    if (!(tol > 0.0))
        throw std::invalid_argument("ray_bisect: tol must be > 0");
    if (!classify(model, p_in).recovered())
        throw InvalidBracket("ray_bisect: p_in does not classify Recovered");
    if (classify(model, p_out).recovered())
        throw InvalidBracket("ray_bisect: p_out classifies Recovered");

    int calls = 0;
    Vec lo = p_in, hi = p_out;
    while ((hi - lo).norm() > tol) {
        Vec mid = 0.5 * (lo + hi);
        ++calls;
        if (classify(model, mid).recovered())
            lo = mid;
        else
            hi = mid;
    }
    if (classify_calls)
        *classify_calls = calls;
    return lo;
}

BruteMarginResult brute_margin(const SystemModel& model, const Vec& p0,
                               const Metric& metric, int n_rays, double tol,
                               double max_radius, int jobs) {
    if (model.m != 2)
        throw std::invalid_argument(
            "brute_margin: the ray fan covers 2-D parameter spaces only; "
            "use classify_grid for higher dimensions");
    if (n_rays < 1 || !(tol > 0.0) || !(max_radius > 0.0))
        throw std::invalid_argument("brute_margin: bad arguments");
    if (!classify(model, p0).recovered())
        throw std::invalid_argument("brute_margin: p0 does not classify Recovered");

    const double r_start = max_radius / 1024.0;
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> ray_margin(static_cast<std::size_t>(n_rays), inf);

    std::exception_ptr first_error = nullptr;
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic, 1) num_threads(jobs)
#endif
    for (int j = 0; j < n_rays; ++j) {
        try {
            const double theta = 2.0 * M_PI * static_cast<double>(j) / n_rays;
            Vec e(2);
            e[0] = std::cos(theta);
            e[1] = std::sin(theta);
            const Vec u = metric.unit_from_euclidean(e);  // ||u||_P = 1

            // geometric outward march to bracket the boundary in r
            double r_lo = 0.0, r_hi = 0.0;
            bool bracketed = false;
            for (double r = r_start; r <= max_radius; r *= 2.0) {
                const double r_probe = std::min(r, max_radius);
                if (classify(model, Vec(p0 + r_probe * u)).recovered()) {
                    r_lo = r_probe;
                } else {
                    r_hi = r_probe;
                    bracketed = true;
                    break;
                }
                if (r_probe == max_radius)
                    break;
            }
            if (!bracketed)
                continue;

            // bisection on the P-metric radius down to tol
            while (r_hi - r_lo > tol) {
                const double r_mid = 0.5 * (r_lo + r_hi);
                if (classify(model, Vec(p0 + r_mid * u)).recovered())
                    r_lo = r_mid;
                else
                    r_hi = r_mid;
            }
            ray_margin[static_cast<std::size_t>(j)] = r_lo;
        } catch (...) {
#ifdef _OPENMP
#pragma omp critical
#endif
            {
                if (!first_error)
                    first_error = std::current_exception();
            }
        }
    }
    if (first_error)
        std::rethrow_exception(first_error);

    // deterministic aggregation: smallest margin, ties to the lowest ray index
    int best = -1;
    for (int j = 0; j < n_rays; ++j) {
        if (ray_margin[static_cast<std::size_t>(j)] <
            (best < 0 ? inf : ray_margin[static_cast<std::size_t>(best)]))
            best = j;
    }
    if (best < 0)
        throw NoBoundaryFound();

    const double theta = 2.0 * M_PI * static_cast<double>(best) / n_rays;
    Vec e(2);
    e[0] = std::cos(theta);
    e[1] = std::sin(theta);
    BruteMarginResult result;
    result.margin = ray_margin[static_cast<std::size_t>(best)];
    result.p_b = p0 + result.margin * metric.unit_from_euclidean(e);
    return result;
}

} // namespace safemargin
