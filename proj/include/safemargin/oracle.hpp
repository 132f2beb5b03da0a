#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "safemargin/gfun.hpp"
#include "safemargin/model.hpp"

namespace safemargin {

struct InvalidBracket : std::runtime_error {
    explicit InvalidBracket(const std::string& what) : std::runtime_error(what) {}
};
struct NoBoundaryFound : std::runtime_error {
    NoBoundaryFound()
        : std::runtime_error("no boundary found within the maximum search radius "
                             "in any ray direction") {}
};

// Lattice of classify() flags over a parameter box, row-major with axis
// order equal to the declared parameter order (first axis slowest).
struct OracleGrid {
    std::vector<std::array<double, 2>> box;  // per-axis [lo, hi]
    std::vector<int> res;                    // per-axis sample counts, >= 2
    std::vector<std::uint8_t> recovered;     // one flag per lattice point
    std::vector<double> g;                   // NaN where not computed
    bool has_g = false;

    std::size_t size() const { return recovered.size(); }
    Vec point(std::size_t flat_index) const;
};

// Brute-force classification of every lattice point; optionally evaluates G
// at the points whose classification is Recovered. The flags come from
// classify() only, never from the G machinery. The `jobs` overload runs the
// lattice with OpenMP; the serial variant is the reference implementation
// and both produce bit-identical results.
OracleGrid classify_grid_serial(const SystemModel& model,
                                const std::vector<std::array<double, 2>>& box,
                                const std::vector<int>& res, bool with_g);
OracleGrid classify_grid(const SystemModel& model,
                         const std::vector<std::array<double, 2>>& box,
                         const std::vector<int>& res, bool with_g, int jobs);

// Bisection of the segment [p_in, p_out] down to bracket length <= tol;
// returns the Recovered endpoint of the final bracket.
Vec ray_bisect(const SystemModel& model, const Vec& p_in, const Vec& p_out,
               double tol, int* classify_calls = nullptr);

struct BruteMarginResult {
    Vec p_b;              // boundary point realizing the minimum
    double margin = 0.0;  // d_P(p0, p_b)
};

// Fan of n_rays directions, uniform on the P-metric unit sphere (m == 2
// only; higher dimensions are out of the fan strategy's reach and should use
// classify_grid). Marches each ray outward to bracket the boundary, bisects
// to `tol` (P-metric length), and returns the closest hit.
BruteMarginResult brute_margin(const SystemModel& model, const Vec& p0,
                               const Metric& metric, int n_rays, double tol,
                               double max_radius = 2.0, int jobs = 1);

} // namespace safemargin
