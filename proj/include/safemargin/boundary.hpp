#pragma once

#include <functional>
#include <vector>

#include "safemargin/algo_options.hpp"
#include "safemargin/gfun.hpp"
#include "safemargin/model.hpp"

namespace safemargin {

struct BoundaryPoint {
    Vec p;
    double g_residual = 0.0;  // |G(p) - target|
    Vec eta;                  // unit tangent (2-D tracing only)
    int iterations = 0;
};

struct MarginResult {
    Vec p_star;
    double margin = 0.0;
    double epsilon = 0.0;
    struct HistoryEntry {
        Vec p;
        double g = 0.0;
        int backtrack_m = 0;  // bisection exponent used to leave this iterate
    };
    std::vector<HistoryEntry> history;
    bool converged = false;
    int iterations = 0;
};

struct LineSearchFailed : std::runtime_error {
    explicit LineSearchFailed(int max_m)
        : std::runtime_error("backtracking line search exhausted (m > " +
                             std::to_string(max_m) + ")"),
          max_m_tried(max_m) {}
    int max_m_tried;
};

struct MaxIterations : std::runtime_error {
    explicit MaxIterations(const std::string& what) : std::runtime_error(what) {}
    MarginResult partial;  // populated by margin_sqp
};

struct ZeroDerivative : std::runtime_error {
    ZeroDerivative() : std::runtime_error("derivative of G vanishes; Newton step undefined") {}
};
struct ZeroGradient : std::runtime_error {
    ZeroGradient() : std::runtime_error("gradient is zero") {}
};
struct SingularNewtonMatrix : std::runtime_error {
    SingularNewtonMatrix() : std::runtime_error("singular Newton matrix in corrector") {}
};

struct CorrectorFailed : std::runtime_error {
    CorrectorFailed(int index, std::vector<BoundaryPoint> partial_, std::string why)
        : std::runtime_error("corrector failed at trace point " + std::to_string(index) +
                             ": " + why),
          failed_index(index),
          partial(std::move(partial_)) {}
    int failed_index;
    std::vector<BoundaryPoint> partial;
};

// Bisection backtracking: the smallest m in {0..max_m} with
// p + 2^{-m} (candidate(p) - p) a member wins. Requires member(p).
std::pair<Vec, int> backtrack(const std::function<Vec(const Vec&)>& candidate_map,
                              const Vec& p,
                              const std::function<bool(const Vec&)>& member,
                              int max_m);

// Newton iteration on G along one parameter axis (all other coordinates
// frozen), driven to |G| <= tol_g. Every iterate stays in the recovery region.
BoundaryPoint boundary_1d(const SystemModel& model, const Vec& p0, int axis,
                          const AlgoOptions& opts);

// Unit vector orthogonal to w (2-D): rotate 90 degrees, normalize, and pick
// the sign that continues prev_eta (or first_sign when there is none).
Vec tangent(const Vec& w, const Vec* prev_eta = nullptr, int first_sign = +1);

// Predictor-corrector tracing of the boundary level set from a
// boundary-adjacent start (G(p_start) <= 10 tol_g). Returns n_points accepted
// points; throws CorrectorFailed carrying the partial trace on failure.
std::vector<BoundaryPoint> trace_2d(const SystemModel& model, const Vec& p_start,
                                    const AlgoOptions& opts, int n_points);

// Closed-form solution of the quadratic program linearizing G(p) = epsilon:
//   F(p) = p0 + P^{-1} w w^T / (w^T P^{-1} w) (p - p0)
//             - P^{-1} w / (w^T P^{-1} w) (g - epsilon)
Vec sqp_step(const Vec& p, const Vec& p0, const Metric& metric, const Vec& w,
             double g, double epsilon);

// Sequential quadratic programming iteration for the closest point on the
// G = epsilon level set; the P-metric distance to it is the safety margin.
// When G(p0) <= epsilon the answer is p0 itself with margin zero.
MarginResult margin_sqp(const SystemModel& model, const Vec& p0,
                        const AlgoOptions& opts);

} // namespace safemargin
