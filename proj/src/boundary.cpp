#include "safemargin/boundary.hpp"

#include <cmath>
#include <map>

namespace safemargin {

namespace {

// Memoized G evaluations keyed on the exact parameter bits, so membership
// checks and Newton data reuse the same simulation.
class GCache {
public:
    explicit GCache(const SystemModel& model) : model_(model) {}

    const GEvaluation& at(const Vec& p) {
        std::vector<double> key(p.data(), p.data() + p.size());
        auto it = memo_.find(key);
        if (it == memo_.end())
            it = memo_.emplace(std::move(key), eval_G(model_, p)).first;
        return it->second;
    }

    bool member(const Vec& p) {
        const GEvaluation& ge = at(p);
        return ge.status.recovered();
    }

private:
    const SystemModel& model_;
    std::map<std::vector<double>, GEvaluation> memo_;
};

// Central difference of G along one axis. Shrinks the step when a stencil
// point leaves the recovery region (the iterates walk arbitrarily close to
// the boundary, where the configured step can overshoot it).
double axis_derivative(GCache& cache, const Vec& p, int axis,
                       const AlgoOptions& opts) {
    double h = std::max(opts.fd_step_abs, opts.fd_step_rel * std::abs(p[axis]));
    for (int attempt = 0; attempt < 24; ++attempt) {
        Vec pp = p, pm = p;
        pp[axis] += h;
        pm[axis] -= h;
        const GEvaluation& gp = cache.at(pp);
        const GEvaluation& gm = cache.at(pm);
        if (gp.status.recovered() && gm.status.recovered())
            return (gp.g.value() - gm.g.value()) / (2.0 * h);
        h *= 0.5;
    }
    throw StencilLeftRegion(axis, 0);
}

Vec gradient(GCache& cache, const Vec& p, const AlgoOptions& opts) {
    Vec w(p.size());
    for (int k = 0; k < p.size(); ++k)
        w[k] = axis_derivative(cache, p, k, opts);
    return w;
}

} // namespace

std::pair<Vec, int> backtrack(const std::function<Vec(const Vec&)>& candidate_map,
                              const Vec& p,
                              const std::function<bool(const Vec&)>& member,
                              int max_m) {
    const Vec target = candidate_map(p);
    const Vec delta = target - p;
    for (int m = 0; m <= max_m; ++m) {
        Vec trial = p + std::ldexp(1.0, -m) * delta;
        if (member(trial))
            return {trial, m};
    }
    throw LineSearchFailed(max_m);
}

BoundaryPoint boundary_1d(const SystemModel& model, const Vec& p0, int axis,
                          const AlgoOptions& opts) {
    opts.validate();
    if (axis < 0 || axis >= model.m)
        throw std::invalid_argument("boundary_1d: axis out of range");

    GCache cache(model);
    if (!cache.member(p0))
        throw std::invalid_argument("boundary_1d: start point is not in the recovery region");

    auto member = [&cache](const Vec& q) { return cache.member(q); };

    Vec p = p0;
    for (int s = 0; s < opts.max_iter; ++s) {
        const GEvaluation& ge = cache.at(p);
        const double g = ge.g.value();
        if (std::abs(g) <= opts.tol_g)
            return {p, std::abs(g), Vec(), s};

        const double dg = axis_derivative(cache, p, axis, opts);
        if (std::abs(dg) < 1e-14)
            throw ZeroDerivative();

        auto candidate = [axis, g, dg](const Vec& q) {
            Vec c = q;
            c[axis] -= g / dg;
            return c;
        };
        auto [p_next, m_used] = backtrack(candidate, p, member, opts.max_backtrack);
        const double dp = (p_next - p).cwiseAbs().maxCoeff();
        p = p_next;
        if (dp <= opts.tol_p) {
            const double g_final = cache.at(p).g.value();
            return {p, std::abs(g_final), Vec(), s + 1};
        }
    }
    MaxIterations err("boundary_1d: no convergence within max_iter");
    throw err;
}

Vec tangent(const Vec& w, const Vec* prev_eta, int first_sign) {
    if (w.size() != 2)
        throw std::invalid_argument("tangent: requires a 2-D gradient");
    const double norm = w.norm();
    if (norm == 0.0)
        throw ZeroGradient();
    Vec eta(2);
    eta[0] = -w[1] / norm;
    eta[1] = w[0] / norm;
    if (prev_eta) {
        if (eta.dot(*prev_eta) < 0.0)
            eta = -eta;
    } else if (first_sign < 0) {
        eta = -eta;
    }
    return eta;
}

std::vector<BoundaryPoint> trace_2d(const SystemModel& model, const Vec& p_start,
                                    const AlgoOptions& opts, int n_points) {
    opts.validate();
    if (model.m != 2)
        throw std::invalid_argument("trace_2d: requires a 2-D parameter space");

    GCache cache(model);
    if (!cache.member(p_start))
        throw std::invalid_argument("trace_2d: start point is not in the recovery region");
    if (cache.at(p_start).g.value() > 10.0 * opts.tol_g)
        throw std::invalid_argument(
            "trace_2d: start point is not boundary-adjacent (G > 10*tol_g); "
            "refine it with boundary_1d first");

    auto member = [&cache](const Vec& q) { return cache.member(q); };

    std::vector<BoundaryPoint> points;
    Vec anchor = p_start;
    Vec w_anchor = gradient(cache, anchor, opts);
    Vec eta;  // empty until the first tangent is taken

    for (int idx = 0; idx < n_points; ++idx) {
        if (w_anchor.norm() == 0.0)
            throw CorrectorFailed(idx, points, "zero gradient at anchor");
        eta = tangent(w_anchor, eta.size() ? &eta : nullptr, opts.direction);

        // predictor: step of length kappa along the tangent
        Vec seed = anchor + opts.kappa * eta;
        if (!cache.member(seed)) {
            // walk inward along the hyperplane (the gradient points into the
            // recovery region) until membership is regained
            const Vec inward = w_anchor / w_anchor.norm();
            bool found = false;
            for (int j = 0; j <= 9 && !found; ++j) {
                const double s = opts.kappa * std::ldexp(1.0, j - 6);  // kappa/64 .. 8*kappa
                Vec trial = seed + s * inward;
                if (cache.member(trial)) {
                    seed = trial;
                    found = true;
                }
            }
            if (!found)
                throw CorrectorFailed(idx, points, "no recovered seed on the hyperplane");
        }

        // corrector: Newton on [G(p); (p - anchor).eta - kappa]. The tangent
        // is frozen at the anchor by default; the "live" mode re-takes it at
        // the current iterate (both the residual and the Jacobian row).
        Vec p = seed;
        Vec w_at_p;
        bool accepted = false;
        int iters_used = 0;
        for (int it = 0; it <= opts.max_iter; ++it) {
            const double f1 = cache.at(p).g.value();
            try {
                w_at_p = gradient(cache, p, opts);
            } catch (const StencilLeftRegion&) {
                throw CorrectorFailed(idx, points, "gradient stencil left the region");
            }
            const Vec eta_used = opts.corrector_eta_frozen
                                     ? eta
                                     : tangent(w_at_p, &eta, opts.direction);
            const double f2 = (p - anchor).dot(eta_used) - opts.kappa;
            if (std::abs(f1) <= opts.tol_g && std::abs(f2) <= opts.tol_p) {
                accepted = true;
                iters_used = it;
                break;
            }
            if (it == opts.max_iter)
                break;

            const double det = w_at_p[0] * eta_used[1] - w_at_p[1] * eta_used[0];
            if (std::abs(det) < 1e-14)
                throw SingularNewtonMatrix();
            Vec delta(2);
            delta[0] = (-f1 * eta_used[1] + f2 * w_at_p[1]) / det;
            delta[1] = (f1 * eta_used[0] - f2 * w_at_p[0]) / det;

            auto candidate = [&delta](const Vec& q) { return Vec(q + delta); };
            try {
                p = backtrack(candidate, p, member, opts.max_backtrack).first;
            } catch (const LineSearchFailed& e) {
                throw CorrectorFailed(idx, points, e.what());
            }
        }
        if (!accepted)
            throw CorrectorFailed(idx, points, "corrector did not converge");

        BoundaryPoint bp;
        bp.p = p;
        bp.g_residual = std::abs(cache.at(p).g.value());
        bp.iterations = iters_used;
        // gradient at the accepted point doubles as the next predictor data
        w_anchor = w_at_p;
        bp.eta = tangent(w_anchor, &eta, opts.direction);
        points.push_back(bp);
        anchor = p;
    }
    return points;
}

Vec sqp_step(const Vec& p, const Vec& p0, const Metric& metric, const Vec& w,
             double g, double epsilon) {
    if (w.norm() == 0.0)
        throw ZeroGradient();
    const Vec u = metric.solve(w);  // P^{-1} w
    const double denom = w.dot(u);
    if (!(denom > 0.0))
        throw ZeroGradient();
    return p0 + u * (w.dot(p - p0) / denom) - u * ((g - epsilon) / denom);
}

MarginResult margin_sqp(const SystemModel& model, const Vec& p0,
                        const AlgoOptions& opts) {
    opts.validate();

    GCache cache(model);
    if (!cache.member(p0))
        throw std::invalid_argument("margin_sqp: nominal point is not in the recovery region");

    MarginResult result;
    result.epsilon = opts.epsilon;

    const double g0 = cache.at(p0).g.value();
    if (g0 <= opts.epsilon) {
        // already within the G tolerance band of the boundary
        result.p_star = p0;
        result.margin = 0.0;
        result.history.push_back({p0, g0, 0});
        result.converged = true;
        result.iterations = 0;
        return result;
    }

    auto member = [&cache](const Vec& q) { return cache.member(q); };

    Vec p = p0;
    for (int s = 0; s < opts.max_iter; ++s) {
        const double g = cache.at(p).g.value();
        Vec w = gradient(cache, p, opts);

        Vec p_next;
        int m_used = 0;
        try {
            auto candidate = [&](const Vec& q) {
                return sqp_step(q, p0, model.metric, w, g, opts.epsilon);
            };
            std::tie(p_next, m_used) = backtrack(candidate, p, member, opts.max_backtrack);
        } catch (const LineSearchFailed&) {
            result.history.push_back({p, g, opts.max_backtrack});
            result.converged = false;
            result.iterations = s;
            MaxIterations err("margin_sqp: line search exhausted");
            err.partial = result;
            throw err;
        }
        result.history.push_back({p, g, m_used});

        const double g_next = cache.at(p_next).g.value();
        const double step_p = model.metric.distance(p_next, p);
        p = p_next;
        if (std::abs(g_next - opts.epsilon) <= opts.tol_g && step_p <= opts.tol_p) {
            result.history.push_back({p, g_next, 0});
            result.p_star = p;
            result.margin = model.metric.distance(p, p0);
            result.converged = true;
            result.iterations = s + 1;
            return result;
        }
    }
    result.converged = false;
    result.iterations = opts.max_iter;
    MaxIterations err("margin_sqp: no convergence within max_iter");
    err.partial = result;
    throw err;
}

} // namespace safemargin
