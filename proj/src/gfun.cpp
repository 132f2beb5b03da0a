#include "safemargin/gfun.hpp"

#include <algorithm>
#include <cmath>

namespace safemargin {

namespace {

// Consecutive non-increasing profile steps required before the recorded
// maximum is accepted as sup_t.
constexpr int kStationarySteps = 50;

struct SepOrStatus {
    std::optional<SepInfo> sep;
    RecoveryStatus status;  // set when sep is absent
};

SepOrStatus find_sep_or_status(const SystemModel& model, const Vec& p) {
    SepOrStatus out;
    try {
        out.sep = find_sep(model, p, model.sep_guess);
    } catch (const NewtonDiverged& e) {
        out.status = {RecoveryStatus::Kind::NoSep, 0, 0, e.what()};
    } catch (const NotStable& e) {
        out.status = {RecoveryStatus::Kind::NoSep, 0, 0, e.what()};
    } catch (const NotHyperbolic& e) {
        out.status = {RecoveryStatus::Kind::NoSep, 0, 0, e.what()};
    } catch (const SingularJacobian& e) {
        out.status = {RecoveryStatus::Kind::NoSep, 0, 0, e.what()};
    }
    return out;
}

// Golden-section maximization of fn over [a, b].
template <typename F>
std::pair<double, double> golden_max(const F& fn, double a, double b, double tol) {
    constexpr double invphi = 0.6180339887498949;
    double x1 = b - invphi * (b - a);
    double x2 = a + invphi * (b - a);
    double f1 = fn(x1), f2 = fn(x2);
    while (b - a > tol) {
        if (f1 < f2) {
            a = x1;
            x1 = x2; f1 = f2;
            x2 = a + invphi * (b - a);
            f2 = fn(x2);
        } else {
            b = x2;
            x2 = x1; f2 = f1;
            x1 = b - invphi * (b - a);
            f1 = fn(x1);
        }
    }
    return f1 > f2 ? std::make_pair(x1, f1) : std::make_pair(x2, f2);
}

} // namespace

const char* to_string(RecoveryStatus::Kind kind) {
    switch (kind) {
    case RecoveryStatus::Kind::Recovered: return "Recovered";
    case RecoveryStatus::Kind::Diverged:  return "Diverged";
    case RecoveryStatus::Kind::Timeout:   return "Timeout";
    case RecoveryStatus::Kind::NoSep:     return "NoSep";
    }
    return "?";
}

RecoveryStatus classify(const SystemModel& model, const Vec& p) {
    if (!p.allFinite())
        throw std::invalid_argument("classify: non-finite parameter vector");

    SepOrStatus s = find_sep_or_status(model, p);
    if (!s.sep)
        return s.status;
    const Vec x_star = s.sep->x_star;

    Vec y = disturbance_y(model, p, x_star);

    auto pv = std::make_shared<Vec>(p);
    const SystemModel* mp = &model;
    FieldFn f = [mp, pv](const Vec& x, Vec& dx) {
        dx.resize(mp->n);
        for (int i = 0; i < mp->n; ++i)
            dx[i] = mp->field_tape[i].eval(x.data(), pv->data());
    };
    const double conv_tol = model.recovery.conv_tol;
    StopFn near_sep = [&x_star, conv_tol](double, const Vec& x) {
        return inf_norm(x - x_star) <= conv_tol;
    };

    Trajectory traj = integrate(f, y, model.integrator, near_sep);
    switch (traj.termination) {
    case Termination::Converged:
        return {RecoveryStatus::Kind::Recovered, traj.times.back(), 0.0, ""};
    case Termination::Diverged:
        return {RecoveryStatus::Kind::Diverged, 0.0, traj.times.back(), ""};
    case Termination::ReachedTMax:
        return {RecoveryStatus::Kind::Timeout, 0.0, 0.0, ""};
    }
    return {};
}

GEvaluation eval_G(const SystemModel& model, const Vec& p) {
    if (!p.allFinite())
        throw std::invalid_argument("eval_G: non-finite parameter vector");

    GEvaluation out;

    SepOrStatus s = find_sep_or_status(model, p);
    if (!s.sep) {
        out.status = s.status;
        return out;
    }
    const SepInfo& sep = *s.sep;

    DisturbanceResult dist = disturbance_eval(model, p, sep.x_star, sep.dXdp);

    const int n = model.n, m = model.m;
    using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

    Vec z0(n + n * m);
    z0.head(n) = dist.y;
    Eigen::Map<RowMat>(z0.data() + n, n, m) = dist.Dy;

    auto aug = make_augmented_field(post_disturbance_jac_field(model, p), n, m);
    Dopri5 stepper(aug, z0, model.integrator);

    const double conv_tol = model.recovery.conv_tol;
    const double div_bound = model.integrator.div_bound;

    auto norm_of = [n, m](const Vec& z) {
        return Eigen::Map<const RowMat>(z.data() + n, n, m).array().abs().sum();
    };

    out.profile.emplace_back(0.0, norm_of(z0));
    double prev_norm = out.profile.back().second;
    double running_best = prev_norm;
    int non_increasing = 0;
    bool state_converged = false;
    double t_conv = 0.0;
    if (inf_norm(Vec(z0.head(n)) - sep.x_star) <= conv_tol) {
        state_converged = true;
    }

    Vec zbuf(z0.size());
    auto norm_at = [&stepper, &zbuf, &norm_of](double t) {
        stepper.dense_eval(t, zbuf);
        return norm_of(zbuf);
    };

    RecoveryStatus::Kind kind = RecoveryStatus::Kind::Timeout;
    double t_div = 0.0;
    while (!stepper.done()) {
        auto res = stepper.step();
        const Vec& z = stepper.state();
        const double nu_end = norm_of(z);

        // Locate the in-step maximum with the dense interpolant whenever the
        // step could contain the running peak; the refined point joins the
        // profile so sup_norm is not limited by the step resolution.
        const double nu_mid = norm_at(0.5 * (res.t0 + res.t1));
        if (std::max({prev_norm, nu_end, nu_mid}) >= 0.95 * running_best) {
            // coarse scan, then golden-section inside the bracketing cell
            constexpr int kScan = 8;
            double best_t = res.t0, best_nu = prev_norm;
            for (int i = 1; i < kScan; ++i) {
                double t = res.t0 + (res.t1 - res.t0) * i / kScan;
                double nu = norm_at(t);
                if (nu > best_nu) { best_nu = nu; best_t = t; }
            }
            if (nu_end > best_nu) { best_nu = nu_end; best_t = res.t1; }
            double cell = (res.t1 - res.t0) / kScan;
            double lo = std::max(res.t0, best_t - cell);
            double hi = std::min(res.t1, best_t + cell);
            auto [t_ref, nu_ref] =
                golden_max(norm_at, lo, hi, 1e-9 * std::max(1.0, res.t1));
            if (nu_ref > prev_norm && nu_ref > nu_end &&
                t_ref > res.t0 && t_ref < res.t1) {
                out.profile.emplace_back(t_ref, nu_ref);
                running_best = std::max(running_best, nu_ref);
            }
        }
        out.profile.emplace_back(res.t1, nu_end);
        running_best = std::max(running_best, nu_end);

        if (nu_end > prev_norm)
            non_increasing = 0;
        else
            ++non_increasing;
        prev_norm = nu_end;

        Vec xk = z.head(n);
        if (inf_norm(xk) > div_bound) {
            kind = RecoveryStatus::Kind::Diverged;
            t_div = res.t1;
            break;
        }
        if (!state_converged && inf_norm(xk - sep.x_star) <= conv_tol) {
            state_converged = true;
            t_conv = res.t1;
        }
        if (state_converged && non_increasing >= kStationarySteps) {
            kind = RecoveryStatus::Kind::Recovered;
            break;
        }
    }
    if (kind == RecoveryStatus::Kind::Timeout && state_converged)
        kind = RecoveryStatus::Kind::Recovered;

    switch (kind) {
    case RecoveryStatus::Kind::Recovered:
        out.status = {kind, t_conv, 0.0, ""};
        break;
    case RecoveryStatus::Kind::Diverged:
        out.status = {kind, 0.0, t_div, ""};
        break;
    default:
        out.status = {kind, 0.0, 0.0, ""};
        break;
    }

    double sup = 0.0, t_hat = 0.0;
    for (const auto& [t, nu] : out.profile) {
        if (nu > sup) {
            sup = nu;
            t_hat = t;
        }
    }
    // The sensitivity converges to dX^s/dp, so its norm is a floor for the sup.
    const double limit_norm = entrywise_one_norm(sep.dXdp);
    if (limit_norm > sup) {
        sup = limit_norm;
        t_hat = out.profile.back().first;
    }
    out.sup_norm = sup;
    out.t_hat = t_hat;
    if (out.status.recovered() && sup > 0.0)
        out.g = 1.0 / sup;
    return out;
}

Vec grad_G(const SystemModel& model, const Vec& p, double fd_step_rel,
           double fd_step_abs) {
    const int m = model.m;
    Vec grad(m);
    for (int k = 0; k < m; ++k) {
        const double h = std::max(fd_step_abs, fd_step_rel * std::abs(p[k]));
        Vec pp = p, pm = p;
        pp[k] += h;
        pm[k] -= h;
        GEvaluation gp = eval_G(model, pp);
        if (!gp.status.recovered())
            throw StencilLeftRegion(k, +1);
        GEvaluation gm = eval_G(model, pm);
        if (!gm.status.recovered())
            throw StencilLeftRegion(k, -1);
        grad[k] = (gp.g.value() - gm.g.value()) / (2.0 * h);
    }
    return grad;
}

Vec grad_G(const SystemModel& model, const Vec& p) {
    return grad_G(model, p, model.algo.fd_step_rel, model.algo.fd_step_abs);
}

} // namespace safemargin
