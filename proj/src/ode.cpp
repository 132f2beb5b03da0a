#include "safemargin/ode.hpp"

#include <cmath>
#include <limits>
#include <memory>

namespace safemargin {

void IntegratorOptions::validate() const {
    if (!(rtol > 0.0) || !(atol > 0.0))
        throw std::invalid_argument("integrator tolerances must be positive");
    if (!(dt_init > 0.0) || !(dt_max > 0.0) || dt_init > dt_max)
        throw std::invalid_argument("require 0 < dt_init <= dt_max");
    if (!(t_max > 0.0))
        throw std::invalid_argument("t_max must be positive");
    if (!(div_bound > 0.0))
        throw std::invalid_argument("div_bound must be positive");
}

namespace {

// Dormand-Prince RK5(4)7M coefficients.
constexpr double c2 = 1.0 / 5.0, c3 = 3.0 / 10.0, c4 = 4.0 / 5.0, c5 = 8.0 / 9.0;
constexpr double a21 = 1.0 / 5.0;
constexpr double a31 = 3.0 / 40.0, a32 = 9.0 / 40.0;
constexpr double a41 = 44.0 / 45.0, a42 = -56.0 / 15.0, a43 = 32.0 / 9.0;
constexpr double a51 = 19372.0 / 6561.0, a52 = -25360.0 / 2187.0,
                 a53 = 64448.0 / 6561.0, a54 = -212.0 / 729.0;
constexpr double a61 = 9017.0 / 3168.0, a62 = -355.0 / 33.0,
                 a63 = 46732.0 / 5247.0, a64 = 49.0 / 176.0,
                 a65 = -5103.0 / 18656.0;
constexpr double a71 = 35.0 / 384.0, a73 = 500.0 / 1113.0, a74 = 125.0 / 192.0,
                 a75 = -2187.0 / 6784.0, a76 = 11.0 / 84.0;
// embedded error coefficients (5th minus 4th order weights)
constexpr double e1 = 71.0 / 57600.0, e3 = -71.0 / 16695.0, e4 = 71.0 / 1920.0,
                 e5 = -17253.0 / 339200.0, e6 = 22.0 / 525.0, e7 = -1.0 / 40.0;
// dense-output coefficients
constexpr double d1 = -12715105075.0 / 11282082432.0,
                 d3 = 87487479700.0 / 32700410799.0,
                 d4 = -10690763975.0 / 1880347072.0,
                 d5 = 701980252875.0 / 199316789632.0,
                 d6 = -1453857185.0 / 822651844.0,
                 d7 = 69997945.0 / 29380423.0;

constexpr double kSafe = 0.9;
constexpr double kBeta = 0.04;
constexpr double kExpo1 = 0.2 - kBeta * 0.75;
constexpr double kFacc1 = 5.0;   // max shrink factor per step
constexpr double kFacc2 = 0.1;   // max growth factor is 1/kFacc2

} // namespace

Dopri5::Dopri5(FieldFn field, Vec x0, const IntegratorOptions& opts)
    : field_(std::move(field)),
      x_(std::move(x0)),
      t_end_(opts.t_max),
      h_(std::min(opts.dt_init, opts.dt_max)),
      dt_max_(opts.dt_max),
      rtol_(opts.rtol),
      atol_(opts.atol) {
    opts.validate();
    const auto n = x_.size();
    k1_.resize(n); k2_.resize(n); k3_.resize(n); k4_.resize(n);
    k5_.resize(n); k6_.resize(n); k7_.resize(n);
    y_stage_.resize(n); x_new_.resize(n); err_vec_.resize(n);
    rcont1_.resize(n); rcont2_.resize(n); rcont3_.resize(n);
    rcont4_.resize(n); rcont5_.resize(n);
}

Dopri5::StepResult Dopri5::step() {
    if (done())
        return {t_, t_, true};
    if (!have_k1_) {
        field_(x_, k1_);
        have_k1_ = true;
    }

    const double underflow = 1e-14 * t_end_;
    for (;;) {
        if (h_ < underflow)
            throw StepSizeUnderflow(t_);
        bool last = false;
        double h = h_;
        if (t_ + h >= t_end_) {
            h = t_end_ - t_;
            last = true;
        }

        y_stage_ = x_ + h * a21 * k1_;
        field_(y_stage_, k2_);
        y_stage_ = x_ + h * (a31 * k1_ + a32 * k2_);
        field_(y_stage_, k3_);
        y_stage_ = x_ + h * (a41 * k1_ + a42 * k2_ + a43 * k3_);
        field_(y_stage_, k4_);
        y_stage_ = x_ + h * (a51 * k1_ + a52 * k2_ + a53 * k3_ + a54 * k4_);
        field_(y_stage_, k5_);
        y_stage_ = x_ + h * (a61 * k1_ + a62 * k2_ + a63 * k3_ + a64 * k4_ + a65 * k5_);
        field_(y_stage_, k6_);
        x_new_ = x_ + h * (a71 * k1_ + a73 * k3_ + a74 * k4_ + a75 * k5_ + a76 * k6_);
        field_(x_new_, k7_);

        err_vec_ = h * (e1 * k1_ + e3 * k3_ + e4 * k4_ + e5 * k5_ + e6 * k6_ + e7 * k7_);
        double err_sq = 0.0;
        for (Eigen::Index i = 0; i < x_.size(); ++i) {
            double sk = atol_ + rtol_ * std::max(std::abs(x_[i]), std::abs(x_new_[i]));
            double r = err_vec_[i] / sk;
            err_sq += r * r;
        }
        double err = std::sqrt(err_sq / static_cast<double>(x_.size()));
        if (!std::isfinite(err))
            err = 1e10;

        if (err <= 1.0) {
            // accept; build dense-output coefficients
            rcont1_ = x_;
            rcont2_ = x_new_ - x_;
            rcont3_ = h * k1_ - rcont2_;
            rcont4_ = rcont2_ - h * k7_ - rcont3_;
            rcont5_ = h * (d1 * k1_ + d3 * k3_ + d4 * k4_ + d5 * k5_ + d6 * k6_ + d7 * k7_);
            dense_t0_ = t_;
            dense_h_ = h;

            facold_ = std::max(err, 1e-4);
            double fac11 = std::pow(err, kExpo1);
            double fac = fac11 / std::pow(facold_, kBeta);
            fac = std::max(kFacc2, std::min(kFacc1, fac / kSafe));
            double hnew = std::min(h / fac, dt_max_);

            double t0 = t_;
            t_ = last ? t_end_ : t_ + h;
            x_.swap(x_new_);
            k1_.swap(k7_);  // FSAL
            h_ = hnew;
            return {t0, t_, last};
        }

        double fac11 = std::pow(err, kExpo1);
        h_ = h / std::min(kFacc1, fac11 / kSafe);
    }
}

void Dopri5::dense_eval(double t, Vec& out) const {
    double theta = (t - dense_t0_) / dense_h_;
    double theta1 = 1.0 - theta;
    out = rcont1_ +
          theta * (rcont2_ +
                   theta1 * (rcont3_ + theta * (rcont4_ + theta1 * rcont5_)));
}

Trajectory integrate(const FieldFn& field, const Vec& x0,
                     const IntegratorOptions& opts, const StopFn& stop) {
    opts.validate();
    if (!x0.allFinite())
        throw std::invalid_argument("integrate: non-finite initial state");

    Trajectory traj;
    traj.times.push_back(0.0);
    traj.states.push_back(x0);
    traj.termination = Termination::ReachedTMax;

    if (stop && stop(0.0, x0)) {
        traj.termination = Termination::Converged;
        return traj;
    }
    if (inf_norm(x0) > opts.div_bound) {
        traj.termination = Termination::Diverged;
        return traj;
    }

    Dopri5 stepper(field, x0, opts);
    while (!stepper.done()) {
        auto res = stepper.step();
        traj.times.push_back(res.t1);
        traj.states.push_back(stepper.state());
        if (inf_norm(stepper.state()) > opts.div_bound) {
            traj.termination = Termination::Diverged;
            return traj;
        }
        if (stop && stop(res.t1, stepper.state())) {
            traj.termination = Termination::Converged;
            return traj;
        }
    }
    return traj;
}

FieldFn make_augmented_field(const JacFieldFn& field, int n, int m) {
    // workspace shared across calls; each integration owns its field instance
    auto x = std::make_shared<Vec>(n);
    auto dx = std::make_shared<Vec>(n);
    auto Jx = std::make_shared<Mat>(n, n);
    auto Jp = std::make_shared<Mat>(n, m);
    return [field, n, m, x, dx, Jx, Jp](const Vec& z, Vec& dz) {
        using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
        Eigen::Map<const RowMat> S(z.data() + n, n, m);
        Eigen::Map<RowMat> dS(dz.data() + n, n, m);
        *x = z.head(n);
        field(*x, *dx, *Jx, *Jp);
        dz.head(n) = *dx;
        dS = (*Jx) * S + (*Jp);
    };
}

SensTrajectory integrate_augmented(const JacFieldFn& field, const Vec& y0,
                                   const Mat& S0, const IntegratorOptions& opts,
                                   const StopFn& stop) {
    opts.validate();
    const int n = static_cast<int>(y0.size());
    const int m = static_cast<int>(S0.cols());
    if (S0.rows() != n)
        throw std::invalid_argument("S0 row count must match state dimension");
    if (!y0.allFinite() || !S0.allFinite())
        throw std::invalid_argument("non-finite initial state or sensitivity");

    Vec z0(n + n * m);
    z0.head(n) = y0;
    using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    Eigen::Map<RowMat>(z0.data() + n, n, m) = S0;

    // divergence and stop predicates are judged on the state block only
    auto aug_field = make_augmented_field(field, n, m);
    SensTrajectory out;
    out.flow.termination = Termination::ReachedTMax;
    out.flow.times.push_back(0.0);
    out.flow.states.push_back(y0);
    out.sensitivities.push_back(S0);

    if (stop && stop(0.0, y0)) {
        out.flow.termination = Termination::Converged;
        return out;
    }
    if (inf_norm(y0) > opts.div_bound) {
        out.flow.termination = Termination::Diverged;
        return out;
    }

    Dopri5 stepper(aug_field, z0, opts);
    Vec xk(n);
    while (!stepper.done()) {
        auto res = stepper.step();
        const Vec& z = stepper.state();
        xk = z.head(n);
        out.flow.times.push_back(res.t1);
        out.flow.states.push_back(xk);
        out.sensitivities.emplace_back(Eigen::Map<const RowMat>(z.data() + n, n, m));
        if (inf_norm(xk) > opts.div_bound) {
            out.flow.termination = Termination::Diverged;
            return out;
        }
        if (stop && stop(res.t1, xk)) {
            out.flow.termination = Termination::Converged;
            return out;
        }
    }
    return out;
}

} // namespace safemargin
