#pragma once

#include <functional>
#include <stdexcept>
#include <vector>

#include "safemargin/types.hpp"

namespace safemargin {

struct IntegratorOptions {
    double rtol = 1e-8;
    double atol = 1e-10;
    double dt_init = 1e-3;   // seconds
    double dt_max = 0.1;     // seconds
    double t_max = 100.0;    // seconds
    double div_bound = 1e3;  // infinity-norm divergence threshold

    void validate() const;
};

enum class Termination { ReachedTMax, Converged, Diverged };

struct Trajectory {
    std::vector<double> times;      // strictly increasing, times[0] == 0
    std::vector<Vec> states;
    Termination termination = Termination::ReachedTMax;
};

struct SensTrajectory {
    Trajectory flow;
    std::vector<Mat> sensitivities;  // one n-by-m matrix per sample
};

struct StepSizeUnderflow : std::runtime_error {
    explicit StepSizeUnderflow(double t)
        : std::runtime_error("step size underflow at t=" + std::to_string(t)) {}
};

struct IntegrationError : std::runtime_error {
    explicit IntegrationError(const std::string& what) : std::runtime_error(what) {}
};

using FieldFn = std::function<void(const Vec& x, Vec& dxdt)>;
using StopFn = std::function<bool(double t, const Vec& x)>;

// Dormand-Prince 5(4) embedded pair with PI step-size control and a
// fourth-order dense-output interpolant over the last accepted step.
// Callers drive the integration step by step.
class Dopri5 {
public:
    Dopri5(FieldFn field, Vec x0, const IntegratorOptions& opts);

    struct StepResult {
        double t0;
        double t1;
        bool reached_t_end;
    };

    // Advances by one accepted step (retrying internally on rejections).
    // Throws StepSizeUnderflow when the controller collapses the step.
    StepResult step();

    double time() const { return t_; }
    const Vec& state() const { return x_; }
    bool done() const { return t_ >= t_end_; }

    // Interpolates the solution at t inside the last accepted step.
    void dense_eval(double t, Vec& out) const;

private:
    FieldFn field_;
    Vec x_;
    double t_ = 0.0;
    double t_end_;
    double h_;
    double dt_max_;
    double rtol_, atol_;
    double facold_ = 1e-4;

    Vec k1_, k2_, k3_, k4_, k5_, k6_, k7_;
    Vec y_stage_, x_new_, err_vec_;
    // dense-output coefficients for the last accepted step
    Vec rcont1_, rcont2_, rcont3_, rcont4_, rcont5_;
    double dense_t0_ = 0.0, dense_h_ = 0.0;
    bool have_k1_ = false;
};

// Integrates dx/dt = field(x) from x0 until t_max, the stop predicate fires
// (Converged), or the state inf-norm exceeds opts.div_bound (Diverged).
// Samples are the accepted step endpoints; times are relative to the start.
Trajectory integrate(const FieldFn& field, const Vec& x0,
                     const IntegratorOptions& opts, const StopFn& stop = {});

// Field with Jacobians, as needed by the variational equations:
// writes dx = V(x), Jx = dV/dx (n-by-n), Jp = dV/dp (n-by-m).
using JacFieldFn = std::function<void(const Vec& x, Vec& dx, Mat& Jx, Mat& Jp)>;

// Packs x and S into one augmented state so that the flow and the
// variational equations dS/dt = Jx*S + Jp share one error-controlled step
// sequence. Same termination semantics as integrate(); the divergence and
// stop predicates look at the x block only.
SensTrajectory integrate_augmented(const JacFieldFn& field, const Vec& y0,
                                   const Mat& S0, const IntegratorOptions& opts,
                                   const StopFn& stop = {});

// Builds the augmented right-hand side over z = [x; vec_rowmajor(S)].
FieldFn make_augmented_field(const JacFieldFn& field, int n, int m);

} // namespace safemargin
