#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "safemargin/algo_options.hpp"
#include "safemargin/expr.hpp"
#include "safemargin/ode.hpp"
#include "safemargin/types.hpp"

namespace safemargin {

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what)
        : std::runtime_error("config error: " + what) {}
};

struct MetricNotPD : std::runtime_error {
    MetricNotPD() : std::runtime_error("metric P is not symmetric positive definite") {}
};

// Symmetric positive definite matrix defining <p,q>_P, ||.||_P and d_P.
class Metric {
public:
    Metric() = default;
    explicit Metric(Mat P);  // throws MetricNotPD

    const Mat& P() const { return P_; }
    double norm(const Vec& v) const { return std::sqrt(v.dot(P_ * v)); }
    double distance(const Vec& a, const Vec& b) const { return norm(a - b); }
    Vec solve(const Vec& rhs) const { return llt_.solve(rhs); }  // P^{-1} rhs
    // Maps a Euclidean unit vector to a P-metric unit vector.
    Vec unit_from_euclidean(const Vec& e) const;

private:
    Mat P_;
    Eigen::LLT<Mat> llt_;
};

struct DisturbanceSpec {
    enum class Kind { Algebraic, FaultOn };
    Kind kind = Kind::Algebraic;

    // Algebraic: y_i(p), expressions over parameters only.
    std::vector<ExprPtr> map;
    std::vector<std::vector<ExprPtr>> map_jac;  // n x m, d map_i / d p_k

    // FaultOn: temporary fault dynamics g_i(x,p) applied for `duration`
    // seconds starting from the pre-disturbance equilibrium.
    std::vector<ExprPtr> fault_field;
    std::vector<std::vector<ExprPtr>> fault_jac_x;  // n x n
    std::vector<std::vector<ExprPtr>> fault_jac_p;  // n x m
    double duration = 0.0;

    std::vector<Tape> map_tape;
    std::vector<Tape> map_jac_tape;      // row-major n x m
    std::vector<Tape> fault_tape;
    std::vector<Tape> fault_jac_x_tape;  // row-major n x n
    std::vector<Tape> fault_jac_p_tape;  // row-major n x m
};

struct RecoveryOptions {
    double conv_tol = 1e-4;  // inf-norm ball around the SEP counted as recovered
};

struct SystemModel {
    int n = 0;  // states
    int m = 0;  // parameters
    std::vector<std::string> state_names;
    std::vector<std::string> param_names;

    std::vector<ExprPtr> field;                    // n expressions
    std::vector<std::vector<ExprPtr>> jac_x;       // n x n, exactly diff() of field
    std::vector<std::vector<ExprPtr>> jac_p;       // n x m

    std::vector<Tape> field_tape;
    std::vector<Tape> jac_x_tape;  // row-major n x n
    std::vector<Tape> jac_p_tape;  // row-major n x m

    DisturbanceSpec disturbance;
    Metric metric;
    Vec p0;
    Vec sep_guess;

    IntegratorOptions integrator;
    RecoveryOptions recovery;
    AlgoOptions algo;
};

SystemModel build_model(const nlohmann::json& config);
SystemModel load_model(const std::string& path);

// dx = V_p(x); optionally the state and parameter Jacobians at (x,p).
void field_eval(const SystemModel& model, const Vec& x, const Vec& p, Vec& dx);
void field_eval(const SystemModel& model, const Vec& x, const Vec& p, Vec& dx,
                Mat& Jx, Mat& Jp);

// Right-hand side with Jacobians at fixed p, for the variational equations.
JacFieldFn post_disturbance_jac_field(const SystemModel& model, const Vec& p);
JacFieldFn fault_jac_field(const SystemModel& model, const Vec& p);

// Post-disturbance initial condition y(p) and its derivative Dy(p).
// FaultOn needs the pre-disturbance equilibrium and its sensitivity;
// `sep_x_star` / `sep_dXdp` are taken from equilibrium::find_sep.
struct DisturbanceResult {
    Vec y;
    Mat Dy;  // n x m
};
DisturbanceResult disturbance_eval(const SystemModel& model, const Vec& p,
                                   const Vec& sep_x_star, const Mat& sep_dXdp);

// State-only fast path (no sensitivity integration).
Vec disturbance_y(const SystemModel& model, const Vec& p, const Vec& sep_x_star);

} // namespace safemargin
