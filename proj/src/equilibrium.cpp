#include "safemargin/equilibrium.hpp"

#include <cmath>

namespace safemargin {

namespace {
constexpr int kMaxNewtonIter = 100;
constexpr int kMaxDampings = 30;
} // namespace

SepInfo find_sep(const SystemModel& model, const Vec& p, const Vec& guess) {
    if (!guess.allFinite())
        throw std::invalid_argument("find_sep: non-finite guess");

    Vec x = guess;
    Vec v(model.n), v_trial(model.n);
    Mat Jx(model.n, model.n), Jp(model.n, model.m);

    field_eval(model, x, p, v, Jx, Jp);
    double res = inf_norm(v);

    int iter = 0;
    while (res > kSepNewtonTol) {
        if (++iter > kMaxNewtonIter)
            throw NewtonDiverged("equilibrium Newton did not reach tolerance");

        Eigen::PartialPivLU<Mat> lu(Jx);
        const Mat& lum = lu.matrixLU();
        double dmin = lum.diagonal().cwiseAbs().minCoeff();
        double dmax = lum.diagonal().cwiseAbs().maxCoeff();
        if (dmin <= 1e-14 * std::max(1.0, dmax))
            throw SingularJacobian();
        Vec step = lu.solve(-v);

        // halve the step until the residual decreases
        double scale = 1.0;
        bool improved = false;
        Vec x_trial;
        for (int d = 0; d <= kMaxDampings; ++d) {
            x_trial = x + scale * step;
            if (x_trial.allFinite()) {
                field_eval(model, x_trial, p, v_trial, Jx, Jp);
                if (inf_norm(v_trial) < res) {
                    improved = true;
                    break;
                }
            }
            scale *= 0.5;
        }
        if (!improved)
            throw NewtonDiverged("equilibrium Newton stalled (damping exhausted)");
        x = x_trial;
        v = v_trial;
        res = inf_norm(v);
    }

    // Jx, Jp hold the Jacobians at the accepted x
    field_eval(model, x, p, v, Jx, Jp);
    res = inf_norm(v);

    SepInfo info;
    info.x_star = x;
    info.residual_norm = res;

    Eigen::EigenSolver<Mat> es(Jx, /*computeEigenvectors=*/false);
    if (es.info() != Eigen::Success)
        throw NewtonDiverged("eigenvalue computation failed");
    info.eigenvalues = es.eigenvalues();

    double max_re = info.eigenvalues.real().maxCoeff();
    if (max_re > -kHyperbolicityMargin)
        throw NotStable();
    if (info.eigenvalues.real().cwiseAbs().minCoeff() < kHyperbolicityMargin)
        throw NotHyperbolic();

    Eigen::PartialPivLU<Mat> lu(Jx);
    const Mat& lum = lu.matrixLU();
    double dmin = lum.diagonal().cwiseAbs().minCoeff();
    double dmax = lum.diagonal().cwiseAbs().maxCoeff();
    if (dmin <= 1e-14 * std::max(1.0, dmax))
        throw SingularJacobian();
    info.dXdp = -lu.solve(Jp);
    return info;
}

} // namespace safemargin
