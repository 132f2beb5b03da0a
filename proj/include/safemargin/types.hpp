#pragma once

#include <Eigen/Dense>

namespace safemargin {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Entrywise matrix 1-norm: sum of absolute values of all entries.
inline double entrywise_one_norm(const Mat& m) {
    return m.array().abs().sum();
}

inline double inf_norm(const Vec& v) {
    return v.size() ? v.array().abs().maxCoeff() : 0.0;
}

} // namespace safemargin
