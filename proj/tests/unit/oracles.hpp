#pragma once

// Independent reference computations used as test oracles. Nothing here
// calls into the solvers under test.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

namespace oracle {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Central differences of a scalar function of a matrix argument.
inline Matrix central_diff(const std::function<double(const Matrix&)>& f, const Matrix& at, double h = 1e-5) {
    Matrix g(at.rows(), at.cols());
    for (Eigen::Index i = 0; i < at.rows(); ++i) {
        for (Eigen::Index j = 0; j < at.cols(); ++j) {
            Matrix p = at, m = at;
            p(i, j) += h;
            m(i, j) -= h;
            g(i, j) = (f(p) - f(m)) / (2.0 * h);
        }
    }
    return g;
}

/// max |a - b| / max(scale, max |b|).
inline double rel_err(const Matrix& a, const Matrix& b, double scale = 1e-6) {
    const double denom = std::max(scale, b.cwiseAbs().maxCoeff());
    return (a - b).cwiseAbs().maxCoeff() / denom;
}

/// Vector Jacobian by central differences: column j = d f / d x_j.
inline Matrix jacobian_fd(const std::function<Vector(const Vector&)>& f, const Vector& x, double h = 1e-6) {
    const Vector f0 = f(x);
    Matrix jac(f0.size(), x.size());
    for (Eigen::Index j = 0; j < x.size(); ++j) {
        Vector p = x, m = x;
        p(j) += h;
        m(j) -= h;
        jac.col(j) = (f(p) - f(m)) / (2.0 * h);
    }
    return jac;
}

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

/// MCC from the confusion matrix, 0 when undefined.
inline double mcc(double tp, double tn, double fp, double fn) {
    const double d = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn);
    return d == 0.0 ? 0.0 : (tp * tn - fp * fn) / std::sqrt(d);
}

/// Uniform sample from the L2 ball of radius r in dimension n.
inline Vector sample_ball(int n, double r, std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    Vector v(n);
    for (int i = 0; i < n; ++i) v(i) = normal(rng);
    v.normalize();
    return v * r * std::pow(uni(rng), 1.0 / n);
}

}  // namespace oracle
