#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include <Eigen/Dense>

#include "oem/error.hpp"

namespace oem {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// Smallest eigenvalue allowed in a covariance after an update.
inline constexpr double kCovarianceFloor = 1e-8;

inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;

// log(sum_i exp(x_i)); -inf for an empty or all -inf input.
inline double log_sum_exp(const Eigen::Ref<const Vector>& x) {
    if (x.size() == 0) return -std::numeric_limits<double>::infinity();
    const double m = x.maxCoeff();
    if (!std::isfinite(m)) return m;
    return m + std::log((x.array() - m).exp().sum());
}

// Digamma for x > 0: upward recurrence to x >= 6, then the asymptotic series.
inline double digamma(double x) {
    if (!(x > 0.0)) throw InvalidArgument("digamma: argument must be positive");
    double acc = 0.0;
    while (x < 6.0) {
        acc -= 1.0 / x;
        x += 1.0;
    }
    const double r = 1.0 / (x * x);
    // Bernoulli terms B_2k / (2k x^2k), k = 1..7
    const double series =
        r * (1.0 / 12 -
             r * (1.0 / 120 -
                  r * (1.0 / 252 -
                       r * (1.0 / 240 -
                            r * (1.0 / 132 - r * (691.0 / 32760 - r * (1.0 / 12)))))));
    return acc + std::log(x) - 0.5 / x - series;
}

// Trigamma for x > 0, same scheme as digamma.
inline double trigamma(double x) {
    if (!(x > 0.0)) throw InvalidArgument("trigamma: argument must be positive");
    double acc = 0.0;
    while (x < 6.0) {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    const double r = 1.0 / (x * x);
    const double series =
        r * (1.0 / 6 -
             r * (1.0 / 30 -
                  r * (1.0 / 42 - r * (1.0 / 30 - r * (5.0 / 66 - r * (691.0 / 2730 - r * (7.0 / 6)))))));
    return acc + 1.0 / x + 0.5 * r + series / x;
}

inline Matrix symmetrize(const Matrix& m) { return 0.5 * (m + m.transpose()); }

// Symmetrizes and raises every eigenvalue to at least `floor`.
inline Matrix floor_eigenvalues(const Matrix& m, double floor = kCovarianceFloor) {
    Eigen::SelfAdjointEigenSolver<Matrix> eig(symmetrize(m));
    Vector values = eig.eigenvalues();
    if (values.minCoeff() >= floor) return symmetrize(m);
    values = values.cwiseMax(floor);
    return symmetrize(eig.eigenvectors() * values.asDiagonal() * eig.eigenvectors().transpose());
}

inline double min_eigenvalue(const Matrix& m) {
    Eigen::SelfAdjointEigenSolver<Matrix> eig(symmetrize(m), Eigen::EigenvaluesOnly);
    return eig.eigenvalues().minCoeff();
}

inline bool is_spd(const Matrix& m, double tol = 1e-10) {
    if (m.rows() != m.cols() || !m.allFinite()) return false;
    return min_eigenvalue(m) > tol;
}

// Throws InvalidArgument naming `what` unless m is symmetric positive definite.
inline void require_spd(const Matrix& m, const std::string& what, double tol = 1e-10) {
    if (!is_spd(m, tol)) throw InvalidArgument(what + " must be symmetric positive definite");
}

// log|m| for SPD m via Cholesky; throws NumericalError otherwise.
inline double log_det_spd(const Matrix& m) {
    Eigen::LLT<Matrix> llt(symmetrize(m));
    if (llt.info() != Eigen::Success) throw NumericalError("log_det_spd: matrix is not positive definite");
    return 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
}

// Symmetric square root of a PSD matrix (negative eigenvalues clipped to 0).
inline Matrix psd_sqrt(const Matrix& m) {
    Eigen::SelfAdjointEigenSolver<Matrix> eig(symmetrize(m));
    const Vector root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return eig.eigenvectors() * root.asDiagonal() * eig.eigenvectors().transpose();
}

// Log-determinant divergence tr(X Y^-1) - log|X Y^-1| - d.
inline double log_det_divergence(const Matrix& x, const Matrix& y) {
    if (x.rows() != y.rows() || x.cols() != y.cols())
        throw InvalidArgument("log_det_divergence: dimension mismatch");
    require_spd(x, "log_det_divergence: X");
    require_spd(y, "log_det_divergence: Y");
    Eigen::LLT<Matrix> lly(symmetrize(y));
    const double trace = lly.solve(x).trace();
    const double value = trace - (log_det_spd(x) - log_det_spd(y)) - static_cast<double>(x.rows());
    return std::max(0.0, value);
}

}  // namespace oem
