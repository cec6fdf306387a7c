#pragma once

// Concrete exponential families: multivariate Gaussian with full covariance
// and Poisson.

#include <cmath>
#include <random>
#include <string>

#include "oem/expfam.hpp"

namespace oem {

// Multivariate normal in dimension d.
//   phi(x)  = (x, vec(x x^T))                 length d + d^2, column-major
//   theta   = (Lambda m, vec(-Lambda / 2))    Lambda = Sigma^-1
//   mu      = (m, vec(Sigma + m m^T))
// The second-moment block of theta only enters through its symmetric part.
class GaussianFamily {
public:
    explicit GaussianFamily(Eigen::Index dim) : dim_(dim) {
        if (dim < 1) throw InvalidArgument("GaussianFamily: dimension must be at least 1");
    }

    Eigen::Index dim() const { return dim_; }
    Eigen::Index dim_obs() const { return dim_; }
    Eigen::Index dim_stat() const { return dim_ + dim_ * dim_; }
    std::string name() const { return "gaussian"; }

    Vector suff_stat(const Observation& x) const {
        check_observation(x);
        Vector phi(dim_stat());
        phi.head(dim_) = x;
        Eigen::Map<Matrix>(phi.data() + dim_, dim_, dim_) = x * x.transpose();
        return phi;
    }

    double log_base_measure(const Observation&) const { return 0.0; }

    double log_partition(const NaturalParams& theta) const {
        const auto [linear, precision] = split_natural(theta);
        Eigen::LLT<Matrix> llt(precision);
        const Vector mean = llt.solve(linear);
        const double log_det_precision = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
        return 0.5 * linear.dot(mean) - 0.5 * log_det_precision + 0.5 * static_cast<double>(dim_) * kLog2Pi;
    }

    ExpectationParams link(const NaturalParams& theta) const {
        const auto [linear, precision] = split_natural(theta);
        Eigen::LLT<Matrix> llt(precision);
        const Matrix cov = llt.solve(Matrix::Identity(dim_, dim_));
        const Vector mean = cov * linear;
        return from_moments(mean, symmetrize(cov));
    }

    NaturalParams inverse_link(const ExpectationParams& mu) const {
        if (mu.size() != dim_stat()) throw InvalidParameter("gaussian: expectation parameter has wrong length");
        for (Eigen::Index i = 0; i < mu.size(); ++i)
            if (!std::isfinite(mu.values[i]))
                throw InvalidParameter("gaussian: expectation coordinate " + std::to_string(i) + " is not finite");
        const Vector m = mean(mu);
        const Matrix cov = covariance(mu);
        Eigen::LLT<Matrix> llt(cov);
        if (llt.info() != Eigen::Success)
            throw InvalidParameter("gaussian: implied covariance (coordinates " + std::to_string(dim_) + ".." +
                                   std::to_string(dim_stat() - 1) + " minus mean outer product) is not positive definite");
        const Matrix precision = symmetrize(llt.solve(Matrix::Identity(dim_, dim_)));
        Vector theta(dim_stat());
        theta.head(dim_) = precision * m;
        Eigen::Map<Matrix>(theta.data() + dim_, dim_, dim_) = -0.5 * precision;
        return NaturalParams(std::move(theta));
    }

    Observation sample(const NaturalParams& theta, Rng& rng) const {
        const ExpectationParams mu = link(theta);
        return sample_moments(mean(mu), covariance(mu), rng);
    }

    Observation sample_moments(const Vector& m, const Matrix& cov, Rng& rng) const {
        std::normal_distribution<double> normal;
        Vector z(dim_);
        for (Eigen::Index i = 0; i < dim_; ++i) z[i] = normal(rng);
        Eigen::LLT<Matrix> llt(cov);
        if (llt.info() == Eigen::Success) return m + llt.matrixL() * z;
        return m + psd_sqrt(cov) * z;
    }

    bool in_natural_domain(const NaturalParams& theta) const {
        if (theta.size() != dim_stat() || !theta.values.allFinite()) return false;
        return Eigen::LLT<Matrix>(precision_block(theta)).info() == Eigen::Success;
    }

    void check_natural(const NaturalParams& theta) const {
        if (theta.size() != dim_stat()) throw InvalidParameter("gaussian: natural parameter has wrong length");
        for (Eigen::Index i = 0; i < theta.size(); ++i)
            if (!std::isfinite(theta.values[i]))
                throw InvalidParameter("gaussian: natural coordinate " + std::to_string(i) + " is not finite");
        if (Eigen::LLT<Matrix>(precision_block(theta)).info() != Eigen::Success)
            throw InvalidParameter("gaussian: second-order block (coordinates " + std::to_string(dim_) + ".." +
                                   std::to_string(dim_stat() - 1) + ") is not negative definite");
    }

    // Raises covariance eigenvalues to kCovarianceFloor.
    ExpectationParams regularize(const ExpectationParams& mu) const {
        const Vector m = mean(mu);
        return from_moments(m, floor_eigenvalues(covariance(mu)));
    }

    ExpectationParams from_moments(const Vector& m, const Matrix& cov) const {
        if (m.size() != dim_ || cov.rows() != dim_ || cov.cols() != dim_)
            throw InvalidArgument("gaussian: moment dimensions do not match the family");
        Vector mu(dim_stat());
        mu.head(dim_) = m;
        Eigen::Map<Matrix>(mu.data() + dim_, dim_, dim_) = symmetrize(cov) + m * m.transpose();
        return ExpectationParams(std::move(mu));
    }

    Vector mean(const ExpectationParams& mu) const { return mu.values.head(dim_); }

    Matrix second_moment(const ExpectationParams& mu) const {
        return symmetrize(Eigen::Map<const Matrix>(mu.values.data() + dim_, dim_, dim_));
    }

    Matrix covariance(const ExpectationParams& mu) const {
        const Vector m = mean(mu);
        return symmetrize(second_moment(mu) - m * m.transpose());
    }

    // Componentwise arithmetic mean of means and covariances (not of the
    // expectation parameters): the conventional "simple averaging" baseline.
    ExpectationParams average_moments(std::span<const double> weights,
                                      std::span<const ExpectationParams> params) const {
        const double total = detail::checked_weight_sum(weights, params.size(), "average_moments");
        Vector m = Vector::Zero(dim_);
        Matrix cov = Matrix::Zero(dim_, dim_);
        for (std::size_t i = 0; i < params.size(); ++i) {
            m += weights[i] * mean(params[i]);
            cov += weights[i] * covariance(params[i]);
        }
        return from_moments(m / total, cov / total);
    }

private:
    std::pair<Vector, Matrix> split_natural(const NaturalParams& theta) const {
        check_natural(theta);
        return {theta.values.head(dim_), precision_block(theta)};
    }

    Matrix precision_block(const NaturalParams& theta) const {
        return -2.0 * symmetrize(Eigen::Map<const Matrix>(theta.values.data() + dim_, dim_, dim_));
    }

    void check_observation(const Observation& x) const {
        if (x.size() != dim_)
            throw InvalidArgument("gaussian: observation has dimension " + std::to_string(x.size()) + ", expected " +
                                  std::to_string(dim_));
    }

    Eigen::Index dim_;
};

// Poisson counts: phi(x) = x, G(theta) = exp(theta), h(x) = 1/x!.
class PoissonFamily {
public:
    Eigen::Index dim_obs() const { return 1; }
    Eigen::Index dim_stat() const { return 1; }
    std::string name() const { return "poisson"; }

    Vector suff_stat(const Observation& x) const {
        if (x.size() != 1) throw InvalidArgument("poisson: observations are scalars");
        return x;
    }

    double log_base_measure(const Observation& x) const { return -std::lgamma(x[0] + 1.0); }

    double log_partition(const NaturalParams& theta) const {
        check_natural(theta);
        return std::exp(theta.values[0]);
    }

    ExpectationParams link(const NaturalParams& theta) const {
        check_natural(theta);
        return ExpectationParams(Vector::Constant(1, std::exp(theta.values[0])));
    }

    NaturalParams inverse_link(const ExpectationParams& mu) const {
        if (mu.size() != 1) throw InvalidParameter("poisson: expectation parameter has wrong length");
        if (!(mu.values[0] > 0.0) || !std::isfinite(mu.values[0]))
            throw InvalidParameter("poisson: expectation coordinate 0 (rate) must be positive and finite");
        return NaturalParams(Vector::Constant(1, std::log(mu.values[0])));
    }

    Observation sample(const NaturalParams& theta, Rng& rng) const {
        std::poisson_distribution<long long> poisson(std::exp(theta.values[0]));
        return Vector::Constant(1, static_cast<double>(poisson(rng)));
    }

    bool in_natural_domain(const NaturalParams& theta) const {
        return theta.size() == 1 && std::isfinite(theta.values[0]);
    }

    void check_natural(const NaturalParams& theta) const {
        if (theta.size() != 1) throw InvalidParameter("poisson: natural parameter has wrong length");
        if (!std::isfinite(theta.values[0])) throw InvalidParameter("poisson: natural coordinate 0 is not finite");
    }

    ExpectationParams regularize(const ExpectationParams& mu) const { return mu; }

    ExpectationParams average_moments(std::span<const double> weights,
                                      std::span<const ExpectationParams> params) const {
        const double total = detail::checked_weight_sum(weights, params.size(), "average_moments");
        return ExpectationParams(detail::weighted_mean(weights, params, total));
    }
};

static_assert(ExponentialFamily<GaussianFamily>);
static_assert(ExponentialFamily<PoissonFamily>);

}  // namespace oem
