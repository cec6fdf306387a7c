#pragma once

// Exponential-family primitives shared by every model in the library.
//
// A family is any type modelling `ExponentialFamily`: it exposes the
// sufficient statistic phi(x), the log-partition G(theta), the link
// g = grad G mapping natural to expectation parameters and its inverse g*.
// Densities are P(x|theta) = exp(theta . phi(x) - G(theta) + log h(x)).
//
// Natural and expectation parameters are distinct types so that one cannot be
// passed where the other is expected.

#include <concepts>
#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "oem/error.hpp"
#include "oem/numeric.hpp"

namespace oem {

using Observation = Vector;
using Sequence = std::vector<Observation>;
using Rng = std::mt19937_64;

struct NaturalParams {
    Vector values;
    NaturalParams() = default;
    explicit NaturalParams(Vector v) : values(std::move(v)) {}
    Eigen::Index size() const { return values.size(); }
};

struct ExpectationParams {
    Vector values;
    ExpectationParams() = default;
    explicit ExpectationParams(Vector v) : values(std::move(v)) {}
    Eigen::Index size() const { return values.size(); }
};

template <class F>
concept ExponentialFamily = std::copy_constructible<F> &&
    requires(const F& f, const NaturalParams& theta, const ExpectationParams& mu,
             const Observation& x, Rng& rng) {
        { f.dim_stat() } -> std::convertible_to<Eigen::Index>;
        { f.dim_obs() } -> std::convertible_to<Eigen::Index>;
        { f.suff_stat(x) } -> std::convertible_to<Vector>;
        { f.log_partition(theta) } -> std::convertible_to<double>;
        { f.log_base_measure(x) } -> std::convertible_to<double>;
        { f.link(theta) } -> std::same_as<ExpectationParams>;
        { f.inverse_link(mu) } -> std::same_as<NaturalParams>;
        { f.sample(theta, rng) } -> std::convertible_to<Observation>;
        { f.in_natural_domain(theta) } -> std::convertible_to<bool>;
        f.check_natural(theta);
        { f.regularize(mu) } -> std::same_as<ExpectationParams>;
        { f.name() } -> std::convertible_to<std::string>;
    };

// log P(x | theta) given a precomputed log-partition value.
template <ExponentialFamily F>
double log_density(const F& family, const NaturalParams& theta, double log_partition, const Observation& x) {
    return theta.values.dot(family.suff_stat(x)) - log_partition + family.log_base_measure(x);
}

template <ExponentialFamily F>
double log_density(const F& family, const NaturalParams& theta, const Observation& x) {
    return log_density(family, theta, family.log_partition(theta), x);
}

// A component ready for repeated density evaluation.
struct PreparedComponent {
    NaturalParams theta;
    double log_partition = 0.0;
};

template <ExponentialFamily F>
PreparedComponent prepare(const F& family, const ExpectationParams& mu) {
    PreparedComponent c{family.inverse_link(mu), 0.0};
    c.log_partition = family.log_partition(c.theta);
    return c;
}

// Delta_G(theta_tilde, theta) = G(theta_tilde) - G(theta) - g(theta).(theta_tilde - theta),
// the relative entropy from P(.|theta) to P(.|theta_tilde).
template <ExponentialFamily F>
double bregman_divergence(const F& family, const NaturalParams& theta_tilde, const NaturalParams& theta) {
    family.check_natural(theta_tilde);
    family.check_natural(theta);
    const ExpectationParams mu = family.link(theta);
    return family.log_partition(theta_tilde) - family.log_partition(theta) -
           mu.values.dot(theta_tilde.values - theta.values);
}

namespace detail {

inline double checked_weight_sum(std::span<const double> weights, std::size_t count, const char* op) {
    if (weights.size() != count)
        throw InvalidArgument(std::string(op) + ": weights and parameters differ in length");
    if (count == 0) throw InvalidArgument(std::string(op) + ": nothing to combine");
    double total = 0.0;
    for (double w : weights) {
        if (!(w >= 0.0) || !std::isfinite(w)) throw InvalidArgument(std::string(op) + ": weights must be nonnegative");
        total += w;
    }
    if (!(total > 0.0)) throw InvalidArgument(std::string(op) + ": weights sum to zero");
    return total;
}

template <class P>
Vector weighted_mean(std::span<const double> weights, std::span<const P> params, double total) {
    Vector acc = Vector::Zero(params.front().size());
    for (std::size_t m = 0; m < params.size(); ++m) {
        if (params[m].size() != acc.size()) throw InvalidArgument("combine: parameter dimensions differ");
        if (weights[m] != 0.0) acc += weights[m] * params[m].values;
    }
    return acc / total;
}

}  // namespace detail

// argmin_theta sum_m w_m (G(theta) - theta . mu_m), returned in expectation
// coordinates: the weighted mean of the mu_m.
template <ExponentialFamily F>
ExpectationParams combine_partial(const F& family, std::span<const double> weights,
                                  std::span<const ExpectationParams> duals) {
    const double total = detail::checked_weight_sum(weights, duals.size(), "combine_partial");
    for (const auto& mu : duals)
        if (mu.size() != family.dim_stat()) throw InvalidArgument("combine_partial: wrong parameter dimension");
    return ExpectationParams(detail::weighted_mean(weights, duals, total));
}

// argmin_theta sum_m w_m Delta_G(theta, theta_m) = g*(sum_m w_m g(theta_m) / sum_m w_m).
template <ExponentialFamily F>
NaturalParams combine_forward(const F& family, std::span<const double> weights,
                              std::span<const NaturalParams> thetas) {
    const double total = detail::checked_weight_sum(weights, thetas.size(), "combine_forward");
    std::vector<ExpectationParams> duals;
    duals.reserve(thetas.size());
    for (const auto& theta : thetas) duals.push_back(family.link(theta));
    return family.inverse_link(ExpectationParams(
        detail::weighted_mean(weights, std::span<const ExpectationParams>(duals), total)));
}

// argmin_mu sum_m w_m Delta_G*(mu_m, mu): the weighted mean in dual coordinates.
template <ExponentialFamily F>
ExpectationParams combine_backward(const F& family, std::span<const double> weights,
                                   std::span<const ExpectationParams> duals) {
    const double total = detail::checked_weight_sum(weights, duals.size(), "combine_backward");
    for (const auto& mu : duals)
        if (mu.size() != family.dim_stat()) throw InvalidArgument("combine_backward: wrong parameter dimension");
    return ExpectationParams(detail::weighted_mean(weights, duals, total));
}

}  // namespace oem
