#pragma once

// Finite mixtures of an exponential family: posteriors, likelihood, batch EM,
// the inertia-regularized online EM step and the divergence between mixtures.

#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "oem/expfam.hpp"

namespace oem {

using Warnings = std::vector<std::string>;

// Denominators below this leave a component unchanged.
inline constexpr double kDeadComponentMass = 1e-12;

template <ExponentialFamily F>
struct MixtureModel {
    F family;
    Vector weights;
    std::vector<ExpectationParams> components;

    Eigen::Index size() const { return weights.size(); }
};

struct MixturePosterior {
    Matrix gamma;  // N x k responsibilities, rows sum to one
};

// Complete-data statistics of a batch, averaged over observations:
//   mass[h] = (1/N) sum_n gamma_{n,h}
//   stat[h] = (1/N) sum_n gamma_{n,h} phi(v_n)
struct MixtureStats {
    Vector mass;
    std::vector<Vector> stat;
};

inline void add_warning(Warnings* warnings, std::string message) {
    if (warnings) warnings->push_back(std::move(message));
}

template <ExponentialFamily F>
void validate(const MixtureModel<F>& model) {
    const auto k = model.size();
    if (k < 1) throw InvalidModel("mixture: at least one component required");
    if (static_cast<Eigen::Index>(model.components.size()) != k)
        throw InvalidModel("mixture: weights and components differ in length");
    if ((model.weights.array() < 0.0).any() || !model.weights.allFinite())
        throw InvalidModel("mixture: weights must be nonnegative");
    if (std::abs(model.weights.sum() - 1.0) > 1e-9) throw InvalidModel("mixture: weights must sum to one");
    for (Eigen::Index h = 0; h < k; ++h) {
        if (model.components[h].size() != model.family.dim_stat())
            throw InvalidModel("mixture: component " + std::to_string(h) + " has wrong dimension");
        model.family.inverse_link(model.components[h]);
    }
}

template <ExponentialFamily F>
std::vector<PreparedComponent> prepare_components(const F& family, std::span<const ExpectationParams> components) {
    std::vector<PreparedComponent> out;
    out.reserve(components.size());
    for (const auto& mu : components) out.push_back(prepare(family, mu));
    return out;
}

namespace detail {

template <ExponentialFamily F>
void require_batch(const MixtureModel<F>& model, std::span<const Observation> batch, const char* op) {
    if (batch.empty()) throw InvalidArgument(std::string(op) + ": empty batch");
    for (std::size_t n = 0; n < batch.size(); ++n)
        if (batch[n].size() != model.family.dim_obs())
            throw InvalidArgument(std::string(op) + ": observation " + std::to_string(n) + " has wrong dimension");
}

// N x k matrix of log(omega_h) + log P(v_n | theta_h).
template <ExponentialFamily F>
Matrix log_joint(const MixtureModel<F>& model, std::span<const Observation> batch) {
    const auto prepared = prepare_components(model.family, std::span<const ExpectationParams>(model.components));
    const auto k = model.size();
    Matrix out(static_cast<Eigen::Index>(batch.size()), k);
    for (std::size_t n = 0; n < batch.size(); ++n) {
        const Vector phi = model.family.suff_stat(batch[n]);
        const double base = model.family.log_base_measure(batch[n]);
        for (Eigen::Index h = 0; h < k; ++h) {
            const double lw = model.weights[h] > 0.0 ? std::log(model.weights[h])
                                                     : -std::numeric_limits<double>::infinity();
            const double ld = prepared[h].theta.values.dot(phi) - prepared[h].log_partition + base;
            if (!std::isfinite(ld))
                throw NumericalError("mixture: non-finite log-density for observation " + std::to_string(n));
            out(static_cast<Eigen::Index>(n), h) = lw + ld;
        }
    }
    return out;
}

}  // namespace detail

template <ExponentialFamily F>
MixturePosterior posterior(const MixtureModel<F>& model, std::span<const Observation> batch) {
    detail::require_batch(model, batch, "posterior");
    Matrix gamma = detail::log_joint(model, batch);
    for (Eigen::Index n = 0; n < gamma.rows(); ++n) {
        const double lse = log_sum_exp(gamma.row(n).transpose());
        if (!std::isfinite(lse))
            throw NumericalError("mixture: observation " + std::to_string(n) + " has zero likelihood");
        gamma.row(n) = (gamma.row(n).array() - lse).exp();
        gamma.row(n) /= gamma.row(n).sum();
    }
    return {std::move(gamma)};
}

// Per-observation log P(v_n | model).
template <ExponentialFamily F>
Vector log_likelihoods(const MixtureModel<F>& model, std::span<const Observation> batch) {
    detail::require_batch(model, batch, "log_likelihoods");
    const Matrix lj = detail::log_joint(model, batch);
    Vector out(lj.rows());
    for (Eigen::Index n = 0; n < lj.rows(); ++n) {
        out[n] = log_sum_exp(lj.row(n).transpose());
        if (!std::isfinite(out[n]))
            throw NumericalError("mixture: observation " + std::to_string(n) + " has zero likelihood");
    }
    return out;
}

// -(1/N) sum_n log sum_h omega_h P(v_n | theta_h)
template <ExponentialFamily F>
double nll(const MixtureModel<F>& model, std::span<const Observation> batch) {
    return -log_likelihoods(model, batch).mean();
}

template <ExponentialFamily F>
MixtureStats batch_statistics(const MixtureModel<F>& model, std::span<const Observation> batch) {
    const MixturePosterior post = posterior(model, batch);
    const auto k = model.size();
    const double inv_n = 1.0 / static_cast<double>(batch.size());
    MixtureStats s{Vector::Zero(k), std::vector<Vector>(k, Vector::Zero(model.family.dim_stat()))};
    for (std::size_t n = 0; n < batch.size(); ++n) {
        const Vector phi = model.family.suff_stat(batch[n]);
        for (Eigen::Index h = 0; h < k; ++h) {
            const double g = post.gamma(static_cast<Eigen::Index>(n), h);
            s.mass[h] += g;
            s.stat[h] += g * phi;
        }
    }
    s.mass *= inv_n;
    for (auto& v : s.stat) v *= inv_n;
    return s;
}

// One inertia-regularized EM step:
//   w~_h  = (w_h/eta + m_h) / (1/eta + 1)
//   mu~_h = (w_h mu_h/eta + s_h) / (w_h/eta + m_h)
// with m_h, s_h the batch statistics. eta -> inf is batch EM on the batch,
// eta -> 0 leaves the model unchanged.
template <ExponentialFamily F>
MixtureModel<F> online_em_step(const MixtureModel<F>& model, std::span<const Observation> batch, double eta,
                               Warnings* warnings = nullptr) {
    if (!(eta > 0.0)) throw InvalidArgument("mixture online_em_step: eta must be positive");
    const MixtureStats s = batch_statistics(model, batch);
    const double inertia = 1.0 / eta;
    MixtureModel<F> out = model;
    for (Eigen::Index h = 0; h < model.size(); ++h) {
        out.weights[h] = (inertia * model.weights[h] + s.mass[h]) / (inertia + 1.0);
        const double denom = inertia * model.weights[h] + s.mass[h];
        if (denom < kDeadComponentMass) {
            add_warning(warnings, "mixture: component " + std::to_string(h) + " has no mass; left unchanged");
            continue;
        }
        out.components[h] = model.family.regularize(
            ExpectationParams((inertia * model.weights[h] * model.components[h].values + s.stat[h]) / denom));
    }
    out.weights /= out.weights.sum();
    return out;
}

// Classical M-step: w~_h = m_h, mu~_h = s_h / m_h.
template <ExponentialFamily F>
MixtureModel<F> batch_em_step(const MixtureModel<F>& model, std::span<const Observation> batch,
                              Warnings* warnings = nullptr) {
    const MixtureStats s = batch_statistics(model, batch);
    MixtureModel<F> out = model;
    out.weights = s.mass / s.mass.sum();
    for (Eigen::Index h = 0; h < model.size(); ++h) {
        if (s.mass[h] < kDeadComponentMass) {
            add_warning(warnings, "mixture: component " + std::to_string(h) + " has no mass; left unchanged");
            continue;
        }
        out.components[h] = model.family.regularize(ExpectationParams(s.stat[h] / s.mass[h]));
    }
    return out;
}

// Stochastic approximation on the complete-data sufficient statistics
// (s_w, s_mu) = (w_h, w_h mu_h), followed by the usual M-step:
//   s <- s + eta_t (s_batch - s)
// Kept as an independent reference for online_em_step with
// eta = eta_t / (1 - eta_t).
template <ExponentialFamily F>
MixtureModel<F> cappe_oracle_step(const MixtureModel<F>& model, std::span<const Observation> batch, double eta_t) {
    if (!(eta_t > 0.0 && eta_t < 1.0)) throw InvalidArgument("cappe_oracle_step: eta_t must lie in (0, 1)");
    detail::require_batch(model, batch, "cappe_oracle_step");
    const auto k = model.size();
    const auto dim = model.family.dim_stat();

    // Running complete-data statistics of the current model.
    Vector s_weight = model.weights;
    Matrix s_moment(dim, k);
    for (Eigen::Index h = 0; h < k; ++h) s_moment.col(h) = model.weights[h] * model.components[h].values;

    // Statistics of the batch under the current posterior.
    const MixturePosterior post = posterior(model, batch);
    Matrix phi(dim, static_cast<Eigen::Index>(batch.size()));
    for (std::size_t n = 0; n < batch.size(); ++n) phi.col(static_cast<Eigen::Index>(n)) = model.family.suff_stat(batch[n]);
    const double n_obs = static_cast<double>(batch.size());
    const Vector batch_weight = post.gamma.colwise().sum().transpose() / n_obs;
    const Matrix batch_moment = phi * post.gamma / n_obs;

    s_weight += eta_t * (batch_weight - s_weight);
    s_moment += eta_t * (batch_moment - s_moment);

    MixtureModel<F> out = model;
    out.weights = s_weight / s_weight.sum();
    for (Eigen::Index h = 0; h < k; ++h) {
        if (s_weight[h] < kDeadComponentMass) continue;
        out.components[h] = model.family.regularize(ExpectationParams(s_moment.col(h) / s_weight[h]));
    }
    return out;
}

// Relative entropy between the joints P(h, v | a) and P(h, v | b):
//   sum_h w_h log(w_h / w~_h) + sum_h w_h Delta_G(theta~_h, theta_h)
template <ExponentialFamily F>
double mixture_divergence(const MixtureModel<F>& a, const MixtureModel<F>& b) {
    if (a.size() != b.size()) throw InvalidArgument("mixture_divergence: component counts differ");
    if (a.family.dim_stat() != b.family.dim_stat()) throw InvalidArgument("mixture_divergence: families differ");
    double total = 0.0;
    for (Eigen::Index h = 0; h < a.size(); ++h) {
        const double w = a.weights[h];
        if (w <= 0.0) continue;
        if (b.weights[h] <= 0.0) return std::numeric_limits<double>::infinity();
        total += w * std::log(w / b.weights[h]);
        total += w * bregman_divergence(a.family, a.family.inverse_link(b.components[h]),
                                        a.family.inverse_link(a.components[h]));
    }
    return total;
}

// EM upper bound U_at(candidate | batch), including the posterior entropy so
// that U_at(at | batch) = nll(at, batch):
//   (1/N) sum_n sum_h gamma_{n,h} (log gamma_{n,h} - log w~_h - log P(v_n | theta~_h))
template <ExponentialFamily F>
double em_upper_bound(const MixtureModel<F>& at, const MixtureModel<F>& candidate, std::span<const Observation> batch) {
    if (at.size() != candidate.size()) throw InvalidArgument("em_upper_bound: component counts differ");
    const MixturePosterior post = posterior(at, batch);
    const Matrix lj = detail::log_joint(candidate, batch);
    double total = 0.0;
    for (Eigen::Index n = 0; n < lj.rows(); ++n)
        for (Eigen::Index h = 0; h < lj.cols(); ++h) {
            const double g = post.gamma(n, h);
            if (g > 0.0) total += g * (std::log(g) - lj(n, h));
        }
    return total / static_cast<double>(lj.rows());
}

// U_at(candidate | batch) + (1/eta) Delta(at, candidate): the function the
// online step minimizes.
template <ExponentialFamily F>
double online_objective(const MixtureModel<F>& at, const MixtureModel<F>& candidate,
                        std::span<const Observation> batch, double eta) {
    return em_upper_bound(at, candidate, batch) + mixture_divergence(at, candidate) / eta;
}

template <ExponentialFamily F>
std::vector<Observation> sample_mixture(const MixtureModel<F>& model, std::size_t count, Rng& rng,
                                        std::vector<int>* labels = nullptr) {
    std::discrete_distribution<int> pick(model.weights.data(), model.weights.data() + model.weights.size());
    std::vector<NaturalParams> thetas;
    for (const auto& mu : model.components) thetas.push_back(model.family.inverse_link(mu));
    std::vector<Observation> out;
    out.reserve(count);
    if (labels) labels->clear();
    for (std::size_t i = 0; i < count; ++i) {
        const int h = pick(rng);
        out.push_back(model.family.sample(thetas[h], rng));
        if (labels) labels->push_back(h);
    }
    return out;
}

}  // namespace oem
