#pragma once

// Combining models trained on disjoint shards by minimizing
// sum_m alpha_m Delta(Theta^(m), Theta~) over Theta~, plus the parameter-wise
// averaging baseline and a sampled fallback.

#include <algorithm>
#include <span>
#include <string>
#include <vector>

#include "oem/dirichlet.hpp"
#include "oem/expfam.hpp"
#include "oem/hmm.hpp"
#include "oem/mixture.hpp"

namespace oem {

template <class Model>
struct WeightedModels {
    std::vector<Model> models;
    Vector weights;
};

namespace detail {

template <class Model>
double check_weighted(const WeightedModels<Model>& wm, const char* op) {
    if (wm.models.empty()) throw InvalidArgument(std::string(op) + ": no models");
    return checked_weight_sum(std::span<const double>(wm.weights.data(), static_cast<std::size_t>(wm.weights.size())),
                              wm.models.size(), op);
}

template <class Model>
std::size_t heaviest(const WeightedModels<Model>& wm) {
    Eigen::Index best = 0;
    wm.weights.maxCoeff(&best);
    return static_cast<std::size_t>(best);
}

}  // namespace detail

// omega_h = sum_m a_m omega^m_h / sum_m a_m
// mu_h    = sum_m a_m omega^m_h mu^m_h / sum_m a_m omega^m_h
template <ExponentialFamily F>
MixtureModel<F> combine_mixtures(const WeightedModels<MixtureModel<F>>& wm, Warnings* warnings = nullptr) {
    const double total = detail::check_weighted(wm, "combine_mixtures");
    const auto k = wm.models.front().size();
    for (const auto& m : wm.models)
        if (m.size() != k) throw InvalidArgument("combine_mixtures: models have different numbers of components");
    MixtureModel<F> out = wm.models[detail::heaviest(wm)];
    out.weights.setZero();
    for (std::size_t m = 0; m < wm.models.size(); ++m) out.weights += wm.weights[m] * wm.models[m].weights;
    for (Eigen::Index h = 0; h < k; ++h) {
        if (out.weights[h] < kDeadComponentMass * total) {
            add_warning(warnings, "combine_mixtures: component " + std::to_string(h) + " has no mass; taken from the heaviest model");
            continue;
        }
        Vector acc = Vector::Zero(out.family.dim_stat());
        for (std::size_t m = 0; m < wm.models.size(); ++m)
            acc += wm.weights[m] * wm.models[m].weights[h] * wm.models[m].components[static_cast<std::size_t>(h)].values;
        out.components[static_cast<std::size_t>(h)] = ExpectationParams(acc / out.weights[h]);
    }
    out.weights /= out.weights.sum();
    return out;
}

// pi_h = sum_m a_m pi^m_h / sum_m a_m
// a_hh' and mu_h weighted by a_m u^m_h over transient states.
template <ExponentialFamily F>
HmmModel<F> combine_hmms(const WeightedModels<HmmModel<F>>& wm, Warnings* warnings = nullptr) {
    const double total = detail::check_weighted(wm, "combine_hmms");
    const auto& first = wm.models.front();
    std::vector<Vector> usages;
    for (const auto& m : wm.models) {
        if (m.states() != first.states() || m.transient_count != first.transient_count)
            throw InvalidArgument("combine_hmms: models have different shapes");
        usages.push_back(expected_usage(m));
    }
    HmmModel<F> out = wm.models[detail::heaviest(wm)];
    out.initial.setZero();
    for (std::size_t m = 0; m < wm.models.size(); ++m) out.initial += wm.weights[m] * wm.models[m].initial;
    out.initial /= out.initial.sum();
    for (Eigen::Index h = 0; h < first.transient_count; ++h) {
        double mass = 0.0;
        Vector row = Vector::Zero(first.states());
        Vector mu = Vector::Zero(first.family.dim_stat());
        for (std::size_t m = 0; m < wm.models.size(); ++m) {
            const double w = wm.weights[m] * usages[m][h];
            mass += w;
            row += w * wm.models[m].transitions.row(h).transpose();
            mu += w * wm.models[m].emissions[static_cast<std::size_t>(h)].values;
        }
        if (mass < kDeadComponentMass * total) {
            add_warning(warnings, "combine_hmms: state " + std::to_string(h) + " has no usage; taken from the heaviest model");
            continue;
        }
        out.transitions.row(h) = (row / row.sum()).transpose();
        out.emissions[static_cast<std::size_t>(h)] = ExpectationParams(mu / mass);
    }
    return out;
}

// Parameter-wise weighted mean of mixture weights, component means and
// covariances.
template <ExponentialFamily F>
MixtureModel<F> combine_simple_average(const WeightedModels<MixtureModel<F>>& wm) {
    const double total = detail::check_weighted(wm, "combine_simple_average");
    const auto k = wm.models.front().size();
    for (const auto& m : wm.models)
        if (m.size() != k) throw InvalidArgument("combine_simple_average: models have different numbers of components");
    const std::span<const double> weights(wm.weights.data(), static_cast<std::size_t>(wm.weights.size()));
    MixtureModel<F> out = wm.models.front();
    out.weights.setZero();
    for (std::size_t m = 0; m < wm.models.size(); ++m) out.weights += wm.weights[m] * wm.models[m].weights;
    out.weights /= total;
    out.weights /= out.weights.sum();
    for (Eigen::Index h = 0; h < k; ++h) {
        std::vector<ExpectationParams> comps;
        for (const auto& m : wm.models) comps.push_back(m.components[static_cast<std::size_t>(h)]);
        out.components[static_cast<std::size_t>(h)] =
            out.family.average_moments(weights, std::span<const ExpectationParams>(comps));
    }
    return out;
}

template <ExponentialFamily F>
HmmModel<F> combine_simple_average(const WeightedModels<HmmModel<F>>& wm) {
    const double total = detail::check_weighted(wm, "combine_simple_average");
    const auto& first = wm.models.front();
    for (const auto& m : wm.models)
        if (m.states() != first.states() || m.transient_count != first.transient_count)
            throw InvalidArgument("combine_simple_average: models have different shapes");
    const std::span<const double> weights(wm.weights.data(), static_cast<std::size_t>(wm.weights.size()));
    HmmModel<F> out = first;
    out.initial.setZero();
    out.transitions.setZero();
    for (std::size_t m = 0; m < wm.models.size(); ++m) {
        out.initial += wm.weights[m] * wm.models[m].initial;
        out.transitions += wm.weights[m] * wm.models[m].transitions;
    }
    out.initial /= total;
    out.transitions /= total;
    for (Eigen::Index h = 0; h < first.transient_count; ++h) {
        std::vector<ExpectationParams> comps;
        for (const auto& m : wm.models) comps.push_back(m.emissions[static_cast<std::size_t>(h)]);
        out.emissions[static_cast<std::size_t>(h)] =
            out.family.average_moments(weights, std::span<const ExpectationParams>(comps));
    }
    return out;
}

// Draws V'_m of size N'_m from each model and returns
// argmin_Theta~ sum_m a_m U_{Theta^(m)}(Theta~ | V'_m) as computed by `solver`.
//   sampler(model, count, rng) -> data set
//   solver(models, data sets, weights) -> combined model
template <class Model, class Sampler, class Solver>
Model combine_sampled(const WeightedModels<Model>& wm, std::span<const std::size_t> sample_sizes, Rng& rng,
                      Sampler&& sampler, Solver&& solver) {
    detail::check_weighted(wm, "combine_sampled");
    if (sample_sizes.size() != wm.models.size())
        throw InvalidArgument("combine_sampled: one sample size per model required");
    using Data = decltype(sampler(wm.models.front(), std::size_t{1}, rng));
    std::vector<Data> data;
    data.reserve(wm.models.size());
    for (std::size_t m = 0; m < wm.models.size(); ++m) {
        if (sample_sizes[m] < 1) throw InvalidArgument("combine_sampled: sample sizes must be positive");
        data.push_back(sampler(wm.models[m], sample_sizes[m], rng));
    }
    return solver(wm, data);
}

// Sampled combination of mixtures: the weighted M-step over each model's
// posterior statistics on its own samples.
template <ExponentialFamily F>
MixtureModel<F> combine_sampled_mixtures(const WeightedModels<MixtureModel<F>>& wm,
                                         std::span<const std::size_t> sample_sizes, Rng& rng,
                                         Warnings* warnings = nullptr) {
    auto sampler = [](const MixtureModel<F>& m, std::size_t count, Rng& r) { return sample_mixture(m, count, r); };
    auto solver = [warnings](const WeightedModels<MixtureModel<F>>& w, const std::vector<std::vector<Observation>>& data) {
        const auto k = w.models.front().size();
        Vector mass = Vector::Zero(k);
        std::vector<Vector> stat(static_cast<std::size_t>(k), Vector::Zero(w.models.front().family.dim_stat()));
        for (std::size_t m = 0; m < w.models.size(); ++m) {
            const MixtureStats st = batch_statistics(w.models[m], std::span<const Observation>(data[m]));
            mass += w.weights[m] * st.mass;
            for (std::size_t h = 0; h < stat.size(); ++h) stat[h] += w.weights[m] * st.stat[h];
        }
        MixtureModel<F> out = w.models[detail::heaviest(w)];
        for (Eigen::Index h = 0; h < k; ++h) {
            if (mass[h] < kDeadComponentMass * w.weights.sum()) {
                add_warning(warnings, "combine_sampled: component " + std::to_string(h) + " received no samples");
                continue;
            }
            out.components[static_cast<std::size_t>(h)] =
                out.family.regularize(ExpectationParams(stat[static_cast<std::size_t>(h)] / mass[h]));
        }
        out.weights = mass / mass.sum();
        return out;
    };
    return combine_sampled(wm, sample_sizes, rng, sampler, solver);
}

// Sampled combination of compound Dirichlet models; each pseudo-document has
// `words_per_doc` words.
inline DirichletModel combine_sampled_dirichlet(const WeightedModels<DirichletModel>& wm,
                                                std::span<const std::size_t> sample_sizes, std::int64_t words_per_doc,
                                                Rng& rng, const NewtonSettings& settings = {}) {
    auto sampler = [words_per_doc](const DirichletModel& m, std::size_t count, Rng& r) {
        return sample_documents(m, count, words_per_doc, r);
    };
    auto solver = [&settings](const WeightedModels<DirichletModel>& w, const std::vector<std::vector<CountVector>>& data) {
        const double total = w.weights.sum();
        Vector s = Vector::Zero(w.models.front().dim());
        Vector init = Vector::Zero(w.models.front().dim());
        for (std::size_t m = 0; m < w.models.size(); ++m) {
            if (w.models[m].dim() != s.size()) throw InvalidArgument("combine_sampled: models have different dimensions");
            s += w.weights[m] * posterior_log_means(w.models[m], std::span<const CountVector>(data[m]));
            init += w.weights[m] * w.models[m].alpha();
        }
        const NewtonResult res = newton_minimize(upper_bound_objective(s / total), init / total, settings.tol, settings.max_iter);
        return DirichletModel(res.x.cwiseMax(kPositivityFloor));
    };
    return combine_sampled(wm, sample_sizes, rng, sampler, solver);
}

}  // namespace oem
