#pragma once

// Absorbing hidden Markov models with exponential-family emissions.
//
// States [0, s) are transient and emit one observation per visit; states
// [s, k) are absorbing, emit nothing and end the sequence. A sequence of T
// observations therefore corresponds to a hidden path h_1..h_T of transient
// states followed by one transition into an absorbing state:
//
//   P(v, h) = pi_{h_1} prod_{t<T} a_{h_t h_{t+1}} a_{h_T h_{T+1}} prod_t P(v_t | theta_{h_t})
//
// The expected number of visits to each transient state (its usage) is
// u^T = pi_s^T (I - Q)^-1 where Q is the transient block of the transitions.

#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "oem/expfam.hpp"
#include "oem/mixture.hpp"

namespace oem {

template <ExponentialFamily F>
struct HmmModel {
    F family;
    Vector initial;                         // k
    Matrix transitions;                     // k x k, row-stochastic
    std::vector<ExpectationParams> emissions;  // one per transient state
    Eigen::Index transient_count = 0;

    Eigen::Index states() const { return initial.size(); }
    Eigen::Index absorbing_count() const { return states() - transient_count; }
    auto transient_block() const { return transitions.topLeftCorner(transient_count, transient_count); }
    auto exit_block() const { return transitions.topRightCorner(transient_count, absorbing_count()); }
};

// Posterior quantities for one sequence of length T.
//   state_marginals(t, h)     = P(h_t = h | v)
//   pair_marginals[t](h, h')  = P(h_t = h, h_{t+1} = h' | v), t = 0..T-1;
//                               slice T-1 is the transition into absorption.
struct HmmPosteriors {
    Matrix state_marginals;
    std::vector<Matrix> pair_marginals;
    double log_likelihood = 0.0;
};

// Upper bound on the spectral radius of a nonnegative matrix from
// ||Q^m||_inf^(1/m) with m = 2^squarings.
inline double spectral_radius_bound(const Matrix& q, int squarings = 24) {
    if (q.size() == 0) return 0.0;
    Matrix p = q.cwiseAbs();
    double log_scale = 0.0;
    double norm = p.rowwise().sum().maxCoeff();
    if (norm == 0.0) return 0.0;
    p /= norm;
    log_scale = std::log(norm);
    double power = 1.0;
    for (int j = 0; j < squarings; ++j) {
        p = p * p;
        norm = p.rowwise().sum().maxCoeff();
        if (norm == 0.0) return 0.0;
        p /= norm;
        log_scale = 2.0 * log_scale + std::log(norm);
        power *= 2.0;
    }
    return std::exp(log_scale / power);
}

template <ExponentialFamily F>
void validate(const HmmModel<F>& model) {
    const auto k = model.states();
    const auto s = model.transient_count;
    if (s < 1 || s >= k) throw InvalidModel("hmm: need at least one transient and one absorbing state");
    if (model.transitions.rows() != k || model.transitions.cols() != k)
        throw InvalidModel("hmm: transition matrix must be k x k");
    if (static_cast<Eigen::Index>(model.emissions.size()) != s)
        throw InvalidModel("hmm: one emission per transient state required");
    auto check_simplex = [](const Vector& p, const std::string& what) {
        if (!p.allFinite() || (p.array() < 0.0).any() || std::abs(p.sum() - 1.0) > 1e-9)
            throw InvalidModel("hmm: " + what + " is not a probability vector");
    };
    check_simplex(model.initial, "initial distribution");
    for (Eigen::Index h = 0; h < k; ++h) check_simplex(model.transitions.row(h).transpose(), "transition row " + std::to_string(h));
    for (Eigen::Index h = s; h < k; ++h)
        if (model.transitions(h, h) != 1.0) throw InvalidModel("hmm: absorbing state " + std::to_string(h) + " must loop to itself");
    for (Eigen::Index h = 0; h < s; ++h) {
        if (model.emissions[h].size() != model.family.dim_stat())
            throw InvalidModel("hmm: emission " + std::to_string(h) + " has wrong dimension");
        model.family.inverse_link(model.emissions[h]);
    }
    if (!(spectral_radius_bound(model.transient_block()) < 1.0))
        throw InvalidModel("hmm: transient block has spectral radius >= 1 (absorption is not certain)");
}

// u^T = pi_s^T (I - Q)^-1
template <ExponentialFamily F>
Vector expected_usage(const HmmModel<F>& model) {
    const auto s = model.transient_count;
    if (s < 1 || s >= model.states()) throw InvalidModel("expected_usage: model has no absorbing state");
    const Matrix system = Matrix::Identity(s, s) - model.transient_block().transpose();
    Eigen::FullPivLU<Matrix> lu(system);
    if (!lu.isInvertible()) throw InvalidModel("expected_usage: I - Q is singular");
    Vector u = lu.solve(Vector(model.initial.head(s)));
    if (!u.allFinite() || (u.array() < -1e-9).any()) throw InvalidModel("expected_usage: usages are not finite and nonnegative");
    return u.cwiseMax(0.0);
}

namespace detail {

template <ExponentialFamily F>
HmmPosteriors forward_backward_prepared(const HmmModel<F>& model, std::span<const PreparedComponent> prepared,
                                        const Sequence& seq) {
    const auto k = model.states();
    const auto s = model.transient_count;
    const auto T = static_cast<Eigen::Index>(seq.size());
    if (T == 0) throw InvalidArgument("forward_backward: empty sequence");

    const Matrix q = model.transient_block();
    const Matrix r = model.exit_block();
    const Vector exit = r.rowwise().sum();

    // Emission likelihoods, shifted per time step by their maximum.
    Matrix b(T, s);
    Vector shift(T);
    for (Eigen::Index t = 0; t < T; ++t) {
        const Observation& x = seq[static_cast<std::size_t>(t)];
        if (x.size() != model.family.dim_obs())
            throw InvalidArgument("forward_backward: observation " + std::to_string(t) + " has wrong dimension");
        const Vector phi = model.family.suff_stat(x);
        const double base = model.family.log_base_measure(x);
        for (Eigen::Index h = 0; h < s; ++h) {
            b(t, h) = prepared[h].theta.values.dot(phi) - prepared[h].log_partition + base;
            if (!std::isfinite(b(t, h)))
                throw NumericalError("forward_backward: non-finite emission density at time " + std::to_string(t));
        }
        shift[t] = b.row(t).maxCoeff();
        b.row(t) = (b.row(t).array() - shift[t]).exp();
    }

    Matrix alpha(T, s);
    Vector scale(T + 1);
    for (Eigen::Index t = 0; t < T; ++t) {
        if (t == 0)
            alpha.row(0) = model.initial.head(s).transpose().cwiseProduct(b.row(0));
        else
            alpha.row(t) = (alpha.row(t - 1) * q).cwiseProduct(b.row(t));
        scale[t] = alpha.row(t).sum();
        if (!(scale[t] > 0.0) || !std::isfinite(scale[t]))
            throw NumericalError("forward_backward: zero forward probability at time " + std::to_string(t));
        alpha.row(t) /= scale[t];
    }
    scale[T] = alpha.row(T - 1).dot(exit.transpose());
    if (!(scale[T] > 0.0)) throw NumericalError("forward_backward: sequence cannot be absorbed at time " + std::to_string(T));

    Matrix beta(T, s);
    beta.row(T - 1) = exit.transpose() / scale[T];
    for (Eigen::Index t = T - 2; t >= 0; --t)
        beta.row(t) = (q * b.row(t + 1).cwiseProduct(beta.row(t + 1)).transpose()).transpose() / scale[t + 1];

    HmmPosteriors out;
    out.log_likelihood = scale.array().log().sum() + shift.sum();
    out.state_marginals = Matrix::Zero(T, k);
    out.state_marginals.leftCols(s) = alpha.cwiseProduct(beta);
    out.pair_marginals.assign(static_cast<std::size_t>(T), Matrix::Zero(k, k));
    for (Eigen::Index t = 0; t + 1 < T; ++t) {
        const Vector next = b.row(t + 1).cwiseProduct(beta.row(t + 1)).transpose() / scale[t + 1];
        out.pair_marginals[static_cast<std::size_t>(t)].topLeftCorner(s, s) =
            alpha.row(t).transpose().asDiagonal() * q * next.asDiagonal();
    }
    out.pair_marginals.back().topRightCorner(s, k - s) = alpha.row(T - 1).transpose().asDiagonal() * r / scale[T];
    return out;
}

template <ExponentialFamily F>
std::vector<PreparedComponent> prepare_emissions(const HmmModel<F>& model) {
    return prepare_components(model.family, std::span<const ExpectationParams>(model.emissions));
}

}  // namespace detail

template <ExponentialFamily F>
HmmPosteriors forward_backward(const HmmModel<F>& model, const Sequence& seq) {
    const auto prepared = detail::prepare_emissions(model);
    return detail::forward_backward_prepared(model, std::span<const PreparedComponent>(prepared), seq);
}

template <ExponentialFamily F>
double nll(const HmmModel<F>& model, std::span<const Sequence> sequences) {
    if (sequences.empty()) throw InvalidArgument("hmm nll: no sequences");
    const auto prepared = detail::prepare_emissions(model);
    double total = 0.0;
    for (const auto& seq : sequences)
        total -= detail::forward_backward_prepared(model, std::span<const PreparedComponent>(prepared), seq).log_likelihood;
    return total / static_cast<double>(sequences.size());
}

// Posterior statistics averaged over sequences:
//   initial[h]        = (1/N) sum_n gamma^{n,1}_h
//   transitions(h,h') = (1/N) sum_n sum_t gamma^{n,t}_{h,h'}   (transient rows, all columns)
//   occupancy[h]      = (1/N) sum_n sum_t gamma^{n,t}_h        (= row sums of transitions)
//   emission[h]       = (1/N) sum_n sum_t gamma^{n,t}_h phi(v_{n,t})
struct HmmStats {
    Vector initial;
    Matrix transitions;
    Vector occupancy;
    std::vector<Vector> emission;
    double mean_log_likelihood = 0.0;
};

template <ExponentialFamily F>
HmmStats batch_statistics(const HmmModel<F>& model, std::span<const Sequence> sequences) {
    if (sequences.empty()) throw InvalidArgument("hmm: empty batch of sequences");
    const auto k = model.states();
    const auto s = model.transient_count;
    const auto prepared = detail::prepare_emissions(model);
    HmmStats st{Vector::Zero(k), Matrix::Zero(s, k), Vector::Zero(s),
                std::vector<Vector>(static_cast<std::size_t>(s), Vector::Zero(model.family.dim_stat())), 0.0};
    for (const auto& seq : sequences) {
        const HmmPosteriors post =
            detail::forward_backward_prepared(model, std::span<const PreparedComponent>(prepared), seq);
        st.initial += post.state_marginals.row(0).transpose();
        for (const auto& pair : post.pair_marginals) st.transitions += pair.topRows(s);
        for (std::size_t t = 0; t < seq.size(); ++t) {
            const Vector phi = model.family.suff_stat(seq[t]);
            for (Eigen::Index h = 0; h < s; ++h)
                st.emission[static_cast<std::size_t>(h)] += post.state_marginals(static_cast<Eigen::Index>(t), h) * phi;
        }
        st.mean_log_likelihood += post.log_likelihood;
    }
    const double inv_n = 1.0 / static_cast<double>(sequences.size());
    st.initial *= inv_n;
    st.transitions *= inv_n;
    for (auto& e : st.emission) e *= inv_n;
    st.occupancy = st.transitions.rowwise().sum();
    st.mean_log_likelihood *= inv_n;
    return st;
}

// Inertia-regularized EM step:
//   pi~_h     = (pi_h/eta + g_h) / (1/eta + 1)
//   a~_{h,h'} = (u_h a_{h,h'}/eta + xi_{h,h'}) / (u_h/eta + o_h)
//   mu~_h     = (u_h mu_h/eta + e_h) / (u_h/eta + o_h)
// over transient rows; absorbing rows are unchanged.
template <ExponentialFamily F>
HmmModel<F> online_em_step(const HmmModel<F>& model, std::span<const Sequence> sequences, double eta,
                           Warnings* warnings = nullptr) {
    if (!(eta > 0.0)) throw InvalidArgument("hmm online_em_step: eta must be positive");
    const Vector usage = expected_usage(model);
    const HmmStats st = batch_statistics(model, sequences);
    const double inertia = 1.0 / eta;
    HmmModel<F> out = model;
    out.initial = (inertia * model.initial + st.initial) / (inertia + 1.0);
    out.initial /= out.initial.sum();
    for (Eigen::Index h = 0; h < model.transient_count; ++h) {
        const double denom = inertia * usage[h] + st.occupancy[h];
        if (denom < kDeadComponentMass) {
            add_warning(warnings, "hmm: state " + std::to_string(h) + " has no mass; left unchanged");
            continue;
        }
        Vector row = (inertia * usage[h] * model.transitions.row(h).transpose() + st.transitions.row(h).transpose()) / denom;
        out.transitions.row(h) = row.transpose() / row.sum();
        out.emissions[static_cast<std::size_t>(h)] = model.family.regularize(ExpectationParams(
            (inertia * usage[h] * model.emissions[static_cast<std::size_t>(h)].values + st.emission[static_cast<std::size_t>(h)]) /
            denom));
    }
    return out;
}

// Classical Baum-Welch M-step.
template <ExponentialFamily F>
HmmModel<F> batch_em_step(const HmmModel<F>& model, std::span<const Sequence> sequences, Warnings* warnings = nullptr) {
    const HmmStats st = batch_statistics(model, sequences);
    HmmModel<F> out = model;
    out.initial = st.initial / st.initial.sum();
    for (Eigen::Index h = 0; h < model.transient_count; ++h) {
        if (st.occupancy[h] < kDeadComponentMass) {
            add_warning(warnings, "hmm: state " + std::to_string(h) + " was never visited; left unchanged");
            continue;
        }
        out.transitions.row(h) = st.transitions.row(h) / st.occupancy[h];
        out.emissions[static_cast<std::size_t>(h)] =
            model.family.regularize(ExpectationParams(st.emission[static_cast<std::size_t>(h)] / st.occupancy[h]));
    }
    return out;
}

// Relative entropy between the joint path distributions of a and b:
//   sum_h pi_h log(pi_h/pi~_h) + sum_h u_h sum_h' a log(a/a~) + sum_h u_h Delta_G(theta~_h, theta_h)
// with usages u taken from a.
template <ExponentialFamily F>
double hmm_divergence(const HmmModel<F>& a, const HmmModel<F>& b) {
    if (a.states() != b.states() || a.transient_count != b.transient_count)
        throw InvalidArgument("hmm_divergence: models have different shapes");
    const double inf = std::numeric_limits<double>::infinity();
    const Vector usage = expected_usage(a);
    auto kl_term = [&](double p, double q) {
        if (p <= 0.0) return 0.0;
        if (q <= 0.0) return inf;
        return p * std::log(p / q);
    };
    double total = 0.0;
    for (Eigen::Index h = 0; h < a.states(); ++h) total += kl_term(a.initial[h], b.initial[h]);
    for (Eigen::Index h = 0; h < a.transient_count; ++h) {
        if (usage[h] <= 0.0) continue;
        double row = 0.0;
        for (Eigen::Index j = 0; j < a.states(); ++j) row += kl_term(a.transitions(h, j), b.transitions(h, j));
        total += usage[h] * row;
        total += usage[h] * bregman_divergence(a.family, a.family.inverse_link(b.emissions[static_cast<std::size_t>(h)]),
                                               a.family.inverse_link(a.emissions[static_cast<std::size_t>(h)]));
    }
    return total;
}

// EM upper bound with the posterior entropy included, so that
// U_at(at | V) = nll(at, V).
template <ExponentialFamily F>
double em_upper_bound(const HmmModel<F>& at, const HmmModel<F>& candidate, std::span<const Sequence> sequences) {
    if (sequences.empty()) throw InvalidArgument("hmm em_upper_bound: no sequences");
    const double inf = std::numeric_limits<double>::infinity();
    const auto s = at.transient_count;
    const auto k = at.states();
    const auto prep_at = detail::prepare_emissions(at);
    const auto prep_cand = detail::prepare_emissions(candidate);
    double total = 0.0;
    for (const auto& seq : sequences) {
        const HmmPosteriors post = detail::forward_backward_prepared(at, std::span<const PreparedComponent>(prep_at), seq);
        double value = 0.0;
        for (Eigen::Index h = 0; h < k; ++h) {
            const double g = post.state_marginals(0, h);
            if (g <= 0.0) continue;
            value += candidate.initial[h] > 0.0 ? g * std::log(g / candidate.initial[h]) : inf;
        }
        for (std::size_t t = 0; t < post.pair_marginals.size(); ++t) {
            const Matrix& xi = post.pair_marginals[t];
            for (Eigen::Index h = 0; h < s; ++h) {
                const double from = post.state_marginals(static_cast<Eigen::Index>(t), h);
                for (Eigen::Index j = 0; j < k; ++j) {
                    const double p = xi(h, j);
                    if (p <= 0.0) continue;
                    value += candidate.transitions(h, j) > 0.0 ? p * std::log(p / (from * candidate.transitions(h, j))) : inf;
                }
            }
            const Vector phi = candidate.family.suff_stat(seq[t]);
            const double base = candidate.family.log_base_measure(seq[t]);
            for (Eigen::Index h = 0; h < s; ++h) {
                const double g = post.state_marginals(static_cast<Eigen::Index>(t), h);
                if (g <= 0.0) continue;
                value -= g * (prep_cand[h].theta.values.dot(phi) - prep_cand[h].log_partition + base);
            }
        }
        total += value;
    }
    return total / static_cast<double>(sequences.size());
}

template <ExponentialFamily F>
double online_objective(const HmmModel<F>& at, const HmmModel<F>& candidate, std::span<const Sequence> sequences,
                        double eta) {
    return em_upper_bound(at, candidate, sequences) + hmm_divergence(at, candidate) / eta;
}

// A sampled hidden path: transient states visited (one per observation),
// followed by the absorbing state entered, or -1 if truncated at max_len.
struct SampledPath {
    Sequence observations;
    std::vector<int> states;
    int absorbed_in = -1;
};

template <ExponentialFamily F>
std::vector<SampledPath> sample_paths(const HmmModel<F>& model, std::size_t count, Rng& rng, std::size_t max_len) {
    if (max_len < 1) throw InvalidArgument("sample_sequences: max_len must be at least 1");
    std::vector<NaturalParams> thetas;
    for (const auto& mu : model.emissions) thetas.push_back(model.family.inverse_link(mu));
    std::discrete_distribution<int> start(model.initial.data(), model.initial.data() + model.initial.size());
    std::vector<std::discrete_distribution<int>> rows;
    for (Eigen::Index h = 0; h < model.states(); ++h) {
        const Vector row = model.transitions.row(h).transpose();
        rows.emplace_back(row.data(), row.data() + row.size());
    }
    std::vector<SampledPath> out(count);
    for (auto& path : out) {
        int h = start(rng);
        while (h < model.transient_count && path.observations.size() < max_len) {
            path.states.push_back(h);
            path.observations.push_back(model.family.sample(thetas[static_cast<std::size_t>(h)], rng));
            h = rows[static_cast<std::size_t>(h)](rng);
        }
        if (h >= model.transient_count) path.absorbed_in = h;
    }
    return out;
}

// Runs the chain from pi until absorption or max_len emissions.
template <ExponentialFamily F>
std::vector<Sequence> sample_sequences(const HmmModel<F>& model, std::size_t count, Rng& rng, std::size_t max_len) {
    std::vector<Sequence> out;
    out.reserve(count);
    for (auto& path : sample_paths(model, count, rng, max_len)) out.push_back(std::move(path.observations));
    return out;
}

}  // namespace oem
