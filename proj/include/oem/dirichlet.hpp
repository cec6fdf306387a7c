#pragma once

// Compound Dirichlet (Polya) model: a topic h ~ Dirichlet(alpha) per
// document and word counts v ~ Multinomial(|v|, h).
//
// The EM upper bound is handled in minimization form. With the posterior at
// the current alpha, s_j = (1/N) sum_n [psi(v_nj + alpha_j) - psi(|v_n| + alpha_0)]
// and, up to terms constant in alpha~,
//
//   U(alpha~) = -lgamma(alpha~_0) + sum_j lgamma(alpha~_j) - sum_j (alpha~_j - 1) s_j
//   dU/dalpha~_i = psi(alpha~_i) - psi(alpha~_0) - s_i
//   d2U          = diag(psi_1(alpha~)) - psi_1(alpha~_0) 1 1^T      (positive definite)
//
// The Hessian is the negation of the concave log-prior Hessian
// psi_1(alpha~_0) 1 1^T - diag(psi_1(alpha~)).

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "oem/error.hpp"
#include "oem/expfam.hpp"
#include "oem/numeric.hpp"

namespace oem {

inline constexpr double kPositivityFloor = 1e-10;

class DirichletModel {
public:
    DirichletModel() = default;
    explicit DirichletModel(Vector alpha) : alpha_(std::move(alpha)) {
        if (alpha_.size() < 1) throw InvalidModel("dirichlet: alpha must be nonempty");
        for (Eigen::Index j = 0; j < alpha_.size(); ++j)
            if (!(alpha_[j] > 0.0) || !std::isfinite(alpha_[j]))
                throw InvalidModel("dirichlet: alpha[" + std::to_string(j) + "] must be positive and finite");
        alpha0_ = alpha_.sum();
    }

    const Vector& alpha() const { return alpha_; }
    double alpha0() const { return alpha0_; }
    Eigen::Index dim() const { return alpha_.size(); }

private:
    Vector alpha_;
    double alpha0_ = 0.0;
};

class CountVector {
public:
    CountVector() = default;
    explicit CountVector(std::vector<std::int64_t> counts) : counts_(std::move(counts)) {
        for (std::size_t j = 0; j < counts_.size(); ++j) {
            if (counts_[j] < 0) throw InvalidArgument("count vector: entry " + std::to_string(j) + " is negative");
            total_ += counts_[j];
        }
        if (total_ < 1) throw InvalidArgument("count vector: total must be at least 1");
    }

    const std::vector<std::int64_t>& counts() const { return counts_; }
    std::int64_t total() const { return total_; }
    Eigen::Index dim() const { return static_cast<Eigen::Index>(counts_.size()); }
    double operator[](Eigen::Index j) const { return static_cast<double>(counts_[static_cast<std::size_t>(j)]); }

private:
    std::vector<std::int64_t> counts_;
    std::int64_t total_ = 0;
};

namespace detail {

inline void check_counts(const DirichletModel& m, std::span<const CountVector> batch, const char* op) {
    if (batch.empty()) throw InvalidArgument(std::string(op) + ": empty batch");
    for (std::size_t n = 0; n < batch.size(); ++n)
        if (batch[n].dim() != m.dim())
            throw InvalidArgument(std::string(op) + ": document " + std::to_string(n) + " has dimension " +
                                  std::to_string(batch[n].dim()) + ", expected " + std::to_string(m.dim()));
}

inline void check_alpha(const Vector& alpha, const char* op) {
    for (Eigen::Index j = 0; j < alpha.size(); ++j)
        if (!(alpha[j] > 0.0) || !std::isfinite(alpha[j]))
            throw InvalidArgument(std::string(op) + ": alpha~[" + std::to_string(j) + "] must be positive");
}

}  // namespace detail

// log P(v | alpha) = log(|v|! / prod v_j!) + lgamma(a0) - lgamma(|v| + a0)
//                    + sum_j [lgamma(v_j + a_j) - lgamma(a_j)]
inline double log_marginal(const DirichletModel& m, const CountVector& v) {
    const double total = static_cast<double>(v.total());
    double value = std::lgamma(total + 1.0) + std::lgamma(m.alpha0()) - std::lgamma(total + m.alpha0());
    for (Eigen::Index j = 0; j < m.dim(); ++j)
        value += std::lgamma(v[j] + m.alpha()[j]) - std::lgamma(m.alpha()[j]) - std::lgamma(v[j] + 1.0);
    return value;
}

inline double nll(const DirichletModel& m, std::span<const CountVector> batch) {
    detail::check_counts(m, batch, "dirichlet nll");
    double total = 0.0;
    for (const auto& v : batch) total -= log_marginal(m, v);
    return total / static_cast<double>(batch.size());
}

// s_j = (1/N) sum_n [psi(v_nj + alpha_j) - psi(|v_n| + alpha_0)], the
// posterior expectation of log h_j averaged over the batch.
inline Vector posterior_log_means(const DirichletModel& at, std::span<const CountVector> batch) {
    detail::check_counts(at, batch, "dirichlet");
    Vector s = Vector::Zero(at.dim());
    for (const auto& v : batch) {
        const double shared = digamma(static_cast<double>(v.total()) + at.alpha0());
        for (Eigen::Index j = 0; j < at.dim(); ++j) s[j] += digamma(v[j] + at.alpha()[j]) - shared;
    }
    return s / static_cast<double>(batch.size());
}

// U(alpha~) for given posterior log-means s (constant terms dropped).
inline double upper_bound_value(const Vector& s, const Vector& alpha_tilde) {
    detail::check_alpha(alpha_tilde, "upper_bound_value");
    double value = -std::lgamma(alpha_tilde.sum());
    for (Eigen::Index j = 0; j < alpha_tilde.size(); ++j)
        value += std::lgamma(alpha_tilde[j]) - (alpha_tilde[j] - 1.0) * s[j];
    return value;
}

inline Vector upper_bound_gradient(const Vector& s, const Vector& alpha_tilde) {
    detail::check_alpha(alpha_tilde, "upper_bound_gradient");
    const double shared = digamma(alpha_tilde.sum());
    Vector g(alpha_tilde.size());
    for (Eigen::Index j = 0; j < alpha_tilde.size(); ++j) g[j] = digamma(alpha_tilde[j]) - shared - s[j];
    return g;
}

inline double upper_bound_value(const DirichletModel& at, const Vector& alpha_tilde, std::span<const CountVector> batch) {
    return upper_bound_value(posterior_log_means(at, batch), alpha_tilde);
}

inline Vector upper_bound_gradient(const DirichletModel& at, const Vector& alpha_tilde,
                                   std::span<const CountVector> batch) {
    return upper_bound_gradient(posterior_log_means(at, batch), alpha_tilde);
}

// diag(psi_1(alpha~)) - psi_1(alpha~_0) 1 1^T
inline Matrix upper_bound_hessian(const Vector& alpha_tilde) {
    detail::check_alpha(alpha_tilde, "upper_bound_hessian");
    const auto d = alpha_tilde.size();
    Matrix h = Matrix::Constant(d, d, -trigamma(alpha_tilde.sum()));
    for (Eigen::Index j = 0; j < d; ++j) h(j, j) += trigamma(alpha_tilde[j]);
    return h;
}

// Solves (diag(D) - c 1 1^T) x = g by Sherman-Morrison.
inline Vector solve_diag_minus_rank_one(const Vector& diag, double c, const Vector& g) {
    const Vector dinv_g = g.cwiseQuotient(diag);
    const Vector dinv_1 = diag.cwiseInverse();
    const double denom = 1.0 - c * dinv_1.sum();
    if (!(std::abs(denom) > 0.0)) throw NumericalError("Sherman-Morrison: singular update");
    return dinv_g + dinv_1 * (c * dinv_g.sum() / denom);
}

inline Vector upper_bound_newton_direction(const Vector& alpha_tilde, const Vector& g) {
    Vector diag(alpha_tilde.size());
    for (Eigen::Index j = 0; j < alpha_tilde.size(); ++j) diag[j] = trigamma(alpha_tilde[j]);
    return solve_diag_minus_rank_one(diag, trigamma(alpha_tilde.sum()), g);
}

// U_at(alpha~) including the constants, so that em_upper_bound(at, at.alpha()) = nll(at).
inline double em_upper_bound(const DirichletModel& at, const Vector& alpha_tilde, std::span<const CountVector> batch) {
    const Vector s = posterior_log_means(at, batch);
    return upper_bound_value(s, alpha_tilde) - upper_bound_value(s, at.alpha()) + nll(at, batch);
}

struct NewtonObjective {
    std::function<double(const Vector&)> value;
    std::function<Vector(const Vector&)> gradient;
    std::function<Matrix(const Vector&)> hessian;
    // Optional structured solve returning H(x)^-1 g.
    std::function<Vector(const Vector&, const Vector&)> solve;
};

struct NewtonResult {
    Vector x;
    int iterations = 0;
    bool converged = false;
    double grad_norm = 0.0;
};

// Damped Newton over the positive orthant: backtracking with step halving,
// Armijo sufficient decrease and iterates kept above kPositivityFloor.
// A full step that halves the gradient norm is accepted without the Armijo test.
inline NewtonResult newton_minimize(const NewtonObjective& obj, Vector x, double tol, int max_iter) {
    if (!(tol > 0.0)) throw InvalidArgument("newton_minimize: tol must be positive");
    for (Eigen::Index j = 0; j < x.size(); ++j)
        if (!(x[j] > 0.0)) throw InvalidArgument("newton_minimize: initial point must be positive");
    NewtonResult res;
    double f = obj.value(x);
    if (!std::isfinite(f)) throw NumericalError("newton_minimize: objective is not finite at the initial point");
    for (;;) {
        const Vector g = obj.gradient(x);
        if (!g.allFinite()) throw NumericalError("newton_minimize: gradient is not finite");
        res.grad_norm = g.norm();
        if (res.grad_norm < tol) {
            res.converged = true;
            break;
        }
        if (res.iterations >= max_iter) break;
        Vector dir;
        if (obj.solve) {
            dir = -obj.solve(x, g);
        } else {
            Eigen::LDLT<Matrix> ldlt(obj.hessian(x));
            dir = -ldlt.solve(g);
        }
        if (!dir.allFinite() || g.dot(dir) >= 0.0) dir = -g;

        double step = 1.0;
        for (Eigen::Index j = 0; j < x.size(); ++j)
            while (x[j] + step * dir[j] < kPositivityFloor && step > 1e-300) step *= 0.5;
        bool accepted = false;
        bool saw_finite = false;
        for (int k = 0; k < 200; ++k) {
            const Vector trial = x + step * dir;
            const double ft = obj.value(trial);
            if (std::isfinite(ft)) {
                saw_finite = true;
                const bool sufficient = ft <= f + 1e-4 * step * g.dot(dir);
                if (sufficient || (step == 1.0 && obj.gradient(trial).norm() < 0.5 * res.grad_norm)) {
                    x = trial;
                    f = ft;
                    accepted = true;
                    break;
                }
            }
            step *= 0.5;
        }
        ++res.iterations;
        if (!accepted) {
            if (!saw_finite) throw NumericalError("newton_minimize: objective is not finite along the search direction");
            res.grad_norm = obj.gradient(x).norm();
            res.converged = res.grad_norm < tol;
            break;
        }
    }
    res.x = std::move(x);
    return res;
}

// Newton objective for U(alpha~) = scale * [-lgamma(a0~) + sum lgamma(a~_j)] - sum (a~_j - 1) s_j.
inline NewtonObjective upper_bound_objective(Vector s, double scale = 1.0) {
    NewtonObjective obj;
    obj.value = [s, scale](const Vector& a) {
        double v = -scale * std::lgamma(a.sum());
        for (Eigen::Index j = 0; j < a.size(); ++j) v += scale * std::lgamma(a[j]) - (a[j] - 1.0) * s[j];
        return v;
    };
    obj.gradient = [s, scale](const Vector& a) { return Vector(upper_bound_gradient(Vector(s / scale), a) * scale); };
    obj.hessian = [scale](const Vector& a) { return Matrix(scale * upper_bound_hessian(a)); };
    obj.solve = [scale](const Vector& a, const Vector& g) { return Vector(upper_bound_newton_direction(a, g) / scale); };
    return obj;
}

struct NewtonSettings {
    double tol = 1e-10;
    int max_iter = 100;
};

// One EM step: minimize U_at(.) over the batch by Newton, warm-started at at.alpha().
inline DirichletModel batch_em_step(const DirichletModel& at, std::span<const CountVector> batch,
                                    const NewtonSettings& settings = {}, NewtonResult* info = nullptr) {
    const NewtonResult res = newton_minimize(upper_bound_objective(posterior_log_means(at, batch)), at.alpha(),
                                             settings.tol, settings.max_iter);
    if (info) *info = res;
    return DirichletModel(res.x.cwiseMax(kPositivityFloor));
}

inline std::vector<CountVector> sample_documents(const DirichletModel& m, std::size_t count,
                                                 std::int64_t words_per_doc, Rng& rng) {
    if (words_per_doc < 1) throw InvalidArgument("sample_documents: words_per_doc must be at least 1");
    std::vector<CountVector> docs;
    docs.reserve(count);
    std::vector<double> h(static_cast<std::size_t>(m.dim()));
    for (std::size_t n = 0; n < count; ++n) {
        double total = 0.0;
        for (Eigen::Index j = 0; j < m.dim(); ++j) {
            std::gamma_distribution<double> gamma(m.alpha()[j], 1.0);
            h[static_cast<std::size_t>(j)] = gamma(rng);
            total += h[static_cast<std::size_t>(j)];
        }
        if (!(total > 0.0)) {
            // All gamma draws underflowed: fall back to the largest concentration.
            Eigen::Index best = 0;
            m.alpha().maxCoeff(&best);
            std::fill(h.begin(), h.end(), 0.0);
            h[static_cast<std::size_t>(best)] = 1.0;
            total = 1.0;
        }
        std::vector<std::int64_t> counts(h.size(), 0);
        std::int64_t remaining = words_per_doc;
        double mass_left = 1.0;
        for (std::size_t j = 0; j + 1 < h.size() && remaining > 0; ++j) {
            const double p = h[j] / total;
            const double q = mass_left > 0.0 ? std::clamp(p / mass_left, 0.0, 1.0) : 0.0;
            std::binomial_distribution<std::int64_t> binom(remaining, q);
            counts[j] = binom(rng);
            remaining -= counts[j];
            mass_left -= p;
        }
        counts.back() += remaining;
        docs.emplace_back(std::move(counts));
    }
    return docs;
}

inline double mean_document_length(std::span<const CountVector> batch) {
    if (batch.empty()) throw InvalidArgument("mean_document_length: empty batch");
    double total = 0.0;
    for (const auto& v : batch) total += static_cast<double>(v.total());
    return total / static_cast<double>(batch.size());
}

// Sampled-inertia step: draws N' pseudo-documents of length L from the current
// model and minimizes U(.|batch) + (1/eta) U(.|pseudo), both bounds formed at
// the current model. L = 0 selects the batch's mean document length.
inline DirichletModel online_em_step_sampled(const DirichletModel& m, std::span<const CountVector> batch, double eta,
                                             std::size_t pseudo_count, std::int64_t pseudo_words, Rng& rng,
                                             const NewtonSettings& settings = {}, NewtonResult* info = nullptr) {
    if (!(eta > 0.0)) throw InvalidArgument("online_em_step_sampled: eta must be positive");
    if (pseudo_count < 1) throw InvalidArgument("online_em_step_sampled: pseudo_count must be at least 1");
    const Vector s_batch = posterior_log_means(m, batch);
    if (pseudo_words <= 0) pseudo_words = std::max<std::int64_t>(1, std::llround(mean_document_length(batch)));
    const auto pseudo = sample_documents(m, pseudo_count, pseudo_words, rng);
    const Vector s_pseudo = posterior_log_means(m, pseudo);
    const double inertia = 1.0 / eta;
    // U(.|batch) + (1/eta) U(.|pseudo) = (1 + 1/eta) U(.) with s = (s_batch + s_pseudo/eta) / (1 + 1/eta)
    const Vector s = (s_batch + inertia * s_pseudo) / (1.0 + inertia);
    const NewtonResult res = newton_minimize(upper_bound_objective(s), m.alpha(), settings.tol, settings.max_iter);
    if (info) *info = res;
    return DirichletModel(res.x.cwiseMax(kPositivityFloor));
}

}  // namespace oem
