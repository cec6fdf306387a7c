#pragma once

// Per-family plumbing for the experiment harness: random ground-truth models,
// initialization from data, step functions, serialization and dataset I/O.
// Each `*Ops` type exposes the same static interface so that the runners in
// experiments.hpp are written once.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "oem/dirichlet.hpp"
#include "oem/families.hpp"
#include "oem/harness/config.hpp"
#include "oem/hmm.hpp"
#include "oem/io/csv.hpp"
#include "oem/io/model_json.hpp"
#include "oem/kalman.hpp"
#include "oem/mixture.hpp"

namespace oem::harness {

// Independent generator for (seed, stream).
inline Rng derive_rng(std::uint64_t seed, std::uint64_t stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32), 0x6f656du};
    return Rng(seq);
}

inline Vector normal_vector(Eigen::Index n, Rng& rng, double scale = 1.0) {
    std::normal_distribution<double> normal(0.0, scale);
    Vector v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = normal(rng);
    return v;
}

inline Matrix normal_matrix(Eigen::Index r, Eigen::Index c, Rng& rng, double scale = 1.0) {
    std::normal_distribution<double> normal(0.0, scale);
    Matrix m(r, c);
    for (Eigen::Index j = 0; j < c; ++j)
        for (Eigen::Index i = 0; i < r; ++i) m(i, j) = normal(rng);
    return m;
}

inline Vector dirichlet_vector(Eigen::Index n, double concentration, Rng& rng) {
    std::gamma_distribution<double> gamma(concentration, 1.0);
    Vector v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = std::max(gamma(rng), 1e-12);
    return v / v.sum();
}

// Random covariance W W^T / d + floor I.
inline Matrix random_covariance(Eigen::Index d, Rng& rng, double floor = 0.3) {
    const Matrix w = normal_matrix(d, d, rng);
    return symmetrize(w * w.transpose() / static_cast<double>(d) + floor * Matrix::Identity(d, d));
}

// Empirical mean and covariance of a set of vectors.
inline std::pair<Vector, Matrix> empirical_moments(std::span<const Observation> xs) {
    const Eigen::Index d = xs.front().size();
    Vector mean = Vector::Zero(d);
    for (const auto& x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    Matrix cov = Matrix::Zero(d, d);
    for (const auto& x : xs) cov += (x - mean) * (x - mean).transpose();
    cov /= static_cast<double>(std::max<std::size_t>(1, xs.size()));
    return {mean, floor_eigenvalues(cov, 1e-6)};
}

// Component initialization: data mean perturbed by unit noise scaled by the
// data standard deviation; covariance set to the data covariance.
inline ExpectationParams init_component(const GaussianFamily& f, const Vector& mean, const Matrix& cov, Rng& rng) {
    const Vector sd = cov.diagonal().cwiseSqrt();
    return f.from_moments(mean + normal_vector(f.dim(), rng).cwiseProduct(sd), cov);
}

inline ExpectationParams init_component(const PoissonFamily&, const Vector& mean, const Matrix& cov, Rng& rng) {
    const double sd = std::sqrt(cov(0, 0));
    return ExpectationParams(Vector::Constant(1, std::max(0.1, mean[0] + normal_vector(1, rng)[0] * sd)));
}

inline ExpectationParams random_component(const GaussianFamily& f, Rng& rng) {
    return f.from_moments(normal_vector(f.dim(), rng, 2.5), random_covariance(f.dim(), rng));
}

inline ExpectationParams random_component(const PoissonFamily&, Rng& rng) {
    std::uniform_real_distribution<double> u(1.0, 25.0);
    return ExpectationParams(Vector::Constant(1, u(rng)));
}

template <class F>
F make_family(const ExperimentConfig& c);

template <>
inline GaussianFamily make_family<GaussianFamily>(const ExperimentConfig& c) {
    return GaussianFamily(c.model.dim);
}

template <>
inline PoissonFamily make_family<PoissonFamily>(const ExperimentConfig& c) {
    if (c.model.dim != 1) throw ConfigError("config.model.dim: poisson emissions are one-dimensional");
    return PoissonFamily{};
}

template <ExponentialFamily F>
struct MixtureOps {
    using Model = MixtureModel<F>;
    using Item = Observation;
    static constexpr const char* name = "mixture";

    static Model truth(const ExperimentConfig& c, Rng& rng) {
        const F f = make_family<F>(c);
        Model m{f, dirichlet_vector(c.model.k, 5.0, rng), {}};
        for (int h = 0; h < c.model.k; ++h) m.components.push_back(random_component(f, rng));
        return m;
    }

    static std::vector<Item> sample(const Model& m, std::size_t count, const ExperimentConfig&, Rng& rng) {
        return sample_mixture(m, count, rng);
    }

    static Model init(const ExperimentConfig& c, std::span<const Item> data, Rng& rng) {
        const F f = make_family<F>(c);
        if (data.front().size() != f.dim_obs()) throw ConfigError("config.model.dim: does not match the data dimension");
        const auto [mean, cov] = empirical_moments(data);
        Model m{f, Vector::Constant(c.model.k, 1.0 / c.model.k), {}};
        for (int h = 0; h < c.model.k; ++h) m.components.push_back(init_component(f, mean, cov, rng));
        return m;
    }

    static double loss(const Model& m, std::span<const Item> batch) { return nll(m, batch); }

    static Model online_step(const Model& m, std::span<const Item> batch, double eta, const ExperimentConfig&, Rng&,
                             Warnings* w) {
        return online_em_step(m, batch, eta, w);
    }

    static Model batch_step(const Model& m, std::span<const Item> batch, const ExperimentConfig&, Warnings* w) {
        return batch_em_step(m, batch, w);
    }

    static io::Json to_json(const Model& m) { return io::to_json(m); }
    static Model from_json(const ExperimentConfig& c, const io::Json& j) { return io::mixture_from_json(make_family<F>(c), j); }

    static void write_data(std::ostream& os, std::span<const Item> d) { io::write_observations(os, d); }
    static std::vector<Item> read_data(const std::filesystem::path& p) { return io::to_observations(io::read_numeric_csv_file(p)); }
};

template <ExponentialFamily F>
struct HmmOps {
    using Model = HmmModel<F>;
    using Item = Sequence;
    static constexpr const char* name = "hmm";
    static constexpr double kExit = 0.1;

    static Model truth(const ExperimentConfig& c, Rng& rng) {
        const F f = make_family<F>(c);
        const int s = c.model.transient, r = c.model.absorbing, k = s + r;
        Model m{f, Vector::Zero(k), Matrix::Zero(k, k), {}, s};
        m.initial.head(s) = dirichlet_vector(s, 2.0, rng);
        for (int h = 0; h < s; ++h) {
            m.transitions.row(h).head(s) = (1.0 - kExit) * dirichlet_vector(s, 1.0, rng).transpose();
            m.transitions.row(h).tail(r) = kExit * dirichlet_vector(r, 1.0, rng).transpose();
            m.emissions.push_back(random_component(f, rng));
        }
        for (int h = s; h < k; ++h) m.transitions(h, h) = 1.0;
        return m;
    }

    static std::vector<Item> sample(const Model& m, std::size_t count, const ExperimentConfig& c, Rng& rng) {
        std::vector<Item> out;
        out.reserve(count);
        while (out.size() < count)
            for (auto& seq : sample_sequences(m, count - out.size(), rng, static_cast<std::size_t>(c.model.max_len)))
                if (!seq.empty()) out.push_back(std::move(seq));
        return out;
    }

    // Uniform initial distribution and transient transitions (with random
    // jitter), exit probability matched to the mean sequence length, emissions
    // initialized like mixture components.
    static Model init(const ExperimentConfig& c, std::span<const Item> data, Rng& rng) {
        const F f = make_family<F>(c);
        const int s = c.model.transient, r = c.model.absorbing, k = s + r;
        std::vector<Observation> flat;
        double total_len = 0.0;
        for (const auto& seq : data) {
            total_len += static_cast<double>(seq.size());
            flat.insert(flat.end(), seq.begin(), seq.end());
        }
        if (flat.front().size() != f.dim_obs()) throw ConfigError("config.model.dim: does not match the data dimension");
        const double exit = std::clamp(static_cast<double>(data.size()) / total_len, 1e-3, 0.999);
        const auto [mean, cov] = empirical_moments(flat);
        std::uniform_real_distribution<double> jitter(0.0, 0.5);
        Model m{f, Vector::Zero(k), Matrix::Zero(k, k), {}, s};
        m.initial.head(s).setConstant(1.0 / s);
        for (int h = 0; h < s; ++h) {
            Vector row(s);
            for (int j = 0; j < s; ++j) row[j] = 1.0 + jitter(rng);
            m.transitions.row(h).head(s) = (1.0 - exit) * row.transpose() / row.sum();
            m.transitions.row(h).tail(r).setConstant(exit / r);
            m.emissions.push_back(init_component(f, mean, cov, rng));
        }
        for (int h = s; h < k; ++h) m.transitions(h, h) = 1.0;
        return m;
    }

    static double loss(const Model& m, std::span<const Item> batch) { return nll(m, batch); }

    static Model online_step(const Model& m, std::span<const Item> batch, double eta, const ExperimentConfig&, Rng&,
                             Warnings* w) {
        return online_em_step(m, batch, eta, w);
    }

    static Model batch_step(const Model& m, std::span<const Item> batch, const ExperimentConfig&, Warnings* w) {
        return batch_em_step(m, batch, w);
    }

    static io::Json to_json(const Model& m) { return io::to_json(m); }
    static Model from_json(const ExperimentConfig& c, const io::Json& j) { return io::hmm_from_json(make_family<F>(c), j); }

    static void write_data(std::ostream& os, std::span<const Item> d) { io::write_sequences(os, d); }
    static std::vector<Item> read_data(const std::filesystem::path& p) { return io::to_sequences(io::read_numeric_csv_file(p)); }
};

struct KalmanOps {
    using Model = KalmanModel;
    using Item = Sequence;
    static constexpr const char* name = "kalman";

    static KalmanUpdateMask mask(const ExperimentConfig& c) {
        KalmanUpdateMask m;
        for (const auto& k : c.model.known) {
            if (k == "pi1") m.pi1 = false;
            if (k == "V") m.V = false;
            if (k == "A") m.A = false;
            if (k == "C") m.C = false;
            if (k == "Q") m.Q = false;
            if (k == "R") m.R = false;
        }
        return m;
    }

    // Stable A = O diag(lambda) O^T with eigenvalues in [0.5, 0.95].
    static Model truth(const ExperimentConfig& c, Rng& rng) {
        const Eigen::Index n = c.model.hidden_dim, d = c.model.obs_dim;
        Eigen::HouseholderQR<Matrix> qr(normal_matrix(n, n, rng));
        const Matrix o = qr.householderQ();
        std::uniform_real_distribution<double> u(0.5, 0.95);
        Vector lambda(n);
        for (Eigen::Index i = 0; i < n; ++i) lambda[i] = u(rng);
        Model m;
        m.pi1 = normal_vector(n, rng);
        m.V = 0.5 * Matrix::Identity(n, n);
        m.A = o * lambda.asDiagonal() * o.transpose();
        m.C = normal_matrix(d, n, rng, 1.0 / std::sqrt(static_cast<double>(n)));
        m.Q = 0.2 * Matrix::Identity(n, n);
        m.R = 0.5 * Matrix::Identity(d, d);
        return m;
    }

    static std::vector<Item> sample(const Model& m, std::size_t count, const ExperimentConfig& c, Rng& rng) {
        return sample_sequences(m, count, static_cast<std::size_t>(c.model.T), rng);
    }

    // Known parameters are copied from `reference` (the generating model);
    // the rest start from pi1 = 0, V = I, A = 0.5 I + noise, random C, Q = R = I.
    static Model init_with(const ExperimentConfig& c, std::span<const Item> data, Rng& rng, const Model* reference) {
        const Eigen::Index n = c.model.hidden_dim, d = c.model.obs_dim;
        if (data.front().front().size() != d) throw ConfigError("config.model.obs_dim: does not match the data dimension");
        Model m;
        m.pi1 = Vector::Zero(n);
        m.V = Matrix::Identity(n, n);
        m.A = 0.5 * Matrix::Identity(n, n) + normal_matrix(n, n, rng, 0.1);
        m.C = normal_matrix(d, n, rng, 1.0 / std::sqrt(static_cast<double>(n)));
        m.Q = Matrix::Identity(n, n);
        m.R = Matrix::Identity(d, d);
        const KalmanUpdateMask free = mask(c);
        const bool any_known = !(free.pi1 && free.V && free.A && free.C && free.Q && free.R);
        if (any_known) {
            if (!reference) throw ConfigError("config.model.known: known parameters require a ground-truth model (data.truth_path)");
            if (!free.pi1) m.pi1 = reference->pi1;
            if (!free.V) m.V = reference->V;
            if (!free.A) m.A = reference->A;
            if (!free.C) m.C = reference->C;
            if (!free.Q) m.Q = reference->Q;
            if (!free.R) m.R = reference->R;
        }
        return m;
    }

    static double loss(const Model& m, std::span<const Item> batch) { return nll(m, batch); }

    static Model online_step(const Model& m, std::span<const Item> batch, double eta, const ExperimentConfig& c, Rng&,
                             Warnings*) {
        return online_em_step(m, batch, eta, mask(c));
    }

    static Model batch_step(const Model& m, std::span<const Item> batch, const ExperimentConfig& c, Warnings*) {
        return batch_em_step(m, batch, mask(c));
    }

    static io::Json to_json(const Model& m) { return io::to_json(m); }
    static Model from_json(const ExperimentConfig&, const io::Json& j) { return io::kalman_from_json(j); }

    static void write_data(std::ostream& os, std::span<const Item> d) { io::write_sequences(os, d); }
    static std::vector<Item> read_data(const std::filesystem::path& p) { return io::to_sequences(io::read_numeric_csv_file(p)); }
};

struct DirichletOps {
    using Model = DirichletModel;
    using Item = CountVector;
    static constexpr const char* name = "dirichlet";

    static Model truth(const ExperimentConfig& c, Rng& rng) {
        std::uniform_real_distribution<double> u(0.5, 3.0);
        Vector a(c.model.dim);
        for (int j = 0; j < c.model.dim; ++j) a[j] = u(rng);
        return DirichletModel(a);
    }

    static std::vector<Item> sample(const Model& m, std::size_t count, const ExperimentConfig& c, Rng& rng) {
        return sample_documents(m, count, c.data.words_per_doc, rng);
    }

    static Model init(const ExperimentConfig& c, std::span<const Item> data, Rng& rng) {
        if (data.front().dim() != c.model.dim) throw ConfigError("config.model.dim: does not match the data dimension");
        std::uniform_real_distribution<double> u(0.5, 2.0);
        Vector a(c.model.dim);
        for (int j = 0; j < c.model.dim; ++j) a[j] = u(rng);
        return DirichletModel(a);
    }

    static double loss(const Model& m, std::span<const Item> batch) { return nll(m, batch); }

    static Model online_step(const Model& m, std::span<const Item> batch, double eta, const ExperimentConfig& c, Rng& rng,
                             Warnings*) {
        return online_em_step_sampled(m, batch, eta, c.dirichlet.pseudo_count, c.dirichlet.pseudo_words, rng);
    }

    static Model batch_step(const Model& m, std::span<const Item> batch, const ExperimentConfig&, Warnings*) {
        return batch_em_step(m, batch);
    }

    static io::Json to_json(const Model& m) { return io::to_json(m); }
    static Model from_json(const ExperimentConfig&, const io::Json& j) { return io::dirichlet_from_json(j); }

    static void write_data(std::ostream& os, std::span<const Item> d) { io::write_counts(os, d); }
    static std::vector<Item> read_data(const std::filesystem::path& p) { return io::to_counts(io::read_numeric_csv_file(p)); }
};

// Families other than Kalman ignore the reference model at initialization.
template <class Ops>
typename Ops::Model initialize(const ExperimentConfig& c, std::span<const typename Ops::Item> data, Rng& rng,
                               const typename Ops::Model* reference) {
    if constexpr (requires { Ops::init_with(c, data, rng, reference); })
        return Ops::init_with(c, data, rng, reference);
    else
        return Ops::init(c, data, rng);
}

}  // namespace oem::harness
