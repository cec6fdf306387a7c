#include <gtest/gtest.h>

#include "oem/mixture.hpp"
#include "support/oracles.hpp"

using namespace oem;
using namespace oem::testing;

namespace {

struct Instance {
    GaussianMixture truth, model;
    std::vector<Observation> data;
};

Instance make_instance(std::uint64_t seed, Eigen::Index k = 3, Eigen::Index d = 2, std::size_t n = 200) {
    Rng rng(seed);
    Instance in{random_gmm(k, d, rng), random_gmm(k, d, rng), {}};
    in.data = sample_mixture(in.truth, n, rng);
    return in;
}

}  // namespace

TEST(Mixture, PosteriorRowsAreDistributions) {
    const auto in = make_instance(1);
    const auto post = posterior(in.model, std::span<const Observation>(in.data));
    ASSERT_EQ(post.gamma.rows(), 200);
    for (Eigen::Index n = 0; n < post.gamma.rows(); ++n) {
        EXPECT_NEAR(post.gamma.row(n).sum(), 1.0, 1e-12);
        EXPECT_GE(post.gamma.row(n).minCoeff(), 0.0);
    }
}

TEST(Mixture, NllMatchesDirectDensitySum) {
    const auto in = make_instance(2);
    EXPECT_NEAR(nll(in.model, std::span<const Observation>(in.data)), naive_mixture_nll(in.model, in.data), 1e-10);
    Rng rng(3);
    const auto pm = random_pmm(4, rng);
    const auto counts = sample_mixture(pm, 300, rng);
    EXPECT_NEAR(nll(pm, std::span<const Observation>(counts)), naive_mixture_nll(pm, counts), 1e-10);
}

TEST(Mixture, NllIsStableForFarAwayObservations) {
    auto in = make_instance(4);
    in.data.assign(1, Vector::Constant(2, 1e4));
    EXPECT_TRUE(std::isfinite(nll(in.model, std::span<const Observation>(in.data))));
}

TEST(Mixture, OnlineStepMatchesSufficientStatisticRecursion) {
    for (std::uint64_t seed = 10; seed < 30; ++seed) {
        const auto in = make_instance(seed, 3, 2, 20);
        Rng rng(seed);
        const double eta_t = uniform(rng, 0.01, 0.99);
        const auto got = online_em_step(in.model, std::span<const Observation>(in.data), eta_t / (1.0 - eta_t));
        const MomentMixture want = sufficient_statistic_step(to_moments(in.model), in.data, eta_t);
        for (Eigen::Index h = 0; h < 3; ++h) {
            EXPECT_NEAR(got.weights[h], want.weights[h], 1e-12);
            EXPECT_LT(max_abs_diff(got.family.mean(got.components[h]), want.means[h]), 1e-10);
            EXPECT_LT(max_abs_diff(got.family.covariance(got.components[h]), want.covs[h]), 1e-10);
        }
    }
}

TEST(Mixture, LargeEtaIsBatchEmAndSmallEtaIsIdentity) {
    const auto in = make_instance(5);
    const std::span<const Observation> batch(in.data);
    const auto batch_model = batch_em_step(in.model, batch);
    const auto big = online_em_step(in.model, batch, 1e12);
    const auto small = online_em_step(in.model, batch, 1e-12);
    EXPECT_LT(relative_diff(pack(big), pack(batch_model)), 1e-7);
    EXPECT_LT(relative_diff(pack(small), pack(in.model)), 1e-7);
}

TEST(Mixture, OnlineStepIsStationaryForItsObjective) {
    for (std::uint64_t seed = 40; seed < 45; ++seed) {
        const auto in = make_instance(seed, 2, 2, 30);
        const std::span<const Observation> batch(in.data);
        const double eta = 0.7;
        const auto next = online_em_step(in.model, batch, eta);
        auto f = [&](const Vector& x) { return online_objective(in.model, unpack(in.model, x), batch, eta); };
        Vector g = fd_gradient(f, pack(next));
        project_simplex_block(g, 0, next.size());
        EXPECT_LT(g.norm(), 1e-5) << "seed " << seed;
    }
}

TEST(Mixture, UpperBoundIsTightAndAboveNll) {
    const auto in = make_instance(6);
    const std::span<const Observation> batch(in.data);
    EXPECT_NEAR(em_upper_bound(in.model, in.model, batch), nll(in.model, batch), 1e-10);
    const auto next = batch_em_step(in.model, batch);
    EXPECT_GE(em_upper_bound(in.model, next, batch) + 1e-12, nll(next, batch));
    EXPECT_LE(em_upper_bound(in.model, next, batch), nll(in.model, batch) + 1e-12);
}

TEST(Mixture, DivergenceMatchesMonteCarlo) {
    Rng rng(7);
    const auto a = random_gmm(3, 2, rng, 2.0);
    auto b = a;
    for (auto& c : b.components)
        c = b.family.from_moments(b.family.mean(c) + normal_vector(2, rng, 0.5), b.family.covariance(c) * 1.3);
    b.weights = random_simplex(3, rng, 0.1);
    const int n = 200000;
    std::vector<int> labels;
    const auto xs = sample_mixture(a, n, rng, &labels);
    double sum = 0.0, sq = 0.0;
    for (int i = 0; i < n; ++i) {
        const int h = labels[static_cast<std::size_t>(i)];
        const double r = std::log(a.weights[h]) + emission_log_pdf(a.family, a.components[h], xs[i]) - std::log(b.weights[h]) -
                         emission_log_pdf(b.family, b.components[h], xs[i]);
        sum += r;
        sq += r * r;
    }
    const double mean = sum / n, se = std::sqrt((sq / n - mean * mean) / n);
    EXPECT_NEAR(mixture_divergence(a, b), mean, 5.0 * se);
    EXPECT_NEAR(mixture_divergence(a, a), 0.0, 1e-12);
}

TEST(Mixture, BatchEmDecreasesNll) {
    const auto in = make_instance(8, 3, 2, 400);
    const std::span<const Observation> batch(in.data);
    auto m = in.model;
    double prev = nll(m, batch);
    for (int it = 0; it < 15; ++it) {
        m = batch_em_step(m, batch);
        const double cur = nll(m, batch);
        EXPECT_LE(cur, prev + 1e-10);
        prev = cur;
    }
}

TEST(Mixture, PoissonLimitsMatchBatchStep) {
    Rng rng(9);
    const auto truth = random_pmm(3, rng);
    const auto model = random_pmm(3, rng);
    const auto data = sample_mixture(truth, 200, rng);
    const std::span<const Observation> batch(data);
    const auto a = online_em_step(model, batch, 1e12);
    const auto b = batch_em_step(model, batch);
    for (Eigen::Index h = 0; h < 3; ++h) {
        EXPECT_NEAR(a.weights[h], b.weights[h], 1e-7 * b.weights[h]);
        EXPECT_NEAR(a.components[h].values[0], b.components[h].values[0], 1e-7 * b.components[h].values[0]);
    }
}

TEST(Mixture, DeadComponentIsKeptWithWarning) {
    auto in = make_instance(10, 2, 1, 50);
    in.model.components[1] = in.model.family.from_moments(Vector::Constant(1, 1e6), Matrix::Identity(1, 1));
    Warnings w;
    const auto out = batch_em_step(in.model, std::span<const Observation>(in.data), &w);
    ASSERT_FALSE(w.empty());
    EXPECT_NE(w.front().find("component 1"), std::string::npos);
    EXPECT_EQ(out.components[1].values, in.model.components[1].values);
}

TEST(Mixture, ValidationAndArgumentErrors) {
    auto in = make_instance(11);
    auto bad = in.model;
    bad.weights[0] += 0.5;
    EXPECT_THROW(validate(bad), InvalidModel);
    EXPECT_THROW(online_em_step(in.model, std::span<const Observation>(in.data), 0.0), InvalidArgument);
    const std::vector<Observation> wrong{Vector::Zero(3)};
    EXPECT_THROW(nll(in.model, std::span<const Observation>(wrong)), InvalidArgument);
    EXPECT_THROW(cappe_oracle_step(in.model, std::span<const Observation>(in.data), 1.0), InvalidArgument);
}

TEST(Mixture, SamplerFollowsWeights) {
    Rng rng(12);
    const auto m = random_gmm(3, 2, rng);
    std::vector<int> labels;
    sample_mixture(m, 30000, rng, &labels);
    for (int h = 0; h < 3; ++h) {
        const double freq = std::count(labels.begin(), labels.end(), h) / 30000.0;
        EXPECT_NEAR(freq, m.weights[h], 0.015);
    }
}
