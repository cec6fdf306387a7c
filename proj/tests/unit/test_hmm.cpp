#include <gtest/gtest.h>

#include "oem/hmm.hpp"
#include "support/oracles.hpp"

using namespace oem;
using namespace oem::testing;

namespace {

std::vector<Sequence> sample_batch(const GaussianHmm& m, std::size_t n, Rng& rng, std::size_t max_len = 50) {
    return sample_sequences(m, n, rng, max_len);
}

}  // namespace

TEST(Hmm, ForwardBackwardMatchesPathEnumeration) {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        Rng rng(seed);
        const auto m = random_hmm(3, 2, 2, rng);
        Sequence seq;
        for (int t = 0; t < 5; ++t) seq.push_back(normal_vector(2, rng, 2.0));
        const auto fb = forward_backward(m, seq);
        const auto ex = enumerate_paths(m, seq);
        EXPECT_NEAR(fb.log_likelihood, ex.log_likelihood, 1e-10);
        EXPECT_LT(max_abs_diff(fb.state_marginals, ex.gamma), 1e-10);
        ASSERT_EQ(fb.pair_marginals.size(), 5u);
        for (std::size_t t = 0; t < 5; ++t) EXPECT_LT(max_abs_diff(fb.pair_marginals[t], ex.xi[t]), 1e-10) << "t=" << t;
    }
}

TEST(Hmm, PoissonEmissionsMatchEnumeration) {
    Rng rng(6);
    const auto m = random_poisson_hmm(2, 1, rng);
    const Sequence seq{Vector::Constant(1, 3.0), Vector::Constant(1, 0.0), Vector::Constant(1, 7.0), Vector::Constant(1, 2.0)};
    const auto fb = forward_backward(m, seq);
    const auto ex = enumerate_paths(m, seq);
    EXPECT_NEAR(fb.log_likelihood, ex.log_likelihood, 1e-10);
    EXPECT_LT(max_abs_diff(fb.state_marginals, ex.gamma), 1e-10);
}

TEST(Hmm, LongSequencesStayFinite) {
    Rng rng(7);
    auto m = random_hmm(3, 1, 2, rng);
    m.transitions.topRightCorner(3, 1).setConstant(1e-4);
    for (int h = 0; h < 3; ++h) m.transitions.row(h).head(3) *= (1.0 - 1e-4) / m.transitions.row(h).head(3).sum();
    Sequence seq;
    for (int t = 0; t < 5000; ++t) seq.push_back(normal_vector(2, rng, 3.0));
    const auto fb = forward_backward(m, seq);
    EXPECT_TRUE(std::isfinite(fb.log_likelihood));
    EXPECT_NEAR(fb.state_marginals.row(4999).sum(), 1.0, 1e-9);
}

TEST(Hmm, UsageMatchesTruncatedSeries) {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        Rng rng(seed);
        const auto m = random_hmm(4, 2, 1, rng);
        const Vector u = expected_usage(m);
        const Vector series = truncated_usage(m.transient_block(), m.initial.head(4));
        EXPECT_LT(max_abs_diff(u, series), 1e-8);
    }
}

TEST(Hmm, SpectralRadiusBoundIsTight) {
    Rng rng(8);
    const auto m = random_hmm(4, 1, 1, rng);
    const Matrix q = m.transient_block();
    const double rho = q.eigenvalues().cwiseAbs().maxCoeff();
    const double bound = spectral_radius_bound(q);
    EXPECT_GE(bound, rho - 1e-12);
    EXPECT_LT(bound, rho + 1e-5);
}

TEST(Hmm, ValidationRejectsNonAbsorbingChains) {
    Rng rng(9);
    auto m = random_hmm(2, 1, 1, rng);
    EXPECT_NO_THROW(validate(m));
    auto leaky = m;
    leaky.transitions(2, 2) = 0.5;
    leaky.transitions(2, 0) = 0.5;
    EXPECT_THROW(validate(leaky), InvalidModel);
    auto trapped = m;
    trapped.transitions.row(0) << 0.0, 1.0, 0.0;
    trapped.transitions.row(1) << 1.0, 0.0, 0.0;
    EXPECT_THROW(validate(trapped), InvalidModel);
    auto unnormalized = m;
    unnormalized.transitions(0, 0) += 0.1;
    EXPECT_THROW(validate(unnormalized), InvalidModel);
}

TEST(Hmm, SamplerLengthsMatchUsage) {
    Rng rng(10);
    const auto m = random_hmm(3, 1, 1, rng);
    const auto seqs = sample_sequences(m, 20000, rng, 100000);
    double mean_len = 0.0;
    for (const auto& s : seqs) mean_len += static_cast<double>(s.size());
    mean_len /= 20000.0;
    EXPECT_NEAR(mean_len, expected_usage(m).sum(), 0.05 * expected_usage(m).sum());
}

TEST(Hmm, LargeEtaIsBatchEmAndSmallEtaIsIdentity) {
    Rng rng(11);
    const auto truth = random_hmm(3, 1, 2, rng);
    const auto model = random_hmm(3, 1, 2, rng);
    const auto data = sample_batch(truth, 60, rng);
    const std::span<const Sequence> batch(data);
    EXPECT_LT(relative_diff(pack(online_em_step(model, batch, 1e12)), pack(batch_em_step(model, batch))), 1e-7);
    EXPECT_LT(relative_diff(pack(online_em_step(model, batch, 1e-12)), pack(model)), 1e-7);
}

TEST(Hmm, OnlineStepIsStationaryForItsObjective) {
    for (std::uint64_t seed = 20; seed < 23; ++seed) {
        Rng rng(seed);
        const auto truth = random_hmm(2, 1, 1, rng);
        const auto model = random_hmm(2, 1, 1, rng, true);
        const auto data = sample_batch(truth, 10, rng, 15);
        const std::span<const Sequence> batch(data);
        const double eta = 0.4;
        const auto next = online_em_step(model, batch, eta);
        auto f = [&](const Vector& x) { return online_objective(model, unpack(model, x), batch, eta); };
        Vector g = fd_gradient(f, pack(next));
        const auto k = model.states();
        project_simplex_block(g, 0, k);
        for (Eigen::Index h = 0; h < model.transient_count; ++h) project_simplex_block(g, k + h * k, k);
        EXPECT_LT(g.norm(), 1e-5) << "seed " << seed;
    }
}

TEST(Hmm, UpperBoundIsTight) {
    Rng rng(12);
    const auto truth = random_hmm(3, 1, 2, rng);
    const auto model = random_hmm(3, 1, 2, rng);
    const auto data = sample_batch(truth, 30, rng);
    const std::span<const Sequence> batch(data);
    EXPECT_NEAR(em_upper_bound(model, model, batch), nll(model, batch), 1e-9);
    const auto next = batch_em_step(model, batch);
    EXPECT_GE(em_upper_bound(model, next, batch) + 1e-10, nll(next, batch));
}

TEST(Hmm, DivergenceMatchesMonteCarlo) {
    Rng rng(13);
    const auto a = random_hmm(2, 1, 1, rng, false, 2.0);
    auto b = random_hmm(2, 1, 1, rng, false, 2.0);
    b.initial = a.initial;
    const int n = 100000;
    const auto paths = sample_paths(a, n, rng, 100000);
    auto log_joint = [](const GaussianHmm& m, const SampledPath& p) {
        double v = std::log(m.initial[p.states[0]]);
        for (std::size_t t = 0; t < p.states.size(); ++t) {
            v += emission_log_pdf(m.family, m.emissions[static_cast<std::size_t>(p.states[t])], p.observations[t]);
            const int next = t + 1 < p.states.size() ? p.states[t + 1] : p.absorbed_in;
            v += std::log(m.transitions(p.states[t], next));
        }
        return v;
    };
    double sum = 0.0, sq = 0.0;
    for (const auto& p : paths) {
        const double r = log_joint(a, p) - log_joint(b, p);
        sum += r;
        sq += r * r;
    }
    const double mean = sum / n, se = std::sqrt((sq / n - mean * mean) / n);
    EXPECT_NEAR(hmm_divergence(a, b), mean, 5.0 * se);
}

TEST(Hmm, BatchEmDecreasesNll) {
    Rng rng(14);
    const auto truth = random_hmm(3, 1, 2, rng);
    auto m = random_hmm(3, 1, 2, rng);
    const auto data = sample_batch(truth, 100, rng);
    const std::span<const Sequence> batch(data);
    double prev = nll(m, batch);
    for (int it = 0; it < 10; ++it) {
        m = batch_em_step(m, batch);
        const double cur = nll(m, batch);
        EXPECT_LE(cur, prev + 1e-10);
        prev = cur;
        for (Eigen::Index h = 0; h < m.transient_count; ++h) EXPECT_NEAR(m.transitions.row(h).sum(), 1.0, 1e-12);
    }
    EXPECT_NO_THROW(expected_usage(m));
}

TEST(Hmm, OnlineStepDoesNotIncreaseBatchNll) {
    Rng rng(15);
    const auto truth = random_hmm(3, 1, 2, rng);
    auto m = random_hmm(3, 1, 2, rng);
    const auto data = sample_batch(truth, 50, rng);
    for (std::size_t i = 0; i < data.size(); ++i) {
        const std::span<const Sequence> one(&data[i], 1);
        const double before = nll(m, one);
        m = online_em_step(m, one, 0.5 / std::pow(static_cast<double>(i + 1), 0.9));
        EXPECT_LE(nll(m, one), before + 1e-8);
    }
}

TEST(Hmm, EmptySequenceIsRejected) {
    Rng rng(16);
    const auto m = random_hmm(2, 1, 1, rng);
    EXPECT_THROW(forward_backward(m, Sequence{}), InvalidArgument);
}
