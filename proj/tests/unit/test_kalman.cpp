#include <gtest/gtest.h>

#include "oem/kalman.hpp"
#include "support/oracles.hpp"

using namespace oem;
using namespace oem::testing;

TEST(Kalman, SmootherMatchesJointGaussianConditioning) {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        Rng rng(seed);
        const auto m = random_kalman(2, 2, rng);
        const auto seq = sample_sequences(m, 1, 4, rng).front();
        const auto sm = smooth(m, seq);
        const auto want = joint_gaussian_posterior(m, seq);
        EXPECT_NEAR(sm.log_likelihood, want.log_likelihood, 1e-8);
        EXPECT_NEAR(sm.posterior_log_det, want.posterior_log_det, 1e-8);
        for (std::size_t t = 0; t < 4; ++t) {
            EXPECT_LT(max_abs_diff(sm.h_hat[t], want.h_hat[t]), 1e-8);
            EXPECT_LT(max_abs_diff(sm.P[t], want.P[t]), 1e-8);
            EXPECT_LT(max_abs_diff(sm.P_pair[t], want.P_pair[t]), 1e-8);
        }
        const std::vector<Sequence> one{seq};
        EXPECT_NEAR(nll(m, std::span<const Sequence>(one)), -want.log_likelihood, 1e-8);
    }
}

TEST(Kalman, RectangularObservationModel) {
    Rng rng(6);
    const auto m = random_kalman(3, 2, rng);
    const auto seq = sample_sequences(m, 1, 6, rng).front();
    const auto sm = smooth(m, seq);
    const auto want = joint_gaussian_posterior(m, seq);
    for (std::size_t t = 0; t < 6; ++t) EXPECT_LT(max_abs_diff(sm.P[t], want.P[t]), 1e-8);
}

TEST(Kalman, UpperBoundIsTight) {
    Rng rng(7);
    const auto truth = random_kalman(2, 3, rng);
    const auto model = random_kalman(2, 3, rng);
    const auto data = sample_sequences(truth, 20, 6, rng);
    const std::span<const Sequence> batch(data);
    EXPECT_NEAR(em_upper_bound(model, model, batch), nll(model, batch), 1e-8);
    const auto next = batch_em_step(model, batch);
    EXPECT_GE(em_upper_bound(model, next, batch) + 1e-9, nll(next, batch));
}

TEST(Kalman, LargeEtaIsBatchEmAndSmallEtaIsIdentity) {
    Rng rng(8);
    const auto truth = random_kalman(2, 3, rng);
    const auto model = random_kalman(2, 3, rng);
    const auto data = sample_sequences(truth, 30, 8, rng);
    const std::span<const Sequence> batch(data);
    EXPECT_LT(relative_diff(pack(online_em_step(model, batch, 1e12)), pack(batch_em_step(model, batch))), 1e-7);
    EXPECT_LT(relative_diff(pack(online_em_step(model, batch, 1e-12)), pack(model)), 1e-7);
}

TEST(Kalman, OnlineStepIsStationaryForItsObjective) {
    for (std::uint64_t seed = 20; seed < 23; ++seed) {
        Rng rng(seed);
        const auto truth = random_kalman(2, 2, rng);
        const auto model = random_kalman(2, 2, rng);
        const auto data = sample_sequences(truth, 5, 5, rng);
        const std::span<const Sequence> batch(data);
        const double eta = 0.8;
        const auto next = online_em_step(model, batch, eta);
        auto f = [&](const Vector& x) { return online_objective(model, unpack(model, x), batch, eta); };
        EXPECT_LT(fd_gradient(f, pack(next)).norm(), 1e-5) << "seed " << seed;
    }
}

TEST(Kalman, MaskedParametersPassThrough) {
    Rng rng(9);
    const auto truth = random_kalman(2, 2, rng);
    const auto model = random_kalman(2, 2, rng);
    const auto data = sample_sequences(truth, 10, 5, rng);
    const std::span<const Sequence> batch(data);
    KalmanUpdateMask mask;
    mask.Q = mask.R = false;
    for (const auto& out : {online_em_step(model, batch, 0.5, mask), batch_em_step(model, batch, mask)}) {
        EXPECT_EQ(out.Q, model.Q);
        EXPECT_EQ(out.R, model.R);
        EXPECT_NE(out.A, model.A);
    }
}

TEST(Kalman, DivergenceMatchesMonteCarlo) {
    Rng rng(10);
    const auto a = random_kalman(2, 2, rng);
    auto b = a;
    b.A = a.A * 0.8;
    b.C = a.C + normal_matrix(2, 2, rng, 0.3);
    b.pi1 = a.pi1 + normal_vector(2, rng, 0.5);
    b.Q = a.Q * 1.5;
    b.R = a.R * 0.7;
    b.V = a.V * 1.2;
    const std::size_t T = 5;
    const int n = 50000;
    const auto trajs = sample_trajectories(a, n, T, rng);
    auto log_joint = [&](const KalmanModel& m, const KalmanTrajectory& tr) {
        double v = gaussian_log_pdf(tr.states[0], m.pi1, m.V);
        for (std::size_t t = 0; t < T; ++t) {
            if (t > 0) v += gaussian_log_pdf(tr.states[t], m.A * tr.states[t - 1], m.Q);
            v += gaussian_log_pdf(tr.observations[t], m.C * tr.states[t], m.R);
        }
        return v;
    };
    double sum = 0.0, sq = 0.0;
    for (const auto& tr : trajs) {
        const double r = log_joint(a, tr) - log_joint(b, tr);
        sum += r;
        sq += r * r;
    }
    const double mean = sum / n, se = std::sqrt((sq / n - mean * mean) / n);
    EXPECT_NEAR(kalman_divergence(a, b, T), mean, 5.0 * se);
    EXPECT_NEAR(kalman_divergence(a, a, T), 0.0, 1e-12);
}

TEST(Kalman, BatchEmDecreasesNll) {
    Rng rng(11);
    const auto truth = random_kalman(3, 4, rng);
    auto m = random_kalman(3, 4, rng);
    const auto data = sample_sequences(truth, 50, 10, rng);
    const std::span<const Sequence> batch(data);
    double prev = nll(m, batch);
    for (int it = 0; it < 10; ++it) {
        m = batch_em_step(m, batch);
        const double cur = nll(m, batch);
        EXPECT_LE(cur, prev + 1e-8);
        prev = cur;
    }
}

TEST(Kalman, OnlineStepDoesNotIncreaseBatchNll) {
    Rng rng(12);
    const auto truth = random_kalman(2, 3, rng);
    auto m = random_kalman(2, 3, rng);
    const auto data = sample_sequences(truth, 40, 8, rng);
    for (std::size_t i = 0; i < data.size(); ++i) {
        const std::span<const Sequence> one(&data[i], 1);
        const double before = nll(m, one);
        m = online_em_step(m, one, 1.0 / std::pow(static_cast<double>(i + 1), 0.9));
        EXPECT_LE(nll(m, one), before + 1e-8);
    }
}

TEST(Kalman, ShapeErrors) {
    Rng rng(13);
    const auto m = random_kalman(2, 2, rng);
    auto data = sample_sequences(m, 3, 5, rng);
    data[1].pop_back();
    EXPECT_THROW(batch_statistics(m, std::span<const Sequence>(data)), InvalidArgument);
    const std::vector<Sequence> wrong_dim{Sequence{Vector::Zero(3), Vector::Zero(3)}};
    EXPECT_THROW(nll(m, std::span<const Sequence>(wrong_dim)), InvalidArgument);
    auto bad = m;
    bad.Q(0, 0) = -1.0;
    EXPECT_THROW(validate(bad), InvalidModel);
}
