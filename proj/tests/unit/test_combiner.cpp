#include <gtest/gtest.h>

#include "oem/combiner.hpp"
#include "support/oracles.hpp"

using namespace oem;
using namespace oem::testing;

namespace {

WeightedModels<GaussianMixture> random_weighted_mixtures(Rng& rng, int M = 3) {
    WeightedModels<GaussianMixture> wm;
    const auto base = random_gmm(3, 2, rng);
    for (int m = 0; m < M; ++m) {
        auto model = base;
        model.weights = random_simplex(3, rng);
        for (auto& c : model.components)
            c = model.family.from_moments(model.family.mean(c) + normal_vector(2, rng, 0.5), random_spd(2, rng));
        wm.models.push_back(model);
    }
    wm.weights = Vector(M);
    for (int m = 0; m < M; ++m) wm.weights[m] = uniform(rng, 0.2, 2.0);
    return wm;
}

double combine_objective(const WeightedModels<GaussianMixture>& wm, const GaussianMixture& candidate) {
    double v = 0.0;
    for (std::size_t m = 0; m < wm.models.size(); ++m) v += wm.weights[m] * mixture_divergence(wm.models[m], candidate);
    return v;
}

}  // namespace

TEST(Combiner, MixtureCombinationIsIdempotent) {
    Rng rng(1);
    const auto m = random_gmm(3, 2, rng);
    WeightedModels<GaussianMixture> wm{{m, m, m}, Vector::Constant(3, 1.0)};
    EXPECT_LT(max_abs_diff(pack(combine_mixtures(wm)), pack(m)), 1e-12);
}

TEST(Combiner, MixtureCombinationBeatsPerturbations) {
    Rng rng(2);
    for (int inst = 0; inst < 10; ++inst) {
        const auto wm = random_weighted_mixtures(rng);
        const auto best = combine_mixtures(wm);
        const double j0 = combine_objective(wm, best);
        for (int p = 0; p < 30; ++p) {
            auto cand = best;
            cand.weights = (best.weights.array() * (1.0 + 0.1 * normal_vector(3, rng).array()).abs()).matrix();
            cand.weights /= cand.weights.sum();
            for (auto& c : cand.components)
                c = cand.family.from_moments(cand.family.mean(c) + normal_vector(2, rng, 0.05),
                                             cand.family.covariance(c) + 0.05 * random_spd(2, rng, 0.0));
            EXPECT_GT(combine_objective(wm, cand), j0);
        }
    }
}

TEST(Combiner, MixtureCombinationAveragesCompleteDataStatistics) {
    Rng rng(3);
    const auto wm = random_weighted_mixtures(rng, 2);
    const auto out = combine_mixtures(wm);
    const double a = wm.weights[0] / wm.weights.sum(), b = wm.weights[1] / wm.weights.sum();
    for (Eigen::Index h = 0; h < 3; ++h) {
        const double w = a * wm.models[0].weights[h] + b * wm.models[1].weights[h];
        EXPECT_NEAR(out.weights[h], w, 1e-12);
        const Vector mean = (a * wm.models[0].weights[h] * out.family.mean(wm.models[0].components[h]) +
                             b * wm.models[1].weights[h] * out.family.mean(wm.models[1].components[h])) /
                            w;
        EXPECT_LT(max_abs_diff(out.family.mean(out.components[h]), mean), 1e-12);
    }
}

TEST(Combiner, SimpleAverageAveragesMoments) {
    Rng rng(4);
    const auto wm = random_weighted_mixtures(rng, 2);
    const auto out = combine_simple_average(wm);
    const double a = wm.weights[0] / wm.weights.sum(), b = wm.weights[1] / wm.weights.sum();
    for (Eigen::Index h = 0; h < 3; ++h) {
        const auto& f = out.family;
        EXPECT_LT(max_abs_diff(f.mean(out.components[h]),
                               a * f.mean(wm.models[0].components[h]) + b * f.mean(wm.models[1].components[h])),
                  1e-12);
        EXPECT_LT(max_abs_diff(f.covariance(out.components[h]),
                               a * f.covariance(wm.models[0].components[h]) + b * f.covariance(wm.models[1].components[h])),
                  1e-12);
    }
}

TEST(Combiner, HmmCombinationBeatsPerturbations) {
    Rng rng(5);
    for (int inst = 0; inst < 10; ++inst) {
        WeightedModels<GaussianHmm> wm;
        const auto base = random_hmm(3, 1, 2, rng);
        for (int m = 0; m < 3; ++m) {
            auto model = random_hmm(3, 1, 2, rng);
            model.emissions = base.emissions;
            for (auto& e : model.emissions)
                e = model.family.from_moments(model.family.mean(e) + normal_vector(2, rng, 0.3), model.family.covariance(e));
            wm.models.push_back(model);
        }
        wm.weights = Vector::Constant(3, 1.0) + 0.5 * normal_vector(3, rng).cwiseAbs();
        auto objective = [&](const GaussianHmm& c) {
            double v = 0.0;
            for (std::size_t m = 0; m < 3; ++m) v += wm.weights[m] * hmm_divergence(wm.models[m], c);
            return v;
        };
        const auto best = combine_hmms(wm);
        const double j0 = objective(best);
        for (int p = 0; p < 30; ++p) {
            auto cand = best;
            cand.initial.head(3) = (best.initial.head(3).array() * (1.0 + 0.1 * normal_vector(3, rng).array()).abs()).matrix();
            cand.initial /= cand.initial.sum();
            for (Eigen::Index h = 0; h < 3; ++h) {
                Vector row = (best.transitions.row(h).transpose().array() * (1.0 + 0.1 * normal_vector(4, rng).array()).abs()).matrix();
                cand.transitions.row(h) = row.transpose() / row.sum();
                auto& e = cand.emissions[static_cast<std::size_t>(h)];
                e = cand.family.from_moments(cand.family.mean(e) + normal_vector(2, rng, 0.05), cand.family.covariance(e));
            }
            EXPECT_GT(objective(cand), j0);
        }
    }
}

TEST(Combiner, SampledCombinationConvergesToClosedForm) {
    Rng rng(6);
    const auto wm = random_weighted_mixtures(rng);
    const auto exact = combine_mixtures(wm);
    const std::vector<std::size_t> sizes{40000, 40000, 40000};
    const auto approx = combine_sampled_mixtures(wm, std::span<const std::size_t>(sizes), rng);
    EXPECT_LT(max_abs_diff(approx.weights, exact.weights), 0.02);
    for (Eigen::Index h = 0; h < 3; ++h)
        EXPECT_LT(max_abs_diff(approx.family.mean(approx.components[h]), exact.family.mean(exact.components[h])), 0.1);
}

TEST(Combiner, SampledDirichletCombinationOfIdenticalModels) {
    Rng rng(7);
    Vector alpha(4);
    alpha << 0.8, 1.5, 2.5, 1.1;
    const DirichletModel m(alpha);
    WeightedModels<DirichletModel> wm{{m, m}, Vector::Constant(2, 1.0)};
    const std::vector<std::size_t> sizes{3000, 3000};
    const auto out = combine_sampled_dirichlet(wm, std::span<const std::size_t>(sizes), 200, rng);
    for (Eigen::Index j = 0; j < 4; ++j) EXPECT_NEAR(out.alpha()[j], alpha[j], 0.1 * alpha[j]);
}

TEST(Combiner, GenericSampledCombinationCallsSamplerPerModel) {
    Rng rng(8);
    WeightedModels<double> wm{{1.0, 3.0}, Vector::Constant(2, 1.0)};
    int calls = 0;
    auto sampler = [&](double mean, std::size_t n, Rng& r) {
        ++calls;
        std::normal_distribution<double> d(mean, 1.0);
        std::vector<double> xs(n);
        for (auto& x : xs) x = d(r);
        return xs;
    };
    auto solver = [](const WeightedModels<double>& w, const std::vector<std::vector<double>>& data) {
        double num = 0.0, den = 0.0;
        for (std::size_t m = 0; m < data.size(); ++m) {
            double s = 0.0;
            for (double x : data[m]) s += x;
            num += w.weights[m] * s / static_cast<double>(data[m].size());
            den += w.weights[m];
        }
        return num / den;
    };
    const std::vector<std::size_t> sizes{20000, 20000};
    const double out = combine_sampled(wm, std::span<const std::size_t>(sizes), rng, sampler, solver);
    EXPECT_EQ(calls, 2);
    EXPECT_NEAR(out, 2.0, 0.05);
}

TEST(Combiner, ArgumentErrors) {
    Rng rng(9);
    auto wm = random_weighted_mixtures(rng);
    auto bad = wm;
    bad.weights = Vector::Zero(3);
    EXPECT_THROW(combine_mixtures(bad), InvalidArgument);
    bad.weights = Vector::Ones(2);
    EXPECT_THROW(combine_mixtures(bad), InvalidArgument);
    const std::vector<std::size_t> sizes{10, 0, 10};
    EXPECT_THROW(combine_sampled_mixtures(wm, std::span<const std::size_t>(sizes), rng), InvalidArgument);
    WeightedModels<GaussianMixture> empty;
    EXPECT_THROW(combine_simple_average(empty), InvalidArgument);
}
