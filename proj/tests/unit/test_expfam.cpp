#include <gtest/gtest.h>

#include <numeric>

#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/trigamma.hpp>

#include "oem/expfam.hpp"
#include "oem/families.hpp"
#include "oem/numeric.hpp"
#include "support/oracles.hpp"

using namespace oem;
using namespace oem::testing;

namespace {

// Values computed with mpmath at 30 digits.
struct PolygammaValue {
    double x, digamma, trigamma;
};
constexpr PolygammaValue kFrozen[] = {
    {0.001, -1000.5755719318102797, 1000001.6425331958273},
    {0.1, -10.423754940411076232, 101.4332991507927477},
    {0.5, -1.9635100260214234794, 4.9348022005446793094},
    {1.0, -0.57721566490153286061, 1.6449340668482264365},
    {1.5, 0.036489973978576520559, 0.93480220054467930942},
    {2.5, 0.70315664064524318723, 0.49035775610023486497},
    {6.0, 1.7061176684318004727, 0.18132295573711532536},
    {10.0, 2.2517525890667211076, 0.10516633568168574612},
    {57.3, 4.0395492399575791602, 0.017605179101050650978},
    {1000.0, 6.9072551956488120521, 0.0010005001666666333334},
};

NaturalParams random_gaussian_natural(const GaussianFamily& f, Rng& rng) {
    return f.inverse_link(f.from_moments(normal_vector(f.dim(), rng, 2.0), random_spd(f.dim(), rng)));
}

NaturalParams random_poisson_natural(Rng& rng) { return NaturalParams(Vector::Constant(1, uniform(rng, -2.0, 3.0))); }

// G*(mu) = theta(mu) . mu - G(theta(mu))
template <class F>
double conjugate(const F& f, const ExpectationParams& mu) {
    const NaturalParams theta = f.inverse_link(mu);
    return theta.values.dot(mu.values) - f.log_partition(theta);
}

template <class F>
double dual_divergence(const F& f, const ExpectationParams& a, const ExpectationParams& b) {
    return conjugate(f, a) - conjugate(f, b) - f.inverse_link(b).values.dot(a.values - b.values);
}

}  // namespace

TEST(Numeric, LogSumExpHandlesLargeMagnitudes) {
    Vector x(3);
    x << 1000.0, 1000.0, -1e300;
    EXPECT_NEAR(log_sum_exp(x), 1000.0 + std::log(2.0), 1e-12);
    x << -1000.0, -1001.0, -1002.0;
    EXPECT_NEAR(log_sum_exp(x), -1000.0 + std::log(1.0 + std::exp(-1.0) + std::exp(-2.0)), 1e-12);
}

TEST(Numeric, PolygammaMatchesFrozenValues) {
    for (const auto& v : kFrozen) {
        EXPECT_NEAR(digamma(v.x), v.digamma, 1e-12 * std::max(1.0, std::abs(v.digamma))) << "x=" << v.x;
        EXPECT_NEAR(trigamma(v.x), v.trigamma, 1e-12 * std::max(1.0, std::abs(v.trigamma))) << "x=" << v.x;
    }
}

TEST(Numeric, PolygammaAgreesWithBoost) {
    for (double x = 0.01; x < 300.0; x *= 1.37) {
        const double d = boost::math::digamma(x);
        const double t = boost::math::trigamma(x);
        EXPECT_NEAR(digamma(x), d, 1e-12 * std::max(1.0, std::abs(d))) << "x=" << x;
        EXPECT_NEAR(trigamma(x), t, 1e-12 * std::max(1.0, std::abs(t))) << "x=" << x;
    }
}

TEST(Numeric, LogDetDivergenceIsZeroOnDiagonalAndPositiveElsewhere) {
    Rng rng(3);
    const Matrix x = random_spd(3, rng), y = random_spd(3, rng);
    EXPECT_NEAR(log_det_divergence(x, x), 0.0, 1e-12);
    EXPECT_GT(log_det_divergence(x, y), 0.0);
    EXPECT_NEAR(log_det_divergence(x, y), (x * y.inverse()).trace() - std::log((x * y.inverse()).determinant()) - 3.0, 1e-10);
}

TEST(Numeric, RequireSpdRejectsIndefinite) {
    Matrix m(2, 2);
    m << 1.0, 2.0, 2.0, 1.0;
    EXPECT_FALSE(is_spd(m));
    EXPECT_THROW(require_spd(m, "m"), InvalidArgument);
    EXPECT_GT(min_eigenvalue(floor_eigenvalues(m, 1e-3)), 0.0);
}

TEST(Families, GaussianLinkRoundTrip) {
    Rng rng(11);
    const GaussianFamily f(3);
    for (int i = 0; i < 20; ++i) {
        const ExpectationParams mu = f.from_moments(normal_vector(3, rng), random_spd(3, rng));
        EXPECT_LT(max_abs_diff(f.link(f.inverse_link(mu)).values, mu.values), 1e-10);
    }
}

TEST(Families, GaussianLogDensityMatchesDirectFormula) {
    Rng rng(12);
    const GaussianFamily f(3);
    const Vector m = normal_vector(3, rng);
    const Matrix s = random_spd(3, rng);
    const NaturalParams theta = f.inverse_link(f.from_moments(m, s));
    for (int i = 0; i < 10; ++i) {
        const Vector x = normal_vector(3, rng, 2.0);
        EXPECT_NEAR(log_density(f, theta, x), gaussian_log_pdf(x, m, s), 1e-10);
    }
}

TEST(Families, LinkIsGradientOfLogPartition) {
    Rng rng(13);
    const GaussianFamily g(2);
    for (int i = 0; i < 10; ++i) {
        const NaturalParams theta = random_gaussian_natural(g, rng);
        const Vector fd = fd_gradient([&](const Vector& t) { return g.log_partition(NaturalParams(t)); }, theta.values, 1e-6);
        EXPECT_LT(max_abs_diff(fd, g.link(theta).values), 1e-6 * std::max(1.0, fd.cwiseAbs().maxCoeff()));
    }
    const PoissonFamily p;
    for (int i = 0; i < 10; ++i) {
        const NaturalParams theta = random_poisson_natural(rng);
        const Vector fd = fd_gradient([&](const Vector& t) { return p.log_partition(NaturalParams(t)); }, theta.values, 1e-6);
        EXPECT_NEAR(fd[0], p.link(theta).values[0], 1e-6 * std::max(1.0, std::abs(fd[0])));
    }
}

TEST(Families, LogPartitionIsConvexAlongRandomDirections) {
    Rng rng(14);
    const GaussianFamily g(3);
    for (int i = 0; i < 30; ++i) {
        const NaturalParams theta = random_gaussian_natural(g, rng);
        const Vector dir = normal_vector(g.dim_stat(), rng).normalized();
        const double h = 1e-3;
        const NaturalParams plus(theta.values + h * dir), minus(theta.values - h * dir);
        if (!g.in_natural_domain(plus) || !g.in_natural_domain(minus)) continue;
        const double second = g.log_partition(plus) - 2.0 * g.log_partition(theta) + g.log_partition(minus);
        EXPECT_GE(second, -1e-10);
    }
}

TEST(Families, InvalidParametersAreRejectedWithCoordinates) {
    const GaussianFamily g(2);
    Vector mu = g.from_moments(Vector::Zero(2), Matrix::Identity(2, 2)).values;
    mu[2] = -1.0;  // second moment (0,0) below mean^2
    try {
        g.inverse_link(ExpectationParams(mu));
        FAIL() << "expected InvalidParameter";
    } catch (const InvalidParameter& e) {
        EXPECT_NE(std::string(e.what()).find("coordinates 2..5"), std::string::npos) << e.what();
    }
    EXPECT_THROW(PoissonFamily{}.inverse_link(ExpectationParams(Vector::Constant(1, -1.0))), InvalidParameter);
    EXPECT_THROW(GaussianFamily(0), InvalidArgument);
}

TEST(Bregman, PoissonDivergenceMatchesSummedRelativeEntropy) {
    Rng rng(21);
    const PoissonFamily p;
    for (int i = 0; i < 20; ++i) {
        const double a = uniform(rng, 0.5, 10.0), b = uniform(rng, 0.5, 10.0);
        double kl = 0.0;
        for (int x = 0; x < 200; ++x) {
            const double lp = poisson_log_pmf(x, a);
            kl += std::exp(lp) * (lp - poisson_log_pmf(x, b));
        }
        const double d = bregman_divergence(p, NaturalParams(Vector::Constant(1, std::log(b))),
                                            NaturalParams(Vector::Constant(1, std::log(a))));
        EXPECT_NEAR(d, kl, 1e-10);
    }
}

TEST(Bregman, GaussianDivergenceMatchesQuadrature) {
    Rng rng(22);
    const GaussianFamily g(1);
    for (int i = 0; i < 10; ++i) {
        const double m1 = uniform(rng, -2, 2), s1 = uniform(rng, 0.5, 2), m2 = uniform(rng, -2, 2), s2 = uniform(rng, 0.5, 2);
        auto lp = [](double x, double m, double s) { return -0.5 * std::log(2 * M_PI * s * s) - 0.5 * (x - m) * (x - m) / (s * s); };
        // Simpson's rule on +-14 sigma around the first density.
        const int n = 20000;
        const double lo = m1 - 14 * s1, hi = m1 + 14 * s1, h = (hi - lo) / n;
        double kl = 0.0;
        for (int j = 0; j <= n; ++j) {
            const double x = lo + j * h;
            const double w = (j == 0 || j == n) ? 1.0 : (j % 2 ? 4.0 : 2.0);
            kl += w * std::exp(lp(x, m1, s1)) * (lp(x, m1, s1) - lp(x, m2, s2));
        }
        kl *= h / 3.0;
        const NaturalParams t1 = g.inverse_link(g.from_moments(Vector::Constant(1, m1), Matrix::Constant(1, 1, s1 * s1)));
        const NaturalParams t2 = g.inverse_link(g.from_moments(Vector::Constant(1, m2), Matrix::Constant(1, 1, s2 * s2)));
        EXPECT_NEAR(bregman_divergence(g, t2, t1), kl, 1e-8);
    }
}

TEST(Bregman, GaussianDivergenceMatchesClosedFormKl) {
    Rng rng(23);
    const GaussianFamily g(3);
    for (int i = 0; i < 20; ++i) {
        const Vector m1 = normal_vector(3, rng), m2 = normal_vector(3, rng);
        const Matrix s1 = random_spd(3, rng), s2 = random_spd(3, rng);
        const Matrix s2inv = s2.inverse();
        const double kl = 0.5 * ((s2inv * s1).trace() + (m2 - m1).dot(s2inv * (m2 - m1)) - 3.0 +
                                 std::log(s2.determinant() / s1.determinant()));
        const double d = bregman_divergence(g, g.inverse_link(g.from_moments(m2, s2)), g.inverse_link(g.from_moments(m1, s1)));
        EXPECT_NEAR(d, kl, 1e-10 * std::max(1.0, kl));
    }
}

TEST(Bregman, DualityOfPrimalAndConjugateDivergences) {
    Rng rng(24);
    const GaussianFamily g(2);
    for (int i = 0; i < 50; ++i) {
        const NaturalParams a = random_gaussian_natural(g, rng), b = random_gaussian_natural(g, rng);
        const double primal = bregman_divergence(g, a, b);
        const double dual = dual_divergence(g, g.link(b), g.link(a));
        EXPECT_NEAR(primal, dual, 1e-9 * std::max(1.0, primal));
    }
}

TEST(Bregman, CombinePartialMatchesNumericalMinimizer) {
    Rng rng(25);
    // Poisson: golden-section search on theta.
    const PoissonFamily p;
    for (int i = 0; i < 10; ++i) {
        std::vector<double> w{uniform(rng, 0.1, 1), uniform(rng, 0.1, 1), uniform(rng, 0.1, 1)};
        std::vector<ExpectationParams> mus;
        for (int m = 0; m < 3; ++m) mus.emplace_back(Vector::Constant(1, uniform(rng, 0.5, 9.0)));
        auto obj = [&](double t) {
            double v = 0.0;
            for (int m = 0; m < 3; ++m) v += w[m] * (std::exp(t) - t * mus[m].values[0]);
            return v;
        };
        double lo = -5.0, hi = 5.0;
        const double r = (std::sqrt(5.0) - 1.0) / 2.0;
        for (int it = 0; it < 200; ++it) {
            const double c = hi - r * (hi - lo), d = lo + r * (hi - lo);
            (obj(c) < obj(d) ? hi : lo) = (obj(c) < obj(d) ? d : c);
        }
        const ExpectationParams got = combine_partial(p, std::span<const double>(w), std::span<const ExpectationParams>(mus));
        EXPECT_NEAR(std::log(got.values[0]), 0.5 * (lo + hi), 1e-7);
    }
    // Gaussian in one dimension: Newton with finite-difference derivatives.
    const GaussianFamily g(1);
    for (int i = 0; i < 10; ++i) {
        std::vector<double> w{uniform(rng, 0.1, 1), uniform(rng, 0.1, 1)};
        std::vector<ExpectationParams> mus;
        for (int m = 0; m < 2; ++m)
            mus.push_back(g.from_moments(Vector::Constant(1, uniform(rng, -2, 2)), Matrix::Constant(1, 1, uniform(rng, 0.3, 3))));
        auto obj = [&](const Vector& t) {
            const NaturalParams theta(t);
            if (!g.in_natural_domain(theta)) return std::numeric_limits<double>::infinity();
            double v = 0.0;
            for (int m = 0; m < 2; ++m) v += w[m] * (g.log_partition(theta) - t.dot(mus[m].values));
            return v;
        };
        Vector t = g.inverse_link(g.from_moments(Vector::Zero(1), Matrix::Identity(1, 1))).values;
        for (int it = 0; it < 100; ++it) {
            const Vector grad = fd_gradient(obj, t, 1e-6);
            const Matrix hess = fd_jacobian([&](const Vector& x) { return fd_gradient(obj, x, 1e-5); }, t, 1e-4);
            Vector step = -hess.ldlt().solve(grad);
            double scale = 1.0;
            while (obj(t + scale * step) > obj(t) && scale > 1e-8) scale *= 0.5;
            t += scale * step;
            if (grad.norm() < 1e-10) break;
        }
        const ExpectationParams got = combine_partial(g, std::span<const double>(w), std::span<const ExpectationParams>(mus));
        EXPECT_LT(max_abs_diff(g.inverse_link(got).values, t), 1e-5);
    }
}

TEST(Bregman, TriangularEqualities) {
    Rng rng(26);
    const GaussianFamily g(2);
    for (int i = 0; i < 100; ++i) {
        const int M = 4;
        std::vector<double> w;
        std::vector<NaturalParams> thetas;
        std::vector<ExpectationParams> mus;
        for (int m = 0; m < M; ++m) {
            w.push_back(uniform(rng, 0.1, 2.0));
            thetas.push_back(random_gaussian_natural(g, rng));
            mus.push_back(g.link(thetas.back()));
        }
        const double W = std::accumulate(w.begin(), w.end(), 0.0);
        const NaturalParams star = combine_forward(g, std::span<const double>(w), std::span<const NaturalParams>(thetas));
        const NaturalParams any = random_gaussian_natural(g, rng);
        double lhs = 0.0, rhs = W * bregman_divergence(g, any, star);
        for (int m = 0; m < M; ++m) {
            lhs += w[m] * bregman_divergence(g, any, thetas[m]);
            rhs += w[m] * bregman_divergence(g, star, thetas[m]);
        }
        EXPECT_NEAR(lhs, rhs, 1e-9 * std::max(1.0, std::abs(lhs)));

        const ExpectationParams mu_star = combine_backward(g, std::span<const double>(w), std::span<const ExpectationParams>(mus));
        const ExpectationParams mu_any = g.link(random_gaussian_natural(g, rng));
        double blhs = 0.0, brhs = W * dual_divergence(g, mu_star, mu_any);
        for (int m = 0; m < M; ++m) {
            blhs += w[m] * dual_divergence(g, mus[m], mu_any);
            brhs += w[m] * dual_divergence(g, mus[m], mu_star);
        }
        EXPECT_NEAR(blhs, brhs, 1e-9 * std::max(1.0, std::abs(blhs)));
    }
}

TEST(Bregman, CombineRejectsBadWeights) {
    const PoissonFamily p;
    std::vector<ExpectationParams> mus{ExpectationParams(Vector::Constant(1, 1.0))};
    std::vector<double> neg{-1.0}, zero{0.0}, two{1.0, 1.0};
    EXPECT_THROW(combine_partial(p, std::span<const double>(neg), std::span<const ExpectationParams>(mus)), InvalidArgument);
    EXPECT_THROW(combine_partial(p, std::span<const double>(zero), std::span<const ExpectationParams>(mus)), InvalidArgument);
    EXPECT_THROW(combine_backward(p, std::span<const double>(two), std::span<const ExpectationParams>(mus)), InvalidArgument);
}
