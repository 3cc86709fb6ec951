#include "phom/coefficients.hpp"
#include "phom/rng.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace phom;

namespace {

Vec v1(double x) { return Vec::Constant(1, x); }

Vec v2(double x, double y) {
    Vec v(2);
    v << x, y;
    return v;
}

ScalarField sine(int k, double amp, double constant = 0.0) {
    return ScalarField(constant, {FourierTerm{{k, 0, 0}, 0.0, amp}});
}

ScalarField cosine(int k, double amp, double constant = 0.0) {
    return ScalarField(constant, {FourierTerm{{k, 0, 0}, amp, 0.0}});
}

}  // namespace

TEST(EvalCoefficients, ConstantModel) {
    const auto m = PeriodicModel::constant(1);
    const auto k = m.eval(v1(0.3));
    EXPECT_DOUBLE_EQ(k.sigma(0, 0), 1.0);
    EXPECT_DOUBLE_EQ(k.b[0], 0.0);
    EXPECT_DOUBLE_EQ(k.c[0], 0.0);
    EXPECT_DOUBLE_EQ(k.a(0, 0), 1.0);
}

TEST(EvalCoefficients, DiffusionFormSquareRoot) {
    const PeriodicModel m(1, DiffusionForm::Diffusion, {sine(1, 1.0, 2.0)}, {ScalarField()}, {ScalarField()});
    const auto k = m.eval(v1(0.25));
    EXPECT_NEAR(k.sigma(0, 0), std::sqrt(3.0), 1e-14);
    EXPECT_NEAR(k.a(0, 0), 3.0, 1e-14);
}

TEST(EvalCoefficients, AEqualsSigmaSigmaT) {
    std::vector<ScalarField> s{sine(1, 0.3, 1.0), ScalarField(0.2), ScalarField(0.0), cosine(2, 0.1, 0.8)};
    const PeriodicModel m(2, DiffusionForm::Sigma, s, {ScalarField(), ScalarField()}, {ScalarField(), ScalarField()});
    const auto k = m.eval(v2(0.37, 0.81));
    EXPECT_LT((k.a - k.sigma * k.sigma.transpose()).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(EvalCoefficients, PeriodicityUnderUnitShifts) {
    std::vector<ScalarField> s{sine(1, 0.3, 1.0), ScalarField(0.2), ScalarField(0.0), cosine(2, 0.1, 0.8)};
    std::vector<ScalarField> b{ScalarField(0.0, {FourierTerm{{1, 2, 0}, 0.4, -0.7}}), sine(3, 0.5)};
    std::vector<ScalarField> c{cosine(1, 0.2, 0.1), ScalarField(0.3)};
    const PeriodicModel m(2, DiffusionForm::Sigma, s, b, c);
    RandomStream rs(17, 0, Lane::Design);
    double worst = 0.0;
    for (int n = 0; n < 1000; ++n) {
        const Vec x = v2(rs.uniform(), rs.uniform());
        Vec shift = Vec::Zero(2);
        shift[n % 2] = 1.0 + static_cast<double>(n % 3);
        const auto k0 = m.eval(x);
        const auto k1 = m.eval(Vec(x + shift));
        worst = std::max({worst, (k0.sigma - k1.sigma).cwiseAbs().maxCoeff(), (k0.b - k1.b).cwiseAbs().maxCoeff(),
                          (k0.c - k1.c).cwiseAbs().maxCoeff(), (k0.a - k1.a).cwiseAbs().maxCoeff()});
    }
    EXPECT_LE(worst, 1e-12);
}

TEST(EvalCoefficients, CutoffVanishesOnInterval) {
    const SmoothCutoff cut{0, 0.4, 0.6, 0.1};
    const ScalarField psi(1.0, {}, cut);
    EXPECT_EQ(psi(v1(0.5)), 0.0);
    EXPECT_EQ(psi(v1(0.41)), 0.0);
    EXPECT_NEAR(psi(v1(0.1)), 1.0, 1e-15);
    const double mid = psi(v1(0.35));
    EXPECT_GT(mid, 0.0);
    EXPECT_LT(mid, 1.0);
    EXPECT_NEAR(psi(v1(0.35)), psi(v1(0.65)), 1e-14);
}

TEST(Domain, BoxGeometry) {
    const auto G = Domain::unit_interval();
    EXPECT_TRUE(G.contains(v1(0.5)));
    EXPECT_FALSE(G.contains(v1(0.0)));
    EXPECT_TRUE(G.in_closure(v1(1.0)));
    EXPECT_NEAR(G.crossing_fraction(v1(0.9), v1(1.1)), 0.5, 1e-14);
    EXPECT_NEAR(G.project_to_boundary(v1(1.05))[0], 1.0, 0.0);
    EXPECT_NEAR(G.distance_to_boundary(v1(0.3)), 0.3, 1e-15);
    EXPECT_NEAR(G.bubble(v1(0.0)), 0.0, 0.0);
}

TEST(Domain, BallGeometry) {
    const auto G = Domain::ball(v2(0.0, 0.0), 1.0);
    EXPECT_TRUE(G.contains(v2(0.5, 0.5)));
    EXPECT_FALSE(G.contains(v2(1.0, 0.0)));
    const Vec p = G.project_to_boundary(v2(2.0, 0.0));
    EXPECT_NEAR(p.norm(), 1.0, 1e-15);
    EXPECT_NEAR(G.crossing_fraction(v2(0.5, 0.0), v2(1.5, 0.0)), 0.5, 1e-14);
}

TEST(Driver, CatalogConstants) {
    DriverSpec s;
    s.source_constant = 1.0;
    s.source_fast = cosine(1, 0.5);
    s.reaction_linear = 1.0;
    s.reaction_sine = 0.3;
    s.gradient_amplitude = 0.5;
    s.gradient_direction = v1(1.0);
    const Driver f(s);
    EXPECT_NEAR(f.mu(), -0.7, 1e-15);
    EXPECT_NEAR(f.K(), 1.5, 1e-15);
    EXPECT_FALSE(f.fast_independent());
    EXPECT_FALSE(f.z_independent());
}

TEST(Driver, SampledMonotonicityAndLipschitz) {
    DriverSpec s;
    s.source_constant = 0.4;
    s.source_fast = sine(1, 0.5);
    s.slow_amplitude = 0.2;
    s.slow_wavevector = v1(1.0);
    s.reaction_linear = 1.2;
    s.reaction_sine = -0.4;
    s.gradient_amplitude = 0.7;
    s.gradient_direction = v1(0.8);
    const Driver f(s);
    RandomStream rs(5, 0, Lane::Design);
    for (int n = 0; n < 2000; ++n) {
        const Vec xi = v1(rs.uniform()), x = v1(rs.uniform());
        const double y = 10 * (rs.uniform() - 0.5), y2 = 10 * (rs.uniform() - 0.5);
        const Vec z = v1(10 * (rs.uniform() - 0.5)), z2 = v1(10 * (rs.uniform() - 0.5));
        const double dy = (y - y2) * (f(xi, x, y, z) - f(xi, x, y2, z));
        EXPECT_LE(dy, f.mu() * (y - y2) * (y - y2) + 1e-12);
        EXPECT_LE(std::abs(f(xi, x, y, z) - f(xi, x, y, z2)), f.K() * (z - z2).norm() + 1e-12);
        EXPECT_LE(std::abs(f(xi, x, y, z)), f.K() * (1 + std::abs(y) + z.norm()) + 1e-12);
    }
}

TEST(Driver, AnalyticDerivativesMatchDifferences) {
    DriverSpec s;
    s.reaction_linear = 1.0;
    s.reaction_sine = 0.3;
    s.gradient_amplitude = 0.5;
    s.gradient_direction = v1(1.0);
    const Driver f(s);
    const Vec xi = v1(0.2), x = v1(0.4), z = v1(0.7);
    const double y = 0.3, h = 1e-6;
    EXPECT_NEAR(f.dy(xi, x, y, z), (f(xi, x, y + h, z) - f(xi, x, y - h, z)) / (2 * h), 1e-8);
    EXPECT_NEAR(f.dz(xi, x, y, z)[0], (f(xi, x, y, v1(0.7 + h)) - f(xi, x, y, v1(0.7 - h))) / (2 * h), 1e-8);
}

TEST(DirichletProblem, LambdaMargin) {
    const auto G = Domain::unit_interval();
    const Driver f([](const Vec&, const Vec&, double y, const Vec&) { return -y; }, -1.0, 2.0, false);
    const DirichletProblem bad(G, BoundaryFunction::constant_value(0.0), f, 0.1);
    EXPECT_FALSE(bad.lambda_condition_holds());
    EXPECT_NEAR(bad.lambda_margin(), 0.1 - 2.0, 1e-15);
    EXPECT_THROW(bad.require_lambda_condition(), Error);
    EXPECT_THROW(DirichletProblem(G, BoundaryFunction::constant_value(0.0), f, 0.0), Error);
}
