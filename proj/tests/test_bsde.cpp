#include "oracles.hpp"

#include "phom/bsde.hpp"
#include "phom/pde_oracle.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

using namespace phom;

namespace {

Vec v1(double x) { return Vec::Constant(1, x); }

SchemeParams bridge_scheme(double h, std::uint64_t seed = 11) {
    SchemeParams sp;
    sp.h = h;
    sp.t_max = 50.0;
    sp.exit_rule = ExitRule::BrownianBridge;
    sp.seed = seed;
    return sp;
}

const std::vector<Vec> kQuery = {v1(0.1), v1(0.3), v1(0.5), v1(0.7), v1(0.9)};

}  // namespace

TEST(RegressionBasis, MatchesBoundaryData) {
    const auto G = Domain::box(Vec::Zero(2), Vec::Ones(2));
    const BoundaryFunction g(0.5, Vec::Constant(2, 1.0), 0.25);
    const RegressionBasis basis(G, g, 4);
    EXPECT_EQ(basis.size(), 15u);
    Eigen::VectorXd c = Eigen::VectorXd::LinSpaced(static_cast<Eigen::Index>(basis.size()), -1.0, 1.0);
    for (double t : {0.0, 0.3, 0.8}) {
        Vec x(2);
        x << t, 0.0;
        EXPECT_NEAR(basis.value(c, x), g(x), 1e-14);
        x << 1.0, t;
        EXPECT_NEAR(basis.value(c, x), g(x), 1e-14);
    }
}

TEST(RegressionBasis, GradientMatchesFiniteDifference) {
    const auto G = Domain::box(Vec::Zero(2), Vec::Ones(2));
    const BoundaryFunction g(0.0, Vec::Constant(2, 0.3), 0.0);
    const RegressionBasis basis(G, g, 3);
    Eigen::VectorXd c = Eigen::VectorXd::LinSpaced(static_cast<Eigen::Index>(basis.size()), 0.5, -0.7);
    Vec x(2);
    x << 0.37, 0.61;
    const Vec gr = basis.gradient(c, x);
    for (int i = 0; i < 2; ++i) {
        Vec e = Vec::Zero(2);
        e[i] = 1e-6;
        const double fd = (basis.value(c, Vec(x + e)) - basis.value(c, Vec(x - e))) / 2e-6;
        EXPECT_NEAR(gr[i], fd, 1e-7);
    }
}

TEST(FeynmanKac, AffineBoundaryData) {
    const LimitDynamics lim(Mat::Identity(1, 1), Vec::Zero(1));
    BsdeParams bp;
    bp.n_paths = 4000;
    bp.scheme = bridge_scheme(1e-3);
    const auto G = Domain::unit_interval();
    const auto est = solve_feynman_kac(lim, G, BoundaryFunction(0.0, v1(1.0), 0.0), Driver(), kQuery, bp);
    for (std::size_t q = 0; q < kQuery.size(); ++q)
        EXPECT_NEAR(est.values[q], kQuery[q][0], 4.0 * est.se[q] + 2e-3) << "x = " << kQuery[q][0];
    EXPECT_EQ(est.censored_fraction, 0.0);
}

TEST(FeynmanKac, ConstantSourceClosedForm) {
    // u = x (1 - x) solves (1/2) u'' + 1 = 0.
    const LimitDynamics lim(Mat::Identity(1, 1), Vec::Zero(1));
    BsdeParams bp;
    bp.n_paths = 4000;
    bp.scheme = bridge_scheme(1e-3);
    const auto est = solve_feynman_kac(lim, Domain::unit_interval(), BoundaryFunction::constant_value(0.0),
                                       Driver::constant_source(1.0), kQuery, bp);
    for (std::size_t q = 0; q < kQuery.size(); ++q) {
        const double x = kQuery[q][0];
        EXPECT_NEAR(est.values[q], x * (1.0 - x), 4.0 * est.se[q] + 2e-3) << "x = " << x;
    }
}

TEST(FeynmanKac, RejectsStateDependentDriver) {
    const LimitDynamics lim(Mat::Identity(1, 1), Vec::Zero(1));
    BsdeParams bp;
    EXPECT_THROW(solve_feynman_kac(lim, Domain::unit_interval(), BoundaryFunction::constant_value(1.0),
                                   Driver::linear_reaction(1.0), kQuery, bp),
                 Error);
}

TEST(FeynmanKac, QueryOutsideDomain) {
    const LimitDynamics lim(Mat::Identity(1, 1), Vec::Zero(1));
    BsdeParams bp;
    try {
        solve_feynman_kac(lim, Domain::unit_interval(), BoundaryFunction::constant_value(1.0), Driver(), {v1(1.5)},
                          bp);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::DomainInvalid);
    }
}

TEST(FeynmanKac, CensoringIsReported) {
    const LimitDynamics lim(Mat::Identity(1, 1), Vec::Zero(1));
    BsdeParams bp;
    bp.n_paths = 500;
    bp.scheme = bridge_scheme(1e-3);
    bp.scheme.t_max = 0.01;
    try {
        solve_feynman_kac(lim, Domain::unit_interval(), BoundaryFunction::constant_value(1.0), Driver(), {v1(0.5)},
                          bp);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::Censored);
    }
}

TEST(FeynmanKac, ComparisonUnderCommonRandomNumbers) {
    const LimitDynamics lim(Mat::Identity(1, 1), Vec::Zero(1));
    BsdeParams bp;
    bp.n_paths = 1000;
    bp.scheme = bridge_scheme(2e-3);
    const auto G = Domain::unit_interval();
    const auto lo = solve_feynman_kac(lim, G, BoundaryFunction::constant_value(0.0), Driver::constant_source(0.5),
                                      kQuery, bp);
    const auto hi = solve_feynman_kac(lim, G, BoundaryFunction::constant_value(0.1), Driver::constant_source(1.0),
                                      kQuery, bp);
    for (std::size_t q = 0; q < kQuery.size(); ++q) EXPECT_LE(lo.values[q], hi.values[q]);
}

TEST(FeynmanKac, OscillatingModelMatchesFiniteDifferences) {
    const PeriodicModel m(1, DiffusionForm::Diffusion, {ScalarField(2.0, {FourierTerm{{1, 0, 0}, 0.0, 1.0}})},
                          {ScalarField(0.0, {FourierTerm{{1, 0, 0}, kPi, 0.0}})}, {ScalarField()});
    const double eps = 0.25;
    const DirichletProblem prob(Domain::unit_interval(), BoundaryFunction::constant_value(0.0),
                                Driver::constant_source(1.0), -1.0);
    const auto fd = solve_oscillating(m, prob, eps, 4096);
    BsdeParams bp;
    bp.n_paths = 2000;
    bp.scheme = bridge_scheme(slow_step(2e-3, eps, 1e-3));
    const std::vector<Vec> pts = {v1(0.3), v1(0.5)};
    const auto est = solve_feynman_kac(SlowDynamics(m, eps), prob.domain(), prob.g(), prob.driver(), pts, bp);
    for (std::size_t q = 0; q < pts.size(); ++q)
        EXPECT_NEAR(est.values[q], fd(pts[q]), 4.0 * est.se[q] + 3e-3) << "x = " << pts[q][0];
}

TEST(Picard, CoshClosedForm) {
    const auto model = PeriodicModel::constant(1);
    const Driver f = Driver::linear_reaction(1.0);
    const LimitDynamics lim(Mat::Identity(1, 1), Vec::Zero(1));
    BsdeParams bp;
    bp.n_paths = 4000;
    bp.n_final_paths = 4000;
    bp.scheme = bridge_scheme(1e-3);
    const auto est = solve_bsde_picard(lim, Domain::unit_interval(), BoundaryFunction::constant_value(1.0),
                                       PrelimitDriver{&model, &f}, kQuery, bp);
    for (std::size_t q = 0; q < kQuery.size(); ++q) {
        const double x = kQuery[q][0];
        EXPECT_NEAR(est.values[q], oracle::cosh_solution(x), 4.0 * est.se[q] + 3e-3) << "x = " << x;
    }
    EXPECT_GE(est.iterations_used, 1);
    EXPECT_LE(est.iterations_used, bp.n_picard);
    EXPECT_EQ(est.contraction_log.size(), static_cast<std::size_t>(est.iterations_used));
}

TEST(Picard, GradientDriverMatchesFiniteDifferences) {
    const auto model = PeriodicModel::constant(1);
    DriverSpec spec;
    spec.source_constant = 1.0;
    spec.reaction_linear = 1.0;
    spec.reaction_sine = 0.3;
    spec.gradient_amplitude = 0.5;
    spec.gradient_direction = v1(1.0);
    const Driver f(spec);
    const auto G = Domain::unit_interval();
    const BoundaryFunction g(0.0, v1(1.0), 0.0);
    const auto fd = solve_constant(Mat::Identity(1, 1), Vec::Zero(1), f, G, g, 512);
    const LimitDynamics lim(Mat::Identity(1, 1), Vec::Zero(1));
    BsdeParams bp;
    bp.n_paths = 4000;
    bp.n_final_paths = 4000;
    bp.scheme = bridge_scheme(1e-3);
    const auto est = solve_bsde_picard(lim, G, g, PrelimitDriver{&model, &f}, kQuery, bp);
    for (std::size_t q = 0; q < kQuery.size(); ++q)
        EXPECT_NEAR(est.values[q], fd(kQuery[q]), 4.0 * est.se[q] + 5e-3) << "x = " << kQuery[q][0];
    EXPECT_GT(est.contraction_log.front(), est.contraction_log.back());
}

TEST(Picard, ReportsNoContraction) {
    const auto model = PeriodicModel::constant(1);
    DriverSpec spec;
    spec.reaction_linear = -40.0;
    const Driver f(spec);
    const LimitDynamics lim(Mat::Identity(1, 1), Vec::Zero(1));
    BsdeParams bp;
    bp.n_paths = 500;
    bp.n_picard = 10;
    bp.scheme = bridge_scheme(2e-3);
    try {
        solve_bsde_picard(lim, Domain::unit_interval(), BoundaryFunction::constant_value(1.0),
                          PrelimitDriver{&model, &f}, {v1(0.5)}, bp);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::NoContraction);
    }
}

TEST(ExitExponential, ZeroLambdaIsExactlyOne) {
    const LimitDynamics lim(Mat::Identity(1, 1), Vec::Zero(1));
    const auto r = estimate_exit_exponential(lim, Domain::unit_interval(), 0.0, v1(0.5), 100, bridge_scheme(1e-3));
    EXPECT_EQ(r.estimate.value, 1.0);
    EXPECT_EQ(r.estimate.se, 0.0);
}

TEST(ExitExponential, MatchesClosedForm) {
    const LimitDynamics lim(Mat::Identity(1, 1), Vec::Zero(1));
    const auto r = estimate_exit_exponential(lim, Domain::unit_interval(), 1.0, v1(0.5), 20000, bridge_scheme(2.5e-4));
    const double ref = oracle::exit_exponential(0.5, 1.0);
    EXPECT_NEAR(ref, 1.31536613853833, 1e-12);
    EXPECT_NEAR(r.estimate.value, ref, std::max(4.0 * r.estimate.se, 2e-3));
    EXPECT_GT(r.tau_p99, 0.0);
    EXPECT_EQ(r.censored_fraction, 0.0);
}

TEST(ValueCsv, Header) {
    ValueEstimate v;
    v.points = {v1(0.5)};
    v.values = {1.0};
    v.se = {0.1};
    v.iterations_used = 2;
    std::ostringstream os;
    write_value_csv(os, v);
    EXPECT_EQ(os.str(), "x_1,value,se,iterations\n0.5,1,0.10000000000000001,2\n");
}
