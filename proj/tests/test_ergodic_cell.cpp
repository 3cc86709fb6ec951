#include "oracles.hpp"

#include "phom/ergodic_cell.hpp"
#include "phom/torus_dynamics.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace phom;

namespace {

Vec v1(double x) { return Vec::Constant(1, x); }

ScalarField sine(double amp, double constant = 0.0) {
    return ScalarField(constant, {FourierTerm{{1, 0, 0}, 0.0, amp}});
}
ScalarField cosine(double amp, double constant = 0.0) {
    return ScalarField(constant, {FourierTerm{{1, 0, 0}, amp, 0.0}});
}

/// a = 2 + sin 2 pi x, b = c = 0.
PeriodicModel harmonic_model() {
    return PeriodicModel(1, DiffusionForm::Diffusion, {sine(1.0, 2.0)}, {ScalarField()}, {ScalarField()});
}

/// a = 2, b = sin 2 pi x.
PeriodicModel sine_drift_model() {
    return PeriodicModel(1, DiffusionForm::Sigma, {ScalarField(std::sqrt(2.0))}, {sine(1.0)}, {ScalarField()});
}

/// a = 2 + cos 2 pi x (even), b = sin 2 pi x (odd), c = 0.5 + 0.2 cos 2 pi x.
/// The drift is centered by reflection symmetry and the measure is not uniform.
PeriodicModel asymmetric_model() {
    return PeriodicModel(1, DiffusionForm::Diffusion, {cosine(1.0, 2.0)}, {sine(1.0)}, {cosine(0.2, 0.5)});
}

oracle::Cell1d asymmetric_oracle() {
    return oracle::cell_1d([](double x) { return 2.0 + std::cos(kTwoPi * x); },
                           [](double x) { return std::sin(kTwoPi * x); },
                           [](double x) { return 0.5 + 0.2 * std::cos(kTwoPi * x); });
}

MeasureParams grid_params(int N) {
    MeasureParams p;
    p.N = N;
    return p;
}

}  // namespace

TEST(InvariantMeasure, ConstantModelIsUniform) {
    const auto m = estimate_invariant_measure(PeriodicModel::constant(2), 0.0, MeasureBackend::StationaryGrid,
                                              grid_params(16));
    double sum = 0.0;
    for (double w : m.weights) {
        EXPECT_NEAR(w, 1.0 / 256.0, 1e-14);
        sum += w;
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
}

TEST(InvariantMeasure, HarmonicDensityAtQuarter) {
    // N = 126 puts a cell centre at x = 0.25.
    const auto m = estimate_invariant_measure(harmonic_model(), 0.0, MeasureBackend::StationaryGrid, grid_params(126));
    const std::size_t c = m.grid.locate(v1(0.25));
    EXPECT_NEAR(m.grid.center(c)[0], 0.25, 1e-15);
    EXPECT_NEAR(m.weights[c] * 126.0, std::sqrt(3.0) / 3.0, 1e-3);
}

TEST(InvariantMeasure, MatchesQuadratureOracle) {
    const auto o = asymmetric_oracle();
    double prev = 0.0;
    for (int N : {32, 64, 128}) {
        const auto m = estimate_invariant_measure(asymmetric_model(), 0.0, MeasureBackend::StationaryGrid, grid_params(N));
        double err = 0.0;
        for (std::size_t c = 0; c < m.grid.size(); ++c)
            err = std::max(err, std::abs(m.weights[c] * N - o.at(o.m, m.grid.center(c)[0])));
        if (prev > 0.0) {
            EXPECT_GT(prev / err, 3.0);
        }
        prev = err;
    }
    EXPECT_LT(prev, 1e-3);
}

TEST(InvariantMeasure, BackendsAgree) {
    const auto model = sine_drift_model();
    MeasureParams p = grid_params(8);
    const auto grid = estimate_invariant_measure(model, 0.0, MeasureBackend::StationaryGrid, MeasureParams{256, {}});
    const auto fine = coarsen(grid, 32);
    p.mc.n_paths = 2000;
    p.mc.h = 1e-3;
    p.mc.t_burn = 0.3;
    p.mc.t_avg = 1.0;
    p.mc.seed = 5;
    const auto mc = estimate_invariant_measure(model, 0.0, MeasureBackend::OccupationMc, p);
    double sum = 0.0;
    for (std::size_t c = 0; c < mc.weights.size(); ++c) {
        EXPECT_NEAR(mc.weights[c], fine.weights[c], 3.0 * mc.se[c] + 1e-4) << "cell " << c;
        EXPECT_GE(mc.weights[c], 0.0);
        sum += mc.weights[c];
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
}

TEST(InvariantMeasure, DegenerateWithoutDriftIsSingular) {
    const PeriodicModel m(1, DiffusionForm::Sigma, {ScalarField(1.0, {}, SmoothCutoff{0, 0.3, 0.6, 0.1})},
                          {ScalarField()}, {ScalarField()});
    try {
        estimate_invariant_measure(m, 0.0, MeasureBackend::StationaryGrid, grid_params(64));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::SingularStationary);
        EXPECT_NE(std::string(e.what()).find("singular values"), std::string::npos);
    }
}

TEST(ErgodicAverage, ConstantFunction) {
    const auto g = GridFunction::sample(TorusGrid{1, 32}, [](const Vec&) { return 1.0; });
    ErgodicParams p;
    p.n_paths = 50;
    const auto e = ergodic_average(sine_drift_model(), g, 0.0, 1.0, p);
    EXPECT_DOUBLE_EQ(e.value, 1.0);
    EXPECT_DOUBLE_EQ(e.se, 0.0);
}

TEST(ErgodicAverage, OddFunctionUnderUniformMeasure) {
    const auto g = GridFunction::sample(TorusGrid{1, 256}, [](const Vec& x) { return std::sin(kTwoPi * x[0]); });
    ErgodicParams p;
    p.n_paths = 400;
    p.h = 1e-3;
    const auto e = ergodic_average(PeriodicModel::constant(1), g, 0.0, 2.0, p);
    EXPECT_NEAR(e.value, 0.0, 3.0 * e.se);
}

TEST(ErgodicAverage, HarmonicMean) {
    const auto g = GridFunction::sample(TorusGrid{1, 1024}, [](const Vec& x) { return 2.0 + std::sin(kTwoPi * x[0]); });
    ErgodicParams p;
    p.n_paths = 400;
    p.h = 1e-3;
    p.seed = 3;
    const auto e = ergodic_average(harmonic_model(), g, 0.0, 4.0, p);
    // Allow for the piecewise-constant representation of a (O(1/N)).
    EXPECT_NEAR(e.value, std::sqrt(3.0), 3.0 * e.se + 2e-3);
}

TEST(ErgodicAverage, SlowClockScaling) {
    const auto g = GridFunction::sample(TorusGrid{1, 1024}, [](const Vec& x) { return 2.0 + std::sin(kTwoPi * x[0]); });
    ErgodicParams p;
    p.n_paths = 200;
    p.h = 1e-3;
    const auto e = ergodic_average(harmonic_model(), g, 0.5, 1.0, p);
    EXPECT_NEAR(e.value, std::sqrt(3.0), 3.0 * e.se + 2e-3);
}

TEST(Mixing, HeatKernelMode) {
    const PeriodicModel m = PeriodicModel::constant(1, std::sqrt(2.0));
    const auto meas = estimate_invariant_measure(m, 0.0, MeasureBackend::StationaryGrid, grid_params(256));
    const auto probe = GridFunction::sample(meas.grid, [](const Vec& x) { return std::cos(kTwoPi * x[0]); });
    MixingParams p;
    p.n_paths = 4000;
    p.h = 2e-4;
    p.t_window = 0.12;
    p.sample_every = 25;
    p.x0 = v1(0.0);
    const auto est = estimate_mixing(m, probe, meas, p);
    ASSERT_TRUE(est.accepted) << est.status;
    EXPECT_GT(est.rho, 0.0);
    EXPECT_NEAR(est.rho, 4.0 * kPi * kPi, 0.1 * 4.0 * kPi * kPi);
}

TEST(Mixing, ZeroProbeRejected) {
    const PeriodicModel m = PeriodicModel::constant(1);
    const auto meas = estimate_invariant_measure(m, 0.0, MeasureBackend::StationaryGrid, grid_params(32));
    const auto probe = GridFunction::sample(meas.grid, [](const Vec&) { return 0.0; });
    const auto est = estimate_mixing(m, probe, meas, MixingParams{});
    EXPECT_FALSE(est.accepted);
    EXPECT_NE(est.status.find("FIT_REJECTED"), std::string::npos);
}

TEST(CellProblem, ZeroDriftGivesZeroCorrector) {
    const auto model = harmonic_model();
    const auto meas = estimate_invariant_measure(model, 0.0, MeasureBackend::StationaryGrid, grid_params(64));
    const auto cf = solve_cell_problem(model, meas, CellBackend::Grid, CellParams{});
    EXPECT_EQ(cf.bhat.cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ(cf.dbhat.cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ(cf.residual_norm, 0.0);
}

TEST(CellProblem, GridBackendSecondOrder) {
    const auto o = oracle::cell_1d([](double) { return 2.0; }, [](double x) { return std::sin(kTwoPi * x); },
                                   [](double) { return 0.0; });
    std::vector<double> errs;
    for (int N : {64, 128, 256}) {
        const auto model = sine_drift_model();
        const auto meas = estimate_invariant_measure(model, 0.0, MeasureBackend::StationaryGrid, grid_params(N));
        const auto cf = solve_cell_problem(model, meas, CellBackend::Grid, CellParams{});
        double err = 0.0, mean = 0.0;
        for (std::size_t c = 0; c < meas.grid.size(); ++c) {
            err = std::max(err, std::abs(cf.bhat(c, 0) - o.at(o.bhat, meas.grid.center(c)[0])));
            mean += meas.weights[c] * cf.bhat(c, 0);
        }
        EXPECT_LE(std::abs(mean), 1e-10);
        EXPECT_LE(cf.residual_norm, 1e-9);
        errs.push_back(err);
    }
    EXPECT_GE(std::log2(errs[0] / errs[1]), 1.8);
    EXPECT_GE(std::log2(errs[1] / errs[2]), 1.8);
}

TEST(CellProblem, EffectiveCoefficientsMatchOracle) {
    const auto o = asymmetric_oracle();
    const auto model = asymmetric_model();
    const auto meas = estimate_invariant_measure(model, 0.0, MeasureBackend::StationaryGrid, grid_params(256));
    const auto cf = solve_cell_problem(model, meas, CellBackend::Grid, CellParams{});
    const auto eff = effective_coefficients(model, meas, cf);
    EXPECT_NEAR(eff.A(0, 0), o.A, 2e-4 * o.A);
    EXPECT_NEAR(eff.C[0], o.C, 2e-4 * std::abs(o.C));
    EXPECT_TRUE(eff.spd);
}

TEST(CellProblem, FeynmanKacMatchesGrid) {
    const auto model = sine_drift_model();
    const auto meas = estimate_invariant_measure(model, 0.0, MeasureBackend::StationaryGrid, grid_params(16));
    const auto grid = solve_cell_problem(model, meas, CellBackend::Grid, CellParams{});
    const auto o = oracle::cell_1d([](double) { return 2.0; }, [](double x) { return std::sin(kTwoPi * x); },
                                   [](double) { return 0.0; });
    CellParams p;
    p.n_paths = 2000;
    p.h = 5e-4;
    p.tail_tol = 1e-4;
    MixingEstimate mix;
    mix.accepted = true;
    mix.rho = 4.0 * kPi * kPi;
    mix.c_pref = 1.0;
    p.mixing = mix;
    const auto fk = solve_cell_problem(model, meas, CellBackend::FeynmanKac, p);
    EXPECT_GT(fk.t_max, 0.0);
    for (std::size_t c = 0; c < meas.grid.size(); ++c) {
        const double exact = o.at(o.bhat, meas.grid.center(c)[0]);
        EXPECT_NEAR(fk.bhat(c, 0), exact, 3.0 * fk.se(c, 0) + 2e-4) << "node " << c;
        EXPECT_NEAR(fk.bhat(c, 0), grid.bhat(c, 0), 3.0 * fk.se(c, 0) + 2e-3) << "node " << c;
    }
}

TEST(CellProblem, CenteringViolated) {
    const PeriodicModel m(1, DiffusionForm::Sigma, {ScalarField(1.0)}, {ScalarField(1.0)}, {ScalarField()});
    const auto meas = estimate_invariant_measure(m, 0.0, MeasureBackend::StationaryGrid, grid_params(32));
    try {
        solve_cell_problem(m, meas, CellBackend::Grid, CellParams{});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::CenteringViolated);
    }
}

TEST(Effective, ConstantModel) {
    Vec c0(2);
    c0 << 0.3, -0.2;
    const auto model = PeriodicModel::constant(2, 1.0, c0);
    const auto meas = estimate_invariant_measure(model, 0.0, MeasureBackend::StationaryGrid, grid_params(8));
    const auto cf = solve_cell_problem(model, meas, CellBackend::Grid, CellParams{});
    const auto eff = effective_coefficients(model, meas, cf);
    EXPECT_LT((eff.A - Mat::Identity(2, 2)).cwiseAbs().maxCoeff(), 1e-13);
    EXPECT_LT((eff.C - c0).cwiseAbs().maxCoeff(), 1e-13);
    EXPECT_EQ(eff.A(0, 1), eff.A(1, 0));
}

TEST(Effective, HarmonicMean) {
    const auto model = harmonic_model();
    const auto meas = estimate_invariant_measure(model, 0.0, MeasureBackend::StationaryGrid, grid_params(256));
    const auto cf = solve_cell_problem(model, meas, CellBackend::Grid, CellParams{});
    const auto eff = effective_coefficients(model, meas, cf);
    EXPECT_NEAR(eff.A(0, 0), std::sqrt(3.0), 1e-4);
}

TEST(Effective, ScalingCovariance) {
    for (double kappa : {0.5, 2.0}) {
        const PeriodicModel m(1, DiffusionForm::Diffusion, {sine(kappa * kappa, 2.0 * kappa * kappa)}, {ScalarField()},
                              {ScalarField()});
        const auto meas = estimate_invariant_measure(m, 0.0, MeasureBackend::StationaryGrid, grid_params(128));
        const auto eff = effective_coefficients(m, meas, solve_cell_problem(m, meas, CellBackend::Grid, CellParams{}));
        const auto base_meas = estimate_invariant_measure(harmonic_model(), 0.0, MeasureBackend::StationaryGrid, grid_params(128));
        const auto base = effective_coefficients(harmonic_model(), base_meas,
                                                 solve_cell_problem(harmonic_model(), base_meas, CellBackend::Grid, CellParams{}));
        EXPECT_NEAR(eff.A(0, 0), kappa * kappa * base.A(0, 0), 1e-12);
    }
}

TEST(Effective, NotSpdIsAWarning) {
    const PeriodicModel m(1, DiffusionForm::Sigma, {ScalarField(0.0)}, {ScalarField()}, {ScalarField()});
    MeasureEstimate meas;
    meas.grid = TorusGrid{1, 8};
    meas.weights.assign(8, 1.0 / 8.0);
    CorrectorField cf;
    cf.grid = meas.grid;
    cf.bhat = Eigen::MatrixXd::Zero(8, 1);
    cf.dbhat = Eigen::MatrixXd::Zero(8, 1);
    const auto eff = effective_coefficients(m, meas, cf);
    EXPECT_FALSE(eff.spd);
    ASSERT_FALSE(eff.warnings.empty());
    EXPECT_NE(eff.warnings.front().find("NOT_SPD"), std::string::npos);
}

TEST(Fbar, FastIndependentDriverPassesThrough) {
    const auto model = harmonic_model();
    const auto meas = estimate_invariant_measure(model, 0.0, MeasureBackend::StationaryGrid, grid_params(64));
    const auto cf = solve_cell_problem(model, meas, CellBackend::Grid, CellParams{});
    const auto eff = effective_coefficients(model, meas, cf, Driver::linear_reaction(1.0));
    for (double y : {-2.0, 0.0, 0.7}) EXPECT_EQ(evaluate_fbar(eff, v1(0.3), y, v1(0.4)), -y);
}

TEST(Fbar, ZeroGradientIgnoresLambda) {
    const auto model = asymmetric_model();
    const auto meas = estimate_invariant_measure(model, 0.0, MeasureBackend::StationaryGrid, grid_params(128));
    const auto cf = solve_cell_problem(model, meas, CellBackend::Grid, CellParams{});
    DriverSpec s;
    s.source_fast = cosine(1.0);
    s.gradient_amplitude = 0.5;
    s.gradient_direction = v1(1.0);
    const auto eff = effective_coefficients(model, meas, cf, Driver(s));
    const auto o = asymmetric_oracle();
    double expected = 0.0;
    for (int i = 0; i < o.n; ++i) expected += o.m[i] * std::cos(kTwoPi * o.x[i]) / o.n;
    EXPECT_NEAR(evaluate_fbar(eff, v1(0.5), 0.0, v1(0.0)), expected, 1e-4);
}

TEST(Fbar, LinearGradientDriver) {
    const auto model = harmonic_model();
    const auto meas = estimate_invariant_measure(model, 0.0, MeasureBackend::StationaryGrid, grid_params(256));
    const auto cf = solve_cell_problem(model, meas, CellBackend::Grid, CellParams{});
    const Driver f([](const Vec&, const Vec&, double, const Vec& z) { return z[0]; }, -1.0, 1.0, false);
    const auto eff = effective_coefficients(model, meas, cf, f);
    // Lambda = sqrt(a) and mu ~ 1/a: int Lambda dmu = int a^{-1/2} / int a^{-1}.
    double s1 = 0.0, s2 = 0.0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
        const double a = 2.0 + std::sin(kTwoPi * (i + 0.5) / n);
        s1 += 1.0 / std::sqrt(a);
        s2 += 1.0 / a;
    }
    EXPECT_NEAR(evaluate_fbar(eff, v1(0.5), 0.0, v1(2.0)), 2.0 * s1 / s2, 1e-4);
}

TEST(CorrectedPath, QuadraticVariationMatchesLambda) {
    const auto model = asymmetric_model();
    const auto meas = estimate_invariant_measure(model, 0.0, MeasureBackend::StationaryGrid, grid_params(256));
    const auto cf = solve_cell_problem(model, meas, CellBackend::Grid, CellParams{});
    const double eps = 0.1;
    SchemeParams p;
    p.h = 1e-6;
    p.t_max = 0.05;
    p.seed = 8;
    const auto path = simulate_slow_path(model, v1(0.5), eps, Domain::unit_interval(), p);
    const auto hat = corrected_path(path, cf, eps);
    double qv = 0.0, integral = 0.0;
    for (std::size_t k = 0; k + 1 < hat.states.size(); ++k) {
        const double dx = hat.states[k + 1][0] - hat.states[k][0];
        qv += dx * dx;
        const Vec xi = wrap_torus(Vec(path.states[k] / eps));
        const double lam = (1.0 + cf.dbhat_at(xi)(0, 0)) * model.sigma_at(xi)(0, 0);
        integral += lam * lam * (hat.times[k + 1] - hat.times[k]);
    }
    EXPECT_NEAR(qv, integral, 0.05 * integral);
}

TEST(WeakConvergence, ExitTimeLawsMatch) {
    const auto model = asymmetric_model();
    const auto meas = estimate_invariant_measure(model, 0.0, MeasureBackend::StationaryGrid, grid_params(256));
    const auto cf = solve_cell_problem(model, meas, CellBackend::Grid, CellParams{});
    const auto eff = effective_coefficients(model, meas, cf);
    const auto G = Domain::unit_interval();
    SchemeParams p;
    p.t_max = 50.0;
    p.exit_rule = ExitRule::BrownianBridge;
    p.seed = 21;
    const double eps = 0.05;
    p.h = slow_step(2e-3, eps, 1e-3);
    const auto slow = exit_ensemble(SlowDynamics(model, eps), G, v1(0.5), p, 3000);
    p.h = 1e-4;
    p.stream_index = 1000000;
    const auto lim = exit_ensemble(LimitDynamics(eff), G, v1(0.5), p, 3000);
    std::vector<double> a, b;
    for (const auto& o : slow) a.push_back(o.tau);
    for (const auto& o : lim) b.push_back(o.tau);
    const auto ks = ks_two_sample(a, b, 1e-3);
    EXPECT_FALSE(ks.reject) << "KS statistic " << ks.statistic << " critical " << ks.critical;
}
