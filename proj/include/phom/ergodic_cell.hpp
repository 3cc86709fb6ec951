#pragma once

#include "phom/coefficients.hpp"
#include "phom/core.hpp"
#include "phom/grid_operator.hpp"
#include "phom/parallel.hpp"
#include "phom/rng.hpp"
#include "phom/stats.hpp"
#include "phom/torus_dynamics.hpp"

#include <Eigen/Dense>
#include <Eigen/SparseLU>

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace phom {

// ---------------------------------------------------------------------------
// Invariant measure
// ---------------------------------------------------------------------------

enum class MeasureBackend { OccupationMc, StationaryGrid };

inline std::string_view to_string(MeasureBackend b) {
    return b == MeasureBackend::OccupationMc ? "occupation-mc" : "stationary-grid";
}

struct MeasureEstimate {
    TorusGrid grid;
    std::vector<double> weights;
    MeasureBackend backend = MeasureBackend::StationaryGrid;
    /// Per-cell standard error (occupation-MC only; zeros otherwise).
    std::vector<double> se;
    /// Per-path occupation fractions, paths x cells (occupation-MC only).
    Eigen::MatrixXd path_weights;
    double eps = 0.0;
    std::size_t closed_classes = 1;

    /// Integral of a grid function; its standard error uses the per-path
    /// occupation fractions when available.
    McEstimate integrate(const std::vector<double>& values) const {
        McEstimate e;
        for (std::size_t c = 0; c < weights.size(); ++c) e.value += weights[c] * values[c];
        if (path_weights.size() > 0) {
            const Eigen::Map<const Eigen::VectorXd> v(values.data(), static_cast<Eigen::Index>(values.size()));
            const Eigen::VectorXd per_path = path_weights * v;
            std::vector<double> pp(per_path.data(), per_path.data() + per_path.size());
            const auto st = sample_stats(pp);
            e.se = st.se;
            e.n_paths = pp.size();
        }
        return e;
    }

    template <typename Fn>
    McEstimate integrate_fn(Fn&& f) const {
        std::vector<double> v(grid.size());
        for (std::size_t c = 0; c < v.size(); ++c) v[c] = f(grid.center(c));
        return integrate(v);
    }
};

struct OccupationParams {
    std::size_t n_paths = 10000;
    double h = 1e-4;
    double t_burn = 0.5;
    double t_avg = 0.5;
    std::uint64_t seed = 1;
    std::uint64_t stream_offset = 0;
};

struct MeasureParams {
    int N = 128;
    OccupationParams mc;
};

namespace detail {

inline std::vector<double> smallest_singular_values(const Eigen::SparseMatrix<double>& Q, std::size_t count) {
    if (Q.rows() > 1500) return {};
    const Eigen::MatrixXd dense(Q);
    Eigen::BDCSVD<Eigen::MatrixXd> svd(dense);
    const Eigen::VectorXd s = svd.singularValues();
    std::vector<double> out;
    for (std::size_t i = 0; i < count && i < static_cast<std::size_t>(s.size()); ++i)
        out.push_back(s[s.size() - 1 - static_cast<Eigen::Index>(i)]);
    return out;
}

inline void require_single_class(const TorusGenerator& gen, const char* what, ErrorCode code) {
    const std::size_t classes = closed_class_count(gen.Q, 1e-14 * gen.max_rate);
    if (classes == 1) return;
    std::string msg = std::string(what) + ": discrete stationary kernel has dimension " +
                      std::to_string(classes);
    const auto sv = smallest_singular_values(gen.Q, 2);
    if (sv.size() == 2)
        msg += " (smallest singular values " + std::to_string(sv[0]) + ", " + std::to_string(sv[1]) + ")";
    msg += "; refine the grid or add drift connectivity through degenerate regions";
    throw Error(code, msg);
}

/// Stationary vector m of Q (m^T Q = 0, sum m = 1).
inline std::vector<double> stationary_vector(const TorusGenerator& gen) {
    detail::require_single_class(gen, "stationary problem", ErrorCode::SingularStationary);
    const int n = static_cast<int>(gen.Q.rows());
    Eigen::SparseMatrix<double> M = gen.Q.transpose();
    // Replace equation 0 by the normalization.
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(static_cast<std::size_t>(M.nonZeros()) + n);
    for (int col = 0; col < M.outerSize(); ++col)
        for (Eigen::SparseMatrix<double>::InnerIterator it(M, col); it; ++it)
            if (it.row() != 0) trip.emplace_back(static_cast<int>(it.row()), static_cast<int>(it.col()), it.value());
    for (int j = 0; j < n; ++j) trip.emplace_back(0, j, 1.0);
    Eigen::SparseMatrix<double> S(n, n);
    S.setFromTriplets(trip.begin(), trip.end());
    S.makeCompressed();
    Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
    lu.compute(S);
    if (lu.info() != Eigen::Success)
        throw Error(ErrorCode::SingularStationary, "factorization of the stationary system failed");
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n);
    rhs[0] = 1.0;
    Eigen::VectorXd m = lu.solve(rhs);
    std::vector<double> w(n);
    double sum = 0.0;
    for (int i = 0; i < n; ++i) {
        w[i] = std::max(m[i], 0.0);
        sum += w[i];
    }
    for (double& v : w) v /= sum;
    return w;
}

}  // namespace detail

/// Discrete invariant measure of the torus process with drift b + eps c.
inline MeasureEstimate estimate_invariant_measure(const PeriodicModel& model, double eps, MeasureBackend backend,
                                                  const MeasureParams& params) {
    if (eps < 0.0) throw Error(ErrorCode::ConfigInvalid, "eps must be nonnegative");
    MeasureEstimate m;
    m.grid = TorusGrid{model.dim(), params.N};
    m.backend = backend;
    m.eps = eps;
    const std::size_t n = m.grid.size();
    if (backend == MeasureBackend::StationaryGrid) {
        if (model.dim() > 2)
            throw Error(ErrorCode::ConfigInvalid, "stationary-grid backend supports d <= 2");
        const TorusGenerator gen = build_torus_generator(model, eps, m.grid);
        m.weights = detail::stationary_vector(gen);
        m.se.assign(n, 0.0);
        return m;
    }

    const OccupationParams& mc = params.mc;
    if (!(mc.h > 0.0)) throw Error(ErrorCode::StepInvalid, "time step h must be positive");
    if (mc.n_paths < 2) throw Error(ErrorCode::ConfigInvalid, "occupation-MC needs at least two paths");
    const auto burn = static_cast<std::size_t>(std::llround(mc.t_burn / mc.h));
    const auto avg = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(mc.t_avg / mc.h)));
    Eigen::MatrixXd frac = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(mc.n_paths), static_cast<Eigen::Index>(n));
    FastDynamics dyn(model, eps);
    const int d = model.dim();
    const double sq = std::sqrt(mc.h);
    parallel_for(mc.n_paths, [&](std::size_t p) {
        const std::uint64_t stream = mc.stream_offset + p;
        RandomStream start(mc.seed, stream, Lane::Design);
        RandomStream noise(mc.seed, stream, Lane::Gaussian);
        Vec x(d), z(d);
        for (int i = 0; i < d; ++i) x[i] = start.uniform();
        StepInfo info;
        std::vector<double> counts(n, 0.0);
        for (std::size_t k = 0; k < burn + avg; ++k) {
            dyn.coefficients(x, info);
            for (int i = 0; i < d; ++i) z[i] = noise.normal();
            x = wrap_torus(Vec(x + info.drift * mc.h + info.sigma * z * sq));
            if (k >= burn) counts[m.grid.locate(x)] += 1.0;
        }
        for (std::size_t c = 0; c < n; ++c)
            frac(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(c)) = counts[c] / static_cast<double>(avg);
    });
    m.weights.assign(n, 0.0);
    m.se.assign(n, 0.0);
    const double P = static_cast<double>(mc.n_paths);
    for (std::size_t c = 0; c < n; ++c) {
        const auto col = frac.col(static_cast<Eigen::Index>(c));
        double sum = 0.0;
        for (Eigen::Index p = 0; p < col.size(); ++p) sum += col[p];
        const double mean = sum / P;
        double ss = 0.0;
        for (Eigen::Index p = 0; p < col.size(); ++p) ss += (col[p] - mean) * (col[p] - mean);
        m.weights[c] = mean;
        m.se[c] = std::sqrt(ss / (P - 1.0) / P);
    }
    // Fractions per path already sum to one; renormalize away rounding.
    double total = 0.0;
    for (double w : m.weights) total += w;
    for (double& w : m.weights) w /= total;
    m.path_weights = std::move(frac);
    return m;
}

/// Aggregates a measure on a grid of N cells per axis onto a coarser grid
/// N / factor (weights summed; standard errors are not propagated).
inline MeasureEstimate coarsen(const MeasureEstimate& fine, int factor) {
    if (factor < 1 || fine.grid.N % factor != 0)
        throw Error(ErrorCode::ConfigInvalid, "coarsening factor must divide N");
    MeasureEstimate c;
    c.grid = TorusGrid{fine.grid.dim, fine.grid.N / factor};
    c.backend = fine.backend;
    c.eps = fine.eps;
    c.weights.assign(c.grid.size(), 0.0);
    c.se.assign(c.grid.size(), 0.0);
    for (std::size_t p = 0; p < fine.grid.size(); ++p) c.weights[c.grid.locate(fine.grid.center(p))] += fine.weights[p];
    return c;
}

// ---------------------------------------------------------------------------
// Grid functions, ergodic averages, mixing
// ---------------------------------------------------------------------------

/// Piecewise-constant function on a torus grid.
struct GridFunction {
    TorusGrid grid;
    std::vector<double> values;

    double operator()(const Vec& x) const { return values[grid.locate(x)]; }

    template <typename Fn>
    static GridFunction sample(const TorusGrid& g, Fn&& f) {
        GridFunction gf{g, std::vector<double>(g.size())};
        for (std::size_t c = 0; c < gf.values.size(); ++c) gf.values[c] = f(g.center(c));
        return gf;
    }

    double sup_norm() const {
        double s = 0.0;
        for (double v : values) s = std::max(s, std::abs(v));
        return s;
    }
};

struct ErgodicParams {
    std::size_t n_paths = 1000;
    double h = 1e-3;
    Vec x0;  // empty: uniform random start per path
    std::uint64_t seed = 1;
    std::uint64_t stream_offset = 0;
};

/// (1/t) int_0^t f(Xbar_s) ds averaged over paths, where Xbar^eps_s is the
/// torus process run on the fast clock s / eps^2 (eps = 0: fast clock s).
inline McEstimate ergodic_average(const PeriodicModel& model, const GridFunction& f, double eps, double t,
                                  const ErgodicParams& params) {
    if (!(params.h > 0.0)) throw Error(ErrorCode::StepInvalid, "time step h must be positive");
    if (!(t > 0.0)) throw Error(ErrorCode::ConfigInvalid, "averaging horizon must be positive");
    const double horizon = eps > 0.0 ? t / (eps * eps) : t;
    const auto steps = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(horizon / params.h)));
    const double dt = horizon / static_cast<double>(steps);
    FastDynamics dyn(model, eps);
    const int d = model.dim();
    std::vector<double> per_path(params.n_paths);
    parallel_for(params.n_paths, [&](std::size_t p) {
        const std::uint64_t stream = params.stream_offset + p;
        RandomStream start(params.seed, stream, Lane::Design);
        RandomStream noise(params.seed, stream, Lane::Gaussian);
        Vec x(d), z(d);
        if (params.x0.size() == d) {
            x = wrap_torus(params.x0);
        } else {
            for (int i = 0; i < d; ++i) x[i] = start.uniform();
        }
        StepInfo info;
        const double sq = std::sqrt(dt);
        double acc = 0.0;
        for (std::size_t k = 0; k < steps; ++k) {
            acc += f(x);
            dyn.coefficients(x, info);
            for (int i = 0; i < d; ++i) z[i] = noise.normal();
            x = wrap_torus(Vec(x + info.drift * dt + info.sigma * z * sq));
        }
        per_path[p] = acc / static_cast<double>(steps);
    });
    const auto st = sample_stats(per_path);
    McEstimate e;
    e.value = st.mean;
    e.se = st.se;
    e.n_paths = params.n_paths;
    e.seed = params.seed;
    e.h = dt;
    return e;
}

struct MixingEstimate {
    double rho = 0.0;
    double c_pref = 0.0;
    bool accepted = false;
    std::string status;
    LineFit fit;
    std::vector<double> times;
    std::vector<double> deviations;
};

struct MixingParams {
    std::size_t n_paths = 4000;
    double h = 1e-3;
    double t_window = 1.0;
    /// Fit only while |deviation| exceeds this many standard errors.
    double snr_floor = 4.0;
    std::size_t sample_every = 5;
    Vec x0;  // empty: the cell maximizing |probe - mu(probe)|
    std::uint64_t seed = 1;
    std::uint64_t stream_offset = 0;
};

/// Fits log |E probe(X_t) - mu(probe)| = log(C ||probe||) - rho t for the
/// reference torus process (eps = 0) started at x0, weighting each sample by
/// its inverse delta-method variance.
inline MixingEstimate estimate_mixing(const PeriodicModel& model, const GridFunction& probe,
                                      const MeasureEstimate& measure, const MixingParams& params) {
    if (!(params.h > 0.0)) throw Error(ErrorCode::StepInvalid, "time step h must be positive");
    MixingEstimate est;
    const double target = measure.integrate(probe.values).value;
    const double norm = probe.sup_norm();
    if (norm == 0.0) {
        est.status = "FIT_REJECTED: probe vanishes identically";
        return est;
    }
    Vec x0 = params.x0;
    if (x0.size() != model.dim()) {
        std::size_t best = 0;
        double dev = -1.0;
        for (std::size_t c = 0; c < probe.values.size(); ++c)
            if (std::abs(probe.values[c] - target) > dev) {
                dev = std::abs(probe.values[c] - target);
                best = c;
            }
        x0 = probe.grid.center(best);
    }
    const int d = model.dim();
    const auto steps = static_cast<std::size_t>(std::llround(params.t_window / params.h));
    const std::size_t every = std::max<std::size_t>(1, params.sample_every);
    const std::size_t n_samples = steps / every + 1;
    Eigen::MatrixXd vals(static_cast<Eigen::Index>(params.n_paths), static_cast<Eigen::Index>(n_samples));
    FastDynamics dyn(model, 0.0);
    parallel_for(params.n_paths, [&](std::size_t p) {
        RandomStream noise(params.seed, params.stream_offset + p, Lane::Gaussian);
        Vec x = wrap_torus(x0), z(d);
        StepInfo info;
        const double sq = std::sqrt(params.h);
        const auto row = static_cast<Eigen::Index>(p);
        vals(row, 0) = probe(x);
        for (std::size_t k = 1; k <= steps; ++k) {
            dyn.coefficients(x, info);
            for (int i = 0; i < d; ++i) z[i] = noise.normal();
            x = wrap_torus(Vec(x + info.drift * params.h + info.sigma * z * sq));
            if (k % every == 0) vals(row, static_cast<Eigen::Index>(k / every)) = probe(x);
        }
    });
    std::vector<double> ts, logs, weights;
    for (std::size_t s = 0; s < n_samples; ++s) {
        const auto col = vals.col(static_cast<Eigen::Index>(s));
        std::vector<double> v(col.data(), col.data() + col.size());
        const auto st = sample_stats(v);
        const double dev = st.mean - target;
        const double t = static_cast<double>(s * every) * params.h;
        est.times.push_back(t);
        est.deviations.push_back(dev);
        if (std::abs(dev) <= params.snr_floor * st.se || dev == 0.0) break;
        ts.push_back(t);
        logs.push_back(std::log(std::abs(dev)));
        // var(log|dev|) ~ (se / dev)^2; the exact start has se = 0.
        const double rel = std::max(st.se / std::abs(dev), 1e-3);
        weights.push_back(1.0 / (rel * rel));
    }
    if (ts.size() < 3) {
        est.status = "FIT_REJECTED: fewer than three resolvable samples";
        return est;
    }
    est.fit = fit_line(ts, logs, weights);
    est.rho = -est.fit.slope;
    est.c_pref = std::exp(est.fit.intercept) / norm;
    est.accepted = est.fit.r_squared >= 0.9 && est.rho > 0.0;
    est.status = est.accepted ? "accepted"
                              : "FIT_REJECTED: R^2 = " + std::to_string(est.fit.r_squared) +
                                    ", rho = " + std::to_string(est.rho);
    return est;
}

// ---------------------------------------------------------------------------
// Cell problem
// ---------------------------------------------------------------------------

enum class CellBackend { Grid, FeynmanKac };

inline std::string_view to_string(CellBackend b) { return b == CellBackend::Grid ? "grid" : "feynman-kac"; }

/// Corrector bhat solving L bhat + b = 0 on the torus, with its Jacobian.
struct CorrectorField {
    TorusGrid grid;
    int dim = 1;
    CellBackend backend = CellBackend::Grid;
    /// cells x d
    Eigen::MatrixXd bhat;
    /// cells x (d*d), row-major d_j bhat_i at column i*d + j
    Eigen::MatrixXd dbhat;
    /// cells x d (Feynman-Kac only)
    Eigen::MatrixXd se;
    /// || L_h bhat + b ||_inf with the raw drift
    double residual_norm = 0.0;
    /// || L_h bhat + P b ||_inf of the linear system actually solved
    double solve_residual = 0.0;
    /// discrete centering defect m_h . b per component
    std::vector<double> centering_defect;
    double t_max = 0.0;

    Vec bhat_cell(std::size_t c) const { return bhat.row(static_cast<Eigen::Index>(c)).transpose(); }

    Mat dbhat_cell(std::size_t c) const {
        Mat m(dim, dim);
        for (int i = 0; i < dim; ++i)
            for (int j = 0; j < dim; ++j) m(i, j) = dbhat(static_cast<Eigen::Index>(c), i * dim + j);
        return m;
    }

    /// Periodic multilinear interpolation of bhat between cell centres.
    Vec bhat_at(const Vec& x) const { return interpolate(bhat, x); }

    Mat dbhat_at(const Vec& x) const {
        const Vec flat = interpolate(dbhat, x);
        Mat m(dim, dim);
        for (int i = 0; i < dim; ++i)
            for (int j = 0; j < dim; ++j) m(i, j) = flat[i * dim + j];
        return m;
    }

private:
    Eigen::VectorXd interpolate_dyn(const Eigen::MatrixXd& field, const Vec& x_raw) const {
        const Vec x = wrap_torus(x_raw);
        std::array<int, kMaxDim> base{0, 0, 0};
        std::array<double, kMaxDim> frac{0, 0, 0};
        for (int i = 0; i < dim; ++i) {
            const double s = x[i] * grid.N - 0.5;
            const double f = std::floor(s);
            base[i] = static_cast<int>(f);
            frac[i] = s - f;
        }
        Eigen::VectorXd out = Eigen::VectorXd::Zero(field.cols());
        for (int corner = 0; corner < (1 << dim); ++corner) {
            double w = 1.0;
            std::array<int, kMaxDim> idx = base;
            for (int i = 0; i < dim; ++i) {
                const bool up = (corner >> i) & 1;
                idx[i] += up ? 1 : 0;
                w *= up ? frac[i] : 1.0 - frac[i];
            }
            if (w == 0.0) continue;
            out += w * field.row(static_cast<Eigen::Index>(grid.flat_index(idx))).transpose();
        }
        return out;
    }

public:
    Vec interpolate(const Eigen::MatrixXd& field, const Vec& x) const {
        const Eigen::VectorXd v = interpolate_dyn(field, x);
        if (v.size() <= kMaxDim) return Vec(v);
        return Vec(v.head(kMaxDim));
    }
};

struct CellParams {
    double centering_tol = 1e-3;
    /// Feynman-Kac backend
    std::size_t n_paths = 10000;
    double h = 2e-4;
    double tail_tol = 1e-3;
    /// Multiplies the fitted prefactor when choosing the truncation horizon.
    double safety_factor = 10.0;
    std::optional<MixingEstimate> mixing;
    MixingParams mixing_params;
    std::uint64_t seed = 1;
    std::uint64_t stream_offset = 0;
};

namespace detail {

inline Eigen::MatrixXd drift_matrix(const PeriodicModel& model, const TorusGrid& grid) {
    Eigen::MatrixXd b(static_cast<Eigen::Index>(grid.size()), model.dim());
    for (std::size_t c = 0; c < grid.size(); ++c) {
        const Vec v = model.drift_b(grid.center(c));
        for (int i = 0; i < model.dim(); ++i) b(static_cast<Eigen::Index>(c), i) = v[i];
    }
    return b;
}

/// Centred differences of each column on the periodic grid.
inline Eigen::MatrixXd periodic_jacobian(const Eigen::MatrixXd& f, const TorusGrid& grid) {
    const int d = grid.dim;
    const auto comps = f.cols();
    Eigen::MatrixXd J(f.rows(), comps * d);
    const double inv2h = grid.N / 2.0;
    for (std::size_t c = 0; c < grid.size(); ++c) {
        const auto m = grid.multi_index(c);
        for (int j = 0; j < d; ++j) {
            auto mp = m, mm = m;
            mp[j] += 1;
            mm[j] -= 1;
            const auto ip = static_cast<Eigen::Index>(grid.flat_index(mp));
            const auto im = static_cast<Eigen::Index>(grid.flat_index(mm));
            for (Eigen::Index i = 0; i < comps; ++i)
                J(static_cast<Eigen::Index>(c), i * d + j) = (f(ip, i) - f(im, i)) * inv2h;
        }
    }
    return J;
}

inline void recenter(Eigen::MatrixXd& bhat, const std::vector<double>& weights) {
    for (Eigen::Index i = 0; i < bhat.cols(); ++i) {
        double mean = 0.0;
        for (std::size_t c = 0; c < weights.size(); ++c) mean += weights[c] * bhat(static_cast<Eigen::Index>(c), i);
        bhat.col(i).array() -= mean;
    }
}

inline double generator_residual(const Eigen::SparseMatrix<double>& Q, const Eigen::MatrixXd& bhat,
                                 const Eigen::MatrixXd& b) {
    double r = 0.0;
    for (Eigen::Index i = 0; i < b.cols(); ++i) {
        const Eigen::VectorXd res = Q * bhat.col(i) + b.col(i);
        r = std::max(r, res.cwiseAbs().maxCoeff());
    }
    return r;
}

}  // namespace detail

/// Centering residual |int b_i dmu| per component.
inline std::vector<double> centering_residual(const PeriodicModel& model, const MeasureEstimate& measure) {
    std::vector<double> r(model.dim(), 0.0);
    for (std::size_t c = 0; c < measure.grid.size(); ++c) {
        const Vec b = model.drift_b(measure.grid.center(c));
        for (int i = 0; i < model.dim(); ++i) r[i] += measure.weights[c] * b[i];
    }
    for (double& v : r) v = std::abs(v);
    return r;
}

/// Truncation horizon T with 10 C ||b|| e^{-rho T} / rho < tail_tol.
inline double corrector_horizon(const MixingEstimate& mix, double b_sup, const CellParams& params) {
    if (!mix.accepted || mix.rho <= 0.0)
        throw Error(ErrorCode::ConfigInvalid, "corrector horizon needs an accepted mixing estimate (" + mix.status + ")");
    const double num = params.safety_factor * std::max(mix.c_pref, 1.0) * b_sup;
    const double t = std::log(std::max(num / (mix.rho * params.tail_tol), 1.0)) / mix.rho;
    return std::max(t, params.h);
}

/// Solves the cell problem L bhat_i + b_i = 0 for every component.
inline CorrectorField solve_cell_problem(const PeriodicModel& model, const MeasureEstimate& measure, CellBackend backend,
                                         const CellParams& params) {
    const auto centering = centering_residual(model, measure);
    for (std::size_t i = 0; i < centering.size(); ++i)
        if (centering[i] > params.centering_tol)
            throw Error(ErrorCode::CenteringViolated,
                        "|int b_" + std::to_string(i + 1) + " dmu| = " + std::to_string(centering[i]) +
                            " exceeds tolerance " + std::to_string(params.centering_tol));

    const TorusGrid& grid = measure.grid;
    const int d = model.dim();
    const auto n = static_cast<Eigen::Index>(grid.size());
    CorrectorField cf;
    cf.grid = grid;
    cf.dim = d;
    cf.backend = backend;
    const Eigen::MatrixXd b = detail::drift_matrix(model, grid);
    cf.bhat = Eigen::MatrixXd::Zero(n, d);
    cf.se = Eigen::MatrixXd::Zero(n, d);
    cf.centering_defect.assign(d, 0.0);

    const bool b_zero = b.cwiseAbs().maxCoeff() == 0.0;

    if (backend == CellBackend::Grid) {
        if (d > 2) throw Error(ErrorCode::ConfigInvalid, "grid cell backend supports d <= 2");
        const TorusGenerator gen = build_torus_generator(model, 0.0, grid);
        if (!b_zero) {
            detail::require_single_class(gen, "cell problem", ErrorCode::SingularSystem);
            const std::vector<double> mh = detail::stationary_vector(gen);
            Eigen::Index pin = 0;
            for (Eigen::Index c = 0; c < n; ++c)
                if (mh[c] > mh[pin]) pin = c;
            // Row `pin` of Q is replaced by the centering constraint m_h . x = 0.
            std::vector<Eigen::Triplet<double>> trip;
            for (int col = 0; col < gen.Q.outerSize(); ++col)
                for (Eigen::SparseMatrix<double>::InnerIterator it(gen.Q, col); it; ++it)
                    if (it.row() != pin) trip.emplace_back(static_cast<int>(it.row()), static_cast<int>(it.col()), it.value());
            for (Eigen::Index c = 0; c < n; ++c) trip.emplace_back(static_cast<int>(pin), static_cast<int>(c), mh[c]);
            Eigen::SparseMatrix<double> S(n, n);
            S.setFromTriplets(trip.begin(), trip.end());
            S.makeCompressed();
            Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
            lu.compute(S);
            if (lu.info() != Eigen::Success)
                throw Error(ErrorCode::SingularSystem, "cell system factorization failed; refine the grid");
            Eigen::MatrixXd projected(n, d);
            for (int i = 0; i < d; ++i) {
                double mb = 0.0;
                for (Eigen::Index c = 0; c < n; ++c) mb += mh[c] * b(c, i);
                cf.centering_defect[i] = mb;
                Eigen::VectorXd rhs = -(b.col(i).array() - mb).matrix();
                projected.col(i) = -rhs;
                rhs[pin] = 0.0;
                cf.bhat.col(i) = lu.solve(rhs);
            }
            cf.solve_residual = detail::generator_residual(gen.Q, cf.bhat, projected);
        }
        detail::recenter(cf.bhat, measure.weights);
        cf.residual_norm = detail::generator_residual(gen.Q, cf.bhat, b);
        cf.dbhat = detail::periodic_jacobian(cf.bhat, grid);
        return cf;
    }

    // Feynman-Kac: bhat(x) = int_0^T E_x b(X_t) dt.
    if (!b_zero) {
        MixingEstimate mix;
        if (params.mixing) {
            mix = *params.mixing;
        } else {
            // Slowest-decaying direction is unknown; probe with the first
            // nonzero drift component.
            int comp = 0;
            for (int i = 0; i < d; ++i)
                if (b.col(i).cwiseAbs().maxCoeff() > 0.0) { comp = i; break; }
            GridFunction probe{grid, std::vector<double>(b.col(comp).data(), b.col(comp).data() + n)};
            mix = estimate_mixing(model, probe, measure, params.mixing_params);
        }
        cf.t_max = corrector_horizon(mix, b.cwiseAbs().maxCoeff(), params);
        const auto steps = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(cf.t_max / params.h)));
        const double dt = cf.t_max / static_cast<double>(steps);
        const std::size_t P = params.n_paths;
        FastDynamics dyn(model, 0.0);
        Eigen::MatrixXd mean(n, d), se(n, d);
        for (Eigen::Index c = 0; c < n; ++c) {
            const Vec x0 = grid.center(static_cast<std::size_t>(c));
            Eigen::MatrixXd per_path(static_cast<Eigen::Index>(P), d);
            parallel_for(P, [&](std::size_t p) {
                const std::uint64_t stream = params.stream_offset + static_cast<std::uint64_t>(c) * P + p;
                RandomStream noise(params.seed, stream, Lane::Gaussian);
                Vec x = x0, z(d), acc = Vec::Zero(d);
                StepInfo info;
                const double sq = std::sqrt(dt);
                for (std::size_t k = 0; k < steps; ++k) {
                    dyn.coefficients(x, info);
                    acc += model.drift_b(x) * dt;
                    for (int i = 0; i < d; ++i) z[i] = noise.normal();
                    x = wrap_torus(Vec(x + info.drift * dt + info.sigma * z * sq));
                }
                for (int i = 0; i < d; ++i) per_path(static_cast<Eigen::Index>(p), i) = acc[i];
            });
            for (int i = 0; i < d; ++i) {
                const auto col = per_path.col(i);
                std::vector<double> v(col.data(), col.data() + col.size());
                const auto st = sample_stats(v);
                mean(c, i) = st.mean;
                se(c, i) = st.se;
            }
        }
        cf.bhat = mean;
        cf.se = se;
    }
    detail::recenter(cf.bhat, measure.weights);
    cf.dbhat = detail::periodic_jacobian(cf.bhat, grid);
    if (d <= 2) {
        const TorusGenerator gen = build_torus_generator(model, 0.0, grid);
        cf.residual_norm = detail::generator_residual(gen.Q, cf.bhat, b);
    }
    return cf;
}

// ---------------------------------------------------------------------------
// Effective model
// ---------------------------------------------------------------------------

/// Averaged driver fbar(x, y, z) = int f(xi, x, y, Lambda(xi)^T z) mu(dxi),
/// realized as quadrature over the measure cells. z is the gradient of the
/// homogenized solution.
class AveragedDriver {
public:
    AveragedDriver() = default;

    AveragedDriver(const Driver& f, const MeasureEstimate& measure, const std::vector<Mat>& lambda)
        : f_(f) {
        for (std::size_t c = 0; c < measure.weights.size(); ++c) {
            if (measure.weights[c] <= 0.0) continue;
            weights_.push_back(measure.weights[c]);
            points_.push_back(measure.grid.center(c));
            lambda_t_.push_back(lambda[c].transpose());
        }
        collapse_ = f_.fast_independent() && f_.z_independent();
    }

    double operator()(const Vec& x, double y, const Vec& z) const {
        if (collapse_) return f_(points_.front(), x, y, z);
        double s = 0.0;
        for (std::size_t c = 0; c < weights_.size(); ++c)
            s += weights_[c] * f_(points_[c], x, y, Vec(lambda_t_[c] * z));
        return s;
    }

    double dy(const Vec& x, double y, const Vec& z) const {
        if (collapse_) return f_.dy(points_.front(), x, y, z);
        double s = 0.0;
        for (std::size_t c = 0; c < weights_.size(); ++c)
            s += weights_[c] * f_.dy(points_[c], x, y, Vec(lambda_t_[c] * z));
        return s;
    }

    Vec dz(const Vec& x, double y, const Vec& z) const {
        Vec s = Vec::Zero(z.size());
        if (f_.z_independent()) return s;
        for (std::size_t c = 0; c < weights_.size(); ++c)
            s += weights_[c] * (lambda_t_[c].transpose() * f_.dz(points_[c], x, y, Vec(lambda_t_[c] * z)));
        return s;
    }

    const Driver& driver() const { return f_; }
    double mu() const { return f_.mu(); }
    bool z_independent() const { return f_.z_independent(); }

private:
    Driver f_;
    std::vector<double> weights_;
    std::vector<Vec> points_;
    std::vector<Mat> lambda_t_;
    bool collapse_ = false;
};

struct EffectiveModel {
    Mat A;
    Vec C;
    Vec eigenvalues;
    bool spd = false;
    double spd_tol = 1e-8;
    /// Elementwise standard error of A (occupation-MC measure only).
    Mat A_se;
    AveragedDriver fbar;
    std::vector<std::string> warnings;
    std::string measure_backend;
    std::string cell_backend;
    /// Lambda(x) = (I + d bhat)(x) sigma(x) per measure cell.
    std::vector<Mat> lambda;
};

/// A = int Lambda Lambda^T dmu, C = int (I + d bhat) c dmu, fbar from f.
inline EffectiveModel effective_coefficients(const PeriodicModel& model, const MeasureEstimate& measure,
                                             const CorrectorField& corrector, const Driver& driver = Driver()) {
    if (!(measure.grid == corrector.grid))
        throw Error(ErrorCode::ConfigInvalid, "measure and corrector must share a grid");
    const int d = model.dim();
    const std::size_t n = measure.grid.size();
    EffectiveModel e;
    e.A = Mat::Zero(d, d);
    e.C = Vec::Zero(d);
    e.lambda.resize(n);
    std::vector<std::vector<double>> a_vals(d * d, std::vector<double>(n));
    for (std::size_t c = 0; c < n; ++c) {
        const Vec x = measure.grid.center(c);
        const Coefficients k = model.eval(x);
        const Mat J = Mat::Identity(d, d) + corrector.dbhat_cell(c);
        const Mat lam = J * k.sigma;
        e.lambda[c] = lam;
        const Mat ll = lam * lam.transpose();
        e.A += measure.weights[c] * ll;
        e.C += measure.weights[c] * (J * k.c);
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j) a_vals[i * d + j][c] = ll(i, j);
    }
    e.A = 0.5 * (e.A + e.A.transpose());
    e.A_se = Mat::Zero(d, d);
    if (measure.path_weights.size() > 0)
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j) e.A_se(i, j) = measure.integrate(a_vals[i * d + j]).se;
    Eigen::SelfAdjointEigenSolver<Mat> es(e.A);
    e.eigenvalues = es.eigenvalues();
    e.spd = e.eigenvalues.minCoeff() > e.spd_tol;
    if (!e.spd)
        e.warnings.push_back("NOT_SPD: min eigenvalue of A is " + std::to_string(e.eigenvalues.minCoeff()));
    e.fbar = AveragedDriver(driver, measure, e.lambda);
    e.measure_backend = std::string(to_string(measure.backend));
    e.cell_backend = std::string(to_string(corrector.backend));
    return e;
}

inline double evaluate_fbar(const EffectiveModel& e, const Vec& x, double y, const Vec& z) { return e.fbar(x, y, z); }

}  // namespace phom
