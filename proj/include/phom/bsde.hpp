#pragma once

#include "phom/coefficients.hpp"
#include "phom/core.hpp"
#include "phom/ergodic_cell.hpp"
#include "phom/parallel.hpp"
#include "phom/rng.hpp"
#include "phom/torus_dynamics.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <ostream>
#include <string>
#include <vector>

namespace phom {

// ---------------------------------------------------------------------------
// Value estimates
// ---------------------------------------------------------------------------

struct ValueEstimate {
    std::vector<Vec> points;
    std::vector<double> values;
    std::vector<double> se;
    int iterations_used = 0;
    /// sup-norm change of the value function at each Picard iteration
    std::vector<double> contraction_log;
    /// False if the log increased after the first iteration.
    bool contraction_monotone = true;
    /// Statistical floor used by the stopping rule at the last iteration.
    double noise_floor = 0.0;
    double censored_fraction = 0.0;
    std::size_t n_paths = 0;
};

/// CSV with columns x_1..x_d,value,se,iterations.
inline void write_value_csv(std::ostream& os, const ValueEstimate& v) {
    const auto d = v.points.empty() ? 0 : v.points.front().size();
    for (Eigen::Index i = 0; i < d; ++i) os << "x_" << (i + 1) << ',';
    os << "value,se,iterations\n";
    os.precision(17);
    for (std::size_t p = 0; p < v.points.size(); ++p) {
        for (Eigen::Index i = 0; i < d; ++i) os << v.points[p][i] << ',';
        os << v.values[p] << ',' << v.se[p] << ',' << v.iterations_used << '\n';
    }
}

// ---------------------------------------------------------------------------
// Regression basis
// ---------------------------------------------------------------------------

/// v(x) = ghat(x) + bubble(x) sum_k c_k P_k(x), with P_k tensor Legendre
/// polynomials of total degree <= degree on the bounding box of G mapped to
/// [-1, 1]^d. ghat is the smooth extension of the boundary data, so every
/// member of the family equals g on the boundary.
class RegressionBasis {
public:
    RegressionBasis() = default;

    RegressionBasis(const Domain& G, const BoundaryFunction& g, int degree) : G_(G), g_(g), degree_(degree) {
        if (degree < 0) throw Error(ErrorCode::ConfigInvalid, "basis degree must be nonnegative");
        const int d = G.dim();
        auto [lo, hi] = G.bounding_box();
        lo_ = lo;
        hi_ = hi;
        std::array<int, kMaxDim> m{0, 0, 0};
        enumerate(0, d, degree, m);
    }

    static int default_degree(int dim) { return dim == 1 ? 6 : dim == 2 ? 4 : 3; }

    std::size_t size() const { return multi_.size(); }
    int degree() const { return degree_; }

    /// Features bubble(x) P_k(x).
    Eigen::VectorXd features(const Vec& x) const {
        std::array<std::vector<double>, kMaxDim> P, dP;
        legendre_tables(x, P, dP);
        const double w = G_.bubble(x);
        Eigen::VectorXd phi(static_cast<Eigen::Index>(multi_.size()));
        for (std::size_t k = 0; k < multi_.size(); ++k) phi[static_cast<Eigen::Index>(k)] = w * product(P, multi_[k]);
        return phi;
    }

    double value(const Eigen::VectorXd& c, const Vec& x) const {
        double v = g_(x);
        if (c.size() > 0) v += features(x).dot(c);
        return v;
    }

    Vec gradient(const Eigen::VectorXd& c, const Vec& x) const {
        Vec gr = g_.gradient(x);
        if (c.size() == 0) return gr;
        const int d = G_.dim();
        std::array<std::vector<double>, kMaxDim> P, dP;
        legendre_tables(x, P, dP);
        const double w = G_.bubble(x);
        const Vec dw = G_.bubble_gradient(x);
        double s = 0.0;
        Vec ds = Vec::Zero(d);
        for (std::size_t k = 0; k < multi_.size(); ++k) {
            const double ck = c[static_cast<Eigen::Index>(k)];
            if (ck == 0.0) continue;
            s += ck * product(P, multi_[k]);
            for (int i = 0; i < d; ++i) {
                double t = ck * dP[i][multi_[k][i]] * 2.0 / (hi_[i] - lo_[i]);
                for (int j = 0; j < d; ++j)
                    if (j != i) t *= P[j][multi_[k][j]];
                ds[i] += t;
            }
        }
        return Vec(gr + dw * s + w * ds);
    }

    const BoundaryFunction& g() const { return g_; }

private:
    void enumerate(int axis, int d, int remaining, std::array<int, kMaxDim>& m) {
        if (axis == d) {
            multi_.push_back(m);
            return;
        }
        for (int k = 0; k <= remaining; ++k) {
            m[axis] = k;
            enumerate(axis + 1, d, remaining - k, m);
        }
        m[axis] = 0;
    }

    void legendre_tables(const Vec& x, std::array<std::vector<double>, kMaxDim>& P,
                         std::array<std::vector<double>, kMaxDim>& dP) const {
        for (int i = 0; i < G_.dim(); ++i) {
            const double t = 2.0 * (x[i] - lo_[i]) / (hi_[i] - lo_[i]) - 1.0;
            P[i].assign(degree_ + 1, 0.0);
            dP[i].assign(degree_ + 1, 0.0);
            P[i][0] = 1.0;
            if (degree_ >= 1) {
                P[i][1] = t;
                dP[i][1] = 1.0;
            }
            for (int n = 1; n < degree_; ++n) {
                P[i][n + 1] = ((2.0 * n + 1.0) * t * P[i][n] - n * P[i][n - 1]) / (n + 1.0);
                dP[i][n + 1] = dP[i][n - 1] + (2.0 * n + 1.0) * P[i][n];
            }
        }
    }

    double product(const std::array<std::vector<double>, kMaxDim>& P, const std::array<int, kMaxDim>& m) const {
        double v = 1.0;
        for (int i = 0; i < G_.dim(); ++i) v *= P[i][m[i]];
        return v;
    }

    Domain G_;
    BoundaryFunction g_;
    int degree_ = 0;
    Vec lo_, hi_;
    std::vector<std::array<int, kMaxDim>> multi_;
};

// ---------------------------------------------------------------------------
// Drivers seen by the backward equation
// ---------------------------------------------------------------------------

/// Prelimit driver: f(x / eps, x, y, grad v sigma(x / eps)).
struct PrelimitDriver {
    const PeriodicModel* model;
    const Driver* f;

    double operator()(const Vec& xi, const Vec& x, double y, const Vec& grad) const {
        if (f->z_independent()) return (*f)(xi, x, y, grad);
        const Vec z = (grad.transpose() * model->sigma_at(xi)).transpose();
        return (*f)(xi, x, y, z);
    }
    double mu() const { return f->mu(); }
};

/// Limit driver: fbar(x, y, grad v).
struct LimitDriver {
    const AveragedDriver* fbar;

    double operator()(const Vec&, const Vec& x, double y, const Vec& grad) const { return (*fbar)(x, y, grad); }
    double mu() const { return fbar->mu(); }
};

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

struct BsdeParams {
    /// Feynman-Kac: paths per query point. Picard: regression samples per
    /// iteration (one path from each uniformly drawn design point).
    std::size_t n_paths = 4000;
    /// Paths per query point for the final evaluation of the Picard solver.
    std::size_t n_final_paths = 4000;
    int n_picard = 20;
    /// Total polynomial degree of the regression basis; < 0 chooses the
    /// default for the dimension.
    int basis_degree = -1;
    double picard_tol = 1e-3;
    /// The stopping rule also accepts a change below this many prediction
    /// standard errors (the Monte Carlo floor).
    double noise_multiplier = 3.0;
    SchemeParams scheme;
};

namespace detail {

inline void check_censoring(std::size_t censored, std::size_t total, const std::string& where) {
    const double frac = total ? static_cast<double>(censored) / static_cast<double>(total) : 0.0;
    if (frac > kMaxCensoredFraction)
        throw Error(ErrorCode::Censored, where + ": " + std::to_string(censored) + " of " + std::to_string(total) +
                                             " paths reached t_max before exiting; raise t_max");
}

/// Accumulates int_0^tau e^{-alpha t} integrand(fast, x) dt with the left
/// point rule along the Euler grid.
template <typename Dynamics, typename Integrand>
struct RunningIntegral {
    const Dynamics* dyn;
    const Integrand* integrand;
    double alpha = 0.0;
    double value = 0.0;

    void on_step(double t, const Vec& x, double dt, const StepInfo&) {
        if (dt <= 0.0) return;
        const double w = alpha == 0.0 ? dt : std::exp(-alpha * t) * dt;
        value += w * (*integrand)(dyn->fast_point(x), x);
    }
    void on_state(double, const Vec&) {}
};

struct PathValue {
    double value = 0.0;
    bool censored = false;
};

/// One sample of e^{-alpha tau} g(X_tau) + int_0^tau e^{-alpha t} h(X_t) dt.
template <typename Dynamics, typename Integrand>
PathValue path_value(const Dynamics& dyn, const Domain& G, const BoundaryFunction& g,
                                          const Integrand& h, double alpha, const Vec& x0, const SchemeParams& p) {
    RunningIntegral<Dynamics, Integrand> obs{&dyn, &h, alpha, 0.0};
    const ExitOutcome out = run_exit_path(dyn, G, x0, p, obs);
    PathValue pv;
    pv.censored = out.censored;
    const double disc = alpha == 0.0 ? 1.0 : std::exp(-alpha * out.tau);
    // Censored paths contribute their integral only; they are counted and
    // rejected above the tolerated fraction.
    pv.value = obs.value + (out.exited ? disc * g(out.exit_state) : 0.0);
    return pv;
}

}  // namespace detail

/// u(x) = E[g(X_tau) + int_0^tau f(X_bar_s, X_s) ds] for a driver that does
/// not depend on (y, z).
template <typename Dynamics>
ValueEstimate solve_feynman_kac(const Dynamics& dyn, const Domain& G, const BoundaryFunction& g, const Driver& f,
                                const std::vector<Vec>& points, const BsdeParams& params) {
    if (!f.yz_independent())
        throw Error(ErrorCode::ConfigInvalid, "Feynman-Kac requires a driver independent of (y, z)");
    params.scheme.validate();
    ValueEstimate est;
    est.points = points;
    est.values.resize(points.size());
    est.se.resize(points.size());
    est.n_paths = params.n_paths;
    const Vec zero = Vec::Zero(G.dim());
    auto source = [&](const Vec& xi, const Vec& x) { return f(xi, x, 0.0, zero); };
    std::size_t censored_total = 0;
    for (std::size_t q = 0; q < points.size(); ++q) {
        if (!G.contains(points[q])) throw Error(ErrorCode::DomainInvalid, "query point is not in the open domain");
        std::vector<double> samples(params.n_paths);
        std::vector<char> cens(params.n_paths, 0);
        const std::uint64_t base = params.scheme.stream_index + q * params.n_paths;
        parallel_for(params.n_paths, [&](std::size_t i) {
            const auto pv = detail::path_value(dyn, G, g, source, 0.0, points[q], params.scheme.with_stream(base + i));
            samples[i] = pv.value;
            cens[i] = pv.censored;
        });
        const std::size_t c = static_cast<std::size_t>(std::count(cens.begin(), cens.end(), 1));
        detail::check_censoring(c, params.n_paths, "solve_feynman_kac");
        censored_total += c;
        const auto st = sample_stats(samples);
        est.values[q] = st.mean;
        est.se[q] = st.se;
    }
    est.censored_fraction = points.empty() ? 0.0
                                           : static_cast<double>(censored_total) /
                                                 static_cast<double>(points.size() * params.n_paths);
    return est;
}

/// Picard iteration with spatial regression for
///   Y_t = g(X_tau) + int_t^tau F(X_r, Y_r, Z_r) dr - int_t^tau Z_r dB_r.
/// The equation is rewritten with the discount alpha = max(0, -mu):
///   v_{k+1}(x) = E[e^{-alpha tau} g(X_tau)
///                  + int_0^tau e^{-alpha t} (F(X_t, v_k, grad v_k) + alpha v_k)(X_t) dt].
/// `F` has the BsdeDriver signature (xi, x, y, grad v) -> double, with xi the
/// fast point of the dynamics.
template <typename Dynamics, typename BsdeDriver>
ValueEstimate solve_bsde_picard(const Dynamics& dyn, const Domain& G, const BoundaryFunction& g, const BsdeDriver& F,
                                const std::vector<Vec>& points, const BsdeParams& params) {
    params.scheme.validate();
    if (params.n_picard < 1) throw Error(ErrorCode::ConfigInvalid, "n_picard must be at least 1");
    if (!(params.picard_tol > 0.0)) throw Error(ErrorCode::ConfigInvalid, "picard_tol must be positive");
    for (const auto& x : points)
        if (!G.contains(x)) throw Error(ErrorCode::DomainInvalid, "query point is not in the open domain");
    const int d = G.dim();
    const int degree = params.basis_degree >= 0 ? params.basis_degree : RegressionBasis::default_degree(d);
    const RegressionBasis basis(G, g, degree);
    const auto nb = static_cast<Eigen::Index>(basis.size());
    const double alpha = std::max(0.0, -F.mu());

    // Fixed evaluation set for the sup-norm change.
    std::vector<Vec> eval = points;
    {
        RandomStream rs(derive_seed(params.scheme.seed, 0xE7A1), 0, Lane::Design);
        const std::size_t extra = d == 1 ? 64 : 256;
        for (std::size_t i = 0; i < extra; ++i) eval.push_back(G.sample(rs));
    }

    Eigen::VectorXd coef = Eigen::VectorXd::Zero(nb);
    ValueEstimate est;
    est.points = points;
    est.n_paths = params.n_paths;
    int increases = 0;
    std::size_t censored_total = 0, paths_total = 0;

    auto make_integrand = [&](const Eigen::VectorXd& c) {
        return [&, c](const Vec& xi, const Vec& x) {
            const double v = basis.value(c, x);
            return F(xi, x, v, basis.gradient(c, x)) + alpha * v;
        };
    };

    for (int k = 0; k < params.n_picard; ++k) {
        const auto integrand = make_integrand(coef);
        const std::size_t n = params.n_paths;
        Eigen::MatrixXd Phi(static_cast<Eigen::Index>(n), nb);
        Eigen::VectorXd target(static_cast<Eigen::Index>(n));
        std::vector<char> cens(n, 0);
        const std::uint64_t base = params.scheme.stream_index + static_cast<std::uint64_t>(k) * n;
        parallel_for(n, [&](std::size_t i) {
            RandomStream design(params.scheme.seed, base + i, Lane::Design);
            const Vec x0 = G.sample(design);
            const auto pv = detail::path_value(dyn, G, g, integrand, alpha, x0, params.scheme.with_stream(base + i));
            cens[i] = pv.censored;
            const auto row = static_cast<Eigen::Index>(i);
            Phi.row(row) = basis.features(x0).transpose();
            target[row] = pv.value - g(x0);
        });
        const std::size_t c = static_cast<std::size_t>(std::count(cens.begin(), cens.end(), 1));
        detail::check_censoring(c, n, "solve_bsde_picard");
        censored_total += c;
        paths_total += n;

        const Eigen::MatrixXd gram = Phi.transpose() * Phi;
        Eigen::LDLT<Eigen::MatrixXd> ldlt(gram);
        const Eigen::VectorXd next = ldlt.solve(Phi.transpose() * target);
        const Eigen::VectorXd resid = target - Phi * next;
        const double dof = std::max<double>(1.0, static_cast<double>(n) - static_cast<double>(nb));
        const double s2 = resid.squaredNorm() / dof;

        double delta = 0.0, floor = 0.0;
        for (const auto& x : eval) {
            const Eigen::VectorXd phi = basis.features(x);
            delta = std::max(delta, std::abs(phi.dot(next - coef)));
            floor = std::max(floor, std::sqrt(std::max(0.0, s2 * phi.dot(ldlt.solve(phi)))));
        }
        coef = next;
        est.contraction_log.push_back(delta);
        est.iterations_used = k + 1;
        est.noise_floor = params.noise_multiplier * floor;
        const auto& log = est.contraction_log;
        if (log.size() >= 2 && log[log.size() - 1] > log[log.size() - 2]) {
            if (log.size() >= 3) est.contraction_monotone = false;
            if (++increases >= 3)
                throw Error(ErrorCode::NoContraction,
                            "Picard change increased for 3 consecutive iterations; check lambda > 2 mu + K^2 "
                            "and the basis degree");
        } else {
            increases = 0;
        }
        if (delta < params.picard_tol || (k > 0 && delta < est.noise_floor)) break;
    }

    // Final evaluation at the query points with fresh paths.
    const auto integrand = make_integrand(coef);
    est.values.resize(points.size());
    est.se.resize(points.size());
    const std::uint64_t final_base =
        params.scheme.stream_index + static_cast<std::uint64_t>(params.n_picard) * params.n_paths;
    for (std::size_t q = 0; q < points.size(); ++q) {
        std::vector<double> samples(params.n_final_paths);
        std::vector<char> cens(params.n_final_paths, 0);
        const std::uint64_t base = final_base + q * params.n_final_paths;
        parallel_for(params.n_final_paths, [&](std::size_t i) {
            const auto pv =
                detail::path_value(dyn, G, g, integrand, alpha, points[q], params.scheme.with_stream(base + i));
            samples[i] = pv.value;
            cens[i] = pv.censored;
        });
        const std::size_t c = static_cast<std::size_t>(std::count(cens.begin(), cens.end(), 1));
        detail::check_censoring(c, params.n_final_paths, "solve_bsde_picard");
        censored_total += c;
        paths_total += params.n_final_paths;
        const auto st = sample_stats(samples);
        est.values[q] = st.mean;
        est.se[q] = st.se;
    }
    est.censored_fraction = paths_total ? static_cast<double>(censored_total) / static_cast<double>(paths_total) : 0.0;
    return est;
}

struct ExitExponentialEstimate {
    McEstimate estimate;
    /// 99th percentile of the simulated exit times (lambda > 0).
    double tau_p99 = 0.0;
    double censored_fraction = 0.0;
};

/// E_x e^{lambda tau}; lambda = 0 returns exactly 1.
template <typename Dynamics>
ExitExponentialEstimate estimate_exit_exponential(const Dynamics& dyn, const Domain& G, double lambda, const Vec& x,
                                                  std::size_t n_paths, const SchemeParams& scheme) {
    ExitExponentialEstimate r;
    r.estimate.n_paths = n_paths;
    r.estimate.seed = scheme.seed;
    r.estimate.h = scheme.h;
    if (lambda == 0.0) {
        r.estimate.value = 1.0;
        return r;
    }
    const auto out = exit_ensemble(dyn, G, x, scheme, n_paths);
    std::vector<double> vals(out.size()), taus(out.size());
    std::size_t censored = 0;
    for (std::size_t i = 0; i < out.size(); ++i) {
        vals[i] = std::exp(lambda * out[i].tau);
        taus[i] = out[i].tau;
        censored += out[i].censored ? 1 : 0;
    }
    r.censored_fraction = out.empty() ? 0.0 : static_cast<double>(censored) / static_cast<double>(out.size());
    r.estimate.censored = censored;
    detail::check_censoring(censored, out.size(),
                            lambda > 0.0 ? "estimate_exit_exponential (estimate biased low)" : "estimate_exit_exponential");
    const auto st = sample_stats(vals);
    r.estimate.value = st.mean;
    r.estimate.se = st.se;
    if (lambda > 0.0 && !taus.empty()) {
        std::sort(taus.begin(), taus.end());
        r.tau_p99 = taus[std::min(taus.size() - 1, static_cast<std::size_t>(std::ceil(0.99 * taus.size())) - 1)];
    }
    return r;
}

}  // namespace phom
