#pragma once

#include "phom/coefficients.hpp"
#include "phom/core.hpp"
#include "phom/parallel.hpp"
#include "phom/rng.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <ostream>
#include <span>
#include <vector>

namespace phom {

enum class ExitRule { GridCrossing, BrownianBridge };

struct SchemeParams {
    double h = 1e-3;
    double t_max = 50.0;
    ExitRule exit_rule = ExitRule::GridCrossing;
    std::uint64_t seed = 1;
    std::uint64_t stream_index = 0;

    void validate() const {
        if (!(h > 0.0)) throw Error(ErrorCode::StepInvalid, "time step h must be positive");
        if (!(t_max >= h)) throw Error(ErrorCode::StepInvalid, "horizon t_max must be at least h");
    }

    SchemeParams with_stream(std::uint64_t s) const {
        SchemeParams p = *this;
        p.stream_index = s;
        return p;
    }
};

/// Euler-Maruyama step size for the slow process at scale eps: h0 eps^2,
/// capped at h_max so coarse scales still resolve the exit.
inline double slow_step(double h0, double eps, double h_max) { return std::min(h0 * eps * eps, h_max); }

struct PathSample {
    std::vector<double> times;
    std::vector<Vec> states;
    bool exited = false;
    bool censored = false;
    double exit_time = 0.0;
    Vec exit_state;
    std::uint64_t seed_stream = 0;
};

/// Local coefficients of one Euler step, handed to path observers.
struct StepInfo {
    Vec drift;
    Mat sigma;
};

/// Result of one first-exit path without stored states.
struct ExitOutcome {
    bool exited = false;
    bool censored = false;
    double tau = 0.0;
    Vec exit_state;
    std::size_t steps = 0;
};

// ---------------------------------------------------------------------------
// Dynamics
// ---------------------------------------------------------------------------

/// Slow process dX = (b/eps + c)(X/eps) dt + sigma(X/eps) dB.
class SlowDynamics {
public:
    SlowDynamics(const PeriodicModel& model, double eps) : model_(&model), eps_(eps) {
        if (!(eps > 0.0)) throw Error(ErrorCode::ConfigInvalid, "eps must be positive for the slow process");
    }

    int dim() const { return model_->dim(); }
    double eps() const { return eps_; }
    const PeriodicModel& model() const { return *model_; }

    Vec fast_point(const Vec& x) const { return wrap_torus(Vec(x / eps_)); }

    void coefficients(const Vec& x, StepInfo& out) const {
        const Vec xi = fast_point(x);
        out.sigma = model_->sigma_at(xi);
        out.drift = model_->drift_b(xi) / eps_ + model_->drift_c(xi);
    }

private:
    const PeriodicModel* model_;
    double eps_;
};

/// Torus process dX = (b + eps c)(X) dt + sigma(X) dB (eps = 0 gives the
/// reference process without the c term).
class FastDynamics {
public:
    FastDynamics(const PeriodicModel& model, double eps) : model_(&model), eps_(eps) {
        if (eps < 0.0) throw Error(ErrorCode::ConfigInvalid, "eps must be nonnegative");
    }

    int dim() const { return model_->dim(); }
    Vec fast_point(const Vec& x) const { return wrap_torus(x); }

    void coefficients(const Vec& x, StepInfo& out) const {
        out.sigma = model_->sigma_at(x);
        out.drift = model_->drift_b(x);
        if (eps_ != 0.0) out.drift += eps_ * model_->drift_c(x);
    }

private:
    const PeriodicModel* model_;
    double eps_;
};

/// Homogenized diffusion X = x + C t + A^{1/2} B.
class LimitDynamics {
public:
    static constexpr double kSpdTol = 1e-10;

    LimitDynamics(const Mat& A, const Vec& C) : A_(0.5 * (A + A.transpose())), C_(C) {
        Eigen::SelfAdjointEigenSolver<Mat> es(A_);
        Vec ev = es.eigenvalues();
        if (ev.minCoeff() < -kSpdTol)
            throw Error(ErrorCode::NotSpd, "effective matrix has eigenvalue " + std::to_string(ev.minCoeff()));
        for (Eigen::Index i = 0; i < ev.size(); ++i) ev[i] = std::sqrt(std::max(ev[i], 0.0));
        sqrtA_ = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
    }

    template <typename Effective>
        requires requires(const Effective& e) { e.A; e.C; }
    explicit LimitDynamics(const Effective& e) : LimitDynamics(e.A, e.C) {}

    int dim() const { return static_cast<int>(C_.size()); }
    const Mat& A() const { return A_; }
    const Vec& C() const { return C_; }
    const Mat& sqrtA() const { return sqrtA_; }
    Vec fast_point(const Vec& x) const { return x; }

    void coefficients(const Vec&, StepInfo& out) const {
        out.sigma = sqrtA_;
        out.drift = C_;
    }

private:
    Mat A_;
    Vec C_;
    Mat sqrtA_;
};

// ---------------------------------------------------------------------------
// Path engine
// ---------------------------------------------------------------------------

/// Observer that ignores everything.
struct NullObserver {
    void on_step(double, const Vec&, double, const StepInfo&) {}
    void on_state(double, const Vec&) {}
};

namespace detail {

/// Probability that a Brownian bridge with variance rate `var` crosses a face
/// at distances d0, d1 (both positive) from the endpoints over one step.
inline double bridge_cross_probability(double d0, double d1, double var_dt) {
    if (var_dt <= 0.0) return 0.0;
    return std::exp(-2.0 * d0 * d1 / var_dt);
}

}  // namespace detail

/// Simulates one path from x0 until it leaves the closure of G or reaches
/// t_max. The observer receives each Euler interval [t, t + dt] with its
/// left state and coefficients (dt is shortened on the exit step), and every
/// accepted interior state.
template <typename Dynamics, typename Observer>
ExitOutcome run_exit_path(const Dynamics& dyn, const Domain& G, const Vec& x0,
                          const SchemeParams& p, Observer& obs) {
    const int d = dyn.dim();
    RandomStream noise(p.seed, p.stream_index, Lane::Gaussian);
    RandomStream bridge(p.seed, p.stream_index, Lane::Uniform);
    const bool use_bridge = p.exit_rule == ExitRule::BrownianBridge && G.kind() == Domain::Kind::Box;

    ExitOutcome out;
    Vec x = x0;
    Vec x1(d), z(d);
    StepInfo info;
    double t = 0.0;
    obs.on_state(t, x);
    while (true) {
        const double remaining = p.t_max - t;
        if (remaining <= 1e-12 * p.t_max) {
            out.censored = true;
            out.tau = t;
            break;
        }
        const double dt = std::min(p.h, remaining);
        dyn.coefficients(x, info);
        for (int i = 0; i < d; ++i) z[i] = noise.normal();
        x1 = x + info.drift * dt + info.sigma * z * std::sqrt(dt);
        ++out.steps;

        if (!G.in_closure(x1)) {
            const double theta = G.crossing_fraction(x, x1);
            obs.on_step(t, x, theta * dt, info);
            out.exited = true;
            out.tau = t + theta * dt;
            out.exit_state = G.project_to_boundary(Vec(x + theta * (x1 - x)));
            break;
        }
        if (use_bridge) {
            double survive = 1.0;
            double best_p = 0.0;
            int best_axis = 0;
            bool best_lower = true;
            const Mat a = info.sigma * info.sigma.transpose();
            for (int i = 0; i < d; ++i) {
                const double var_dt = a(i, i) * dt;
                const double pl = detail::bridge_cross_probability(x[i] - G.lower()[i], x1[i] - G.lower()[i], var_dt);
                const double pu = detail::bridge_cross_probability(G.upper()[i] - x[i], G.upper()[i] - x1[i], var_dt);
                survive *= (1.0 - pl) * (1.0 - pu);
                if (pl > best_p) { best_p = pl; best_axis = i; best_lower = true; }
                if (pu > best_p) { best_p = pu; best_axis = i; best_lower = false; }
            }
            const double u = bridge.uniform();
            if (u < 1.0 - survive) {
                obs.on_step(t, x, 0.5 * dt, info);
                out.exited = true;
                out.tau = t + 0.5 * dt;
                Vec e = 0.5 * (x + x1);
                e[best_axis] = best_lower ? G.lower()[best_axis] : G.upper()[best_axis];
                out.exit_state = e;
                break;
            }
        }
        obs.on_step(t, x, dt, info);
        x = x1;
        t += dt;
        obs.on_state(t, x);
    }
    return out;
}

/// Observer that records every state into a PathSample.
struct RecordingObserver {
    PathSample* path;
    void on_step(double, const Vec&, double, const StepInfo&) {}
    void on_state(double t, const Vec& x) {
        path->times.push_back(t);
        path->states.push_back(x);
    }
};

template <typename Dynamics>
PathSample record_exit_path(const Dynamics& dyn, const Domain& G, const Vec& x0, const SchemeParams& p) {
    PathSample path;
    path.seed_stream = p.stream_index;
    RecordingObserver obs{&path};
    const ExitOutcome out = run_exit_path(dyn, G, x0, p, obs);
    path.exited = out.exited;
    path.censored = out.censored;
    if (out.exited) {
        path.exit_time = out.tau;
        path.exit_state = out.exit_state;
        path.times.push_back(out.tau);
        path.states.push_back(out.exit_state);
    }
    return path;
}

// ---------------------------------------------------------------------------
// Public path operations
// ---------------------------------------------------------------------------

/// Torus-valued Euler-Maruyama path of dX = (b + eps c) dt + sigma dB over
/// [0, t_max]. States are wrapped into [0, 1)^d.
inline PathSample simulate_fast_path(const PeriodicModel& model, const Vec& x0, double eps,
                                     const SchemeParams& p) {
    p.validate();
    if (x0.size() != model.dim()) throw Error(ErrorCode::ConfigInvalid, "x0 dimension mismatch");
    FastDynamics dyn(model, eps);
    RandomStream noise(p.seed, p.stream_index, Lane::Gaussian);
    const int d = model.dim();
    const auto n_steps = static_cast<std::size_t>(std::floor(p.t_max / p.h + 1e-9));
    PathSample path;
    path.seed_stream = p.stream_index;
    path.times.reserve(n_steps + 1);
    path.states.reserve(n_steps + 1);
    Vec x = wrap_torus(x0), z(d);
    StepInfo info;
    path.times.push_back(0.0);
    path.states.push_back(x);
    const double sq = std::sqrt(p.h);
    for (std::size_t k = 0; k < n_steps; ++k) {
        dyn.coefficients(x, info);
        for (int i = 0; i < d; ++i) z[i] = noise.normal();
        x = wrap_torus(Vec(x + info.drift * p.h + info.sigma * z * sq));
        path.times.push_back(static_cast<double>(k + 1) * p.h);
        path.states.push_back(x);
    }
    return path;
}

/// Slow multiscale path started in G, stopped at the first exit from the
/// closure of G (or censored at t_max).
inline PathSample simulate_slow_path(const PeriodicModel& model, const Vec& x0, double eps,
                                     const Domain& G, const SchemeParams& p) {
    p.validate();
    if (!G.contains(x0)) throw Error(ErrorCode::DomainInvalid, "initial point is not in the open domain");
    return record_exit_path(SlowDynamics(model, eps), G, x0, p);
}

/// Path of the homogenized diffusion, stopped at the first exit.
inline PathSample simulate_limit_path(const LimitDynamics& limit, const Vec& x0, const Domain& G,
                                      const SchemeParams& p) {
    p.validate();
    if (!G.contains(x0)) throw Error(ErrorCode::DomainInvalid, "initial point is not in the open domain");
    return record_exit_path(limit, G, x0, p);
}

/// Corrected path X + eps (bhat(X / eps) - bhat(x0 / eps)). `corrector`
/// must provide bhat_at(torus point) -> Vec.
template <typename Corrector>
PathSample corrected_path(const PathSample& slow, const Corrector& corrector, double eps) {
    PathSample out = slow;
    if (slow.states.empty()) return out;
    const Vec base = corrector.bhat_at(wrap_torus(Vec(slow.states.front() / eps)));
    for (auto& x : out.states) x = x + eps * (corrector.bhat_at(wrap_torus(Vec(x / eps))) - base);
    if (out.exited) out.exit_state = out.states.back();
    return out;
}

/// CSV dump with columns stream,k,t,x_1..x_d,exited.
inline void write_paths_csv(std::ostream& os, std::span<const PathSample> paths) {
    if (paths.empty()) return;
    const auto d = paths.front().states.empty() ? 0 : paths.front().states.front().size();
    os << "stream,k,t";
    for (Eigen::Index i = 0; i < d; ++i) os << ",x_" << (i + 1);
    os << ",exited\n";
    os.precision(17);
    for (const auto& p : paths) {
        for (std::size_t k = 0; k < p.states.size(); ++k) {
            os << p.seed_stream << ',' << k << ',' << p.times[k];
            for (Eigen::Index i = 0; i < d; ++i) os << ',' << p.states[k][i];
            os << ',' << (p.exited ? 1 : 0) << '\n';
        }
    }
}

// ---------------------------------------------------------------------------
// Ensembles
// ---------------------------------------------------------------------------

/// Exit-time sample of n paths from x0 on consecutive streams.
template <typename Dynamics>
std::vector<ExitOutcome> exit_ensemble(const Dynamics& dyn, const Domain& G, const Vec& x0,
                                       const SchemeParams& p, std::size_t n) {
    p.validate();
    if (!G.contains(x0)) throw Error(ErrorCode::DomainInvalid, "initial point is not in the open domain");
    std::vector<ExitOutcome> out(n);
    parallel_for(n, [&](std::size_t i) {
        NullObserver obs;
        out[i] = run_exit_path(dyn, G, x0, p.with_stream(p.stream_index + i), obs);
    });
    return out;
}

/// Fraction of censored paths in an ensemble.
inline double censored_fraction(const std::vector<ExitOutcome>& v) {
    if (v.empty()) return 0.0;
    std::size_t c = 0;
    for (const auto& o : v) c += o.censored ? 1 : 0;
    return static_cast<double>(c) / static_cast<double>(v.size());
}

/// Maximum censoring fraction tolerated by any experiment.
inline constexpr double kMaxCensoredFraction = 1e-3;

}  // namespace phom
