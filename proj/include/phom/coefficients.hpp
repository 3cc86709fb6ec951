#pragma once

#include "phom/core.hpp"
#include "phom/rng.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace phom {

// ---------------------------------------------------------------------------
// Periodic scalar fields
// ---------------------------------------------------------------------------

/// One Fourier mode: cos_coef * cos(2 pi k.x) + sin_coef * sin(2 pi k.x).
struct FourierTerm {
    std::array<int, kMaxDim> k{0, 0, 0};
    double cos_coef = 0.0;
    double sin_coef = 0.0;
};

/// C-infinity periodic switch along one axis: identically 0 on [lo, hi],
/// identically 1 at circular distance >= width from that interval.
struct SmoothCutoff {
    int axis = 0;
    double lo = 0.0;
    double hi = 0.0;
    double width = 0.1;

    static double transition(double s) {
        if (s <= 0.0) return 0.0;
        if (s >= 1.0) return 1.0;
        const double f0 = std::exp(-1.0 / s);
        const double f1 = std::exp(-1.0 / (1.0 - s));
        return f0 / (f0 + f1);
    }

    double operator()(const Vec& x) const {
        double t = x[axis] - std::floor(x[axis]);
        if (t >= lo && t <= hi) return 0.0;
        double right = t - hi;
        if (right < 0.0) right += 1.0;
        double left = lo - t;
        if (left < 0.0) left += 1.0;
        return transition(std::min(left, right) / width);
    }

    void validate() const {
        if (!(lo >= 0.0 && lo < hi && hi <= 1.0))
            throw Error(ErrorCode::ConfigInvalid, "cutoff interval must satisfy 0 <= lo < hi <= 1");
        if (!(width > 0.0 && width <= 0.5 * (1.0 - (hi - lo))))
            throw Error(ErrorCode::ConfigInvalid, "cutoff width must lie in (0, (1 - (hi - lo)) / 2]");
    }
};

/// Truncated trigonometric polynomial on the torus, optionally multiplied by a
/// smooth cutoff. Both factors are C-infinity and 1-periodic.
class ScalarField {
public:
    ScalarField() = default;
    explicit ScalarField(double constant) : constant_(constant) {}
    ScalarField(double constant, std::vector<FourierTerm> terms,
                std::optional<SmoothCutoff> cutoff = std::nullopt)
        : constant_(constant), terms_(std::move(terms)), cutoff_(cutoff) {
        if (cutoff_) cutoff_->validate();
    }

    double operator()(const Vec& x) const {
        double v = constant_;
        for (const auto& t : terms_) {
            double phase = 0.0;
            for (Eigen::Index i = 0; i < x.size(); ++i) phase += t.k[i] * x[i];
            phase *= kTwoPi;
            if (t.cos_coef != 0.0) v += t.cos_coef * std::cos(phase);
            if (t.sin_coef != 0.0) v += t.sin_coef * std::sin(phase);
        }
        if (cutoff_) v *= (*cutoff_)(x);
        return v;
    }

    /// Upper bound on sup |field| from the coefficients.
    double sup_bound() const {
        double s = std::abs(constant_);
        for (const auto& t : terms_) s += std::abs(t.cos_coef) + std::abs(t.sin_coef);
        return s;
    }

    /// Largest |k_i| over all modes.
    int max_order() const {
        int m = 0;
        for (const auto& t : terms_)
            for (int k : t.k) m = std::max(m, std::abs(k));
        return m;
    }

    bool is_zero() const { return constant_ == 0.0 && terms_.empty(); }
    bool is_constant() const { return terms_.empty() && !cutoff_; }
    double constant() const { return constant_; }
    const std::vector<FourierTerm>& terms() const { return terms_; }
    const std::optional<SmoothCutoff>& cutoff() const { return cutoff_; }

private:
    double constant_ = 0.0;
    std::vector<FourierTerm> terms_;
    std::optional<SmoothCutoff> cutoff_;
};

// ---------------------------------------------------------------------------
// PeriodicModel
// ---------------------------------------------------------------------------

struct Coefficients {
    Mat sigma;
    Vec b;
    Vec c;
    Mat a;
};

/// How the diffusion part of a catalog model is declared.
enum class DiffusionForm { Sigma, Diffusion };

/// Periodic coefficient fields sigma, b, c on the d-torus.
///
/// Catalog models are assembled from ScalarField entries. With
/// DiffusionForm::Diffusion the entries describe a = sigma sigma^T and sigma
/// is taken as its symmetric square root (eigenvalues >= -psd_tol clamped to
/// zero, anything more negative is reported by validation).
class PeriodicModel {
public:
    using MatrixFn = std::function<Mat(const Vec&)>;
    using VectorFn = std::function<Vec(const Vec&)>;

    static constexpr double kPsdTol = 1e-10;

    /// Catalog constructor. `diffusion` is d x d row-major.
    PeriodicModel(int dim, DiffusionForm form, std::vector<ScalarField> diffusion,
                  std::vector<ScalarField> b, std::vector<ScalarField> c)
        : dim_(dim), form_(form), diff_(std::move(diffusion)), b_(std::move(b)), c_(std::move(c)) {
        if (dim_ < 1 || dim_ > kMaxDim)
            throw Error(ErrorCode::ConfigInvalid, "dimension must be 1, 2 or 3");
        const auto d = static_cast<std::size_t>(dim_);
        if (diff_.size() != d * d || b_.size() != d || c_.size() != d)
            throw Error(ErrorCode::ConfigInvalid, "coefficient field count does not match dimension");
        diagonal_ = true;
        for (int i = 0; i < dim_; ++i)
            for (int j = 0; j < dim_; ++j)
                if (i != j && !diff_[i * d + j].is_zero()) diagonal_ = false;
    }

    /// Programmatic constructor; the resulting model is tagged unchecked.
    PeriodicModel(int dim, MatrixFn sigma, VectorFn b, VectorFn c)
        : dim_(dim), sigma_fn_(std::move(sigma)), b_fn_(std::move(b)), c_fn_(std::move(c)) {
        if (dim_ < 1 || dim_ > kMaxDim)
            throw Error(ErrorCode::ConfigInvalid, "dimension must be 1, 2 or 3");
    }

    /// sigma = I, b = 0, c = c0.
    static PeriodicModel constant(int dim, double sigma_scale = 1.0, Vec c0 = Vec()) {
        std::vector<ScalarField> s(dim * dim), b(dim), c(dim);
        for (int i = 0; i < dim; ++i) s[i * dim + i] = ScalarField(sigma_scale);
        if (c0.size() == dim)
            for (int i = 0; i < dim; ++i) c[i] = ScalarField(c0[i]);
        return PeriodicModel(dim, DiffusionForm::Sigma, std::move(s), std::move(b), std::move(c));
    }

    int dim() const { return dim_; }
    bool checked() const { return !sigma_fn_; }
    DiffusionForm form() const { return form_; }

    Coefficients eval(const Vec& x_raw) const {
        const Vec x = wrap_torus(x_raw);
        Coefficients k;
        k.sigma = sigma_at(x);
        k.b = drift_b(x);
        k.c = drift_c(x);
        k.a = k.sigma * k.sigma.transpose();
        return k;
    }

    Mat sigma_at(const Vec& x) const {
        if (sigma_fn_) return sigma_fn_(x);
        const int d = dim_;
        Mat m(d, d);
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j) m(i, j) = diff_[i * d + j](x);
        if (form_ == DiffusionForm::Sigma) return m;
        if (diagonal_) {
            Mat s = Mat::Zero(d, d);
            for (int i = 0; i < d; ++i) s(i, i) = std::sqrt(std::max(m(i, i), 0.0));
            return s;
        }
        const Mat sym = 0.5 * (m + m.transpose());
        Eigen::SelfAdjointEigenSolver<Mat> es(sym);
        Vec ev = es.eigenvalues();
        for (Eigen::Index i = 0; i < ev.size(); ++i) ev[i] = std::sqrt(std::max(ev[i], 0.0));
        return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
    }

    /// Declared diffusion matrix before any clamping (for PSD validation).
    Mat declared_diffusion(const Vec& x_raw) const {
        const Vec x = wrap_torus(x_raw);
        if (sigma_fn_ || form_ == DiffusionForm::Sigma) {
            const Mat s = sigma_at(x);
            return s * s.transpose();
        }
        const int d = dim_;
        Mat m(d, d);
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j) m(i, j) = diff_[i * d + j](x);
        return 0.5 * (m + m.transpose());
    }

    Vec drift_b(const Vec& x) const {
        if (b_fn_) return b_fn_(x);
        Vec v(dim_);
        for (int i = 0; i < dim_; ++i) v[i] = b_[i](x);
        return v;
    }

    Vec drift_c(const Vec& x) const {
        if (c_fn_) return c_fn_(x);
        Vec v(dim_);
        for (int i = 0; i < dim_; ++i) v[i] = c_[i](x);
        return v;
    }

    /// True if b vanishes identically (catalog models only).
    bool b_is_zero() const {
        if (b_fn_) return false;
        return std::all_of(b_.begin(), b_.end(), [](const ScalarField& f) { return f.is_zero(); });
    }

    /// Largest Fourier order across all catalog fields (0 for programmatic).
    int max_order() const {
        int m = 0;
        for (const auto* set : {&diff_, &b_, &c_})
            for (const auto& f : *set) m = std::max(m, f.max_order());
        return m;
    }

    /// Upper bound on sup |b| (catalog) or a sampled estimate (programmatic).
    double b_sup_bound() const {
        if (!b_fn_) {
            double s = 0.0;
            for (const auto& f : b_) s = std::max(s, f.sup_bound());
            return s;
        }
        double s = 0.0;
        RandomStream rs(0x5eed, 0, Lane::Design);
        Vec x(dim_);
        for (int n = 0; n < 4096; ++n) {
            for (int i = 0; i < dim_; ++i) x[i] = rs.uniform();
            s = std::max(s, drift_b(x).cwiseAbs().maxCoeff());
        }
        return s;
    }

    const std::vector<ScalarField>& diffusion_fields() const { return diff_; }
    const std::vector<ScalarField>& b_fields() const { return b_; }
    const std::vector<ScalarField>& c_fields() const { return c_; }

private:
    int dim_ = 1;
    DiffusionForm form_ = DiffusionForm::Sigma;
    std::vector<ScalarField> diff_, b_, c_;
    bool diagonal_ = true;
    MatrixFn sigma_fn_;
    VectorFn b_fn_, c_fn_;
};

// ---------------------------------------------------------------------------
// Domain
// ---------------------------------------------------------------------------

/// Bounded domain G: an open hyperrectangle or an open ball.
class Domain {
public:
    enum class Kind { Box, Ball };

    static Domain box(Vec lower, Vec upper) {
        if (lower.size() != upper.size() || lower.size() < 1 || lower.size() > kMaxDim)
            throw Error(ErrorCode::ConfigInvalid, "box bounds must have matching dimension 1..3");
        for (Eigen::Index i = 0; i < lower.size(); ++i)
            if (!(upper[i] > lower[i]))
                throw Error(ErrorCode::ConfigInvalid, "box upper bound must exceed lower bound");
        Domain g;
        g.kind_ = Kind::Box;
        g.lower_ = std::move(lower);
        g.upper_ = std::move(upper);
        return g;
    }

    static Domain ball(Vec center, double radius) {
        if (!(radius > 0.0)) throw Error(ErrorCode::ConfigInvalid, "ball radius must be positive");
        Domain g;
        g.kind_ = Kind::Ball;
        g.center_ = std::move(center);
        g.radius_ = radius;
        return g;
    }

    static Domain unit_interval() { return box(Vec::Zero(1), Vec::Ones(1)); }

    Kind kind() const { return kind_; }
    int dim() const { return static_cast<int>(kind_ == Kind::Box ? lower_.size() : center_.size()); }
    const Vec& lower() const { return lower_; }
    const Vec& upper() const { return upper_; }
    const Vec& center_point() const { return center_; }
    double radius() const { return radius_; }

    Vec reference_point() const { return kind_ == Kind::Box ? Vec(0.5 * (lower_ + upper_)) : center_; }

    double diameter() const {
        return kind_ == Kind::Box ? (upper_ - lower_).norm() : 2.0 * radius_;
    }

    /// Open-set membership.
    bool contains(const Vec& x) const {
        if (kind_ == Kind::Box) {
            for (Eigen::Index i = 0; i < x.size(); ++i)
                if (!(x[i] > lower_[i] && x[i] < upper_[i])) return false;
            return true;
        }
        return (x - center_).squaredNorm() < radius_ * radius_;
    }

    /// Closed-set membership; a path exits when it leaves the closure.
    bool in_closure(const Vec& x) const {
        if (kind_ == Kind::Box) {
            for (Eigen::Index i = 0; i < x.size(); ++i)
                if (x[i] < lower_[i] || x[i] > upper_[i]) return false;
            return true;
        }
        return (x - center_).squaredNorm() <= radius_ * radius_;
    }

    /// For x0 in the closure and x1 outside: fraction theta in [0, 1] of the
    /// segment x0 -> x1 at which it first meets the boundary.
    double crossing_fraction(const Vec& x0, const Vec& x1) const {
        const Vec dx = x1 - x0;
        if (kind_ == Kind::Box) {
            double theta = 1.0;
            for (Eigen::Index i = 0; i < x0.size(); ++i) {
                if (x1[i] < lower_[i] && dx[i] != 0.0)
                    theta = std::min(theta, (lower_[i] - x0[i]) / dx[i]);
                if (x1[i] > upper_[i] && dx[i] != 0.0)
                    theta = std::min(theta, (upper_[i] - x0[i]) / dx[i]);
            }
            return std::clamp(theta, 0.0, 1.0);
        }
        // |x0 - c + theta dx|^2 = r^2, root in [0, 1]
        const Vec p = x0 - center_;
        const double qa = dx.squaredNorm();
        const double qb = 2.0 * p.dot(dx);
        const double qc = p.squaredNorm() - radius_ * radius_;
        if (qa == 0.0) return 0.0;
        const double disc = std::max(qb * qb - 4.0 * qa * qc, 0.0);
        return std::clamp((-qb + std::sqrt(disc)) / (2.0 * qa), 0.0, 1.0);
    }

    /// Nearest point of the boundary.
    Vec project_to_boundary(const Vec& x) const {
        if (kind_ == Kind::Ball) {
            Vec p = x - center_;
            const double n = p.norm();
            if (n == 0.0) {
                p = Vec::Zero(x.size());
                p[0] = 1.0;
                return center_ + radius_ * p;
            }
            return center_ + (radius_ / n) * p;
        }
        Vec y = x;
        for (Eigen::Index i = 0; i < x.size(); ++i) y[i] = std::clamp(y[i], lower_[i], upper_[i]);
        if (!contains(y)) return y;  // already on a face
        Eigen::Index best = 0;
        bool to_lower = true;
        double dist = std::numeric_limits<double>::infinity();
        for (Eigen::Index i = 0; i < x.size(); ++i) {
            if (y[i] - lower_[i] < dist) { dist = y[i] - lower_[i]; best = i; to_lower = true; }
            if (upper_[i] - y[i] < dist) { dist = upper_[i] - y[i]; best = i; to_lower = false; }
        }
        y[best] = to_lower ? lower_[best] : upper_[best];
        return y;
    }

    /// Distance from x to the boundary (x inside).
    double distance_to_boundary(const Vec& x) const {
        if (kind_ == Kind::Ball) return radius_ - (x - center_).norm();
        double dist = std::numeric_limits<double>::infinity();
        for (Eigen::Index i = 0; i < x.size(); ++i)
            dist = std::min({dist, x[i] - lower_[i], upper_[i] - x[i]});
        return dist;
    }

    /// Smooth function positive in G and vanishing on the boundary.
    double bubble(const Vec& x) const {
        if (kind_ == Kind::Ball) return radius_ * radius_ - (x - center_).squaredNorm();
        double v = 1.0;
        for (Eigen::Index i = 0; i < x.size(); ++i) v *= (x[i] - lower_[i]) * (upper_[i] - x[i]);
        return v;
    }

    Vec bubble_gradient(const Vec& x) const {
        const auto d = x.size();
        Vec g(d);
        if (kind_ == Kind::Ball) return Vec(-2.0 * (x - center_));
        for (Eigen::Index i = 0; i < d; ++i) {
            double v = (upper_[i] - x[i]) - (x[i] - lower_[i]);
            for (Eigen::Index j = 0; j < d; ++j)
                if (j != i) v *= (x[j] - lower_[j]) * (upper_[j] - x[j]);
            g[i] = v;
        }
        return g;
    }

    /// Uniform sample in G.
    Vec sample(RandomStream& rs) const {
        const int d = dim();
        Vec x(d);
        if (kind_ == Kind::Box) {
            for (int i = 0; i < d; ++i) x[i] = lower_[i] + (upper_[i] - lower_[i]) * rs.uniform();
            return x;
        }
        do {
            for (int i = 0; i < d; ++i) x[i] = center_[i] + radius_ * (2.0 * rs.uniform() - 1.0);
        } while (!contains(x));
        return x;
    }

    /// Bounding box (ball: its circumscribed cube).
    std::pair<Vec, Vec> bounding_box() const {
        if (kind_ == Kind::Box) return {lower_, upper_};
        Vec r = Vec::Constant(center_.size(), radius_);
        return {Vec(center_ - r), Vec(center_ + r)};
    }

private:
    Kind kind_ = Kind::Box;
    Vec lower_, upper_, center_;
    double radius_ = 0.0;
};

// ---------------------------------------------------------------------------
// Boundary data and drivers
// ---------------------------------------------------------------------------

/// g(x) = constant + linear . x + quadratic |x|^2, or a user function.
class BoundaryFunction {
public:
    BoundaryFunction() = default;
    BoundaryFunction(double constant, Vec linear, double quadratic)
        : constant_(constant), linear_(std::move(linear)), quadratic_(quadratic) {}
    explicit BoundaryFunction(std::function<double(const Vec&)> fn,
                              std::function<Vec(const Vec&)> grad = {})
        : fn_(std::move(fn)), grad_(std::move(grad)) {}

    static BoundaryFunction constant_value(double c) { return BoundaryFunction(c, Vec(), 0.0); }

    double operator()(const Vec& x) const {
        if (fn_) return fn_(x);
        double v = constant_ + quadratic_ * x.squaredNorm();
        if (linear_.size() == x.size()) v += linear_.dot(x);
        return v;
    }

    /// Gradient of the smooth extension into G.
    Vec gradient(const Vec& x) const {
        if (fn_) {
            if (grad_) return grad_(x);
            Vec g(x.size());
            for (Eigen::Index i = 0; i < x.size(); ++i) {
                Vec xp = x, xm = x;
                const double step = 1e-6;
                xp[i] += step;
                xm[i] -= step;
                g[i] = (fn_(xp) - fn_(xm)) / (2.0 * step);
            }
            return g;
        }
        Vec g = 2.0 * quadratic_ * x;
        if (linear_.size() == x.size()) g += linear_;
        return g;
    }

    double constant() const { return constant_; }
    const Vec& linear() const { return linear_; }
    double quadratic() const { return quadratic_; }
    bool is_catalog() const { return !fn_; }

private:
    double constant_ = 0.0;
    Vec linear_;
    double quadratic_ = 0.0;
    std::function<double(const Vec&)> fn_;
    std::function<Vec(const Vec&)> grad_;
};

/// Parameters of the catalog driver family
///   f(xi, x, y, z) = s0 + s(xi) + s1 cos(k1 . x)
///                    - alpha y - beta sin(y) + kappa sin(w . z)
/// with xi the fast (torus) variable and x the slow position.
/// Closed-form constants: mu = -alpha + |beta|,
///   K = max(alpha + |beta|, kappa |w|, |s0| + sup|s| + |s1|).
struct DriverSpec {
    double source_constant = 0.0;
    ScalarField source_fast;
    double slow_amplitude = 0.0;
    Vec slow_wavevector;
    double reaction_linear = 0.0;
    double reaction_sine = 0.0;
    double gradient_amplitude = 0.0;
    Vec gradient_direction;
};

/// Semilinear driver f(xi, x, y, z) with declared constants mu (monotonicity
/// in y, negative) and K (Lipschitz in z and linear growth).
class Driver {
public:
    using ValueFn = std::function<double(const Vec& xi, const Vec& x, double y, const Vec& z)>;
    using DyFn = ValueFn;
    using DzFn = std::function<Vec(const Vec& xi, const Vec& x, double y, const Vec& z)>;

    Driver() : Driver(DriverSpec{}) {}

    explicit Driver(DriverSpec spec) : spec_(std::move(spec)), catalog_(true) {
        const double w_norm = spec_.gradient_direction.size() ? spec_.gradient_direction.norm() : 0.0;
        mu_ = -spec_.reaction_linear + std::abs(spec_.reaction_sine);
        K_ = std::max({spec_.reaction_linear + std::abs(spec_.reaction_sine),
                       std::abs(spec_.gradient_amplitude) * w_norm,
                       std::abs(spec_.source_constant) + spec_.source_fast.sup_bound() +
                           std::abs(spec_.slow_amplitude)});
        yz_independent_ = spec_.reaction_linear == 0.0 && spec_.reaction_sine == 0.0 &&
                          (spec_.gradient_amplitude == 0.0 || w_norm == 0.0);
        z_independent_ = spec_.gradient_amplitude == 0.0 || w_norm == 0.0;
        fast_independent_ = spec_.source_fast.is_zero();
    }

    /// Programmatic driver; constants are taken as declared (unchecked).
    Driver(ValueFn value, double mu, double K, bool yz_independent, DyFn dy = {}, DzFn dz = {})
        : value_(std::move(value)), dy_(std::move(dy)), dz_(std::move(dz)), mu_(mu), K_(K),
          yz_independent_(yz_independent), z_independent_(yz_independent) {}

    static Driver constant_source(double s) {
        DriverSpec spec;
        spec.source_constant = s;
        return Driver(spec);
    }

    static Driver linear_reaction(double alpha, double s0 = 0.0) {
        DriverSpec spec;
        spec.reaction_linear = alpha;
        spec.source_constant = s0;
        return Driver(spec);
    }

    double operator()(const Vec& xi, const Vec& x, double y, const Vec& z) const {
        if (!catalog_) return value_(xi, x, y, z);
        double v = spec_.source_constant - spec_.reaction_linear * y;
        if (!spec_.source_fast.is_zero()) v += spec_.source_fast(xi);
        if (spec_.slow_amplitude != 0.0) v += spec_.slow_amplitude * std::cos(kTwoPi * slow_phase(x));
        if (spec_.reaction_sine != 0.0) v -= spec_.reaction_sine * std::sin(y);
        if (!z_independent_) v += spec_.gradient_amplitude * std::sin(spec_.gradient_direction.dot(z));
        return v;
    }

    double dy(const Vec& xi, const Vec& x, double y, const Vec& z) const {
        if (!catalog_) {
            if (dy_) return dy_(xi, x, y, z);
            const double step = 1e-6 * std::max(1.0, std::abs(y));
            return (value_(xi, x, y + step, z) - value_(xi, x, y - step, z)) / (2.0 * step);
        }
        return -spec_.reaction_linear - spec_.reaction_sine * std::cos(y);
    }

    Vec dz(const Vec& xi, const Vec& x, double y, const Vec& z) const {
        if (!catalog_) {
            if (dz_) return dz_(xi, x, y, z);
            Vec g(z.size());
            for (Eigen::Index i = 0; i < z.size(); ++i) {
                Vec zp = z, zm = z;
                zp[i] += 1e-6;
                zm[i] -= 1e-6;
                g[i] = (value_(xi, x, y, zp) - value_(xi, x, y, zm)) / 2e-6;
            }
            return g;
        }
        if (z_independent_) return Vec::Zero(z.size());
        return Vec(spec_.gradient_amplitude * std::cos(spec_.gradient_direction.dot(z)) *
                   spec_.gradient_direction);
    }

    double mu() const { return mu_; }
    double K() const { return K_; }
    bool checked() const { return catalog_; }
    bool yz_independent() const { return yz_independent_; }
    bool z_independent() const { return z_independent_; }
    bool fast_independent() const { return catalog_ && fast_independent_; }
    const DriverSpec& spec() const { return spec_; }

private:
    double slow_phase(const Vec& x) const {
        if (spec_.slow_wavevector.size() != x.size()) return 0.0;
        return spec_.slow_wavevector.dot(x);
    }

    DriverSpec spec_;
    bool catalog_ = false;
    ValueFn value_;
    DyFn dy_;
    DzFn dz_;
    double mu_ = -1.0;
    double K_ = 1.0;
    bool yz_independent_ = false;
    bool z_independent_ = false;
    bool fast_independent_ = false;
};

/// Dirichlet problem data: G, g, f, discount exponent lambda and the scales
/// used in sweeps.
class DirichletProblem {
public:
    DirichletProblem(Domain domain, BoundaryFunction g, Driver f, double lambda,
                     std::vector<double> epsilons = {})
        : domain_(std::move(domain)), g_(std::move(g)), f_(std::move(f)), lambda_(lambda),
          epsilons_(std::move(epsilons)) {
        if (lambda_ == 0.0)
            throw Error(ErrorCode::ConfigInvalid, "discount exponent lambda must be nonzero");
        for (double e : epsilons_)
            if (!(e > 0.0)) throw Error(ErrorCode::ConfigInvalid, "epsilon values must be positive");
        margin_ = lambda_ - (2.0 * f_.mu() + f_.K() * f_.K());
    }

    const Domain& domain() const { return domain_; }
    const BoundaryFunction& g() const { return g_; }
    const Driver& driver() const { return f_; }
    double lambda() const { return lambda_; }
    const std::vector<double>& epsilons() const { return epsilons_; }

    /// lambda - (2 mu + K^2); positive iff the contraction condition holds.
    double lambda_margin() const { return margin_; }
    bool lambda_condition_holds() const { return margin_ > 0.0; }

    void require_lambda_condition() const {
        if (!lambda_condition_holds())
            throw Error(ErrorCode::ModelInvalid,
                        "lambda must exceed 2 mu + K^2 (margin " + std::to_string(margin_) + ")");
    }

private:
    Domain domain_;
    BoundaryFunction g_;
    Driver f_;
    double lambda_;
    std::vector<double> epsilons_;
    double margin_ = 0.0;
};

// ---------------------------------------------------------------------------
// Validation report
// ---------------------------------------------------------------------------

struct ValidationCheck {
    std::string name;
    bool pass = true;
    double residual = 0.0;
    double tolerance = 0.0;
    std::string note;
    /// Informational checks are reported but do not enter the conjunction.
    bool informational = false;
};

struct ValidationReport {
    std::vector<ValidationCheck> checks;

    bool overall() const {
        return std::all_of(checks.begin(), checks.end(),
                           [](const ValidationCheck& c) { return c.informational || c.pass; });
    }

    const ValidationCheck* find(const std::string& name) const {
        for (const auto& c : checks)
            if (c.name == name) return &c;
        return nullptr;
    }
};

}  // namespace phom
