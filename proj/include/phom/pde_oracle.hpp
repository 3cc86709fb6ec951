#pragma once

#include "phom/coefficients.hpp"
#include "phom/core.hpp"
#include "phom/ergodic_cell.hpp"
#include "phom/grid_operator.hpp"

#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <vector>

namespace phom {

/// Nodal solution on a uniform grid over the closure of a box, N intervals
/// per axis ((N + 1)^d nodes, boundary included).
struct GridSolution {
    int dim = 1;
    int N = 0;
    Vec lower;
    Vec upper;
    std::vector<double> values;
    /// || F(u) ||_inf divided by (1 + largest diagonal rate).
    double residual_norm = 0.0;
    int newton_iters = 0;

    std::size_t nodes_per_axis() const { return static_cast<std::size_t>(N) + 1; }

    std::size_t size() const {
        std::size_t n = 1;
        for (int i = 0; i < dim; ++i) n *= nodes_per_axis();
        return n;
    }

    double spacing(int axis) const { return (upper[axis] - lower[axis]) / N; }

    std::array<int, kMaxDim> multi_index(std::size_t flat) const {
        std::array<int, kMaxDim> m{0, 0, 0};
        for (int i = 0; i < dim; ++i) {
            m[i] = static_cast<int>(flat % nodes_per_axis());
            flat /= nodes_per_axis();
        }
        return m;
    }

    std::size_t flat_index(const std::array<int, kMaxDim>& m) const {
        std::size_t f = 0;
        for (int i = dim - 1; i >= 0; --i) f = f * nodes_per_axis() + static_cast<std::size_t>(m[i]);
        return f;
    }

    Vec node(std::size_t flat) const {
        const auto m = multi_index(flat);
        Vec x(dim);
        for (int i = 0; i < dim; ++i) x[i] = lower[i] + m[i] * spacing(i);
        return x;
    }

    bool on_boundary(std::size_t flat) const {
        const auto m = multi_index(flat);
        for (int i = 0; i < dim; ++i)
            if (m[i] == 0 || m[i] == N) return true;
        return false;
    }

    /// Multilinear interpolation at a point of the closed box.
    double operator()(const Vec& x) const {
        std::array<int, kMaxDim> base{0, 0, 0};
        std::array<double, kMaxDim> frac{0, 0, 0};
        for (int i = 0; i < dim; ++i) {
            double s = (x[i] - lower[i]) / spacing(i);
            s = std::clamp(s, 0.0, static_cast<double>(N));
            int b = std::min(static_cast<int>(std::floor(s)), N - 1);
            base[i] = b;
            frac[i] = s - b;
        }
        double v = 0.0;
        for (int corner = 0; corner < (1 << dim); ++corner) {
            double w = 1.0;
            auto idx = base;
            for (int i = 0; i < dim; ++i) {
                const bool up = (corner >> i) & 1;
                idx[i] += up ? 1 : 0;
                w *= up ? frac[i] : 1.0 - frac[i];
            }
            if (w != 0.0) v += w * values[flat_index(idx)];
        }
        return v;
    }
};

/// CSV with columns x_1..x_d,value.
inline void write_grid_csv(std::ostream& os, const GridSolution& s) {
    for (int i = 0; i < s.dim; ++i) os << "x_" << (i + 1) << ',';
    os << "value\n";
    os.precision(17);
    for (std::size_t p = 0; p < s.size(); ++p) {
        const Vec x = s.node(p);
        for (int i = 0; i < s.dim; ++i) os << x[i] << ',';
        os << s.values[p] << '\n';
    }
}

struct NewtonParams {
    double tol = 1e-10;
    int max_iters = 50;
    double damping_floor = 0x1.0p-20;
};

/// Local data of a semilinear operator (1/2) a : D^2 u + v . grad u
/// + f(xi, x, u, grad u * zmap) at one node.
struct NodeCoefficients {
    Mat a;
    Vec v;
    Mat zmap;
    Vec xi;
};

namespace detail {

template <typename Local, typename DriverLike>
GridSolution solve_semilinear(const Domain& G, const BoundaryFunction& g, int N, const Local& local,
                              const DriverLike& f, const NewtonParams& np) {
    if (G.kind() != Domain::Kind::Box)
        throw Error(ErrorCode::DomainInvalid, "the finite-difference oracle supports box domains only");
    if (G.dim() > 2) throw Error(ErrorCode::ConfigInvalid, "the finite-difference oracle supports d <= 2");
    if (N < 2) throw Error(ErrorCode::ConfigInvalid, "grid needs at least two intervals per axis");

    GridSolution s;
    s.dim = G.dim();
    s.N = N;
    s.lower = G.lower();
    s.upper = G.upper();
    const int d = s.dim;
    const std::size_t n = s.size();

    // Interior unknown numbering.
    std::vector<int> unknown(n, -1);
    std::vector<std::size_t> node_of;
    for (std::size_t p = 0; p < n; ++p)
        if (!s.on_boundary(p)) {
            unknown[p] = static_cast<int>(node_of.size());
            node_of.push_back(p);
        }
    const int m = static_cast<int>(node_of.size());

    s.values.assign(n, 0.0);
    for (std::size_t p = 0; p < n; ++p)
        if (s.on_boundary(p)) s.values[p] = g(s.node(p));

    // Linear part: rates to neighbours, and per-node data for the driver.
    struct Link {
        std::size_t q;
        double rate;
    };
    std::vector<std::vector<Link>> links(m);
    std::vector<NodeCoefficients> coeff(m);
    std::vector<Vec> xs(m);
    double max_diag = 0.0;
    bool uniform_h = true;
    for (int i = 1; i < d; ++i) uniform_h = uniform_h && std::abs(s.spacing(i) - s.spacing(0)) < 1e-14 * s.spacing(0);
    for (int k = 0; k < m; ++k) {
        const std::size_t p = node_of[k];
        xs[k] = s.node(p);
        coeff[k] = local(xs[k]);
        const auto mi = s.multi_index(p);
        double diag = 0.0;
        NodeStencil st;
        if (uniform_h) {
            st = node_stencil(coeff[k].a, coeff[k].v, s.spacing(0));
        } else {
            // Rescale to unit spacing per axis: a_ij / (h_i h_j), v_i / h_i.
            Mat a = coeff[k].a;
            Vec v = coeff[k].v;
            for (int i = 0; i < d; ++i) {
                v[i] /= s.spacing(i);
                for (int j = 0; j < d; ++j) a(i, j) /= s.spacing(i) * s.spacing(j);
            }
            st = node_stencil(a, v, 1.0);
        }
        for (const auto& e : st.entries) {
            if (e.rate == 0.0) continue;
            auto q = mi;
            for (int i = 0; i < d; ++i) q[i] += e.offset[i];
            links[k].push_back({s.flat_index(q), e.rate});
            diag += e.rate;
        }
        max_diag = std::max(max_diag, diag);
    }
    const double scale = 1.0 + max_diag;

    auto gradient = [&](int k, const std::vector<double>& u) {
        const auto mi = s.multi_index(node_of[k]);
        Vec gr(d);
        for (int i = 0; i < d; ++i) {
            auto qp = mi, qm = mi;
            qp[i] += 1;
            qm[i] -= 1;
            gr[i] = (u[s.flat_index(qp)] - u[s.flat_index(qm)]) / (2.0 * s.spacing(i));
        }
        return gr;
    };

    auto residual = [&](const std::vector<double>& u, Eigen::VectorXd& F) {
        F.resize(m);
        for (int k = 0; k < m; ++k) {
            const std::size_t p = node_of[k];
            double r = 0.0;
            for (const auto& l : links[k]) r += l.rate * (u[l.q] - u[p]);
            const Vec z = (gradient(k, u).transpose() * coeff[k].zmap).transpose();
            r += f(coeff[k].xi, xs[k], u[p], z);
            F[k] = r;
        }
    };

    Eigen::VectorXd F;
    residual(s.values, F);
    double norm = F.cwiseAbs().maxCoeff();
    Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
    std::vector<Eigen::Triplet<double>> trip;
    int it = 0;
    while (norm / scale > np.tol) {
        if (it >= np.max_iters)
            throw Error(ErrorCode::NewtonDiverged, "Newton iteration limit reached (scaled residual " +
                                                       std::to_string(norm / scale) + ")");
        ++it;
        trip.clear();
        for (int k = 0; k < m; ++k) {
            const std::size_t p = node_of[k];
            double diag = 0.0;
            for (const auto& l : links[k]) {
                diag -= l.rate;
                if (unknown[l.q] >= 0) trip.emplace_back(k, unknown[l.q], l.rate);
            }
            const Vec gr = gradient(k, s.values);
            const Vec z = (gr.transpose() * coeff[k].zmap).transpose();
            diag += f.dy(coeff[k].xi, xs[k], s.values[p], z);
            trip.emplace_back(k, k, diag);
            // d f / d(grad u)_i = (zmap f_z)_i, then the central difference.
            const Vec fz = f.dz(coeff[k].xi, xs[k], s.values[p], z);
            if (fz.size() == d && fz.cwiseAbs().maxCoeff() > 0.0) {
                const Vec dg = coeff[k].zmap * fz;
                const auto mi = s.multi_index(p);
                for (int i = 0; i < d; ++i) {
                    if (dg[i] == 0.0) continue;
                    auto qp = mi, qm = mi;
                    qp[i] += 1;
                    qm[i] -= 1;
                    const int up = unknown[s.flat_index(qp)], um = unknown[s.flat_index(qm)];
                    const double c = dg[i] / (2.0 * s.spacing(i));
                    if (up >= 0) trip.emplace_back(k, up, c);
                    if (um >= 0) trip.emplace_back(k, um, -c);
                }
            }
        }
        Eigen::SparseMatrix<double> J(m, m);
        J.setFromTriplets(trip.begin(), trip.end());
        J.makeCompressed();
        if (it == 1) lu.analyzePattern(J);
        lu.factorize(J);
        if (lu.info() != Eigen::Success)
            throw Error(ErrorCode::NewtonDiverged, "singular Newton Jacobian");
        const Eigen::VectorXd delta = lu.solve(-F);

        double step = 1.0;
        std::vector<double> trial = s.values;
        Eigen::VectorXd Ft;
        while (true) {
            for (int k = 0; k < m; ++k) trial[node_of[k]] = s.values[node_of[k]] + step * delta[k];
            residual(trial, Ft);
            const double tn = Ft.cwiseAbs().maxCoeff();
            if (tn < norm || tn / scale <= np.tol) {
                norm = tn;
                break;
            }
            step *= 0.5;
            if (step < np.damping_floor)
                throw Error(ErrorCode::NewtonDiverged, "line search reached the damping floor (scaled residual " +
                                                           std::to_string(norm / scale) + ")");
        }
        s.values.swap(trial);
        F = Ft;
        const double dmax = step * delta.cwiseAbs().maxCoeff();
        double umax = 0.0;
        for (double v : s.values) umax = std::max(umax, std::abs(v));
        if (dmax <= 1e-14 * (1.0 + umax)) break;
    }
    s.residual_norm = norm / scale;
    s.newton_iters = it;
    return s;
}

/// Adapter exposing the averaged driver with the (xi, x, y, z) signature.
struct AveragedDriverAdapter {
    const AveragedDriver* fbar;
    double operator()(const Vec&, const Vec& x, double y, const Vec& z) const { return (*fbar)(x, y, z); }
    double dy(const Vec&, const Vec& x, double y, const Vec& z) const { return fbar->dy(x, y, z); }
    Vec dz(const Vec&, const Vec& x, double y, const Vec& z) const { return fbar->dz(x, y, z); }
};

}  // namespace detail

/// Finite-difference solve of the oscillating problem
/// (1/2) a(x/eps) : D^2 u + (b/eps + c)(x/eps) . grad u
///   + f(x/eps, x, u, grad u sigma(x/eps)) = 0 in G, u = g on the boundary.
inline GridSolution solve_oscillating(const PeriodicModel& model, const DirichletProblem& problem, double eps, int N,
                                      const NewtonParams& np = {}) {
    if (!(eps > 0.0)) throw Error(ErrorCode::ConfigInvalid, "eps must be positive");
    const Domain& G = problem.domain();
    if (G.dim() != model.dim()) throw Error(ErrorCode::ConfigInvalid, "model and domain dimensions differ");
    double min_extent = std::numeric_limits<double>::infinity();
    if (G.kind() == Domain::Kind::Box)
        for (int i = 0; i < G.dim(); ++i) min_extent = std::min(min_extent, G.upper()[i] - G.lower()[i]);
    const double cells_per_period = N * eps / (G.kind() == Domain::Kind::Box ? min_extent : 1.0);
    if (cells_per_period < 32.0)
        throw Error(ErrorCode::Resolution, "N * eps = " + std::to_string(cells_per_period) +
                                               " cells per period; at least 32 are required");
    auto local = [&](const Vec& x) {
        NodeCoefficients nc;
        nc.xi = wrap_torus(Vec(x / eps));
        const Coefficients k = model.eval(nc.xi);
        nc.a = k.a;
        nc.v = k.b / eps + k.c;
        nc.zmap = k.sigma;
        return nc;
    };
    return detail::solve_semilinear(G, problem.g(), N, local, problem.driver(), np);
}

/// Finite-difference solve of the homogenized problem
/// (1/2) A : D^2 u + C . grad u + fbar(x, u, grad u) = 0.
inline GridSolution solve_effective(const EffectiveModel& effective, const DirichletProblem& problem, int N,
                                    const NewtonParams& np = {}) {
    if (!effective.spd) throw Error(ErrorCode::NotSpd, "effective matrix A is not positive definite");
    const Domain& G = problem.domain();
    const int d = G.dim();
    if (effective.A.rows() != d) throw Error(ErrorCode::ConfigInvalid, "effective model and domain dimensions differ");
    auto local = [&](const Vec&) {
        NodeCoefficients nc;
        nc.a = effective.A;
        nc.v = effective.C;
        nc.zmap = Mat::Identity(d, d);
        nc.xi = Vec::Zero(d);
        return nc;
    };
    const detail::AveragedDriverAdapter f{&effective.fbar};
    return detail::solve_semilinear(G, problem.g(), N, local, f, np);
}

/// Solve with constant coefficients A, C and a driver of (x, y, z) with
/// z = grad u (used for closed-form checks).
template <typename DriverLike>
GridSolution solve_constant(const Mat& A, const Vec& C, const DriverLike& f, const Domain& G,
                            const BoundaryFunction& g, int N, const NewtonParams& np = {}) {
    const int d = G.dim();
    auto local = [&](const Vec&) {
        NodeCoefficients nc;
        nc.a = A;
        nc.v = C;
        nc.zmap = Mat::Identity(d, d);
        nc.xi = Vec::Zero(d);
        return nc;
    };
    return detail::solve_semilinear(G, g, N, local, f, np);
}

}  // namespace phom
