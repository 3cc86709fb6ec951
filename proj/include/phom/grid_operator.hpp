#pragma once

#include "phom/coefficients.hpp"
#include "phom/core.hpp"

#include <Eigen/Sparse>

#include <array>
#include <cmath>
#include <vector>

namespace phom {

/// Uniform cell-centred grid on the d-torus, N cells per axis.
struct TorusGrid {
    int dim = 1;
    int N = 64;

    std::size_t size() const {
        std::size_t n = 1;
        for (int i = 0; i < dim; ++i) n *= static_cast<std::size_t>(N);
        return n;
    }
    double spacing() const { return 1.0 / N; }

    std::array<int, kMaxDim> multi_index(std::size_t flat) const {
        std::array<int, kMaxDim> m{0, 0, 0};
        for (int i = 0; i < dim; ++i) {
            m[i] = static_cast<int>(flat % static_cast<std::size_t>(N));
            flat /= static_cast<std::size_t>(N);
        }
        return m;
    }

    std::size_t flat_index(std::array<int, kMaxDim> m) const {
        std::size_t f = 0;
        for (int i = dim - 1; i >= 0; --i) {
            int v = m[i] % N;
            if (v < 0) v += N;
            f = f * static_cast<std::size_t>(N) + static_cast<std::size_t>(v);
        }
        return f;
    }

    Vec center(std::size_t flat) const {
        const auto m = multi_index(flat);
        Vec x(dim);
        for (int i = 0; i < dim; ++i) x[i] = (m[i] + 0.5) / N;
        return x;
    }

    /// Cell containing a torus point.
    std::size_t locate(const Vec& x_raw) const {
        const Vec x = wrap_torus(x_raw);
        std::array<int, kMaxDim> m{0, 0, 0};
        for (int i = 0; i < dim; ++i) m[i] = std::min(N - 1, static_cast<int>(x[i] * N));
        return flat_index(m);
    }

    bool operator==(const TorusGrid&) const = default;
};

/// Bernoulli function z / (e^z - 1).
inline double bernoulli(double z) {
    if (std::abs(z) < 1e-8) return 1.0 - 0.5 * z;
    if (z > 700.0) return 0.0;
    if (z < -700.0) return -z;
    return z / std::expm1(z);
}

/// Exponentially fitted (Scharfetter-Gummel) rates for
/// D u'' + v u' on spacing h: returns (rate to +h, rate to -h). Both are
/// nonnegative, their difference is v / h, and the scheme reduces to pure
/// upwinding as D -> 0.
inline std::pair<double, double> fitted_rates(double D, double v, double h) {
    if (D <= 0.0) return {std::max(v, 0.0) / h, std::max(-v, 0.0) / h};
    const double pe = v * h / D;
    const double base = D / (h * h);
    return {base * bernoulli(-pe), base * bernoulli(pe)};
}

/// Neighbour offset and jump rate of the monotone stencil at one node.
struct StencilEntry {
    std::array<int, kMaxDim> offset{0, 0, 0};
    double rate = 0.0;
};

struct NodeStencil {
    std::vector<StencilEntry> entries;
    /// False if a cross-diffusion term exceeded the diagonal (rate clamped).
    bool monotone = true;
};

/// Stencil of (1/2) a : D^2 + v . grad at one node with spacing h.
/// Axis rates use the fitted scheme with D_i = (a_ii - sum_{j != i} |a_ij|)/2;
/// off-diagonal terms jump along the diagonal matching the sign of a_ij.
/// Every rate is nonnegative, so the assembled operator is a Markov
/// generator (M-matrix) even where a vanishes.
inline NodeStencil node_stencil(const Mat& a, const Vec& v, double h) {
    const int d = static_cast<int>(v.size());
    NodeStencil s;
    s.entries.reserve(2 * d + 2 * d * (d - 1));
    for (int i = 0; i < d; ++i) {
        double cross = 0.0;
        for (int j = 0; j < d; ++j)
            if (j != i) cross += std::abs(a(i, j));
        double D = 0.5 * (a(i, i) - cross);
        if (D < -1e-12 * std::max(1.0, a(i, i))) s.monotone = false;
        D = std::max(D, 0.0);
        auto [rp, rm] = fitted_rates(D, v[i], h);
        StencilEntry ep, em;
        ep.offset[i] = 1;
        ep.rate = rp;
        em.offset[i] = -1;
        em.rate = rm;
        s.entries.push_back(ep);
        s.entries.push_back(em);
    }
    for (int i = 0; i < d; ++i)
        for (int j = i + 1; j < d; ++j) {
            const double aij = 0.5 * (a(i, j) + a(j, i));
            if (aij == 0.0) continue;
            const double r = std::abs(aij) / (2.0 * h * h);
            const int sj = aij > 0.0 ? 1 : -1;
            StencilEntry e1, e2;
            e1.offset[i] = 1;
            e1.offset[j] = sj;
            e2.offset[i] = -1;
            e2.offset[j] = -sj;
            e1.rate = e2.rate = r;
            s.entries.push_back(e1);
            s.entries.push_back(e2);
        }
    return s;
}

/// Discrete generator of the torus process dX = (b + eps c) dt + sigma dB on
/// a cell-centred grid: (Q u)_p = sum_q r_pq (u_q - u_p).
struct TorusGenerator {
    Eigen::SparseMatrix<double> Q;
    bool monotone = true;
    double max_rate = 0.0;
};

inline TorusGenerator build_torus_generator(const PeriodicModel& model, double eps, const TorusGrid& grid) {
    const std::size_t n = grid.size();
    const double h = grid.spacing();
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(n * (2 * grid.dim + 1 + 2 * grid.dim * (grid.dim - 1)));
    TorusGenerator gen;
    for (std::size_t p = 0; p < n; ++p) {
        const Vec x = grid.center(p);
        const Coefficients k = model.eval(x);
        Vec v = k.b;
        if (eps != 0.0) v += eps * k.c;
        const NodeStencil st = node_stencil(k.a, v, h);
        gen.monotone = gen.monotone && st.monotone;
        const auto m = grid.multi_index(p);
        double diag = 0.0;
        for (const auto& e : st.entries) {
            if (e.rate == 0.0) continue;
            std::array<int, kMaxDim> q = m;
            for (int i = 0; i < grid.dim; ++i) q[i] += e.offset[i];
            const std::size_t qf = grid.flat_index(q);
            if (qf == p) continue;  // N = 1 degenerate wrap
            trip.emplace_back(static_cast<int>(p), static_cast<int>(qf), e.rate);
            diag -= e.rate;
            gen.max_rate = std::max(gen.max_rate, e.rate);
        }
        trip.emplace_back(static_cast<int>(p), static_cast<int>(p), diag);
    }
    gen.Q.resize(static_cast<int>(n), static_cast<int>(n));
    gen.Q.setFromTriplets(trip.begin(), trip.end());
    gen.Q.makeCompressed();
    return gen;
}

/// Number of closed communicating classes of the jump chain with rates
/// above `threshold`. This equals the dimension of the generator's
/// stationary kernel.
inline std::size_t closed_class_count(const Eigen::SparseMatrix<double>& Q, double threshold) {
    const int n = static_cast<int>(Q.rows());
    // Row-wise adjacency.
    std::vector<std::vector<int>> adj(n);
    for (int col = 0; col < Q.outerSize(); ++col)
        for (Eigen::SparseMatrix<double>::InnerIterator it(Q, col); it; ++it)
            if (it.row() != it.col() && it.value() > threshold) adj[it.row()].push_back(static_cast<int>(it.col()));

    // Iterative Tarjan.
    std::vector<int> index(n, -1), low(n, 0), comp(n, -1), stack;
    std::vector<char> on_stack(n, 0);
    std::vector<std::pair<int, std::size_t>> call;
    int counter = 0, n_comp = 0;
    for (int root = 0; root < n; ++root) {
        if (index[root] != -1) continue;
        call.emplace_back(root, 0);
        while (!call.empty()) {
            auto& [v, pos] = call.back();
            if (pos == 0 && index[v] == -1) {
                index[v] = low[v] = counter++;
                stack.push_back(v);
                on_stack[v] = 1;
            }
            if (pos < adj[v].size()) {
                const int w = adj[v][pos++];
                if (index[w] == -1) {
                    call.emplace_back(w, 0);
                } else if (on_stack[w]) {
                    low[v] = std::min(low[v], index[w]);
                }
                continue;
            }
            if (low[v] == index[v]) {
                int w;
                do {
                    w = stack.back();
                    stack.pop_back();
                    on_stack[w] = 0;
                    comp[w] = n_comp;
                } while (w != v);
                ++n_comp;
            }
            const int finished = v;
            call.pop_back();
            if (!call.empty()) {
                const int parent = call.back().first;
                low[parent] = std::min(low[parent], low[finished]);
            }
        }
    }
    std::vector<char> has_exit(n_comp, 0);
    for (int v = 0; v < n; ++v)
        for (int w : adj[v])
            if (comp[v] != comp[w]) has_exit[comp[v]] = 1;
    std::size_t closed = 0;
    for (int c = 0; c < n_comp; ++c) closed += has_exit[c] ? 0 : 1;
    return closed;
}

}  // namespace phom
