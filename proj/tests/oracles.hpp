#pragma once

// Independent 1D reference values built from fine midpoint quadrature. None
// of these use the library's grid operators.

#include <cmath>
#include <functional>
#include <vector>

namespace oracle {

using Fn = std::function<double(double)>;

struct Cell1d {
    int n = 0;
    std::vector<double> x;     // quadrature nodes (midpoints)
    std::vector<double> m;     // normalized invariant density
    std::vector<double> w;     // 1 + bhat'
    std::vector<double> bhat;  // mu-centred corrector
    double A = 0.0;
    double C = 0.0;

    /// Linear interpolation of a node array at a torus point.
    double at(const std::vector<double>& f, double t) const {
        t -= std::floor(t);
        const double s = t * n - 0.5;
        const double fl = std::floor(s);
        const int i = static_cast<int>(fl);
        const double th = s - fl;
        const int i0 = ((i % n) + n) % n, i1 = (i0 + 1) % n;
        return (1.0 - th) * f[i0] + th * f[i1];
    }
};

/// Invariant density m ~ exp(int 2b/a) / a, corrector with 1 + bhat' =
/// kappa / (a m), A = kappa, C = kappa int c / a, where kappa = 1 / int 1/(a m).
/// Requires a centered drift (zero stationary flux in 1D).
inline Cell1d cell_1d(const Fn& a, const Fn& b, const Fn& c, int n = 200000) {
    Cell1d o;
    o.n = n;
    const double h = 1.0 / n;
    o.x.resize(n);
    std::vector<double> phi(n);
    // phi(x) = int_0^x 2b/a by the trapezoid rule on a staggered grid.
    double acc = 0.0;
    double prev = 2.0 * b(0.0) / a(0.0);
    for (int i = 0; i < n; ++i) {
        o.x[i] = (i + 0.5) * h;
        const double mid = 2.0 * b(o.x[i]) / a(o.x[i]);
        acc += 0.25 * h * (prev + mid);
        phi[i] = acc;
        const double right = 2.0 * b((i + 1) * h) / a((i + 1) * h);
        acc += 0.25 * h * (mid + right);
        prev = right;
    }
    o.m.resize(n);
    double z = 0.0;
    for (int i = 0; i < n; ++i) {
        o.m[i] = std::exp(phi[i]) / a(o.x[i]);
        z += o.m[i] * h;
    }
    for (double& v : o.m) v /= z;
    double inv = 0.0;
    for (int i = 0; i < n; ++i) inv += h / (a(o.x[i]) * o.m[i]);
    const double kappa = 1.0 / inv;
    o.A = kappa;
    o.w.resize(n);
    double ca = 0.0;
    for (int i = 0; i < n; ++i) {
        o.w[i] = kappa / (a(o.x[i]) * o.m[i]);
        ca += h * c(o.x[i]) / a(o.x[i]);
    }
    o.C = kappa * ca;
    o.bhat.resize(n);
    double s = 0.0;
    for (int i = 0; i < n; ++i) {
        s += (o.w[i] - 1.0) * h;
        o.bhat[i] = s - 0.5 * (o.w[i] - 1.0) * h;
    }
    double mean = 0.0;
    for (int i = 0; i < n; ++i) mean += o.bhat[i] * o.m[i] * h;
    for (double& v : o.bhat) v -= mean;
    return o;
}

/// E_x exp(lambda tau) for Brownian motion with variance rate A on (0, 1).
inline double exit_exponential(double x, double lambda, double A = 1.0) {
    const double k = std::sqrt(2.0 * lambda / A);
    return std::cos(k * (x - 0.5)) / std::cos(0.5 * k);
}

/// Solution of (A/2) u'' - u = 0 on (0, 1) with u(0) = u(1) = 1.
inline double cosh_solution(double x, double A = 1.0) {
    const double k = std::sqrt(2.0 / A);
    return std::cosh(k * (x - 0.5)) / std::cosh(0.5 * k);
}

}  // namespace oracle
