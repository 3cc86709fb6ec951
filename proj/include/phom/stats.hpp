#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace phom {

/// Ranks with ties averaged, 1-based.
inline std::vector<double> average_ranks(const std::vector<double>& v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    std::size_t i = 0;
    while (i < idx.size()) {
        std::size_t j = i;
        while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
        const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) r[idx[k]] = rank;
        i = j + 1;
    }
    return r;
}

/// Spearman rank correlation (Pearson correlation of average ranks).
/// Returns 0 when either input is constant or fewer than two samples exist.
inline double spearman(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2) return 0.0;
    const auto rx = average_ranks(x), ry = average_ranks(y);
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
    const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) return 0.0;
    return sxy / std::sqrt(sxx * syy);
}

struct KsResult {
    double statistic = 0.0;
    /// Critical value at the requested false-alarm rate (asymptotic).
    double critical = 0.0;
    bool reject = false;
};

/// Two-sample Kolmogorov-Smirnov test. The asymptotic critical value
/// c(alpha) sqrt((n + m) / (n m)) with c(alpha) = sqrt(-ln(alpha / 2) / 2)
/// gives a false-alarm rate of about alpha under the null.
inline KsResult ks_two_sample(std::vector<double> a, std::vector<double> b, double alpha = 1e-3) {
    KsResult r;
    if (a.empty() || b.empty()) return r;
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    std::size_t i = 0, j = 0;
    const double n = static_cast<double>(a.size()), m = static_cast<double>(b.size());
    while (i < a.size() && j < b.size()) {
        const double v = std::min(a[i], b[j]);
        while (i < a.size() && a[i] == v) ++i;
        while (j < b.size() && b[j] == v) ++j;
        r.statistic = std::max(r.statistic, std::abs(static_cast<double>(i) / n - static_cast<double>(j) / m));
    }
    r.critical = std::sqrt(-0.5 * std::log(alpha / 2.0)) * std::sqrt((n + m) / (n * m));
    r.reject = r.statistic > r.critical;
    return r;
}

/// Ordinary least squares y = intercept + slope x with the coefficient of
/// determination.
struct LineFit {
    double intercept = 0.0;
    double slope = 0.0;
    double r_squared = 0.0;
    std::size_t n = 0;
};

/// Weighted least squares; an empty weight vector means unit weights.
inline LineFit fit_line(const std::vector<double>& x, const std::vector<double>& y,
                        const std::vector<double>& w = {}) {
    LineFit f;
    f.n = x.size();
    if (x.size() < 2 || x.size() != y.size() || (!w.empty() && w.size() != x.size())) return f;
    auto weight = [&](std::size_t i) { return w.empty() ? 1.0 : w[i]; };
    double sw = 0.0, mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sw += weight(i);
        mx += weight(i) * x[i];
        my += weight(i) * y[i];
    }
    if (sw <= 0.0) return f;
    mx /= sw;
    my /= sw;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += weight(i) * (x[i] - mx) * (y[i] - my);
        sxx += weight(i) * (x[i] - mx) * (x[i] - mx);
        syy += weight(i) * (y[i] - my) * (y[i] - my);
    }
    if (sxx == 0.0) return f;
    f.slope = sxy / sxx;
    f.intercept = my - f.slope * mx;
    f.r_squared = syy > 0.0 ? (sxy * sxy) / (sxx * syy) : 0.0;
    return f;
}

}  // namespace phom
