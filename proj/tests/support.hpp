#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <vector>

namespace test_support {

struct MeanSe {
    double mean = 0.0;
    double se = 0.0;
};

inline MeanSe mean_se(const std::vector<double>& xs) {
    MeanSe r;
    const size_t n = xs.size();
    for (double x : xs) r.mean += x;
    r.mean /= static_cast<double>(n);
    double var = 0.0;
    for (double x : xs) var += (x - r.mean) * (x - r.mean);
    var /= static_cast<double>(n - 1);
    r.se = std::sqrt(var / static_cast<double>(n));
    return r;
}

inline double sample_variance(const std::vector<double>& xs) {
    const MeanSe ms = mean_se(xs);
    return ms.se * ms.se * static_cast<double>(xs.size());
}

/// Two-sample Kolmogorov-Smirnov p-value (asymptotic).
inline double ks_two_sample_p(std::vector<double> a, std::vector<double> b) {
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    const size_t n = a.size(), m = b.size();
    size_t i = 0, j = 0;
    double d = 0.0;
    while (i < n && j < m) {
        const double x = std::min(a[i], b[j]);
        while (i < n && a[i] <= x) ++i;
        while (j < m && b[j] <= x) ++j;
        d = std::max(d, std::abs(static_cast<double>(i) / n - static_cast<double>(j) / m));
    }
    const double ne = std::sqrt(static_cast<double>(n) * m / (n + m));
    const double lambda = (ne + 0.12 + 0.11 / ne) * d;
    double p = 0.0;
    for (int k = 1; k <= 100; ++k)
        p += 2.0 * (k % 2 == 1 ? 1.0 : -1.0) * std::exp(-2.0 * k * k * lambda * lambda);
    return std::clamp(p, 0.0, 1.0);
}

/// Adaptive Simpson quadrature, independent of the library's panels.
inline double adaptive_simpson(const std::function<double(double)>& f, double a, double b,
                               double tol = 1e-12, int depth = 24) {
    auto simpson = [&](double lo, double hi) {
        return (hi - lo) / 6.0 * (f(lo) + 4.0 * f(0.5 * (lo + hi)) + f(hi));
    };
    std::function<double(double, double, double, int)> rec = [&](double lo, double hi,
                                                                 double whole, int d) -> double {
        const double mid = 0.5 * (lo + hi);
        const double left = simpson(lo, mid), right = simpson(mid, hi);
        if (d <= 0 || std::abs(left + right - whole) < 15.0 * tol) return left + right;
        return rec(lo, mid, left, d - 1) + rec(mid, hi, right, d - 1);
    };
    return rec(a, b, simpson(a, b), depth);
}

/// Least-squares slope of log(y) against log(x).
inline double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    const int n = static_cast<int>(x.size());
    for (int i = 0; i < n; ++i) {
        const double lx = std::log(x[i]), ly = std::log(y[i]);
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

inline double spearman_rho(const std::vector<double>& xs) {
    // rank correlation of the sequence against 0,1,2,...
    const int n = static_cast<int>(xs.size());
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return xs[a] < xs[b]; });
    std::vector<double> rank(n);
    for (int r = 0; r < n; ++r) rank[order[r]] = r;
    double d2 = 0.0;
    for (int i = 0; i < n; ++i) d2 += (rank[i] - i) * (rank[i] - i);
    return 1.0 - 6.0 * d2 / (static_cast<double>(n) * (n * n - 1));
}

}  // namespace test_support
