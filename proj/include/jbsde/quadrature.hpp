#pragma once

#include <span>
#include <vector>

namespace jbsde {

/// Nodes and weights on [-1,1].
struct GaussLegendreRule {
    std::vector<double> x;
    std::vector<double> w;
};

/// Gauss-Legendre rule with n nodes, computed by Newton iteration on the
/// Legendre recurrence. Cached internally; callers get a reference valid for
/// the program lifetime.
const GaussLegendreRule& gauss_legendre(int n);

/// One integration panel: affinely mapped nodes with combined weights.
struct QuadPanel {
    std::vector<double> z;
    std::vector<double> w;
};

/// Map an n-node rule onto [a,b].
QuadPanel map_panel(int n, double a, double b);

/// Integrate f over [a,b] with an n-node rule.
template <typename F>
double integrate_panel(const F& f, double a, double b, int n) {
    const GaussLegendreRule& rule = gauss_legendre(n);
    const double mid = 0.5 * (a + b), half = 0.5 * (b - a);
    double s = 0.0;
    for (size_t i = 0; i < rule.x.size(); ++i) s += rule.w[i] * f(mid + half * rule.x[i]);
    return s * half;
}

}  // namespace jbsde
