#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "jbsde/common.hpp"
#include "jbsde/rng.hpp"

namespace jbsde::levy {

/// Jumps of one time interval: the number of arrivals and their sizes.
struct JumpRecord {
    int interval_index = 0;
    std::vector<Vec> sizes;
    int count() const { return static_cast<int>(sizes.size()); }
};

enum class Region { All, Ball, Complement };

/// Small-jump truncation summary at level epsilon.
struct TruncationStats {
    double epsilon = 0.0;
    double big_mass = 0.0;             // mass of {|z| > eps}
    double small_second_moment = 0.0;  // integral of |z|^2 over {|z| <= eps}
    Mat sigma_eps;                     // integral of z z^T over {|z| <= eps}
    Mat sigma_eps_sqrt;                // symmetric PSD square root
};

/// Fixed quadrature node for nu-integrals (atom or weighted density node).
struct QuadNode {
    Vec z;
    double w = 0.0;
};

/// Immutable Levy measure: moment integrals, jump sampling and small-jump
/// truncation. Copies share state and are safe to use across threads; all
/// sampling goes through an explicit generator.
class LevyMeasure {
public:
    /// Empty measure (no atoms, zero mass).
    LevyMeasure();

    int dim() const;
    bool finite_activity() const;
    const std::string& family_name() const;

    /// nu(R^d) for finite-activity measures.
    double total_mass() const;

    /// integral of z nu(dz); zero vector for symmetric families.
    Vec mean_jump() const;

    /// integral of |z|^2 nu(dz) over the region. Ball/Complement take the
    /// radius; the boundary |z| = eps belongs to the ball.
    double second_moment(Region region, double eps = 0.0) const;

    /// integral of z z^T nu(dz) over {|z| <= eps}.
    Mat second_moment_matrix(double eps) const;

    /// integral of f(z) nu(dz), exact on atoms, quadrature with a
    /// node-doubling convergence check on densities. Finite activity only.
    double nu_integral(const std::function<double(const Vec&)>& f) const;

    /// integral of (h(x + gamma z) - h(x)) nu(dz). Also defined for
    /// infinite-activity measures when h is C^2: symmetric node pairing makes
    /// the small-jump contribution integrable.
    double jump_difference_integral(const std::function<double(const Vec&)>& h,
                                    const Vec& x, const Mat& gamma) const;

    /// Fixed nodes used for nu-integrals inside solvers; finite activity only.
    std::span<const QuadNode> nodes() const;

    /// Compound Poisson draw over an interval of length dt.
    JumpRecord sample_jumps(double dt, Rng& rng, int interval_index = 0) const;

    /// Split at |z| = eps: returns the normalized big-jump measure and the
    /// truncation statistics of the small part.
    std::pair<LevyMeasure, TruncationStats> truncate(double eps) const;

    struct Impl;

private:
    explicit LevyMeasure(std::shared_ptr<const Impl> impl) : impl_(std::move(impl)) {}
    std::shared_ptr<const Impl> impl_;

    friend LevyMeasure make_atoms(int, std::vector<std::pair<Vec, double>>);
    friend LevyMeasure make_merton(int, double, double, double, int);
    friend LevyMeasure make_power(double, double, double, int);
    friend LevyMeasure make_power_truncated(double, double, double, double, int);
};

/// Finite atom list (z_i, w_i); weights nonnegative, no atom at the origin.
LevyMeasure make_atoms(int dim, std::vector<std::pair<Vec, double>> atoms);

/// Merton-type measure lambda * N(0, delta^2 I_d). z_max <= 0 selects the
/// default support cutoff 8*delta.
LevyMeasure make_merton(int dim, double lambda, double delta, double z_max = 0.0,
                        int quad_hint = 64);

/// One-dimensional symmetric density c / |z|^(1+alpha) on 0 < |z| <= z_max,
/// alpha in (0,2): infinite activity.
LevyMeasure make_power(double c, double alpha, double z_max = 1.0, int quad_hint = 64);

/// Big-jump part of the power density, restricted to eps < |z| <= z_max.
LevyMeasure make_power_truncated(double c, double alpha, double eps, double z_max = 1.0,
                                 int quad_hint = 64);

}  // namespace jbsde::levy
