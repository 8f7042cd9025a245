#include "jbsde/levy.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <bit>
#include <cmath>

#include "jbsde/quadrature.hpp"

namespace jbsde::levy {

namespace {

constexpr double kNodeDoublingTol = 1e-6;
constexpr double kMassCheckTol = 1e-6;

Mat psd_sqrt(const Mat& m) {
    const int n = m.rows;
    Eigen::MatrixXd em(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) em(i, j) = m(i, j);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(em);
    Eigen::VectorXd ev = es.eigenvalues();
    // quadrature noise can leave eigenvalues at -1e-15; clamp before rooting
    for (int i = 0; i < n; ++i) ev(i) = ev(i) > 0.0 ? std::sqrt(ev(i)) : 0.0;
    Eigen::MatrixXd root = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
    Mat out(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) out(i, j) = root(i, j);
    return out;
}

TruncationStats make_stats(double eps, double big_mass, const Mat& sigma_eps) {
    TruncationStats st;
    st.epsilon = eps;
    st.big_mass = big_mass;
    st.sigma_eps = sigma_eps;
    double tr = 0.0;
    for (int i = 0; i < sigma_eps.rows; ++i) tr += sigma_eps(i, i);
    st.small_second_moment = tr;
    st.sigma_eps_sqrt = psd_sqrt(sigma_eps);
    return st;
}

void check_eps(double eps) {
    if (!(eps > 0.0 && eps <= 1.0)) throw EpsilonOutOfRange(eps);
}

double norm_of(const Vec& z) {
    double s = 0.0;
    for (double v : z) s += v * v;
    return std::sqrt(s);
}

}  // namespace

struct LevyMeasure::Impl {
    int dim = 1;
    std::string family;
    int quad_hint = 64;

    virtual ~Impl() = default;
    virtual bool finite() const = 0;
    virtual double mass() const = 0;
    virtual Vec mean() const = 0;
    virtual double second_moment(Region region, double eps) const = 0;
    virtual Mat second_moment_matrix(double eps) const = 0;
    virtual double integral(const std::function<double(const Vec&)>& f) const = 0;
    virtual double jump_diff(const std::function<double(const Vec&)>& h, const Vec& x,
                             const Mat& gamma) const = 0;
    virtual std::span<const QuadNode> nodes() const = 0;
    virtual void sample_sizes(int count, Rng& rng, std::vector<Vec>& out) const = 0;
    virtual std::pair<std::shared_ptr<const Impl>, TruncationStats> truncate(double eps) const = 0;

    double jump_diff_nodes(const std::function<double(const Vec&)>& h, const Vec& x,
                           const Mat& gamma) const {
        const double hx = h(x);
        Vec shifted(dim), gz(dim);
        double s = 0.0;
        for (const QuadNode& node : nodes()) {
            matvec(gamma, node.z, gz);
            for (int i = 0; i < dim; ++i) shifted[i] = x[i] + gz[i];
            s += node.w * (h(shifted) - hx);
        }
        return s;
    }
};

// ---------------------------------------------------------------------------
// Atom measures: everything exact.
// ---------------------------------------------------------------------------

struct AtomsImpl final : LevyMeasure::Impl {
    std::vector<QuadNode> atoms_;
    std::vector<double> cdf_;
    double mass_ = 0.0;

    AtomsImpl(int d, std::vector<std::pair<Vec, double>> atoms) {
        dim = d;
        family = "atoms";
        for (auto& [z, w] : atoms) {
            if (static_cast<int>(z.size()) != d)
                throw JbsdeError("atom dimension does not match measure dimension");
            if (w < 0.0) throw JbsdeError("atom weight must be nonnegative");
            if (norm_of(z) == 0.0) throw JbsdeError("atom at the origin is not a valid Levy measure");
            atoms_.push_back({std::move(z), w});
            mass_ += w;
        }
        cdf_.reserve(atoms_.size());
        double acc = 0.0;
        for (const auto& a : atoms_) {
            acc += a.w;
            cdf_.push_back(acc);
        }
    }

    bool finite() const override { return true; }
    double mass() const override { return mass_; }

    Vec mean() const override {
        Vec m(dim, 0.0);
        for (const auto& a : atoms_)
            for (int i = 0; i < dim; ++i) m[i] += a.w * a.z[i];
        return m;
    }

    double second_moment(Region region, double eps) const override {
        double s = 0.0;
        for (const auto& a : atoms_) {
            const double r = norm_of(a.z);
            const bool in_ball = r <= eps;
            if (region == Region::Ball && !in_ball) continue;
            if (region == Region::Complement && in_ball) continue;
            s += a.w * r * r;
        }
        return s;
    }

    Mat second_moment_matrix(double eps) const override {
        Mat m(dim, dim);
        for (const auto& a : atoms_) {
            if (norm_of(a.z) > eps) continue;
            for (int i = 0; i < dim; ++i)
                for (int j = 0; j < dim; ++j) m(i, j) += a.w * a.z[i] * a.z[j];
        }
        return m;
    }

    double integral(const std::function<double(const Vec&)>& f) const override {
        double s = 0.0;
        for (const auto& a : atoms_) s += a.w * f(a.z);
        return s;
    }

    double jump_diff(const std::function<double(const Vec&)>& h, const Vec& x,
                     const Mat& gamma) const override {
        return jump_diff_nodes(h, x, gamma);
    }

    std::span<const QuadNode> nodes() const override { return atoms_; }

    void sample_sizes(int count, Rng& rng, std::vector<Vec>& out) const override {
        for (int k = 0; k < count; ++k) {
            const double u = rng.u01() * mass_;
            size_t idx = std::lower_bound(cdf_.begin(), cdf_.end(), u) - cdf_.begin();
            if (idx >= atoms_.size()) idx = atoms_.size() - 1;
            out.push_back(atoms_[idx].z);
        }
    }

    std::pair<std::shared_ptr<const Impl>, TruncationStats> truncate(double eps) const override {
        std::vector<std::pair<Vec, double>> big;
        Mat sigma(dim, dim);
        double big_mass = 0.0;
        for (const auto& a : atoms_) {
            if (norm_of(a.z) > eps) {
                big.emplace_back(a.z, a.w);
                big_mass += a.w;
            } else {
                for (int i = 0; i < dim; ++i)
                    for (int j = 0; j < dim; ++j) sigma(i, j) += a.w * a.z[i] * a.z[j];
            }
        }
        return {std::make_shared<AtomsImpl>(dim, std::move(big)), make_stats(eps, big_mass, sigma)};
    }
};

// ---------------------------------------------------------------------------
// Density measures share the 1D panel machinery: a primary node table plus a
// doubled table used as the convergence gate.
// ---------------------------------------------------------------------------

struct DensityTables {
    std::vector<QuadNode> primary;
    std::vector<QuadNode> check;
};

static double table_sum(const std::vector<QuadNode>& t,
                        const std::function<double(const Vec&)>& f) {
    double s = 0.0;
    for (const auto& n : t) s += n.w * f(n.z);
    return s;
}

static double checked_integral(const DensityTables& t, const std::function<double(const Vec&)>& f,
                               const char* what) {
    const double coarse = table_sum(t.primary, f);
    const double fine = table_sum(t.check, f);
    double scale = 0.0;
    for (const auto& n : t.check) scale += std::abs(n.w * f(n.z));
    const double denom = std::max({std::abs(fine), std::abs(coarse), scale, 1e-300});
    if (std::abs(fine - coarse) > kNodeDoublingTol * denom)
        throw QuadratureDivergence(std::string(what) +
                                   ": node-doubling change exceeds tolerance");
    return fine;
}

// ---------------------------------------------------------------------------
// Merton-type measure lambda * N(0, delta^2 I_d), optionally restricted to
// |z| > eps_lo. Radial moments use the chi_d density; the node table is a
// plain Gauss-Legendre panel in 1D and a tensor grid for d <= 3.
// ---------------------------------------------------------------------------

struct MertonImpl final : LevyMeasure::Impl {
    double lambda, delta, zmax, eps_lo;
    double mass_;
    DensityTables tables_;
    DensityTables radial_;  // nodes on r in [eps_lo, zmax] weighted by lambda * chi_d

    MertonImpl(int d, double lam, double del, double zm, double el, int hint) {
        dim = d;
        family = "merton";
        quad_hint = hint;
        lambda = lam;
        delta = del;
        zmax = zm;
        eps_lo = el;
        if (lambda < 0.0 || delta <= 0.0) throw JbsdeError("merton requires lambda >= 0, delta > 0");
        if (zmax <= 0.0) zmax = 8.0 * delta;
        if (eps_lo >= zmax) throw JbsdeError("merton truncation level exceeds the support cutoff");
        if (eps_lo > 0.0 && dim > 1)
            throw ConstructionUnavailable(
                "truncated multi-dimensional Gaussian jump measures are not supported");

        mass_ = eps_lo > 0.0 ? lambda * (tail_prob(eps_lo) - tail_prob(zmax)) : lambda;

        build_radial(quad_hint, radial_.primary);
        build_radial(2 * quad_hint, radial_.check);
        if (dim <= 3) {
            build_tensor(quad_hint, tables_.primary);
            build_tensor(2 * quad_hint, tables_.check);
        } else {
            build_mc(tables_.primary);
            tables_.check = tables_.primary;  // MC fallback: no doubling gate
        }
        if (lambda > 0.0) {
            const double q = table_sum(tables_.check, [](const Vec&) { return 1.0; });
            if (std::abs(q - mass_) > kMassCheckTol * mass_)
                throw QuadratureDivergence("merton node table does not reproduce the total mass");
        }
    }

    // P(|Z| > r) for Z ~ N(0, delta^2 I_d); exact in 1D, radial quadrature else.
    double tail_prob(double r) const {
        if (dim == 1) return std::erfc(r / (delta * std::sqrt(2.0)));
        const double a = r / delta;
        return integrate_panel([this](double s) { return chi_density(s); }, a, zmax / delta + 10.0,
                               256);
    }

    double chi_density(double r) const {
        // chi_d density: r^{d-1} e^{-r^2/2} / (2^{d/2-1} Gamma(d/2))
        const double logc = (0.5 * dim - 1.0) * std::log(2.0) + std::lgamma(0.5 * dim);
        return std::exp((dim - 1.0) * std::log(r) - 0.5 * r * r - logc);
    }

    void build_radial(int n, std::vector<QuadNode>& out) const {
        QuadPanel p = map_panel(n, eps_lo / delta, zmax / delta);
        out.clear();
        out.reserve(p.z.size());
        for (size_t i = 0; i < p.z.size(); ++i)
            out.push_back({Vec{p.z[i] * delta}, lambda * p.w[i] * chi_density(p.z[i])});
    }

    double gauss1(double z) const {
        const double inv = 1.0 / delta;
        return inv * std::exp(-0.5 * z * z * inv * inv) / std::sqrt(2.0 * std::numbers::pi);
    }

    void build_tensor(int n, std::vector<QuadNode>& out) const {
        out.clear();
        if (dim == 1) {
            auto add_panel = [&](double a, double b) {
                QuadPanel p = map_panel(n, a, b);
                for (size_t i = 0; i < p.z.size(); ++i)
                    out.push_back({Vec{p.z[i]}, lambda * p.w[i] * gauss1(p.z[i])});
            };
            if (eps_lo > 0.0) {
                add_panel(-zmax, -eps_lo);
                add_panel(eps_lo, zmax);
            } else {
                add_panel(-zmax, zmax);
            }
            return;
        }
        QuadPanel p = map_panel(n, -zmax, zmax);
        std::vector<int> idx(dim, 0);
        while (true) {
            Vec z(dim);
            double w = lambda;
            for (int k = 0; k < dim; ++k) {
                z[k] = p.z[idx[k]];
                w *= p.w[idx[k]] * gauss1(p.z[idx[k]]);
            }
            out.push_back({std::move(z), w});
            int k = 0;
            while (k < dim && ++idx[k] == n) idx[k++] = 0;
            if (k == dim) break;
        }
    }

    void build_mc(std::vector<QuadNode>& out) const {
        const int n = 100000;
        Rng rng = Rng::child(0x6d63u, {static_cast<uint64_t>(dim), std::bit_cast<uint64_t>(lambda),
                                       std::bit_cast<uint64_t>(delta)});
        out.reserve(n);
        for (int i = 0; i < n; ++i) {
            Vec z(dim);
            for (int k = 0; k < dim; ++k) z[k] = delta * rng.normal();
            out.push_back({std::move(z), lambda / n});
        }
    }

    bool finite() const override { return true; }
    double mass() const override { return mass_; }
    Vec mean() const override { return Vec(dim, 0.0); }

    double second_moment(Region region, double eps) const override {
        auto radial_sm = [this](double lo, double hi) {
            if (hi <= lo) return 0.0;
            auto f = [this](double r) { return r * r * chi_density(r); };
            const double coarse = integrate_panel(f, lo / delta, hi / delta, quad_hint);
            const double fine = integrate_panel(f, lo / delta, hi / delta, 2 * quad_hint);
            if (std::abs(fine - coarse) > kNodeDoublingTol * std::max(std::abs(fine), 1e-300))
                throw QuadratureDivergence("merton second moment failed the node-doubling check");
            return lambda * delta * delta * fine;
        };
        switch (region) {
            case Region::All: return radial_sm(eps_lo, zmax);
            case Region::Ball: return radial_sm(eps_lo, std::min(eps, zmax));
            case Region::Complement: return radial_sm(std::max(eps, eps_lo), zmax);
        }
        return 0.0;
    }

    Mat second_moment_matrix(double eps) const override {
        // isotropy: the matrix is (radial second moment / d) * I
        const double s = second_moment(Region::Ball, eps);
        return Mat::diagonal(dim, s / dim);
    }

    double integral(const std::function<double(const Vec&)>& f) const override {
        return checked_integral(tables_, f, "merton nu-integral");
    }

    double jump_diff(const std::function<double(const Vec&)>& h, const Vec& x,
                     const Mat& gamma) const override {
        return jump_diff_nodes(h, x, gamma);
    }

    std::span<const QuadNode> nodes() const override { return tables_.primary; }

    void sample_sizes(int count, Rng& rng, std::vector<Vec>& out) const override {
        for (int k = 0; k < count; ++k) {
            Vec z(dim);
            while (true) {
                for (int i = 0; i < dim; ++i) z[i] = delta * rng.normal();
                const double r = norm_of(z);
                if (r > eps_lo && r <= zmax) break;
            }
            out.push_back(z);
        }
    }

    std::pair<std::shared_ptr<const Impl>, TruncationStats> truncate(double eps) const override {
        auto big = std::make_shared<MertonImpl>(dim, lambda, delta, zmax, std::max(eps, eps_lo),
                                                quad_hint);
        Mat sigma(dim, dim);
        if (eps > eps_lo) {
            const double s = second_moment(Region::Ball, eps);
            sigma = Mat::diagonal(dim, s / dim);
        }
        return {big, make_stats(eps, big->mass_, sigma)};
    }
};

// ---------------------------------------------------------------------------
// 1D symmetric power density c/|z|^{1+alpha} on (0, z_max], infinite activity
// when eps_lo = 0. Panels run in log scale where the integrand is smooth.
// ---------------------------------------------------------------------------

struct PowerImpl final : LevyMeasure::Impl {
    double c, alpha, zmax, eps_lo;
    double mass_ = 0.0;
    DensityTables tables_;                   // finite-activity node tables (one sign folded in)
    std::vector<double> icdf_u_, icdf_z_;    // sampling table, 4096 points

    PowerImpl(double c_, double a_, double zm, double el, int hint) {
        dim = 1;
        family = "power";
        quad_hint = hint;
        c = c_;
        alpha = a_;
        zmax = zm;
        eps_lo = el;
        if (c <= 0.0) throw JbsdeError("power density requires c > 0");
        if (!(alpha > 0.0 && alpha < 2.0)) throw JbsdeError("power density requires alpha in (0,2)");
        if (zmax <= 0.0) throw JbsdeError("power density requires z_max > 0");
        if (eps_lo < 0.0 || eps_lo >= zmax) throw JbsdeError("power truncation level out of range");

        if (eps_lo > 0.0) {
            mass_ = 2.0 * c * (std::pow(eps_lo, -alpha) - std::pow(zmax, -alpha)) / alpha;
            build_nodes(quad_hint, tables_.primary);
            build_nodes(2 * quad_hint, tables_.check);
            const double q = table_sum(tables_.check, [](const Vec&) { return 1.0; });
            if (std::abs(q - mass_) > kMassCheckTol * mass_)
                throw QuadratureDivergence("power node table does not reproduce the total mass");
            build_icdf();
        }
    }

    // Log-scale panel over [lo, hi], both signs. Weight of a node at z = e^s is
    // w_gl * c * e^{-alpha s} per sign.
    void append_log_panel(int n, double lo, double hi, std::vector<QuadNode>& out) const {
        if (hi <= lo) return;
        QuadPanel p = map_panel(n, std::log(lo), std::log(hi));
        for (size_t i = 0; i < p.z.size(); ++i) {
            const double z = std::exp(p.z[i]);
            const double w = p.w[i] * c * std::exp(-alpha * p.z[i]);
            out.push_back({Vec{z}, w});
            out.push_back({Vec{-z}, w});
        }
    }

    void build_nodes(int n, std::vector<QuadNode>& out) const {
        out.clear();
        append_log_panel(n, eps_lo, zmax, out);
    }

    void build_icdf() {
        const int n = 4096;
        icdf_u_.resize(n + 1);
        icdf_z_.resize(n + 1);
        const double flo = std::pow(eps_lo, -alpha), fhi = std::pow(zmax, -alpha);
        for (int i = 0; i <= n; ++i) {
            const double z = eps_lo * std::pow(zmax / eps_lo, static_cast<double>(i) / n);
            icdf_z_[i] = z;
            icdf_u_[i] = (flo - std::pow(z, -alpha)) / (flo - fhi);
        }
    }

    bool finite() const override { return eps_lo > 0.0; }
    double mass() const override {
        if (!finite()) throw InfiniteActivityMass();
        return mass_;
    }
    Vec mean() const override { return Vec(1, 0.0); }

    double second_moment(Region region, double eps) const override {
        double lo = eps_lo, hi = zmax;
        if (region == Region::Ball) hi = std::min(eps, zmax);
        if (region == Region::Complement) lo = std::max(eps, eps_lo);
        if (hi <= lo) return 0.0;
        // integrand z^2 * c z^{-1-alpha}, log substitution z = e^s
        auto f = [this](double s) { return c * std::exp((2.0 - alpha) * s); };
        const double slo = lo > 0.0 ? std::log(lo) : std::log(hi) - 60.0 / (2.0 - alpha);
        const double shi = std::log(hi);
        const double coarse = integrate_panel(f, slo, shi, quad_hint);
        const double fine = integrate_panel(f, slo, shi, 2 * quad_hint);
        if (std::abs(fine - coarse) > kNodeDoublingTol * std::max(std::abs(fine), 1e-300))
            throw QuadratureDivergence("power second moment failed the node-doubling check");
        return 2.0 * fine;
    }

    Mat second_moment_matrix(double eps) const override {
        Mat m(1, 1);
        m(0, 0) = second_moment(Region::Ball, eps);
        return m;
    }

    double integral(const std::function<double(const Vec&)>& f) const override {
        if (!finite()) throw InfiniteActivityMass();
        return checked_integral(tables_, f, "power nu-integral");
    }

    double jump_diff(const std::function<double(const Vec&)>& h, const Vec& x,
                     const Mat& gamma) const override {
        if (finite()) return jump_diff_nodes(h, x, gamma);
        // Infinite activity: pair +z/-z so the integrand is O(z^2) near zero,
        // then integrate in log scale down to a floor where the tail is dead.
        const double floor = zmax * 1e-10;
        const double hx = h(x);
        double fp_scale = 0.0;  // roundoff carried by the cancelling differences
        auto paired = [&](int n, bool track_scale) {
            QuadPanel p = map_panel(n, std::log(floor), std::log(zmax));
            double s = 0.0;
            Vec zp(1), zm(1);
            for (size_t i = 0; i < p.z.size(); ++i) {
                const double z = std::exp(p.z[i]);
                const double w = p.w[i] * c * std::exp(-alpha * p.z[i]);
                zp[0] = x[0] + gamma(0, 0) * z;
                zm[0] = x[0] - gamma(0, 0) * z;
                const double hp = h(zp), hm = h(zm);
                s += w * (hp + hm - 2.0 * hx);
                if (track_scale)
                    fp_scale += w * (std::abs(hp) + std::abs(hm) + 2.0 * std::abs(hx));
            }
            return s;
        };
        const int n = std::max(quad_hint, 128);
        const double coarse = paired(n, false), fine = paired(2 * n, true);
        const double tol =
            std::max(1e-5 * std::max(std::abs(fine), std::abs(coarse)), 1e-12 * fp_scale);
        if (std::abs(fine - coarse) > tol)
            throw QuadratureDivergence("power jump-difference integral failed the node-doubling check");
        return fine;
    }

    std::span<const QuadNode> nodes() const override {
        if (!finite()) throw InfiniteActivityMass();
        return tables_.primary;
    }

    void sample_sizes(int count, Rng& rng, std::vector<Vec>& out) const override {
        if (!finite()) throw InfiniteActivityMass();
        for (int k = 0; k < count; ++k) {
            const double u = rng.u01();
            size_t i = std::lower_bound(icdf_u_.begin(), icdf_u_.end(), u) - icdf_u_.begin();
            double z;
            if (i == 0) {
                z = icdf_z_.front();
            } else if (i >= icdf_u_.size()) {
                z = icdf_z_.back();
            } else {
                const double t = (u - icdf_u_[i - 1]) / (icdf_u_[i] - icdf_u_[i - 1]);
                z = icdf_z_[i - 1] + t * (icdf_z_[i] - icdf_z_[i - 1]);
            }
            const double sign = rng.u01() < 0.5 ? 1.0 : -1.0;
            out.push_back(Vec{sign * z});
        }
    }

    std::pair<std::shared_ptr<const Impl>, TruncationStats> truncate(double eps) const override {
        const double lvl = std::max(eps, eps_lo);
        auto big = std::make_shared<PowerImpl>(c, alpha, zmax, lvl, quad_hint);
        Mat sigma(1, 1);
        if (eps > eps_lo) {
            // small part lives on [eps_lo, eps]
            auto f = [this](double s) { return c * std::exp((2.0 - alpha) * s); };
            const double slo =
                eps_lo > 0.0 ? std::log(eps_lo) : std::log(eps) - 60.0 / (2.0 - alpha);
            sigma(0, 0) = 2.0 * integrate_panel(f, slo, std::log(eps), 2 * quad_hint);
        }
        return {big, make_stats(eps, big->mass_, sigma)};
    }
};

// ---------------------------------------------------------------------------
// Public surface
// ---------------------------------------------------------------------------

LevyMeasure::LevyMeasure() : impl_(std::make_shared<AtomsImpl>(1, std::vector<std::pair<Vec, double>>{})) {}

int LevyMeasure::dim() const { return impl_->dim; }
bool LevyMeasure::finite_activity() const { return impl_->finite(); }
const std::string& LevyMeasure::family_name() const { return impl_->family; }

double LevyMeasure::total_mass() const {
    if (!impl_->finite()) throw InfiniteActivityMass();
    return impl_->mass();
}

Vec LevyMeasure::mean_jump() const { return impl_->mean(); }

double LevyMeasure::second_moment(Region region, double eps) const {
    if (region != Region::All) check_eps(eps);
    return impl_->second_moment(region, eps);
}

Mat LevyMeasure::second_moment_matrix(double eps) const {
    check_eps(eps);
    return impl_->second_moment_matrix(eps);
}

double LevyMeasure::nu_integral(const std::function<double(const Vec&)>& f) const {
    if (!impl_->finite()) throw InfiniteActivityMass();
    return impl_->integral(f);
}

double LevyMeasure::jump_difference_integral(const std::function<double(const Vec&)>& h,
                                             const Vec& x, const Mat& gamma) const {
    return impl_->jump_diff(h, x, gamma);
}

std::span<const QuadNode> LevyMeasure::nodes() const { return impl_->nodes(); }

JumpRecord LevyMeasure::sample_jumps(double dt, Rng& rng, int interval_index) const {
    if (!impl_->finite()) throw InfiniteActivityMass();
    JumpRecord rec;
    rec.interval_index = interval_index;
    if (dt <= 0.0) return rec;
    const int count = rng.poisson(impl_->mass() * dt);
    rec.sizes.reserve(count);
    impl_->sample_sizes(count, rng, rec.sizes);
    return rec;
}

std::pair<LevyMeasure, TruncationStats> LevyMeasure::truncate(double eps) const {
    check_eps(eps);
    auto [impl, stats] = impl_->truncate(eps);
    return {LevyMeasure(std::move(impl)), stats};
}

LevyMeasure make_atoms(int dim, std::vector<std::pair<Vec, double>> atoms) {
    return LevyMeasure(std::make_shared<AtomsImpl>(dim, std::move(atoms)));
}

LevyMeasure make_merton(int dim, double lambda, double delta, double z_max, int quad_hint) {
    return LevyMeasure(std::make_shared<MertonImpl>(dim, lambda, delta, z_max, 0.0, quad_hint));
}

LevyMeasure make_power(double c, double alpha, double z_max, int quad_hint) {
    return LevyMeasure(std::make_shared<PowerImpl>(c, alpha, z_max, 0.0, quad_hint));
}

LevyMeasure make_power_truncated(double c, double alpha, double eps, double z_max, int quad_hint) {
    return LevyMeasure(std::make_shared<PowerImpl>(c, alpha, z_max, eps, quad_hint));
}

}  // namespace jbsde::levy
