#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace jbsde {

using Vec = std::vector<double>;

/// Dense row-major matrix. Small (d x d coefficient matrices, net layers);
/// no BLAS, the loops below are the hot path and vectorize fine at -O3.
struct Mat {
    int rows = 0;
    int cols = 0;
    std::vector<double> a;

    Mat() = default;
    Mat(int r, int c, double fill = 0.0) : rows(r), cols(c), a(static_cast<size_t>(r) * c, fill) {}

    double& operator()(int i, int j) { return a[static_cast<size_t>(i) * cols + j]; }
    double operator()(int i, int j) const { return a[static_cast<size_t>(i) * cols + j]; }

    static Mat identity(int n) {
        Mat m(n, n);
        for (int i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }
    static Mat diagonal(int n, double v) {
        Mat m(n, n);
        for (int i = 0; i < n; ++i) m(i, i) = v;
        return m;
    }
};

// y = A x
inline void matvec(const Mat& m, std::span<const double> x, std::span<double> y) {
    for (int i = 0; i < m.rows; ++i) {
        double s = 0.0;
        const double* row = &m.a[static_cast<size_t>(i) * m.cols];
        for (int j = 0; j < m.cols; ++j) s += row[j] * x[j];
        y[i] = s;
    }
}

// y = A^T x
inline void matTvec(const Mat& m, std::span<const double> x, std::span<double> y) {
    for (int j = 0; j < m.cols; ++j) y[j] = 0.0;
    for (int i = 0; i < m.rows; ++i) {
        const double* row = &m.a[static_cast<size_t>(i) * m.cols];
        for (int j = 0; j < m.cols; ++j) y[j] += row[j] * x[i];
    }
}

inline Vec matvec(const Mat& m, const Vec& x) {
    Vec y(m.rows);
    matvec(m, x, y);
    return y;
}

inline Vec matTvec(const Mat& m, const Vec& x) {
    Vec y(m.cols);
    matTvec(m, x, y);
    return y;
}

inline Mat matmul(const Mat& a, const Mat& b) {
    Mat c(a.rows, b.cols);
    for (int i = 0; i < a.rows; ++i)
        for (int k = 0; k < a.cols; ++k) {
            const double aik = a(i, k);
            for (int j = 0; j < b.cols; ++j) c(i, j) += aik * b(k, j);
        }
    return c;
}

inline double dot(std::span<const double> x, std::span<const double> y) {
    double s = 0.0;
    for (size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
    return s;
}

inline double norm2(std::span<const double> x) { return std::sqrt(dot(x, x)); }

inline double frobenius_norm(const Mat& m) {
    double s = 0.0;
    for (double v : m.a) s += v * v;
    return std::sqrt(s);
}

inline bool all_finite(std::span<const double> x) {
    for (double v : x)
        if (!std::isfinite(v)) return false;
    return true;
}

// ---------------------------------------------------------------------------
// Error types. The library throws; callers that want status codes catch at
// the CLI boundary.
// ---------------------------------------------------------------------------

struct JbsdeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct InfiniteActivityMass : JbsdeError {
    InfiniteActivityMass() : JbsdeError("total mass requested for an infinite-activity measure") {}
};
struct QuadratureDivergence : JbsdeError {
    explicit QuadratureDivergence(const std::string& what) : JbsdeError(what) {}
};
struct EpsilonOutOfRange : JbsdeError {
    explicit EpsilonOutOfRange(double eps)
        : JbsdeError("epsilon must lie in (0,1], got " + std::to_string(eps)) {}
};
struct FiniteActivityInput : JbsdeError {
    FiniteActivityInput()
        : JbsdeError("epsilon pipeline expects an infinite-activity measure (pass allow_finite to override)") {}
};
struct NonFiniteState : JbsdeError {
    explicit NonFiniteState(const std::string& what) : JbsdeError(what) {}
};
struct NonFiniteLoss : JbsdeError {
    explicit NonFiniteLoss(const std::string& what) : JbsdeError(what) {}
};
struct TapeMismatch : JbsdeError {
    explicit TapeMismatch(const std::string& what) : JbsdeError(what) {}
};
struct UnsupportedActivation : JbsdeError {
    UnsupportedActivation() : JbsdeError("growth constants require sigmoid or tanh hidden activations") {}
};
struct PicardDivergence : JbsdeError {
    explicit PicardDivergence(const std::string& what) : JbsdeError(what) {}
};
struct GridMismatch : JbsdeError {
    explicit GridMismatch(const std::string& what) : JbsdeError(what) {}
};
struct ArgOutOfDomain : JbsdeError {
    explicit ArgOutOfDomain(const std::string& what) : JbsdeError(what) {}
};
struct DenominatorNonpositive : JbsdeError {
    explicit DenominatorNonpositive(const std::string& what) : JbsdeError(what) {}
};
struct NonpositiveX : JbsdeError {
    NonpositiveX() : JbsdeError("H(x) requires x > 0") {}
};
struct ConstructionUnavailable : JbsdeError {
    explicit ConstructionUnavailable(const std::string& what) : JbsdeError(what) {}
};
struct ConfigError : JbsdeError {
    explicit ConfigError(const std::string& what) : JbsdeError(what) {}
};

}  // namespace jbsde
