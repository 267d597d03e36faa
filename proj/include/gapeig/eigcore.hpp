#pragma once

// Dense and banded symmetric-definite generalized eigensolvers, backed by LAPACK.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <type_traits>
#include <vector>

#define lapack_complex_float std::complex<float>
#define lapack_complex_double std::complex<double>
#include <lapacke.h>

#include <Eigen/Dense>

#include "gapeig/error.hpp"

namespace gapeig::eig {

template <class Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <class Scalar>
inline constexpr bool is_complex_v = !std::is_same_v<Scalar, double>;

inline constexpr double kSymmetryTolerance = 1e-12;

/// Generalized problem A v = lambda B v with A Hermitian and B Hermitian
/// positive definite. `b` may be left empty to mean the identity.
template <class Scalar>
struct SymmetricPencil {
    Matrix<Scalar> a;
    Matrix<Scalar> b;

    Eigen::Index size() const { return a.rows(); }
    bool identity_mass() const { return b.size() == 0; }

    static SymmetricPencil standard(Matrix<Scalar> a) { return {std::move(a), Matrix<Scalar>()}; }
};

using RealPencil = SymmetricPencil<double>;
using ComplexPencil = SymmetricPencil<std::complex<double>>;

/// Ascending eigenvalues, optionally with B-orthonormal eigenvectors as columns.
template <class Scalar>
struct EigResult {
    Eigen::VectorXd values;
    Matrix<Scalar> vectors;
    /// max |A V - B V diag(lambda)| over the returned pairs (0 when no vectors).
    double residual = 0.0;

    Eigen::Index count() const { return values.size(); }
    bool has_vectors() const { return vectors.cols() == values.size() && values.size() > 0; }
};

namespace detail {

template <class Scalar>
double max_abs(const Matrix<Scalar>& m) {
    return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff();
}

template <class Scalar>
void check_hermitian(const Matrix<Scalar>& m, const char* label) {
    if (m.rows() != m.cols()) throw InvalidMatrix(std::string(label) + " is not square");
    if (!m.allFinite()) throw InvalidMatrix(std::string(label) + " has non-finite entries");
    const double scale = max_abs(m);
    double worst = 0.0;
    const Eigen::Index n = m.rows();
    for (Eigen::Index j = 0; j < n; ++j)
        for (Eigen::Index i = j; i < n; ++i) {
            Scalar d = m(i, j);
            if constexpr (is_complex_v<Scalar>) d -= std::conj(m(j, i));
            else d -= m(j, i);
            worst = std::max(worst, std::abs(d));
        }
    if (worst > kSymmetryTolerance * scale)
        throw InvalidMatrix(std::string(label) + " is not Hermitian (asymmetry " + std::to_string(worst) + ")");
}

template <class Scalar>
double residual(const SymmetricPencil<Scalar>& p, const Eigen::VectorXd& values, const Matrix<Scalar>& vectors) {
    if (vectors.cols() == 0) return 0.0;
    Matrix<Scalar> av = p.a * vectors;
    Matrix<Scalar> bv = p.identity_mass() ? vectors : Matrix<Scalar>(p.b * vectors);
    for (Eigen::Index k = 0; k < vectors.cols(); ++k) av.col(k) -= values(k) * bv.col(k);
    return max_abs(av);
}

inline void check_info(int info, Eigen::Index n, const char* routine) {
    if (info == 0) return;
    if (info < 0) throw InvalidMatrix(std::string(routine) + ": illegal argument " + std::to_string(-info));
    if (info > n) throw PencilNotDefinite(std::string(routine) + ": mass matrix is not positive definite");
    throw InvalidMatrix(std::string(routine) + ": eigensolver failed to converge (info " + std::to_string(info) + ")");
}

enum class Range { all, value, index };

struct Selection {
    Range range = Range::all;
    double lo = 0.0;
    double hi = 0.0;
    int il = 1;
    int iu = 1;
};

template <class Scalar>
EigResult<Scalar> solve(const SymmetricPencil<Scalar>& p, const Selection& sel, bool want_vectors) {
    const Eigen::Index n = p.size();
    if (n < 1) throw InvalidArgument("pencil must have size >= 1");
    check_hermitian(p.a, "A");
    if (!p.identity_mass()) {
        if (p.b.rows() != n) throw InvalidMatrix("A and B sizes differ");
        check_hermitian(p.b, "B");
    }

    Matrix<Scalar> a = p.a;
    Matrix<Scalar> b = p.identity_mass() ? Matrix<Scalar>() : p.b;
    const char jobz = want_vectors ? 'V' : 'N';
    const auto ni = static_cast<lapack_int>(n);
    EigResult<Scalar> out;

    if (sel.range == Range::all) {
        Eigen::VectorXd w(n);
        int info = 0;
        if constexpr (is_complex_v<Scalar>) {
            info = p.identity_mass() ? LAPACKE_zheev(LAPACK_COL_MAJOR, jobz, 'L', ni, a.data(), ni, w.data())
                                     : LAPACKE_zhegv(LAPACK_COL_MAJOR, 1, jobz, 'L', ni, a.data(), ni, b.data(), ni,
                                                     w.data());
        } else {
            info = p.identity_mass() ? LAPACKE_dsyev(LAPACK_COL_MAJOR, jobz, 'L', ni, a.data(), ni, w.data())
                                     : LAPACKE_dsygv(LAPACK_COL_MAJOR, 1, jobz, 'L', ni, a.data(), ni, b.data(), ni,
                                                     w.data());
        }
        check_info(info, n, "full solve");
        out.values = std::move(w);
        if (want_vectors) out.vectors = std::move(a);
    } else {
        const char range = sel.range == Range::value ? 'V' : 'I';
        Eigen::VectorXd w(n);
        lapack_int m = 0;
        const lapack_int ncols = want_vectors ? (sel.range == Range::index ? sel.iu - sel.il + 1 : ni) : 1;
        Matrix<Scalar> z(n, std::max<lapack_int>(ncols, 1));
        std::vector<lapack_int> ifail(static_cast<std::size_t>(2 * n));
        int info = 0;
        const double abstol = 2.0 * LAPACKE_dlamch('S');
        if constexpr (is_complex_v<Scalar>) {
            if (p.identity_mass())
                info = LAPACKE_zheevr(LAPACK_COL_MAJOR, jobz, range, 'L', ni, a.data(), ni, sel.lo, sel.hi, sel.il,
                                      sel.iu, abstol, &m, w.data(), z.data(), ni, ifail.data());
            else
                info = LAPACKE_zhegvx(LAPACK_COL_MAJOR, 1, jobz, range, 'L', ni, a.data(), ni, b.data(), ni, sel.lo,
                                      sel.hi, sel.il, sel.iu, abstol, &m, w.data(), z.data(), ni, ifail.data());
        } else {
            if (p.identity_mass())
                info = LAPACKE_dsyevr(LAPACK_COL_MAJOR, jobz, range, 'L', ni, a.data(), ni, sel.lo, sel.hi, sel.il,
                                      sel.iu, abstol, &m, w.data(), z.data(), ni, ifail.data());
            else
                info = LAPACKE_dsygvx(LAPACK_COL_MAJOR, 1, jobz, range, 'L', ni, a.data(), ni, b.data(), ni, sel.lo,
                                      sel.hi, sel.il, sel.iu, abstol, &m, w.data(), z.data(), ni, ifail.data());
        }
        check_info(info, n, "subset solve");
        out.values = w.head(m);
        if (want_vectors) out.vectors = z.leftCols(m);
    }
    if (want_vectors) out.residual = residual(p, out.values, out.vectors);
    return out;
}

}  // namespace detail

/// Full spectrum by Cholesky reduction and Householder tridiagonalization
/// followed by implicit QL/QR.
template <class Scalar>
EigResult<Scalar> solve_pencil(const SymmetricPencil<Scalar>& p, bool want_vectors = true) {
    return detail::solve(p, {}, want_vectors);
}

/// Eigenpairs with lambda in the open interval (lo, hi).
template <class Scalar>
EigResult<Scalar> solve_window(const SymmetricPencil<Scalar>& p, double lo, double hi, bool want_vectors = true) {
    if (!(lo < hi)) throw InvalidArgument("window requires lo < hi");
    detail::Selection sel{detail::Range::value, lo, hi, 1, 1};
    auto r = detail::solve(p, sel, want_vectors);
    // LAPACK uses the half-open (lo, hi]; trim the closed end.
    Eigen::Index keep = r.values.size();
    while (keep > 0 && !(r.values(keep - 1) < hi)) --keep;
    if (keep != r.values.size()) {
        r.values.conservativeResize(keep);
        if (want_vectors) r.vectors = r.vectors.leftCols(keep).eval();
    }
    return r;
}

/// The eigenpairs with (1-based) indices first..last in ascending order.
template <class Scalar>
EigResult<Scalar> solve_lowest(const SymmetricPencil<Scalar>& p, int count, bool want_vectors = true) {
    const int n = static_cast<int>(p.size());
    if (count < 1) throw InvalidArgument("eigenpair count must be >= 1");
    detail::Selection sel{detail::Range::index, 0.0, 0.0, 1, std::min(count, n)};
    return detail::solve(p, sel, want_vectors);
}

/// Eigenvalues of a large real symmetric matrix in (lo, hi) without vectors;
/// uses the two-stage tridiagonal reduction.
inline Eigen::VectorXd symmetric_window_values(Matrix<double> a, double lo, double hi) {
    if (!(lo < hi)) throw InvalidArgument("window requires lo < hi");
    const Eigen::Index n = a.rows();
    if (n < 1 || a.cols() != n) throw InvalidMatrix("matrix must be square and nonempty");
    if (!a.allFinite()) throw InvalidMatrix("matrix has non-finite entries");
    const auto ni = static_cast<lapack_int>(n);
    Eigen::VectorXd w(n);
    lapack_int m = 0;
    double z = 0.0;
    std::vector<lapack_int> isuppz(static_cast<std::size_t>(2 * n));
    const int info = LAPACKE_dsyevr_2stage(LAPACK_COL_MAJOR, 'N', 'V', 'L', ni, a.data(), ni, lo, hi, 1, 1,
                                           2.0 * LAPACKE_dlamch('S'), &m, w.data(), &z, 1, isuppz.data());
    detail::check_info(info, n, "dsyevr_2stage");
    Eigen::VectorXd out = w.head(m);
    Eigen::Index keep = out.size();
    while (keep > 0 && !(out(keep - 1) < hi)) --keep;
    return out.head(keep);
}

/// Real symmetric banded pencil in LAPACK lower band storage: entry (i, j),
/// i >= j, |i - j| <= kd lives at row i - j, column j.
class BandedPencil {
 public:
    BandedPencil(Eigen::Index n, int kd) : n_(n), kd_(kd), a_(Eigen::MatrixXd::Zero(kd + 1, n)), b_(a_) {
        if (n < 1 || kd < 0) throw InvalidArgument("banded pencil needs n >= 1 and kd >= 0");
    }

    Eigen::Index size() const { return n_; }
    int bandwidth() const { return kd_; }

    void add(Eigen::Index i, Eigen::Index j, double a, double b) {
        if (i < j) std::swap(i, j);
        if (i - j > kd_) throw InvalidArgument("entry outside band");
        a_(i - j, j) += a;
        b_(i - j, j) += b;
    }

    double a(Eigen::Index i, Eigen::Index j) const { return get(a_, i, j); }
    double b(Eigen::Index i, Eigen::Index j) const { return get(b_, i, j); }
    const Eigen::MatrixXd& a_band() const { return a_; }
    const Eigen::MatrixXd& b_band() const { return b_; }

    /// y = A x (or B x).
    Eigen::VectorXd apply_a(const Eigen::VectorXd& x) const { return apply(a_, x); }
    Eigen::VectorXd apply_b(const Eigen::VectorXd& x) const { return apply(b_, x); }

    RealPencil to_dense() const {
        RealPencil p{Eigen::MatrixXd::Zero(n_, n_), Eigen::MatrixXd::Zero(n_, n_)};
        for (Eigen::Index j = 0; j < n_; ++j)
            for (Eigen::Index i = j; i < std::min(n_, j + kd_ + 1); ++i) {
                p.a(i, j) = p.a(j, i) = a_(i - j, j);
                p.b(i, j) = p.b(j, i) = b_(i - j, j);
            }
        return p;
    }

 private:
    double get(const Eigen::MatrixXd& m, Eigen::Index i, Eigen::Index j) const {
        if (i < j) std::swap(i, j);
        return i - j > kd_ ? 0.0 : m(i - j, j);
    }

    Eigen::VectorXd apply(const Eigen::MatrixXd& m, const Eigen::VectorXd& x) const {
        Eigen::VectorXd y = Eigen::VectorXd::Zero(n_);
        for (Eigen::Index j = 0; j < n_; ++j) {
            y(j) += m(0, j) * x(j);
            for (Eigen::Index i = j + 1; i < std::min(n_, j + kd_ + 1); ++i) {
                y(i) += m(i - j, j) * x(j);
                y(j) += m(i - j, j) * x(i);
            }
        }
        return y;
    }

    Eigen::Index n_;
    int kd_;
    Eigen::MatrixXd a_;
    Eigen::MatrixXd b_;
};

namespace detail {

inline Eigen::VectorXd banded_values(const BandedPencil& p, const Selection& sel) {
    const Eigen::Index n = p.size();
    if (!p.a_band().allFinite() || !p.b_band().allFinite()) throw InvalidMatrix("banded pencil has non-finite entries");
    Eigen::MatrixXd ab = p.a_band();
    Eigen::MatrixXd bb = p.b_band();
    const auto ni = static_cast<lapack_int>(n);
    const auto kd = static_cast<lapack_int>(p.bandwidth());
    Eigen::VectorXd w(n);
    lapack_int m = 0;
    double q = 0.0;
    double z = 0.0;
    std::vector<lapack_int> ifail(static_cast<std::size_t>(n));
    const char range = sel.range == Range::all ? 'A' : (sel.range == Range::value ? 'V' : 'I');
    const int info = LAPACKE_dsbgvx(LAPACK_COL_MAJOR, 'N', range, 'L', ni, kd, kd, ab.data(), kd + 1, bb.data(),
                                    kd + 1, &q, 1, sel.lo, sel.hi, sel.il, sel.iu, 2.0 * LAPACKE_dlamch('S'), &m,
                                    w.data(), &z, 1, ifail.data());
    check_info(info, n, "dsbgvx");
    return w.head(m);
}

// Inverse iteration on (A - s B) with banded LU; vectors of a cluster are
// B-orthogonalized against each other.
inline Eigen::MatrixXd banded_vectors(const BandedPencil& p, const Eigen::VectorXd& values) {
    const Eigen::Index n = p.size();
    const int kd = p.bandwidth();
    const auto ni = static_cast<lapack_int>(n);
    Eigen::MatrixXd vecs(n, values.size());
    const double scale = std::max(p.a_band().cwiseAbs().maxCoeff(), p.b_band().cwiseAbs().maxCoeff());
    std::mt19937_64 rng(0x5eed5eedULL);
    std::uniform_real_distribution<double> uni(-1.0, 1.0);

    for (Eigen::Index k = 0; k < values.size(); ++k) {
        const double lambda = values(k);
        const double shift = lambda + 64.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(lambda)) * scale;
        // General band storage for dgbtrf: ldab = 2*kl + ku + 1, diagonal at row kl + ku.
        const lapack_int ldab = 3 * kd + 1;
        Eigen::MatrixXd lu = Eigen::MatrixXd::Zero(ldab, n);
        for (Eigen::Index j = 0; j < n; ++j)
            for (Eigen::Index i = std::max<Eigen::Index>(0, j - kd); i < std::min(n, j + kd + 1); ++i)
                lu(2 * kd + i - j, j) = p.a(i, j) - shift * p.b(i, j);
        std::vector<lapack_int> ipiv(static_cast<std::size_t>(n));
        int info = LAPACKE_dgbtrf(LAPACK_COL_MAJOR, ni, ni, kd, kd, lu.data(), ldab, ipiv.data());
        if (info < 0) throw InvalidMatrix("dgbtrf: illegal argument");
        if (info > 0) lu(2 * kd, info - 1) = std::numeric_limits<double>::epsilon() * scale;

        // Earlier vectors whose eigenvalues are close enough to mix.
        std::vector<Eigen::Index> cluster;
        for (Eigen::Index j = 0; j < k; ++j)
            if (std::abs(values(j) - lambda) < 1e-7 * std::max(1.0, std::abs(lambda))) cluster.push_back(j);

        Eigen::VectorXd x(n);
        for (Eigen::Index i = 0; i < n; ++i) x(i) = uni(rng);
        for (int it = 0; it < 4; ++it) {
            Eigen::VectorXd rhs = p.apply_b(x);
            info = LAPACKE_dgbtrs(LAPACK_COL_MAJOR, 'N', ni, kd, kd, 1, lu.data(), ldab, ipiv.data(), rhs.data(), ni);
            if (info != 0) throw InvalidMatrix("dgbtrs failed");
            x = rhs;
            for (Eigen::Index j : cluster) x -= vecs.col(j).dot(p.apply_b(x)) * vecs.col(j);
            x /= std::sqrt(x.dot(p.apply_b(x)));
        }
        vecs.col(k) = x;
    }
    return vecs;
}

}  // namespace detail

/// Eigenpairs of a banded pencil with lambda in (lo, hi).
inline EigResult<double> solve_banded_window(const BandedPencil& p, double lo, double hi, bool want_vectors = true) {
    if (!(lo < hi)) throw InvalidArgument("window requires lo < hi");
    EigResult<double> r;
    Eigen::VectorXd w = detail::banded_values(p, {detail::Range::value, lo, hi, 1, 1});
    Eigen::Index keep = w.size();
    while (keep > 0 && !(w(keep - 1) < hi)) --keep;
    r.values = w.head(keep);
    if (want_vectors && keep > 0) {
        r.vectors = detail::banded_vectors(p, r.values);
        double worst = 0.0;
        for (Eigen::Index k = 0; k < keep; ++k) {
            Eigen::VectorXd res = p.apply_a(r.vectors.col(k)) - r.values(k) * p.apply_b(r.vectors.col(k));
            worst = std::max(worst, res.cwiseAbs().maxCoeff());
        }
        r.residual = worst;
    }
    return r;
}

/// Lowest `count` eigenvalues of a banded pencil (no vectors).
inline Eigen::VectorXd banded_lowest_values(const BandedPencil& p, int count) {
    const int n = static_cast<int>(p.size());
    if (count < 1) throw InvalidArgument("eigenvalue count must be >= 1");
    return detail::banded_values(p, {detail::Range::index, 0.0, 0.0, 1, std::min(count, n)});
}

}  // namespace gapeig::eig
