#pragma once

// Approximate spectral projector P_n from quasi-periodic P1 fibers, the
// augmented spaces X_n + P_n X_n, and checks of the projector hypotheses.

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gapeig/bloch.hpp"
#include "gapeig/eigcore.hpp"
#include "gapeig/fem1d.hpp"
#include "gapeig/model.hpp"
#include "gapeig/parallel.hpp"
#include "gapeig/spectrum.hpp"

namespace gapeig::augment {

// ---------------------------------------------------------------- fibers

/// Pencil of a^0_q on the P1 space of q-quasi-periodic functions on [0, b):
/// u(x + b) = e^{iqb} u(x), unknowns at nodes j h, j < n_c.
inline eig::ComplexPencil fiber_pencil(const fem::Potential1D& v, const Lattice& lattice, int cells, double q) {
    fem::detail::check_lattice(lattice);
    if (cells < 2) throw InvalidArgument("fiber mesh needs at least two cells");
    const double h = lattice.period / cells;
    const Complex theta = std::polar(1.0, q * lattice.period);
    const fem::QuadratureRule rule = fem::gauss_rule(10);
    eig::Matrix<Complex> a = eig::Matrix<Complex>::Zero(cells, cells);
    eig::Matrix<Complex> b = a;
    for (int e = 0; e < cells; ++e) {
        const fem::ElementMatrices m = fem::element_matrices(v, e * h, h, rule);
        const int idx[2] = {e, (e + 1) % cells};
        const Complex phase[2] = {1.0, e + 1 == cells ? theta : Complex(1.0)};
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j) {
                const Complex w = std::conj(phase[i]) * phase[j];
                a(idx[i], idx[j]) += w * m.a[i][j];
                b(idx[i], idx[j]) += w * m.b[i][j];
            }
    }
    return {std::move(a), std::move(b)};
}

/// Lowest fiber eigenpairs; vectors are mass-orthonormal nodal values on [0, b).
struct FemFiber {
    double q = 0.0;
    Eigen::VectorXd values;
    Eigen::MatrixXcd vectors;
};

inline fem::Potential1D periodic_part(const PeriodicPotential& v) {
    fem::detail::check_lattice(v.lattice);
    return [v](double x) { return eval_periodic(v, {x, 0.0}); };
}

inline FemFiber fem_fiber(const PeriodicPotential& v, double q, int cells, int count) {
    if (cells < 10) throw InvalidArgument("fiber mesh needs n_c >= 10");
    if (count < 1 || count > cells) throw InvalidArgument("fiber eigenpair count out of range");
    auto sol = eig::solve_lowest(fiber_pencil(periodic_part(v), v.lattice, cells, q), count, true);
    return {q, std::move(sol.values), std::move(sol.vectors)};
}

/// FEM band structure on the symmetric zone grid.
inline bloch::BandStructure fem_bands(const PeriodicPotential& v, int cells, int grid_points, int bands,
                                      int threads = 1) {
    if (bands < 2) throw InvalidArgument("band count must be >= 2");
    bloch::BandStructure bs;
    bs.dimension = 1;
    bs.grid_points = grid_points;
    bs.bands = bands;
    bs.qpoints = bloch::zone_points(v.lattice, grid_points);
    auto fibers = parallel_map(bs.qpoints.size(), threads,
                               [&](std::size_t i) { return fem_fiber(v, bs.qpoints[i][0], cells, bands); });
    bs.energies.resize(bands, static_cast<Eigen::Index>(fibers.size()));
    for (std::size_t i = 0; i < fibers.size(); ++i) bs.energies.col(static_cast<Eigen::Index>(i)) = fibers[i].values;
    return bs;
}

/// The gap above band J of the P1 discretization itself.
inline bloch::GapWindow fem_gap(const PeriodicPotential& v, int cells, int grid_points, int band, int threads = 1) {
    return bloch::find_gap(fem_bands(v, cells, grid_points, band + 1, threads), band);
}

// ---------------------------------------------------------------- kernel

/// Nodal values on the consecutive global nodes first, first + 1, ...
struct NodalVector {
    long first = 0;
    Eigen::VectorXd values;

    long last() const { return first + static_cast<long>(values.size()) - 1; }
    double at(long i) const { return i < first || i > last() ? 0.0 : values(static_cast<Eigen::Index>(i - first)); }
};

struct KernelReport {
    double realness_residue = 0.0;
    double symmetry_residual = 0.0;
    double idempotency_residual = 0.0;
    /// Worst |trace over one cell - J| of the nodal projector G M.
    double trace_error = 0.0;
    /// Largest entry at separation >= 6 periods relative to the largest entry.
    double kernel_decay = 0.0;
    /// Largest entry at the widest computed separation, relative.
    double edge_ratio = 0.0;
    double max_entry = 0.0;
};

/// P_n on nodal values: (P_n u)(x_i) = sum_l G(i, l) (M u)_l with M the P1
/// mass matrix of the whole line. G is invariant under lattice translations
/// and is stored as table(s, d + reach) = G(i, i - d) for i = s mod n_c.
struct ProjectorKernel {
    Lattice lattice;
    int bands = 1;
    int cells_per_period = 0;
    int qpoints = 0;
    double tau = 1e-10;
    long reach = 0;
    Eigen::MatrixXd table;
    fem::Mesh1D window;
    KernelReport report;

    double h() const { return lattice.period / cells_per_period; }

    double g(long i, long l) const {
        const long d = i - l;
        if (d > reach || d < -reach) return 0.0;
        const long s = ((i % cells_per_period) + cells_per_period) % cells_per_period;
        return table(s, d + reach);
    }

    /// y = G x restricted to nodes [first, first + count).
    NodalVector apply_g(const NodalVector& x, long first, long count) const {
        NodalVector y{first, Eigen::VectorXd::Zero(count)};
        for (long k = 0; k < count; ++k) {
            const long i = first + k;
            const long lo = std::max(x.first, i - reach);
            const long hi = std::min(x.last(), i + reach);
            double s = 0.0;
            for (long l = lo; l <= hi; ++l) s += g(i, l) * x.values(static_cast<Eigen::Index>(l - x.first));
            y.values(k) = s;
        }
        return y;
    }

    /// P_n u on nodes [first, first + count).
    NodalVector apply(const NodalVector& u, long first, long count) const {
        return apply_g(line_mass(u), first, count);
    }

    NodalVector line_mass(const NodalVector& u) const {
        const double hh = h();
        NodalVector m{u.first - 1, Eigen::VectorXd::Zero(u.values.size() + 2)};
        for (long i = m.first; i <= m.last(); ++i)
            m.values(static_cast<Eigen::Index>(i - m.first)) =
                hh / 6.0 * (u.at(i - 1) + u.at(i + 1)) + 2.0 * hh / 3.0 * u.at(i);
        return m;
    }
};

/// Computational domain extended by `margin` periods on each side.
inline fem::Mesh1D window_mesh(const fem::Mesh1D& domain, double margin_periods = 8.0) {
    const long pad = std::lround(margin_periods * domain.cells_per_period);
    if (pad < 1) throw InvalidArgument("window margin must be positive");
    return {domain.lattice, domain.cells_per_period, domain.i_lo - pad, domain.i_hi + pad};
}

namespace detail {

inline long floor_div(long a, long b) {
    long q = a / b;
    if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
    return q;
}

inline void check_kernel(ProjectorKernel& k) {
    const long n = k.cells_per_period;
    const long reach = k.reach;
    double max_entry = k.table.cwiseAbs().maxCoeff();
    k.report.max_entry = max_entry;

    // Row s of G M over a virtual infinite line, as a vector on [s - reach - 1, s + reach + 1].
    auto gm_row = [&](long i) {
        NodalVector r{i - reach - 1, Eigen::VectorXd::Zero(2 * reach + 3)};
        for (long l = r.first; l <= r.last(); ++l) {
            const double hh = k.h();
            r.values(static_cast<Eigen::Index>(l - r.first)) =
                hh / 6.0 * (k.g(i, l - 1) + k.g(i, l + 1)) + 2.0 * hh / 3.0 * k.g(i, l);
        }
        return r;
    };
    double trace = 0.0;
    double idem = 0.0;
    for (long s = 0; s < n; ++s) {
        const NodalVector r = gm_row(s);
        trace += r.at(s);
        // Row of (G M)^2 is (M G r^T)^T since G and M are symmetric.
        const NodalVector gr = k.apply_g(r, r.first - reach, r.values.size() + 2 * reach);
        const NodalVector sq = k.line_mass(gr);
        double row = 0.0;
        for (long l = sq.first; l <= sq.last(); ++l) row += std::abs(sq.at(l) - r.at(l));
        idem = std::max(idem, row);
    }
    k.report.trace_error = std::abs(trace - k.bands);
    k.report.idempotency_residual = idem;
}

}  // namespace detail

/// Builds the kernel from fiber solves at the given quasimomenta (weights
/// 1 / #q). The set must be closed under q -> -q for the kernel to be real.
inline ProjectorKernel build_projector(const PeriodicPotential& v, int bands, int cells,
                                       const std::vector<double>& qs, const fem::Mesh1D& window,
                                       double tau = 1e-10, int threads = 1) {
    fem::detail::check_lattice(v.lattice);
    if (bands < 1) throw InvalidArgument("projector rank J must be >= 1");
    if (qs.empty()) throw InvalidArgument("projector needs quasimomenta");
    if (!(tau > 0.0 && tau < 1.0)) throw InvalidArgument("truncation tolerance must lie in (0, 1)");
    if (window.cells_per_period != cells || window.lattice.period != v.lattice.period)
        throw WindowMismatch("window mesh spacing differs from the fiber mesh");

    const long n = cells;
    const long mq = static_cast<long>(qs.size());
    const long span = window.i_hi - window.i_lo;
    const long limit = std::max<long>(1, std::min(mq * n / 2 - 1, span));
    const double b = v.lattice.period;

    auto fibers = parallel_map(qs.size(), threads, [&](std::size_t i) {
        FemFiber f = fem_fiber(v, qs[i], cells, std::min(bands + 1, cells));
        if (f.values.size() > bands && f.values(bands) - f.values(bands - 1) < 1e-10)
            throw NoGap("fiber bands J and J+1 are degenerate");
        f.vectors = f.vectors.leftCols(bands).eval();
        return f;
    });
    std::vector<Eigen::MatrixXcd> proj;
    for (const auto& f : fibers) proj.push_back(f.vectors * f.vectors.adjoint());

    // Raw complex table over |d| <= limit; rows are independent.
    const long width = 2 * limit + 1;
    auto rows = parallel_map(static_cast<std::size_t>(n), threads, [&](std::size_t si) {
        const long s = static_cast<long>(si);
        std::vector<Complex> row(static_cast<std::size_t>(width));
        for (long d = -limit; d <= limit; ++d) {
            const long l = s - d;
            const long r = detail::floor_div(l, n);
            const long sl = l - r * n;
            Complex acc{0.0, 0.0};
            for (long iq = 0; iq < mq; ++iq)
                acc += proj[static_cast<std::size_t>(iq)](s, sl) * std::polar(1.0, -qs[static_cast<std::size_t>(iq)] * b * r);
            row[static_cast<std::size_t>(d + limit)] = acc / static_cast<double>(mq);
        }
        return row;
    });

    ProjectorKernel k;
    k.lattice = v.lattice;
    k.bands = bands;
    k.cells_per_period = cells;
    k.qpoints = static_cast<int>(mq);
    k.tau = tau;
    k.window = window;

    Eigen::MatrixXd raw(n, width);
    double imag = 0.0;
    for (long s = 0; s < n; ++s)
        for (long c = 0; c < width; ++c) {
            const Complex z = rows[static_cast<std::size_t>(s)][static_cast<std::size_t>(c)];
            raw(s, c) = z.real();
            imag = std::max(imag, std::abs(z.imag()));
        }
    k.report.realness_residue = imag;
    if (imag > 1e-8)
        throw QGridAsymmetric("projector kernel has imaginary residue " + std::to_string(imag));

    // G(i, l) = G(l, i): table(s, d) against table(s - d mod n, -d).
    double asym = 0.0;
    Eigen::MatrixXd sym(n, width);
    for (long s = 0; s < n; ++s)
        for (long d = -limit; d <= limit; ++d) {
            const long sp = ((s - d) % n + n) % n;
            const double x = raw(s, d + limit);
            const double y = raw(sp, -d + limit);
            asym = std::max(asym, std::abs(x - y));
            sym(s, d + limit) = 0.5 * (x + y);
        }
    k.report.symmetry_residual = asym;

    const double peak = sym.cwiseAbs().maxCoeff();
    double decay = 0.0;
    long reach = 0;
    for (long d = -limit; d <= limit; ++d) {
        const double col = sym.col(d + limit).cwiseAbs().maxCoeff();
        if (std::abs(d) >= 6 * n) decay = std::max(decay, col);
        if (col >= tau * peak) reach = std::max(reach, std::abs(d));
    }
    k.report.kernel_decay = decay / peak;
    k.report.edge_ratio =
        std::max(sym.col(0).cwiseAbs().maxCoeff(), sym.col(width - 1).cwiseAbs().maxCoeff()) / peak;
    if (k.report.edge_ratio > 100.0 * tau)
        throw WindowTooSmall("projector kernel has not decayed at the widest separation (relative " +
                             std::to_string(k.report.edge_ratio) + ")");

    k.reach = reach;
    k.table = sym.middleCols(limit - reach, 2 * reach + 1);
    for (Eigen::Index c = 0; c < k.table.cols(); ++c)
        for (Eigen::Index s = 0; s < k.table.rows(); ++s)
            if (std::abs(k.table(s, c)) < tau * peak) k.table(s, c) = 0.0;
    detail::check_kernel(k);
    return k;
}

/// Symmetric midpoint rule with M_q points.
inline ProjectorKernel build_projector(const PeriodicPotential& v, int bands, int cells, int grid_points,
                                       const fem::Mesh1D& window, double tau = 1e-10, int threads = 1) {
    return build_projector(v, bands, cells, bloch::zone_grid(v.lattice, grid_points), window, tau, threads);
}

// ---------------------------------------------------------------- spaces

enum class Route { automatic, literal, compressed };
enum class BlockTag { minus, plus };

/// A basis of X_n + P_n X_n on the window mesh.
///
/// literal: columns [P_n phi_i | (1 - P_n) phi_i] after mass-weighted SVD
/// filtering, tagged X^- and X^+, with X^+ re-orthogonalized against X^-.
///
/// compressed: X_n itself plus the parts of P_n phi_i outside the domain
/// interior, filtered separately on the left and right margins. Valid when no
/// hat reaches both margins through the kernel.
struct AugmentedSpace {
    fem::Mesh1D domain;
    fem::Mesh1D window;
    Route route = Route::literal;
    double sigma_tol = 1e-8;

    Eigen::MatrixXd basis;  // literal: window dofs x rank
    std::vector<BlockTag> tags;

    Eigen::MatrixXd left;   // compressed: nodes window.i_lo + 1 .. domain.i_lo
    Eigen::MatrixXd right;  // compressed: nodes domain.i_hi .. window.i_hi - 1

    double cross_mass = 0.0;
    double retained_ratio = 1.0;

    Eigen::Index dimension() const {
        if (route == Route::literal) return basis.cols();
        return domain.dofs() + left.cols() + right.cols();
    }
    Eigen::Index count(BlockTag t) const {
        return static_cast<Eigen::Index>(std::count(tags.begin(), tags.end(), t));
    }

    /// Window nodal coefficients of the basis (dense; for diagnostics).
    Eigen::MatrixXd window_basis() const;
};

namespace detail {

inline Eigen::MatrixXd dense_mass(Eigen::Index n, double h) {
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        m(i, i) = 2.0 * h / 3.0;
        if (i + 1 < n) m(i, i + 1) = m(i + 1, i) = h / 6.0;
    }
    return m;
}

struct Filtered {
    Eigen::MatrixXd basis;
    double ratio = 1.0;
};

/// Mass-orthonormal basis of span(cols) keeping singular values >= tol * scale,
/// where scale defaults to the largest singular value.
inline Filtered mass_svd_filter(const Eigen::MatrixXd& cols, const Eigen::LLT<Eigen::MatrixXd>& chol, double tol,
                                double scale = 0.0) {
    Filtered f;
    f.basis.resize(cols.rows(), 0);
    if (cols.cols() == 0) return f;
    const Eigen::MatrixXd lt_cols = chol.matrixU() * cols;
    Eigen::BDCSVD<Eigen::MatrixXd> svd(lt_cols, Eigen::ComputeThinU);
    const Eigen::VectorXd& sv = svd.singularValues();
    if (sv.size() == 0 || !(sv(0) > 0.0)) return f;
    if (!(scale > 0.0)) scale = sv(0);
    Eigen::Index keep = 0;
    while (keep < sv.size() && sv(keep) >= tol * scale) ++keep;
    if (keep == 0) return f;
    f.ratio = sv(keep - 1) / scale;
    f.basis = chol.matrixU().solve(svd.matrixU().leftCols(keep));
    return f;
}

/// P_n phi_i on window dofs for every interior hat of the domain.
inline Eigen::MatrixXd projected_hats(const ProjectorKernel& k, const fem::Mesh1D& domain,
                                      const fem::Mesh1D& window, long col_first, long col_last,
                                      long row_first, long row_last) {
    const double h = k.h();
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(row_last - row_first + 1, col_last - col_first + 1);
    for (long i = col_first; i <= col_last; ++i)
        for (long m = std::max(row_first, i - k.reach - 1); m <= std::min(row_last, i + k.reach + 1); ++m)
            out(m - row_first, i - col_first) =
                h / 6.0 * (k.g(m, i - 1) + k.g(m, i + 1)) + 2.0 * h / 3.0 * k.g(m, i);
    (void)domain;
    (void)window;
    return out;
}

/// Largest singular value of phi -> P_n phi from (X_n, l2 coefficients) to
/// L2 on the window, by power iteration.
inline double projected_hats_norm(const ProjectorKernel& k, const fem::Mesh1D& domain, int iterations = 60) {
    const fem::Mesh1D& w = k.window;
    const long first = domain.i_lo + 1;
    const Eigen::Index nd = domain.dofs();
    const long nodes = w.i_hi - w.i_lo + 1;
    Eigen::VectorXd c = Eigen::VectorXd::Ones(nd);
    double sigma = 0.0;
    for (int it = 0; it < iterations; ++it) {
        c /= c.norm();
        NodalVector pc = k.apply({first, c}, w.i_lo, nodes);
        pc.values(0) = 0.0;
        pc.values(nodes - 1) = 0.0;
        // Window mass with Dirichlet ends, then the adjoint M G restricted to the hats.
        NodalVector m = k.line_mass(pc);
        m.values(0) = 0.0;
        m.values(m.values.size() - 1) = 0.0;
        for (long i = m.first; i <= m.last(); ++i)
            if (i <= w.i_lo || i >= w.i_hi) m.values(static_cast<Eigen::Index>(i - m.first)) = 0.0;
        const NodalVector gm = k.apply_g(m, first - 1, nd + 2);
        const NodalVector back = k.line_mass(gm);
        Eigen::VectorXd y(nd);
        for (Eigen::Index a = 0; a < nd; ++a) y(a) = back.at(first + a);
        sigma = std::sqrt(std::max(0.0, c.dot(y)));
        if (!(y.norm() > 0.0)) return 0.0;
        c = y;
    }
    return sigma;
}

inline void check_window(const ProjectorKernel& k, const fem::Mesh1D& domain) {
    const fem::Mesh1D& w = k.window;
    if (domain.cells_per_period != k.cells_per_period || domain.lattice.period != k.lattice.period)
        throw WindowMismatch("domain mesh spacing differs from the kernel mesh");
    if (domain.i_lo <= w.i_lo || domain.i_hi >= w.i_hi)
        throw WindowMismatch("domain is not strictly inside the kernel window");
}

}  // namespace detail

inline Eigen::MatrixXd AugmentedSpace::window_basis() const {
    if (route == Route::literal) return basis;
    const Eigen::Index nw = window.dofs();
    Eigen::MatrixXd z = Eigen::MatrixXd::Zero(nw, dimension());
    const long off = window.i_lo + 1;
    z.block(domain.i_lo - off + 1 - left.rows() + 0, 0, left.rows(), left.cols()) = left;
    for (Eigen::Index k = 0; k < domain.dofs(); ++k) z(domain.i_lo + 1 + k - off, left.cols() + k) = 1.0;
    z.block(domain.i_hi - off, left.cols() + domain.dofs(), right.rows(), right.cols()) = right;
    return z;
}

inline AugmentedSpace augmented_space(const fem::Mesh1D& domain, const ProjectorKernel& k, double sigma_tol = 1e-8,
                                      Route route = Route::automatic) {
    detail::check_window(k, domain);
    if (!(sigma_tol > 0.0 && sigma_tol < 1.0)) throw InvalidArgument("SVD tolerance must lie in (0, 1)");
    const fem::Mesh1D& w = k.window;
    const double h = k.h();
    const long width = domain.i_hi - domain.i_lo;
    if (route == Route::automatic) route = width > 2 * k.reach + 2 ? Route::compressed : Route::literal;
    if (route == Route::compressed && width <= 2 * k.reach + 2)
        throw InvalidArgument("domain too narrow for the compressed augmentation");

    AugmentedSpace a;
    a.domain = domain;
    a.window = w;
    a.route = route;
    a.sigma_tol = sigma_tol;
    const long first_hat = domain.i_lo + 1;
    const long last_hat = domain.i_hi - 1;

    if (route == Route::compressed) {
        const long l_first = w.i_lo + 1;
        const long l_last = domain.i_lo;
        const long r_first = domain.i_hi;
        const long r_last = w.i_hi - 1;
        const Eigen::LLT<Eigen::MatrixXd> chol_l(detail::dense_mass(l_last - l_first + 1, h));
        const Eigen::LLT<Eigen::MatrixXd> chol_r(detail::dense_mass(r_last - r_first + 1, h));
        const long reach = k.reach + 1;
        const auto lc =
            detail::projected_hats(k, domain, w, first_hat, std::min(last_hat, l_last + reach), l_first, l_last);
        const auto rc =
            detail::projected_hats(k, domain, w, std::max(first_hat, r_first - reach), last_hat, r_first, r_last);
        // Same threshold as the literal route: relative to the whole P_n X_n block.
        const double scale = detail::projected_hats_norm(k, domain);
        auto fl = detail::mass_svd_filter(lc, chol_l, sigma_tol, scale);
        auto fr = detail::mass_svd_filter(rc, chol_r, sigma_tol, scale);
        a.left = std::move(fl.basis);
        a.right = std::move(fr.basis);
        a.retained_ratio = std::min(fl.ratio, fr.ratio);
        return a;
    }

    const long row_first = w.i_lo + 1;
    const long row_last = w.i_hi - 1;
    const Eigen::Index nw = w.dofs();
    const Eigen::MatrixXd mass = detail::dense_mass(nw, h);
    const Eigen::LLT<Eigen::MatrixXd> chol(mass);
    const Eigen::MatrixXd pc = detail::projected_hats(k, domain, w, first_hat, last_hat, row_first, row_last);
    Eigen::MatrixXd qc = -pc;
    for (long i = first_hat; i <= last_hat; ++i) qc(i - row_first, i - first_hat) += 1.0;

    auto fm = detail::mass_svd_filter(pc, chol, sigma_tol);
    auto fp = detail::mass_svd_filter(qc, chol, sigma_tol);
    // Two Gram-Schmidt sweeps of X^+ against the mass-orthonormal X^-.
    for (int sweep = 0; sweep < 2; ++sweep) fp.basis -= fm.basis * (fm.basis.transpose() * (mass * fp.basis));
    fp = detail::mass_svd_filter(fp.basis, chol, sigma_tol);
    for (int sweep = 0; sweep < 2; ++sweep) fp.basis -= fm.basis * (fm.basis.transpose() * (mass * fp.basis));

    a.basis.resize(nw, fm.basis.cols() + fp.basis.cols());
    a.basis << fm.basis, fp.basis;
    a.tags.assign(static_cast<std::size_t>(fm.basis.cols()), BlockTag::minus);
    a.tags.insert(a.tags.end(), static_cast<std::size_t>(fp.basis.cols()), BlockTag::plus);
    a.cross_mass = fm.basis.cols() && fp.basis.cols()
                       ? (fm.basis.transpose() * (mass * fp.basis)).cwiseAbs().maxCoeff()
                       : 0.0;
    a.retained_ratio = std::min(fm.ratio, fp.ratio);
    if (a.basis.cols() < domain.dofs())
        throw AugmentationDegenerate("augmented rank " + std::to_string(a.basis.cols()) + " below dim X_n " +
                                     std::to_string(domain.dofs()));
    return a;
}

/// Gap eigenvalues of H on the augmented space; vectors are window nodal values.
inline SpectrumResult augmented_spectrum(const fem::Potential1D& potential, const AugmentedSpace& aug,
                                         const bloch::GapWindow& window, bool want_vectors = true) {
    const fem::Mesh1D& w = aug.window;
    const eig::BandedPencil full = fem::assemble_galerkin(potential, w);
    const long off = w.i_lo + 1;
    SpectrumResult r;
    r.method = "augmented";
    r.window = window;
    r.params = {{"x_lo", aug.domain.x_lo()},
                {"x_hi", aug.domain.x_hi()},
                {"n_cells", aug.domain.cells_per_period},
                {"dimension", static_cast<double>(aug.dimension())}};

    if (aug.route == Route::literal) {
        const Eigen::MatrixXd& z = aug.basis;
        Eigen::MatrixXd az(z.rows(), z.cols());
        Eigen::MatrixXd bz(z.rows(), z.cols());
        for (Eigen::Index c = 0; c < z.cols(); ++c) {
            az.col(c) = full.apply_a(z.col(c));
            bz.col(c) = full.apply_b(z.col(c));
        }
        Eigen::MatrixXd ar = z.transpose() * az;
        Eigen::MatrixXd br = z.transpose() * bz;
        ar = 0.5 * (ar + ar.transpose()).eval();
        br = 0.5 * (br + br.transpose()).eval();
        const auto sol = eig::solve_window(eig::RealPencil{ar, br}, window.alpha, window.beta, want_vectors);
        r.eigenvalues.assign(sol.values.data(), sol.values.data() + sol.values.size());
        if (want_vectors) r.vectors = z * sol.vectors;
        return r;
    }

    // Banded layout [left | hats | right].
    const Eigen::Index nl = aug.left.cols();
    const Eigen::Index nh = aug.domain.dofs();
    const Eigen::Index nr = aug.right.cols();
    const Eigen::Index n = nl + nh + nr;
    const int kd = static_cast<int>(std::max<Eigen::Index>({nl, nr, 1}));
    eig::BandedPencil p(n, kd);
    const long hat0 = aug.domain.i_lo + 1 - off;  // window dof of the first hat
    for (Eigen::Index k = 0; k < nh; ++k) {
        p.add(nl + k, nl + k, full.a(hat0 + k, hat0 + k), full.b(hat0 + k, hat0 + k));
        if (k + 1 < nh) p.add(nl + k + 1, nl + k, full.a(hat0 + k + 1, hat0 + k), full.b(hat0 + k + 1, hat0 + k));
    }
    auto margin = [&](const Eigen::MatrixXd& block, long node_first, Eigen::Index col0) {
        const Eigen::Index rows = block.rows();
        const long dof_first = node_first - off;
        for (Eigen::Index c = 0; c < block.cols(); ++c) {
            Eigen::VectorXd v = Eigen::VectorXd::Zero(w.dofs());
            v.segment(dof_first, rows) = block.col(c);
            const Eigen::VectorXd av = full.apply_a(v);
            const Eigen::VectorXd bv = full.apply_b(v);
            for (Eigen::Index c2 = 0; c2 <= c; ++c2) {
                p.add(col0 + c, col0 + c2, av.segment(dof_first, rows).dot(block.col(c2)),
                      bv.segment(dof_first, rows).dot(block.col(c2)));
            }
            // Coupling to the hats next to the margin.
            for (long dof = std::max<long>(dof_first - 1, hat0); dof <= std::min<long>(dof_first + rows, hat0 + nh - 1);
                 ++dof) {
                if (dof >= dof_first && dof < dof_first + rows) continue;
                if (av(dof) == 0.0 && bv(dof) == 0.0) continue;
                p.add(col0 + c, nl + (dof - hat0), av(dof), bv(dof));
            }
        }
    };
    margin(aug.left, w.i_lo + 1, 0);
    margin(aug.right, aug.domain.i_hi, nl + nh);
    const auto sol = eig::solve_banded_window(p, window.alpha, window.beta, want_vectors);
    r.eigenvalues.assign(sol.values.data(), sol.values.data() + sol.values.size());
    if (want_vectors && sol.values.size() > 0) r.vectors = aug.window_basis() * sol.vectors;
    return r;
}

inline SpectrumResult augmented_spectrum(const PeriodicPotential& v, const Perturbation& w, const AugmentedSpace& aug,
                                         const bloch::GapWindow& window, bool want_vectors = true) {
    return augmented_spectrum(fem::total_potential(v, w), aug, window, want_vectors);
}

// ---------------------------------------------------------------- (A2)

/// The exact band projector from planewave fibers on the zone grid.
struct PlanewaveProjector {
    Lattice lattice;
    int bands = 1;
    int cutoff = 0;
    std::vector<double> qs;
    std::vector<Eigen::MatrixXcd> vectors;  // (2 cutoff + 1) x J per q
};

inline PlanewaveProjector planewave_projector(const PeriodicPotential& v, int bands, int cutoff, int grid_points,
                                              int threads = 1) {
    PlanewaveProjector p{v.lattice, bands, cutoff, bloch::zone_grid(v.lattice, grid_points), {}};
    auto fibers = parallel_map(p.qs.size(), threads, [&](std::size_t i) {
        return eig::solve_lowest(bloch::assemble_fiber(v, {p.qs[i], 0.0}, cutoff), bands, true).vectors;
    });
    p.vectors = std::move(fibers);
    return p;
}

struct A2Estimate {
    double random = 0.0;
    double power = 0.0;
    int samples = 0;
    int iterations = 0;
};

namespace detail {

/// Values and derivatives of functions at all Gauss points of the window.
struct PointSet {
    std::vector<double> x;
    std::vector<double> w;
    long elem_first = 0;  // global index of the first window element
    int per_element = 0;
};

inline PointSet window_points(const fem::Mesh1D& win) {
    const fem::QuadratureRule rule = fem::gauss_rule(10);
    PointSet ps;
    ps.elem_first = win.i_lo;
    ps.per_element = static_cast<int>(rule.nodes.size());
    const double h = win.h();
    for (long e = win.i_lo; e < win.i_hi; ++e)
        for (std::size_t g = 0; g < rule.nodes.size(); ++g) {
            ps.x.push_back(win.node(e) + rule.nodes[g] * h);
            ps.w.push_back(rule.weights[g] * h);
        }
    return ps;
}

/// P1 function with nodal values u on the window: values and slopes at the points.
inline void p1_at_points(const NodalVector& u, const fem::Mesh1D& win, const PointSet& ps,
                         std::vector<double>& f, std::vector<double>& df) {
    const double h = win.h();
    f.assign(ps.x.size(), 0.0);
    df.assign(ps.x.size(), 0.0);
    std::size_t pt = 0;
    for (long e = win.i_lo; e < win.i_hi; ++e) {
        const double u0 = u.at(e);
        const double u1 = u.at(e + 1);
        for (int g = 0; g < ps.per_element; ++g, ++pt) {
            const double s = (ps.x[pt] - win.node(e)) / h;
            f[pt] = (1.0 - s) * u0 + s * u1;
            df[pt] = (u1 - u0) / h;
        }
    }
}

/// Sum over points of w (f g + f' g') for a P1 hat at each node: the vector
/// of H1 pairings with all nodal hats of the window.
inline NodalVector hat_pairings(const std::vector<double>& y, const std::vector<double>& dy, const fem::Mesh1D& win,
                                const PointSet& ps) {
    const double h = win.h();
    NodalVector out{win.i_lo, Eigen::VectorXd::Zero(win.i_hi - win.i_lo + 1)};
    std::size_t pt = 0;
    for (long e = win.i_lo; e < win.i_hi; ++e)
        for (int g = 0; g < ps.per_element; ++g, ++pt) {
            const double s = (ps.x[pt] - win.node(e)) / h;
            const double wt = ps.w[pt];
            out.values(e - win.i_lo) += wt * ((1.0 - s) * y[pt] - dy[pt] / h);
            out.values(e + 1 - win.i_lo) += wt * (s * y[pt] + dy[pt] / h);
        }
    return out;
}

/// Uniform nodal noise smoothed by the inverse H1 Gram of the hats. Raw nodal
/// noise is so rough that both projectors nearly annihilate it.
inline Eigen::VectorXd smooth_noise(std::mt19937_64& rng, Eigen::Index n, double h) {
    std::uniform_real_distribution<double> uni(-1.0, 1.0);
    Eigen::VectorXd c(n);
    for (Eigen::Index i = 0; i < n; ++i) c(i) = uni(rng);
    Eigen::VectorXd d = Eigen::VectorXd::Constant(n, 2.0 / h + 2.0 * h / 3.0);
    Eigen::VectorXd e = Eigen::VectorXd::Constant(std::max<Eigen::Index>(n - 1, 1), -1.0 / h + h / 6.0);
    if (LAPACKE_dptsv(LAPACK_COL_MAJOR, static_cast<lapack_int>(n), 1, d.data(), e.data(), c.data(),
                      static_cast<lapack_int>(n)) != 0)
        throw InvalidMatrix("H1 Gram solve failed");
    return c;
}

/// Tabulated planewave fiber eigenfunctions at the window points.
struct FiberTable {
    Eigen::MatrixXcd e;   // points x (q, j)
    Eigen::MatrixXcd de;
};

inline FiberTable tabulate(const PlanewaveProjector& p, const PointSet& ps) {
    const double g = p.lattice.reciprocal_spacing();
    const double norm = 1.0 / std::sqrt(p.lattice.period);
    const auto np = static_cast<Eigen::Index>(ps.x.size());
    const Eigen::Index cols = static_cast<Eigen::Index>(p.qs.size()) * p.bands;
    FiberTable t{Eigen::MatrixXcd::Zero(np, cols), Eigen::MatrixXcd::Zero(np, cols)};
    const int m = p.cutoff;
    std::vector<Complex> zpow(static_cast<std::size_t>(2 * m + 1));
    for (Eigen::Index i = 0; i < np; ++i) {
        const double x = ps.x[static_cast<std::size_t>(i)];
        const Complex z = std::polar(1.0, g * x);
        zpow[static_cast<std::size_t>(m)] = 1.0;
        for (int k = 1; k <= m; ++k) {
            zpow[static_cast<std::size_t>(m + k)] = zpow[static_cast<std::size_t>(m + k - 1)] * z;
            zpow[static_cast<std::size_t>(m - k)] = std::conj(zpow[static_cast<std::size_t>(m + k)]);
        }
        for (std::size_t iq = 0; iq < p.qs.size(); ++iq) {
            const double q = p.qs[iq];
            const Complex base = std::polar(norm, q * x);
            for (int j = 0; j < p.bands; ++j) {
                Complex val{0.0, 0.0};
                Complex der{0.0, 0.0};
                for (int k = -m; k <= m; ++k) {
                    const Complex c = p.vectors[iq](k + m, j) * zpow[static_cast<std::size_t>(k + m)];
                    val += c;
                    der += Complex(0.0, q + g * k) * c;
                }
                const auto col = static_cast<Eigen::Index>(iq) * p.bands + j;
                t.e(i, col) = base * val;
                t.de(i, col) = base * der;
            }
        }
    }
    return t;
}

}  // namespace detail

/// Estimates sup ||(P - P_n) phi||_{H1} / ||phi||_{H1} over the P1 space of
/// `domain`, by `samples` random members and by power iteration on the
/// normal operator. Both projectors act on the whole kernel window.
inline A2Estimate a2_estimate(const ProjectorKernel& k, const PlanewaveProjector& ref, const fem::Mesh1D& domain,
                              int samples = 50, int iterations = 40, std::uint64_t seed = 20240801) {
    detail::check_window(k, domain);
    if (ref.lattice.period != k.lattice.period || ref.bands != k.bands)
        throw WindowMismatch("reference projector lattice or rank differs from the kernel");
    if (samples < 1) throw InvalidArgument("a2 estimate needs samples >= 1");
    const fem::Mesh1D& win = k.window;
    const detail::PointSet ps = detail::window_points(win);
    const detail::FiberTable ft = detail::tabulate(ref, ps);
    const double inv_q = 1.0 / static_cast<double>(ref.qs.size());
    const Eigen::Index nd = domain.dofs();
    const long d_first = domain.i_lo + 1;
    const long win_nodes = win.i_hi - win.i_lo + 1;
    const auto np = static_cast<Eigen::Index>(ps.x.size());
    Eigen::VectorXd wts(np);
    for (Eigen::Index i = 0; i < np; ++i) wts(i) = ps.w[static_cast<std::size_t>(i)];

    // Pairings <e_{q,j}, phi_a> for each domain hat a (conj(e) against the hat).
    Eigen::MatrixXcd hat_proj = Eigen::MatrixXcd::Zero(ft.e.cols(), nd);
    {
        const double h = win.h();
        for (Eigen::Index a = 0; a < nd; ++a) {
            const long node = d_first + a;
            for (long e = node - 1; e <= node; ++e) {
                const Eigen::Index base = (e - win.i_lo) * ps.per_element;
                for (int g = 0; g < ps.per_element; ++g) {
                    const Eigen::Index pt = base + g;
                    const double s = (ps.x[static_cast<std::size_t>(pt)] - win.node(e)) / h;
                    const double phi = e == node ? 1.0 - s : s;
                    hat_proj.col(a) += wts(pt) * phi * ft.e.row(pt).adjoint();
                }
            }
        }
    }

    // (P - P_n) phi at the points, for coefficients c on the domain hats.
    auto defect = [&](const Eigen::VectorXd& c, std::vector<double>& f, std::vector<double>& df) {
        const Eigen::VectorXcd amp = hat_proj * c.cast<Complex>();
        const Eigen::VectorXd exact = (ft.e * amp).real() * inv_q;
        const Eigen::VectorXd dexact = (ft.de * amp).real() * inv_q;
        const NodalVector u = k.apply({d_first, c}, win.i_lo, win_nodes);
        detail::p1_at_points(u, win, ps, f, df);
        for (Eigen::Index i = 0; i < np; ++i) {
            f[static_cast<std::size_t>(i)] = exact(i) - f[static_cast<std::size_t>(i)];
            df[static_cast<std::size_t>(i)] = dexact(i) - df[static_cast<std::size_t>(i)];
        }
    };
    auto h1_sq = [&](const std::vector<double>& f, const std::vector<double>& df) {
        double s = 0.0;
        for (std::size_t i = 0; i < f.size(); ++i) s += ps.w[i] * (f[i] * f[i] + df[i] * df[i]);
        return s;
    };
    // H1 Gram of the domain hats (tridiagonal).
    const double h = domain.h();
    const double diag = 2.0 / h + 2.0 * h / 3.0;
    const double off = -1.0 / h + h / 6.0;
    auto gram = [&](const Eigen::VectorXd& c) {
        Eigen::VectorXd y = diag * c;
        y.head(nd - 1) += off * c.tail(nd - 1);
        y.tail(nd - 1) += off * c.head(nd - 1);
        return y;
    };

    Eigen::VectorXd sd = Eigen::VectorXd::Constant(nd, diag);
    Eigen::VectorXd se = Eigen::VectorXd::Constant(std::max<Eigen::Index>(nd - 1, 1), off);
    if (LAPACKE_dpttrf(static_cast<lapack_int>(nd), sd.data(), se.data()) != 0)
        throw InvalidMatrix("H1 Gram factorization failed");
    auto gram_solve = [&](Eigen::VectorXd& y) {
        if (LAPACKE_dpttrs(LAPACK_COL_MAJOR, static_cast<lapack_int>(nd), 1, sd.data(), se.data(), y.data(),
                           static_cast<lapack_int>(nd)) != 0)
            throw InvalidMatrix("H1 Gram solve failed");
    };

    A2Estimate out;
    out.samples = samples;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> uni(-1.0, 1.0);
    std::vector<double> f;
    std::vector<double> df;
    for (int s = 0; s < samples; ++s) {
        Eigen::VectorXd c = detail::smooth_noise(rng, nd, h);
        c /= std::sqrt(c.dot(gram(c)));
        defect(c, f, df);
        out.random = std::max(out.random, std::sqrt(h1_sq(f, df)));
    }

    // Power iteration c <- S^{-1} T^* T c in the H1 metric S of the domain.
    Eigen::VectorXd c(nd);
    for (Eigen::Index i = 0; i < nd; ++i) c(i) = uni(rng);
    double est = 0.0;
    for (int it = 0; it < iterations; ++it) {
        c /= std::sqrt(c.dot(gram(c)));
        defect(c, f, df);
        est = std::sqrt(h1_sq(f, df));
        out.iterations = it + 1;
        // T^* y: pairings of y with (P - P_n) phi_a for all a.
        Eigen::VectorXcd z = Eigen::VectorXcd::Zero(ft.e.cols());
        for (Eigen::Index i = 0; i < np; ++i) {
            const double wf = wts(i) * f[static_cast<std::size_t>(i)];
            const double wd = wts(i) * df[static_cast<std::size_t>(i)];
            z += wf * ft.e.row(i).transpose() + wd * ft.de.row(i).transpose();
        }
        const Eigen::VectorXd exact_part = (hat_proj.transpose() * z).real() * inv_q;
        const NodalVector ell = detail::hat_pairings(f, df, win, ps);
        const NodalVector gl = k.apply_g(ell, d_first - 1, nd + 2);
        const NodalVector mgl = k.line_mass(gl);
        Eigen::VectorXd y(nd);
        for (Eigen::Index a = 0; a < nd; ++a) y(a) = exact_part(a) - mgl.at(d_first + a);
        gram_solve(y);
        if (!(y.norm() > 0.0)) break;
        c = y;
    }
    out.power = est;
    return out;
}

/// Same estimate between two kernels on the same window; exact P1 norms.
inline A2Estimate a2_estimate(const ProjectorKernel& k, const ProjectorKernel& ref, const fem::Mesh1D& domain,
                              int samples = 50, std::uint64_t seed = 20240801) {
    detail::check_window(k, domain);
    if (ref.window.i_lo != k.window.i_lo || ref.window.i_hi != k.window.i_hi ||
        ref.cells_per_period != k.cells_per_period || ref.lattice.period != k.lattice.period)
        throw WindowMismatch("kernels live on different windows");
    const fem::Mesh1D& win = k.window;
    const long d_first = domain.i_lo + 1;
    const Eigen::Index nd = domain.dofs();
    const long nodes = win.i_hi - win.i_lo + 1;
    std::mt19937_64 rng(seed);
    A2Estimate out;
    out.samples = samples;
    for (int s = 0; s < samples; ++s) {
        const Eigen::VectorXd c = detail::smooth_noise(rng, nd, domain.h());
        const fem::FemFunction phi = fem::make_function(domain, c);
        const double norm = std::hypot(fem::l2_norm(phi), fem::h1_seminorm(phi));
        const NodalVector a = k.apply({d_first, c}, win.i_lo, nodes);
        const NodalVector b = ref.apply({d_first, c}, win.i_lo, nodes);
        const fem::FemFunction diff = fem::make_function(win, (a.values - b.values).segment(1, win.dofs()));
        out.random = std::max(out.random, std::hypot(fem::l2_norm(diff), fem::h1_seminorm(diff)) / norm);
    }
    out.power = out.random;
    return out;
}

}  // namespace gapeig::augment
