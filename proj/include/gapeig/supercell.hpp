#pragma once

// Planewave supercell discretization of -Delta + V_per + W on Gamma_L, with
// the mismatched cells Gamma_{L+t} used to exhibit pollution.

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "gapeig/bloch.hpp"
#include "gapeig/eigcore.hpp"
#include "gapeig/model.hpp"
#include "gapeig/parallel.hpp"
#include "gapeig/spectrum.hpp"

namespace gapeig::supercell {

inline constexpr std::size_t kMaxPlanewaves = 20000;

/// Planewaves e^{ik.x}/sqrt|box| with k = 2 pi p / l, p in Z^d, |p|_2 <= N,
/// on the box of side l = box_periods * b.
struct SupercellBasis {
    Lattice lattice;
    double box_periods = 1.0;
    int cutoff = 0;
    /// Nonzero representatives of the {p, -p} pairs, ascending in (p_1, p_0).
    std::vector<Index> pairs;

    double box_length() const { return box_periods * lattice.period; }
    double kscale() const { return 2.0 * kPi / box_length(); }
    double kinetic(const Index& p) const {
        const double s = kscale();
        return s * s * (static_cast<double>(p[0]) * p[0] + static_cast<double>(p[1]) * p[1]);
    }
    /// Number of planewaves, 2 * pairs + 1.
    std::size_t size() const { return 2 * pairs.size() + 1; }

    /// Complex planewave order: 0, p_1, -p_1, p_2, -p_2, ...
    std::vector<Index> modes() const {
        std::vector<Index> out{{0, 0}};
        for (const Index& p : pairs) {
            out.push_back(p);
            out.push_back(detail::negate(p));
        }
        return out;
    }
};

inline SupercellBasis make_basis(const Lattice& lattice, double box_periods, int cutoff) {
    lattice.validate();
    if (!(box_periods >= 1.0)) throw InvalidArgument("supercell size must be >= 1");
    if (cutoff < 1) throw InvalidArgument("supercell cutoff N must be >= 1");
    SupercellBasis basis{lattice, box_periods, cutoff, {}};
    const long r2 = static_cast<long>(cutoff) * cutoff;
    const int top = lattice.dimension == 2 ? cutoff : 0;
    for (int p1 = 0; p1 <= top; ++p1)
        for (int p0 = -cutoff; p0 <= cutoff; ++p0) {
            const Index p{p0, p1};
            if (p == Index{0, 0} || !detail::is_canonical(p)) continue;
            if (static_cast<long>(p0) * p0 + static_cast<long>(p1) * p1 > r2) continue;
            basis.pairs.push_back(p);
        }
    if (basis.size() > kMaxPlanewaves)
        throw BasisTooLarge(std::to_string(basis.size()) + " planewaves exceed the cap of " +
                            std::to_string(kMaxPlanewaves));
    return basis;
}

namespace detail {

/// Fourier coefficients of V + W for every index difference |d|_inf <= span.
class DifferenceTable {
 public:
    DifferenceTable(int dimension, int span)
        : dimension_(dimension), span_(span), width_(2 * span + 1),
          data_(static_cast<std::size_t>(width_) * (dimension == 2 ? width_ : 1)) {}

    Complex& at(int d0, int d1) { return data_[offset(d0, d1)]; }
    Complex operator()(int d0, int d1) const { return data_[offset(d0, d1)]; }
    int span() const { return span_; }
    int dimension() const { return dimension_; }

 private:
    std::size_t offset(int d0, int d1) const {
        const int row = dimension_ == 2 ? d1 + span_ : 0;
        return static_cast<std::size_t>(row) * width_ + static_cast<std::size_t>(d0 + span_);
    }

    int dimension_;
    int span_;
    int width_;
    std::vector<Complex> data_;
};

template <class F>
void fill_table(DifferenceTable& table, F&& coefficient) {
    const int s = table.span();
    const int top = table.dimension() == 2 ? s : 0;
    for (int d1 = -top; d1 <= top; ++d1)
        for (int d0 = -s; d0 <= s; ++d0) {
            const Index d{d0, d1};
            if (!gapeig::detail::is_canonical(d)) continue;
            const Complex c = coefficient(d);
            table.at(d0, d1) = c;
            if (d != Index{0, 0}) table.at(-d0, -d1) = std::conj(c);
        }
    table.at(0, 0) = table(0, 0).real();
}

inline BoxCoefficients resolved_perturbation(const Perturbation& w, const Lattice& lattice, double box_periods,
                                             int cutoff, int grid) {
    const BoxCoefficients c = grid == 0 ? adaptive_box_coefficients(w, lattice, box_periods, cutoff)
                                        : perturbation_box_coefficients(w, lattice, box_periods, grid);
    if (c.max_index() < 2 * cutoff)
        throw ResolutionError("FFT grid " + std::to_string(c.grid()) + " cannot represent index differences up to " +
                              std::to_string(2 * cutoff));
    return c;
}

/// Matched cell: V_per lands exactly on p = m L, W_L from the FFT.
inline DifferenceTable matched_table(const PeriodicPotential& v, const Perturbation& w, int L, int cutoff,
                                     int grid) {
    const int d = v.lattice.dimension;
    const BoxCoefficients wl = resolved_perturbation(w, v.lattice, L, cutoff, grid);
    DifferenceTable table(d, 2 * cutoff);
    for (const auto& [m, c] : fourier_coefficients(v)) {
        const Index p{m[0] * L, d == 2 ? m[1] * L : 0};
        if (std::abs(p[0]) > 2 * cutoff || std::abs(p[1]) > 2 * cutoff) continue;
        table.at(p[0], p[1]) += c;
    }
    DifferenceTable out(d, 2 * cutoff);
    fill_table(out, [&](const Index& p) { return table(p[0], p[1]) + wl.at(p); });
    return out;
}

/// Mismatched cell: both potentials are restricted to the box and periodized.
inline DifferenceTable mismatched_table(const PeriodicPotential& v, const Perturbation& w, double box_periods,
                                        int cutoff, int grid) {
    const BoxCoefficients wl = resolved_perturbation(w, v.lattice, box_periods, cutoff, grid);
    const FourierMap vhat = fourier_coefficients(v);
    DifferenceTable out(v.lattice.dimension, 2 * cutoff);
    fill_table(out, [&](const Index& p) {
        return box_restricted_coefficient(vhat, v.lattice, box_periods, p) + wl.at(p);
    });
    return out;
}

inline Complex entry(const SupercellBasis& basis, const DifferenceTable& t, const Index& p, const Index& q) {
    Complex h = t(p[0] - q[0], p[1] - q[1]);
    if (p == q) h += basis.kinetic(p);
    return h;
}

/// Real symmetric matrix of H on the real functions {1, sqrt2 cos(k.x),
/// sqrt2 sin(k.x)} ordered u, c_1, s_1, c_2, s_2, ...
inline Eigen::MatrixXd real_matrix(const SupercellBasis& basis, const DifferenceTable& t) {
    const auto n = static_cast<Eigen::Index>(basis.size());
    const auto& pr = basis.pairs;
    const double r2 = std::sqrt(2.0);
    Eigen::MatrixXd h(n, n);
    h(0, 0) = t(0, 0).real();
    for (std::size_t j = 0; j < pr.size(); ++j) {
        const Complex u = t(-pr[j][0], -pr[j][1]);
        const auto cj = static_cast<Eigen::Index>(2 * j + 1);
        h(cj, 0) = r2 * u.real();
        h(cj + 1, 0) = r2 * u.imag();
    }
    for (std::size_t j = 0; j < pr.size(); ++j) {
        const auto cj = static_cast<Eigen::Index>(2 * j + 1);
        for (std::size_t i = j; i < pr.size(); ++i) {
            const auto ci = static_cast<Eigen::Index>(2 * i + 1);
            const Complex a = entry(basis, t, pr[i], pr[j]);
            const Complex m = t(pr[i][0] + pr[j][0], pr[i][1] + pr[j][1]);
            h(ci, cj) = a.real() + m.real();
            h(ci + 1, cj + 1) = a.real() - m.real();
            h(ci, cj + 1) = a.imag() - m.imag();
            h(ci + 1, cj) = -a.imag() - m.imag();
        }
    }
    h.triangularView<Eigen::StrictlyUpper>() = h.transpose();
    return h;
}

inline Eigen::MatrixXcd complex_matrix(const SupercellBasis& basis, const DifferenceTable& t) {
    const auto modes = basis.modes();
    const auto n = static_cast<Eigen::Index>(modes.size());
    Eigen::MatrixXcd h(n, n);
    for (Eigen::Index j = 0; j < n; ++j)
        for (Eigen::Index i = 0; i < n; ++i) h(i, j) = entry(basis, t, modes[i], modes[j]);
    return h;
}

inline void check_sizes(const PeriodicPotential& v, const Perturbation& w, int L, int cutoff) {
    v.lattice.validate();
    w.validate();
    if (w.dimension != v.lattice.dimension) throw InvalidArgument("perturbation and lattice dimensions differ");
    if (L < 1) throw InvalidArgument("supercell size L must be >= 1");
    if (cutoff < L) throw InvalidArgument("supercell cutoff N must be >= L");
}

inline SpectrumResult window_spectrum(Eigen::MatrixXd h, const bloch::GapWindow& window, bool want_vectors) {
    SpectrumResult r;
    r.method = "supercell";
    r.window = window;
    if (want_vectors) {
        const auto sol = eig::solve_window(eig::RealPencil::standard(std::move(h)), window.alpha, window.beta, true);
        r.eigenvalues.assign(sol.values.data(), sol.values.data() + sol.values.size());
        r.vectors = sol.vectors;
    } else {
        const Eigen::VectorXd vals = eig::symmetric_window_values(std::move(h), window.alpha, window.beta);
        r.eigenvalues = inside(vals, window.alpha, window.beta);
    }
    return r;
}

}  // namespace detail

/// Hermitian planewave matrix of H_{L,N} in the order of SupercellBasis::modes.
inline eig::ComplexPencil assemble_supercell(const PeriodicPotential& v, const Perturbation& w, int L, int cutoff,
                                             int grid = 0) {
    detail::check_sizes(v, w, L, cutoff);
    const SupercellBasis basis = make_basis(v.lattice, L, cutoff);
    return eig::ComplexPencil::standard(detail::complex_matrix(basis, detail::matched_table(v, w, L, cutoff, grid)));
}

/// The same operator on the real subspace c_{-k} = conj(c_k), in the real
/// cos/sin basis. It has the spectrum of assemble_supercell.
inline eig::RealPencil assemble_supercell_real(const PeriodicPotential& v, const Perturbation& w, int L, int cutoff,
                                               int grid = 0) {
    detail::check_sizes(v, w, L, cutoff);
    const SupercellBasis basis = make_basis(v.lattice, L, cutoff);
    return eig::RealPencil::standard(detail::real_matrix(basis, detail::matched_table(v, w, L, cutoff, grid)));
}

inline SpectrumResult supercell_spectrum(const PeriodicPotential& v, const Perturbation& w, int L, int cutoff,
                                         const bloch::GapWindow& window, int grid = 0, bool want_vectors = false) {
    auto pencil = assemble_supercell_real(v, w, L, cutoff, grid);
    const auto n = pencil.size();
    SpectrumResult r = detail::window_spectrum(std::move(pencil.a), window, want_vectors);
    r.params = {{"L", L}, {"t", 0.0}, {"N", cutoff}, {"planewaves", static_cast<double>(n)}};
    return r;
}

inline SpectrumResult mismatched_supercell_spectrum(const PeriodicPotential& v, const Perturbation& w, int L,
                                                    double t, int cutoff, const bloch::GapWindow& window,
                                                    int grid = 0, bool want_vectors = false) {
    detail::check_sizes(v, w, L, cutoff);
    if (!(t > 0.0 && t < 1.0)) throw InvalidArgument("mismatch t must lie in (0, 1)");
    const double box = L + t;
    const SupercellBasis basis = make_basis(v.lattice, box, cutoff);
    Eigen::MatrixXd h = detail::real_matrix(basis, detail::mismatched_table(v, w, box, cutoff, grid));
    const auto n = h.rows();
    SpectrumResult r = detail::window_spectrum(std::move(h), window, want_vectors);
    r.params = {{"L", L}, {"t", t}, {"N", cutoff}, {"planewaves", static_cast<double>(n)}};
    return r;
}

struct ScanRow {
    int L = 0;
    int N = 0;
    std::vector<double> eigenvalues;
    /// Hausdorff distance to the previous row's set; empty for the first row.
    std::optional<double> delta;
};

inline std::vector<ScanRow> convergence_scan(const PeriodicPotential& v, const Perturbation& w,
                                             const std::vector<int>& sizes, int ratio,
                                             const bloch::GapWindow& window, int threads = 1) {
    if (sizes.empty()) throw InvalidArgument("convergence scan needs at least one L");
    for (std::size_t i = 1; i < sizes.size(); ++i)
        if (sizes[i] <= sizes[i - 1]) throw InvalidArgument("convergence scan L list must be ascending");
    if (ratio < 4) throw InvalidArgument("convergence scan needs N/L >= 4");
    auto spectra = parallel_map(sizes.size(), threads, [&](std::size_t i) {
        return supercell_spectrum(v, w, sizes[i], ratio * sizes[i], window).eigenvalues;
    });
    std::vector<ScanRow> rows;
    for (std::size_t i = 0; i < sizes.size(); ++i) {
        ScanRow row{sizes[i], ratio * sizes[i], std::move(spectra[i]), std::nullopt};
        if (i > 0) row.delta = hausdorff(rows.back().eigenvalues, row.eigenvalues);
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace gapeig::supercell
