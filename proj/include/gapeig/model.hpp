#pragma once

// Lattices, periodic potentials, localized perturbations and their Fourier
// data. Every discretization reads its potentials from here.

#include <array>
#include <cmath>
#include <complex>
#include <cstddef>
#include <map>
#include <numbers>
#include <string>
#include <vector>

#include <fftw3.h>

#include "gapeig/error.hpp"

namespace gapeig {

using Complex = std::complex<double>;

/// Integer multi-index; the second slot is unused (and kept at 0) in 1D.
using Index = std::array<int, 2>;
/// Point of R^d; the second slot is unused in 1D.
using Point = std::array<double, 2>;

inline constexpr double kPi = std::numbers::pi;

/// Cubic lattice bZ^d with unit cell (-b/2, b/2]^d.
struct Lattice {
    int dimension = 1;
    double period = 2.0 * kPi;

    void validate() const {
        if (dimension != 1 && dimension != 2)
            throw InvalidArgument("lattice dimension must be 1 or 2");
        if (!(period > 0.0) || !std::isfinite(period))
            throw InvalidArgument("lattice period must be positive");
    }

    double reciprocal_spacing() const { return 2.0 * kPi / period; }
    double cell_volume() const { return std::pow(period, dimension); }
    double zone_edge() const { return kPi / period; }
};

enum class TrigKind { cos, sin };

struct TrigTerm {
    double amplitude = 0.0;
    TrigKind kind = TrigKind::cos;
    Index wavevector{0, 0};
    double phase = 0.0;
};

/// Finite trigonometric polynomial sum_t a_t kind_t(2 pi m_t . x / b + phase_t).
struct PeriodicPotential {
    Lattice lattice;
    std::vector<TrigTerm> terms;
};

using FourierMap = std::map<Index, Complex>;

namespace detail {

inline double dot(const Index& m, const Point& x, int d) {
    double s = m[0] * x[0];
    if (d == 2) s += m[1] * x[1];
    return s;
}

inline Index negate(const Index& m) { return {-m[0], -m[1]}; }

/// True for the representative of each {m, -m} pair (and for m = 0).
inline bool is_canonical(const Index& m) {
    return m[1] > 0 || (m[1] == 0 && m[0] >= 0);
}

}  // namespace detail

inline double eval_periodic(const PeriodicPotential& v, const Point& x) {
    const double scale = v.lattice.reciprocal_spacing();
    double sum = 0.0;
    for (const auto& t : v.terms) {
        const double theta = scale * detail::dot(t.wavevector, x, v.lattice.dimension) + t.phase;
        sum += t.amplitude * (t.kind == TrigKind::cos ? std::cos(theta) : std::sin(theta));
    }
    return sum;
}

/// Exact Euler expansion: V(x) = sum_m c(m) exp(i 2 pi m.x / b). Only canonical
/// indices are accumulated; their partners are written as exact conjugates.
inline FourierMap fourier_coefficients(const PeriodicPotential& v) {
    FourierMap canon;
    for (const auto& t : v.terms) {
        if (t.amplitude == 0.0) continue;
        Index m = t.wavevector;
        if (v.lattice.dimension == 1) m[1] = 0;
        double amp = t.amplitude;
        double phase = t.phase;
        if (m == Index{0, 0}) {
            const double c = t.kind == TrigKind::cos ? std::cos(phase) : std::sin(phase);
            canon[m] += Complex(amp * c, 0.0);
            continue;
        }
        if (!detail::is_canonical(m)) {
            // cos(-u + p) = cos(u - p), sin(-u + p) = -sin(u - p)
            m = detail::negate(m);
            phase = -phase;
            if (t.kind == TrigKind::sin) amp = -amp;
        }
        const Complex e = std::polar(1.0, phase);
        canon[m] += t.kind == TrigKind::cos ? 0.5 * amp * e : Complex(0.0, -0.5 * amp) * e;
    }
    FourierMap out;
    for (const auto& [m, c] : canon) {
        if (c == Complex(0.0, 0.0)) continue;
        out[m] = c;
        if (m != Index{0, 0}) out[detail::negate(m)] = std::conj(c);
    }
    return out;
}

/// One axis factor (x_i + shift)^power.
struct AffineFactor {
    double shift = 0.0;
    int power = 0;
};

/// coefficient * prod_i (x_i + c_i)^{p_i} * exp(-|x - x0|^2 / sigma^2)
struct GaussianTerm {
    double coefficient = 0.0;
    std::array<AffineFactor, 2> factors{};
    Point center{0.0, 0.0};
    double sigma = 1.0;
};

struct Perturbation {
    int dimension = 1;
    std::vector<GaussianTerm> terms;

    void validate() const {
        if (dimension != 1 && dimension != 2)
            throw InvalidArgument("perturbation dimension must be 1 or 2");
        for (const auto& t : terms) {
            if (!(t.sigma > 0.0)) throw InvalidArgument("gaussian width must be positive");
            for (const auto& f : t.factors)
                if (f.power < 0) throw InvalidArgument("affine power must be nonnegative");
        }
    }
};

inline double eval_perturbation(const Perturbation& w, const Point& x) {
    double sum = 0.0;
    for (const auto& t : w.terms) {
        double r2 = 0.0;
        double poly = t.coefficient;
        for (int i = 0; i < w.dimension; ++i) {
            const double dx = x[i] - t.center[i];
            r2 += dx * dx;
            if (t.factors[i].power > 0) poly *= std::pow(x[i] + t.factors[i].shift, t.factors[i].power);
        }
        sum += poly * std::exp(-r2 / (t.sigma * t.sigma));
    }
    return sum;
}

namespace detail {

// sup_s |s + c|^p exp(-(s - s0)^2 / sigma^2); stationary points solve
// 2 (s - s0)(s + c) = p sigma^2.
inline double axis_sup(const AffineFactor& f, double s0, double sigma) {
    if (f.power == 0) return 1.0;
    const double p = f.power;
    const double c = f.shift;
    // s^2 + (c - s0) s - (s0 c + p sigma^2 / 2) = 0
    const double bq = c - s0;
    const double cq = -(s0 * c + 0.5 * p * sigma * sigma);
    const double disc = std::sqrt(bq * bq - 4.0 * cq);
    double best = 0.0;
    for (double s : {0.5 * (-bq + disc), 0.5 * (-bq - disc)}) {
        const double v = std::pow(std::abs(s + c), p) * std::exp(-(s - s0) * (s - s0) / (sigma * sigma));
        best = std::max(best, v);
    }
    return best;
}

}  // namespace detail

/// Upper bound on sup_x |W(x)|; each term is separable so its sup is exact.
inline double sup_bound(const Perturbation& w) {
    double bound = 0.0;
    for (const auto& t : w.terms) {
        double term = std::abs(t.coefficient);
        for (int i = 0; i < w.dimension; ++i)
            term *= detail::axis_sup(t.factors[i], t.center[i], t.sigma);
        bound += term;
    }
    return bound;
}

/// Sampled Fourier data of a function periodized over the box
/// (-l/2, l/2]^d, indexed by frequency 2 pi p / l.
class BoxCoefficients {
 public:
    BoxCoefficients() = default;
    BoxCoefficients(int dimension, int grid, double box_length, std::vector<Complex> data, double aliasing)
        : dimension_(dimension), grid_(grid), box_length_(box_length), data_(std::move(data)), aliasing_(aliasing) {}

    int dimension() const { return dimension_; }
    int grid() const { return grid_; }
    double box_length() const { return box_length_; }
    double aliasing_estimate() const { return aliasing_; }

    /// Largest |p_i| that is resolved; beyond it the coefficient is 0.
    int max_index() const { return grid_ / 2 - 1; }

    Complex at(const Index& p) const {
        const int lim = max_index();
        if (std::abs(p[0]) > lim || (dimension_ == 2 && std::abs(p[1]) > lim)) return {0.0, 0.0};
        if (dimension_ == 1) {
            if (p[0] < 0) return std::conj(raw({-p[0], 0}));
            return raw(p);
        }
        if (!detail::is_canonical(p)) return std::conj(raw(detail::negate(p)));
        return raw(p);
    }

    /// Sum over all resolved frequencies of |c(p)|^2.
    double sum_squares() const {
        double s = 0.0;
        const int lim = max_index();
        if (dimension_ == 1) {
            for (int p = -lim; p <= lim; ++p) s += std::norm(at({p, 0}));
        } else {
            for (int p1 = -lim; p1 <= lim; ++p1)
                for (int p0 = -lim; p0 <= lim; ++p0) s += std::norm(at({p0, p1}));
        }
        return s;
    }

 private:
    // r2c layout: last axis holds only grid/2 + 1 entries.
    Complex raw(const Index& p) const {
        const int half = grid_ / 2 + 1;
        if (dimension_ == 1) return data_[static_cast<std::size_t>(p[0])];
        const int r0 = (p[0] % grid_ + grid_) % grid_;
        return data_[static_cast<std::size_t>(r0) * half + static_cast<std::size_t>(p[1])];
    }

    int dimension_ = 1;
    int grid_ = 0;
    double box_length_ = 0.0;
    std::vector<Complex> data_;
    double aliasing_ = 0.0;
};

inline constexpr double kAliasingTolerance = 1e-8;

inline bool is_power_of_two(int n) { return n > 0 && (n & (n - 1)) == 0; }

/// Smallest admissible FFT grid that also covers all index differences of a
/// planewave ball of radius n_cut, i.e. |p| <= 2 n_cut without wrap-around.
inline int default_grid(double box_periods, int n_cut) {
    const int need = std::max(static_cast<int>(std::ceil(8.0 * box_periods)), 4 * n_cut + 2);
    int g = 8;
    while (g < need) g *= 2;
    return g;
}

/// Samples W on a uniform grid of the box (-l/2, l/2]^d and returns its
/// discrete Fourier coefficients. `box_periods` = l / b must satisfy
/// grid >= 8 * box_periods.
inline BoxCoefficients perturbation_box_coefficients(const Perturbation& w, const Lattice& lattice,
                                                     double box_periods, int grid) {
    lattice.validate();
    w.validate();
    if (w.dimension != lattice.dimension) throw InvalidArgument("perturbation and lattice dimensions differ");
    if (!(box_periods >= 1.0)) throw InvalidArgument("supercell size must be >= 1");
    if (!is_power_of_two(grid)) throw InvalidArgument("FFT grid must be a power of two");
    if (grid < 8.0 * box_periods)
        throw ResolutionError("FFT grid " + std::to_string(grid) + " below 8 * supercell size");

    const int d = lattice.dimension;
    const double ell = box_periods * lattice.period;
    const double dx = ell / grid;
    const int half = grid / 2 + 1;
    const std::size_t n_real = d == 1 ? grid : static_cast<std::size_t>(grid) * grid;
    const std::size_t n_cplx = d == 1 ? half : static_cast<std::size_t>(grid) * half;

    double* in = fftw_alloc_real(n_real);
    fftw_complex* out = fftw_alloc_complex(n_cplx);
    fftw_plan plan = d == 1 ? fftw_plan_dft_r2c_1d(grid, in, out, FFTW_ESTIMATE)
                            : fftw_plan_dft_r2c_2d(grid, grid, in, out, FFTW_ESTIMATE);
    if (d == 1) {
        for (int j = 0; j < grid; ++j) in[j] = eval_perturbation(w, {-0.5 * ell + j * dx, 0.0});
    } else {
        for (int j0 = 0; j0 < grid; ++j0)
            for (int j1 = 0; j1 < grid; ++j1)
                in[static_cast<std::size_t>(j0) * grid + j1] =
                    eval_perturbation(w, {-0.5 * ell + j0 * dx, -0.5 * ell + j1 * dx});
    }
    fftw_execute(plan);

    // Shifting the origin to -l/2 multiplies coefficient p by (-1)^{|p|_1}.
    std::vector<Complex> data(n_cplx);
    const double inv = 1.0 / static_cast<double>(n_real);
    for (std::size_t r = 0; r < n_cplx; ++r) {
        int parity = 0;
        if (d == 1) {
            parity = static_cast<int>(r);
        } else {
            const int r0 = static_cast<int>(r / half);
            const int r1 = static_cast<int>(r % half);
            parity = r0 + r1;
        }
        const double sign = (parity % 2 == 0) ? inv : -inv;
        data[r] = Complex(out[r][0] * sign, out[r][1] * sign);
    }
    fftw_destroy_plan(plan);
    fftw_free(in);
    fftw_free(out);

    const BoxCoefficients coeffs(d, grid, ell, data, 0.0);

    // Outer shell max|p_i| >= grid/4 should carry nothing for a resolved W.
    double peak = 0.0;
    double shell = 0.0;
    const int lim = coeffs.max_index();
    const int quarter = grid / 4;
    auto visit = [&](const Index& p) {
        const double a = std::abs(coeffs.at(p));
        peak = std::max(peak, a);
        if (std::max(std::abs(p[0]), std::abs(p[1])) >= quarter) shell = std::max(shell, a);
    };
    if (d == 1) {
        for (int p = -lim; p <= lim; ++p) visit({p, 0});
    } else {
        for (int p1 = -lim; p1 <= lim; ++p1)
            for (int p0 = -lim; p0 <= lim; ++p0) visit({p0, p1});
    }
    const double aliasing = peak > 0.0 ? shell / peak : 0.0;
    if (aliasing > kAliasingTolerance)
        throw ResolutionError("perturbation under-resolved on grid " + std::to_string(grid) +
                              " (relative aliasing " + std::to_string(aliasing) + ")");
    return BoxCoefficients(d, grid, ell, std::move(data), aliasing);
}

/// Box coefficients on the smallest grid >= default_grid that passes the
/// aliasing check.
inline BoxCoefficients adaptive_box_coefficients(const Perturbation& w, const Lattice& lattice,
                                                 double box_periods, int n_cut) {
    const int limit = lattice.dimension == 1 ? (1 << 18) : (1 << 12);
    for (int grid = default_grid(box_periods, n_cut);; grid *= 2) {
        try {
            return perturbation_box_coefficients(w, lattice, box_periods, grid);
        } catch (const ResolutionError&) {
            if (grid >= limit) throw;
        }
    }
}

/// Fourier coefficients of W_L, the L-cell periodic extension of W restricted to Gamma_L.
inline BoxCoefficients perturbation_supercell_coefficients(const Perturbation& w, const Lattice& lattice, int L,
                                                           int grid) {
    if (L < 1) throw InvalidArgument("supercell size L must be >= 1");
    return perturbation_box_coefficients(w, lattice, static_cast<double>(L), grid);
}

/// Exact coefficient at frequency 2 pi p / l of the box-periodized restriction
/// of V to (-l/2, l/2]^d; for l an integer multiple of b this is the embedded
/// unit-cell coefficient (or 0).
inline Complex box_restricted_coefficient(const FourierMap& vhat, const Lattice& lattice, double box_periods,
                                          const Index& p) {
    const double ell = box_periods * lattice.period;
    const double g = lattice.reciprocal_spacing();
    const double kscale = 2.0 * kPi / ell;
    Complex sum{0.0, 0.0};
    for (const auto& [m, c] : vhat) {
        double factor = 1.0;
        for (int i = 0; i < lattice.dimension; ++i) {
            const double omega = g * m[i] - kscale * p[i];
            const double arg = 0.5 * omega * ell;
            factor *= std::abs(arg) < 1e-300 ? 1.0 : std::sin(arg) / arg;
        }
        sum += c * factor;
    }
    return sum;
}

}  // namespace gapeig
