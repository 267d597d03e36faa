#pragma once

// P1 finite elements for -u'' + V u on truncated 1D domains with Dirichlet
// ends, mode localization diagnostics and the half-line operators H^+-(t).

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include <boost/math/quadrature/gauss.hpp>

#include "gapeig/bloch.hpp"
#include "gapeig/eigcore.hpp"
#include "gapeig/model.hpp"
#include "gapeig/spectrum.hpp"

namespace gapeig::fem {

using Potential1D = std::function<double(double)>;

/// Uniform mesh with nodes at i h, h = b / n_c, for i_lo <= i <= i_hi; the
/// end nodes carry homogeneous Dirichlet conditions.
struct Mesh1D {
    Lattice lattice;
    int cells_per_period = 0;
    long i_lo = 0;
    long i_hi = 0;

    double h() const { return lattice.period / cells_per_period; }
    double node(long i) const { return static_cast<double>(i) * h(); }
    double x_lo() const { return node(i_lo); }
    double x_hi() const { return node(i_hi); }
    long elements() const { return i_hi - i_lo; }
    /// Number of free (interior) nodes.
    Eigen::Index dofs() const { return static_cast<Eigen::Index>(i_hi - i_lo - 1); }
};

namespace detail {

/// Node index of x on hZ, or throws MeshOffsetError.
inline long snap(double x, double h, const char* what) {
    const double r = x / h;
    const double n = std::round(r);
    if (std::abs(r - n) > 1e-9 * std::max(1.0, std::abs(r)))
        throw MeshOffsetError(std::string(what) + " is not on the mesh lattice hZ");
    return static_cast<long>(n);
}

inline void check_lattice(const Lattice& lattice) {
    lattice.validate();
    if (lattice.dimension != 1) throw InvalidArgument("finite elements are one-dimensional");
}

}  // namespace detail

/// Mesh of [x_lo, x_hi]; both ends must be nodes of hZ.
inline Mesh1D interval_mesh(const Lattice& lattice, int cells_per_period, double x_lo, double x_hi) {
    detail::check_lattice(lattice);
    if (cells_per_period < 1) throw InvalidArgument("cells per period must be >= 1");
    const double h = lattice.period / cells_per_period;
    Mesh1D m{lattice, cells_per_period, detail::snap(x_lo, h, "domain start"), detail::snap(x_hi, h, "domain end")};
    if (static_cast<double>(m.i_hi - m.i_lo) < 4.0 * cells_per_period - 1e-9)
        throw InvalidArgument("domain must span at least 4 periods");
    return m;
}

/// Mesh of [-(n_half + t) b, (n_half + t) b].
inline Mesh1D build_mesh(const Lattice& lattice, int cells_per_period, double n_half, double t) {
    detail::check_lattice(lattice);
    if (cells_per_period < 1) throw InvalidArgument("cells per period must be >= 1");
    if (!(t >= 0.0 && t < 1.0)) throw InvalidArgument("offset t must lie in [0, 1)");
    const double shift = t * cells_per_period;
    if (std::abs(shift - std::round(shift)) > 1e-9)
        throw MeshOffsetError("offset t b is not a multiple of h");
    if (cells_per_period < 10) throw InvalidArgument("cells per period must be >= 10");
    if (!(n_half >= 2.0) || std::abs(2.0 * n_half - std::round(2.0 * n_half)) > 1e-12)
        throw InvalidArgument("n_half must be an integer or half-integer >= 2");
    const double half = (n_half + t) * lattice.period;
    return interval_mesh(lattice, cells_per_period, -half, half);
}

/// Gauss-Legendre rule mapped to [0, 1].
struct QuadratureRule {
    std::vector<double> nodes;
    std::vector<double> weights;
};

namespace detail {

template <unsigned Points>
QuadratureRule gauss_on_unit() {
    using G = boost::math::quadrature::gauss<double, Points>;
    QuadratureRule r;
    const auto& x = G::abscissa();
    const auto& w = G::weights();
    for (std::size_t i = 0; i < x.size(); ++i) {
        r.nodes.push_back(0.5 * (1.0 + x[i]));
        r.weights.push_back(0.5 * w[i]);
        if (x[i] != 0.0) {
            r.nodes.push_back(0.5 * (1.0 - x[i]));
            r.weights.push_back(0.5 * w[i]);
        }
    }
    return r;
}

}  // namespace detail

inline QuadratureRule gauss_rule(int points) {
    switch (points) {
        case 10: return detail::gauss_on_unit<10>();
        case 20: return detail::gauss_on_unit<20>();
        default: throw InvalidArgument("supported Gauss orders are 10 and 20");
    }
}

inline Potential1D total_potential(const PeriodicPotential& v, const Perturbation& w) {
    detail::check_lattice(v.lattice);
    if (w.dimension != 1) throw InvalidArgument("perturbation must be one-dimensional");
    return [v, w](double x) { return eval_periodic(v, {x, 0.0}) + eval_perturbation(w, {x, 0.0}); };
}

/// Local 2x2 matrices of one element [x0, x0 + h]: stiffness + potential and mass.
struct ElementMatrices {
    std::array<std::array<double, 2>, 2> a{};
    std::array<std::array<double, 2>, 2> b{};
};

inline ElementMatrices element_matrices(const Potential1D& potential, double x0, double h,
                                        const QuadratureRule& rule) {
    ElementMatrices m;
    for (std::size_t g = 0; g < rule.nodes.size(); ++g) {
        const double s = rule.nodes[g];
        const double f = potential(x0 + s * h) * rule.weights[g] * h;
        const std::array<double, 2> phi{1.0 - s, s};
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j) m.a[i][j] += f * phi[i] * phi[j];
    }
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) {
            m.a[i][j] += (i == j ? 1.0 : -1.0) / h;
            m.b[i][j] = (i == j ? 2.0 : 1.0) * h / 6.0;
        }
    return m;
}

/// Stiffness + potential (A) and consistent mass (B) on the interior nodes.
inline eig::BandedPencil assemble_galerkin(const Potential1D& potential, const Mesh1D& mesh, int gauss_points = 10) {
    const Eigen::Index n = mesh.dofs();
    if (n < 1) throw InvalidArgument("mesh has no interior nodes");
    const QuadratureRule rule = gauss_rule(gauss_points);
    const double h = mesh.h();
    eig::BandedPencil p(n, 1);
    for (long e = mesh.i_lo; e < mesh.i_hi; ++e) {
        const ElementMatrices m = element_matrices(potential, mesh.node(e), h, rule);
        const std::array<long, 2> node{e, e + 1};
        for (int a = 0; a < 2; ++a) {
            if (node[a] == mesh.i_lo || node[a] == mesh.i_hi) continue;
            for (int b = 0; b <= a; ++b) {
                if (node[b] == mesh.i_lo || node[b] == mesh.i_hi) continue;
                p.add(node[a] - mesh.i_lo - 1, node[b] - mesh.i_lo - 1, m.a[a][b], m.b[a][b]);
            }
        }
    }
    return p;
}

inline eig::BandedPencil assemble_galerkin(const PeriodicPotential& v, const Perturbation& w, const Mesh1D& mesh) {
    return assemble_galerkin(total_potential(v, w), mesh);
}

/// Interior nodal coefficients of a P1 function on a Dirichlet mesh.
struct FemFunction {
    Mesh1D mesh;
    Eigen::VectorXd coefficients;

    double nodal(long i) const {
        if (i <= mesh.i_lo || i >= mesh.i_hi) return 0.0;
        return coefficients(static_cast<Eigen::Index>(i - mesh.i_lo - 1));
    }
    double operator()(double x) const {
        const double r = x / mesh.h();
        long e = static_cast<long>(std::floor(r));
        e = std::clamp(e, mesh.i_lo, mesh.i_hi - 1);
        const double s = std::clamp(r - static_cast<double>(e), 0.0, 1.0);
        return (1.0 - s) * nodal(e) + s * nodal(e + 1);
    }
};

inline FemFunction make_function(const Mesh1D& mesh, Eigen::VectorXd coefficients) {
    if (coefficients.size() != mesh.dofs()) throw InvalidArgument("coefficient length differs from interior node count");
    return {mesh, std::move(coefficients)};
}

/// Exact integral of |psi|^2 over [a, b] (P1 squares are quadratics, so
/// Simpson's rule on each clipped element is exact).
inline double interval_mass(const FemFunction& psi, double a, double b) {
    const Mesh1D& m = psi.mesh;
    const double h = m.h();
    a = std::max(a, m.x_lo());
    b = std::min(b, m.x_hi());
    if (!(a < b)) return 0.0;
    const long first = std::max(m.i_lo, static_cast<long>(std::floor(a / h)) - 1);
    const long last = std::min(m.i_hi, static_cast<long>(std::ceil(b / h)) + 1);
    double total = 0.0;
    for (long e = first; e < last; ++e) {
        const double x0 = m.node(e);
        const double lo = std::max(a, x0);
        const double hi = std::min(b, m.node(e + 1));
        if (!(lo < hi)) continue;
        const double u0 = psi.nodal(e);
        const double u1 = psi.nodal(e + 1);
        auto sq = [&](double x) {
            const double s = (x - x0) / h;
            const double u = (1.0 - s) * u0 + s * u1;
            return u * u;
        };
        total += (hi - lo) / 6.0 * (sq(lo) + 4.0 * sq(0.5 * (lo + hi)) + sq(hi));
    }
    return total;
}

/// Per-element integrals of |psi|^2.
inline std::vector<double> element_masses(const FemFunction& psi) {
    const double h = psi.mesh.h();
    std::vector<double> out;
    for (long e = psi.mesh.i_lo; e < psi.mesh.i_hi; ++e) {
        const double u0 = psi.nodal(e);
        const double u1 = psi.nodal(e + 1);
        out.push_back(h / 3.0 * (u0 * u0 + u0 * u1 + u1 * u1));
    }
    return out;
}

inline double l2_norm(const FemFunction& psi) {
    double s = 0.0;
    for (double m : element_masses(psi)) s += m;
    return std::sqrt(s);
}

inline double h1_seminorm(const FemFunction& psi) {
    const double h = psi.mesh.h();
    double s = 0.0;
    for (long e = psi.mesh.i_lo; e < psi.mesh.i_hi; ++e) {
        const double d = psi.nodal(e + 1) - psi.nodal(e);
        s += d * d / h;
    }
    return std::sqrt(s);
}

/// Mass within distance R of either end of the domain.
inline double boundary_mass(const FemFunction& psi, double R) {
    const double width = psi.mesh.x_hi() - psi.mesh.x_lo();
    if (!(R > 0.0 && R < 0.5 * width)) throw RangeError("boundary strip R must lie in (0, half the domain width)");
    return interval_mass(psi, psi.mesh.x_lo(), psi.mesh.x_lo() + R) +
           interval_mass(psi, psi.mesh.x_hi() - R, psi.mesh.x_hi());
}

struct Interval {
    double lo = 0.0;
    double hi = 0.0;
};

inline double compact_mass(const FemFunction& psi, const Interval& k) {
    const double tol = 1e-12 * std::max(1.0, psi.mesh.x_hi() - psi.mesh.x_lo());
    if (!(k.lo < k.hi) || k.lo < psi.mesh.x_lo() - tol || k.hi > psi.mesh.x_hi() + tol)
        throw RangeError("compact set K must be a nonempty interval inside the domain");
    return interval_mass(psi, k.lo, k.hi);
}

/// Gap eigenvalues with L2-normalized eigenvectors (B-normalized coefficients).
inline SpectrumResult galerkin_spectrum(const Potential1D& potential, const Mesh1D& mesh,
                                        const bloch::GapWindow& window, bool want_vectors = true) {
    const auto pencil = assemble_galerkin(potential, mesh);
    const auto sol = eig::solve_banded_window(pencil, window.alpha, window.beta, want_vectors);
    SpectrumResult r;
    r.method = "galerkin";
    r.window = window;
    r.eigenvalues.assign(sol.values.data(), sol.values.data() + sol.values.size());
    if (want_vectors) r.vectors = sol.vectors;
    r.params = {{"x_lo", mesh.x_lo()}, {"x_hi", mesh.x_hi()}, {"n_cells", mesh.cells_per_period}, {"h", mesh.h()}};
    return r;
}

inline SpectrumResult galerkin_spectrum(const PeriodicPotential& v, const Perturbation& w, const Mesh1D& mesh,
                                        const bloch::GapWindow& window, bool want_vectors = true) {
    return galerkin_spectrum(total_potential(v, w), mesh, window, want_vectors);
}

enum class ModeClass { true_mode, spurious, undetermined };

inline const char* to_string(ModeClass c) {
    switch (c) {
        case ModeClass::true_mode: return "true";
        case ModeClass::spurious: return "spurious";
        default: return "undetermined";
    }
}

struct LocalizationReport {
    double eigenvalue = 0.0;
    double mu_boundary = 0.0;
    double mu_compact = 0.0;
    ModeClass classification = ModeClass::undetermined;
};

/// R <= 0 selects the default strip width 2 b.
struct ConcentrationProbe {
    double R = 0.0;
    Interval K{-4.0 * kPi, 4.0 * kPi};
};

/// Labels each gap eigenvalue against a pollution-free reference. Unmatched
/// values within match_tol of a window edge are left undetermined.
inline std::vector<LocalizationReport> classify_modes(const SpectrumResult& spec, const Mesh1D& mesh,
                                                      const std::vector<double>& reference, double match_tol,
                                                      const ConcentrationProbe& probe = {}) {
    std::vector<LocalizationReport> out;
    if (spec.eigenvalues.empty()) return out;
    if (!spec.vectors || spec.vectors->cols() != static_cast<Eigen::Index>(spec.eigenvalues.size()))
        throw InvalidArgument("classification needs the eigenvectors");
    for (std::size_t k = 0; k < spec.eigenvalues.size(); ++k) {
        const double lambda = spec.eigenvalues[k];
        const FemFunction psi = make_function(mesh, spec.vectors->col(static_cast<Eigen::Index>(k)));
        const double strip = probe.R > 0.0 ? probe.R : 2.0 * mesh.lattice.period;
        LocalizationReport r{lambda, boundary_mass(psi, strip), compact_mass(psi, probe.K), ModeClass::spurious};
        if (distance_to_set(lambda, reference) <= match_tol)
            r.classification = ModeClass::true_mode;
        else if (lambda - spec.window.alpha <= match_tol || spec.window.beta - lambda <= match_tol)
            r.classification = ModeClass::undetermined;
        out.push_back(r);
    }
    return out;
}

inline std::vector<LocalizationReport> classify_modes(const SpectrumResult& spec, const Mesh1D& mesh,
                                                      const SpectrumResult& reference, double match_tol,
                                                      const ConcentrationProbe& probe = {}) {
    return classify_modes(spec, mesh, reference.eigenvalues, match_tol, probe);
}

enum class Dislocation { halfline_plus, halfline_minus, junction };

inline const char* to_string(Dislocation d) {
    switch (d) {
        case Dislocation::halfline_plus: return "halfline+";
        case Dislocation::halfline_minus: return "halfline-";
        default: return "junction";
    }
}

/// Shifted potential of the variant: V(x + t b), V(x - t b), or the junction
/// 1_{x<0} V(x + t b / 2) + 1_{x>0} V(x - t b / 2).
inline Potential1D dislocated_potential(const PeriodicPotential& v, Dislocation variant, double t) {
    const double b = v.lattice.period;
    switch (variant) {
        case Dislocation::halfline_plus:
            return [v, s = t * b](double x) { return eval_periodic(v, {x + s, 0.0}); };
        case Dislocation::halfline_minus:
            return [v, s = t * b](double x) { return eval_periodic(v, {x - s, 0.0}); };
        default:
            return [v, s = 0.5 * t * b](double x) {
                return eval_periodic(v, {x < 0.0 ? x + s : x - s, 0.0});
            };
    }
}

/// Half-line variants solve on [0, L_half], the junction on [-L_half, L_half].
/// L_half must be a node of the mesh lattice.
inline SpectrumResult dislocation_spectrum(const PeriodicPotential& v, Dislocation variant, double t, double l_half,
                                           int cells_per_period, const bloch::GapWindow& window,
                                           bool want_vectors = false) {
    detail::check_lattice(v.lattice);
    if (!(t >= 0.0 && t < 1.0)) throw InvalidArgument("offset t must lie in [0, 1)");
    if (l_half < 20.0 * v.lattice.period * (1.0 - 1e-12)) throw InvalidArgument("L_half must be >= 20 b");
    const double lo = variant == Dislocation::junction ? -l_half : 0.0;
    const Mesh1D mesh = interval_mesh(v.lattice, cells_per_period, lo, l_half);
    SpectrumResult r = galerkin_spectrum(dislocated_potential(v, variant, t), mesh, window, want_vectors);
    r.method = "dislocation";
    r.params.insert(r.params.begin(), {"t", t});
    r.params.insert(r.params.begin(), {"variant", static_cast<double>(variant)});
    return r;
}

}  // namespace gapeig::fem
