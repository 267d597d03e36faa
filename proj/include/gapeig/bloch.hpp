#pragma once

// Bloch fibers of -Delta + V_per in a planewave basis, band structures and
// spectral gaps.

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "gapeig/eigcore.hpp"
#include "gapeig/model.hpp"
#include "gapeig/parallel.hpp"

namespace gapeig::bloch {

/// Planewaves e^{i(q+G).x}/sqrt|Gamma| with G = 2 pi n / b, |n|_inf <= cutoff.
struct FiberBasis {
    int dimension = 1;
    int cutoff = 0;
    Point q{0.0, 0.0};
    std::vector<Index> g_index;

    std::size_t size() const { return g_index.size(); }
};

inline FiberBasis fiber_basis(const Lattice& lattice, const Point& q, int cutoff) {
    lattice.validate();
    if (cutoff < 1) throw InvalidArgument("planewave cutoff must be >= 1");
    const double edge = lattice.zone_edge();
    for (int i = 0; i < lattice.dimension; ++i)
        if (!(q[i] > -edge * (1.0 + 1e-12)) || q[i] > edge * (1.0 + 1e-12))
            throw InvalidArgument("quasimomentum outside the Brillouin zone");
    FiberBasis basis{lattice.dimension, cutoff, q, {}};
    if (lattice.dimension == 1) {
        for (int n = -cutoff; n <= cutoff; ++n) basis.g_index.push_back({n, 0});
    } else {
        for (int n1 = -cutoff; n1 <= cutoff; ++n1)
            for (int n0 = -cutoff; n0 <= cutoff; ++n0) basis.g_index.push_back({n0, n1});
    }
    return basis;
}

/// H[G, G'] = |q + G|^2 delta + Vhat(G - G'); B is the identity.
inline eig::ComplexPencil assemble_fiber(const PeriodicPotential& v, const Point& q, int cutoff) {
    const FiberBasis basis = fiber_basis(v.lattice, q, cutoff);
    const FourierMap vhat = fourier_coefficients(v);
    const double g = v.lattice.reciprocal_spacing();
    const auto n = static_cast<Eigen::Index>(basis.size());
    eig::Matrix<Complex> h = eig::Matrix<Complex>::Zero(n, n);
    for (Eigen::Index a = 0; a < n; ++a) {
        const Index& ga = basis.g_index[a];
        double kin = 0.0;
        for (int i = 0; i < v.lattice.dimension; ++i) {
            const double k = q[i] + g * ga[i];
            kin += k * k;
        }
        h(a, a) = kin;
    }
    for (const auto& [m, c] : vhat) {
        for (Eigen::Index a = 0; a < n; ++a) {
            const Index& ga = basis.g_index[a];
            const Index gb{ga[0] - m[0], ga[1] - m[1]};
            if (std::abs(gb[0]) > cutoff || std::abs(gb[1]) > cutoff) continue;
            const Eigen::Index b =
                v.lattice.dimension == 1 ? gb[0] + cutoff : (gb[1] + cutoff) * (2 * cutoff + 1) + gb[0] + cutoff;
            h(a, b) += c;
        }
    }
    return eig::ComplexPencil::standard(std::move(h));
}

/// Uniform grid (k - M/2) 2 pi / (b M), k = 1..M, of (-pi/b, pi/b]. For even M
/// it contains 0 and pi/b and is closed under q -> -q (mod 2 pi / b).
inline std::vector<double> zone_grid(const Lattice& lattice, int points) {
    if (points < 2 || points % 2 != 0) throw InvalidArgument("q-grid size must be even and >= 2");
    std::vector<double> q(static_cast<std::size_t>(points));
    const double step = lattice.reciprocal_spacing() / points;
    for (int k = 1; k <= points; ++k) q[static_cast<std::size_t>(k - 1)] = (k - points / 2) * step;
    return q;
}

/// Index of -q_j on the grid returned by zone_grid.
inline int zone_partner(int j, int points) {
    const int p = points - j - 2;
    return p < 0 ? points - 1 : p;
}

struct BandStructure {
    int dimension = 1;
    int cutoff = 0;
    int grid_points = 0;  // per axis
    int bands = 0;
    std::vector<Point> qpoints;
    /// epsilon(j, iq), ascending in j.
    Eigen::MatrixXd energies;
    /// Optional fiber eigenvectors (basis size x bands), one per q.
    std::vector<eig::Matrix<Complex>> vectors;

    std::size_t q_count() const { return qpoints.size(); }

    /// Index of the grid point -q.
    std::size_t partner(std::size_t iq) const {
        if (dimension == 1) return static_cast<std::size_t>(zone_partner(static_cast<int>(iq), grid_points));
        const int j0 = static_cast<int>(iq) % grid_points;
        const int j1 = static_cast<int>(iq) / grid_points;
        return static_cast<std::size_t>(zone_partner(j1, grid_points) * grid_points + zone_partner(j0, grid_points));
    }
};

inline std::vector<Point> zone_points(const Lattice& lattice, int points) {
    const auto axis = zone_grid(lattice, points);
    std::vector<Point> out;
    if (lattice.dimension == 1) {
        for (double q : axis) out.push_back({q, 0.0});
    } else {
        for (double q1 : axis)
            for (double q0 : axis) out.push_back({q0, q1});
    }
    return out;
}

inline BandStructure band_structure(const PeriodicPotential& v, int cutoff, int grid_points, int bands,
                                    bool store_vectors = false, int threads = 1) {
    v.lattice.validate();
    if (bands < 2) throw InvalidArgument("band count must be >= 2");
    BandStructure bs;
    bs.dimension = v.lattice.dimension;
    bs.cutoff = cutoff;
    bs.grid_points = grid_points;
    bs.bands = bands;
    bs.qpoints = zone_points(v.lattice, grid_points);
    const auto basis_size = static_cast<int>(fiber_basis(v.lattice, bs.qpoints.front(), cutoff).size());
    if (bands > basis_size) throw InvalidArgument("band count exceeds planewave basis size");

    auto solves = parallel_map(bs.qpoints.size(), threads, [&](std::size_t iq) {
        return eig::solve_lowest(assemble_fiber(v, bs.qpoints[iq], cutoff), bands, store_vectors);
    });
    bs.energies.resize(bands, static_cast<Eigen::Index>(bs.qpoints.size()));
    for (std::size_t iq = 0; iq < solves.size(); ++iq) {
        bs.energies.col(static_cast<Eigen::Index>(iq)) = solves[iq].values;
        if (store_vectors) bs.vectors.push_back(std::move(solves[iq].vectors));
    }
    return bs;
}

inline constexpr double kGapTolerance = 1e-6;

/// Gap (alpha, beta) above band J and its midpoint gamma.
struct GapWindow {
    int band = 1;
    double alpha = 0.0;
    double beta = 0.0;

    double gamma() const { return 0.5 * (alpha + beta); }
    double width() const { return beta - alpha; }
    bool contains(double x) const { return alpha < x && x < beta; }
};

inline GapWindow find_gap(const BandStructure& bs, int band) {
    if (band < 1 || band + 1 > bs.bands) throw InvalidArgument("band index out of range for gap search");
    const double alpha = bs.energies.row(band - 1).maxCoeff();
    const double beta = bs.energies.row(band).minCoeff();
    if (!(beta - alpha > kGapTolerance))
        throw NoGap("bands " + std::to_string(band) + " and " + std::to_string(band + 1) + " overlap or touch");
    return {band, alpha, beta};
}

/// Rank-J orthogonal projector onto the lowest J fiber eigenvectors.
inline eig::Matrix<Complex> exact_projector_fiber(const PeriodicPotential& v, const Point& q, int cutoff, int band) {
    const auto pencil = assemble_fiber(v, q, cutoff);
    if (band < 1 || band + 1 > pencil.size()) throw InvalidArgument("projector rank out of range");
    const auto sol = eig::solve_lowest(pencil, band + 1, true);
    if (sol.values(band) - sol.values(band - 1) < 1e-10) throw NoGap("fiber bands J and J+1 are degenerate at q");
    const auto vj = sol.vectors.leftCols(band);
    return vj * vj.adjoint();
}

}  // namespace gapeig::bloch
