#include <gtest/gtest.h>

#include "gapeig/augment.hpp"
#include "gapeig/fem1d.hpp"
#include "gapeig/supercell.hpp"
#include "oracles.hpp"

using namespace gapeig;

namespace {

const Lattice kLattice{1, 2.0 * kPi};

// The gap of the P1 discretization at h = pi / 50. The exact gap would let
// discretized bulk states near its edges into the window.
const bloch::GapWindow& gap_1d() {
    static const bloch::GapWindow g = augment::fem_gap(oracle::potential_1d(), 100, 64, 1);
    return g;
}

const std::vector<double> kDefects{-1.0451627964, -0.6541194618};

struct ScanRun {
    double n_half;
    fem::Mesh1D mesh;
    SpectrumResult spec;
    std::vector<fem::LocalizationReport> reports;
};

// The offset-domain sequence t = 0.5, n_half = 5..15 at h = pi / 50.
const std::vector<ScanRun>& offset_scan() {
    static const std::vector<ScanRun> runs = [] {
        std::vector<ScanRun> out;
        for (int n = 5; n <= 15; ++n) {
            const auto mesh = fem::build_mesh(kLattice, 100, n, 0.5);
            auto spec = fem::galerkin_spectrum(oracle::potential_1d(), oracle::perturbation_1d(), mesh, gap_1d());
            auto reports = fem::classify_modes(spec, mesh, kDefects, 0.05);
            out.push_back({static_cast<double>(n), mesh, std::move(spec), std::move(reports)});
        }
        return out;
    }();
    return runs;
}

}  // namespace

TEST(Fem1d, MeshExamples) {
    const auto m = fem::build_mesh(kLattice, 100, 5, 0.0);
    EXPECT_EQ(m.i_hi - m.i_lo + 1, 1001);
    EXPECT_NEAR(m.x_lo(), -10.0 * kPi, 1e-12);
    EXPECT_NEAR(m.x_hi(), 10.0 * kPi, 1e-12);
    EXPECT_NEAR(m.h(), kPi / 50.0, 1e-15);

    const auto off = fem::build_mesh(kLattice, 100, 5, 0.5);
    EXPECT_NEAR(off.x_hi(), 5.5 * 2.0 * kPi, 1e-12);
    EXPECT_EQ(off.i_hi - off.i_lo + 1, 2 * 5.5 * 100 + 1);
    EXPECT_EQ(off.i_hi, 550);

    EXPECT_THROW(fem::build_mesh(kLattice, 7, 5, 0.5), MeshOffsetError);
    EXPECT_THROW(fem::build_mesh(kLattice, 8, 5, 0.0), InvalidArgument);
    EXPECT_THROW(fem::build_mesh(kLattice, 100, 1.5, 0.0), InvalidArgument);
    EXPECT_THROW(fem::build_mesh(kLattice, 100, 5, 1.0), InvalidArgument);
    EXPECT_NO_THROW(fem::build_mesh(kLattice, 100, 5.5, 0.25));
}

TEST(Fem1d, FreeElementRows) {
    const auto mesh = fem::interval_mesh(kLattice, 20, 0.0, 8.0 * kPi);
    const auto p = fem::assemble_galerkin([](double) { return 0.0; }, mesh);
    const double h = mesh.h();
    for (Eigen::Index i = 1; i + 1 < p.size(); ++i) {
        EXPECT_NEAR(p.a(i, i), 2.0 / h, 1e-12);
        EXPECT_NEAR(p.a(i, i - 1), -1.0 / h, 1e-12);
        EXPECT_NEAR(p.b(i, i), 2.0 * h / 3.0, 1e-15);
        EXPECT_NEAR(p.b(i, i + 1), h / 6.0, 1e-15);
    }
}

TEST(Fem1d, ElementMatricesMatchQuadrature) {
    const auto pot = fem::total_potential(oracle::potential_1d(), oracle::perturbation_1d());
    const auto rule = fem::gauss_rule(10);
    const double h = kPi / 50.0;
    for (double x0 : {-3.0, -0.1, 0.4, 2.5}) {
        const auto m = fem::element_matrices(pot, x0, h, rule);
        auto phi = [&](int i, double x) { const double s = (x - x0) / h; return i == 0 ? 1.0 - s : s; };
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j) {
                const double vij = oracle::integrate(
                    [&](double x) { return (oracle::potential_1d_value(x) + oracle::w1d(x)) * phi(i, x) * phi(j, x); },
                    x0, x0 + h, 1e-14, 2);
                EXPECT_NEAR(m.a[i][j], vij + (i == j ? 1.0 : -1.0) / h, 1e-12);
                const double bij =
                    oracle::integrate([&](double x) { return phi(i, x) * phi(j, x); }, x0, x0 + h, 1e-14, 2);
                EXPECT_NEAR(m.b[i][j], bij, 1e-14);
            }
    }
}

TEST(Fem1d, QuadratureOrderIsAdequate) {
    const auto mesh = fem::build_mesh(kLattice, 100, 5, 0.5);
    const auto pot = fem::total_potential(oracle::potential_1d(), oracle::perturbation_1d());
    const auto p10 = fem::assemble_galerkin(pot, mesh, 10);
    const auto p20 = fem::assemble_galerkin(pot, mesh, 20);
    EXPECT_LE((p10.a_band() - p20.a_band()).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LE((p10.b_band() - p20.b_band()).cwiseAbs().maxCoeff(), 1e-15);
    EXPECT_THROW(fem::gauss_rule(7), InvalidArgument);
}

TEST(Fem1d, DirichletLaplacianOnHalfPeriod) {
    // [0, pi] at h = pi / 100 on a lattice of period pi / 4 (25 cells per period).
    const auto mesh = fem::interval_mesh(Lattice{1, kPi / 4.0}, 25, 0.0, kPi);
    EXPECT_NEAR(mesh.h(), kPi / 100.0, 1e-15);
    const auto p = fem::assemble_galerkin([](double) { return 0.0; }, mesh);
    const double lowest = eig::banded_lowest_values(p, 1)(0);
    EXPECT_GE(lowest, 1.0);
    EXPECT_LE(lowest, 1.001);
    // O(h^2): halving h divides the error by about four.
    const auto fine = fem::interval_mesh(Lattice{1, kPi / 4.0}, 50, 0.0, kPi);
    const double finer = eig::banded_lowest_values(fem::assemble_galerkin([](double) { return 0.0; }, fine), 1)(0);
    EXPECT_NEAR((lowest - 1.0) / (finer - 1.0), 4.0, 0.05);
}

TEST(Fem1d, WindowInsideContinuumIsNotEmpty) {
    const auto mesh = fem::build_mesh(kLattice, 20, 10, 0.0);
    const auto r = fem::galerkin_spectrum([](double) { return 0.0; }, mesh, {1, 0.1, 0.2});
    EXPECT_FALSE(r.eigenvalues.empty());
}

TEST(Fem1d, AlignedDomainFindsDefects) {
    const auto mesh = fem::build_mesh(kLattice, 100, 10, 0.0);
    const auto r = fem::galerkin_spectrum(oracle::potential_1d(), oracle::perturbation_1d(), mesh, gap_1d());
    for (double target : {-1.04, -0.66}) EXPECT_LE(distance_to_set(target, r.eigenvalues), 0.02);
}

TEST(Fem1d, EigenvectorsAreNormalized) {
    const auto& run = offset_scan().back();
    ASSERT_TRUE(run.spec.vectors.has_value());
    for (Eigen::Index k = 0; k < run.spec.vectors->cols(); ++k) {
        const auto psi = fem::make_function(run.mesh, run.spec.vectors->col(k));
        double sum = 0.0;
        for (double m : fem::element_masses(psi)) sum += m;
        EXPECT_NEAR(sum, 1.0, 1e-10);
        const double R = 2.0 * kLattice.period;
        const double interior = fem::interval_mass(psi, run.mesh.x_lo() + R, run.mesh.x_hi() - R);
        EXPECT_NEAR(fem::boundary_mass(psi, R) + interior, 1.0, 1e-10);
        EXPECT_NEAR(fem::compact_mass(psi, {run.mesh.x_lo(), run.mesh.x_hi()}), 1.0, 1e-10);
    }
}

TEST(Fem1d, MassExamples) {
    const auto mesh = fem::build_mesh(kLattice, 20, 5, 0.0);
    Eigen::VectorXd edge = Eigen::VectorXd::Zero(mesh.dofs());
    for (int i = 0; i < 10; ++i) edge(i) = std::sin(0.3 * (i + 1));
    auto psi = fem::make_function(mesh, edge);
    psi.coefficients /= fem::l2_norm(psi);
    EXPECT_NEAR(fem::boundary_mass(psi, kLattice.period), 1.0, 1e-12);

    Eigen::VectorXd hat = Eigen::VectorXd::Zero(mesh.dofs());
    hat(mesh.dofs() / 2) = 1.0;
    auto center = fem::make_function(mesh, hat);
    center.coefficients /= fem::l2_norm(center);
    EXPECT_NEAR(fem::l2_norm(center), 1.0, 1e-14);
    EXPECT_EQ(fem::boundary_mass(center, 0.5 * (mesh.x_hi() - mesh.x_lo()) - 2.0 * mesh.h()), 0.0);
    EXPECT_NEAR(fem::compact_mass(center, {-mesh.h(), mesh.h()}), 1.0, 1e-14);

    EXPECT_THROW(fem::boundary_mass(center, 0.0), RangeError);
    EXPECT_THROW(fem::boundary_mass(center, mesh.x_hi()), RangeError);
    EXPECT_THROW(fem::compact_mass(center, {mesh.x_lo() - 1.0, 0.0}), RangeError);
    EXPECT_THROW(fem::compact_mass(center, {1.0, 1.0}), RangeError);
}

TEST(Fem1d, ClassifyExamples) {
    const auto mesh = fem::build_mesh(kLattice, 20, 5, 0.0);
    Eigen::VectorXd hat = Eigen::VectorXd::Zero(mesh.dofs());
    hat(mesh.dofs() / 2) = 1.0;
    const auto psi = fem::make_function(mesh, hat);
    SpectrumResult spec;
    spec.window = gap_1d();
    spec.vectors = Eigen::MatrixXd(hat / fem::l2_norm(psi));
    const std::vector<double> ref{-1.04, -0.66};

    spec.eigenvalues = {-1.041};
    auto r = fem::classify_modes(spec, mesh, ref, 0.02);
    ASSERT_EQ(r.size(), 1u);
    EXPECT_EQ(r[0].classification, fem::ModeClass::true_mode);
    EXPECT_NEAR(r[0].mu_compact, 1.0, 1e-12);

    spec.eigenvalues = {-0.85};
    r = fem::classify_modes(spec, mesh, ref, 0.02);
    EXPECT_EQ(r[0].classification, fem::ModeClass::spurious);

    spec.eigenvalues = {gap_1d().alpha + 0.01};
    r = fem::classify_modes(spec, mesh, ref, 0.02);
    EXPECT_EQ(r[0].classification, fem::ModeClass::undetermined);

    spec.eigenvalues.clear();
    spec.vectors.reset();
    EXPECT_TRUE(fem::classify_modes(spec, mesh, ref, 0.02).empty());
    EXPECT_STREQ(fem::to_string(fem::ModeClass::true_mode), "true");
}

TEST(Fem1d, DirichletMonotonicity) {
    const auto pot = fem::total_potential(oracle::potential_1d(), oracle::perturbation_1d());
    for (double t : {0.0, 0.5}) {
        Eigen::VectorXd prev;
        for (int n = 3; n <= 8; ++n) {
            const auto values = eig::banded_lowest_values(fem::assemble_galerkin(pot, fem::build_mesh(kLattice, 20, n, t)), 20);
            if (prev.size() > 0)
                for (int k = 0; k < 20; ++k) EXPECT_LE(values(k), prev(k) + 1e-10) << "n_half " << n << " k " << k;
            prev = values;
        }
    }
}

TEST(Fem1d, OffsetDomainsPollute) {
    int polluted = 0;
    for (const auto& run : offset_scan()) {
        bool any = false;
        for (const auto& rep : run.reports)
            if (distance_to_set(rep.eigenvalue, kDefects) > 0.05) any = true;
        polluted += any;
    }
    EXPECT_GE(polluted, 8);

    const auto& last = offset_scan().back();
    int spurious = 0;
    for (const auto& rep : last.reports) {
        if (rep.classification == fem::ModeClass::true_mode) {
            EXPECT_LE(rep.mu_boundary, 0.05);
            EXPECT_GE(rep.mu_compact, 0.9);
        } else if (distance_to_set(rep.eigenvalue, kDefects) > 0.05) {
            ++spurious;
            EXPECT_GE(rep.mu_boundary, 0.8);
            EXPECT_LE(rep.mu_compact, 0.1);
        }
    }
    EXPECT_GE(spurious, 1);
}

TEST(Fem1d, TrueModesStayLocalized) {
    for (const auto& run : offset_scan())
        for (const auto& rep : run.reports)
            if (rep.classification == fem::ModeClass::true_mode) EXPECT_GE(rep.mu_compact, 0.9) << run.n_half;
}

TEST(Fem1d, SpuriousCompactMassDecays) {
    std::vector<double> worst;
    for (const auto& run : offset_scan()) {
        if (run.n_half < 8) continue;
        double w = 0.0;
        for (const auto& rep : run.reports)
            if (rep.classification == fem::ModeClass::spurious) w = std::max(w, rep.mu_compact);
        worst.push_back(w);
    }
    for (std::size_t i = 1; i < worst.size(); ++i) EXPECT_LE(worst[i], worst[i - 1] + 0.02);
    EXPECT_LE(worst.back(), 0.05);
}

TEST(Fem1d, DislocationsCoincideAtZeroShift) {
    const double l_half = 20.0 * kLattice.period;
    const auto plus = fem::dislocation_spectrum(oracle::potential_1d(), fem::Dislocation::halfline_plus, 0.0, l_half, 50, gap_1d());
    const auto minus = fem::dislocation_spectrum(oracle::potential_1d(), fem::Dislocation::halfline_minus, 0.0, l_half, 50, gap_1d());
    ASSERT_EQ(plus.eigenvalues.size(), minus.eigenvalues.size());
    for (std::size_t i = 0; i < plus.eigenvalues.size(); ++i) EXPECT_EQ(plus.eigenvalues[i], minus.eigenvalues[i]);
    EXPECT_EQ(plus.method, "dislocation");
    EXPECT_THROW(fem::dislocation_spectrum(oracle::potential_1d(), fem::Dislocation::junction, 0.5, 10.0, 50, gap_1d()),
                 InvalidArgument);
}

TEST(Fem1d, DislocationsPredictSpuriousValues) {
    const double l_half = 40.0 * kLattice.period;
    std::vector<double> predicted;
    for (auto variant : {fem::Dislocation::halfline_plus, fem::Dislocation::halfline_minus}) {
        const auto r = fem::dislocation_spectrum(oracle::potential_1d(), variant, 0.5, l_half, 100, gap_1d());
        predicted.insert(predicted.end(), r.eigenvalues.begin(), r.eigenvalues.end());
    }
    ASSERT_FALSE(predicted.empty());
    int checked = 0;
    for (const auto& run : offset_scan())
        for (const auto& rep : run.reports)
            if (distance_to_set(rep.eigenvalue, kDefects) > 0.05) {
                EXPECT_LE(distance_to_set(rep.eigenvalue, predicted), 0.03) << rep.eigenvalue;
                ++checked;
            }
    EXPECT_GT(checked, 0);
}

TEST(Fem1d, HalflineValuesCoverTheGap) {
    // Edge states sweep the gap quickly in t, so the shifts are sampled every 0.01.
    const auto& gap = gap_1d();
    const double l_half = 20.0 * kLattice.period;
    std::vector<double> points{gap.alpha, gap.beta};
    for (int k = 0; k < 100; ++k)
        for (auto variant : {fem::Dislocation::halfline_plus, fem::Dislocation::halfline_minus}) {
            const auto r = fem::dislocation_spectrum(oracle::potential_1d(), variant, 0.01 * k, l_half, 100, gap);
            points.insert(points.end(), r.eigenvalues.begin(), r.eigenvalues.end());
        }
    std::sort(points.begin(), points.end());
    double widest = 0.0;
    for (std::size_t i = 1; i < points.size(); ++i) widest = std::max(widest, points[i] - points[i - 1]);
    EXPECT_LE(widest, 0.1 * gap.width());
}

TEST(Fem1d, CoarseShiftSamplingLeavesHoles) {
    const auto& gap = gap_1d();
    std::vector<double> points{gap.alpha, gap.beta};
    for (int k = 0; k < 10; ++k)
        for (auto variant : {fem::Dislocation::halfline_plus, fem::Dislocation::halfline_minus}) {
            const auto r = fem::dislocation_spectrum(oracle::potential_1d(), variant, 0.1 * k,
                                                     20.0 * kLattice.period, 100, gap);
            points.insert(points.end(), r.eigenvalues.begin(), r.eigenvalues.end());
        }
    std::sort(points.begin(), points.end());
    double widest = 0.0;
    for (std::size_t i = 1; i < points.size(); ++i) widest = std::max(widest, points[i] - points[i - 1]);
    EXPECT_GT(widest, 0.2);
}
