#include <gtest/gtest.h>

#include "gapeig/supercell.hpp"
#include "oracles.hpp"

using namespace gapeig;

namespace {

const bloch::GapWindow& gap_1d() {
    static const bloch::GapWindow g = bloch::find_gap(bloch::band_structure(oracle::potential_1d(), 32, 64, 2), 1);
    return g;
}

std::vector<double> extras(const std::vector<double>& values, const std::vector<double>& ref, double tol) {
    std::vector<double> out;
    for (double x : values)
        if (distance_to_set(x, ref) > tol) out.push_back(x);
    return out;
}

const std::vector<double> kDefects{-1.0451627964, -0.6541194618};

}  // namespace

TEST(Supercell, FreeParticleIsExact) {
    const PeriodicPotential v{{1, 2.0 * kPi}, {}};
    const Perturbation w{1, {}};
    const auto p = supercell::assemble_supercell_real(v, w, 4, 12);
    const auto r = eig::solve_pencil(p, false);
    std::vector<double> ref;
    for (int k = -12; k <= 12; ++k) ref.push_back(std::pow(k / 4.0, 2));
    std::sort(ref.begin(), ref.end());
    ASSERT_EQ(static_cast<std::size_t>(r.values.size()), ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(r.values(static_cast<Eigen::Index>(i)), ref[i], 1e-12);
}

TEST(Supercell, FreeParticleIsExact2D) {
    const PeriodicPotential v{{2, 2.0 * kPi}, {}};
    const Perturbation w{2, {}};
    const auto basis = supercell::make_basis(v.lattice, 2, 6);
    std::vector<double> ref;
    for (const auto& m : basis.modes()) ref.push_back(basis.kinetic(m));
    std::sort(ref.begin(), ref.end());
    const auto r = eig::solve_pencil(supercell::assemble_supercell_real(v, w, 2, 6), false);
    ASSERT_EQ(static_cast<std::size_t>(r.values.size()), ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(r.values(static_cast<Eigen::Index>(i)), ref[i], 1e-12);
}

TEST(Supercell, BasisIsABall) {
    const Lattice lat{2, 2.0 * kPi};
    const auto basis = supercell::make_basis(lat, 2, 5);
    std::size_t count = 0;
    for (int a = -5; a <= 5; ++a)
        for (int b = -5; b <= 5; ++b)
            if (a * a + b * b <= 25) ++count;
    EXPECT_EQ(basis.size(), count);
    EXPECT_EQ(supercell::make_basis(Lattice{1, 2.0 * kPi}, 3, 7).size(), 15u);
}

TEST(Supercell, RealAndComplexFormsAgree) {
    for (int d : {1, 2}) {
        const auto v = d == 1 ? oracle::potential_1d() : oracle::potential_2d();
        const auto w = d == 1 ? oracle::perturbation_1d() : oracle::perturbation_2d();
        const int L = d == 1 ? 4 : 2;
        const int n = d == 1 ? 32 : 6;
        const auto c = supercell::assemble_supercell(v, w, L, n);
        const auto r = supercell::assemble_supercell_real(v, w, L, n);
        EXPECT_LE((c.a - c.a.adjoint()).cwiseAbs().maxCoeff(), 1e-12 * c.a.cwiseAbs().maxCoeff());
        EXPECT_EQ((r.a - r.a.transpose()).cwiseAbs().maxCoeff(), 0.0);
        const auto ec = eig::solve_pencil(c, false).values;
        const auto er = eig::solve_pencil(r, false).values;
        ASSERT_EQ(ec.size(), er.size());
        EXPECT_LE((ec - er).cwiseAbs().maxCoeff(), 1e-10);
    }
}

TEST(Supercell, UnperturbedGapIsEmpty) {
    const Perturbation none{1, {}};
    const auto r = supercell::supercell_spectrum(oracle::potential_1d(), none, 20, 320, {1, -1.13, -0.67});
    EXPECT_TRUE(r.eigenvalues.empty());
}

TEST(Supercell, DefectEigenvaluesPersist) {
    std::vector<std::vector<double>> sets;
    for (int L : {20, 30, 40}) {
        const auto r = supercell::supercell_spectrum(oracle::potential_1d(), oracle::perturbation_1d(), L, 16 * L,
                                                     gap_1d());
        ASSERT_EQ(r.eigenvalues.size(), 2u) << "L = " << L;
        EXPECT_EQ(r.param("N"), 16.0 * L);
        sets.push_back(r.eigenvalues);
    }
    EXPECT_LE(hausdorff(sets[0], sets[1]), 1e-6);
    EXPECT_LE(hausdorff(sets[1], sets[2]), 1e-6);
    EXPECT_NEAR(sets[2][0], -1.04, 0.02);
    EXPECT_NEAR(sets[2][1], -0.66, 0.02);
}

TEST(Supercell, ConvergenceScan) {
    const auto rows = supercell::convergence_scan(oracle::potential_1d(), oracle::perturbation_1d(), {10, 20, 40},
                                                  16, gap_1d());
    ASSERT_EQ(rows.size(), 3u);
    EXPECT_FALSE(rows[0].delta.has_value());
    EXPECT_EQ(rows[2].N, 640);
    for (const auto& row : rows) EXPECT_EQ(row.eigenvalues.size(), 2u);
    EXPECT_LE(*rows[2].delta, *rows[1].delta + 1e-12);
    EXPECT_LE(*rows[2].delta, 5e-3);
    EXPECT_THROW(supercell::convergence_scan(oracle::potential_1d(), oracle::perturbation_1d(), {20, 10}, 16, gap_1d()),
                 InvalidArgument);
}

TEST(Supercell, MismatchProducesJunctionValue) {
    const auto r = supercell::mismatched_supercell_spectrum(oracle::potential_1d(), oracle::perturbation_1d(), 21, 0.5,
                                                            16 * 21, gap_1d());
    const auto extra = extras(r.eigenvalues, kDefects, 0.05);
    ASSERT_FALSE(extra.empty());
    EXPECT_NEAR(extra.front(), -1.112, 0.005);
}

TEST(Supercell, MismatchEvenSizeHasNoExtras) {
    const auto r = supercell::mismatched_supercell_spectrum(oracle::potential_1d(), oracle::perturbation_1d(), 20, 0.5,
                                                            320, gap_1d());
    EXPECT_TRUE(extras(r.eigenvalues, kDefects, 0.05).empty());
}

TEST(Supercell, MismatchIsContinuousAtZero) {
    const auto tiny = supercell::mismatched_supercell_spectrum(oracle::potential_1d(), oracle::perturbation_1d(), 21,
                                                               1e-3, 16 * 21, gap_1d());
    EXPECT_LE(hausdorff(tiny.eigenvalues, kDefects), 1e-3);
}

TEST(Supercell, MismatchDependsOnT) {
    auto at = [](double t) {
        return supercell::mismatched_supercell_spectrum(oracle::potential_1d(), oracle::perturbation_1d(), 21, t,
                                                        16 * 21, gap_1d())
            .eigenvalues;
    };
    EXPECT_GT(hausdorff(at(0.3), at(0.5)), 0.02);
}

TEST(Supercell, RejectsBadSizes) {
    EXPECT_THROW(supercell::make_basis(Lattice{2, 2.0 * kPi}, 8, 100), BasisTooLarge);
    EXPECT_THROW(supercell::assemble_supercell(oracle::potential_1d(), oracle::perturbation_1d(), 10, 5),
                 InvalidArgument);
    EXPECT_THROW(supercell::mismatched_supercell_spectrum(oracle::potential_1d(), oracle::perturbation_1d(), 10, 1.0,
                                                          40, gap_1d()),
                 InvalidArgument);
    EXPECT_THROW(supercell::make_basis(Lattice{1, 2.0 * kPi}, 0.5, 4), InvalidArgument);
}
