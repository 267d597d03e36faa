#include <gtest/gtest.h>

#include "gapeig/bloch.hpp"
#include "oracles.hpp"

using namespace gapeig;

namespace {

PeriodicPotential free_potential() { return {{1, 2.0 * kPi}, {}}; }

PeriodicPotential cos_only() { return {{1, 2.0 * kPi}, {{1.0, TrigKind::cos, {1, 0}, 0.0}}}; }

}  // namespace

TEST(Bloch, SmallFiberEntries) {
    const auto p = bloch::assemble_fiber(cos_only(), {0.3, 0.0}, 1);
    ASSERT_EQ(p.size(), 3);
    EXPECT_NEAR(p.a(0, 0).real(), 0.49, 1e-14);
    EXPECT_NEAR(p.a(1, 1).real(), 0.09, 1e-14);
    EXPECT_NEAR(p.a(2, 2).real(), 1.69, 1e-14);
    EXPECT_NEAR(std::abs(p.a(0, 1) - Complex(0.5, 0.0)), 0.0, 1e-15);
    EXPECT_NEAR(std::abs(p.a(1, 2) - Complex(0.5, 0.0)), 0.0, 1e-15);
    EXPECT_EQ(std::abs(p.a(0, 2)), 0.0);
    EXPECT_EQ((p.a - p.a.adjoint()).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Bloch, FiberIsExactlyHermitian) {
    for (const auto& v : {oracle::potential_1d(), oracle::potential_2d()}) {
        const auto p = bloch::assemble_fiber(v, {0.21, -0.37}, v.lattice.dimension == 1 ? 20 : 5);
        EXPECT_EQ((p.a - p.a.adjoint()).cwiseAbs().maxCoeff(), 0.0);
    }
}

TEST(Bloch, FreeBandsAreExact) {
    const auto bs = bloch::band_structure(free_potential(), 8, 16, 4);
    for (std::size_t iq = 0; iq < bs.q_count(); ++iq) {
        const auto ref = oracle::free_fiber(bs.qpoints[iq][0], 2.0 * kPi, 8);
        for (int j = 0; j < 4; ++j) EXPECT_NEAR(bs.energies(j, static_cast<Eigen::Index>(iq)), ref[j], 1e-12);
    }
}

TEST(Bloch, ConstantShift) {
    PeriodicPotential shifted = oracle::potential_1d();
    // cos(0 x + 0) contributes a constant 1 on the diagonal.
    shifted.terms.push_back({0.7, TrigKind::cos, {0, 0}, 0.0});
    const auto a = bloch::band_structure(oracle::potential_1d(), 16, 16, 3);
    const auto b = bloch::band_structure(shifted, 16, 16, 3);
    EXPECT_LE((b.energies.array() - a.energies.array() - 0.7).abs().maxCoeff(), 1e-10);
}

TEST(Bloch, TimeReversalSymmetry) {
    for (const auto& v : {oracle::potential_1d(), oracle::potential_2d()}) {
        const int cutoff = v.lattice.dimension == 1 ? 16 : 4;
        const auto bs = bloch::band_structure(v, cutoff, 8, 3);
        for (std::size_t iq = 0; iq < bs.q_count(); ++iq) {
            const Point q = bs.qpoints[iq];
            const auto minus = eig::solve_lowest(bloch::assemble_fiber(v, {-q[0], -q[1]}, cutoff), 3, false);
            EXPECT_LE((bs.energies.col(static_cast<Eigen::Index>(iq)) - minus.values).cwiseAbs().maxCoeff(), 1e-9);
        }
    }
}

TEST(Bloch, GridPartnersAreNegatives) {
    const auto bs = bloch::band_structure(oracle::potential_2d(), 3, 8, 2);
    const double g = 1.0;
    for (std::size_t iq = 0; iq < bs.q_count(); ++iq) {
        const auto ip = bs.partner(iq);
        for (int i = 0; i < 2; ++i)
            EXPECT_NEAR(std::remainder(bs.qpoints[iq][i] + bs.qpoints[ip][i], g), 0.0, 1e-12);
    }
}

TEST(Bloch, ZoneGrid) {
    const Lattice lat{1, 2.0 * kPi};
    const auto q = bloch::zone_grid(lat, 8);
    ASSERT_EQ(q.size(), 8u);
    EXPECT_NEAR(q.back(), 0.5, 1e-15);
    EXPECT_NEAR(q[3], 0.0, 1e-15);
    EXPECT_GT(q.front(), -0.5);
    EXPECT_THROW(bloch::zone_grid(lat, 7), InvalidArgument);
}

TEST(Bloch, PlanewaveConvergence) {
    const auto a = bloch::band_structure(oracle::potential_1d(), 16, 32, 3);
    const auto b = bloch::band_structure(oracle::potential_1d(), 32, 32, 3);
    EXPECT_LE((a.energies - b.energies).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Bloch, GapConvergesInGrid) {
    const auto g64 = bloch::find_gap(bloch::band_structure(oracle::potential_1d(), 32, 64, 2), 1);
    const auto g128 = bloch::find_gap(bloch::band_structure(oracle::potential_1d(), 32, 128, 2), 1);
    EXPECT_LE(std::abs(g64.alpha - g128.alpha), 1e-6);
    EXPECT_LE(std::abs(g64.beta - g128.beta), 1e-6);
}

TEST(Bloch, OneDimensionalGap) {
    const auto gap = bloch::find_gap(bloch::band_structure(oracle::potential_1d(), 32, 64, 3), 1);
    EXPECT_NEAR(gap.alpha, -1.15, 0.02);
    EXPECT_NEAR(gap.beta, -0.65, 0.02);
    EXPECT_NEAR(gap.gamma(), 0.5 * (gap.alpha + gap.beta), 1e-15);
    EXPECT_TRUE(gap.contains(gap.gamma()));
    EXPECT_FALSE(gap.contains(gap.alpha));
}

TEST(Bloch, FreeOperatorHasNoGap) {
    const auto bs = bloch::band_structure(free_potential(), 16, 64, 3);
    EXPECT_THROW(bloch::find_gap(bs, 1), NoGap);
    EXPECT_THROW(bloch::find_gap(bs, 3), InvalidArgument);
}

TEST(Bloch, ProjectorIsIdempotentWithTraceJ) {
    for (double q : {-0.4, 0.0, 0.2, 0.5}) {
        const auto p = bloch::exact_projector_fiber(oracle::potential_1d(), {q, 0.0}, 16, 1);
        EXPECT_LE((p * p - p).cwiseAbs().maxCoeff(), 1e-12);
        EXPECT_NEAR(p.trace().real(), 1.0, 1e-12);
        EXPECT_LE((p - p.adjoint()).cwiseAbs().maxCoeff(), 1e-12);
    }
}

TEST(Bloch, RejectsBadInput) {
    EXPECT_THROW(bloch::band_structure(oracle::potential_1d(), 16, 16, 1), InvalidArgument);
    EXPECT_THROW(bloch::assemble_fiber(oracle::potential_1d(), {0.9, 0.0}, 4), InvalidArgument);
    EXPECT_THROW(bloch::assemble_fiber(oracle::potential_1d(), {0.1, 0.0}, 0), InvalidArgument);
}

TEST(Bloch, ThreadedMatchesSerial) {
    const auto a = bloch::band_structure(oracle::potential_1d(), 16, 32, 3, false, 1);
    const auto b = bloch::band_structure(oracle::potential_1d(), 16, 32, 3, false, 3);
    EXPECT_EQ((a.energies - b.energies).cwiseAbs().maxCoeff(), 0.0);
}
