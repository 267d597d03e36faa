#include <gtest/gtest.h>

#include <random>

#include "gapeig/eigcore.hpp"
#include "oracles.hpp"

using namespace gapeig;
using eig::RealPencil;
using Eigen::MatrixXd;

namespace {

double orthonormality_error(const MatrixXd& b, const MatrixXd& v) {
    return (v.transpose() * b * v - MatrixXd::Identity(v.cols(), v.cols())).cwiseAbs().maxCoeff();
}

}  // namespace

TEST(Eigcore, SmallExamples) {
    auto r = eig::solve_pencil(RealPencil::standard(Eigen::Vector2d(2, 1).asDiagonal().toDenseMatrix()));
    EXPECT_DOUBLE_EQ(r.values(0), 1.0);
    EXPECT_DOUBLE_EQ(r.values(1), 2.0);

    MatrixXd swap(2, 2);
    swap << 0, 1, 1, 0;
    r = eig::solve_pencil(RealPencil::standard(swap));
    EXPECT_NEAR(r.values(0), -1.0, 1e-15);
    EXPECT_NEAR(r.values(1), 1.0, 1e-15);

    const MatrixXd three = 3.0 * MatrixXd::Identity(2, 2);
    r = eig::solve_pencil(RealPencil{three, three});
    EXPECT_NEAR(r.values(0), 1.0, 1e-15);
    EXPECT_NEAR(r.values(1), 1.0, 1e-15);
    EXPECT_LE(orthonormality_error(three, r.vectors), 1e-14);
}

TEST(Eigcore, RandomPencilContracts) {
    std::mt19937_64 rng(2024);
    std::uniform_int_distribution<int> size(1, 64);
    for (int trial = 0; trial < 100; ++trial) {
        const auto n = static_cast<Eigen::Index>(size(rng));
        const RealPencil p{oracle::random_symmetric(rng, n), oracle::random_spd(rng, n)};
        const auto r = eig::solve_pencil(p);
        ASSERT_EQ(r.values.size(), n);
        for (Eigen::Index i = 1; i < n; ++i) EXPECT_LE(r.values(i - 1), r.values(i));
        const double scale = p.a.cwiseAbs().maxCoeff() + p.b.cwiseAbs().maxCoeff();
        const MatrixXd res = p.a * r.vectors - p.b * r.vectors * r.values.asDiagonal();
        EXPECT_LE(res.cwiseAbs().maxCoeff(), 1e-9 * static_cast<double>(n) * scale);
        EXPECT_LE(orthonormality_error(p.b, r.vectors), 1e-8);
        EXPECT_LE(r.residual, 1e-8 * scale);
    }
}

TEST(Eigcore, RandomComplexPencilContracts) {
    std::mt19937_64 rng(99);
    std::normal_distribution<double> g;
    for (int trial = 0; trial < 100; ++trial) {
        const Eigen::Index n = 1 + trial % 24;
        Eigen::MatrixXcd a(n, n);
        Eigen::MatrixXcd m(n, n);
        for (Eigen::Index i = 0; i < n; ++i)
            for (Eigen::Index j = 0; j < n; ++j) {
                a(i, j) = {g(rng), g(rng)};
                m(i, j) = {g(rng), g(rng)};
            }
        a = (0.5 * (a + a.adjoint())).eval();
        const Eigen::MatrixXcd b = m * m.adjoint() + static_cast<double>(n) * Eigen::MatrixXcd::Identity(n, n);
        const eig::ComplexPencil p{a, b};
        const auto r = eig::solve_pencil(p);
        const double scale = a.cwiseAbs().maxCoeff() + b.cwiseAbs().maxCoeff();
        EXPECT_LE(r.residual, 1e-8 * scale);
        EXPECT_LE((r.vectors.adjoint() * b * r.vectors - Eigen::MatrixXcd::Identity(n, n)).cwiseAbs().maxCoeff(), 1e-8);
    }
}

TEST(Eigcore, MatchesJacobiOracle) {
    std::mt19937_64 rng(5);
    for (Eigen::Index n = 1; n <= 16; ++n) {
        const MatrixXd a = oracle::random_symmetric(rng, n);
        const auto r = eig::solve_pencil(RealPencil::standard(a), false);
        const auto ref = oracle::jacobi_eigenvalues(a);
        ASSERT_EQ(r.values.size(), n);
        for (Eigen::Index i = 0; i < n; ++i) EXPECT_NEAR(r.values(i), ref[static_cast<std::size_t>(i)], 1e-10);
        const auto with_identity = eig::solve_pencil(RealPencil{a, MatrixXd::Identity(n, n)}, false);
        for (Eigen::Index i = 0; i < n; ++i)
            EXPECT_NEAR(with_identity.values(i), ref[static_cast<std::size_t>(i)], 1e-10);
    }
}

TEST(Eigcore, WindowExamples) {
    const MatrixXd d = Eigen::Vector3d(0, 1, 2).asDiagonal().toDenseMatrix();
    const auto p = RealPencil{d, MatrixXd::Identity(3, 3)};
    auto r = eig::solve_window(p, 0.5, 1.5);
    ASSERT_EQ(r.values.size(), 1);
    EXPECT_DOUBLE_EQ(r.values(0), 1.0);
    EXPECT_EQ(eig::solve_window(p, 10.0, 11.0).values.size(), 0);
    // Open interval: an eigenvalue on the upper end is excluded.
    EXPECT_EQ(eig::solve_window(p, 0.5, 1.0).values.size(), 0);
    EXPECT_THROW(eig::solve_window(p, 1.0, 1.0), InvalidArgument);
}

TEST(Eigcore, WindowEqualsFilteredFullSpectrum) {
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    for (int trial = 0; trial < 20; ++trial) {
        const RealPencil p{oracle::random_symmetric(rng, 8), oracle::random_spd(rng, 8)};
        double lo = u(rng);
        double hi = u(rng);
        if (lo > hi) std::swap(lo, hi);
        if (hi - lo < 1e-3) hi = lo + 1.0;
        const auto full = eig::solve_pencil(p, false);
        const auto expect = oracle::filter({full.values.data(), full.values.data() + 8}, lo, hi);
        const auto got = eig::solve_window(p, lo, hi);
        ASSERT_EQ(static_cast<std::size_t>(got.values.size()), expect.size());
        for (std::size_t i = 0; i < expect.size(); ++i)
            EXPECT_NEAR(got.values(static_cast<Eigen::Index>(i)), expect[i], 1e-12);
        if (got.values.size() > 0) {
            EXPECT_LE(orthonormality_error(p.b, got.vectors), 1e-8);
            EXPECT_LE(got.residual, 1e-9);
        }
    }
}

TEST(Eigcore, LowestEigenpairs) {
    std::mt19937_64 rng(8);
    const RealPencil p{oracle::random_symmetric(rng, 30), oracle::random_spd(rng, 30)};
    const auto full = eig::solve_pencil(p, false);
    const auto low = eig::solve_lowest(p, 5);
    ASSERT_EQ(low.values.size(), 5);
    for (int i = 0; i < 5; ++i) EXPECT_NEAR(low.values(i), full.values(i), 1e-12);
}

TEST(Eigcore, RejectsBadPencils) {
    MatrixXd a(2, 2);
    a << 1, 2, 0, 1;
    EXPECT_THROW(eig::solve_pencil(RealPencil::standard(a)), InvalidMatrix);
    MatrixXd nan = MatrixXd::Identity(2, 2);
    nan(1, 1) = std::nan("");
    EXPECT_THROW(eig::solve_pencil(RealPencil::standard(nan)), InvalidMatrix);
    MatrixXd indefinite(2, 2);
    indefinite << 1, 0, 0, -1;
    EXPECT_THROW(eig::solve_pencil(RealPencil{MatrixXd::Identity(2, 2), indefinite}), PencilNotDefinite);
    EXPECT_THROW(eig::solve_window(RealPencil{MatrixXd::Identity(2, 2), indefinite}, -1.0, 1.0), PencilNotDefinite);
}

TEST(Eigcore, BandedMatchesDense) {
    std::mt19937_64 rng(31);
    std::normal_distribution<double> g;
    const Eigen::Index n = 120;
    const int kd = 3;
    eig::BandedPencil bp(n, kd);
    for (Eigen::Index j = 0; j < n; ++j) {
        bp.add(j, j, g(rng), 4.0 + std::abs(g(rng)));
        for (Eigen::Index i = j + 1; i < std::min(n, j + kd + 1); ++i) bp.add(i, j, g(rng), 0.2 * g(rng));
    }
    const auto dense = bp.to_dense();
    const auto full = eig::solve_pencil(dense, false);
    const double lo = full.values(30) - 1e-9;
    const double hi = full.values(60) + 1e-9;
    const auto band = eig::solve_banded_window(bp, lo, hi, true);
    ASSERT_EQ(band.values.size(), 31);
    for (Eigen::Index i = 0; i < 31; ++i) EXPECT_NEAR(band.values(i), full.values(30 + i), 1e-10);
    EXPECT_LE(orthonormality_error(dense.b, band.vectors), 1e-8);
    const MatrixXd res = dense.a * band.vectors - dense.b * band.vectors * band.values.asDiagonal();
    EXPECT_LE(res.cwiseAbs().maxCoeff(), 1e-8);
    const auto lowest = eig::banded_lowest_values(bp, 4);
    for (int i = 0; i < 4; ++i) EXPECT_NEAR(lowest(i), full.values(i), 1e-10);
    Eigen::VectorXd x = Eigen::VectorXd::Random(n);
    EXPECT_LE((bp.apply_a(x) - dense.a * x).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LE((bp.apply_b(x) - dense.b * x).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_THROW(bp.add(10, 0, 1.0, 0.0), InvalidArgument);
}

TEST(Eigcore, LargeSymmetricWindowValues) {
    std::mt19937_64 rng(1);
    const MatrixXd a = oracle::random_symmetric(rng, 200);
    const auto full = eig::solve_pencil(RealPencil::standard(a), false);
    const auto part = eig::symmetric_window_values(a, -1.0, 1.0);
    const auto expect = oracle::filter({full.values.data(), full.values.data() + 200}, -1.0, 1.0);
    ASSERT_EQ(static_cast<std::size_t>(part.size()), expect.size());
    for (std::size_t i = 0; i < expect.size(); ++i) EXPECT_NEAR(part(static_cast<Eigen::Index>(i)), expect[i], 1e-10);
}
