#include "oracles.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace simplexci;

namespace {

Vector vec(std::initializer_list<double> xs) {
    Vector v(static_cast<Index>(xs.size()));
    Index i = 0;
    for (double x : xs) v[i++] = x;
    return v;
}

Vector random_lattice_point(std::mt19937_64& rng, Index K, int N) {
    const auto grid = simplex_grid(K, N);
    std::uniform_int_distribution<std::size_t> pick(0, grid.size() - 1);
    return grid[pick(rng)];
}

}  // namespace

TEST(Basis, K2IsPlusMinusOneOverRootTwo) {
    const Matrix b = build_basis(2).b2();
    ASSERT_EQ(b.rows(), 2);
    ASSERT_EQ(b.cols(), 1);
    EXPECT_NEAR(std::abs(b(0, 0)), 1.0 / std::sqrt(2.0), 1e-15);
    EXPECT_NEAR(b(0, 0), -b(1, 0), 1e-15);
}

TEST(Basis, DefiningIdentities) {
    for (Index K = 2; K <= 12; ++K) {
        const Matrix b = build_basis(K).b2();
        EXPECT_LE((b.transpose() * b - Matrix::Identity(K - 1, K - 1)).cwiseAbs().maxCoeff(), 1e-12) << K;
        EXPECT_LE((b.transpose() * Vector::Ones(K)).cwiseAbs().maxCoeff(), 1e-12) << K;
        const Matrix proj = Matrix::Identity(K, K) - Matrix::Constant(K, K, 1.0 / static_cast<double>(K));
        EXPECT_LE((b * b.transpose() - proj).cwiseAbs().maxCoeff(), 1e-12) << K;
    }
}

TEST(Basis, RejectsKBelowTwo) {
    EXPECT_THROW(build_basis(1), ValidationError);
    EXPECT_THROW(build_basis(0), ValidationError);
}

TEST(Basis, FromMatrixValidates) {
    std::mt19937_64 rng(1);
    const Matrix rotated = build_basis(5).b2() * oracle::random_orthogonal(rng, 4);
    EXPECT_NO_THROW(OrthoBasis::from_matrix(rotated));
    EXPECT_THROW(OrthoBasis::from_matrix(Matrix::Identity(3, 2)), ValidationError);
    EXPECT_THROW(OrthoBasis::from_matrix(2.0 * build_basis(3).b2()), ValidationError);
}

TEST(Basis, RankLemmaAllSubsets) {
    for (Index K = 2; K <= 8; ++K) {
        const Matrix b = build_basis(K).b2();
        for (unsigned mask = 1; mask < (1u << K) - 1; ++mask) {
            std::vector<Index> J;
            for (Index j = 0; j < K; ++j)
                if (mask & (1u << j)) J.push_back(j);
            Matrix rows(static_cast<Index>(J.size()), K - 1);
            for (std::size_t r = 0; r < J.size(); ++r) rows.row(static_cast<Index>(r)) = b.row(J[r]);
            Eigen::FullPivLU<Matrix> lu(rows);
            EXPECT_EQ(lu.rank(), static_cast<Index>(J.size())) << "K=" << K << " mask=" << mask;
        }
    }
}

TEST(Basis, ZeroRowLemma) {
    std::mt19937_64 rng(2);
    for (Index K = 2; K <= 8; ++K) {
        const Matrix b = build_basis(K).b2();
        for (int rep = 0; rep < 20; ++rep) {
            const Matrix omega = oracle::random_spd(rng, K - 1);
            const Matrix M = b * omega.inverse();
            for (Index j = 0; j < K; ++j) {
                EXPECT_GT(b.row(j).norm(), 1e-8);
                EXPECT_GT(M.row(j).norm(), 1e-8);
            }
        }
    }
}

TEST(SpdMatrix, RejectsBadInput) {
    EXPECT_THROW(SpdMatrix(Matrix::Zero(2, 3)), ValidationError);
    Matrix asym(2, 2);
    asym << 1, 0.5, 0.2, 1;
    EXPECT_THROW(SpdMatrix{asym}, ValidationError);
    Matrix indefinite(2, 2);
    indefinite << 1, 2, 2, 1;
    EXPECT_THROW(SpdMatrix{indefinite}, NumericalError);
    Matrix ill(2, 2);
    ill << 1, 0, 0, 1e-14;
    EXPECT_THROW(SpdMatrix{ill}, NumericalError);
    EXPECT_NO_THROW(SpdMatrix(ill, 1e15));
}

TEST(SpdMatrix, SolveAndWhiten) {
    std::mt19937_64 rng(3);
    const Matrix m = oracle::random_spd(rng, 4);
    const SpdMatrix s(m);
    const Vector x = oracle::random_normal(rng, 4);
    EXPECT_LE((m * s.solve(x) - x).norm(), 1e-12);
    EXPECT_NEAR(s.inv_quad(x), x.dot(m.inverse() * x), 1e-12);
}

TEST(Nnls, MatchesUnconstrainedWhenPositive) {
    Matrix A = Matrix::Identity(3, 3);
    const Vector b = vec({1.0, 2.0, 3.0});
    EXPECT_LE((nnls(A, b, 100) - b).norm(), 1e-14);
    const Vector x = nnls(A, vec({1.0, -2.0, 3.0}), 100);
    EXPECT_LE((x - vec({1.0, 0.0, 3.0})).norm(), 1e-14);
}

TEST(ProjectCone, InteriorWeightGivesZeroMultiplier) {
    std::mt19937_64 rng(4);
    const OrthoBasis basis = build_basis(4);
    const SpdMatrix omega(oracle::random_spd(rng, 3));
    const Vector f = oracle::random_normal(rng, 3);
    const ConeProjection p = project_cone(f, vec({0.1, 0.2, 0.3, 0.4}), omega, basis);
    EXPECT_EQ(p.lambda_hat.norm(), 0.0);
    EXPECT_EQ((p.residual - f).norm(), 0.0);
    EXPECT_EQ(p.d, 0);
    EXPECT_NEAR(p.objective, f.dot(omega.matrix().inverse() * f), 1e-12);
}

TEST(ProjectCone, PointOfTheConeProjectsToItself) {
    const OrthoBasis basis = build_basis(3);
    const SpdMatrix omega(Matrix::Identity(2, 2));
    const Vector w = vec({1.0, 0.0, 0.0});
    const Vector f = basis.b2().transpose() * vec({0.0, 0.7, 1.3});
    const ConeProjection p = project_cone(f, w, omega, basis);
    EXPECT_LE(p.residual.norm(), 1e-14);
    EXPECT_LE(p.objective, 1e-28);
    EXPECT_EQ(p.d, 3);
}

TEST(ProjectCone, GenericPointMatchesEnumeration) {
    std::mt19937_64 rng(5);
    const OrthoBasis basis = build_basis(3);
    const SpdMatrix omega(Matrix::Identity(2, 2));
    const Vector w = vec({1.0, 0.0, 0.0});
    for (int rep = 0; rep < 200; ++rep) {
        const Vector f = oracle::random_normal(rng, 2);
        const ConeProjection p = project_cone(f, w, omega, basis);
        const auto o = oracle::cone_by_enumeration(f, w, omega.matrix(), basis.b2());
        ASSERT_TRUE(o.found);
        EXPECT_NEAR(p.objective, o.objective, 1e-12);
        EXPECT_LE((p.lambda_hat - o.lambda).norm(), 1e-10);
        EXPECT_EQ(p.d, o.d);
    }
}

TEST(ProjectCone, RejectsBadArguments) {
    const OrthoBasis basis = build_basis(3);
    const SpdMatrix omega(Matrix::Identity(2, 2));
    EXPECT_THROW(project_cone(Vector::Zero(2), vec({0.5, 0.6, 0.0}), omega, basis), ValidationError);
    EXPECT_THROW(project_cone(Vector::Zero(3), vec({0.5, 0.5, 0.0}), omega, basis), ValidationError);
    EXPECT_THROW(project_cone(Vector::Zero(2), vec({0.5, 0.5}), omega, basis), ValidationError);
    const SpdMatrix big(Matrix::Identity(3, 3));
    EXPECT_THROW(project_cone(Vector::Zero(2), vec({0.5, 0.5, 0.0}), big, basis), ValidationError);
}

TEST(ProjectPolar, SelfAndPolarInputs) {
    std::mt19937_64 rng(6);
    const OrthoBasis basis = build_basis(4);
    const SpdMatrix omega(oracle::random_spd(rng, 3));
    const Vector w = vec({0.5, 0.5, 0.0, 0.0});
    const Vector in_cone = basis.b2().transpose() * vec({0.0, 0.0, 0.4, 1.1});
    EXPECT_LE(project_polar(in_cone, w, omega, basis).norm(), 1e-12);
    // A polar point: any y with [B2 Omega^{-1} y]_{J0} <= 0. Build it as Omega B2' c projected
    // to the complement, picking c with nonpositive entries on J0 and zero elsewhere.
    const Vector c = vec({0.0, 0.0, -0.3, -0.8});
    Vector y = omega.matrix() * basis.b2().transpose() * c;
    const Vector g = basis.b2() * omega.solve(y);
    ASSERT_LE(g[2], 0.0);
    ASSERT_LE(g[3], 0.0);
    EXPECT_LE((project_polar(y, w, omega, basis) - y).norm(), 1e-10);
}

TEST(ProjectPolar, OmegaOrthogonalToConePart) {
    std::mt19937_64 rng(7);
    const OrthoBasis basis = build_basis(4);
    const Vector w = vec({0.5, 0.5, 0.0, 0.0});
    for (int rep = 0; rep < 100; ++rep) {
        const Matrix om = oracle::random_spd(rng, 3);
        const SpdMatrix omega(om);
        const Vector y = oracle::random_normal(rng, 3);
        const Vector polar = project_polar(y, w, omega, basis);
        const Vector cone = y - polar;
        EXPECT_NEAR(polar.dot(om.inverse() * cone), 0.0, 1e-9);
        const auto o = oracle::cone_by_enumeration(y, w, om, basis.b2());
        EXPECT_LE((polar - o.residual).norm(), 1e-9);
    }
}

TEST(LinearSpan, EmptyAndFullIndexSets) {
    std::mt19937_64 rng(8);
    const OrthoBasis basis = build_basis(4);
    const SpdMatrix omega(Matrix::Identity(3, 3));
    const Vector y = oracle::random_normal(rng, 3);
    EXPECT_EQ((project_linear_span(y, {}, omega, basis) - y).norm(), 0.0);
    EXPECT_LE(project_linear_span(y, {0, 2, 3}, omega, basis).norm(), 1e-12);
    EXPECT_EQ(project_linear_span(y, {0, 1, 2, 3}, omega, basis).norm(), 0.0);
    EXPECT_THROW(project_linear_span(y, {0, 0}, omega, basis), ValidationError);
    EXPECT_THROW(project_linear_span(y, {4}, omega, basis), ValidationError);
}

TEST(LinearSpan, SingleConstraintClosedForm) {
    std::mt19937_64 rng(9);
    const OrthoBasis basis = build_basis(3);
    const SpdMatrix omega(Matrix::Identity(2, 2));
    for (int rep = 0; rep < 50; ++rep) {
        const Vector y = oracle::random_normal(rng, 2);
        const Vector r = project_linear_span(y, {0}, omega, basis);
        const Vector b = basis.b2().row(0).transpose();
        const Vector expected = y - b * (b.dot(y) / b.dot(b));
        EXPECT_NEAR((basis.b2() * r)[0], 0.0, 1e-12);
        EXPECT_LE((r - expected).norm(), 1e-12);
    }
}

TEST(SimplexQp, TrivialCases) {
    for (Index K = 2; K <= 6; ++K) {
        const Vector w = solve_simplex_qp(Matrix::Identity(K, K), Vector::Zero(K));
        EXPECT_LE((w - Vector::Constant(K, 1.0 / static_cast<double>(K))).norm(), 1e-12);
        Vector h = Vector::Zero(K);
        h[0] = 10.0;
        const Vector v = solve_simplex_qp(Matrix::Identity(K, K), h);
        EXPECT_NEAR(v[0], 1.0, 1e-12);
        EXPECT_NEAR(v.sum(), 1.0, 1e-12);
    }
}

TEST(SimplexQp, MatchesSupportEnumeration) {
    std::mt19937_64 rng(10);
    for (Index K = 2; K <= 5; ++K) {
        for (int rep = 0; rep < 200; ++rep) {
            const Matrix H = oracle::random_spd(rng, K, 0.05);
            const Vector h = oracle::random_normal(rng, K);
            const Vector w = solve_simplex_qp(H, h);
            ASSERT_TRUE(on_simplex(w, 1e-12));
            const double best = oracle::qp_by_enumeration(H, h);
            EXPECT_NEAR(quadratic_objective(H, h, w), best, 1e-10 * (1.0 + std::abs(best)));
            // KKT: gradient equal on the support and not smaller off it.
            const Vector g = H * w - h;
            double nu = std::numeric_limits<double>::infinity();
            for (Index j = 0; j < K; ++j)
                if (w[j] > 1e-12) nu = std::min(nu, g[j]);
            for (Index j = 0; j < K; ++j) {
                if (w[j] > 1e-12) EXPECT_NEAR(g[j], nu, 1e-9);
                EXPECT_GE(g[j], nu - 1e-9);
            }
        }
    }
}

TEST(SimplexQp, SingularHessianStillMinimizes) {
    std::mt19937_64 rng(11);
    for (int rep = 0; rep < 100; ++rep) {
        // Rank-two H in K = 5, as produced by two matching periods.
        Matrix X(5, 2);
        for (Index i = 0; i < 5; ++i)
            for (Index j = 0; j < 2; ++j) X(i, j) = std::normal_distribution<double>()(rng);
        const Matrix H = X * X.transpose();
        const Vector h = X * oracle::random_normal(rng, 2);
        const Vector w = solve_simplex_qp(H, h);
        ASSERT_TRUE(on_simplex(w, 1e-12));
        Vector ref;
        const double best = oracle::qp_by_enumeration(H + 1e-13 * Matrix::Identity(5, 5), h, &ref);
        EXPECT_LE(quadratic_objective(H, h, w), best + 1e-9);
    }
}

TEST(SimplexQp, RejectsBadInput) {
    EXPECT_THROW(solve_simplex_qp(Matrix::Identity(3, 3), Vector::Zero(2)), ValidationError);
    Matrix H = Matrix::Identity(2, 2);
    H(0, 1) = 1.0;
    EXPECT_THROW(solve_simplex_qp(H, Vector::Zero(2)), ValidationError);
    Vector h = Vector::Zero(2);
    h[0] = std::numeric_limits<double>::quiet_NaN();
    EXPECT_THROW(solve_simplex_qp(Matrix::Identity(2, 2), h), ValidationError);
}

// ---------------------------------------------------------------------------
// Properties over random instances
// ---------------------------------------------------------------------------

TEST(ConeProperties, OracleAgreementAcrossDimensions) {
    std::mt19937_64 rng(12);
    for (int rep = 0; rep < 300; ++rep) {
        const Index K = 3 + static_cast<Index>(rep % 3);
        const OrthoBasis basis = build_basis(K);
        const Matrix om = oracle::random_spd(rng, K - 1);
        const SpdMatrix omega(om);
        const Vector w = random_lattice_point(rng, K, 4);
        const Vector f = oracle::random_normal(rng, K - 1);
        const ConeProjection p = project_cone(f, w, omega, basis);
        const auto o = oracle::cone_by_enumeration(f, w, om, basis.b2());
        ASSERT_TRUE(o.found);
        EXPECT_NEAR(p.objective, o.objective, 1e-9);
        EXPECT_EQ(p.d, o.d);
    }
}

TEST(ConeProperties, KktCertificate) {
    std::mt19937_64 rng(13);
    for (int rep = 0; rep < 300; ++rep) {
        const Index K = 3 + static_cast<Index>(rep % 4);
        const OrthoBasis basis = build_basis(K);
        const SpdMatrix omega(oracle::random_spd(rng, K - 1));
        const Vector w = random_lattice_point(rng, K, 3);
        const Vector f = oracle::random_normal(rng, K - 1);
        const ConeProjection p = project_cone(f, w, omega, basis);
        const double tol = 1e-9 * (1.0 + p.gradient_image.cwiseAbs().maxCoeff());
        EXPECT_NEAR(w.dot(p.lambda_hat), 0.0, 1e-15);
        for (Index j = 0; j < K; ++j) {
            EXPECT_GE(p.lambda_hat[j], 0.0);
            if (p.lambda_hat[j] > 0.0) EXPECT_LE(std::abs(p.gradient_image[j]), tol);
            if (w[j] <= kSimplexTol && p.lambda_hat[j] == 0.0) EXPECT_LE(p.gradient_image[j], tol);
        }
    }
}

TEST(ConeProperties, ScaleEquivariance) {
    std::mt19937_64 rng(14);
    for (int rep = 0; rep < 200; ++rep) {
        const Index K = 3 + static_cast<Index>(rep % 3);
        const OrthoBasis basis = build_basis(K);
        const SpdMatrix omega(oracle::random_spd(rng, K - 1));
        const Vector w = random_lattice_point(rng, K, 4);
        const Vector f = oracle::random_normal(rng, K - 1);
        const double c = std::exp(std::normal_distribution<double>(0.0, 1.5)(rng));
        const ConeProjection a = project_cone(f, w, omega, basis);
        const ConeProjection b = project_cone(c * f, w, omega, basis);
        EXPECT_NEAR(b.objective, c * c * a.objective, 1e-9 * (1.0 + c * c * a.objective));
        EXPECT_EQ(a.d, b.d);
    }
}

TEST(ConeProperties, BasisInvariance) {
    std::mt19937_64 rng(15);
    for (int rep = 0; rep < 200; ++rep) {
        const Index K = 3 + static_cast<Index>(rep % 4);
        const OrthoBasis helmert = build_basis(K);
        const OrthoBasis rotated =
            OrthoBasis::from_matrix(helmert.b2() * oracle::random_orthogonal(rng, K - 1), 1e-12);
        const Matrix V = oracle::random_spd(rng, K);
        const Vector phi = oracle::random_normal(rng, K);
        const Vector w = random_lattice_point(rng, K, 4);
        auto run = [&](const OrthoBasis& b) {
            const SpdMatrix omega(b.b2().transpose() * V * b.b2());
            return project_cone(b.b2().transpose() * phi, w, omega, b);
        };
        const ConeProjection a = run(helmert);
        const ConeProjection c = run(rotated);
        EXPECT_NEAR(a.objective, c.objective, 1e-8);
        EXPECT_LE((a.lambda_hat - c.lambda_hat).norm(), 1e-8);
        EXPECT_LE((a.gradient_image - c.gradient_image).norm(), 1e-8);
        EXPECT_EQ(a.d, c.d);
    }
}

TEST(ConeProperties, MoreauDecomposition) {
    std::mt19937_64 rng(16);
    for (int rep = 0; rep < 300; ++rep) {
        const Index K = 3 + static_cast<Index>(rep % 4);
        const OrthoBasis basis = build_basis(K);
        const Matrix om = oracle::random_spd(rng, K - 1);
        const SpdMatrix omega(om);
        const Vector w = random_lattice_point(rng, K, 3);
        const Vector y = oracle::random_normal(rng, K - 1);
        const ConeProjection p = project_cone(y, w, omega, basis);
        const Vector cone = basis.b2().transpose() * p.lambda_hat;
        const Vector polar = project_polar(y, w, omega, basis);
        EXPECT_LE((y - cone - polar).norm(), 1e-9);
        EXPECT_NEAR(cone.dot(om.inverse() * polar), 0.0, 1e-9);
        const Vector m = basis.b2() * om.inverse() * polar;
        for (Index j : zero_support(w)) EXPECT_LE(m[j], 1e-9);
    }
}
