#pragma once

#include "simplexci/core.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/QR>

#include <cstdio>
#include <limits>
#include <string>
#include <vector>

namespace simplexci {

// ---------------------------------------------------------------------------
// Orthonormal basis of the complement of the ones vector
// ---------------------------------------------------------------------------

/**
 * K x (K-1) matrix with orthonormal columns spanning {x : 1'x = 0}.
 *
 * Statistics built on top of the basis (cone projections, test statistics,
 * zero counts) do not depend on which valid basis is used.
 */
class OrthoBasis {
public:
    /// Wraps a user-supplied basis after checking orthonormality and 1'B = 0.
    static OrthoBasis from_matrix(Matrix b2, double tol = 1e-10) {
        const Index k = b2.rows();
        if (k < 2 || b2.cols() != k - 1) {
            throw ValidationError("OrthoBasis: expected a K x (K-1) matrix with K >= 2");
        }
        const Matrix gram = b2.transpose() * b2;
        if ((gram - Matrix::Identity(k - 1, k - 1)).cwiseAbs().maxCoeff() > tol) {
            throw ValidationError("OrthoBasis: columns are not orthonormal");
        }
        if ((b2.transpose() * Vector::Ones(k)).cwiseAbs().maxCoeff() > tol) {
            throw ValidationError("OrthoBasis: columns are not orthogonal to the ones vector");
        }
        return OrthoBasis(std::move(b2));
    }

    Index K() const { return b2_.rows(); }
    const Matrix& b2() const { return b2_; }

private:
    explicit OrthoBasis(Matrix b2) : b2_(std::move(b2)) {}
    Matrix b2_;

    friend OrthoBasis build_basis(Index K);
};

/// Helmert basis: column m has m entries 1/sqrt(m(m+1)) followed by -m/sqrt(m(m+1)).
inline OrthoBasis build_basis(Index K) {
    if (K < 2) throw ValidationError("build_basis: K must be at least 2");
    Matrix b2 = Matrix::Zero(K, K - 1);
    for (Index m = 1; m < K; ++m) {
        const double denom = std::sqrt(static_cast<double>(m) * static_cast<double>(m + 1));
        for (Index i = 0; i < m; ++i) b2(i, m - 1) = 1.0 / denom;
        b2(m, m - 1) = -static_cast<double>(m) / denom;
    }
    return OrthoBasis(std::move(b2));
}

// ---------------------------------------------------------------------------
// Symmetric positive definite matrices
// ---------------------------------------------------------------------------

inline constexpr double kDefaultConditionCap = 1e12;

/// Symmetric positive definite matrix with a cached Cholesky factor.
/// Construction rejects asymmetric, singular, or badly conditioned input.
class SpdMatrix {
public:
    explicit SpdMatrix(const Matrix& m, double max_condition = kDefaultConditionCap) {
        if (m.rows() != m.cols() || m.rows() == 0) {
            throw ValidationError("SpdMatrix: matrix must be square and non-empty");
        }
        if (!m.allFinite()) throw NumericalError("SpdMatrix: non-finite entries");
        const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
        if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale) {
            throw ValidationError("SpdMatrix: matrix is not symmetric");
        }
        mat_ = 0.5 * (m + m.transpose());
        Eigen::SelfAdjointEigenSolver<Matrix> eig(mat_, Eigen::EigenvaluesOnly);
        const double lo = eig.eigenvalues().minCoeff();
        const double hi = eig.eigenvalues().maxCoeff();
        if (!(lo > 0.0)) {
            char buf[96];
            std::snprintf(buf, sizeof buf, "SpdMatrix: matrix is not positive definite (min eigenvalue %.3g)", lo);
            throw NumericalError(buf);
        }
        condition_ = hi / lo;
        if (condition_ > max_condition) {
            char buf[96];
            std::snprintf(buf, sizeof buf, "SpdMatrix: condition number %.3g exceeds cap %.3g", condition_,
                          max_condition);
            throw NumericalError(buf);
        }
        llt_.compute(mat_);
        if (llt_.info() != Eigen::Success) throw NumericalError("SpdMatrix: Cholesky failed");
    }

    Index dim() const { return mat_.rows(); }
    const Matrix& matrix() const { return mat_; }
    double condition() const { return condition_; }

    /// Omega^{-1} b
    template <class Derived>
    Matrix solve(const Eigen::MatrixBase<Derived>& b) const {
        return llt_.solve(b);
    }

    /// L^{-1} x where Omega = L L'. Then ||x||_Omega^2 = ||whiten(x)||^2.
    template <class Derived>
    Matrix whiten(const Eigen::MatrixBase<Derived>& x) const {
        return llt_.matrixL().solve(x);
    }

    /// x' Omega^{-1} x
    double inv_quad(const Vector& x) const { return whiten(x).squaredNorm(); }

private:
    Matrix mat_;
    Eigen::LLT<Matrix> llt_;
    double condition_ = 1.0;
};

// ---------------------------------------------------------------------------
// Nonnegative least squares
// ---------------------------------------------------------------------------

/// Lawson-Hanson active-set solution of min ||A x - b|| subject to x >= 0.
/// Throws NumericalError when `max_iter` inner+outer iterations are exceeded.
inline Vector nnls(const Matrix& A, const Vector& b, int max_iter) {
    const Index m = A.rows();
    const Index n = A.cols();
    Vector x = Vector::Zero(n);
    if (n == 0) return x;
    const double bnorm = b.cwiseAbs().maxCoeff();
    if (bnorm == 0.0) return x;
    const double tol = 10.0 * static_cast<double>(std::max(m, n)) *
                       std::numeric_limits<double>::epsilon() * A.cwiseAbs().colwise().sum().maxCoeff() *
                       bnorm;

    std::vector<bool> passive(static_cast<std::size_t>(n), false);
    auto solve_passive = [&](Vector& s) {
        std::vector<Index> idx;
        for (Index j = 0; j < n; ++j)
            if (passive[static_cast<std::size_t>(j)]) idx.push_back(j);
        Matrix ap(m, static_cast<Index>(idx.size()));
        for (std::size_t c = 0; c < idx.size(); ++c) ap.col(static_cast<Index>(c)) = A.col(idx[c]);
        const Vector sp = ap.colPivHouseholderQr().solve(b);
        s.setZero(n);
        for (std::size_t c = 0; c < idx.size(); ++c) s[idx[c]] = sp[static_cast<Index>(c)];
    };

    int iter = 0;
    Vector grad = A.transpose() * (b - A * x);
    Vector s(n);
    while (true) {
        Index t = -1;
        double best = tol;
        for (Index j = 0; j < n; ++j) {
            if (!passive[static_cast<std::size_t>(j)] && grad[j] > best) {
                best = grad[j];
                t = j;
            }
        }
        if (t < 0) break;
        passive[static_cast<std::size_t>(t)] = true;

        while (true) {
            if (++iter > max_iter) throw NumericalError("nnls: iteration cap exceeded");
            solve_passive(s);
            double alpha = std::numeric_limits<double>::infinity();
            Index hit = -1;
            for (Index j = 0; j < n; ++j) {
                if (passive[static_cast<std::size_t>(j)] && s[j] <= 0.0) {
                    const double a = x[j] / (x[j] - s[j]);
                    if (a < alpha) {
                        alpha = a;
                        hit = j;
                    }
                }
            }
            if (hit < 0) {
                x = s;
                break;
            }
            x += alpha * (s - x);
            x[hit] = 0.0;
            for (Index j = 0; j < n; ++j) {
                if (passive[static_cast<std::size_t>(j)] && x[j] <= 0.0) {
                    passive[static_cast<std::size_t>(j)] = false;
                    x[j] = 0.0;
                }
            }
        }
        grad = A.transpose() * (b - A * x);
    }
    return x;
}

// ---------------------------------------------------------------------------
// Projection onto the cone Lambda(w) = {B2' lambda : lambda >= 0, w'lambda = 0}
// ---------------------------------------------------------------------------

struct ConeTolerances {
    double support = 1e-10;       ///< w_j <= support puts j in J0[w]
    double zero_rel = 1e-8;       ///< zero threshold is zero_rel * (1 + ||gradient_image||_inf)
    int iter_factor = 50;         ///< iteration cap is iter_factor * K
    double degenerate = 1e-10;    ///< positive multipliers below this flag a degenerate solve
};

struct ConeProjection {
    Vector lambda_hat;              ///< K-vector, zero outside J0[w]
    Vector residual;                ///< f - B2' lambda_hat (the polar-cone part)
    Vector gradient_image;          ///< B2 Omega^{-1} residual
    std::vector<Index> active_set;  ///< j with lambda_hat_j > 0
    int d = 0;                      ///< zero count of gradient_image
    double objective = 0.0;         ///< residual' Omega^{-1} residual
    bool degenerate = false;

    Vector cone_part(const Vector& f) const { return f - residual; }
};

/// Indices j with w_j <= tol.
inline std::vector<Index> zero_support(const Vector& w, double tol = kSimplexTol) {
    std::vector<Index> out;
    for (Index j = 0; j < w.size(); ++j)
        if (w[j] <= tol) out.push_back(j);
    return out;
}

/// Number of entries within zero_rel * (1 + ||g||_inf) of zero.
inline int count_zeros(const Vector& g, double zero_rel) {
    const double thresh = zero_rel * (1.0 + (g.size() ? g.cwiseAbs().maxCoeff() : 0.0));
    int d = 0;
    for (Index j = 0; j < g.size(); ++j)
        if (std::abs(g[j]) <= thresh) ++d;
    return d;
}

/**
 * Omega-norm projection of f onto Lambda(w).
 *
 * Since w >= 0 and lambda >= 0, w'lambda = 0 forces lambda_j = 0 wherever
 * w_j > 0, so the problem is an NNLS in the coordinates J0[w] after
 * whitening with the Cholesky factor of Omega.
 */
inline ConeProjection project_cone(const Vector& f, const Vector& w, const SpdMatrix& omega,
                                   const OrthoBasis& basis, const ConeTolerances& tol = {}) {
    const Index K = basis.K();
    if (w.size() != K) throw ValidationError("project_cone: w has wrong dimension");
    if (f.size() != K - 1) throw ValidationError("project_cone: f has wrong dimension");
    if (omega.dim() != K - 1) throw ValidationError("project_cone: omega has wrong dimension");
    require_simplex(w, "project_cone");
    if (!f.allFinite()) throw NumericalError("project_cone: non-finite f");

    const Matrix& b2 = basis.b2();
    ConeProjection out;
    out.lambda_hat = Vector::Zero(K);

    const std::vector<Index> j0 = zero_support(w, tol.support);
    if (!j0.empty()) {
        Matrix cols(K - 1, static_cast<Index>(j0.size()));
        for (std::size_t c = 0; c < j0.size(); ++c) cols.col(static_cast<Index>(c)) = b2.row(j0[c]).transpose();
        const Matrix a = omega.whiten(cols);
        const Vector b = omega.whiten(f);
        const Vector x = nnls(a, b, tol.iter_factor * static_cast<int>(K));
        for (std::size_t c = 0; c < j0.size(); ++c) out.lambda_hat[j0[c]] = x[static_cast<Index>(c)];
    }

    out.residual = f - b2.transpose() * out.lambda_hat;
    out.gradient_image = b2 * omega.solve(out.residual);
    out.objective = omega.inv_quad(out.residual);

    const double thresh = tol.zero_rel * (1.0 + out.gradient_image.cwiseAbs().maxCoeff());
    for (Index j = 0; j < K; ++j) {
        const bool on_support = out.lambda_hat[j] > 0.0;
        if (on_support) {
            out.active_set.push_back(j);
            if (out.lambda_hat[j] < tol.degenerate) out.degenerate = true;
        }
        if (on_support || std::abs(out.gradient_image[j]) <= thresh) ++out.d;
    }
    return out;
}

/// y - Pi_Omega(y | Lambda(w)): the Omega-projection of y onto the polar cone.
inline Vector project_polar(const Vector& y, const Vector& w, const SpdMatrix& omega,
                            const OrthoBasis& basis, const ConeTolerances& tol = {}) {
    return project_cone(y, w, omega, basis, tol).residual;
}

/**
 * Omega-norm projection of y onto L_J = {x : [B2 Omega^{-1} x]_J = 0}.
 * |J| = K gives the zero vector (the span is {0}).
 */
inline Vector project_linear_span(const Vector& y, const std::vector<Index>& J, const SpdMatrix& omega,
                                  const OrthoBasis& basis) {
    const Index K = basis.K();
    if (y.size() != K - 1 || omega.dim() != K - 1) {
        throw ValidationError("project_linear_span: dimension mismatch");
    }
    std::vector<bool> seen(static_cast<std::size_t>(K), false);
    for (Index j : J) {
        if (j < 0 || j >= K || seen[static_cast<std::size_t>(j)]) {
            throw ValidationError("project_linear_span: index set must hold distinct indices in [0, K)");
        }
        seen[static_cast<std::size_t>(j)] = true;
    }
    if (J.empty()) return y;
    if (static_cast<Index>(J.size()) == K) return Vector::Zero(K - 1);

    Matrix bj(static_cast<Index>(J.size()), K - 1);
    for (std::size_t r = 0; r < J.size(); ++r) bj.row(static_cast<Index>(r)) = basis.b2().row(J[r]);
    // x = y - Bj' (Bj Omega^{-1} Bj')^{-1} Bj Omega^{-1} y
    const Matrix bj_oinv = omega.solve(bj.transpose()).transpose();
    const Matrix gram = bj_oinv * bj.transpose();
    const Vector coef = gram.ldlt().solve(bj_oinv * y);
    return y - bj.transpose() * coef;
}

// ---------------------------------------------------------------------------
// Simplex-constrained quadratic program
// ---------------------------------------------------------------------------

inline double quadratic_objective(const Matrix& H, const Vector& h, const Vector& w) {
    return 0.5 * w.dot(H * w) - w.dot(h);
}

/**
 * argmin over the simplex of 1/2 w'Hw - w'h for symmetric PSD H.
 *
 * Primal active-set method on the nonnegativity constraints starting from the
 * uniform weight; sum(w) = 1 is kept through a reduced basis of each free
 * face. On a singular reduced Hessian the step follows a zero-curvature
 * descent direction when one exists, otherwise the pseudo-inverse step, so a
 * set-valued argmin yields one of its points.
 */
inline Vector solve_simplex_qp(const Matrix& H, const Vector& h) {
    const Index K = h.size();
    if (K < 1 || H.rows() != K || H.cols() != K) throw ValidationError("solve_simplex_qp: dimension mismatch");
    if (!H.allFinite() || !h.allFinite()) throw ValidationError("solve_simplex_qp: non-finite inputs");
    const double hscale = std::max(1.0, H.cwiseAbs().maxCoeff());
    if ((H - H.transpose()).cwiseAbs().maxCoeff() > 1e-10 * hscale) {
        throw ValidationError("solve_simplex_qp: H is not symmetric");
    }
    if (K == 1) return Vector::Ones(1);

    const double eps = std::numeric_limits<double>::epsilon();
    Vector w = Vector::Constant(K, 1.0 / static_cast<double>(K));
    std::vector<bool> free(static_cast<std::size_t>(K), true);
    const int max_iter = 50 * static_cast<int>(K);

    for (int iter = 0; iter < max_iter; ++iter) {
        std::vector<Index> F;
        for (Index j = 0; j < K; ++j)
            if (free[static_cast<std::size_t>(j)]) F.push_back(j);
        const Index nf = static_cast<Index>(F.size());
        Vector g = H * w - h;
        const double gscale = 1.0 + g.cwiseAbs().maxCoeff() + hscale;

        Vector p = Vector::Zero(K);
        bool newton = true;
        if (nf >= 2) {
            const Matrix z = build_basis(nf).b2();
            Matrix hff(nf, nf);
            Vector gf(nf);
            for (Index a = 0; a < nf; ++a) {
                gf[a] = g[F[static_cast<std::size_t>(a)]];
                for (Index b = 0; b < nf; ++b)
                    hff(a, b) = H(F[static_cast<std::size_t>(a)], F[static_cast<std::size_t>(b)]);
            }
            const Matrix hr = z.transpose() * hff * z;
            const Vector gr = z.transpose() * gf;
            Eigen::SelfAdjointEigenSolver<Matrix> eig(hr);
            const Vector& vals = eig.eigenvalues();
            const Matrix& vecs = eig.eigenvectors();
            const double cut = 1e-12 * std::max(1.0, vals.cwiseAbs().maxCoeff());
            Vector pr = Vector::Zero(nf - 1);
            for (Index i = 0; i < nf - 1; ++i) {
                const double c = vecs.col(i).dot(gr);
                if (vals[i] <= cut && std::abs(c) > 1e3 * eps * gscale) {
                    newton = false;
                    pr -= c * vecs.col(i);
                }
            }
            if (newton) {
                for (Index i = 0; i < nf - 1; ++i)
                    if (vals[i] > cut) pr -= (vecs.col(i).dot(gr) / vals[i]) * vecs.col(i);
            }
            const Vector pf = z * pr;
            for (Index a = 0; a < nf; ++a) p[F[static_cast<std::size_t>(a)]] = pf[a];
        }

        if (p.cwiseAbs().maxCoeff() > 1e3 * eps) {
            double alpha = newton ? 1.0 : std::numeric_limits<double>::infinity();
            Index blocking = -1;
            for (Index j : F) {
                if (p[j] < 0.0) {
                    const double ratio = w[j] / -p[j];
                    if (ratio < alpha) {
                        alpha = ratio;
                        blocking = j;
                    }
                }
            }
            if (!std::isfinite(alpha)) throw NumericalError("solve_simplex_qp: unbounded direction");
            w += alpha * p;
            for (Index j : F) w[j] = std::max(w[j], 0.0);
            if (blocking >= 0) {
                w[blocking] = 0.0;
                free[static_cast<std::size_t>(blocking)] = false;
                w /= w.sum();
                continue;
            }
            g = H * w - h;
        }

        // Stationary on the current face: release the most negative multiplier.
        double nu = 0.0;
        for (Index j : F) nu += g[j];
        nu /= static_cast<double>(nf);
        Index release = -1;
        double most_negative = -1e-11 * gscale;
        for (Index j = 0; j < K; ++j) {
            if (!free[static_cast<std::size_t>(j)] && g[j] - nu < most_negative) {
                most_negative = g[j] - nu;
                release = j;
            }
        }
        if (release < 0) {
            w = w.cwiseMax(0.0);
            return w / w.sum();
        }
        free[static_cast<std::size_t>(release)] = true;
    }
    throw NumericalError("solve_simplex_qp: iteration cap exceeded");
}

}  // namespace simplexci
