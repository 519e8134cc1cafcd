#pragma once

#include "simplexci/core.hpp"
#include "simplexci/distributions.hpp"
#include "simplexci/simplex_geometry.hpp"

#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace simplexci {

/// Per-point variance (Omega-hat(w) queried at every w) or one fixed matrix
/// for all w, e.g. a bootstrap variance evaluated at the point estimate.
enum class VarianceMode { PerPoint, Fixed };

/**
 * Everything the test inversion needs from an estimator: the transformed
 * gradient f-hat(w) = B2' phi-hat(w), its variance Omega-hat(w) and the sample
 * size. Instances are read-only after construction and may be shared across
 * threads as long as the supplied callables are.
 */
class WeightModel {
public:
    using Gradient = std::function<Vector(const Vector&)>;
    using Variance = std::function<Matrix(const Vector&)>;

    static WeightModel per_point(OrthoBasis basis, double n, Gradient f_hat, Variance omega_hat) {
        if (!omega_hat) throw ValidationError("WeightModel: per-point mode needs a variance function");
        WeightModel m(std::move(basis), n, std::move(f_hat));
        m.omega_hat_ = std::move(omega_hat);
        return m;
    }

    static WeightModel fixed(OrthoBasis basis, double n, Gradient f_hat, const Matrix& omega_star,
                             double max_condition = kDefaultConditionCap) {
        WeightModel m(std::move(basis), n, std::move(f_hat));
        if (omega_star.rows() != m.K() - 1) throw ValidationError("WeightModel: fixed variance has wrong dimension");
        m.fixed_ = std::make_shared<const SpdMatrix>(omega_star, max_condition);
        return m;
    }

    /// Same gradient and sample size with the variance frozen at omega_star.
    WeightModel with_fixed_variance(const Matrix& omega_star, double max_condition = kDefaultConditionCap) const {
        return fixed(basis_, n_, f_hat_, omega_star, max_condition);
    }

    Index K() const { return basis_.K(); }
    double n() const { return n_; }
    const OrthoBasis& basis() const { return basis_; }
    VarianceMode mode() const { return fixed_ ? VarianceMode::Fixed : VarianceMode::PerPoint; }

    Vector f_hat(const Vector& w) const {
        Vector f = f_hat_(w);
        if (f.size() != K() - 1) throw ValidationError("WeightModel: gradient has wrong dimension");
        return f;
    }

    /// Raw variance matrix at w (the fixed matrix in Fixed mode).
    Matrix omega_hat(const Vector& w) const { return fixed_ ? fixed_->matrix() : omega_hat_(w); }

    const SpdMatrix* fixed_omega() const { return fixed_.get(); }

private:
    WeightModel(OrthoBasis basis, double n, Gradient f_hat)
        : basis_(std::move(basis)), n_(n), f_hat_(std::move(f_hat)) {
        if (!(n_ > 0.0)) throw ValidationError("WeightModel: sample size must be positive");
        if (!f_hat_) throw ValidationError("WeightModel: missing gradient function");
    }

    OrthoBasis basis_;
    double n_;
    Gradient f_hat_;
    Variance omega_hat_;
    std::shared_ptr<const SpdMatrix> fixed_;
};

struct PointTest {
    Vector w;
    double T = 0.0;
    int d = 0;
    int k = 1;
    double critical = 0.0;
    bool member = false;
    bool degenerate = false;  ///< tied multipliers in the cone projection
    bool failed = false;      ///< numerical failure during a sweep; never a member
};

struct TestOptions {
    double max_condition = kDefaultConditionCap;
    ConeTolerances cone;
};

/// Degrees of freedom max{K - 1 - d, 1}.
inline int degrees_of_freedom(Index K, int d) { return std::max(static_cast<int>(K) - 1 - d, 1); }

/// Membership test of a single w, using critical values from `table`.
inline PointTest point_test(const WeightModel& model, const Vector& w, const ChiSquareTable& table,
                            const TestOptions& opt = {}) {
    const Index K = model.K();
    if (w.size() != K) throw ValidationError("point_test: w has wrong dimension");
    require_simplex(w, "point_test");

    const Vector f = model.f_hat(w);
    std::optional<SpdMatrix> local;
    const SpdMatrix* omega = model.fixed_omega();
    if (!omega) {
        try {
            local.emplace(model.omega_hat(w), opt.max_condition);
        } catch (const std::exception& e) {
            throw NumericalError("ill-conditioned variance at w = " + format_point(w) + ": " + e.what());
        }
        omega = &*local;
    }
    const ConeProjection proj = project_cone(f, w, *omega, model.basis(), opt.cone);

    PointTest out;
    out.w = w;
    out.T = model.n() * proj.objective;
    out.d = proj.d;
    out.k = degrees_of_freedom(K, proj.d);
    out.critical = table(out.k);
    out.member = out.T <= out.critical;
    out.degenerate = proj.degenerate;
    return out;
}

inline PointTest point_test(const WeightModel& model, const Vector& w, double alpha, const TestOptions& opt = {}) {
    return point_test(model, w, ChiSquareTable(alpha, static_cast<int>(model.K()) - 1), opt);
}

// ---------------------------------------------------------------------------
// Grids and confidence sets
// ---------------------------------------------------------------------------

inline constexpr std::size_t kDefaultGridCap = 5'000'000;

/// Number of lattice points C(N + K - 1, K - 1), saturating at SIZE_MAX.
inline std::size_t simplex_grid_size(Index K, int N) {
    long double c = 1.0L;
    for (Index i = 1; i < K; ++i) {
        c = c * static_cast<long double>(N + i) / static_cast<long double>(i);
        if (c > static_cast<long double>(std::numeric_limits<std::size_t>::max() / 2)) {
            return std::numeric_limits<std::size_t>::max();
        }
    }
    return static_cast<std::size_t>(c + 0.5L);
}

/// All points (m_1, ..., m_K) / N with nonnegative integers summing to N,
/// in lexicographic order of (m_1, ..., m_K).
inline std::vector<Vector> simplex_grid(Index K, int N, std::size_t cap = kDefaultGridCap) {
    if (K < 1) throw ValidationError("simplex_grid: K must be positive");
    if (N < 1) throw ValidationError("simplex_grid: resolution N must be >= 1");
    const std::size_t size = simplex_grid_size(K, N);
    if (size > cap) {
        throw ValidationError("simplex_grid: " + std::to_string(size) + " points exceed the cap of " +
                              std::to_string(cap) + "; use a coarser resolution");
    }
    std::vector<Vector> out;
    out.reserve(size);
    std::vector<int> m(static_cast<std::size_t>(K), 0);
    const double inv = 1.0 / static_cast<double>(N);
    std::function<void(Index, int)> rec = [&](Index pos, int remaining) {
        if (pos == K - 1) {
            m[static_cast<std::size_t>(pos)] = remaining;
            Vector w(K);
            for (Index j = 0; j < K; ++j) w[j] = m[static_cast<std::size_t>(j)] * inv;
            out.push_back(std::move(w));
            return;
        }
        for (int v = 0; v <= remaining; ++v) {
            m[static_cast<std::size_t>(pos)] = v;
            rec(pos + 1, remaining - v);
        }
    };
    rec(0, N);
    return out;
}

/// Lattice resolution used when none is given.
inline int default_resolution(Index K) {
    if (K <= 3) return 100;
    if (K <= 5) return 40;
    if (K <= 7) return 20;
    return 10;
}

struct ConfidenceSet {
    double alpha = 0.05;
    int resolution = 0;
    Index K = 0;
    std::vector<Vector> grid;
    std::vector<PointTest> records;
    std::vector<std::string> warnings;

    std::size_t member_count() const {
        std::size_t c = 0;
        for (const auto& r : records) c += r.member ? 1 : 0;
        return c;
    }
    bool empty() const { return member_count() == 0; }
};

struct SweepOptions {
    TestOptions test;
    bool strict = false;  ///< per-point failures abort instead of becoming warnings
    unsigned threads = 1;  ///< 0 uses all hardware threads
    std::size_t grid_cap = kDefaultGridCap;
};

/// Runs the point test over a supplied set of simplex points.
inline ConfidenceSet confidence_set_over(const WeightModel& model, double alpha, std::vector<Vector> grid,
                                         int resolution, const SweepOptions& opt = {}) {
    const ChiSquareTable table(alpha, static_cast<int>(model.K()) - 1);
    ConfidenceSet cs;
    cs.alpha = alpha;
    cs.resolution = resolution;
    cs.K = model.K();
    cs.grid = std::move(grid);
    cs.records.resize(cs.grid.size());
    std::vector<std::string> errors(cs.grid.size());

    parallel_for(cs.grid.size(), opt.threads, [&](std::size_t i) {
        try {
            cs.records[i] = point_test(model, cs.grid[i], table, opt.test);
        } catch (const std::exception& e) {
            PointTest bad;
            bad.w = cs.grid[i];
            bad.T = std::numeric_limits<double>::quiet_NaN();
            bad.critical = std::numeric_limits<double>::quiet_NaN();
            bad.failed = true;
            cs.records[i] = std::move(bad);
            errors[i] = e.what();
        }
    });

    for (std::size_t i = 0; i < errors.size(); ++i) {
        if (errors[i].empty()) continue;
        if (opt.strict) throw NumericalError(errors[i]);
        cs.warnings.push_back(std::move(errors[i]));
    }
    return cs;
}

/// Test inversion over the lattice of resolution N.
inline ConfidenceSet confidence_set(const WeightModel& model, double alpha, int N, const SweepOptions& opt = {}) {
    return confidence_set_over(model, alpha, simplex_grid(model.K(), N, opt.grid_cap), N, opt);
}

// ---------------------------------------------------------------------------
// Subvector inference
// ---------------------------------------------------------------------------

struct Interval {
    double lower = 0.0;
    double upper = 0.0;
    bool empty = true;

    double length() const { return empty ? 0.0 : upper - lower; }
    bool contains(double x, double tol = 0.0) const { return !empty && x >= lower - tol && x <= upper + tol; }
};

/// Range of coordinate j (0-based) over the member points.
inline Interval projection_interval(const ConfidenceSet& cs, Index j) {
    if (j < 0 || j >= cs.K) throw ValidationError("projection_interval: coordinate index out of range");
    Interval out;
    for (const auto& r : cs.records) {
        if (!r.member) continue;
        const double v = r.w[j];
        if (out.empty) {
            out = {v, v, false};
        } else {
            out.lower = std::min(out.lower, v);
            out.upper = std::max(out.upper, v);
        }
    }
    return out;
}

/**
 * Bonferroni interval for theta(w0): the union over members w of a (1 - kappa)
 * confidence set of theta-hat(w) -/+ z v-hat(w) / sqrt(n), with
 * z = z_{1 - (alpha - kappa)/2}.
 */
inline Interval bonferroni_interval(const ConfidenceSet& cs, const std::function<double(const Vector&)>& theta_hat,
                                    const std::function<double(const Vector&)>& v_hat, double n, double alpha,
                                    double kappa) {
    if (!(kappa > 0.0 && kappa < alpha && alpha < 1.0)) {
        throw ValidationError("bonferroni_interval: need 0 < kappa < alpha < 1");
    }
    if (std::abs(cs.alpha - kappa) > 1e-12) {
        throw ValidationError("bonferroni_interval: confidence set must be built at level 1 - kappa");
    }
    if (!(n > 0.0)) throw ValidationError("bonferroni_interval: n must be positive");
    const double z = normal_quantile(1.0 - 0.5 * (alpha - kappa));
    const double scale = z / std::sqrt(n);
    Interval out;
    for (const auto& r : cs.records) {
        if (!r.member) continue;
        const double th = theta_hat(r.w);
        const double v = v_hat(r.w);
        if (!(v > 0.0)) {
            throw NumericalError("bonferroni_interval: nonpositive standard deviation at w = " + format_point(r.w));
        }
        const double lo = th - scale * v;
        const double hi = th + scale * v;
        if (out.empty) {
            out = {lo, hi, false};
        } else {
            out.lower = std::min(out.lower, lo);
            out.upper = std::max(out.upper, hi);
        }
    }
    return out;
}

}  // namespace simplexci
