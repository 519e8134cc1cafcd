#pragma once

#include "simplexci/core.hpp"
#include "simplexci/inference.hpp"
#include "simplexci/rng.hpp"
#include "simplexci/simplex_geometry.hpp"

#include <cmath>
#include <limits>
#include <memory>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace simplexci {

// ---------------------------------------------------------------------------
// Panel data
// ---------------------------------------------------------------------------

struct Observation {
    std::string unit;
    int group = 0;
    int time = 0;
    double outcome = 0.0;
};

/**
 * Balanced unit-by-period outcomes with group labels 0..K. Group 0 is the
 * treated group. Periods are 1..periods(); the first T() of them are the
 * matching periods used to estimate the weights.
 */
class PanelData {
public:
    /// Builds from long-format rows. matching_periods = 0 uses every period.
    PanelData(const std::vector<Observation>& rows, int matching_periods = 0) {
        if (rows.empty()) throw ValidationError("panel: no observations");
        int max_time = 0;
        int max_group = 0;
        std::unordered_map<std::string, std::size_t> index;
        for (const auto& r : rows) {
            if (r.time < 1) throw ValidationError("panel: times must be integers >= 1 (unit " + r.unit + ")");
            if (r.group < 0) throw ValidationError("panel: group labels must be >= 0 (unit " + r.unit + ")");
            if (!std::isfinite(r.outcome)) throw ValidationError("panel: non-finite outcome for unit " + r.unit);
            max_time = std::max(max_time, r.time);
            max_group = std::max(max_group, r.group);
            auto [it, inserted] = index.emplace(r.unit, ids_.size());
            if (inserted) {
                ids_.push_back(r.unit);
                groups_.push_back(r.group);
            } else if (groups_[it->second] != r.group) {
                throw ValidationError("panel: unit " + r.unit + " appears in more than one group");
            }
        }
        const Index n = static_cast<Index>(ids_.size());
        outcomes_ = Matrix::Constant(n, max_time, std::numeric_limits<double>::quiet_NaN());
        for (const auto& r : rows) {
            const Index i = static_cast<Index>(index.at(r.unit));
            double& cell = outcomes_(i, r.time - 1);
            if (!std::isnan(cell)) {
                throw ValidationError("panel: duplicate observation for unit " + r.unit + " at time " +
                                      std::to_string(r.time));
            }
            cell = r.outcome;
        }
        for (Index i = 0; i < n; ++i) {
            for (Index t = 0; t < max_time; ++t) {
                if (std::isnan(outcomes_(i, t))) {
                    throw ValidationError("panel: unbalanced panel, unit " + ids_[static_cast<std::size_t>(i)] +
                                          " has no observation at time " + std::to_string(t + 1));
                }
            }
        }
        finish(max_group, matching_periods);
    }

    /// Builds from a dense n x periods outcome matrix.
    PanelData(std::vector<int> groups, Matrix outcomes, int matching_periods = 0)
        : groups_(std::move(groups)), outcomes_(std::move(outcomes)) {
        if (static_cast<Index>(groups_.size()) != outcomes_.rows() || outcomes_.cols() < 1) {
            throw ValidationError("panel: group labels and outcome rows disagree");
        }
        if (!outcomes_.allFinite()) throw ValidationError("panel: non-finite outcomes");
        int max_group = 0;
        for (int g : groups_) {
            if (g < 0) throw ValidationError("panel: group labels must be >= 0");
            max_group = std::max(max_group, g);
        }
        ids_.reserve(groups_.size());
        for (std::size_t i = 0; i < groups_.size(); ++i) ids_.push_back(std::to_string(i + 1));
        finish(max_group, matching_periods);
    }

    Index K() const { return K_; }
    Index n() const { return outcomes_.rows(); }
    int T() const { return T_; }
    int periods() const { return static_cast<int>(outcomes_.cols()); }
    const std::vector<int>& groups() const { return groups_; }
    const std::vector<std::string>& unit_ids() const { return ids_; }
    const std::vector<Index>& group_sizes() const { return sizes_; }
    /// Row indices of the units in group g.
    const std::vector<Index>& members(int g) const { return members_[static_cast<std::size_t>(g)]; }
    /// Row i holds unit i's outcomes over periods 1..periods().
    const Matrix& outcomes() const { return outcomes_; }

private:
    void finish(int max_group, int matching_periods) {
        if (max_group < 1) throw ValidationError("panel: need a treated group 0 and at least one control group");
        K_ = max_group;
        sizes_.assign(static_cast<std::size_t>(K_ + 1), 0);
        members_.assign(static_cast<std::size_t>(K_ + 1), {});
        for (std::size_t i = 0; i < groups_.size(); ++i) {
            ++sizes_[static_cast<std::size_t>(groups_[i])];
            members_[static_cast<std::size_t>(groups_[i])].push_back(static_cast<Index>(i));
        }
        for (Index g = 0; g <= K_; ++g) {
            if (sizes_[static_cast<std::size_t>(g)] < 2) {
                throw ValidationError("panel: group " + std::to_string(g) + " has fewer than 2 units");
            }
        }
        if (matching_periods < 0 || matching_periods > periods()) {
            throw ValidationError("panel: matching periods must lie in [1, " + std::to_string(periods()) + "]");
        }
        T_ = matching_periods == 0 ? periods() : matching_periods;
    }

    std::vector<std::string> ids_;
    std::vector<int> groups_;
    Matrix outcomes_;
    Index K_ = 0;
    int T_ = 0;
    std::vector<Index> sizes_;
    std::vector<std::vector<Index>> members_;
};

// ---------------------------------------------------------------------------
// Quadratic objective 1/2 w'Hw - w'h
// ---------------------------------------------------------------------------

struct QuadraticComponents {
    Matrix H;            ///< K x K
    Vector h;            ///< K
    Matrix group_means;  ///< (K+1) x periods, row j = group j (empty for external adapters)
    Vector group_probs;  ///< n_j / n, j = 0..K
    int T = 0;           ///< matching periods behind H and h
};

/// Group-by-period means over every period of the panel.
inline Matrix group_means(const PanelData& panel) {
    Matrix mu = Matrix::Zero(panel.K() + 1, panel.periods());
    const auto& g = panel.groups();
    for (Index i = 0; i < panel.n(); ++i) mu.row(g[static_cast<std::size_t>(i)]) += panel.outcomes().row(i);
    for (Index j = 0; j <= panel.K(); ++j) {
        const Index nj = panel.group_sizes()[static_cast<std::size_t>(j)];
        if (nj == 0) throw ValidationError("quadratic_components: empty group " + std::to_string(j));
        mu.row(j) /= static_cast<double>(nj);
    }
    return mu;
}

/// H and h from means over the first `T` periods of a (K+1) x periods mean matrix.
inline void fill_quadratic(const Matrix& mu, int T, Matrix& H, Vector& h) {
    const Index K = mu.rows() - 1;
    const Matrix ctrl = mu.block(1, 0, K, T);
    H = ctrl * ctrl.transpose() / static_cast<double>(T);
    h = ctrl * mu.row(0).head(T).transpose() / static_cast<double>(T);
}

inline QuadraticComponents quadratic_components(const PanelData& panel) {
    QuadraticComponents out;
    out.group_means = group_means(panel);
    out.T = panel.T();
    fill_quadratic(out.group_means, out.T, out.H, out.h);
    out.group_probs.resize(panel.K() + 1);
    for (Index j = 0; j <= panel.K(); ++j) {
        out.group_probs[j] = static_cast<double>(panel.group_sizes()[static_cast<std::size_t>(j)]) /
                             static_cast<double>(panel.n());
    }
    return out;
}

/// Components for an externally estimated quadratic objective.
inline QuadraticComponents quadratic_components(Matrix H, Vector h) {
    if (H.rows() != H.cols() || H.rows() != h.size()) throw ValidationError("quadratic_components: dimension mismatch");
    QuadraticComponents out;
    out.H = std::move(H);
    out.h = std::move(h);
    return out;
}

// ---------------------------------------------------------------------------
// Influence functions and sandwich variance
// ---------------------------------------------------------------------------

/**
 * Per-unit influence functions Psi_{i,H} (K x K) and psi_{i,h} (K), so that
 * psi_i(w) = Psi_{i,H} w - psi_{i,h} and V-hat(w) = (1/n) sum psi_i(w) psi_i(w)'.
 *
 * The second-moment tensor of [Psi_{i,H} | -psi_{i,h}] is cached at
 * construction, which makes V-hat(w) a fixed-cost quadratic form in (w, 1).
 */
class InfluenceSet {
public:
    /// psi_H: n rows, each a row-major flattening of Psi_{i,H}; psi_h: n x K.
    InfluenceSet(Matrix psi_H, Matrix psi_h) : psi_H_(std::move(psi_H)), psi_h_(std::move(psi_h)) {
        const Index K = psi_h_.cols();
        if (K < 1 || psi_H_.rows() != psi_h_.rows() || psi_H_.cols() != K * K || psi_h_.rows() < 1) {
            throw ValidationError("InfluenceSet: inconsistent dimensions");
        }
        if (!psi_H_.allFinite() || !psi_h_.allFinite()) throw ValidationError("InfluenceSet: non-finite entries");
        // Column a*K + r of z holds entry (r, a) of Z_i = [Psi_{i,H} | -psi_{i,h}].
        Matrix z(n(), K * (K + 1));
        for (Index a = 0; a < K; ++a)
            for (Index r = 0; r < K; ++r) z.col(a * K + r) = psi_H_.col(r * K + a);
        for (Index r = 0; r < K; ++r) z.col(K * K + r) = -psi_h_.col(r);
        moments_ = z.transpose() * z / static_cast<double>(n());
    }

    /// Accepts externally computed influence functions, optionally re-centering them.
    static InfluenceSet from_matrices(const std::vector<Matrix>& Psi_H, const Matrix& psi_h, bool center = false) {
        const Index n = static_cast<Index>(Psi_H.size());
        const Index K = psi_h.cols();
        if (n != psi_h.rows()) throw ValidationError("InfluenceSet: Psi_H and psi_h disagree on n");
        Matrix flat(n, K * K);
        for (Index i = 0; i < n; ++i) {
            const Matrix& p = Psi_H[static_cast<std::size_t>(i)];
            if (p.rows() != K || p.cols() != K) throw ValidationError("InfluenceSet: Psi_H entry has wrong shape");
            for (Index r = 0; r < K; ++r)
                for (Index c = 0; c < K; ++c) flat(i, r * K + c) = p(r, c);
        }
        Matrix ph = psi_h;
        if (center) {
            flat.rowwise() -= flat.colwise().mean();
            ph.rowwise() -= ph.colwise().mean();
        }
        return InfluenceSet(std::move(flat), std::move(ph));
    }

    Index n() const { return psi_h_.rows(); }
    Index K() const { return psi_h_.cols(); }

    Matrix Psi_H(Index i) const {
        Matrix m(K(), K());
        for (Index r = 0; r < K(); ++r)
            for (Index c = 0; c < K(); ++c) m(r, c) = psi_H_(i, r * K() + c);
        return m;
    }
    Vector psi_h(Index i) const { return psi_h_.row(i).transpose(); }

    /// psi_i(w) = Psi_{i,H} w - psi_{i,h}
    Vector psi(Index i, const Vector& w) const { return Psi_H(i) * w - psi_h(i); }

    /// Sample means of the flattened Psi_{i,H} (K*K) and psi_{i,h} (K).
    Vector mean_Psi_H() const { return psi_H_.colwise().mean().transpose(); }
    Vector mean_psi_h() const { return psi_h_.colwise().mean().transpose(); }

    const Matrix& moments() const { return moments_; }

private:
    Matrix psi_H_;
    Matrix psi_h_;
    Matrix moments_;
};

/// Influence functions of the group-level synthetic control objective,
/// with plug-in group shares n_j / n and group means.
inline InfluenceSet influence_set(const PanelData& panel, const QuadraticComponents& comp) {
    const Index K = panel.K();
    const Index n = panel.n();
    const int T = comp.T;
    if (comp.group_means.rows() != K + 1 || T < 1) {
        throw ValidationError("influence_set: components do not match the panel");
    }
    for (Index j = 0; j <= K; ++j) {
        if (!(comp.group_probs[j] > 0.0)) {
            throw ValidationError("influence_set: group " + std::to_string(j) + " has zero estimated probability");
        }
    }
    const Matrix& mu = comp.group_means;
    const auto& groups = panel.groups();
    Matrix flat = Matrix::Zero(n, K * K);
    Matrix ph = Matrix::Zero(n, K);
    // psi_{ij,t} is nonzero only for j = G_i, where it equals (Y_{i,t} - mu_{j,t}) / p_j.
    Matrix psi = Matrix::Zero(K + 1, T);
    for (Index i = 0; i < n; ++i) {
        const int g = groups[static_cast<std::size_t>(i)];
        psi.setZero();
        psi.row(g) = (panel.outcomes().row(i).head(T) - mu.row(g).head(T)) / comp.group_probs[g];
        for (Index j = 1; j <= K; ++j) {
            for (Index k = 1; k <= K; ++k) {
                double s = 0.0;
                for (int t = 0; t < T; ++t) s += psi(j, t) * mu(k, t) + mu(j, t) * psi(k, t);
                flat(i, (j - 1) * K + (k - 1)) = s / T;
            }
        }
        for (Index k = 1; k <= K; ++k) {
            double s = 0.0;
            for (int t = 0; t < T; ++t) s += psi(0, t) * mu(k, t) + mu(0, t) * psi(k, t);
            ph(i, k - 1) = s / T;
        }
    }
    return InfluenceSet(std::move(flat), std::move(ph));
}

namespace detail {
// sum_{a,b} u_a u_b S_{ab} with u = (w, 1) and S_{ab} the K x K blocks of the moment tensor.
inline Matrix moment_quadratic(const Matrix& S, Index K, const Vector& w) {
    Vector u(K + 1);
    u.head(K) = w;
    u[K] = 1.0;
    Matrix v = Matrix::Zero(K, K);
    for (Index a = 0; a <= K; ++a) {
        for (Index b = 0; b <= K; ++b) {
            const double c = u[a] * u[b];
            if (c != 0.0) v.noalias() += c * S.block(a * K, b * K, K, K);
        }
    }
    return 0.5 * (v + v.transpose());
}
}  // namespace detail

/// V-hat(w) = (1/n) sum_i psi_i(w) psi_i(w)', a K x K PSD matrix.
inline Matrix variance_at(const InfluenceSet& inf, const Vector& w) {
    if (w.size() != inf.K()) throw ValidationError("variance_at: w has wrong dimension");
    return detail::moment_quadratic(inf.moments(), inf.K(), w);
}

// ---------------------------------------------------------------------------
// Weight models
// ---------------------------------------------------------------------------

namespace detail {
inline WeightModel::Gradient make_gradient(const QuadraticComponents& comp, const OrthoBasis& basis) {
    if (comp.H.rows() != basis.K()) throw ValidationError("make_weight_model: H does not match the basis");
    return [H = comp.H, h = comp.h, b2 = basis.b2()](const Vector& w) -> Vector {
        return b2.transpose() * (H * w - h);
    };
}
}  // namespace detail

/// Per-point variance: f-hat(w) = B2'(Hw - h), Omega-hat(w) = B2' V-hat(w) B2.
inline WeightModel make_weight_model(const QuadraticComponents& comp, const InfluenceSet& inf,
                                     const OrthoBasis& basis) {
    if (inf.K() != basis.K()) throw ValidationError("make_weight_model: influence set does not match the basis");
    auto omega = [S = inf.moments(), K = inf.K(), b2 = basis.b2()](const Vector& w) -> Matrix {
        const Matrix om = b2.transpose() * detail::moment_quadratic(S, K, w) * b2;
        return 0.5 * (om + om.transpose());
    };
    return WeightModel::per_point(basis, static_cast<double>(inf.n()), detail::make_gradient(comp, basis),
                                  std::move(omega));
}

/// Fixed variance: Omega* = B2' V* B2 for a K x K variance V* (e.g. a bootstrap estimate at w-hat).
inline WeightModel make_weight_model(const QuadraticComponents& comp, const Matrix& v_star, double n,
                                     const OrthoBasis& basis) {
    if (v_star.rows() != basis.K() || v_star.cols() != basis.K()) {
        throw ValidationError("make_weight_model: fixed variance does not match the basis");
    }
    const Matrix om = basis.b2().transpose() * v_star * basis.b2();
    return WeightModel::fixed(basis, n, detail::make_gradient(comp, basis), 0.5 * (om + om.transpose()));
}

inline WeightModel make_weight_model(const QuadraticComponents& comp, const InfluenceSet& inf) {
    return make_weight_model(comp, inf, build_basis(inf.K()));
}

// ---------------------------------------------------------------------------
// Bootstrap variance
// ---------------------------------------------------------------------------

/**
 * E*[n (phi*(w) - phi(w))(phi*(w) - phi(w))'] at w = w_hat, with units
 * resampled with replacement within each group so group sizes stay fixed.
 * Draw b uses the counter stream (seed, b).
 */
inline Matrix bootstrap_variance(const PanelData& panel, const Vector& w_hat, int draws, std::uint64_t seed,
                                 unsigned threads = 1) {
    if (draws < 100) throw ValidationError("bootstrap_variance: need at least 100 draws");
    const Index K = panel.K();
    if (w_hat.size() != K) throw ValidationError("bootstrap_variance: w_hat has wrong dimension");
    const int T = panel.T();
    const QuadraticComponents base = quadratic_components(panel);
    const Vector phi = base.H * w_hat - base.h;
    const Matrix Y = panel.outcomes().leftCols(T);

    std::vector<Vector> diffs(static_cast<std::size_t>(draws));
    parallel_for(static_cast<std::size_t>(draws), threads, [&](std::size_t b) {
        CounterRng rng(seed, b);
        Matrix mu(K + 1, T);
        for (Index g = 0; g <= K; ++g) {
            const auto& mem = panel.members(static_cast<int>(g));
            const auto ng = static_cast<std::uint64_t>(mem.size());
            Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(T);
            for (std::uint64_t r = 0; r < ng; ++r) acc += Y.row(mem[rng.below(ng)]);
            mu.row(g) = acc / static_cast<double>(ng);
        }
        Matrix H;
        Vector h;
        fill_quadratic(mu, T, H, h);
        diffs[b] = H * w_hat - h - phi;
    });

    Matrix v = Matrix::Zero(K, K);
    for (const auto& d : diffs) v.noalias() += d * d.transpose();
    v *= static_cast<double>(panel.n()) / static_cast<double>(draws);
    return 0.5 * (v + v.transpose());
}

// ---------------------------------------------------------------------------
// Treatment effect functional
// ---------------------------------------------------------------------------

/**
 * theta(w) = mu_{0,post} - mu_{ctrl,post}' w with influence
 * psi_{i,theta}(w) = psi_{i0,post} - sum_k w_k psi_{ik,post}. In the
 * q'w - m parameterization this is q = -mu_ctrl and m = -mu_treat.
 */
class TreatmentFunctional {
public:
    TreatmentFunctional(double mu_treat, Vector mu_ctrl, Matrix moments)
        : mu_treat_(mu_treat), mu_ctrl_(std::move(mu_ctrl)), moments_(std::move(moments)) {}

    Index K() const { return mu_ctrl_.size(); }
    double mu_treat() const { return mu_treat_; }
    const Vector& mu_ctrl() const { return mu_ctrl_; }

    double theta(const Vector& w) const { return mu_treat_ - mu_ctrl_.dot(w); }

    /// (1/n) sum_i psi_{i,theta}(w)^2
    double v2(const Vector& w) const {
        Vector c(K() + 1);
        c[0] = 1.0;
        c.tail(K()) = -w;
        return std::max(0.0, c.dot(moments_ * c));
    }
    double v(const Vector& w) const { return std::sqrt(v2(w)); }

    /// Second moments of (psi_{i0,post}, ..., psi_{iK,post}).
    const Matrix& moments() const { return moments_; }

private:
    double mu_treat_;
    Vector mu_ctrl_;
    Matrix moments_;
};

/// post_period is 1-based.
inline TreatmentFunctional treatment_functional(const PanelData& panel, int post_period) {
    if (post_period < 1 || post_period > panel.periods()) {
        throw ValidationError("treatment_functional: post period " + std::to_string(post_period) +
                              " is not observed");
    }
    const Index K = panel.K();
    const Index n = panel.n();
    const Index t = post_period - 1;
    const Matrix mu = group_means(panel);
    Matrix psi = Matrix::Zero(n, K + 1);
    for (Index i = 0; i < n; ++i) {
        const int g = panel.groups()[static_cast<std::size_t>(i)];
        const double p = static_cast<double>(panel.group_sizes()[static_cast<std::size_t>(g)]) / static_cast<double>(n);
        psi(i, g) = (panel.outcomes()(i, t) - mu(g, t)) / p;
    }
    Matrix moments = psi.transpose() * psi / static_cast<double>(n);
    return TreatmentFunctional(mu(0, t), mu.col(t).tail(K), std::move(moments));
}

}  // namespace simplexci
