#pragma once

#include "simplexci/estimators.hpp"
#include "simplexci/inference.hpp"
#include "simplexci/rng.hpp"

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

namespace simplexci {

enum class Design { Interior, Boundary };

inline const char* design_name(Design d) { return d == Design::Interior ? "interior" : "boundary"; }

/// Synthetic-control coverage study: K control groups plus a treated group,
/// n_j units each, T0 matching periods.
struct McSpec {
    Index K = 3;
    int nj = 100;
    int T0 = 10;
    Design design = Design::Interior;
    int reps = 1000;
    std::uint64_t seed = 20240607;
    double alpha = 0.05;
    int grid = 0;          ///< lattice resolution for projection intervals; 0 skips the sweep
    unsigned threads = 1;  ///< 0 uses all hardware threads

    void validate() const {
        if (K < 2) throw ValidationError("simulate: K must be at least 2");
        if (nj < 2) throw ValidationError("simulate: n_j must be at least 2");
        if (T0 < 1) throw ValidationError("simulate: T0 must be at least 1");
        if (reps < 1) throw ValidationError("simulate: reps must be at least 1");
        if (!(alpha > 0.0 && alpha < 1.0)) throw ValidationError("simulate: alpha must lie in (0, 1)");
        if (grid < 0) throw ValidationError("simulate: grid resolution must be >= 0");
        if (design == Design::Boundary && K < 2) throw ValidationError("simulate: boundary design needs K >= 2");
    }
};

/// Interior: (0.2, 0.8/(K-1), ..., 0.8/(K-1)). Boundary: (0.5, 0.5, 0, ..., 0).
inline Vector true_weight(const McSpec& spec) {
    Vector w0 = Vector::Zero(spec.K);
    if (spec.design == Design::Interior) {
        w0[0] = 0.2;
        for (Index j = 1; j < spec.K; ++j) w0[j] = 0.8 / static_cast<double>(spec.K - 1);
    } else {
        w0[0] = 0.5;
        w0[1] = 0.5;
    }
    return w0;
}

inline constexpr std::uint64_t kEtaStream = 0x65746121;
inline constexpr std::uint64_t kNoiseStream = 0x6e6f6973;

/// Control means mu_{j,t} = 0.5 + 0.5 (-1)^{j-1} t / T0 + 0.5 eta_{j,t}, rows j = 1..K.
inline Matrix control_means(const McSpec& spec, std::uint64_t eta_seed) {
    CounterRng rng(eta_seed, kEtaStream);
    Matrix mu(spec.K, spec.T0);
    for (Index j = 0; j < spec.K; ++j) {
        const double sign = (j % 2 == 0) ? 1.0 : -1.0;  // (-1)^{j-1} for 1-based j
        for (int t = 0; t < spec.T0; ++t) {
            mu(j, t) = 0.5 + 0.5 * sign * (t + 1) / static_cast<double>(spec.T0) + 0.5 * rng.normal();
        }
    }
    return mu;
}

/// Seed of replication `rep` under base seed `seed`.
inline std::uint64_t replication_seed(std::uint64_t seed, int rep) {
    return splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(rep) + 1));
}

/// Population means with the treated row first: row 0 is w0' mu_t, rows 1..K the controls.
inline Matrix population_means(const McSpec& spec, std::uint64_t eta_seed, const Vector& w0) {
    if (w0.size() != spec.K) throw ValidationError("population_means: w0 has wrong dimension");
    const Matrix mu = control_means(spec, eta_seed);
    Matrix out(spec.K + 1, spec.T0);
    out.row(0) = w0.transpose() * mu;
    out.bottomRows(spec.K) = mu;
    return out;
}

/**
 * One simulated panel. The control means depend only on eta_seed and stay
 * fixed across replications; the unit noise comes from rep_seed.
 */
inline PanelData generate_panel(const McSpec& spec, std::uint64_t eta_seed, std::uint64_t rep_seed,
                                const Vector& w0) {
    spec.validate();
    const Matrix mean = population_means(spec, eta_seed, w0);
    const Index n = (spec.K + 1) * spec.nj;
    std::vector<int> groups(static_cast<std::size_t>(n));
    Matrix y(n, spec.T0);
    CounterRng rng(rep_seed, kNoiseStream);
    Index row = 0;
    for (Index g = 0; g <= spec.K; ++g) {
        for (int i = 0; i < spec.nj; ++i, ++row) {
            groups[static_cast<std::size_t>(row)] = static_cast<int>(g);
            for (int t = 0; t < spec.T0; ++t) y(row, t) = mean(g, t) + rng.normal();
        }
    }
    return PanelData(std::move(groups), std::move(y), spec.T0);
}

inline PanelData generate_panel(const McSpec& spec, std::uint64_t eta_seed, std::uint64_t rep_seed) {
    return generate_panel(spec, eta_seed, rep_seed, true_weight(spec));
}

struct CoverageReport {
    McSpec spec;
    Vector w0;
    int completed = 0;  ///< replications without numerical failure
    int failures = 0;
    double coverage = 0.0;
    int resolution = 0;
    std::vector<double> projection_coverage;  ///< per coordinate; empty sets count as misses
    std::vector<double> mean_length;          ///< per coordinate, over non-empty sets only
    double empty_rate = 0.0;
    double elapsed_seconds = 0.0;
};

namespace detail {
struct ReplicationResult {
    bool ok = false;
    bool covered = false;
    bool empty = false;
    std::vector<char> proj_covered;
    std::vector<double> length;
};
}  // namespace detail

/// Coverage of w0 by the confidence set across replications, plus projection
/// intervals when spec.grid > 0.
inline CoverageReport coverage_experiment(const McSpec& spec) {
    spec.validate();
    const auto start = std::chrono::steady_clock::now();
    const Vector w0 = true_weight(spec);
    const OrthoBasis basis = build_basis(spec.K);
    const ChiSquareTable table(spec.alpha, static_cast<int>(spec.K) - 1);
    const std::vector<Vector> grid = spec.grid > 0 ? simplex_grid(spec.K, spec.grid) : std::vector<Vector>{};

    std::vector<detail::ReplicationResult> results(static_cast<std::size_t>(spec.reps));
    parallel_for(results.size(), spec.threads, [&](std::size_t r) {
        detail::ReplicationResult& res = results[r];
        try {
            const PanelData panel = generate_panel(spec, spec.seed, replication_seed(spec.seed, static_cast<int>(r)));
            const QuadraticComponents comp = quadratic_components(panel);
            const InfluenceSet inf = influence_set(panel, comp);
            const WeightModel model = make_weight_model(comp, inf, basis);
            res.covered = point_test(model, w0, table).member;
            if (!grid.empty()) {
                SweepOptions sweep;
                sweep.threads = 1;
                const ConfidenceSet cs = confidence_set_over(model, spec.alpha, grid, spec.grid, sweep);
                res.empty = cs.empty();
                for (Index j = 0; j < spec.K; ++j) {
                    const Interval iv = projection_interval(cs, j);
                    res.proj_covered.push_back(iv.contains(w0[j], 1e-9) ? 1 : 0);
                    res.length.push_back(iv.length());
                }
            }
            res.ok = true;
        } catch (const std::exception&) {
            res.ok = false;
        }
    });

    CoverageReport rep;
    rep.spec = spec;
    rep.w0 = w0;
    rep.resolution = spec.grid;
    int covered = 0;
    int empties = 0;
    std::vector<int> proj(static_cast<std::size_t>(spec.K), 0);
    std::vector<double> len(static_cast<std::size_t>(spec.K), 0.0);
    for (const auto& r : results) {
        if (!r.ok) {
            ++rep.failures;
            continue;
        }
        ++rep.completed;
        covered += r.covered ? 1 : 0;
        if (spec.grid > 0) {
            if (r.empty) {
                ++empties;
                continue;
            }
            for (std::size_t j = 0; j < proj.size(); ++j) {
                proj[j] += r.proj_covered[j];
                len[j] += r.length[j];
            }
        }
    }
    if (rep.completed > 0) {
        rep.coverage = static_cast<double>(covered) / rep.completed;
        if (spec.grid > 0) {
            rep.empty_rate = static_cast<double>(empties) / rep.completed;
            const int nonempty = rep.completed - empties;
            for (std::size_t j = 0; j < proj.size(); ++j) {
                rep.projection_coverage.push_back(static_cast<double>(proj[j]) / rep.completed);
                rep.mean_length.push_back(nonempty > 0 ? len[j] / nonempty : 0.0);
            }
        }
    }
    rep.elapsed_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return rep;
}

/// Plain-text table in the layout of a coverage study: one row per report.
inline std::string format_coverage_table(const std::vector<CoverageReport>& reports) {
    std::string out = "design     K   n_j   reps  coverage";
    bool any_proj = false;
    for (const auto& r : reports) any_proj = any_proj || !r.projection_coverage.empty();
    if (any_proj) out += "  proj_cov_w1  mean_len_w1  empty_rate     N";
    out += "\n";
    char buf[256];
    for (const auto& r : reports) {
        std::snprintf(buf, sizeof buf, "%-9s %2ld %5d %6d  %8.3f", design_name(r.spec.design),
                      static_cast<long>(r.spec.K), r.spec.nj, r.completed, r.coverage);
        out += buf;
        if (!r.projection_coverage.empty()) {
            std::snprintf(buf, sizeof buf, "  %11.3f  %11.3f  %10.3f  %4d", r.projection_coverage[0], r.mean_length[0],
                          r.empty_rate, r.resolution);
            out += buf;
        }
        out += "\n";
    }
    return out;
}

}  // namespace simplexci
