#pragma once

#include "simplexci/estimators.hpp"
#include "simplexci/inference.hpp"
#include "simplexci/io.hpp"
#include "simplexci/montecarlo.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <ostream>
#include <string>
#include <vector>

namespace simplexci::cli {

enum ExitCode : int { kOk = 0, kValidation = 1, kNumerical = 2 };

struct RunConfig {
    std::string command;
    std::string input;
    double alpha = 0.05;
    double kappa = 0.005;
    int grid = 0;  ///< 0 picks default_resolution(K) for infer/project/bonferroni, no sweep for simulate
    std::string variance = "plugin";
    int bootstrap_draws = 1000;
    std::uint64_t seed = 20240607;
    int post = 0;     ///< 1-based post-treatment period (bonferroni)
    int periods = 0;  ///< matching periods; 0 means post - 1 when --post is given, else all
    std::string out;
    std::string format = "json";
    bool strict = false;
    unsigned threads = 1;

    // simulate
    Index K = 3;
    int nj = 100;
    int T0 = 10;
    std::string spec = "interior";
    int reps = 1000;
    bool timing = false;

    void validate() const {
        if (!(alpha > 0.0 && alpha < 1.0)) throw ValidationError("--alpha must lie in (0, 1)");
        if (grid < 0) throw ValidationError("--grid must be >= 0");
        if (variance != "plugin" && variance != "bootstrap") {
            throw ValidationError("--variance must be plugin or bootstrap");
        }
        if (variance == "bootstrap" && bootstrap_draws < 100) throw ValidationError("--bootstrap-draws must be >= 100");
        if (command == "bonferroni") {
            if (!(kappa > 0.0 && kappa < alpha)) throw ValidationError("bonferroni needs 0 < kappa < alpha < 1");
            if (post < 1) throw ValidationError("bonferroni needs --post (a 1-based post-treatment period)");
        }
        if (periods < 0) throw ValidationError("--periods must be >= 0");
        const bool table_ok = command == "simulate";
        if (format != "json" && format != "csv" && !(table_ok && format == "table")) {
            throw ValidationError(table_ok ? "--format must be json, csv or table" : "--format must be json or csv");
        }
        if (command != "simulate" && input.empty()) throw ValidationError(command + " needs an input CSV");
    }
};

namespace detail {

/// Reads a key = value (INI/TOML) file and returns "--key=value" tokens for
/// keys outside any section or inside a section named after the subcommand.
inline std::vector<std::string> config_tokens(const std::string& path, const std::string& command) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open config file '" + path + "'");
    std::vector<CLI::ConfigItem> items;
    try {
        items = CLI::ConfigTOML().from_config(in);
    } catch (const CLI::ParseError& e) {
        throw ValidationError("config file '" + path + "': " + e.what());
    }
    std::vector<std::string> out;
    for (const auto& item : items) {
        if (item.name == "++" || item.name == "--") continue;  // section markers
        const bool scoped = item.parents.empty() || (item.parents.size() == 1 && item.parents[0] == command);
        if (!scoped) continue;
        std::string key = item.name;
        for (char& c : key)
            if (c == '_') c = '-';
        for (const auto& v : item.inputs) out.push_back("--" + key + "=" + v);
    }
    return out;
}

/// Pulls --config out of args and splices the file's options in front of the
/// remaining flags so that explicit flags (parsed later, last one wins) take precedence.
inline std::vector<std::string> expand_config(std::vector<std::string> args,
                                              const std::vector<std::string>& commands) {
    std::size_t sub = args.size();
    for (std::size_t i = 0; i < args.size(); ++i) {
        for (const auto& c : commands) {
            if (args[i] == c) {
                sub = i;
                break;
            }
        }
        if (sub != args.size()) break;
    }
    if (sub == args.size()) return args;
    std::string path;
    std::vector<std::string> rest;
    for (std::size_t i = sub + 1; i < args.size(); ++i) {
        if (args[i] == "--config") {
            if (i + 1 >= args.size()) throw ValidationError("--config needs a file path");
            path = args[++i];
        } else if (args[i].rfind("--config=", 0) == 0) {
            path = args[i].substr(9);
        } else {
            rest.push_back(args[i]);
        }
    }
    if (path.empty()) return args;
    std::vector<std::string> out(args.begin(), args.begin() + static_cast<std::ptrdiff_t>(sub) + 1);
    for (auto& t : config_tokens(path, args[sub])) out.push_back(std::move(t));
    for (auto& t : rest) out.push_back(std::move(t));
    return out;
}

inline void add_common(CLI::App* sc, RunConfig& c, bool data_input) {
    if (data_input) {
        sc->add_option("input", c.input, "long-format CSV with header unit,group,time,outcome")->required();
        sc->add_option("--grid", c.grid, "lattice resolution N (default depends on K)");
        sc->add_option("--variance", c.variance, "plugin or bootstrap")->check(CLI::IsMember({"plugin", "bootstrap"}));
        sc->add_option("--bootstrap-draws", c.bootstrap_draws, "bootstrap replications (>= 100)");
        sc->add_option("--periods", c.periods, "number of leading matching periods");
        sc->add_flag("--strict", c.strict, "abort on the first per-point numerical failure");
    }
    sc->add_option("--alpha", c.alpha, "significance level");
    sc->add_option("--seed", c.seed, "random seed");
    sc->add_option("--out", c.out, "output path (default stdout)");
    sc->add_option("--format", c.format, data_input ? "json or csv" : "json, csv or table");
    sc->add_option("--threads", c.threads, "worker threads (0 = all cores)");
    sc->add_option("--config", "key = value file; explicit flags win");  // consumed by expand_config
}

struct Fitted {
    PanelData panel;
    QuadraticComponents comp;
    InfluenceSet inf;
    WeightModel model;
    Vector w_hat;
};

inline int matching_periods(const RunConfig& c) {
    if (c.periods > 0) return c.periods;
    return c.post > 0 ? c.post - 1 : 0;
}

inline Fitted fit(const RunConfig& c) {
    PanelData panel(io::read_observations(c.input), matching_periods(c));
    if (c.post > panel.periods()) {
        throw ValidationError("--post " + std::to_string(c.post) + " exceeds the " + std::to_string(panel.periods()) +
                              " observed periods");
    }
    if (c.post > 0 && c.post <= panel.T()) {
        throw ValidationError("--post period " + std::to_string(c.post) + " lies inside the matching window");
    }
    QuadraticComponents comp = quadratic_components(panel);
    InfluenceSet inf = influence_set(panel, comp);
    const OrthoBasis basis = build_basis(panel.K());
    Vector w_hat = solve_simplex_qp(comp.H, comp.h);
    WeightModel model = c.variance == "bootstrap"
                            ? make_weight_model(comp, bootstrap_variance(panel, w_hat, c.bootstrap_draws, c.seed,
                                                                         c.threads),
                                                static_cast<double>(panel.n()), basis)
                            : make_weight_model(comp, inf, basis);
    return {std::move(panel), std::move(comp), std::move(inf), std::move(model), std::move(w_hat)};
}

inline ConfidenceSet sweep(const RunConfig& c, const Fitted& f, double level_alpha) {
    SweepOptions opt;
    opt.strict = c.strict;
    opt.threads = c.threads;
    const int N = c.grid > 0 ? c.grid : default_resolution(f.panel.K());
    return confidence_set(f.model, level_alpha, N, opt);
}

inline io::json header(const RunConfig& c, const Fitted& f) {
    io::json j{{"schema_version", io::kSchemaVersion},
               {"command", c.command},
               {"K", f.panel.K()},
               {"n", f.panel.n()},
               {"matching_periods", f.panel.T()},
               {"variance", c.variance},
               {"w_hat", io::to_json(f.w_hat)}};
    if (c.variance == "bootstrap") {
        j["bootstrap_draws"] = c.bootstrap_draws;
        j["seed"] = c.seed;
    }
    return j;
}

inline std::string dump(const io::json& j) { return j.dump(2) + "\n"; }

inline std::string run_infer(const RunConfig& c) {
    const Fitted f = fit(c);
    const ConfidenceSet cs = sweep(c, f, c.alpha);
    if (c.format == "csv") return io::confidence_set_csv(cs);
    io::json j = header(c, f);
    j["confidence_set"] = io::to_json(cs);
    return dump(j);
}

inline std::string run_project(const RunConfig& c) {
    const Fitted f = fit(c);
    const ConfidenceSet cs = sweep(c, f, c.alpha);
    if (c.format == "csv") return io::projection_csv(cs);
    io::json j = header(c, f);
    j["alpha"] = c.alpha;
    j["resolution"] = cs.resolution;
    j["member_count"] = cs.member_count();
    j["warnings"] = cs.warnings;
    j["intervals"] = io::projection_json(cs);
    return dump(j);
}

inline std::string run_bonferroni(const RunConfig& c) {
    const Fitted f = fit(c);
    const ConfidenceSet cs = sweep(c, f, c.kappa);
    const TreatmentFunctional tf = treatment_functional(f.panel, c.post);
    const Interval iv = bonferroni_interval(
        cs, [&](const Vector& w) { return tf.theta(w); }, [&](const Vector& w) { return tf.v(w); },
        static_cast<double>(f.panel.n()), c.alpha, c.kappa);
    const double theta_hat = tf.theta(f.w_hat);
    if (c.format == "csv") {
        return "lower,upper,empty,theta_hat,alpha,kappa,post,member_count\n" +
               (iv.empty ? std::string(",") : io::fmt_double(iv.lower) + "," + io::fmt_double(iv.upper)) + "," +
               (iv.empty ? "1" : "0") + "," + io::fmt_double(theta_hat) + "," + io::fmt_double(c.alpha) + "," +
               io::fmt_double(c.kappa) + "," + std::to_string(c.post) + "," + std::to_string(cs.member_count()) +
               "\n";
    }
    io::json j = header(c, f);
    j["alpha"] = c.alpha;
    j["kappa"] = c.kappa;
    j["post"] = c.post;
    j["theta_hat"] = theta_hat;
    j["interval"] = io::to_json(iv);
    j["weight_set"] = io::json{{"level", 1.0 - c.kappa},
                               {"resolution", cs.resolution},
                               {"grid_size", cs.grid.size()},
                               {"member_count", cs.member_count()},
                               {"warnings", cs.warnings},
                               {"intervals", io::projection_json(cs)}};
    return dump(j);
}

inline std::string run_simulate(const RunConfig& c) {
    McSpec spec;
    spec.K = c.K;
    spec.nj = c.nj;
    spec.T0 = c.T0;
    if (c.spec == "interior") {
        spec.design = Design::Interior;
    } else if (c.spec == "boundary") {
        spec.design = Design::Boundary;
    } else {
        throw ValidationError("--spec must be interior or boundary");
    }
    spec.reps = c.reps;
    spec.seed = c.seed;
    spec.alpha = c.alpha;
    spec.grid = c.grid;
    spec.threads = c.threads;
    const CoverageReport rep = coverage_experiment(spec);
    if (c.format == "csv") return io::coverage_csv(rep);
    if (c.format == "table") {
        std::string t = format_coverage_table({rep});
        if (c.timing) t += "elapsed_seconds " + io::fmt_double(rep.elapsed_seconds) + "\n";
        return t;
    }
    return dump(io::to_json(rep, c.timing));
}

}  // namespace detail

/// Parses arguments (without the program name) and runs one subcommand.
/// Results go to --out or `out`; diagnostics go to `err`.
inline int run(const std::vector<std::string>& raw_args, std::ostream& out, std::ostream& err) {
    RunConfig c;
    CLI::App app{"Confidence sets for simplex-constrained weights", "simplexci"};
    app.require_subcommand(1, 1);
    app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

    auto* infer = app.add_subcommand("infer", "confidence set for the weights over a simplex lattice");
    auto* project = app.add_subcommand("project", "projection intervals for each weight");
    auto* bonf = app.add_subcommand("bonferroni", "Bonferroni interval for the post-period treatment effect");
    auto* sim = app.add_subcommand("simulate", "Monte Carlo coverage study");
    for (auto* sc : {infer, project, bonf}) detail::add_common(sc, c, true);
    bonf->add_option("--kappa", c.kappa, "first-stage level for the weight set");
    bonf->add_option("--post", c.post, "1-based post-treatment period")->required();
    detail::add_common(sim, c, false);
    sim->add_option("--grid", c.grid, "lattice resolution for projection intervals (0 = none)");
    sim->add_option("--K", c.K, "number of control groups");
    sim->add_option("--nj", c.nj, "units per group");
    sim->add_option("--T0", c.T0, "matching periods");
    sim->add_option("--spec", c.spec, "interior or boundary")->check(CLI::IsMember({"interior", "boundary"}));
    sim->add_option("--reps", c.reps, "replications");
    sim->add_flag("--timing", c.timing, "report elapsed time (breaks byte-identical output)");

    try {
        std::vector<std::string> args =
            detail::expand_config(raw_args, {"infer", "project", "bonferroni", "simulate"});
        std::reverse(args.begin(), args.end());  // CLI11 consumes a reversed vector
        app.parse(args);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        return kValidation;
    } catch (const ValidationError& e) {
        err << "error: " << e.what() << "\n";
        return kValidation;
    }

    for (auto* sc : app.get_subcommands()) c.command = sc->get_name();

    try {
        c.validate();
        std::string text;
        if (c.command == "infer") {
            text = detail::run_infer(c);
        } else if (c.command == "project") {
            text = detail::run_project(c);
        } else if (c.command == "bonferroni") {
            text = detail::run_bonferroni(c);
        } else {
            text = detail::run_simulate(c);
        }
        if (c.out.empty()) {
            out << text;
        } else {
            std::ofstream f(c.out, std::ios::binary);
            if (!f) throw ValidationError("cannot open output file '" + c.out + "'");
            f << text;
            if (!f) throw NumericalError("failed writing '" + c.out + "'");
        }
    } catch (const ValidationError& e) {
        err << "error: " << e.what() << "\n";
        return kValidation;
    } catch (const NumericalError& e) {
        err << "numerical failure: " << e.what() << "\n";
        return kNumerical;
    } catch (const std::exception& e) {
        err << "numerical failure: " << e.what() << "\n";
        return kNumerical;
    }
    return kOk;
}

inline int run(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return run(args, std::cout, std::cerr);
}

}  // namespace simplexci::cli
