#pragma once

#include "simplexci/estimators.hpp"
#include "simplexci/inference.hpp"
#include "simplexci/montecarlo.hpp"

#include <json.hpp>

#include <charconv>
#include <cstdio>
#include <fstream>
#include <istream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace simplexci::io {

using json = nlohmann::json;

inline constexpr int kSchemaVersion = 1;

// ---------------------------------------------------------------------------
// Input
// ---------------------------------------------------------------------------

namespace detail {

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
    return s;
}

inline std::vector<std::string_view> split_commas(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = line.find(',', start);
        out.push_back(trim(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

inline std::string where(std::size_t line_no, std::string_view column) {
    return "line " + std::to_string(line_no) + ", column '" + std::string(column) + "'";
}

inline int parse_int(std::string_view s, std::size_t line_no, std::string_view column) {
    int v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) {
        throw ValidationError(where(line_no, column) + ": expected an integer, got '" + std::string(s) + "'");
    }
    return v;
}

inline double parse_double(std::string_view s, std::size_t line_no, std::string_view column) {
    const std::string tmp(s);
    char* end = nullptr;
    const double v = std::strtod(tmp.c_str(), &end);
    if (tmp.empty() || end != tmp.c_str() + tmp.size() || !std::isfinite(v)) {
        throw ValidationError(where(line_no, column) + ": expected a finite number, got '" + tmp + "'");
    }
    return v;
}

}  // namespace detail

/// Long-format rows from CSV text with header unit,group,time,outcome (any column order).
inline std::vector<Observation> read_observations(std::istream& in) {
    std::string line;
    std::size_t line_no = 0;
    std::vector<Observation> rows;
    int col[4] = {-1, -1, -1, -1};
    const char* names[4] = {"unit", "group", "time", "outcome"};
    std::size_t ncols = 0;
    bool have_header = false;
    while (std::getline(in, line)) {
        ++line_no;
        std::string_view view(line);
        if (line_no == 1 && view.substr(0, 3) == "\xEF\xBB\xBF") view.remove_prefix(3);
        if (detail::trim(view).empty()) continue;
        const auto fields = detail::split_commas(view);
        if (!have_header) {
            for (std::size_t c = 0; c < fields.size(); ++c) {
                for (int k = 0; k < 4; ++k) {
                    if (fields[c] == names[k]) {
                        if (col[k] >= 0) throw ValidationError("header: duplicate column '" + std::string(names[k]) + "'");
                        col[k] = static_cast<int>(c);
                    }
                }
            }
            for (int k = 0; k < 4; ++k) {
                if (col[k] < 0) {
                    throw ValidationError("header: missing column '" + std::string(names[k]) +
                                          "' (expected unit,group,time,outcome)");
                }
            }
            ncols = fields.size();
            have_header = true;
            continue;
        }
        if (fields.size() != ncols) {
            throw ValidationError("line " + std::to_string(line_no) + ": expected " + std::to_string(ncols) +
                                  " fields, got " + std::to_string(fields.size()));
        }
        Observation obs;
        obs.unit = std::string(fields[static_cast<std::size_t>(col[0])]);
        if (obs.unit.empty()) throw ValidationError(detail::where(line_no, "unit") + ": empty unit id");
        obs.group = detail::parse_int(fields[static_cast<std::size_t>(col[1])], line_no, "group");
        obs.time = detail::parse_int(fields[static_cast<std::size_t>(col[2])], line_no, "time");
        obs.outcome = detail::parse_double(fields[static_cast<std::size_t>(col[3])], line_no, "outcome");
        if (obs.group < 0) throw ValidationError(detail::where(line_no, "group") + ": group must be >= 0");
        if (obs.time < 1) throw ValidationError(detail::where(line_no, "time") + ": time must be >= 1");
        rows.push_back(std::move(obs));
    }
    if (!have_header) throw ValidationError("input is empty: header unit,group,time,outcome required");
    if (rows.empty()) throw ValidationError("input has a header but no observations");
    return rows;
}

inline std::vector<Observation> read_observations(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open input file '" + path + "'");
    return read_observations(in);
}

// ---------------------------------------------------------------------------
// Output
// ---------------------------------------------------------------------------

/// %.17g, which round-trips every double.
inline std::string fmt_double(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

/// Long-format CSV of a panel (unit,group,time,outcome), readable by read_observations.
inline std::string panel_csv(const PanelData& panel) {
    std::string out = "unit,group,time,outcome\n";
    for (Index i = 0; i < panel.n(); ++i) {
        const std::string head = panel.unit_ids()[static_cast<std::size_t>(i)] + "," +
                                 std::to_string(panel.groups()[static_cast<std::size_t>(i)]) + ",";
        for (int t = 0; t < panel.periods(); ++t) {
            out += head + std::to_string(t + 1) + "," + fmt_double(panel.outcomes()(i, t)) + "\n";
        }
    }
    return out;
}

inline json to_json(const Vector& v) {
    json a = json::array();
    for (Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
    return a;
}

inline json to_json(const Interval& iv) {
    if (iv.empty) return json{{"empty", true}, {"lower", nullptr}, {"upper", nullptr}};
    return json{{"empty", false}, {"lower", iv.lower}, {"upper", iv.upper}};
}

inline json to_json(const PointTest& p) {
    json j{{"w", to_json(p.w)}, {"T", p.T}, {"d", p.d}, {"k", p.k}, {"critical", p.critical}, {"member", p.member}};
    if (p.failed) j["failed"] = true;
    if (p.degenerate) j["degenerate"] = true;
    return j;
}

inline json to_json(const ConfidenceSet& cs) {
    json points = json::array();
    for (const auto& r : cs.records) points.push_back(to_json(r));
    return json{{"alpha", cs.alpha},
                {"level", 1.0 - cs.alpha},
                {"K", cs.K},
                {"resolution", cs.resolution},
                {"grid_size", cs.grid.size()},
                {"member_count", cs.member_count()},
                {"warnings", cs.warnings},
                {"points", std::move(points)}};
}

/// Columns w_1..w_K,T,d,k,critical,member (member as 1/0).
inline std::string confidence_set_csv(const ConfidenceSet& cs) {
    std::string out;
    for (Index j = 0; j < cs.K; ++j) out += "w_" + std::to_string(j + 1) + ",";
    out += "T,d,k,critical,member\n";
    for (const auto& r : cs.records) {
        for (Index j = 0; j < cs.K; ++j) out += fmt_double(r.w[j]) + ",";
        out += fmt_double(r.T) + "," + std::to_string(r.d) + "," + std::to_string(r.k) + "," + fmt_double(r.critical) +
               "," + (r.member ? "1" : "0") + "\n";
    }
    return out;
}

inline json projection_json(const ConfidenceSet& cs) {
    json a = json::array();
    for (Index j = 0; j < cs.K; ++j) {
        json e = to_json(projection_interval(cs, j));
        e["coordinate"] = j + 1;
        a.push_back(std::move(e));
    }
    return a;
}

/// Columns coordinate,lower,upper,empty.
inline std::string projection_csv(const ConfidenceSet& cs) {
    std::string out = "coordinate,lower,upper,empty\n";
    for (Index j = 0; j < cs.K; ++j) {
        const Interval iv = projection_interval(cs, j);
        out += std::to_string(j + 1) + "," + (iv.empty ? "" : fmt_double(iv.lower)) + "," +
               (iv.empty ? "" : fmt_double(iv.upper)) + "," + (iv.empty ? "1" : "0") + "\n";
    }
    return out;
}

inline json to_json(const McSpec& s) {
    return json{{"K", s.K},         {"nj", s.nj},       {"T0", s.T0},   {"design", design_name(s.design)},
                {"reps", s.reps},   {"seed", s.seed},   {"alpha", s.alpha}, {"grid", s.grid}};
}

inline json to_json(const CoverageReport& r, bool include_timing = false) {
    json j{{"schema_version", kSchemaVersion},
           {"command", "simulate"},
           {"spec", to_json(r.spec)},
           {"w0", to_json(r.w0)},
           {"completed", r.completed},
           {"failures", r.failures},
           {"coverage", r.coverage},
           {"resolution", r.resolution},
           {"projection_coverage", r.projection_coverage},
           {"mean_length", r.mean_length},
           {"empty_rate", r.empty_rate}};
    if (include_timing) j["elapsed_seconds"] = r.elapsed_seconds;
    return j;
}

/// One row per coordinate (a single row with blank projection columns when no sweep ran).
inline std::string coverage_csv(const CoverageReport& r) {
    std::string out = "design,K,nj,T0,reps,seed,alpha,completed,failures,coverage,resolution,empty_rate,"
                      "coordinate,projection_coverage,mean_length\n";
    const std::string head = std::string(design_name(r.spec.design)) + "," + std::to_string(r.spec.K) + "," +
                             std::to_string(r.spec.nj) + "," + std::to_string(r.spec.T0) + "," +
                             std::to_string(r.spec.reps) + "," + std::to_string(r.spec.seed) + "," +
                             fmt_double(r.spec.alpha) + "," + std::to_string(r.completed) + "," +
                             std::to_string(r.failures) + "," + fmt_double(r.coverage) + "," +
                             std::to_string(r.resolution) + "," + fmt_double(r.empty_rate) + ",";
    if (r.projection_coverage.empty()) return out + head + ",,\n";
    for (std::size_t j = 0; j < r.projection_coverage.size(); ++j) {
        out += head + std::to_string(j + 1) + "," + fmt_double(r.projection_coverage[j]) + "," +
               fmt_double(r.mean_length[j]) + "\n";
    }
    return out;
}

}  // namespace simplexci::io
