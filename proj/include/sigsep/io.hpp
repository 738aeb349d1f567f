#pragma once

#include "sigsep/inversion.hpp"
#include "sigsep/lab.hpp"

#include <json.hpp>

#include <charconv>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace sigsep {

// Insertion-ordered, so dumps are byte-stable.
using Json = nlohmann::ordered_json;

inline constexpr const char* demix_schema = "sigsep.demix/1";
inline constexpr const char* defect_schema = "sigsep.defect/1";
inline constexpr const char* constants_schema = "sigsep.constants/1";
inline constexpr const char* robustness_schema = "sigsep.robustness/1";
inline constexpr const char* sweep_schema = "sigsep.sweep/1";
inline constexpr const char* estimation_schema = "sigsep.estimation/1";

namespace detail {

[[noreturn]] inline void parse_fail(const std::string& what) { throw Error(ErrorKind::parse, what); }

// Shortest representation that reads back to the same double.
inline std::string format_double(double x)
{
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, x);
    return std::string(buf, r.ptr);
}

inline double parse_double(std::string_view s, const std::string& where)
{
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    if (!s.empty() && s.front() == '+') s.remove_prefix(1);
    double x = 0.0;
    const auto r = std::from_chars(s.data(), s.data() + s.size(), x);
    if (s.empty() || r.ec != std::errc{} || r.ptr != s.data() + s.size()) parse_fail(where + ": not a number '" + std::string(s) + "'");
    return x;
}

inline std::vector<std::string_view> split_csv(std::string_view line)
{
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (std::size_t k = 0; k <= line.size(); ++k) {
        if (k == line.size() || line[k] == ',') {
            out.push_back(line.substr(start, k - start));
            start = k + 1;
        }
    }
    return out;
}

inline std::string_view trim(std::string_view s)
{
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

// Builds the ensemble, turning constructor failures into parse errors.
inline SignalEnsemble assemble(std::vector<std::vector<double>>& times, std::vector<std::vector<double>>& rows_flat,
                               std::vector<double>& weights, bool weighted, Eigen::Index d)
{
    if (times.empty()) parse_fail("ensemble: no paths");
    std::vector<PiecewiseLinearPath> paths;
    paths.reserve(times.size());
    try {
        for (std::size_t k = 0; k < times.size(); ++k) {
            const auto n = static_cast<Eigen::Index>(times[k].size());
            Matrix v(n, d);
            for (Eigen::Index r = 0; r < n; ++r)
                for (Eigen::Index c = 0; c < d; ++c) v(r, c) = rows_flat[k][static_cast<std::size_t>(r * d + c)];
            paths.emplace_back(std::move(times[k]), std::move(v));
        }
        if (!weighted) return SignalEnsemble(std::move(paths));
        const double total = pairwise_sum(weights);
        // Already-normalized weights are kept verbatim so that re-reading a
        // written ensemble reproduces it exactly.
        if (std::abs(total - 1.0) <= 1e-12) return SignalEnsemble(std::move(paths), std::move(weights));
        for (double w : weights) require(std::isfinite(w) && w >= 0.0, "negative or non-finite weight");
        return SignalEnsemble::normalized(std::move(paths), std::move(weights));
    } catch (const Error& e) {
        if (e.kind() == ErrorKind::parse) throw;
        parse_fail(std::string("ensemble: ") + e.what());
    }
}

}  // namespace detail

// ---- ensembles --------------------------------------------------------------

// One path per line: {"weight": w, "times": [...], "values": [[x_1..x_d], ...]}.
// Weight may be omitted on every line (uniform) but not on only some. Blank
// lines are skipped.
inline SignalEnsemble read_jsonl(std::istream& in)
{
    std::vector<std::vector<double>> times, values;
    std::vector<double> weights;
    Eigen::Index d = -1;
    int with_weight = 0;
    std::string line;
    for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
        if (detail::trim(line).empty()) continue;
        const std::string where = "line " + std::to_string(lineno);
        Json j;
        try {
            j = Json::parse(line);
        } catch (const Json::parse_error& e) {
            detail::parse_fail(where + ": " + e.what());
        }
        if (!j.is_object() || !j.contains("times") || !j.contains("values"))
            detail::parse_fail(where + ": expected an object with \"times\" and \"values\"");
        for (const auto& [key, _] : j.items())
            if (key != "times" && key != "values" && key != "weight") detail::parse_fail(where + ": unknown key '" + key + "'");
        const Json& t = j["times"];
        const Json& v = j["values"];
        if (!t.is_array() || !v.is_array() || t.size() != v.size())
            detail::parse_fail(where + ": \"times\" and \"values\" must be arrays of equal length");
        std::vector<double> tk, vk;
        for (const auto& x : t) {
            if (!x.is_number()) detail::parse_fail(where + ": non-numeric time");
            tk.push_back(x.get<double>());
        }
        for (const auto& row : v) {
            if (!row.is_array() || row.empty()) detail::parse_fail(where + ": each value must be a non-empty array");
            if (d < 0) d = static_cast<Eigen::Index>(row.size());
            if (static_cast<Eigen::Index>(row.size()) != d) detail::parse_fail(where + ": inconsistent dimension");
            for (const auto& x : row) {
                if (!x.is_number()) detail::parse_fail(where + ": non-numeric value");
                vk.push_back(x.get<double>());
            }
        }
        if (j.contains("weight")) {
            if (!j["weight"].is_number()) detail::parse_fail(where + ": non-numeric weight");
            weights.push_back(j["weight"].get<double>());
            ++with_weight;
        }
        times.push_back(std::move(tk));
        values.push_back(std::move(vk));
    }
    if (with_weight != 0 && with_weight != static_cast<int>(times.size()))
        detail::parse_fail("ensemble: weight given on some lines but not all");
    return detail::assemble(times, values, weights, with_weight != 0, std::max<Eigen::Index>(d, 1));
}

// Times are written on the normalized [0, 1] interval.
inline void write_jsonl(std::ostream& out, const SignalEnsemble& e)
{
    for (std::size_t k = 0; k < e.size(); ++k) {
        const auto& p = e.path(k);
        out << "{\"weight\":" << detail::format_double(e.weight(k)) << ",\"times\":[";
        for (std::size_t r = 0; r < p.size(); ++r) out << (r ? "," : "") << detail::format_double(p.times()[r]);
        out << "],\"values\":[";
        for (std::size_t r = 0; r < p.size(); ++r) {
            out << (r ? ",[" : "[");
            for (Eigen::Index c = 0; c < p.dimension(); ++c)
                out << (c ? "," : "") << detail::format_double(p.values()(static_cast<Eigen::Index>(r), c));
            out << "]";
        }
        out << "]}\n";
    }
}

// Long format with header "path_id,t,ch1,...,chd" and an optional trailing
// "weight" column (constant within a path). Rows must be sorted by
// (path_id, t); anything else is rejected rather than reordered.
inline SignalEnsemble read_csv(std::istream& in)
{
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!detail::trim(line).empty()) break;
    }
    if (detail::trim(line).empty()) detail::parse_fail("csv: empty input");
    const auto header = detail::split_csv(detail::trim(line));
    if (header.size() < 3 || detail::trim(header[0]) != "path_id" || detail::trim(header[1]) != "t")
        detail::parse_fail("csv: header must start with path_id,t followed by channels");
    const bool weighted = detail::trim(header.back()) == "weight";
    const auto d = static_cast<Eigen::Index>(header.size()) - 2 - (weighted ? 1 : 0);
    if (d < 1) detail::parse_fail("csv: no channel columns");

    std::vector<std::vector<double>> times, values;
    std::vector<double> weights;
    long long current = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto body = detail::trim(line);
        if (body.empty()) continue;
        const std::string where = "csv line " + std::to_string(lineno);
        const auto cells = detail::split_csv(body);
        if (cells.size() != header.size()) detail::parse_fail(where + ": expected " + std::to_string(header.size()) + " columns");
        const auto id_text = detail::trim(cells[0]);
        long long id = 0;
        const auto r = std::from_chars(id_text.data(), id_text.data() + id_text.size(), id);
        if (id_text.empty() || r.ec != std::errc{} || r.ptr != id_text.data() + id_text.size())
            detail::parse_fail(where + ": path_id must be an integer");
        const double t = detail::parse_double(cells[1], where);
        if (times.empty() || id != current) {
            if (!times.empty() && id < current) detail::parse_fail(where + ": rows not sorted by path_id");
            current = id;
            times.emplace_back();
            values.emplace_back();
            if (weighted) weights.push_back(detail::parse_double(cells.back(), where));
        } else {
            if (t <= times.back().back()) detail::parse_fail(where + ": times not strictly increasing within path");
            if (weighted && detail::parse_double(cells.back(), where) != weights.back())
                detail::parse_fail(where + ": weight changes within a path");
        }
        times.back().push_back(t);
        for (Eigen::Index c = 0; c < d; ++c)
            values.back().push_back(detail::parse_double(cells[static_cast<std::size_t>(2 + c)], where));
    }
    return detail::assemble(times, values, weights, weighted, d);
}

inline void write_csv(std::ostream& out, const SignalEnsemble& e)
{
    out << "path_id,t";
    for (Eigen::Index c = 0; c < e.dimension(); ++c) out << ",ch" << (c + 1);
    out << ",weight\n";
    for (std::size_t k = 0; k < e.size(); ++k) {
        const auto& p = e.path(k);
        for (std::size_t r = 0; r < p.size(); ++r) {
            out << k << ',' << detail::format_double(p.times()[r]);
            for (Eigen::Index c = 0; c < p.dimension(); ++c)
                out << ',' << detail::format_double(p.values()(static_cast<Eigen::Index>(r), c));
            out << ',' << detail::format_double(e.weight(k)) << '\n';
        }
    }
}

inline bool has_csv_extension(const std::filesystem::path& p)
{
    auto ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return ext == ".csv";
}

inline SignalEnsemble read_ensemble_file(const std::filesystem::path& p)
{
    std::ifstream in(p);
    if (!in) detail::parse_fail("cannot open '" + p.string() + "'");
    return has_csv_extension(p) ? read_csv(in) : read_jsonl(in);
}

// ---- JSON building blocks ----------------------------------------------------

// Non-finite numbers become null.
inline Json number(double x) { return std::isfinite(x) ? Json(x) : Json(nullptr); }

inline Json to_json(const Matrix& m)
{
    Json rows = Json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        Json row = Json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(number(m(i, j)));
        rows.push_back(std::move(row));
    }
    return rows;
}

inline Json to_json(const Vector& v)
{
    Json a = Json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(number(v(i)));
    return a;
}

inline Json to_json(const std::vector<double>& v)
{
    Json a = Json::array();
    for (double x : v) a.push_back(number(x));
    return a;
}

inline Matrix matrix_from_json(const Json& j, const std::string& what)
{
    if (!j.is_array() || j.empty() || !j.front().is_array()) detail::parse_fail(what + ": expected an array of rows");
    const auto rows = static_cast<Eigen::Index>(j.size());
    const auto cols = static_cast<Eigen::Index>(j.front().size());
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        const Json& row = j[static_cast<std::size_t>(i)];
        if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols) detail::parse_fail(what + ": ragged rows");
        for (Eigen::Index k = 0; k < cols; ++k) {
            if (!row[static_cast<std::size_t>(k)].is_number()) detail::parse_fail(what + ": non-numeric entry");
            m(i, k) = row[static_cast<std::size_t>(k)].get<double>();
        }
    }
    return m;
}

inline Json to_json(const Coredinates& core)
{
    Json m = Json::array();
    for (const auto& mi : core.m) m.push_back(to_json(mi));
    return Json{{"m0", to_json(core.m0)}, {"m", std::move(m)}};
}

inline Json to_json(const TheoremConstants& k)
{
    Json j;
    j["d"] = k.d;
    j["gamma"] = number(k.gamma);
    j["k_d"] = number(k.k_d);
    j["varsigma"] = number(k.varsigma);
    j["varsigma1"] = number(k.varsigma1);
    j["xi"] = number(k.xi);
    j["norm_B"] = number(k.norm_B);
    j["kappa_B"] = number(k.kappa_B);
    j["kappa_B_unit"] = number(k.kappa_B_unit);
    j["kappa0"] = number(k.kappa0);
    j["r0"] = number(k.r0);
    j["q0"] = number(k.q0);
    j["eps0"] = number(k.eps0);
    j["c1"] = number(k.c1);
    j["c2"] = number(k.c2);
    j["delta"] = number(k.delta);
    j["predicted_bound"] = number(k.predicted_bound);
    j["applicable"] = k.applicable;
    j["estimated"] = k.estimated;
    j["order"] = k.order;
    return j;
}

inline Json to_json(const Alignment& a)
{
    return Json{{"perm", a.perm}, {"beta", to_json(a.beta)}, {"M", to_json(a.M)}, {"E", to_json(a.E)},
                {"relative_error", number(a.relative_error)}};
}

inline Json to_json(const DemixReport& r)
{
    Json j;
    j["schema"] = demix_schema;
    Json mins = Json::array(), white = Json::array(), al = Json::array();
    for (const auto& m : r.minimizers) mins.push_back(to_json(m));
    for (const auto& m : r.whitened_minimizers) white.push_back(to_json(m));
    for (const auto& a : r.alignments) al.push_back(to_json(a));
    j["minimizers"] = std::move(mins);
    j["whitened_minimizers"] = std::move(white);
    j["contrasts"] = to_json(r.contrasts);
    j["recovered_defects"] = to_json(r.recovered_defects);
    j["whitening"] = Json{{"R", to_json(r.whitening.R)},
                          {"eigenvalues", to_json(r.whitening.eigenvalues)},
                          {"condition", number(r.whitening.condition)}};
    j["kappa0"] = number(r.kappa0);
    j["restarts"] = r.restarts;
    j["converged_restarts"] = r.converged_restarts;
    j["converged"] = r.converged;
    j["alignments"] = std::move(al);
    j["constants"] = r.constants ? to_json(*r.constants) : Json(nullptr);
    j["warnings"] = r.warnings;
    return j;
}

inline Json constants_report(const TheoremConstants& k)
{
    Json j;
    j["schema"] = constants_schema;
    const Json body = to_json(k);
    for (const auto& [key, v] : body.items()) j[key] = v;
    return j;
}

// ---- scenario configs ----------------------------------------------------------

inline std::string to_string(SourceFamily f)
{
    switch (f) {
    case SourceFamily::skewed_walk: return "skewed_walk";
    case SourceFamily::exact_product: return "exact_product";
    case SourceFamily::smooth: return "smooth";
    case SourceFamily::user: return "user";
    }
    return "?";
}

inline std::string to_string(NoiseKind k)
{
    switch (k) {
    case NoiseKind::none: return "none";
    case NoiseKind::additive: return "additive";
    case NoiseKind::multiplicative_source: return "multiplicative_source";
    case NoiseKind::multiplicative_observable: return "multiplicative_observable";
    }
    return "?";
}

inline Json to_json(const ScenarioConfig& c)
{
    Json j;
    j["d"] = c.d;
    j["paths"] = c.paths;
    j["vertices"] = c.vertices;
    j["family"] = to_string(c.family);
    j["per_channel"] = c.per_channel;
    j["product_sample"] = c.product_sample ? Json(*c.product_sample) : Json(nullptr);
    j["mixing"] = c.mixing ? to_json(*c.mixing) : Json(nullptr);
    j["mixing_condition"] = c.mixing_condition;
    j["lambda"] = c.lambda;
    j["noise"] = Json{{"kind", to_string(c.noise.kind)},
                      {"amplitude", c.noise.amplitude},
                      {"vertices", c.noise.vertices},
                      {"paths", c.noise.paths}};
    j["async"] = Json{{"mesh", to_json(c.async.mesh)}, {"offset", c.async.offset}};
    j["seed"] = c.seed;
    j["kappa0"] = c.kappa0 ? Json(*c.kappa0) : Json(nullptr);
    j["delta_kappa"] = c.delta_kappa;
    j["restarts"] = c.restarts;
    j["epsilons"] = to_json(c.epsilons);
    j["quadrature_points"] = c.quadrature_points;
    j["quadrature_paths"] = c.quadrature_paths;
    j["refinement"] = c.refinement;
    if (c.user_source) j["source_paths"] = c.user_source->size();
    if (c.sweep) j["sweep"] = Json{{"parameter", c.sweep->parameter}, {"values", to_json(c.sweep->values)}};
    return j;
}

namespace detail {

template <class T>
T get_field(const Json& j, const char* key)
{
    try {
        return j.at(key).get<T>();
    } catch (const Json::exception& e) {
        parse_fail(std::string("scenario: bad value for '") + key + "': " + e.what());
    }
}

inline void reject_unknown(const Json& j, std::initializer_list<const char*> known, const std::string& where)
{
    for (const auto& [key, _] : j.items()) {
        bool ok = false;
        for (const char* k : known) ok = ok || key == k;
        if (!ok) parse_fail(where + ": unknown key '" + key + "'");
    }
}

}  // namespace detail

// Every key is optional; unknown keys are rejected. A string "source" is an
// ensemble file (relative to base_dir) and selects the user family.
inline ScenarioConfig scenario_from_json(const Json& j, const std::filesystem::path& base_dir = {})
{
    if (!j.is_object()) detail::parse_fail("scenario: expected a JSON object");
    detail::reject_unknown(j,
                           {"d", "paths", "vertices", "family", "per_channel", "product_sample", "mixing", "mixing_condition", "lambda", "noise",
                            "async", "seed", "kappa0", "delta_kappa", "restarts", "epsilons", "quadrature_points",
                            "quadrature_paths", "refinement", "source", "sweep"},
                           "scenario");
    ScenarioConfig c;
    if (j.contains("d")) c.d = detail::get_field<int>(j, "d");
    if (j.contains("paths")) c.paths = detail::get_field<std::size_t>(j, "paths");
    if (j.contains("vertices")) c.vertices = detail::get_field<std::size_t>(j, "vertices");
    if (j.contains("family")) {
        const auto f = detail::get_field<std::string>(j, "family");
        if (f == "skewed_walk") c.family = SourceFamily::skewed_walk;
        else if (f == "exact_product") c.family = SourceFamily::exact_product;
        else if (f == "smooth") c.family = SourceFamily::smooth;
        else if (f == "user") c.family = SourceFamily::user;
        else detail::parse_fail("scenario: unknown family '" + f + "'");
    }
    if (j.contains("per_channel")) c.per_channel = detail::get_field<std::size_t>(j, "per_channel");
    if (j.contains("product_sample") && !j["product_sample"].is_null())
        c.product_sample = detail::get_field<std::size_t>(j, "product_sample");
    if (j.contains("mixing") && !j["mixing"].is_null()) c.mixing = matrix_from_json(j["mixing"], "scenario mixing");
    if (j.contains("mixing_condition")) c.mixing_condition = detail::get_field<double>(j, "mixing_condition");
    if (j.contains("lambda")) c.lambda = detail::get_field<double>(j, "lambda");
    if (j.contains("noise")) {
        const Json& n = j["noise"];
        if (!n.is_object()) detail::parse_fail("scenario: noise must be an object");
        detail::reject_unknown(n, {"kind", "amplitude", "vertices", "paths"}, "scenario noise");
        if (n.contains("kind")) {
            const auto k = detail::get_field<std::string>(n, "kind");
            if (k == "none") c.noise.kind = NoiseKind::none;
            else if (k == "additive") c.noise.kind = NoiseKind::additive;
            else if (k == "multiplicative_source") c.noise.kind = NoiseKind::multiplicative_source;
            else if (k == "multiplicative_observable") c.noise.kind = NoiseKind::multiplicative_observable;
            else detail::parse_fail("scenario: unknown noise kind '" + k + "'");
        }
        if (n.contains("amplitude")) c.noise.amplitude = detail::get_field<double>(n, "amplitude");
        if (n.contains("vertices")) c.noise.vertices = detail::get_field<std::size_t>(n, "vertices");
        if (n.contains("paths")) c.noise.paths = detail::get_field<std::size_t>(n, "paths");
    }
    if (j.contains("async")) {
        const Json& a = j["async"];
        if (!a.is_object()) detail::parse_fail("scenario: async must be an object");
        detail::reject_unknown(a, {"mesh", "offset"}, "scenario async");
        if (a.contains("mesh")) c.async.mesh = detail::get_field<std::vector<double>>(a, "mesh");
        if (a.contains("offset")) c.async.offset = detail::get_field<bool>(a, "offset");
    }
    if (j.contains("seed")) c.seed = detail::get_field<std::uint64_t>(j, "seed");
    if (j.contains("kappa0") && !j["kappa0"].is_null()) c.kappa0 = detail::get_field<double>(j, "kappa0");
    if (j.contains("delta_kappa")) c.delta_kappa = detail::get_field<double>(j, "delta_kappa");
    if (j.contains("restarts")) c.restarts = detail::get_field<int>(j, "restarts");
    if (j.contains("epsilons")) c.epsilons = detail::get_field<std::vector<double>>(j, "epsilons");
    if (j.contains("quadrature_points")) c.quadrature_points = detail::get_field<std::size_t>(j, "quadrature_points");
    if (j.contains("quadrature_paths")) c.quadrature_paths = detail::get_field<std::size_t>(j, "quadrature_paths");
    if (j.contains("refinement")) c.refinement = detail::get_field<std::size_t>(j, "refinement");
    if (j.contains("source")) {
        const auto file = detail::get_field<std::string>(j, "source");
        c.user_source = read_ensemble_file(base_dir / file);
        c.family = SourceFamily::user;
        c.d = static_cast<int>(c.user_source->dimension());
    }
    if (j.contains("sweep")) {
        const Json& s = j["sweep"];
        if (!s.is_object()) detail::parse_fail("scenario: sweep must be an object");
        detail::reject_unknown(s, {"parameter", "values"}, "scenario sweep");
        SweepSpec sw;
        sw.parameter = detail::get_field<std::string>(s, "parameter");
        sw.values = detail::get_field<std::vector<double>>(s, "values");
        c.sweep = std::move(sw);
    }
    return c;
}

// ---- lab reports -------------------------------------------------------------

inline Json to_json(const BudgetRecord& b)
{
    return Json{{"kind", b.kind},
                {"statistic", number(b.statistic)},
                {"epsilons", to_json(b.epsilons)},
                {"thresholds", to_json(b.thresholds)},
                {"within", b.within}};
}

inline Json to_json(const RobustnessReport& r)
{
    Json j;
    j["schema"] = robustness_schema;
    j["config"] = to_json(r.config);
    j["mixing"] = to_json(r.mixing);
    j["source_defect"] = number(r.source_defect);
    j["effective_defect"] = number(r.effective_defect);
    j["delta_to_reference"] = number(r.delta_to_reference);
    j["degenerate"] = r.degenerate;
    j["converged"] = r.converged;
    Json mins = Json::array();
    for (const auto& m : r.minimizers) mins.push_back(to_json(m));
    j["minimizers"] = std::move(mins);
    j["contrasts"] = to_json(r.contrasts);
    j["aligned_errors"] = to_json(r.aligned_errors);
    j["max_aligned_error"] = number(r.max_aligned_error);
    j["constants"] = r.constants ? to_json(*r.constants) : Json(nullptr);
    j["reference_constants"] = r.reference_constants ? to_json(*r.reference_constants) : Json(nullptr);
    j["predicted_bound"] = number(r.predicted_bound);
    j["bound_applicable"] = r.bound_applicable;
    j["budget"] = r.budget ? to_json(*r.budget) : Json(nullptr);
    Json flags = Json::object();
    for (const auto& [k, v] : r.flags) flags[k] = v;
    j["flags"] = std::move(flags);
    j["warnings"] = r.warnings;
    return j;
}

inline Json to_json(const SweepReport& s)
{
    Json j;
    j["schema"] = sweep_schema;
    j["parameter"] = s.parameter;
    Json rows = Json::array();
    for (const auto& r : s.rows)
        rows.push_back(Json{{"value", number(r.value)},
                            {"source_defect", number(r.source_defect)},
                            {"effective_defect", number(r.effective_defect)},
                            {"max_aligned_error", number(r.max_aligned_error)},
                            {"envelope", number(r.envelope)},
                            {"predicted_bound", number(r.predicted_bound)},
                            {"bound_applicable", r.bound_applicable},
                            {"budget", r.budget ? number(*r.budget) : Json(nullptr)},
                            {"degenerate", r.degenerate}});
    j["rows"] = std::move(rows);
    j["defect_monotone"] = s.defect_monotone;
    j["warnings"] = s.warnings;
    return j;
}

// Plotting table; empty cells for missing or non-finite values.
inline void write_sweep_csv(std::ostream& out, const SweepReport& s)
{
    const auto cell = [](double x) { return std::isfinite(x) ? detail::format_double(x) : std::string(); };
    out << s.parameter
        << ",source_defect,effective_defect,max_aligned_error,envelope,predicted_bound,bound_applicable,budget,degenerate\n";
    for (const auto& r : s.rows)
        out << cell(r.value) << ',' << cell(r.source_defect) << ',' << cell(r.effective_defect) << ','
            << cell(r.max_aligned_error) << ',' << cell(r.envelope) << ',' << cell(r.predicted_bound) << ','
            << (r.bound_applicable ? 1 : 0) << ',' << (r.budget ? cell(*r.budget) : std::string()) << ','
            << (r.degenerate ? 1 : 0) << '\n';
}

inline Json to_json(const EstimationReport& e)
{
    Json j;
    j["schema"] = estimation_schema;
    Json rows = Json::array();
    for (const auto& r : e.rows)
        rows.push_back(Json{{"n", r.n},
                            {"mean_gap", number(r.mean_gap)},
                            {"mean_delta", number(r.mean_delta)},
                            {"success_fraction", number(r.success_fraction)},
                            {"gaps", to_json(r.gaps)},
                            {"deltas", to_json(r.deltas)},
                            {"errors", to_json(r.errors)}});
    j["rows"] = std::move(rows);
    j["slope"] = number(e.slope);
    j["intercept"] = number(e.intercept);
    j["M_q"] = number(e.M_q);
    j["eta"] = number(e.eta);
    j["n0"] = number(e.n0);
    j["empirical_n0"] = number(e.empirical_n0);
    j["constants"] = e.constants ? to_json(*e.constants) : Json(nullptr);
    j["warnings"] = e.warnings;
    return j;
}

// Two-space indent plus trailing newline; the canonical on-disk form.
inline std::string dump(const Json& j) { return j.dump(2) + "\n"; }

}  // namespace sigsep
