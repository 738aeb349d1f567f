// sigsep: blind source separation of path-valued signals from signature
// cumulants. Subcommands: separate, defect, simulate, bounds, bench.

#include "sigsep/sigsep.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

using namespace sigsep;

namespace {

namespace exit_code {
constexpr int ok = 0;
constexpr int other = 1;
constexpr int parse = 2;
constexpr int gate = 3;
constexpr int degenerate = 4;
constexpr int optimizer = 5;
}  // namespace exit_code

int code_for(ErrorKind k)
{
    switch (k) {
    case ErrorKind::parse:
    case ErrorKind::invalid_argument: return exit_code::parse;
    case ErrorKind::diag_gate:
    case ErrorKind::s0_gate: return exit_code::gate;
    case ErrorKind::degenerate_covariance: return exit_code::degenerate;
    case ErrorKind::optimizer_failure:
    case ErrorKind::alignment_degenerate: return exit_code::optimizer;
    }
    return exit_code::other;
}

struct Options {
    std::string input;
    std::string output;
    std::optional<std::uint64_t> seed;
    std::optional<int> restarts;
    std::optional<double> kappa0;
    std::optional<double> delta_kappa;
    double eps_diag = 1e-10;
    double eigen_floor = 1e-12;
    double tolerance = 1e-10;
    bool json = false;
    bool csv = false;
    // separate / bounds
    std::string mixing;
    std::string demixed;
    // bench
    int bench_d = 3;
    std::size_t bench_paths = 2000;
};

void emit(const Options& o, const std::string& text)
{
    if (o.output.empty() || o.output == "-") {
        std::cout << text;
        std::cout.flush();
        return;
    }
    std::ofstream out(o.output, std::ios::binary);
    if (!out) throw Error(ErrorKind::invalid_argument, "cannot write '" + o.output + "'");
    out << text;
}

SignalEnsemble load_input(const Options& o)
{
    if (o.input.empty()) throw Error(ErrorKind::parse, "--input is required");
    if (o.input == "-") return o.csv ? read_csv(std::cin) : read_jsonl(std::cin);
    return read_ensemble_file(o.input);
}

// A mixing matrix given inline as JSON ("[[1,0],[0,1]]") or as a JSON file.
Matrix load_mixing(const std::string& spec, Eigen::Index d)
{
    if (spec.empty()) return Matrix::Identity(d, d);
    Json j;
    try {
        if (!spec.empty() && spec.front() == '[') {
            j = Json::parse(spec);
        } else {
            std::ifstream in(spec);
            if (!in) throw Error(ErrorKind::parse, "cannot open mixing file '" + spec + "'");
            j = Json::parse(in);
        }
    } catch (const Json::parse_error& e) {
        throw Error(ErrorKind::parse, std::string("mixing: ") + e.what());
    }
    Matrix A = matrix_from_json(j, "mixing");
    if (A.rows() != d || A.cols() != d)
        throw Error(ErrorKind::parse, "mixing must be " + std::to_string(d) + "x" + std::to_string(d));
    return A;
}

void warn_all(const std::vector<std::string>& warnings)
{
    for (const auto& w : warnings) std::cerr << "sigsep: warning: " << w << '\n';
}

int cmd_separate(const Options& o)
{
    const SignalEnsemble x = load_input(o);
    const Coredinates core = coredinates(x, DiagGate{o.eps_diag});
    require_diag_gate(core);

    OptimizerConfig cfg;
    cfg.seed = o.seed.value_or(0);
    cfg.restarts = o.restarts.value_or(cfg.restarts);
    cfg.tolerance = o.tolerance;
    cfg.eigen_floor = o.eigen_floor;
    DemixReport rep = minimize_contrast(core, ContrastDomain{o.kappa0.value_or(10.0)}, cfg);
    if (!o.mixing.empty()) {
        const Matrix A = load_mixing(o.mixing, x.dimension());
        attach_ground_truth(rep, transform_moments(core, A.inverse()), A, o.eigen_floor);
    } else {
        attach_plugin_constants(rep, core, o.eigen_floor);
    }

    Json j = to_json(rep);
    j["input"] = Json{{"paths", x.size()}, {"dimension", x.dimension()}};
    emit(o, dump(j));
    if (!o.demixed.empty() && !rep.minimizers.empty()) {
        std::ofstream out(o.demixed, std::ios::binary);
        if (!out) throw Error(ErrorKind::invalid_argument, "cannot write '" + o.demixed + "'");
        const SignalEnsemble y = pushforward_linear(x, rep.minimizers.front());
        if (o.csv || has_csv_extension(o.demixed))
            write_csv(out, y);
        else
            write_jsonl(out, y);
    }
    warn_all(rep.warnings);
    return rep.converged ? exit_code::ok : exit_code::optimizer;
}

int cmd_defect(const Options& o)
{
    const SignalEnsemble x = load_input(o);
    const Coredinates core = coredinates(x, DiagGate{o.eps_diag});
    const double defect = ic_defect(core);
    Json j;
    j["schema"] = defect_schema;
    j["paths"] = x.size();
    j["dimension"] = x.dimension();
    j["ic_defect"] = number(defect);
    j["diag_gate"] = Json{{"passes", core.passes_gate},
                          {"eps_diag", o.eps_diag},
                          {"min_diag", number(core.min_diag)},
                          {"max_diag", number(core.max_diag)},
                          {"normalizers", to_json(core.n)}};
    j["mean_stationarity_gap"] = number(mean_stationarity_gap(x, 65));
    j["coredinates"] = to_json(core);
    emit(o, dump(j));
    return exit_code::ok;
}

int cmd_simulate(const Options& o)
{
    if (o.input.empty()) throw Error(ErrorKind::parse, "--input is required");
    Json j;
    {
        std::ifstream in(o.input);
        if (!in) throw Error(ErrorKind::parse, "cannot open '" + o.input + "'");
        try {
            j = Json::parse(in);
        } catch (const Json::parse_error& e) {
            throw Error(ErrorKind::parse, std::string("scenario: ") + e.what());
        }
    }
    ScenarioConfig c = scenario_from_json(j, std::filesystem::path(o.input).parent_path());
    if (o.seed) c.seed = *o.seed;
    if (o.restarts) c.restarts = *o.restarts;
    if (o.kappa0) c.kappa0 = *o.kappa0;
    if (o.delta_kappa) c.delta_kappa = *o.delta_kappa;
    validate(c);

    if (c.sweep) {
        const SweepReport s = run_sweep(c);
        if (o.csv) {
            std::ostringstream out;
            write_sweep_csv(out, s);
            emit(o, out.str());
        } else {
            emit(o, dump(to_json(s)));
        }
        warn_all(s.warnings);
        return exit_code::ok;
    }
    const RobustnessReport r = run_scenario(c);
    emit(o, dump(to_json(r)));
    warn_all(r.warnings);
    return exit_code::ok;
}

int cmd_bounds(const Options& o)
{
    const SignalEnsemble s = load_input(o);
    const Coredinates core = coredinates(s, DiagGate{o.eps_diag});
    const Matrix A = load_mixing(o.mixing, s.dimension());
    const TheoremConstants k = theorem_constants(core, A, o.kappa0, o.delta_kappa.value_or(1.0), o.eigen_floor);
    emit(o, dump(constants_report(k)));
    return exit_code::ok;
}

// Wall-clock timings; the only output that is not reproducible.
int cmd_bench(const Options& o)
{
    using clock = std::chrono::steady_clock;
    const auto ms = [](clock::time_point a, clock::time_point b) {
        return std::chrono::duration<double, std::milli>(b - a).count();
    };
    ScenarioConfig c;
    c.d = o.bench_d;
    c.paths = o.bench_paths;
    c.seed = o.seed.value_or(0);
    validate(c);

    const auto t0 = clock::now();
    const SignalEnsemble source = generate_source(c);
    const Matrix A = scenario_mixing(c);
    const SignalEnsemble x = pushforward_linear(source, A);
    const auto t1 = clock::now();
    const Coredinates core = coredinates(x, DiagGate{o.eps_diag});
    const auto t2 = clock::now();
    OptimizerConfig cfg;
    cfg.seed = c.seed;
    cfg.restarts = o.restarts.value_or(cfg.restarts);
    const DemixReport rep = minimize_contrast(core, ContrastDomain{o.kappa0.value_or(10.0)}, cfg);
    const auto t3 = clock::now();

    Json j;
    j["schema"] = "sigsep.bench/1";
    j["d"] = c.d;
    j["paths"] = c.paths;
    j["vertices"] = c.vertices;
    j["restarts"] = cfg.restarts;
    j["threads"] = thread_budget();
    j["ms"] = Json{{"generate", ms(t0, t1)}, {"coredinates", ms(t1, t2)}, {"minimize", ms(t2, t3)}};
    j["minimizers"] = rep.minimizers.size();
    j["converged"] = rep.converged;
    emit(o, dump(j));
    return exit_code::ok;
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Blind inversion of linearly mixed path-valued signals"};
    app.require_subcommand(1);
    Options o;

    const auto common = [&](CLI::App* sub, bool ensemble_input) {
        sub->add_option("--input,-i", o.input, ensemble_input ? "ensemble file (.jsonl or .csv; - for stdin)" : "scenario JSON");
        sub->add_option("--output,-o", o.output, "report file (default stdout)");
        sub->add_option("--seed", o.seed, "random seed");
        sub->add_option("--restarts", o.restarts, "optimizer restarts")->check(CLI::PositiveNumber);
        sub->add_option("--kappa0", o.kappa0, "condition bound of the contrast domain")->check(CLI::Range(1.0, 1e12));
        sub->add_option("--delta-kappa", o.delta_kappa, "slack added to the true condition when kappa0 is unset")
            ->check(CLI::PositiveNumber);
        sub->add_option("--eps-diag", o.eps_diag, "relative floor on the diagonal second moments")->check(CLI::PositiveNumber);
        sub->add_option("--eigen-floor", o.eigen_floor, "relative floor on covariance eigenvalues")->check(CLI::PositiveNumber);
        sub->add_flag("--json", o.json, "JSON output (default)");
        sub->add_flag("--csv", o.csv, "CSV output where supported");
    };

    auto* separate = app.add_subcommand("separate", "recover demixing matrices from an observed ensemble");
    common(separate, true);
    separate->add_option("--tolerance", o.tolerance, "optimizer stationarity tolerance")->check(CLI::PositiveNumber);
    separate->add_option("--mixing", o.mixing, "true mixing (inline JSON or file) for alignment");
    separate->add_option("--demixed", o.demixed, "write the demixed ensemble here");

    auto* defect = app.add_subcommand("defect", "IC-defect and admissibility diagnostics of an ensemble");
    common(defect, true);

    auto* simulate = app.add_subcommand("simulate", "run a robustness scenario or sweep");
    common(simulate, false);

    auto* bounds = app.add_subcommand("bounds", "recovery constants for a source ensemble and mixing");
    common(bounds, true);
    bounds->add_option("--mixing", o.mixing, "mixing matrix (inline JSON or file; default identity)");

    auto* bench = app.add_subcommand("bench", "time the pipeline on a synthetic source");
    common(bench, false);
    bench->add_option("--dimension", o.bench_d, "channels")->check(CLI::Range(1, 16));
    bench->add_option("--paths", o.bench_paths, "paths")->check(CLI::PositiveNumber);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? exit_code::ok : exit_code::parse;
    }
    if (o.json && o.csv) {
        std::cerr << "sigsep: error: --json and --csv are exclusive\n";
        return exit_code::parse;
    }

    try {
        if (separate->parsed()) return cmd_separate(o);
        if (defect->parsed()) return cmd_defect(o);
        if (simulate->parsed()) return cmd_simulate(o);
        if (bounds->parsed()) return cmd_bounds(o);
        if (bench->parsed()) return cmd_bench(o);
    } catch (const Error& e) {
        std::cerr << "sigsep: error: " << e.what() << '\n';
        return code_for(e.kind());
    } catch (const std::exception& e) {
        std::cerr << "sigsep: error: " << e.what() << '\n';
        return exit_code::other;
    }
    return exit_code::other;
}
