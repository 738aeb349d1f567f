#include "sigsep/io.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace sigsep;

namespace {

SignalEnsemble random_ensemble(std::uint64_t seed, int d, std::size_t n, bool weighted)
{
    RandomStream rng(seed, "io", 0);
    std::vector<PiecewiseLinearPath> paths;
    std::vector<double> w;
    for (std::size_t k = 0; k < n; ++k) {
        const std::size_t v = 2 + rng.index(6);
        std::vector<double> t(v);
        double acc = rng.uniform() * 3.0 - 1.0;
        for (auto& x : t) {
            x = acc;
            acc += 0.1 + rng.uniform();
        }
        paths.emplace_back(t, rng.gaussian(static_cast<Eigen::Index>(v), d));
        w.push_back(0.5 + rng.uniform());
    }
    if (!weighted) return SignalEnsemble(std::move(paths));
    return SignalEnsemble::normalized(std::move(paths), std::move(w));
}

void expect_same(const SignalEnsemble& a, const SignalEnsemble& b)
{
    ASSERT_EQ(a.size(), b.size());
    ASSERT_EQ(a.dimension(), b.dimension());
    for (std::size_t k = 0; k < a.size(); ++k) {
        EXPECT_EQ(a.weight(k), b.weight(k));
        EXPECT_EQ(a.path(k).times(), b.path(k).times());
        EXPECT_EQ(a.path(k).values(), b.path(k).values());
    }
}

SignalEnsemble parse_jsonl(const std::string& s)
{
    std::istringstream in(s);
    return read_jsonl(in);
}

SignalEnsemble parse_csv(const std::string& s)
{
    std::istringstream in(s);
    return read_csv(in);
}

ErrorKind kind_of(const std::function<void()>& f)
{
    try {
        f();
    } catch (const Error& e) {
        return e.kind();
    }
    ADD_FAILURE() << "no error thrown";
    return ErrorKind::invalid_argument;
}

}  // namespace

TEST(Jsonl, ParsesWeightsTimesAndValues)
{
    const auto e = parse_jsonl(R"({"weight": 0.25, "times": [0, 2], "values": [[1, 2], [3, 4]]}
{"weight": 0.75, "times": [1, 2, 5], "values": [[0, 0], [1, 0], [1, 1]]}
)");
    ASSERT_EQ(e.size(), 2u);
    EXPECT_EQ(e.dimension(), 2);
    EXPECT_EQ(e.weight(1), 0.75);
    EXPECT_EQ(e.path(1).times()[1], 0.25);
    EXPECT_EQ(e.path(0).values()(1, 0), 3.0);
}

TEST(Jsonl, MissingWeightsMeanUniformAndUnnormalizedWeightsAreRescaled)
{
    const auto u = parse_jsonl("{\"times\":[0,1],\"values\":[[1],[2]]}\n\n{\"times\":[0,1],\"values\":[[0],[5]]}\n");
    EXPECT_EQ(u.weight(0), 0.5);
    const auto w = parse_jsonl("{\"weight\":1,\"times\":[0,1],\"values\":[[1],[2]]}\n{\"weight\":3,\"times\":[0,1],\"values\":[[0],[5]]}\n");
    EXPECT_DOUBLE_EQ(w.weight(1), 0.75);
}

TEST(Jsonl, RoundTripIsIdempotent)
{
    for (bool weighted : {false, true}) {
        const auto e = random_ensemble(7, 3, 40, weighted);
        std::ostringstream a;
        write_jsonl(a, e);
        const auto once = parse_jsonl(a.str());
        expect_same(e, once);
        std::ostringstream b;
        write_jsonl(b, once);
        EXPECT_EQ(a.str(), b.str());
        expect_same(once, parse_jsonl(b.str()));
    }
}

TEST(Jsonl, MalformedInputIsAParseError)
{
    for (const std::string bad : {"", "\n\n", "{not json}\n", "[1,2]\n", "{\"times\":[0,1]}\n",
                                  "{\"times\":[0,1],\"values\":[[1],[2],[3]]}\n",
                                  "{\"times\":[0,1],\"values\":[[1],[2,3]]}\n",
                                  "{\"times\":[1,0],\"values\":[[1],[2]]}\n",
                                  "{\"times\":[0,1],\"values\":[[1],[\"x\"]]}\n",
                                  "{\"times\":[0,1],\"values\":[[1],[2]],\"colour\":1}\n",
                                  "{\"weight\":1,\"times\":[0,1],\"values\":[[1],[2]]}\n{\"times\":[0,1],\"values\":[[1],[2]]}\n",
                                  "{\"weight\":-1,\"times\":[0,1],\"values\":[[1],[2]]}\n{\"weight\":3,\"times\":[0,1],\"values\":[[1],[2]]}\n"})
        EXPECT_EQ(kind_of([&] { parse_jsonl(bad); }), ErrorKind::parse) << bad;
}

TEST(Csv, ParsesLongFormat)
{
    const auto e = parse_csv("path_id,t,ch1,ch2\n0,0,1,2\n0,1,3,4\n5,0,0,0\n5,0.5,1,0\n5,2,1,1\n");
    ASSERT_EQ(e.size(), 2u);
    EXPECT_EQ(e.path(1).size(), 3u);
    EXPECT_EQ(e.path(1).times()[1], 0.25);
    EXPECT_EQ(e.weight(0), 0.5);
}

TEST(Csv, UnsortedInputIsRejected)
{
    EXPECT_EQ(kind_of([] { parse_csv("path_id,t,ch1\n1,0,1\n1,1,2\n0,0,1\n0,1,1\n"); }), ErrorKind::parse);
    EXPECT_EQ(kind_of([] { parse_csv("path_id,t,ch1\n0,1,1\n0,0,2\n"); }), ErrorKind::parse);
    EXPECT_EQ(kind_of([] { parse_csv("path_id,t,ch1\n0,0,1\n0,0,2\n"); }), ErrorKind::parse);
}

TEST(Csv, MalformedInputIsAParseError)
{
    for (const std::string bad : {"", "id,t,ch1\n0,0,1\n0,1,1\n", "path_id,t\n0,0\n0,1\n", "path_id,t,ch1\n",
                                  "path_id,t,ch1\n0,0,1\n0,1\n", "path_id,t,ch1\n0,0,x\n0,1,1\n",
                                  "path_id,t,ch1\na,0,1\na,1,1\n", "path_id,t,ch1\n0,0,1\n",
                                  "path_id,t,ch1,weight\n0,0,1,0.5\n0,1,1,0.25\n"})
        EXPECT_EQ(kind_of([&] { parse_csv(bad); }), ErrorKind::parse) << bad;
}

TEST(Csv, RoundTripMatchesJsonl)
{
    const auto e = random_ensemble(11, 2, 25, true);
    std::ostringstream c;
    write_csv(c, e);
    const auto back = parse_csv(c.str());
    expect_same(e, back);
    std::ostringstream c2;
    write_csv(c2, back);
    EXPECT_EQ(c.str(), c2.str());
}

TEST(Files, ExtensionSelectsFormat)
{
    const auto dir = std::filesystem::temp_directory_path() / "sigsep_io_test";
    std::filesystem::create_directories(dir);
    const auto e = random_ensemble(3, 2, 5, false);
    {
        std::ofstream a(dir / "e.csv"), b(dir / "e.jsonl");
        write_csv(a, e);
        write_jsonl(b, e);
    }
    expect_same(read_ensemble_file(dir / "e.csv"), read_ensemble_file(dir / "e.jsonl"));
    EXPECT_EQ(kind_of([&] { read_ensemble_file(dir / "missing.jsonl"); }), ErrorKind::parse);
    std::filesystem::remove_all(dir);
}

TEST(Reports, MatricesAreRowMajorAndNonFiniteIsNull)
{
    Matrix m(2, 3);
    m << 1, 2, 3, 4, 5, std::numeric_limits<double>::infinity();
    EXPECT_EQ(to_json(m).dump(), "[[1.0,2.0,3.0],[4.0,5.0,null]]");
    m(1, 2) = 6;
    EXPECT_EQ(matrix_from_json(to_json(m), "m"), m);
    EXPECT_EQ(kind_of([] { matrix_from_json(Json::parse("[[1,2],[3]]"), "m"); }), ErrorKind::parse);
}

TEST(Reports, CarrySchemaAndAreStable)
{
    ScenarioConfig c;
    c.family = SourceFamily::exact_product;
    c.per_channel = 6;
    c.vertices = 6;
    c.restarts = 4;
    c.seed = 9;
    const auto r = run_scenario(c);
    const Json j = to_json(r);
    EXPECT_EQ(j["schema"], robustness_schema);
    EXPECT_EQ(dump(j), dump(to_json(run_scenario(c))));
    EXPECT_EQ(j.begin().key(), "schema");
    ASSERT_FALSE(j["minimizers"].empty());
    EXPECT_EQ(j["minimizers"][0].size(), 2u);

    DemixReport d;
    d.minimizers.push_back(Matrix::Identity(2, 2));
    d.whitening.R = Matrix::Identity(2, 2);
    d.whitening.eigenvalues = Vector::Ones(2);
    EXPECT_EQ(to_json(d)["schema"], demix_schema);
    EXPECT_TRUE(to_json(d)["constants"].is_null());

    TheoremConstants k;
    k.d = 3;
    k.k_d = std::sqrt(5.0);
    const Json kj = constants_report(k);
    EXPECT_EQ(kj["schema"], constants_schema);
    EXPECT_EQ(kj["k_d"].get<double>(), std::sqrt(5.0));
}

TEST(Scenario, JsonRoundTrip)
{
    const Json in = Json::parse(R"({
        "d": 3, "paths": 50, "vertices": 7, "family": "smooth", "lambda": 0.1, "product_sample": 40,
        "mixing": [[1, 0.5, 0], [0, 1, 0], [0.2, 0, 1]],
        "noise": {"kind": "additive", "amplitude": 0.01, "vertices": 5, "paths": 3},
        "async": {"mesh": [0.125, 0.25, 0.5], "offset": false},
        "seed": 123, "kappa0": 12, "restarts": 5, "epsilons": [0.1],
        "sweep": {"parameter": "lambda", "values": [0, 0.1]}
    })");
    const auto c = scenario_from_json(in);
    EXPECT_EQ(c.d, 3);
    EXPECT_EQ(c.family, SourceFamily::smooth);
    EXPECT_EQ(c.noise.kind, NoiseKind::additive);
    EXPECT_EQ(c.async.mesh.size(), 3u);
    EXPECT_FALSE(c.async.offset);
    EXPECT_EQ(*c.kappa0, 12.0);
    EXPECT_EQ(*c.product_sample, 40u);
    EXPECT_EQ((*c.mixing)(2, 0), 0.2);
    ASSERT_TRUE(c.sweep.has_value());
    const auto again = scenario_from_json(to_json(c));
    EXPECT_EQ(dump(to_json(again)), dump(to_json(c)));
}

TEST(Scenario, RejectsUnknownKeysAndBadTypes)
{
    for (const char* bad : {R"({"dd": 2})", R"({"d": "two"})", R"({"family": "gaussian"})", R"({"noise": {"kind": "pink"}})",
                            R"({"noise": 3})", R"({"sweep": {"values": [1]}})", R"([1])"})
        EXPECT_EQ(kind_of([&] { scenario_from_json(Json::parse(bad)); }), ErrorKind::parse) << bad;
}
