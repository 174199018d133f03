#include <doctest.h>

#include "vcq/binary_io.hpp"
#include "vcq/cli.hpp"
#include "vcq/corpus.hpp"
#include "vcq/quantizer.hpp"

#include <json.hpp>

#include <filesystem>
#include <sstream>

using namespace vcq;
namespace fs = std::filesystem;

namespace {

struct Run {
    int code;
    std::string out;
    std::string err;
};

Run run(std::vector<std::string> args)
{
    std::ostringstream out, err;
    const int code = run_cli(args, out, err);
    return {code, out.str(), err.str()};
}

nlohmann::json run_json(std::vector<std::string> args)
{
    args.push_back("--json");
    const auto r = run(args);
    REQUIRE_MESSAGE(r.code == 0, r.err);
    return nlohmann::json::parse(r.out);
}

struct TempDir {
    fs::path path;
    explicit TempDir(const char* name) : path(fs::temp_directory_path() / name)
    {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string operator/(const char* f) const { return (path / f).string(); }
};

const std::vector<std::string> kSmallData = {"--classes", "3", "--per-class", "6", "--image-size", "16"};
const std::vector<std::string> kSmallSchedule = {"--family", "cosine", "--k-min", "2", "--k-max", "32", "--length", "16"};

std::vector<std::string> cat(std::vector<std::string> a, const std::vector<std::string>& b)
{
    a.insert(a.end(), b.begin(), b.end());
    return a;
}

} // namespace

TEST_CASE("tstar built-in table and thresholds")
{
    const auto j = run_json({"tstar"});
    std::vector<std::uint32_t> tstar;
    for (const auto& row : j["datasets"])
        tstar.push_back(row["tstar"]);
    CHECK(tstar == std::vector<std::uint32_t>{2, 2, 2, 2, 3, 3});
    std::vector<std::uint64_t> thresholds;
    for (const auto& row : j["thresholds"])
        thresholds.push_back(row["n_m"]);
    CHECK(thresholds == std::vector<std::uint64_t>{16384ULL, 268435456ULL, 4398046511104ULL, 72057594037927936ULL});

    CHECK(run_json({"tstar", "--n", "1", "--k", "16384"})["tstar"] == 0);
    CHECK(run_json({"tstar", "--n", "1281167"})["tstar"] == 2);
    const auto big = run_json({"tstar", "--thresholds", "6"});
    CHECK(big["thresholds"][0]["n_m"] == "1180591620717411303424");
    CHECK(run({"tstar", "--thresholds", "5..2"}).code == 1);
    CHECK(run({"tstar", "--k", "1"}).code == 1);

    const auto text = run({"tstar"});
    CHECK(text.code == 0);
    CHECK(text.out.find("72057594037927936") != std::string::npos);
    CHECK(text.out.find("ImageNet-1K") != std::string::npos);
}

TEST_CASE("schedule summaries")
{
    const auto cos = run_json({"schedule", "--preset", "cosine", "--n", "1281167"});
    CHECK(cos["mean_codebook"].get<double>() == doctest::Approx(5964).epsilon(0.01));
    CHECK(std::abs(cos["bpp"].get<double>() - 0.044) < 0.002);

    const auto c16 = run_json({"schedule", "--preset", "constant16k"});
    CHECK(c16["mean_codebook"] == 16384.0);
    CHECK(std::abs(c16["bpp"].get<double>() - 0.055) < 0.002);

    const auto table = run_json({"schedule"});
    CHECK(table["schedules"].size() == 6);

    const auto power = run({"schedule", "--family", "power", "--alpha", "1.0", "--k-min", "2", "--k-max", "16384",
                            "--length", "256", "--csv"});
    const auto linear = run({"schedule", "--preset", "linear", "--csv"});
    CHECK(power.code == 0);
    CHECK(power.out == linear.out);
    CHECK(linear.out.rfind("t,K_t,bits,cumulative_bits,remaining_budget\n0,2,", 0) == 0);
}

TEST_CASE("usage errors exit with 1")
{
    CHECK(run({}).code == 1);
    CHECK(run({"nonsense"}).code == 1);
    CHECK(run({"schedule", "--preset", "nope"}).code == 1);
    CHECK(run({"schedule", "--preset", "cosine", "--family", "linear"}).code == 1);
    CHECK(run({"schedule", "--family", "power", "--k-min", "2", "--k-max", "8", "--length", "4"}).code == 1);
    CHECK(run({"schedule", "--bogus"}).code == 1);
    CHECK(run({"fit", "--preset", "cosine", "--out", "x.vcqc"}).code == 1); // no --seed
    CHECK(run(cat(cat({"fit", "--seed", "1", "--out", "x.vcqc", "--preset", "cosine"}, kSmallData), {})).code == 1);
    CHECK(run({"experiment", "--seed", "1"}).code == 1); // no --out
    const auto help = run({"--help"});
    CHECK(help.code == 0);
    CHECK(help.out.find("tstar") != std::string::npos);
}

TEST_CASE("analyze an identical-row corpus")
{
    TempDir dir("vcq_test_cli_analyze");
    TokenCorpus c(4, 8);
    for (int i = 0; i < 10; ++i)
        c.push_back(std::vector<std::uint32_t>{1, 0, 3, 7});
    save_corpus(c, dir / "same.vcqt");
    const auto r = run({"analyze", "--corpus", dir / "same.vcqt", "--family", "constant", "--k", "8", "--length", "4"});
    REQUIRE(r.code == 0);
    std::istringstream lines(r.out);
    std::string line;
    std::getline(lines, line);
    CHECK(line == "t,H_bits,remaining_budget,prop1_bound,exact_bound,utilization");
    int rows = 0;
    while (std::getline(lines, line)) {
        CHECK(line.substr(line.find(',') + 1, 2) == "0,");
        ++rows;
    }
    CHECK(rows == 4);

    // Written files are readable again, and data errors exit with 2.
    CHECK(run({"analyze", "--corpus", dir / "same.vcqt", "--family", "constant", "--k", "8", "--length", "4",
               "--out", dir / "h.csv"})
              .code == 0);
    CHECK(io::read_file(dir / "h.csv").size() == r.out.size());
    CHECK(run({"analyze", "--corpus", dir / "missing.vcqt", "--preset", "cosine"}).code == 2);
    CHECK(run({"analyze", "--corpus", dir / "same.vcqt", "--preset", "cosine"}).code == 2);
    io::write_file_atomic(dir / "junk.vcqt", std::string("not a corpus"));
    CHECK(run({"analyze", "--corpus", dir / "junk.vcqt", "--family", "constant", "--k", "8", "--length", "4"}).code ==
          2);
}

TEST_CASE("fit, tokenize, generate and memorization round trip")
{
    TempDir dir("vcq_test_cli_pipeline");
    const auto fit = run(cat(cat({"fit", "--seed", "7", "--out", dir / "cb.vcqc", "--epochs", "4"}, kSmallData),
                             kSmallSchedule));
    REQUIRE_MESSAGE(fit.code == 0, fit.err);
    const auto cb = load_codebook(dir / "cb.vcqc");
    CHECK(cb.k_max() == 32);
    CHECK(cb.dim() == 8);

    const auto tok = run(cat(cat({"tokenize", "--seed", "7", "--codebook", dir / "cb.vcqc", "--out", dir / "c.vcqt"},
                                 kSmallData),
                             kSmallSchedule));
    REQUIRE_MESSAGE(tok.code == 0, tok.err);
    const auto corpus = load_corpus(dir / "c.vcqt");
    CHECK(corpus.n_samples == 18);
    CHECK(corpus.length == 16);
    CHECK(corpus.labels.has_value());

    // Tokenizing with a mismatched codebook is a data error.
    const auto wrong = run(cat(cat({"tokenize", "--seed", "7", "--codebook", dir / "cb.vcqc", "--out",
                                    dir / "w.vcqt", "--dim", "4"},
                                   kSmallData),
                               kSmallSchedule));
    CHECK(wrong.code == 2);

    auto gen = [&](const char* out) {
        return run(cat({"generate", "--seed", "3", "--corpus", dir / "c.vcqt", "--out", dir / out, "--policy",
                        R"({"scale": 0, "temperature": 1.0})", "--samples-per-class", "4"},
                       kSmallSchedule));
    };
    REQUIRE(gen("g1.vcqt").code == 0);
    REQUIRE(gen("g2.vcqt").code == 0);
    CHECK(io::read_file(dir / "g1.vcqt") == io::read_file(dir / "g2.vcqt"));
    CHECK(load_corpus(dir / "g1.vcqt").n_samples == 12);

    const auto preset = run(cat({"generate", "--seed", "3", "--corpus", dir / "c.vcqt", "--out", dir / "g3.vcqt",
                                 "--policy-preset", "cosine"},
                                kSmallSchedule));
    CHECK(preset.code == 0);
    CHECK(run(cat({"generate", "--corpus", dir / "c.vcqt", "--out", dir / "g4.vcqt"}, kSmallSchedule)).code == 1);

    const auto self = run_json({"memorization", "--generated", dir / "c.vcqt", "--training", dir / "c.vcqt"});
    CHECK(self["exact_match_rate"] == 1.0);
    CHECK(self["mean_longest_prefix"] == 16.0);
}

TEST_CASE("experiment writes a report directory")
{
    TempDir dir("vcq_test_cli_experiment");
    const std::string config = R"({"dataset": {"n_per_class": 12}, "codebook": {"epochs": 5},
        "generation": {"samples_per_class": 3}})";
    const auto j = run_json({"experiment", "--seed", "2", "--config", config, "--out", dir / "r"});
    CHECK(j["schedules"][1]["cliff_position"].get<int>() >= j["schedules"][0]["cliff_position"].get<int>());
    for (const char* f : {"report.json", "entropy_cosine.csv", "corpus_constant.vcqt", "codebook_cosine.vcqc"})
        CHECK(fs::exists(dir.path / "r" / f));
    const auto bytes = io::read_file(dir.path / "r" / "report.json");
    CHECK(nlohmann::json::parse(bytes.begin(), bytes.end()) == j);

    // The config may also come from a file, and the analysis is reproducible from the written corpus.
    io::write_file_atomic(dir / "desk.json", config);
    CHECK(run({"experiment", "--seed", "2", "--config", dir / "desk.json", "--out", dir / "r2"}).code == 0);
    CHECK(io::read_file(dir.path / "r" / "report.json") == io::read_file(dir.path / "r2" / "report.json"));
    const auto csv = run({"analyze", "--corpus", (dir.path / "r" / "corpus_cosine.vcqt").string(), "--family",
                          "cosine", "--k-min", "2", "--k-max", "256", "--length", "64"});
    const auto written = io::read_file(dir.path / "r" / "entropy_cosine.csv");
    CHECK(csv.out == std::string(written.begin(), written.end()));

    CHECK(run({"experiment", "--seed", "2", "--config", R"({"schedules": []})", "--out", dir / "r3"}).code == 1);
}
