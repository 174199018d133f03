#include "vcq/cli.hpp"

#include "vcq/binary_io.hpp"
#include "vcq/corpus.hpp"
#include "vcq/entropy.hpp"
#include "vcq/error.hpp"
#include "vcq/generation.hpp"
#include "vcq/quantizer.hpp"
#include "vcq/schedule.hpp"
#include "vcq/toylab.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <iomanip>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>

namespace vcq {

namespace {

using nlohmann::json;

class UsageError : public Error {
public:
    using Error::Error;
};

struct Globals {
    std::optional<std::uint64_t> seed;
    bool json = false;
    std::string out;
};

std::string fixed(double v, int digits)
{
    std::ostringstream s;
    s << std::fixed << std::setprecision(digits) << v;
    return s.str();
}

/// Inline JSON when the argument starts with '{', otherwise a path to a JSON file.
json load_json_arg(const std::string& arg, const char* what)
{
    std::string text = arg;
    if (arg.find_first_not_of(" \t\n") == std::string::npos || arg[arg.find_first_not_of(" \t\n")] != '{') {
        const auto bytes = io::read_file(arg);
        text.assign(bytes.begin(), bytes.end());
    }
    try {
        return json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("cannot parse ") + what + ": " + e.what());
    }
}

struct ScheduleArgs {
    std::string preset;
    std::string spec;
    std::string family;
    std::optional<std::uint32_t> k_min;
    std::optional<std::uint32_t> k_max;
    std::optional<std::uint32_t> length;
    std::optional<double> alpha;

    void add_to(CLI::App* cmd)
    {
        cmd->add_option("--preset", preset, "named schedule (" + join_presets() + ")");
        cmd->add_option("--schedule", spec, "schedule JSON, inline or a file path");
        cmd->add_option("--family", family, "constant | linear | cosine | power");
        cmd->add_option("--k-min", k_min);
        cmd->add_option("--k-max,--k", k_max);
        cmd->add_option("--length", length, "sequence length L (overrides a preset's)");
        cmd->add_option("--alpha", alpha, "power-schedule exponent");
    }

    bool given() const { return !preset.empty() || !spec.empty() || !family.empty(); }

    Schedule resolve() const
    {
        const int sources = !preset.empty() + !spec.empty() + !family.empty();
        if (sources == 0)
            throw UsageError("a schedule is required: --preset, --schedule or --family");
        if (sources > 1)
            throw UsageError("give only one of --preset, --schedule, --family");
        Schedule s;
        if (!preset.empty()) {
            try {
                s = vcq::preset(preset);
            } catch (const ConfigError& e) {
                throw UsageError(e.what());
            }
            if (length)
                s.length = *length;
        } else if (!spec.empty()) {
            s = schedule_from_json(load_json_arg(spec, "schedule"));
        } else {
            if (!k_max || !length)
                throw UsageError("--family needs --k-max and --length");
            s.family = family_from_string(family);
            s.k_max = *k_max;
            s.length = *length;
            if (s.family == Family::Constant) {
                s.k_min = k_min.value_or(*k_max);
            } else {
                if (!k_min)
                    throw UsageError("--family " + family + " needs --k-min");
                s.k_min = *k_min;
            }
            if (s.family == Family::Power) {
                if (!alpha)
                    throw UsageError("--family power needs --alpha");
                s.alpha = alpha;
            }
        }
        s.validate();
        return s;
    }

    static std::string join_presets()
    {
        std::string out;
        for (const auto& n : preset_names())
            out += (out.empty() ? "" : ", ") + n;
        return out;
    }
};

struct DatasetArgs {
    SyntheticSpec spec;
    std::uint32_t patch_size = 4;
    std::uint32_t dim = 8;

    void add_to(CLI::App* cmd)
    {
        cmd->add_option("--classes", spec.n_classes)->capture_default_str();
        cmd->add_option("--per-class", spec.n_per_class)->capture_default_str();
        cmd->add_option("--image-size", spec.image_size)->capture_default_str();
        cmd->add_option("--noise", spec.noise)->capture_default_str();
        cmd->add_option("--patch-size", patch_size)->capture_default_str();
        cmd->add_option("--dim", dim)->capture_default_str();
    }

    // Checked before any work so a bad flag set fails fast.
    void check(const Schedule& s) const
    {
        if (patch_size == 0 || spec.image_size % patch_size != 0)
            throw UsageError("--image-size must be a multiple of --patch-size");
        const std::uint32_t side = spec.image_size / patch_size;
        if (side * side != s.length)
            throw UsageError("schedule length " + std::to_string(s.length) + " does not match the " +
                             std::to_string(side * side) + " patches per image");
    }

    /// Same derivation as the experiment runner, so artifacts line up.
    std::pair<ImageSet, LinearEncoder> build(std::uint64_t seed) const
    {
        SyntheticSpec sp = spec;
        sp.seed = stage_seed::dataset(seed);
        auto images = generate_dataset(sp);
        auto encoder = fit_encoder(images, patch_size, dim);
        return {std::move(images), std::move(encoder)};
    }
};

std::uint64_t require_seed(const Globals& g, const char* cmd)
{
    if (!g.seed)
        throw UsageError(std::string(cmd) + " is randomized and requires --seed");
    return *g.seed;
}

const std::string& require_out(const Globals& g, const char* cmd)
{
    if (g.out.empty())
        throw UsageError(std::string(cmd) + " requires --out");
    return g.out;
}

void emit(const Globals& g, std::ostream& out, const std::string& text)
{
    if (!g.out.empty())
        io::write_file_atomic(g.out, text);
    else
        out << text;
}

json threshold_json(const boost::multiprecision::cpp_int& v)
{
    if (v <= std::numeric_limits<std::uint64_t>::max())
        return v.convert_to<std::uint64_t>();
    return v.str();
}

std::pair<std::uint32_t, std::uint32_t> parse_range(const std::string& text)
{
    try {
        const auto dots = text.find("..");
        std::size_t used = 0;
        if (dots == std::string::npos) {
            const auto m = std::stoul(text, &used);
            if (used != text.size() || m > 64)
                throw std::invalid_argument(text);
            return {static_cast<std::uint32_t>(m), static_cast<std::uint32_t>(m)};
        }
        const auto lo = std::stoul(text.substr(0, dots), &used);
        if (used != dots)
            throw std::invalid_argument(text);
        const auto rest = text.substr(dots + 2);
        const auto hi = std::stoul(rest, &used);
        if (used != rest.size() || hi < lo || hi > 64)
            throw std::invalid_argument(text);
        return {static_cast<std::uint32_t>(lo), static_cast<std::uint32_t>(hi)};
    } catch (const std::logic_error&) {
        throw UsageError("--thresholds expects M or A..B with A <= B <= 64, got '" + text + "'");
    }
}

// ---- subcommands --------------------------------------------------------

void cmd_schedule(const Globals& g, const ScheduleArgs& sa, std::uint64_t n, std::uint64_t pixels, bool csv,
                  std::ostream& out)
{
    if (!sa.given()) {
        if (csv)
            throw UsageError("--csv needs a single schedule");
        json rows = json::array();
        std::ostringstream text;
        text << "name        family   k_min  k_max    L   mean_K     bpp      total_bits  tstar_vcq\n";
        for (const auto& name : preset_names()) {
            const auto s = preset(name);
            const auto r = capacity_report(s, n, pixels);
            auto j = capacity_summary_json(s, r);
            j["name"] = name;
            rows.push_back(j);
            text << std::left << std::setw(12) << name << std::setw(9) << to_string(s.family) << std::right
                 << std::setw(5) << s.k_min << std::setw(7) << s.k_max << std::setw(5) << s.length << std::setw(9)
                 << fixed(r.mean_codebook, 2) << std::setw(9) << fixed(r.bpp, 5) << std::setw(12)
                 << fixed(r.cumulative.back(), 2) << std::setw(11) << r.tstar_vcq << "\n";
        }
        emit(g, out, g.json ? json{{"n_samples", n}, {"pixel_count", pixels}, {"schedules", rows}}.dump(2) + "\n"
                            : text.str());
        return;
    }
    const auto s = sa.resolve();
    const auto r = capacity_report(s, n, pixels);
    if (csv) {
        emit(g, out, capacity_csv(r));
        return;
    }
    if (g.json) {
        emit(g, out, capacity_summary_json(s, r).dump(2) + "\n");
        return;
    }
    std::ostringstream text;
    text << "family      " << to_string(s.family) << (s.alpha ? " (alpha " + fixed(*s.alpha, 3) + ")" : "") << "\n"
         << "k_min       " << s.k_min << "\n"
         << "k_max       " << s.k_max << "\n"
         << "length      " << s.length << "\n"
         << "mean_K      " << fixed(r.mean_codebook, 2) << "\n"
         << "bpp         " << fixed(r.bpp, 5) << "\n"
         << "total_bits  " << fixed(r.cumulative.back(), 4) << "\n"
         << "tstar_vcq   " << r.tstar_vcq << "  (N = " << n << ")\n";
    emit(g, out, text.str());
}

void cmd_tstar(const Globals& g, std::optional<std::uint64_t> n, std::uint64_t k, const std::string& thresholds,
               std::ostream& out)
{
    if (k < 2)
        throw UsageError("--k must be >= 2");
    if (n) {
        const auto t = tstar_uniform(*n, k);
        emit(g, out,
             g.json ? json{{"n_samples", *n}, {"k", k}, {"tstar", t}}.dump(2) + "\n"
                    : "tstar " + std::to_string(t) + "  (N = " + std::to_string(*n) + ", K = " + std::to_string(k) +
                          ")\n");
        return;
    }
    const auto [lo, hi] = parse_range(thresholds.empty() ? "2..5" : thresholds);
    if (lo < 1)
        throw UsageError("threshold index m must be >= 1");

    json j = {{"k", k}, {"log2_k", std::log2(static_cast<double>(k))}};
    std::ostringstream text;
    text << "K = " << k << "\n";
    if (thresholds.empty()) {
        json rows = json::array();
        text << "dataset          N            log2_N  tstar\n";
        for (const auto& d : reference_datasets()) {
            const auto t = tstar_uniform(d.n_samples, k);
            const double l = std::log2(static_cast<double>(d.n_samples));
            rows.push_back({{"name", d.name}, {"n_samples", d.n_samples}, {"log2_n", l}, {"tstar", t}});
            text << std::left << std::setw(17) << d.name << std::setw(13) << d.n_samples << std::right
                 << std::setw(6) << fixed(l, 1) << std::setw(7) << t << "\n";
        }
        j["datasets"] = rows;
    }
    json rows = json::array();
    text << "m   N_m = K^(m-1)\n";
    for (std::uint32_t m = lo; m <= hi; ++m) {
        const auto v = data_threshold(k, m);
        rows.push_back({{"m", m}, {"n_m", threshold_json(v)}});
        text << std::left << std::setw(4) << m << v.str() << "\n";
    }
    j["thresholds"] = rows;
    emit(g, out, g.json ? j.dump(2) + "\n" : text.str());
}

void cmd_fit(const Globals& g, const ScheduleArgs& sa, const DatasetArgs& da, std::uint32_t epochs, double decay,
             std::ostream& out)
{
    const auto seed = require_seed(g, "fit");
    const auto& path = require_out(g, "fit");
    const auto s = sa.resolve();
    da.check(s);
    const auto [images, encoder] = da.build(seed);
    const auto latents = encode_dataset(images, encoder);
    FitOptions opt;
    opt.k_max = s.k_max;
    opt.dim = da.dim;
    opt.epochs = epochs;
    opt.decay = decay;
    opt.seed = stage_seed::codebook(seed);
    const auto codebook = fit_codebook(latents, s, opt);
    save_codebook(codebook, path);
    const json j = {{"codebook", path}, {"k_max", codebook.k_max()}, {"dim", codebook.dim()},
                    {"n_sequences", latents.size()}};
    out << (g.json ? j.dump(2) + "\n"
                   : "codebook " + std::to_string(codebook.k_max()) + " x " + std::to_string(codebook.dim()) +
                         " fitted on " + std::to_string(latents.size()) + " sequences -> " + path + "\n");
}

void cmd_tokenize(const Globals& g, const ScheduleArgs& sa, const DatasetArgs& da, const std::string& codebook_path,
                  std::ostream& out)
{
    const auto seed = require_seed(g, "tokenize");
    const auto& path = require_out(g, "tokenize");
    const auto s = sa.resolve();
    da.check(s);
    const auto codebook = load_codebook(codebook_path);
    if (codebook.k_max() < s.k_max || codebook.dim() != da.dim)
        throw InputError("codebook is " + std::to_string(codebook.k_max()) + " x " + std::to_string(codebook.dim()) +
                         ", schedule/encoder need " + std::to_string(s.k_max) + " x " + std::to_string(da.dim));
    const auto [images, encoder] = da.build(seed);
    const auto corpus = tokenize_dataset(images, encoder, s, codebook);
    const auto rec = reconstruction_metrics(images, corpus, encoder, codebook);
    save_corpus(corpus, path);
    const json j = {{"corpus", path}, {"n_samples", corpus.n_samples}, {"length", corpus.length},
                    {"mse", rec.mse}, {"psnr", std::isinf(rec.psnr) ? json("inf") : json(rec.psnr)}};
    out << (g.json ? j.dump(2) + "\n"
                   : std::to_string(corpus.n_samples) + " sequences of length " + std::to_string(corpus.length) +
                         " -> " + path + "  (psnr " + fixed(rec.psnr, 3) + " dB)\n");
}

void cmd_analyze(const Globals& g, const ScheduleArgs& sa, const std::string& corpus_path, double threshold,
                 std::ostream& out)
{
    const auto s = sa.resolve();
    if (!(threshold > 0.0))
        throw UsageError("--threshold must be positive");
    const auto corpus = load_corpus(corpus_path);
    const auto p = analyze_corpus(corpus, s, threshold);
    emit(g, out, g.json ? profile_summary_json(p).dump(2) + "\n" : profile_csv(p));
}

void cmd_generate(const Globals& g, const ScheduleArgs& sa, const std::string& corpus_path,
                  const std::string& policy_arg, const std::string& policy_preset, std::uint32_t per_class,
                  std::uint32_t max_order, double smoothing, std::ostream& out)
{
    const auto seed = require_seed(g, "generate");
    const auto& path = require_out(g, "generate");
    const auto s = sa.resolve();
    if (!policy_arg.empty() && !policy_preset.empty())
        throw UsageError("give only one of --policy, --policy-preset");
    GuidancePolicy policy;
    policy.schedule = s;
    if (!policy_preset.empty())
        policy = guidance_preset(policy_preset, s);
    else if (!policy_arg.empty())
        policy = policy_from_json(load_json_arg(policy_arg, "policy"), s);
    if (max_order > kMaxContextOrder)
        throw UsageError("--max-order must be <= " + std::to_string(kMaxContextOrder));

    const auto training = load_corpus(corpus_path);
    const auto model = fit_counts(training, s, max_order, smoothing);
    const auto generated = sample_corpus(model, policy, per_class, seed);
    save_corpus(generated, path);
    const auto mem = memorization_report(generated, training);
    const json j = {{"corpus", path},
                    {"n_samples", generated.n_samples},
                    {"policy", to_json(policy)},
                    {"exact_match_rate", mem.exact_match_rate},
                    {"mean_longest_prefix", mem.mean_longest_prefix}};
    out << (g.json ? j.dump(2) + "\n"
                   : std::to_string(generated.n_samples) + " samples -> " + path + "  (exact match " +
                         fixed(mem.exact_match_rate, 4) + ", mean longest prefix " +
                         fixed(mem.mean_longest_prefix, 3) + ")\n");
}

void cmd_memorization(const Globals& g, const std::string& generated_path, const std::string& training_path,
                      std::ostream& out)
{
    const auto generated = load_corpus(generated_path);
    const auto training = load_corpus(training_path);
    const auto m = memorization_report(generated, training);
    const json j = {{"exact_match_rate", m.exact_match_rate},
                    {"mean_longest_prefix", m.mean_longest_prefix},
                    {"n_generated", generated.n_samples},
                    {"n_training", training.n_samples}};
    emit(g, out,
         g.json ? j.dump(2) + "\n"
                : "exact_match_rate     " + fixed(m.exact_match_rate, 6) + "\nmean_longest_prefix  " +
                      fixed(m.mean_longest_prefix, 6) + "\n");
}

void cmd_experiment(const Globals& g, const std::string& config_path, std::ostream& out)
{
    const auto seed = require_seed(g, "experiment");
    const auto& dir = require_out(g, "experiment");
    json j = config_path.empty() ? json::object() : load_json_arg(config_path, "experiment config");
    if (!j.is_object())
        throw ConfigError("experiment config must be a JSON object");
    j["seed"] = seed;
    const auto config = experiment_config_from_json(j);
    const auto report = run_cliff_experiment(config);
    write_experiment(report, dir);
    const auto summary = report.summary();
    if (g.json) {
        out << summary.dump(2) << "\n";
        return;
    }
    out << "schedule      cliff  tstar  joint_bits   psnr_dB  exact_match  longest_prefix\n";
    for (const auto& r : report.results)
        out << std::left << std::setw(14) << r.name << std::right << std::setw(5) << r.entropy.cliff_position
            << std::setw(7) << r.tstar_analytic << std::setw(12) << fixed(r.entropy.joint_bits, 4) << std::setw(10)
            << fixed(r.reconstruction.psnr, 3) << std::setw(13) << fixed(r.memorization.exact_match_rate, 4)
            << std::setw(16) << fixed(r.memorization.mean_longest_prefix, 3) << "\n";
    out << "report -> " << dir << "\n";
}

} // namespace

const std::vector<ReferenceDataset>& reference_datasets()
{
    static const std::vector<ReferenceDataset> table = {
        {"CIFAR-10/100", 50'000},          {"COCO", 118'287},
        {"ImageNet-1K", 1'281'167},        {"CC12M", 12'000'000},
        {"LAION-400M", 400'000'000},       {"LAION-5B", 5'000'000'000},
    };
    return table;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err)
{
    CLI::App app{"Variable-codebook-size quantization lab", "vcq"};
    app.require_subcommand(1);
    app.fallthrough();

    Globals g;
    app.add_option("--seed", g.seed, "seed for randomized commands");
    app.add_flag("--json", g.json, "print JSON instead of text");
    app.add_option("--out", g.out, "output file or directory");

    ScheduleArgs sched_args, fit_sched, tok_sched, ana_sched, gen_sched;
    DatasetArgs fit_data, tok_data;

    auto* schedule = app.add_subcommand("schedule", "capacity summary of a schedule, or the preset table");
    sched_args.add_to(schedule);
    std::uint64_t sched_n = 1'281'167;
    std::uint64_t pixels = kDefaultPixelCount;
    bool csv = false;
    schedule->add_option("--n", sched_n, "dataset size for t*")->capture_default_str();
    schedule->add_option("--pixels", pixels, "pixels per image for bpp")->capture_default_str();
    schedule->add_flag("--csv", csv, "per-position curve as CSV");

    auto* tstar = app.add_subcommand("tstar", "cliff position of a constant codebook and data thresholds");
    std::optional<std::uint64_t> tstar_n;
    std::uint64_t tstar_k = 16384;
    std::string thresholds;
    tstar->add_option("--n", tstar_n, "single dataset size");
    tstar->add_option("--k", tstar_k, "codebook size")->capture_default_str();
    tstar->add_option("--thresholds", thresholds, "range of m for N_m = K^(m-1), e.g. 2..5");

    auto* fit = app.add_subcommand("fit", "fit a shared codebook on the synthetic image set");
    fit_sched.add_to(fit);
    fit_data.add_to(fit);
    std::uint32_t epochs = 20;
    double decay = 0.99;
    fit->add_option("--epochs", epochs)->capture_default_str();
    fit->add_option("--decay", decay)->capture_default_str();

    auto* tokenize = app.add_subcommand("tokenize", "quantize the synthetic image set into a token corpus");
    tok_sched.add_to(tokenize);
    tok_data.add_to(tokenize);
    std::string tok_codebook;
    tokenize->add_option("--codebook", tok_codebook, "codebook file")->required();

    auto* analyze = app.add_subcommand("analyze", "per-position conditional entropy profile of a corpus");
    ana_sched.add_to(analyze);
    std::string ana_corpus;
    double threshold = kDefaultCliffThreshold;
    analyze->add_option("--corpus", ana_corpus, "token corpus file")->required();
    analyze->add_option("--threshold", threshold, "cliff threshold in bits")->capture_default_str();

    auto* generate = app.add_subcommand("generate", "fit the count model on a corpus and sample from it");
    gen_sched.add_to(generate);
    std::string gen_corpus, policy_arg, policy_preset;
    std::uint32_t per_class = 20;
    std::uint32_t max_order = kDefaultMaxOrder;
    double smoothing = kDefaultSmoothing;
    generate->add_option("--corpus", gen_corpus, "labelled training corpus")->required();
    generate->add_option("--policy", policy_arg, "guidance policy JSON, inline or a file path");
    generate->add_option("--policy-preset", policy_preset, "named guidance setting");
    generate->add_option("--samples-per-class", per_class)->capture_default_str();
    generate->add_option("--max-order", max_order)->capture_default_str();
    generate->add_option("--smoothing", smoothing)->capture_default_str();

    auto* memorization = app.add_subcommand("memorization", "exact-match and shared-prefix statistics");
    std::string mem_generated, mem_training;
    memorization->add_option("--generated", mem_generated)->required();
    memorization->add_option("--training", mem_training)->required();

    auto* experiment = app.add_subcommand("experiment", "run the cliff experiment and write a report directory");
    std::string config_path;
    experiment->add_option("--config", config_path, "experiment config JSON, inline or a file path");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*schedule)
            cmd_schedule(g, sched_args, sched_n, pixels, csv, out);
        else if (*tstar)
            cmd_tstar(g, tstar_n, tstar_k, thresholds, out);
        else if (*fit)
            cmd_fit(g, fit_sched, fit_data, epochs, decay, out);
        else if (*tokenize)
            cmd_tokenize(g, tok_sched, tok_data, tok_codebook, out);
        else if (*analyze)
            cmd_analyze(g, ana_sched, ana_corpus, threshold, out);
        else if (*generate)
            cmd_generate(g, gen_sched, gen_corpus, policy_arg, policy_preset, per_class, max_order, smoothing, out);
        else if (*memorization)
            cmd_memorization(g, mem_generated, mem_training, out);
        else if (*experiment)
            cmd_experiment(g, config_path, out);
        return 0;
    } catch (const UsageError& e) {
        err << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    }
}

} // namespace vcq
