#include "vcq/toylab.hpp"

#include "vcq/binary_io.hpp"
#include "vcq/random.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <numbers>
#include <set>

namespace vcq {

namespace {

struct Blob {
    double cx, cy, sigma, amp;
};

struct ClassPattern {
    std::vector<Blob> blobs;
    double fx, fy, phase, grating;
};

double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

double gaussian(Rng& rng)
{
    const double u1 = 1.0 - uniform01(rng); // (0, 1]
    const double u2 = uniform01(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

ClassPattern class_pattern(std::uint64_t seed, std::uint32_t c, double size)
{
    Rng rng(mix_seed(seed, c));
    ClassPattern p;
    const int n_blobs = 2 + static_cast<int>(uniform_index(rng, 3));
    for (int b = 0; b < n_blobs; ++b)
        p.blobs.push_back({uniform(rng, 0.15, 0.85) * size, uniform(rng, 0.15, 0.85) * size,
                           uniform(rng, 0.06, 0.2) * size, uniform(rng, 0.25, 0.7)});
    p.fx = uniform(rng, -2.0, 2.0) / size;
    p.fy = uniform(rng, -2.0, 2.0) / size;
    p.phase = uniform(rng, 0.0, 2.0 * std::numbers::pi);
    p.grating = uniform(rng, 0.05, 0.15);
    return p;
}

bool safe_name(const std::string& name)
{
    if (name.empty())
        return false;
    return std::all_of(name.begin(), name.end(), [](char ch) {
        return std::isalnum(static_cast<unsigned char>(ch)) || ch == '-' || ch == '_' || ch == '.';
    });
}

std::uint32_t sequence_length(std::uint32_t image_size, std::uint32_t patch_size)
{
    if (patch_size == 0 || image_size % patch_size != 0)
        throw ConfigError("image size " + std::to_string(image_size) + " is not divisible by patch size " +
                          std::to_string(patch_size));
    const std::uint32_t side = image_size / patch_size;
    return side * side;
}

TokenCorpus tokenize_latents(const std::vector<Matrix>& latents, const std::vector<std::uint32_t>& labels,
                             const Schedule& schedule, const Codebook& codebook)
{
    TokenCorpus corpus(schedule.length, schedule.k_max);
    corpus.labels.emplace();
    corpus.tokens.reserve(latents.size() * schedule.length);
    for (std::size_t i = 0; i < latents.size(); ++i)
        corpus.push_back(quantize_sequence(latents[i], schedule, codebook).tokens, labels[i]);
    return corpus;
}

template <class F>
auto run_stage(const std::string& stage, F&& fn)
{
    try {
        return fn();
    } catch (const StageError&) {
        throw;
    } catch (const std::exception& e) {
        throw StageError(stage, e.what());
    }
}

nlohmann::json psnr_json(double psnr)
{
    if (std::isinf(psnr))
        return "inf";
    return psnr;
}

} // namespace

ImageSet generate_dataset(const SyntheticSpec& spec)
{
    if (spec.n_classes == 0 || spec.image_size == 0)
        throw ConfigError("n_classes and image_size must be positive");
    if (!(spec.noise >= 0.0) || !std::isfinite(spec.noise))
        throw ConfigError("noise must be a finite non-negative number");

    const std::uint32_t s = spec.image_size;
    const double size = s;
    std::vector<ClassPattern> patterns;
    for (std::uint32_t c = 0; c < spec.n_classes; ++c)
        patterns.push_back(class_pattern(spec.seed, c, size));

    ImageSet out;
    out.image_size = s;
    const std::size_t n = static_cast<std::size_t>(spec.n_classes) * spec.n_per_class;
    out.pixels.reserve(n * s * s);
    out.labels.reserve(n);

    for (std::uint32_t c = 0; c < spec.n_classes; ++c) {
        const auto& p = patterns[c];
        for (std::uint32_t k = 0; k < spec.n_per_class; ++k) {
            Rng rng(mix_seed(spec.seed ^ 0xA5A5A5A5ULL, out.labels.size()));
            const double dx = uniform(rng, -0.08, 0.08) * size;
            const double dy = uniform(rng, -0.08, 0.08) * size;
            const double background = uniform(rng, 0.05, 0.25);
            const double phase = p.phase + uniform(rng, -0.5, 0.5);
            std::vector<double> amps;
            for (std::size_t b = 0; b < p.blobs.size(); ++b)
                amps.push_back(p.blobs[b].amp * uniform(rng, 0.7, 1.3));

            for (std::uint32_t y = 0; y < s; ++y) {
                for (std::uint32_t x = 0; x < s; ++x) {
                    double v = background;
                    for (std::size_t b = 0; b < p.blobs.size(); ++b) {
                        const auto& blob = p.blobs[b];
                        const double rx = x - blob.cx - dx;
                        const double ry = y - blob.cy - dy;
                        v += amps[b] * std::exp(-(rx * rx + ry * ry) / (2.0 * blob.sigma * blob.sigma));
                    }
                    v += p.grating * std::sin(2.0 * std::numbers::pi * (p.fx * x + p.fy * y) + phase);
                    v += spec.noise * gaussian(rng);
                    out.pixels.push_back(static_cast<float>(std::clamp(v, 0.0, 1.0)));
                }
            }
            out.labels.push_back(c);
        }
    }
    return out;
}

std::vector<float> LinearEncoder::encode_patch(std::span<const float> patch) const
{
    const std::uint32_t p = patch_dim();
    if (patch.size() != p)
        throw ShapeError("patch has " + std::to_string(patch.size()) + " values, encoder expects " +
                         std::to_string(p));
    std::vector<float> z(dim);
    for (std::uint32_t j = 0; j < dim; ++j) {
        double acc = 0.0;
        for (std::uint32_t i = 0; i < p; ++i)
            acc += (patch[i] - mean[i]) * projection[i * dim + j];
        z[j] = static_cast<float>(acc);
    }
    return z;
}

std::vector<double> LinearEncoder::decode_patch(std::span<const float> latent) const
{
    if (latent.size() != dim)
        throw ShapeError("latent has " + std::to_string(latent.size()) + " values, encoder expects " +
                         std::to_string(dim));
    const std::uint32_t p = patch_dim();
    std::vector<double> x(mean);
    for (std::uint32_t i = 0; i < p; ++i)
        for (std::uint32_t j = 0; j < dim; ++j)
            x[i] += projection[i * dim + j] * latent[j];
    return x;
}

std::vector<std::vector<float>> extract_patches(std::span<const float> image, std::uint32_t image_size,
                                                std::uint32_t patch_size)
{
    sequence_length(image_size, patch_size);
    if (image.size() != static_cast<std::size_t>(image_size) * image_size)
        throw ShapeError("image buffer does not match image size");
    const std::uint32_t side = image_size / patch_size;
    std::vector<std::vector<float>> patches;
    patches.reserve(static_cast<std::size_t>(side) * side);
    for (std::uint32_t py = 0; py < side; ++py) {
        for (std::uint32_t px = 0; px < side; ++px) {
            std::vector<float> patch;
            patch.reserve(static_cast<std::size_t>(patch_size) * patch_size);
            for (std::uint32_t y = 0; y < patch_size; ++y)
                for (std::uint32_t x = 0; x < patch_size; ++x)
                    patch.push_back(image[(py * patch_size + y) * image_size + px * patch_size + x]);
            patches.push_back(std::move(patch));
        }
    }
    return patches;
}

LinearEncoder fit_encoder(const ImageSet& images, std::uint32_t patch_size, std::uint32_t dim)
{
    const std::uint32_t per_image = sequence_length(images.image_size, patch_size);
    const std::uint32_t p = patch_size * patch_size;
    if (dim == 0 || dim > p)
        throw ConfigError("encoder dim must be in [1, " + std::to_string(p) + "], got " + std::to_string(dim));
    const std::size_t n_patches = images.size() * per_image;
    if (n_patches < dim)
        throw InputError("need at least " + std::to_string(dim) + " patches, have " + std::to_string(n_patches));

    Eigen::VectorXd mean = Eigen::VectorXd::Zero(p);
    Eigen::MatrixXd scatter = Eigen::MatrixXd::Zero(p, p);
    Eigen::MatrixXd block(p, per_image);
    for (std::size_t i = 0; i < images.size(); ++i) {
        const auto patches = extract_patches(images.image(i), images.image_size, patch_size);
        for (std::uint32_t k = 0; k < per_image; ++k)
            for (std::uint32_t r = 0; r < p; ++r)
                block(r, k) = patches[k][r];
        mean += block.rowwise().sum();
        scatter.noalias() += block * block.transpose();
    }
    const double n = static_cast<double>(n_patches);
    mean /= n;
    const Eigen::MatrixXd cov = scatter / n - mean * mean.transpose();

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
    if (solver.info() != Eigen::Success)
        throw InputError("eigen-decomposition of the patch covariance failed");

    LinearEncoder enc;
    enc.patch_size = patch_size;
    enc.dim = dim;
    enc.mean.assign(mean.data(), mean.data() + p);
    enc.projection.assign(static_cast<std::size_t>(p) * dim, 0.0);
    // Eigenvalues come out ascending; take the last `dim` columns in reverse.
    for (std::uint32_t j = 0; j < dim; ++j) {
        const Eigen::Index col = static_cast<Eigen::Index>(p - 1 - j);
        Eigen::VectorXd v = solver.eigenvectors().col(col);
        for (std::uint32_t i = 0; i < p; ++i) {
            if (std::abs(v(i)) > 1e-12) {
                if (v(i) < 0)
                    v = -v;
                break;
            }
        }
        for (std::uint32_t i = 0; i < p; ++i)
            enc.projection[i * dim + j] = v(i);
        enc.eigenvalues.push_back(std::max(0.0, solver.eigenvalues()(col)));
    }
    return enc;
}

Matrix encode_image(std::span<const float> image, std::uint32_t image_size, const LinearEncoder& encoder)
{
    const auto patches = extract_patches(image, image_size, encoder.patch_size);
    Matrix out(patches.size(), encoder.dim);
    for (std::size_t t = 0; t < patches.size(); ++t) {
        const auto z = encoder.encode_patch(patches[t]);
        std::copy(z.begin(), z.end(), out.row(t).begin());
    }
    return out;
}

std::vector<Matrix> encode_dataset(const ImageSet& images, const LinearEncoder& encoder)
{
    std::vector<Matrix> out;
    out.reserve(images.size());
    for (std::size_t i = 0; i < images.size(); ++i)
        out.push_back(encode_image(images.image(i), images.image_size, encoder));
    return out;
}

std::vector<double> decode_image(const Matrix& latents, std::uint32_t image_size, const LinearEncoder& encoder)
{
    const std::uint32_t length = sequence_length(image_size, encoder.patch_size);
    if (latents.rows != length || latents.cols != encoder.dim)
        throw ShapeError("latents are " + std::to_string(latents.rows) + "x" + std::to_string(latents.cols) +
                         ", expected " + std::to_string(length) + "x" + std::to_string(encoder.dim));
    const std::uint32_t ps = encoder.patch_size;
    const std::uint32_t side = image_size / ps;
    std::vector<double> image(static_cast<std::size_t>(image_size) * image_size);
    for (std::uint32_t t = 0; t < length; ++t) {
        const auto patch = encoder.decode_patch(latents.row(t));
        const std::uint32_t py = t / side, px = t % side;
        for (std::uint32_t y = 0; y < ps; ++y)
            for (std::uint32_t x = 0; x < ps; ++x)
                image[(py * ps + y) * image_size + px * ps + x] = patch[y * ps + x];
    }
    return image;
}

TokenCorpus tokenize_dataset(const ImageSet& images, const LinearEncoder& encoder, const Schedule& schedule,
                             const Codebook& codebook)
{
    schedule.validate();
    const std::uint32_t length = sequence_length(images.image_size, encoder.patch_size);
    if (length != schedule.length)
        throw ConfigError("images give " + std::to_string(length) + " patches but the schedule has length " +
                          std::to_string(schedule.length));
    if (codebook.dim() != encoder.dim)
        throw ConfigError("codebook dim " + std::to_string(codebook.dim()) + " does not match encoder dim " +
                          std::to_string(encoder.dim));
    return tokenize_latents(encode_dataset(images, encoder), images.labels, schedule, codebook);
}

ReconstructionMetrics reconstruction_metrics(const ImageSet& images, const TokenCorpus& tokens,
                                             const LinearEncoder& encoder, const Codebook& codebook)
{
    if (tokens.n_samples != images.size())
        throw ShapeError("corpus has " + std::to_string(tokens.n_samples) + " rows for " +
                         std::to_string(images.size()) + " images");
    double sse = 0.0;
    for (std::size_t i = 0; i < images.size(); ++i) {
        const auto recon = decode_image(decode(tokens.row(i), codebook), images.image_size, encoder);
        const auto original = images.image(i);
        for (std::size_t k = 0; k < recon.size(); ++k) {
            const double e = recon[k] - original[k];
            sse += e * e;
        }
    }
    ReconstructionMetrics m;
    const double count = static_cast<double>(images.pixels.size());
    m.mse = count > 0 ? sse / count : 0.0;
    m.psnr = m.mse == 0.0 ? std::numeric_limits<double>::infinity() : 10.0 * std::log10(1.0 / m.mse);
    return m;
}

StageError::StageError(std::string stage, const std::string& what)
    : Error("stage '" + stage + "' failed: " + what), stage_(std::move(stage))
{
}

namespace stage_seed {
std::uint64_t dataset(std::uint64_t master) { return mix_seed(master, 1); }
std::uint64_t codebook(std::uint64_t master) { return mix_seed(master, 2); }
std::uint64_t sampling(std::uint64_t master) { return mix_seed(master, 3); }
} // namespace stage_seed

ExperimentConfig default_experiment_config(std::uint64_t seed)
{
    ExperimentConfig c;
    c.seed = seed;
    c.dataset.seed = stage_seed::dataset(seed);
    c.schedules = {{"constant", Schedule::constant(256, 64)}, {"cosine", Schedule::cosine(2, 256, 64)}};
    c.policy = {{"scale", 1.0}, {"ramp", "cosine"}, {"power", 1.0}, {"size_aware", true}, {"temperature", 1.0}};
    return c;
}

ExperimentConfig experiment_config_from_json(const nlohmann::json& j)
{
    if (!j.is_object())
        throw ConfigError("experiment config must be a JSON object");
    try {
        ExperimentConfig c = default_experiment_config(j.value("seed", std::uint64_t{0}));
        if (j.contains("dataset")) {
            const auto& d = j.at("dataset");
            c.dataset.n_classes = d.value("n_classes", c.dataset.n_classes);
            c.dataset.n_per_class = d.value("n_per_class", c.dataset.n_per_class);
            c.dataset.image_size = d.value("image_size", c.dataset.image_size);
            c.dataset.noise = d.value("noise", c.dataset.noise);
            c.dataset.seed = d.value("seed", c.dataset.seed);
        }
        if (j.contains("encoder")) {
            c.patch_size = j.at("encoder").value("patch_size", c.patch_size);
            c.dim = j.at("encoder").value("dim", c.dim);
        }
        if (j.contains("schedules")) {
            c.schedules.clear();
            for (const auto& s : j.at("schedules"))
                c.schedules.push_back({s.at("name").get<std::string>(), schedule_from_json(s)});
        }
        if (j.contains("codebook")) {
            c.epochs = j.at("codebook").value("epochs", c.epochs);
            c.decay = j.at("codebook").value("decay", c.decay);
        }
        if (j.contains("model")) {
            c.max_order = j.at("model").value("max_order", c.max_order);
            c.smoothing = j.at("model").value("smoothing", c.smoothing);
        }
        if (j.contains("policy"))
            c.policy = j.at("policy");
        if (j.contains("generation"))
            c.samples_per_class = j.at("generation").value("samples_per_class", c.samples_per_class);
        if (j.contains("analysis"))
            c.cliff_threshold = j.at("analysis").value("cliff_threshold", c.cliff_threshold);

        if (c.schedules.empty())
            throw ConfigError("experiment needs at least one schedule");
        std::set<std::string> names;
        for (const auto& s : c.schedules) {
            if (!safe_name(s.name))
                throw ConfigError("schedule name '" + s.name + "' must be non-empty and use [A-Za-z0-9._-]");
            if (!names.insert(s.name).second)
                throw ConfigError("duplicate schedule name '" + s.name + "'");
            policy_from_json(c.policy, s.schedule).validate();
        }
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad experiment config: ") + e.what());
    }
}

nlohmann::json to_json(const ExperimentConfig& c)
{
    nlohmann::json schedules = nlohmann::json::array();
    for (const auto& s : c.schedules) {
        auto js = to_json(s.schedule);
        js["name"] = s.name;
        schedules.push_back(js);
    }
    return {
        {"seed", c.seed},
        {"dataset",
         {{"n_classes", c.dataset.n_classes},
          {"n_per_class", c.dataset.n_per_class},
          {"image_size", c.dataset.image_size},
          {"noise", c.dataset.noise},
          {"seed", c.dataset.seed}}},
        {"encoder", {{"patch_size", c.patch_size}, {"dim", c.dim}}},
        {"schedules", schedules},
        {"codebook", {{"epochs", c.epochs}, {"decay", c.decay}}},
        {"model", {{"max_order", c.max_order}, {"smoothing", c.smoothing}}},
        {"policy", c.policy},
        {"generation", {{"samples_per_class", c.samples_per_class}}},
        {"analysis", {{"cliff_threshold", c.cliff_threshold}}},
    };
}

ExperimentReport run_cliff_experiment(const ExperimentConfig& config)
{
    ExperimentReport report;
    report.config = config;

    const auto images = run_stage("dataset", [&] { return generate_dataset(config.dataset); });
    const auto encoder = run_stage("encoder", [&] { return fit_encoder(images, config.patch_size, config.dim); });
    const auto latents = run_stage("encode", [&] { return encode_dataset(images, encoder); });
    const std::uint32_t length = sequence_length(images.image_size, config.patch_size);

    for (const auto& named : config.schedules) {
        const auto& s = named.schedule;
        const std::string tag = ":" + named.name;
        if (s.length != length)
            throw StageError("tokenize" + tag, "schedule length " + std::to_string(s.length) +
                                                   " does not match " + std::to_string(length) + " patches");
        ScheduleResult r;
        r.name = named.name;
        r.schedule = s;
        r.codebook = run_stage("codebook" + tag, [&] {
            FitOptions opt;
            opt.k_max = s.k_max;
            opt.dim = config.dim;
            opt.epochs = config.epochs;
            opt.decay = config.decay;
            opt.seed = stage_seed::codebook(config.seed);
            return fit_codebook(latents, s, opt);
        });
        run_stage("tokenize" + tag, [&] {
            r.corpus = TokenCorpus(s.length, s.k_max);
            r.corpus.labels.emplace();
            double codebook_term = 0.0;
            for (std::size_t i = 0; i < latents.size(); ++i) {
                const auto q = quantize_sequence(latents[i], s, r.codebook);
                const auto terms = vq_loss_terms(latents[i], q);
                codebook_term += terms.codebook_term;
                r.corpus.push_back(q.tokens, images.labels[i]);
            }
            // Both terms share the same forward value; they differ only in gradient routing.
            const double n = latents.empty() ? 1.0 : static_cast<double>(latents.size());
            r.vq_loss.codebook_term = codebook_term / n;
            r.vq_loss.commitment_term = codebook_term / n;
            return 0;
        });
        r.entropy = run_stage("analysis" + tag, [&] { return analyze_corpus(r.corpus, s, config.cliff_threshold); });
        r.reconstruction =
            run_stage("reconstruction" + tag, [&] { return reconstruction_metrics(images, r.corpus, encoder, r.codebook); });
        r.tstar_analytic = tstar_vcq(s, std::max<std::uint64_t>(1, r.corpus.n_samples));
        r.mean_codebook = capacity_report(s, std::max<std::uint64_t>(1, r.corpus.n_samples)).mean_codebook;
        const auto model = run_stage("model" + tag, [&] { return fit_counts(r.corpus, s, config.max_order, config.smoothing); });
        r.generated = run_stage("sampling" + tag, [&] {
            return sample_corpus(model, policy_from_json(config.policy, s), config.samples_per_class,
                                 stage_seed::sampling(config.seed));
        });
        r.memorization = run_stage("memorization" + tag, [&] { return memorization_report(r.generated, r.corpus); });
        report.results.push_back(std::move(r));
    }
    return report;
}

nlohmann::json ExperimentReport::summary() const
{
    nlohmann::json schedules = nlohmann::json::array();
    const ScheduleResult* baseline = nullptr;
    for (const auto& r : results) {
        if (!baseline && r.schedule.family == Family::Constant)
            baseline = &r;
        double mean_util = 0.0;
        for (double u : r.entropy.utilization)
            mean_util += u;
        if (!r.entropy.utilization.empty())
            mean_util /= static_cast<double>(r.entropy.utilization.size());
        schedules.push_back({
            {"name", r.name},
            {"schedule", to_json(r.schedule)},
            {"mean_codebook", r.mean_codebook},
            {"tstar_analytic", r.tstar_analytic},
            {"cliff_position", r.entropy.cliff_position},
            {"joint_bits", r.entropy.joint_bits},
            {"conditional_bits", r.entropy.conditional_bits},
            {"remaining_budget", r.entropy.remaining_budget},
            {"prop1_violations", r.entropy.prop1_violations},
            {"mean_utilization", mean_util},
            {"mse", r.reconstruction.mse},
            {"psnr", psnr_json(r.reconstruction.psnr)},
            {"vq_codebook_term", r.vq_loss.codebook_term},
            {"vq_commitment_term", r.vq_loss.commitment_term},
            {"exact_match_rate", r.memorization.exact_match_rate},
            {"mean_longest_prefix", r.memorization.mean_longest_prefix},
            {"generated_samples", r.generated.n_samples},
        });
    }

    nlohmann::json deltas = nlohmann::json::array();
    if (baseline) {
        for (const auto& r : results) {
            if (&r == baseline)
                continue;
            const double dpsnr = r.reconstruction.psnr - baseline->reconstruction.psnr;
            deltas.push_back({
                {"schedule", r.name},
                {"cliff_delta", static_cast<std::int64_t>(r.entropy.cliff_position) -
                                    static_cast<std::int64_t>(baseline->entropy.cliff_position)},
                {"joint_bits_delta", r.entropy.joint_bits - baseline->entropy.joint_bits},
                {"psnr_delta", std::isfinite(dpsnr) ? nlohmann::json(dpsnr) : nlohmann::json(nullptr)},
                {"exact_match_delta", r.memorization.exact_match_rate - baseline->memorization.exact_match_rate},
            });
        }
    }

    return {
        {"config", to_json(config)},
        {"psnr_peak", 1.0},
        {"n_samples", results.empty() ? 0 : results.front().corpus.n_samples},
        {"length", results.empty() ? 0 : results.front().schedule.length},
        {"schedules", schedules},
        {"baseline", baseline ? nlohmann::json(baseline->name) : nlohmann::json(nullptr)},
        {"deltas", deltas},
    };
}

void write_experiment(const ExperimentReport& report, const std::filesystem::path& dir)
{
    std::filesystem::create_directories(dir);
    for (const auto& r : report.results) {
        io::write_file_atomic(dir / ("entropy_" + r.name + ".csv"), profile_csv(r.entropy));
        save_corpus(r.corpus, dir / ("corpus_" + r.name + ".vcqt"));
        save_codebook(r.codebook, dir / ("codebook_" + r.name + ".vcqc"));
        save_corpus(r.generated, dir / ("generated_" + r.name + ".vcqt"));
    }
    io::write_file_atomic(dir / "report.json", report.summary().dump(2) + "\n");
}

} // namespace vcq
