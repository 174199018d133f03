#pragma once

// Desk-scale end-to-end pipeline: procedural class-conditional images, a fixed
// PCA patch encoder, prefix-restricted quantization, then entropy, PSNR and
// memorization measurements per schedule.

#include "vcq/corpus.hpp"
#include "vcq/entropy.hpp"
#include "vcq/error.hpp"
#include "vcq/generation.hpp"
#include "vcq/matrix.hpp"
#include "vcq/quantizer.hpp"
#include "vcq/schedule.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace vcq {

struct SyntheticSpec {
    std::uint32_t n_classes = 10;
    std::uint32_t n_per_class = 200;
    std::uint32_t image_size = 32;
    double noise = 0.05; // std-dev of per-pixel Gaussian noise
    std::uint64_t seed = 0;
};

/// Single-channel images, pixels in [0, 1], stored image after image, row-major.
struct ImageSet {
    std::uint32_t image_size = 0;
    std::vector<float> pixels;
    std::vector<std::uint32_t> labels;

    std::size_t size() const { return labels.size(); }
    std::span<const float> image(std::size_t i) const
    {
        const std::size_t n = static_cast<std::size_t>(image_size) * image_size;
        return {pixels.data() + i * n, n};
    }

    bool operator==(const ImageSet&) const = default;
};

ImageSet generate_dataset(const SyntheticSpec& spec);

/// Fixed PCA basis over non-overlapping patches in raster order.
struct LinearEncoder {
    std::uint32_t patch_size = 0;
    std::uint32_t dim = 0;
    std::vector<double> mean;       // patch_size^2
    std::vector<double> projection; // patch_size^2 x dim, row-major, orthonormal columns
    std::vector<double> eigenvalues; // dim, descending

    std::uint32_t patch_dim() const { return patch_size * patch_size; }

    std::vector<float> encode_patch(std::span<const float> patch) const;
    std::vector<double> decode_patch(std::span<const float> latent) const;
};

/// Patches of one image in raster order, each flattened row-major.
std::vector<std::vector<float>> extract_patches(std::span<const float> image, std::uint32_t image_size,
                                                std::uint32_t patch_size);

LinearEncoder fit_encoder(const ImageSet& images, std::uint32_t patch_size, std::uint32_t dim);

/// L x d latents of one image.
Matrix encode_image(std::span<const float> image, std::uint32_t image_size, const LinearEncoder& encoder);
std::vector<Matrix> encode_dataset(const ImageSet& images, const LinearEncoder& encoder);
std::vector<double> decode_image(const Matrix& latents, std::uint32_t image_size, const LinearEncoder& encoder);

TokenCorpus tokenize_dataset(const ImageSet& images, const LinearEncoder& encoder, const Schedule& schedule,
                             const Codebook& codebook);

struct ReconstructionMetrics {
    double mse = 0.0;
    double psnr = 0.0; // dB against peak 1.0; +inf when mse == 0
};

ReconstructionMetrics reconstruction_metrics(const ImageSet& images, const TokenCorpus& tokens,
                                             const LinearEncoder& encoder, const Codebook& codebook);

/// Raised when a pipeline stage fails; the message names the stage.
class StageError : public Error {
public:
    StageError(std::string stage, const std::string& what);
    const std::string& stage() const { return stage_; }

private:
    std::string stage_;
};

struct NamedSchedule {
    std::string name;
    Schedule schedule;
};

struct ExperimentConfig {
    std::uint64_t seed = 0;
    SyntheticSpec dataset;
    std::uint32_t patch_size = 4;
    std::uint32_t dim = 8;
    std::vector<NamedSchedule> schedules;
    std::uint32_t epochs = 20;
    double decay = 0.99;
    std::uint32_t max_order = kDefaultMaxOrder;
    double smoothing = kDefaultSmoothing;
    nlohmann::json policy = nlohmann::json::object();
    std::uint32_t samples_per_class = 20;
    double cliff_threshold = kDefaultCliffThreshold;
};

/// 10 classes x 200 images of 32x32, 4x4 patches (L = 64), d = 8, k_max = 256,
/// Constant vs Cosine (K_min = 2).
ExperimentConfig default_experiment_config(std::uint64_t seed = 0);

/// Dataset seed is derived from the master seed unless the dataset block sets one.
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ExperimentConfig& config);

struct ScheduleResult {
    std::string name;
    Schedule schedule;
    Codebook codebook;
    TokenCorpus corpus;
    TokenCorpus generated;
    EntropyProfile entropy;
    ReconstructionMetrics reconstruction;
    MemorizationReport memorization;
    VqLossTerms vq_loss;
    std::uint32_t tstar_analytic = 0;
    double mean_codebook = 0.0;
};

struct ExperimentReport {
    ExperimentConfig config;
    std::vector<ScheduleResult> results;

    nlohmann::json summary() const;
};

ExperimentReport run_cliff_experiment(const ExperimentConfig& config);

/// report.json, entropy_<name>.csv, corpus_<name>.vcqt, codebook_<name>.vcqc,
/// generated_<name>.vcqt
void write_experiment(const ExperimentReport& report, const std::filesystem::path& dir);

/// Per-stage seeds derived from the master seed.
namespace stage_seed {
std::uint64_t dataset(std::uint64_t master);
std::uint64_t codebook(std::uint64_t master);
std::uint64_t sampling(std::uint64_t master);
} // namespace stage_seed

} // namespace vcq
