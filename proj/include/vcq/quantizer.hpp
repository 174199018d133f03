#pragma once

// Shared-codebook, prefix-restricted nearest-neighbour quantization.
//
// One table of k_max entries serves every position; position t may only pick
// from entries [0, K_t). Distances are squared Euclidean, ties go to the lowest
// index.
//
// Codebook file ("VCQC"): magic | version u16 | d u32 | k_max u32 | k_max*d f32,
// row-major, little-endian.

#include "vcq/corpus.hpp"
#include "vcq/matrix.hpp"
#include "vcq/schedule.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace vcq {

struct Codebook {
    Matrix entries; // k_max x d

    Codebook() = default;
    explicit Codebook(Matrix m);

    std::uint32_t dim() const { return static_cast<std::uint32_t>(entries.cols); }
    std::uint32_t k_max() const { return static_cast<std::uint32_t>(entries.rows); }
    std::span<const float> row(std::uint32_t i) const { return entries.row(i); }

    bool operator==(const Codebook&) const = default;
};

inline constexpr std::uint16_t kCodebookVersion = 1;

std::vector<char> serialize(const Codebook& codebook);
Codebook deserialize_codebook(std::span<const char> bytes);
void save_codebook(const Codebook& codebook, const std::filesystem::path& path);
Codebook load_codebook(const std::filesystem::path& path);

struct Assignment {
    std::uint32_t token = 0;
    double distance = 0.0;
};

Assignment quantize_position(std::span<const float> z, const Codebook& codebook, std::uint32_t k_t);

struct QuantizationResult {
    std::vector<std::uint32_t> tokens;
    Matrix quantized;
    std::vector<double> distances;
    /// entry - input. Adding it to the input (as a constant) gives the
    /// straight-through output.
    Matrix residuals;
};

QuantizationResult quantize_sequence(const Matrix& latents, const Schedule& schedule, const Codebook& codebook);

Matrix decode(std::span<const std::uint32_t> tokens, const Codebook& codebook);

struct VqLossTerms {
    double codebook_term = 0.0;   // mean ||sg(z) - e||^2
    double commitment_term = 0.0; // mean ||z - sg(e)||^2
};

VqLossTerms vq_loss_terms(const Matrix& latents, const QuantizationResult& result);

struct FitOptions {
    std::uint32_t k_max = 256;
    std::uint32_t dim = 8;
    std::uint32_t epochs = 20;
    double decay = 0.99;
    std::uint64_t seed = 0;
};

/// EMA k-means with prefix-constrained assignment. Every sequence must have
/// schedule.length rows and `dim` columns.
Codebook fit_codebook(std::span<const Matrix> latents, const Schedule& schedule, const FitOptions& options);

/// Distinct tokens observed at each position divided by K_t.
std::vector<double> utilization_profile(const TokenCorpus& corpus, const Schedule& schedule);

} // namespace vcq
