#pragma once

// Count-based class-conditional AR model over VCQ tokens, codebook-size-aware
// classifier-free guidance, and memorization diagnostics.

#include "vcq/corpus.hpp"
#include "vcq/schedule.hpp"

#include <json.hpp>

#include <array>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace vcq {

/// Logit value for tokens outside the position's candidate set. Never fed to
/// exp(); softmax skips it explicitly.
inline constexpr double kMaskedLogit = -std::numeric_limits<double>::infinity();

inline bool is_masked(double logit) { return logit == kMaskedLogit; }

enum class Ramp { None, CosinePower };

struct GuidancePolicy {
    double scale = 0.0;
    Ramp ramp = Ramp::None;
    double power = 1.0;
    bool size_aware = true;
    double temperature = 1.0;
    Schedule schedule;

    void validate() const;
};

/// s_t = s * ramp(t) * size_factor(t). The size factor is
/// (log2 K_t - log2 K_min) / (log2 K_max - log2 K_min), or 1 when the schedule
/// has a single size. ramp(t) = (1 - cos(pi * (t / (L-1))^p)) / 2 for CosinePower.
double size_aware_scale(const GuidancePolicy& policy, std::uint32_t t);

/// (1 + s) * cond - s * uncond, elementwise; masked in either input stays masked.
std::vector<double> apply_guidance(std::span<const double> cond, std::span<const double> uncond, double s);

/// {"scale", "ramp": "none"|"cosine", "power", "size_aware", "temperature"}; absent keys keep defaults.
GuidancePolicy policy_from_json(const nlohmann::json& j, const Schedule& schedule);
nlohmann::json to_json(const GuidancePolicy& policy);

/// Inference settings of the reference runs (cosine ramp). Names: constant16k,
/// constant8k, linear, cosine, power2.5, b-l, b-xl, l-b, l-l, l-xl, plus
/// "<name>-nocfg" for the unguided rows.
GuidancePolicy guidance_preset(std::string_view name, const Schedule& schedule);

inline constexpr std::uint32_t kMaxContextOrder = 8;

class CountModel {
public:
    struct Key {
        std::uint32_t label = 0; // kPooled for the class-agnostic table
        std::uint32_t position = 0;
        std::uint32_t order = 0;
        std::array<std::uint32_t, kMaxContextOrder> context{};

        bool operator==(const Key&) const = default;
    };

    struct KeyHash {
        std::size_t operator()(const Key& k) const noexcept;
    };

    struct Counts {
        std::uint64_t total = 0;
        std::vector<std::pair<std::uint32_t, std::uint64_t>> next; // sorted by token

        bool operator==(const Counts&) const = default;
    };

    static constexpr std::uint32_t kPooled = std::numeric_limits<std::uint32_t>::max();

    CountModel(Schedule schedule, std::uint32_t max_order, double smoothing);

    void add(std::span<const std::uint32_t> row, std::uint32_t label);

    /// Natural-log next-token probabilities over k_max slots; slots >= K_t masked.
    std::vector<double> logits(std::optional<std::uint32_t> label, std::span<const std::uint32_t> prefix,
                               std::uint32_t t) const;

    const Schedule& schedule() const { return schedule_; }
    std::uint32_t max_order() const { return max_order_; }
    double smoothing() const { return smoothing_; }
    std::uint32_t n_classes() const { return n_classes_; }
    std::size_t table_size() const { return table_.size(); }

    bool operator==(const CountModel&) const = default;

private:
    const Counts* find(std::uint32_t label, std::uint32_t t, std::uint32_t order,
                       std::span<const std::uint32_t> prefix) const;

    Schedule schedule_;
    std::vector<std::uint32_t> sizes_;
    std::uint32_t max_order_;
    double smoothing_;
    std::uint32_t n_classes_ = 0;
    std::unordered_map<Key, Counts, KeyHash> table_;
};

inline constexpr std::uint32_t kDefaultMaxOrder = 4;
inline constexpr double kDefaultSmoothing = 0.1;

/// Exact prefix counts for every (class, context) and pooled context, up to max_order.
CountModel fit_counts(const TokenCorpus& corpus, const Schedule& schedule,
                      std::uint32_t max_order = kDefaultMaxOrder, double smoothing = kDefaultSmoothing);

/// Draws one sequence. `label` = nullopt samples the pooled model without guidance.
std::vector<std::uint32_t> sample_sequence(const CountModel& model, std::optional<std::uint32_t> label,
                                           const GuidancePolicy& policy, std::uint64_t seed);

/// samples_per_class rows for each class, seeded per row by mix_seed(seed, row index).
TokenCorpus sample_corpus(const CountModel& model, const GuidancePolicy& policy, std::uint32_t samples_per_class,
                          std::uint64_t seed);

struct MemorizationReport {
    double exact_match_rate = 0.0;
    double mean_longest_prefix = 0.0;
};

MemorizationReport memorization_report(const TokenCorpus& generated, const TokenCorpus& training);

} // namespace vcq
