#pragma once

// Exact empirical per-position conditional entropy of a token corpus.
//
// Sequences are grouped by prefix x_<t by iterative refinement: at each
// position every live group is partitioned by its next token, and groups that
// become singletons are dropped (they contribute nothing from then on). Every
// entropy is then a function of integer group-size histograms,
//
//   H(x_t | x_<t) = (F_t - F_{t+1}) / N,   F_t = sum over prefix groups n log2 n,
//
// which makes the chain rule hold to rounding and lets independent estimators
// be compared bit for bit. Positions are 0-based; all logs are base 2.

#include "vcq/corpus.hpp"
#include "vcq/schedule.hpp"

#include <json.hpp>

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace vcq {

/// sum over groups of n log2 n, evaluated in ascending n so the result
/// depends only on the multiset of sizes.
double sum_n_log2_n(std::vector<std::uint64_t> group_sizes);

struct PrefixRefinement {
    std::vector<double> conditional_bits;    // L entries
    std::vector<double> prefix_concentration; // F_t / N for t in [0, L]
};

PrefixRefinement refine_prefixes(const TokenCorpus& corpus);

std::vector<double> conditional_entropy_profile(const TokenCorpus& corpus);

/// Entropy of the empirical distribution over whole rows.
double joint_entropy(const TokenCorpus& corpus);

struct Prop1Bounds {
    std::vector<double> prop1_bound; // max(0, log2 N - (t-1) log2 K), t 1-based
    std::optional<std::vector<double>> exact_bound; // min(log2 K_t, log2 N - H(x_<t)); needs a corpus
    bool non_uniform_schedule = false; // prop1 evaluated with K = k_max on a varying schedule
};

Prop1Bounds prop1_bounds(std::uint64_t n_samples, const Schedule& schedule);
Prop1Bounds prop1_bounds(const TokenCorpus& corpus, const Schedule& schedule);

inline constexpr double kDefaultCliffThreshold = 1.0;

/// Smallest t such that every entry from t on is below the threshold; L if
/// the last entry is not.
std::uint32_t cliff_position(std::span<const double> conditional_bits, double threshold = kDefaultCliffThreshold);

struct ChainRuleCheck {
    double sum_conditional = 0.0;
    double joint = 0.0;
    double max_abs_diff = 0.0;
};

ChainRuleCheck chain_rule_check(const TokenCorpus& corpus);

struct EntropyProfile {
    std::vector<double> conditional_bits;
    double joint_bits = 0.0;
    std::vector<double> remaining_budget;
    std::vector<double> prop1_bound;
    std::vector<double> exact_bound;
    bool prop1_non_uniform = false;
    std::uint32_t prop1_violations = 0; // positions where the measurement exceeds prop1_bound
    std::uint32_t cliff_position = 0;
    double cliff_threshold = kDefaultCliffThreshold;
    std::vector<double> utilization;
    std::uint64_t n_samples = 0;
};

/// Full analysis of a corpus tokenized under `schedule`.
EntropyProfile analyze_corpus(const TokenCorpus& corpus, const Schedule& schedule,
                              double threshold = kDefaultCliffThreshold);

/// t, H_bits, remaining_budget, prop1_bound, exact_bound, utilization
std::string profile_csv(const EntropyProfile& profile);
nlohmann::json profile_summary_json(const EntropyProfile& profile);

} // namespace vcq
