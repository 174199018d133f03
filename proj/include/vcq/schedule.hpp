#pragma once

// Position -> codebook-size schedules and the capacity arithmetic built on them.
//
// Positions are 0-based throughout. K_t grows from k_min at t = 0 to k_max at
// t = L-1 following K_min + (K_max - K_min) * f(t / (L-1)), rounded half-up and
// clamped back into [k_min, k_max].

#include <boost/multiprecision/cpp_int.hpp>
#include <json.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace vcq {

enum class Family { Constant, Linear, Cosine, Power };

std::string_view to_string(Family family);
Family family_from_string(std::string_view name);

struct Schedule {
    Family family = Family::Constant;
    std::uint32_t k_min = 1;
    std::uint32_t k_max = 1;
    std::uint32_t length = 1;
    std::optional<double> alpha; // Power only

    /// Throws ConfigError when the invariants do not hold.
    void validate() const;

    static Schedule constant(std::uint32_t k, std::uint32_t length);
    static Schedule linear(std::uint32_t k_min, std::uint32_t k_max, std::uint32_t length);
    static Schedule cosine(std::uint32_t k_min, std::uint32_t k_max, std::uint32_t length);
    static Schedule power(std::uint32_t k_min, std::uint32_t k_max, std::uint32_t length, double alpha);

    bool operator==(const Schedule&) const = default;
};

/// Growth curve f(tau) on [0, 1]. Constant has no curve (always K_max).
double growth(const Schedule& schedule, double tau);

std::uint32_t codebook_size_at(const Schedule& schedule, std::uint32_t t);

/// All K_t for t in [0, L).
std::vector<std::uint32_t> codebook_sizes(const Schedule& schedule);

/// I(t) = sum_{i<t} log2 K_i, in bits. Valid for 0 <= t <= L.
double cumulative_capacity(const Schedule& schedule, std::uint32_t t);

/// ceil(log2 N / log2 K); 0 for N = 1.
std::uint32_t tstar_uniform(std::uint64_t n_samples, std::uint64_t k);

/// K^(m-1), exact.
boost::multiprecision::cpp_int data_threshold(std::uint64_t k, std::uint32_t m);

/// Smallest t with I(t) >= log2 N, or L + 1 when the sequence never gets there.
std::uint32_t tstar_vcq(const Schedule& schedule, std::uint64_t n_samples);

/// max(0, log2 N - I(t)) for t in [0, L).
std::vector<double> remaining_budget(const Schedule& schedule, std::uint64_t n_samples);

inline constexpr std::uint64_t kDefaultPixelCount = 256 * 256;

struct CapacityReport {
    std::vector<std::uint32_t> codebook_sizes;
    std::vector<double> bits_per_position;
    std::vector<double> cumulative; // L + 1 entries, cumulative[t] = I(t)
    std::vector<double> remaining_budget;
    double mean_codebook = 0.0;
    double bpp = 0.0;
    std::uint32_t tstar_vcq = 0;
    std::uint64_t n_samples = 0;
    std::uint64_t pixel_count = kDefaultPixelCount;
};

CapacityReport capacity_report(const Schedule& schedule, std::uint64_t n_samples,
                               std::uint64_t pixel_count = kDefaultPixelCount);

/// Curve as CSV: t, K_t, bits, cumulative_bits, remaining_budget.
std::string capacity_csv(const CapacityReport& report);
nlohmann::json capacity_summary_json(const Schedule& schedule, const CapacityReport& report);

nlohmann::json to_json(const Schedule& schedule);
Schedule schedule_from_json(const nlohmann::json& j);

/// Named parameterizations of the six reference schedules (L = 256):
/// constant16k, constant8k, linear, cosine, power2.5, cosine-l.
Schedule preset(std::string_view name);
const std::vector<std::string>& preset_names();

} // namespace vcq
