#include "vcq/schedule.hpp"

#include "vcq/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

namespace vcq {

namespace mp = boost::multiprecision;

std::string_view to_string(Family family)
{
    switch (family) {
    case Family::Constant: return "constant";
    case Family::Linear: return "linear";
    case Family::Cosine: return "cosine";
    case Family::Power: return "power";
    }
    return "unknown";
}

Family family_from_string(std::string_view name)
{
    if (name == "constant") return Family::Constant;
    if (name == "linear") return Family::Linear;
    if (name == "cosine") return Family::Cosine;
    if (name == "power") return Family::Power;
    throw ConfigError("unknown schedule family '" + std::string(name) + "'");
}

void Schedule::validate() const
{
    if (length < 1)
        throw ConfigError("schedule length must be >= 1");
    if (k_min < 1 || k_min > k_max)
        throw ConfigError("schedule requires 1 <= k_min <= k_max");
    if (family == Family::Power && (!alpha || !(*alpha > 0.0) || !std::isfinite(*alpha)))
        throw ConfigError("power schedule requires a positive alpha");
}

Schedule Schedule::constant(std::uint32_t k, std::uint32_t length)
{
    return {Family::Constant, k, k, length, std::nullopt};
}

Schedule Schedule::linear(std::uint32_t k_min, std::uint32_t k_max, std::uint32_t length)
{
    return {Family::Linear, k_min, k_max, length, std::nullopt};
}

Schedule Schedule::cosine(std::uint32_t k_min, std::uint32_t k_max, std::uint32_t length)
{
    return {Family::Cosine, k_min, k_max, length, std::nullopt};
}

Schedule Schedule::power(std::uint32_t k_min, std::uint32_t k_max, std::uint32_t length, double alpha)
{
    return {Family::Power, k_min, k_max, length, alpha};
}

double growth(const Schedule& schedule, double tau)
{
    switch (schedule.family) {
    case Family::Constant: return 1.0;
    case Family::Linear: return tau;
    case Family::Cosine: {
        // 1 - cos(x) = 2 sin^2(x/2); avoids cancellation near tau = 0.
        const double s = std::sin(std::numbers::pi * tau / 4.0);
        return 2.0 * s * s;
    }
    case Family::Power: return std::pow(tau, *schedule.alpha);
    }
    return 1.0;
}

std::uint32_t codebook_size_at(const Schedule& schedule, std::uint32_t t)
{
    schedule.validate();
    if (t >= schedule.length)
        throw RangeError("position " + std::to_string(t) + " outside schedule of length " +
                         std::to_string(schedule.length));
    if (schedule.family == Family::Constant)
        return schedule.k_max;
    if (schedule.length == 1)
        return schedule.k_max;

    const double tau = static_cast<double>(t) / static_cast<double>(schedule.length - 1);
    const double span = static_cast<double>(schedule.k_max - schedule.k_min);
    const double k = static_cast<double>(schedule.k_min) + span * growth(schedule, tau);
    // A value that is exactly x.5 in real arithmetic can come out a few ulps
    // low; the slack keeps those ties rounding up.
    const double slack = 16.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, k);
    const double rounded = std::floor(k + 0.5 + slack);
    return static_cast<std::uint32_t>(
        std::clamp(rounded, static_cast<double>(schedule.k_min), static_cast<double>(schedule.k_max)));
}

std::vector<std::uint32_t> codebook_sizes(const Schedule& schedule)
{
    std::vector<std::uint32_t> sizes(schedule.length);
    for (std::uint32_t t = 0; t < schedule.length; ++t)
        sizes[t] = codebook_size_at(schedule, t);
    return sizes;
}

double cumulative_capacity(const Schedule& schedule, std::uint32_t t)
{
    schedule.validate();
    if (t > schedule.length)
        throw RangeError("cumulative capacity requested past the end of the sequence");
    double bits = 0.0;
    for (std::uint32_t i = 0; i < t; ++i)
        bits += std::log2(static_cast<double>(codebook_size_at(schedule, i)));
    return bits;
}

std::uint32_t tstar_uniform(std::uint64_t n_samples, std::uint64_t k)
{
    if (k < 2)
        throw ConfigError("t* needs a codebook of at least 2 entries");
    if (n_samples < 1)
        throw ConfigError("t* needs at least one sample");
    // Smallest t with k^t >= n, which is exactly ceil(log n / log k).
    std::uint32_t t = 0;
    mp::cpp_int capacity = 1;
    while (capacity < n_samples) {
        capacity *= k;
        ++t;
    }
    return t;
}

mp::cpp_int data_threshold(std::uint64_t k, std::uint32_t m)
{
    if (m < 1)
        throw ConfigError("target cliff position must be >= 1");
    return mp::pow(mp::cpp_int(k), m - 1);
}

std::uint32_t tstar_vcq(const Schedule& schedule, std::uint64_t n_samples)
{
    schedule.validate();
    if (n_samples < 1)
        throw ConfigError("t* needs at least one sample");
    // I(t) >= log2 N  <=>  prod_{i<t} K_i >= N, compared exactly.
    mp::cpp_int capacity = 1;
    for (std::uint32_t t = 0; t <= schedule.length; ++t) {
        if (capacity >= n_samples)
            return t;
        if (t < schedule.length)
            capacity *= codebook_size_at(schedule, t);
    }
    return schedule.length + 1;
}

std::vector<double> remaining_budget(const Schedule& schedule, std::uint64_t n_samples)
{
    schedule.validate();
    if (n_samples < 1)
        throw ConfigError("remaining budget needs at least one sample");
    const double budget = std::log2(static_cast<double>(n_samples));
    std::vector<double> out(schedule.length);
    double used = 0.0;
    for (std::uint32_t t = 0; t < schedule.length; ++t) {
        out[t] = std::max(0.0, budget - used);
        used += std::log2(static_cast<double>(codebook_size_at(schedule, t)));
    }
    return out;
}

CapacityReport capacity_report(const Schedule& schedule, std::uint64_t n_samples, std::uint64_t pixel_count)
{
    schedule.validate();
    if (pixel_count < 1)
        throw ConfigError("pixel count must be >= 1");

    CapacityReport report;
    report.n_samples = n_samples;
    report.pixel_count = pixel_count;
    report.codebook_sizes = codebook_sizes(schedule);
    report.cumulative.assign(schedule.length + 1, 0.0);

    double size_sum = 0.0;
    for (std::uint32_t t = 0; t < schedule.length; ++t) {
        const double bits = std::log2(static_cast<double>(report.codebook_sizes[t]));
        report.bits_per_position.push_back(bits);
        report.cumulative[t + 1] = report.cumulative[t] + bits;
        size_sum += report.codebook_sizes[t];
    }
    report.mean_codebook = size_sum / schedule.length;
    report.bpp = report.cumulative.back() / static_cast<double>(pixel_count);
    report.remaining_budget = remaining_budget(schedule, n_samples);
    report.tstar_vcq = tstar_vcq(schedule, n_samples);
    return report;
}

std::string capacity_csv(const CapacityReport& report)
{
    std::ostringstream out;
    out.precision(17);
    out << "t,K_t,bits,cumulative_bits,remaining_budget\n";
    for (std::size_t t = 0; t < report.codebook_sizes.size(); ++t) {
        out << t << ',' << report.codebook_sizes[t] << ',' << report.bits_per_position[t] << ','
            << report.cumulative[t + 1] << ',' << report.remaining_budget[t] << '\n';
    }
    return out.str();
}

nlohmann::json capacity_summary_json(const Schedule& schedule, const CapacityReport& report)
{
    return {
        {"schedule", to_json(schedule)},
        {"n_samples", report.n_samples},
        {"pixel_count", report.pixel_count},
        {"mean_codebook", report.mean_codebook},
        {"bpp", report.bpp},
        {"total_bits", report.cumulative.back()},
        {"tstar_vcq", report.tstar_vcq},
    };
}

nlohmann::json to_json(const Schedule& schedule)
{
    nlohmann::json j = {
        {"family", std::string(to_string(schedule.family))},
        {"k_min", schedule.k_min},
        {"k_max", schedule.k_max},
        {"length", schedule.length},
    };
    if (schedule.alpha)
        j["alpha"] = *schedule.alpha;
    return j;
}

Schedule schedule_from_json(const nlohmann::json& j)
{
    try {
        Schedule s;
        s.family = family_from_string(j.at("family").get<std::string>());
        s.k_max = j.at("k_max").get<std::uint32_t>();
        s.k_min = j.contains("k_min") ? j.at("k_min").get<std::uint32_t>()
                  : s.family == Family::Constant ? s.k_max
                                                 : throw ConfigError("schedule is missing k_min");
        s.length = j.at("length").get<std::uint32_t>();
        if (j.contains("alpha") && !j.at("alpha").is_null())
            s.alpha = j.at("alpha").get<double>();
        s.validate();
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad schedule config: ") + e.what());
    }
}

Schedule preset(std::string_view name)
{
    constexpr std::uint32_t kLength = 256;
    if (name == "constant16k") return Schedule::constant(16384, kLength);
    if (name == "constant8k") return Schedule::constant(8192, kLength);
    if (name == "linear") return Schedule::linear(2, 16384, kLength);
    if (name == "cosine") return Schedule::cosine(2, 16384, kLength);
    if (name == "power2.5") return Schedule::power(2, 16384, kLength, 2.5);
    if (name == "cosine-l") return Schedule::cosine(2, 11264, kLength);
    throw ConfigError("unknown schedule preset '" + std::string(name) + "'");
}

const std::vector<std::string>& preset_names()
{
    static const std::vector<std::string> names = {"constant16k", "constant8k", "linear",
                                                   "cosine",      "power2.5",   "cosine-l"};
    return names;
}

} // namespace vcq
