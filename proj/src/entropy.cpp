#include "vcq/entropy.hpp"

#include "vcq/error.hpp"
#include "vcq/quantizer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace vcq {

namespace {

constexpr double kBoundSlack = 1e-9;

struct Range {
    std::uint64_t begin;
    std::uint64_t end;
};

} // namespace

double sum_n_log2_n(std::vector<std::uint64_t> group_sizes)
{
    std::sort(group_sizes.begin(), group_sizes.end());
    double total = 0.0;
    for (std::size_t i = 0; i < group_sizes.size();) {
        const auto n = group_sizes[i];
        std::size_t j = i;
        while (j < group_sizes.size() && group_sizes[j] == n)
            ++j;
        if (n > 1) {
            const double nd = static_cast<double>(n);
            total += static_cast<double>(j - i) * (nd * std::log2(nd));
        }
        i = j;
    }
    return total;
}

PrefixRefinement refine_prefixes(const TokenCorpus& corpus)
{
    corpus.validate();
    const std::uint64_t n = corpus.n_samples;
    const std::uint32_t length = corpus.length;

    PrefixRefinement out;
    out.conditional_bits.assign(length, 0.0);
    out.prefix_concentration.assign(length + 1, 0.0);
    if (n == 0)
        return out;

    const double nd = static_cast<double>(n);
    std::vector<std::uint64_t> order(n);
    std::iota(order.begin(), order.end(), 0);

    std::vector<Range> groups;
    if (n > 1)
        groups.push_back({0, n});
    std::vector<std::uint64_t> sizes = {n};
    double concentration = sum_n_log2_n(sizes);
    out.prefix_concentration[0] = concentration / nd;

    std::vector<Range> next;
    for (std::uint32_t t = 0; t < length; ++t) {
        next.clear();
        sizes.clear();
        for (const auto& g : groups) {
            const auto first = order.begin() + static_cast<std::ptrdiff_t>(g.begin);
            const auto last = order.begin() + static_cast<std::ptrdiff_t>(g.end);
            std::sort(first, last, [&](std::uint64_t a, std::uint64_t b) {
                const auto ta = corpus.tokens[a * length + t];
                const auto tb = corpus.tokens[b * length + t];
                return ta != tb ? ta < tb : a < b;
            });
            for (std::uint64_t i = g.begin; i < g.end;) {
                const auto tok = corpus.tokens[order[i] * length + t];
                std::uint64_t j = i + 1;
                while (j < g.end && corpus.tokens[order[j] * length + t] == tok)
                    ++j;
                if (j - i > 1) {
                    next.push_back({i, j});
                    sizes.push_back(j - i);
                }
                i = j;
            }
        }
        const double refined = sum_n_log2_n(sizes);
        out.conditional_bits[t] = std::max(0.0, (concentration - refined) / nd);
        out.prefix_concentration[t + 1] = refined / nd;
        concentration = refined;
        groups.swap(next);
    }
    return out;
}

std::vector<double> conditional_entropy_profile(const TokenCorpus& corpus)
{
    return refine_prefixes(corpus).conditional_bits;
}

double joint_entropy(const TokenCorpus& corpus)
{
    corpus.validate();
    const std::uint64_t n = corpus.n_samples;
    if (n == 0)
        return 0.0;
    std::vector<std::uint64_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    auto less = [&](std::uint64_t a, std::uint64_t b) {
        const auto ra = corpus.row(a);
        const auto rb = corpus.row(b);
        return std::lexicographical_compare(ra.begin(), ra.end(), rb.begin(), rb.end());
    };
    std::sort(order.begin(), order.end(), less);

    std::vector<std::uint64_t> multiplicities;
    for (std::uint64_t i = 0; i < n;) {
        std::uint64_t j = i + 1;
        while (j < n && !less(order[i], order[j]))
            ++j;
        multiplicities.push_back(j - i);
        i = j;
    }
    const double nd = static_cast<double>(n);
    return std::max(0.0, std::log2(nd) - sum_n_log2_n(std::move(multiplicities)) / nd);
}

Prop1Bounds prop1_bounds(std::uint64_t n_samples, const Schedule& schedule)
{
    schedule.validate();
    if (n_samples < 1)
        throw InputError("bounds need at least one sample");
    Prop1Bounds out;
    out.non_uniform_schedule = schedule.family != Family::Constant && schedule.k_min != schedule.k_max;
    const double budget = std::log2(static_cast<double>(n_samples));
    const double per_position = std::log2(static_cast<double>(schedule.k_max));
    out.prop1_bound.resize(schedule.length);
    for (std::uint32_t t = 0; t < schedule.length; ++t) {
        // 0-based index t is position t + 1 in the 1-based statement.
        out.prop1_bound[t] = std::max(0.0, budget - static_cast<double>(t) * per_position);
    }
    return out;
}

Prop1Bounds prop1_bounds(const TokenCorpus& corpus, const Schedule& schedule)
{
    if (corpus.length != schedule.length)
        throw ShapeError("corpus length does not match the schedule");
    auto out = prop1_bounds(std::max<std::uint64_t>(corpus.n_samples, 1), schedule);
    const auto refinement = refine_prefixes(corpus);
    std::vector<double> exact(schedule.length);
    for (std::uint32_t t = 0; t < schedule.length; ++t) {
        const double capacity = std::log2(static_cast<double>(codebook_size_at(schedule, t)));
        // log2 N - H(x_<t) is exactly F_t / N.
        exact[t] = std::min(capacity, refinement.prefix_concentration[t]);
    }
    out.exact_bound = std::move(exact);
    return out;
}

std::uint32_t cliff_position(std::span<const double> conditional_bits, double threshold)
{
    if (!(threshold > 0.0))
        throw ConfigError("cliff threshold must be positive");
    auto t = static_cast<std::uint32_t>(conditional_bits.size());
    while (t > 0 && conditional_bits[t - 1] < threshold)
        --t;
    return t;
}

ChainRuleCheck chain_rule_check(const TokenCorpus& corpus)
{
    const auto profile = conditional_entropy_profile(corpus);
    ChainRuleCheck out;
    for (double h : profile)
        out.sum_conditional += h;
    out.joint = joint_entropy(corpus);
    out.max_abs_diff = std::abs(out.sum_conditional - out.joint);
    return out;
}

EntropyProfile analyze_corpus(const TokenCorpus& corpus, const Schedule& schedule, double threshold)
{
    if (corpus.length != schedule.length)
        throw ShapeError("corpus length " + std::to_string(corpus.length) + " does not match schedule length " +
                         std::to_string(schedule.length));
    if (corpus.n_samples == 0)
        throw InputError("cannot analyze an empty corpus");

    EntropyProfile p;
    p.n_samples = corpus.n_samples;
    p.cliff_threshold = threshold;
    p.utilization = utilization_profile(corpus, schedule);
    p.conditional_bits = conditional_entropy_profile(corpus);
    p.joint_bits = joint_entropy(corpus);
    p.remaining_budget = remaining_budget(schedule, corpus.n_samples);
    auto bounds = prop1_bounds(corpus, schedule);
    p.prop1_bound = std::move(bounds.prop1_bound);
    p.exact_bound = std::move(*bounds.exact_bound);
    p.prop1_non_uniform = bounds.non_uniform_schedule;
    for (std::uint32_t t = 0; t < corpus.length; ++t)
        if (p.conditional_bits[t] > p.prop1_bound[t] + kBoundSlack)
            ++p.prop1_violations;
    p.cliff_position = cliff_position(p.conditional_bits, threshold);
    return p;
}

std::string profile_csv(const EntropyProfile& profile)
{
    std::ostringstream out;
    out.precision(17);
    out << "t,H_bits,remaining_budget,prop1_bound,exact_bound,utilization\n";
    for (std::size_t t = 0; t < profile.conditional_bits.size(); ++t) {
        out << t << ',' << profile.conditional_bits[t] << ',' << profile.remaining_budget[t] << ','
            << profile.prop1_bound[t] << ',' << profile.exact_bound[t] << ',' << profile.utilization[t] << '\n';
    }
    return out.str();
}

nlohmann::json profile_summary_json(const EntropyProfile& profile)
{
    double sum = 0.0;
    for (double h : profile.conditional_bits)
        sum += h;
    return {
        {"n_samples", profile.n_samples},
        {"length", profile.conditional_bits.size()},
        {"joint_bits", profile.joint_bits},
        {"sum_conditional_bits", sum},
        {"cliff_position", profile.cliff_position},
        {"cliff_threshold_bits", profile.cliff_threshold},
        {"prop1_non_uniform_schedule", profile.prop1_non_uniform},
        {"prop1_violations", profile.prop1_violations},
        {"conditional_bits", profile.conditional_bits},
    };
}

} // namespace vcq
