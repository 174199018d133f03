#include "vcq/generation.hpp"

#include "vcq/error.hpp"
#include "vcq/random.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

namespace vcq {

void GuidancePolicy::validate() const
{
    schedule.validate();
    if (!(scale >= 0.0) || !std::isfinite(scale))
        throw ConfigError("guidance scale must be a finite non-negative number");
    if (!(power > 0.0) || !std::isfinite(power))
        throw ConfigError("ramp power must be positive");
    if (!(temperature > 0.0) || !std::isfinite(temperature))
        throw ConfigError("temperature must be positive");
}

double size_aware_scale(const GuidancePolicy& policy, std::uint32_t t)
{
    const auto& s = policy.schedule;
    if (t >= s.length)
        throw RangeError("position outside the schedule");

    double ramp = 1.0;
    if (policy.ramp == Ramp::CosinePower) {
        // A single-position sequence sits at the end of the ramp.
        const double tau = s.length > 1 ? static_cast<double>(t) / static_cast<double>(s.length - 1) : 1.0;
        ramp = (1.0 - std::cos(std::numbers::pi * std::pow(tau, policy.power))) / 2.0;
    }

    double size_factor = 1.0;
    if (policy.size_aware && s.family != Family::Constant && s.k_min < s.k_max) {
        const double lo = std::log2(static_cast<double>(s.k_min));
        const double hi = std::log2(static_cast<double>(s.k_max));
        const double k_t = std::log2(static_cast<double>(codebook_size_at(s, t)));
        size_factor = (k_t - lo) / (hi - lo);
    }
    return policy.scale * ramp * size_factor;
}

std::vector<double> apply_guidance(std::span<const double> cond, std::span<const double> uncond, double s)
{
    if (cond.size() != uncond.size())
        throw ShapeError("conditional and unconditional logits differ in length");
    std::vector<double> out(cond.size());
    for (std::size_t i = 0; i < cond.size(); ++i) {
        if (is_masked(cond[i]) || is_masked(uncond[i])) {
            out[i] = kMaskedLogit;
            continue;
        }
        if (!std::isfinite(cond[i]) || !std::isfinite(uncond[i]))
            throw InputError("logits must be finite or the mask sentinel");
        out[i] = (1.0 + s) * cond[i] - s * uncond[i];
    }
    return out;
}

GuidancePolicy policy_from_json(const nlohmann::json& j, const Schedule& schedule)
{
    GuidancePolicy p;
    p.schedule = schedule;
    try {
        p.scale = j.value("scale", p.scale);
        const auto ramp = j.value("ramp", std::string("none"));
        if (ramp == "none")
            p.ramp = Ramp::None;
        else if (ramp == "cosine")
            p.ramp = Ramp::CosinePower;
        else
            throw ConfigError("unknown ramp '" + ramp + "'");
        p.power = j.value("power", p.power);
        p.size_aware = j.value("size_aware", p.size_aware);
        p.temperature = j.value("temperature", p.temperature);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad guidance policy: ") + e.what());
    }
    p.validate();
    return p;
}

nlohmann::json to_json(const GuidancePolicy& policy)
{
    return {
        {"scale", policy.scale},
        {"ramp", policy.ramp == Ramp::None ? "none" : "cosine"},
        {"power", policy.power},
        {"size_aware", policy.size_aware},
        {"temperature", policy.temperature},
    };
}

GuidancePolicy guidance_preset(std::string_view name, const Schedule& schedule)
{
    struct Row {
        std::string_view name;
        double scale;
        double power;
        bool size_aware;
        double nocfg_temperature;
    };
    static constexpr Row rows[] = {
        {"constant16k", 20, 1.5, false, 0.85}, {"constant8k", 20, 2.0, false, 0.85},
        {"linear", 14, 1.75, true, 0.85},      {"cosine", 10, 1.5, true, 0.85},
        {"power2.5", 10, 1.75, true, 0.85},    {"b-l", 4, 0.75, true, 0.85},
        {"b-xl", 5, 0.75, true, 0.85},         {"l-b", 4, 1.25, true, 0.90},
        {"l-l", 4, 1.25, true, 0.90},          {"l-xl", 3, 1.0, true, 0.95},
    };
    constexpr std::string_view kNoCfg = "-nocfg";
    const bool nocfg = name.size() > kNoCfg.size() && name.ends_with(kNoCfg);
    const auto base = nocfg ? name.substr(0, name.size() - kNoCfg.size()) : name;
    for (const auto& row : rows) {
        if (row.name != base)
            continue;
        GuidancePolicy p;
        p.schedule = schedule;
        p.ramp = Ramp::CosinePower;
        p.power = row.power;
        p.size_aware = row.size_aware;
        p.scale = nocfg ? 0.0 : row.scale;
        p.temperature = nocfg ? row.nocfg_temperature : 1.0;
        p.validate();
        return p;
    }
    throw ConfigError("unknown guidance preset '" + std::string(name) + "'");
}

std::size_t CountModel::KeyHash::operator()(const Key& k) const noexcept
{
    std::uint64_t h = mix_seed(k.label, (static_cast<std::uint64_t>(k.position) << 8) | k.order);
    for (std::uint32_t i = 0; i < k.order; ++i)
        h = mix_seed(h, k.context[i]);
    return static_cast<std::size_t>(h);
}

CountModel::CountModel(Schedule schedule, std::uint32_t max_order, double smoothing)
    : schedule_(std::move(schedule)), max_order_(max_order), smoothing_(smoothing)
{
    schedule_.validate();
    if (max_order_ > kMaxContextOrder)
        throw ConfigError("context order above " + std::to_string(kMaxContextOrder) + " is not supported");
    if (!(smoothing_ > 0.0) || !std::isfinite(smoothing_))
        throw ConfigError("smoothing constant must be positive");
    sizes_ = codebook_sizes(schedule_);
}

void CountModel::add(std::span<const std::uint32_t> row, std::uint32_t label)
{
    if (row.size() != schedule_.length)
        throw ShapeError("row length does not match the schedule");
    if (label == kPooled)
        throw InputError("class id collides with the pooled-table marker");
    for (std::uint32_t t = 0; t < row.size(); ++t)
        if (row[t] >= sizes_[t])
            throw RangeError("token " + std::to_string(row[t]) + " at position " + std::to_string(t) +
                             " exceeds K_t = " + std::to_string(sizes_[t]));

    n_classes_ = std::max(n_classes_, label + 1);
    for (std::uint32_t t = 0; t < row.size(); ++t) {
        const std::uint32_t top = std::min(t, max_order_);
        for (std::uint32_t order = 0; order <= top; ++order) {
            Key key{0, t, order, {}};
            std::copy(row.begin() + (t - order), row.begin() + t, key.context.begin());
            for (std::uint32_t table : {label, kPooled}) {
                key.label = table;
                auto& counts = table_[key];
                ++counts.total;
                auto it = std::lower_bound(counts.next.begin(), counts.next.end(), row[t],
                                           [](const auto& entry, std::uint32_t tok) { return entry.first < tok; });
                if (it != counts.next.end() && it->first == row[t])
                    ++it->second;
                else
                    counts.next.insert(it, {row[t], 1});
            }
        }
    }
}

const CountModel::Counts* CountModel::find(std::uint32_t label, std::uint32_t t, std::uint32_t order,
                                           std::span<const std::uint32_t> prefix) const
{
    Key key{label, t, order, {}};
    std::copy(prefix.end() - order, prefix.end(), key.context.begin());
    const auto it = table_.find(key);
    return it == table_.end() || it->second.total == 0 ? nullptr : &it->second;
}

std::vector<double> CountModel::logits(std::optional<std::uint32_t> label, std::span<const std::uint32_t> prefix,
                                       std::uint32_t t) const
{
    if (t >= schedule_.length)
        throw RangeError("position outside the schedule");
    if (prefix.size() != t)
        throw ShapeError("prefix length must equal the position");
    for (std::uint32_t i = 0; i < t; ++i)
        if (prefix[i] >= sizes_[i])
            throw RangeError("prefix token outside its candidate set");

    const std::uint32_t table = label.value_or(kPooled);
    const std::uint32_t k_t = sizes_[t];
    const double lambda = smoothing_;

    // Position unigram with Laplace smoothing over exactly K_t outcomes.
    std::vector<double> p(k_t, 1.0 / k_t);
    if (const auto* base = find(table, t, 0, prefix)) {
        const double denom = static_cast<double>(base->total) + lambda * k_t;
        std::fill(p.begin(), p.end(), lambda / denom);
        for (const auto& [tok, n] : base->next)
            p[tok] = (static_cast<double>(n) + lambda) / denom;
    }
    // Longer contexts interpolate with the shorter estimate as a prior of total mass lambda.
    const std::uint32_t top = std::min(t, max_order_);
    for (std::uint32_t order = 1; order <= top; ++order) {
        const auto* counts = find(table, t, order, prefix);
        if (!counts)
            break;
        const double denom = static_cast<double>(counts->total) + lambda;
        for (auto& v : p)
            v *= lambda / denom;
        for (const auto& [tok, n] : counts->next)
            p[tok] += static_cast<double>(n) / denom;
    }

    std::vector<double> out(schedule_.k_max, kMaskedLogit);
    for (std::uint32_t x = 0; x < k_t; ++x)
        out[x] = std::log(p[x]);
    return out;
}

CountModel fit_counts(const TokenCorpus& corpus, const Schedule& schedule, std::uint32_t max_order, double smoothing)
{
    corpus.validate();
    if (!corpus.labels)
        throw InputError("class-conditional counting needs a labeled corpus");
    if (corpus.length != schedule.length)
        throw ShapeError("corpus length does not match the schedule");
    CountModel model(schedule, max_order, smoothing);
    for (std::uint64_t i = 0; i < corpus.n_samples; ++i)
        model.add(corpus.row(i), (*corpus.labels)[i]);
    return model;
}

std::vector<std::uint32_t> sample_sequence(const CountModel& model, std::optional<std::uint32_t> label,
                                           const GuidancePolicy& policy, std::uint64_t seed)
{
    policy.validate();
    if (policy.schedule != model.schedule())
        throw ConfigError("guidance policy and model use different schedules");

    Rng rng(seed);
    const std::uint32_t length = model.schedule().length;
    std::vector<std::uint32_t> tokens;
    tokens.reserve(length);
    std::vector<double> weights;

    for (std::uint32_t t = 0; t < length; ++t) {
        auto guided = model.logits(label, tokens, t);
        if (label) {
            const auto uncond = model.logits(std::nullopt, tokens, t);
            guided = apply_guidance(guided, uncond, size_aware_scale(policy, t));
        }

        double peak = kMaskedLogit;
        for (double v : guided)
            if (!is_masked(v))
                peak = std::max(peak, v / policy.temperature);
        weights.assign(guided.size(), 0.0);
        double total = 0.0;
        for (std::size_t i = 0; i < guided.size(); ++i) {
            if (is_masked(guided[i]))
                continue;
            weights[i] = std::exp(guided[i] / policy.temperature - peak);
            total += weights[i];
        }

        // Falls through to the last live token if rounding leaves u at the top.
        const double u = uniform01(rng) * total;
        double acc = 0.0;
        std::uint32_t pick = 0;
        for (std::size_t i = 0; i < weights.size(); ++i) {
            if (weights[i] == 0.0)
                continue;
            acc += weights[i];
            pick = static_cast<std::uint32_t>(i);
            if (u < acc)
                break;
        }
        tokens.push_back(pick);
    }
    return tokens;
}

TokenCorpus sample_corpus(const CountModel& model, const GuidancePolicy& policy, std::uint32_t samples_per_class,
                          std::uint64_t seed)
{
    TokenCorpus out(model.schedule().length, model.schedule().k_max);
    std::uint64_t index = 0;
    for (std::uint32_t c = 0; c < model.n_classes(); ++c)
        for (std::uint32_t i = 0; i < samples_per_class; ++i)
            out.push_back(sample_sequence(model, c, policy, mix_seed(seed, index++)), c);
    if (out.n_samples == 0)
        out.labels.emplace();
    return out;
}

MemorizationReport memorization_report(const TokenCorpus& generated, const TokenCorpus& training)
{
    generated.validate();
    training.validate();
    if (generated.length != training.length)
        throw ShapeError("generated and training corpora differ in sequence length");
    if (generated.n_samples == 0)
        return {};

    std::vector<std::uint64_t> order(training.n_samples);
    std::iota(order.begin(), order.end(), 0);
    auto row_less = [](std::span<const std::uint32_t> a, std::span<const std::uint32_t> b) {
        return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end());
    };
    std::sort(order.begin(), order.end(),
              [&](std::uint64_t a, std::uint64_t b) { return row_less(training.row(a), training.row(b)); });

    auto common_prefix = [](std::span<const std::uint32_t> a, std::span<const std::uint32_t> b) {
        return static_cast<std::uint64_t>(std::mismatch(a.begin(), a.end(), b.begin()).first - a.begin());
    };

    std::uint64_t matches = 0;
    double prefix_sum = 0.0;
    for (std::uint64_t i = 0; i < generated.n_samples; ++i) {
        const auto row = generated.row(i);
        // The longest shared prefix is attained at a lexicographic neighbour.
        const auto it = std::lower_bound(order.begin(), order.end(), row, [&](std::uint64_t idx, const auto& r) {
            return row_less(training.row(idx), r);
        });
        std::uint64_t best = 0;
        if (it != order.end())
            best = common_prefix(row, training.row(*it));
        if (it != order.begin())
            best = std::max(best, common_prefix(row, training.row(*(it - 1))));
        if (best == generated.length)
            ++matches;
        prefix_sum += static_cast<double>(best);
    }
    const double n = static_cast<double>(generated.n_samples);
    return {static_cast<double>(matches) / n, prefix_sum / n};
}

} // namespace vcq
