#include <doctest.h>

#include "vcq/error.hpp"
#include "vcq/generation.hpp"
#include "vcq/random.hpp"

#include <cmath>
#include <map>
#include <random>

using namespace vcq;

namespace {

TokenCorpus labelled(std::uint32_t k_max, const std::vector<std::pair<std::vector<std::uint32_t>, std::uint32_t>>& rows)
{
    TokenCorpus c(static_cast<std::uint32_t>(rows.front().first.size()), k_max);
    for (const auto& [r, label] : rows)
        c.push_back(r, label);
    return c;
}

GuidancePolicy plain(const Schedule& s, double scale = 0.0, double temperature = 1.0)
{
    GuidancePolicy p;
    p.schedule = s;
    p.scale = scale;
    p.temperature = temperature;
    return p;
}

std::uint64_t brute_longest_prefix(std::span<const std::uint32_t> row, const TokenCorpus& training)
{
    std::uint64_t best = 0;
    for (std::uint64_t j = 0; j < training.n_samples; ++j) {
        std::uint64_t k = 0;
        while (k < row.size() && row[k] == training.row(j)[k])
            ++k;
        best = std::max(best, k);
    }
    return best;
}

} // namespace

TEST_CASE("apply_guidance arithmetic")
{
    const std::vector<double> c = {2, 0};
    const std::vector<double> u = {1, 1};
    CHECK(apply_guidance(c, u, 0.0) == c);
    CHECK(apply_guidance(c, u, 1.0) == std::vector<double>{3, -1});

    const std::vector<double> cm = {1.0, kMaskedLogit, 0.5};
    const std::vector<double> um = {kMaskedLogit, 0.0, 0.25};
    const auto g = apply_guidance(cm, um, 2.0);
    CHECK(is_masked(g[0]));
    CHECK(is_masked(g[1]));
    CHECK(g[2] == 3 * 0.5 - 2 * 0.25);

    CHECK_THROWS_AS(apply_guidance(c, std::vector<double>{1}, 1.0), ShapeError);
    const std::vector<double> nan = {std::nan(""), 0};
    CHECK_THROWS_AS(apply_guidance(nan, u, 1.0), InputError);
}

TEST_CASE("guidance is affine in s and invariant to shared shifts")
{
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> d(-5, 5);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> c(7), u(7), cs(7), us(7);
        const double shift = d(rng);
        for (int i = 0; i < 7; ++i) {
            c[i] = d(rng);
            u[i] = d(rng);
            cs[i] = c[i] + shift;
            us[i] = u[i] + shift;
        }
        const double s1 = std::abs(d(rng)), s2 = std::abs(d(rng));
        const auto g0 = apply_guidance(c, u, 0.0);
        const auto g1 = apply_guidance(c, u, s1);
        const auto g2 = apply_guidance(c, u, s2);
        const auto shifted = apply_guidance(cs, us, s1);
        for (int i = 0; i < 7; ++i) {
            // Same slope (c - u) from every s.
            CHECK((g1[i] - g0[i]) / s1 == doctest::Approx(c[i] - u[i]).epsilon(1e-9));
            CHECK((g2[i] - g0[i]) / s2 == doctest::Approx(c[i] - u[i]).epsilon(1e-9));
            CHECK(std::abs(shifted[i] - (g1[i] + shift)) < 1e-9);
        }
    }
}

TEST_CASE("size-aware scale endpoints are exact")
{
    for (const auto& s : {Schedule::cosine(2, 256, 64), Schedule::linear(2, 16384, 256), preset("power2.5")}) {
        for (Ramp ramp : {Ramp::None, Ramp::CosinePower}) {
            GuidancePolicy p = plain(s, 7.5);
            p.ramp = ramp;
            p.power = 1.5;
            CHECK(size_aware_scale(p, 0) == 0.0);
            CHECK(size_aware_scale(p, s.length - 1) == 7.5);
            // Every position still at K_min gets zero guidance.
            for (std::uint32_t t = 0; t < s.length && codebook_size_at(s, t) == s.k_min; ++t)
                CHECK(size_aware_scale(p, t) == 0.0);
        }
    }
    GuidancePolicy p = plain(Schedule::cosine(2, 256, 64), 4.0);
    CHECK_THROWS_AS(size_aware_scale(p, 64), RangeError);
}

TEST_CASE("cosine ramp shape")
{
    GuidancePolicy p = plain(Schedule::constant(16, 5), 2.0);
    p.ramp = Ramp::CosinePower;
    p.power = 1.0;
    CHECK(size_aware_scale(p, 0) == 0.0);
    CHECK(size_aware_scale(p, 2) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(size_aware_scale(p, 4) == 2.0);
    p.power = 2.0;
    CHECK(size_aware_scale(p, 2) == doctest::Approx(1.0 - std::cos(std::acos(-1.0) / 4)).epsilon(1e-15));

    GuidancePolicy single = plain(Schedule::constant(16, 1), 3.0);
    single.ramp = Ramp::CosinePower;
    CHECK(size_aware_scale(single, 0) == 3.0);
}

TEST_CASE("constant schedule: size-aware guidance equals standard guidance")
{
    const auto s = Schedule::constant(6, 4);
    const auto corpus = labelled(6, {{{0, 1, 2, 3}, 0}, {{5, 1, 2, 4}, 1}, {{0, 1, 3, 3}, 1}, {{2, 2, 2, 2}, 0}});
    const auto model = fit_counts(corpus, s, 2, 0.1);
    for (Ramp ramp : {Ramp::None, Ramp::CosinePower}) {
        GuidancePolicy aware = plain(s, 3.0);
        aware.ramp = ramp;
        aware.size_aware = true;
        GuidancePolicy standard = aware;
        standard.size_aware = false;
        std::vector<std::uint32_t> prefix;
        for (std::uint32_t t = 0; t < s.length; ++t) {
            CHECK(size_aware_scale(aware, t) == size_aware_scale(standard, t));
            const auto c = model.logits(0u, prefix, t);
            const auto u = model.logits(std::nullopt, prefix, t);
            const auto a = apply_guidance(c, u, size_aware_scale(aware, t));
            const auto b = apply_guidance(c, u, size_aware_scale(standard, t));
            for (std::size_t i = 0; i < a.size(); ++i)
                CHECK(std::abs(a[i] - b[i]) <= 1e-12);
            prefix.push_back(static_cast<std::uint32_t>(t % 6));
        }
        CHECK(sample_sequence(model, 1u, aware, 9) == sample_sequence(model, 1u, standard, 9));
    }
}

TEST_CASE("untrained contexts are uniform over the candidate set")
{
    const auto s = Schedule::cosine(2, 16, 8);
    const CountModel empty(s, 4, 0.1);
    std::vector<std::uint32_t> prefix;
    for (std::uint32_t t = 0; t < s.length; ++t) {
        const auto l = empty.logits(std::nullopt, prefix, t);
        const auto k_t = codebook_size_at(s, t);
        REQUIRE(l.size() == 16);
        for (std::uint32_t x = 0; x < 16; ++x) {
            if (x < k_t)
                CHECK(l[x] == doctest::Approx(-std::log(static_cast<double>(k_t))).epsilon(1e-14));
            else
                CHECK(is_masked(l[x]));
        }
        prefix.push_back(0);
    }
    // K_t = 2 leaves exactly two live entries.
    const auto l0 = empty.logits(std::nullopt, std::vector<std::uint32_t>{}, 0);
    CHECK(std::count_if(l0.begin(), l0.end(), [](double v) { return !is_masked(v); }) == 2);
}

TEST_CASE("smoothed probabilities on a three-row corpus")
{
    const auto s = Schedule::constant(3, 2);
    const auto corpus = labelled(3, {{{0, 1}, 0}, {{0, 2}, 0}, {{1, 1}, 0}});
    const auto m = fit_counts(corpus, s, 1, 0.1);

    const auto p0 = m.logits(0u, std::vector<std::uint32_t>{}, 0);
    CHECK(std::exp(p0[0]) == doctest::Approx(2.1 / 3.3).epsilon(1e-13));
    CHECK(std::exp(p0[1]) == doctest::Approx(1.1 / 3.3).epsilon(1e-13));
    CHECK(std::exp(p0[2]) == doctest::Approx(0.1 / 3.3).epsilon(1e-13));

    // Position 1 after token 0: order-1 counts {1: 1, 2: 1} over the unigram {0: 0, 1: 2, 2: 1}.
    const double u0 = 0.1 / 3.3, u1 = 2.1 / 3.3, u2 = 1.1 / 3.3;
    const auto p1 = m.logits(0u, std::vector<std::uint32_t>{0}, 1);
    CHECK(std::exp(p1[0]) == doctest::Approx(0.1 * u0 / 2.1).epsilon(1e-13));
    CHECK(std::exp(p1[1]) == doctest::Approx((1 + 0.1 * u1) / 2.1).epsilon(1e-13));
    CHECK(std::exp(p1[2]) == doctest::Approx((1 + 0.1 * u2) / 2.1).epsilon(1e-13));

    // Unseen context backs off to the unigram.
    const auto p2 = m.logits(0u, std::vector<std::uint32_t>{2}, 1);
    CHECK(std::exp(p2[1]) == doctest::Approx(u1).epsilon(1e-13));

    double total = 0;
    for (double v : p1)
        total += std::exp(v);
    CHECK(total == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("logit preconditions")
{
    const auto s = Schedule::linear(2, 8, 4);
    const CountModel m(s, 2, 0.1);
    CHECK_THROWS_AS(m.logits(std::nullopt, std::vector<std::uint32_t>{0}, 2), ShapeError);
    CHECK_THROWS_AS(m.logits(std::nullopt, std::vector<std::uint32_t>{5}, 1), RangeError);
    CHECK_THROWS_AS(m.logits(std::nullopt, std::vector<std::uint32_t>{0, 0, 0, 0}, 4), RangeError);
    CHECK_THROWS_AS(CountModel(s, kMaxContextOrder + 1, 0.1), ConfigError);
    CHECK_THROWS_AS(CountModel(s, 2, 0.0), ConfigError);
}

TEST_CASE("fit_counts requires labels and a matching schedule")
{
    TokenCorpus unlabelled(2, 4);
    unlabelled.push_back(std::vector<std::uint32_t>{1, 2});
    CHECK_THROWS_AS(fit_counts(unlabelled, Schedule::constant(4, 2)), InputError);
    const auto c = labelled(4, {{{1, 3}, 0}});
    CHECK_THROWS_AS(fit_counts(c, Schedule::constant(4, 3)), ShapeError);
    const auto wide = labelled(4, {{{2, 3}, 0}});
    CHECK_THROWS_AS(fit_counts(wide, Schedule::linear(2, 4, 2)), RangeError);
}

TEST_CASE("counting is deterministic")
{
    std::mt19937_64 rng(8);
    const auto s = Schedule::cosine(2, 32, 12);
    const auto sizes = codebook_sizes(s);
    TokenCorpus c(12, 32);
    for (int i = 0; i < 200; ++i) {
        std::vector<std::uint32_t> row(12);
        for (std::uint32_t t = 0; t < 12; ++t)
            row[t] = static_cast<std::uint32_t>(rng() % sizes[t]);
        c.push_back(row, static_cast<std::uint32_t>(i % 3));
    }
    const auto a = fit_counts(c, s);
    const auto b = fit_counts(c, s);
    CHECK(a == b);
    CHECK(a.n_classes() == 3);
    CHECK(sample_corpus(a, plain(s, 2.0), 5, 77) == sample_corpus(b, plain(s, 2.0), 5, 77));
}

TEST_CASE("single training row is reproduced at low temperature")
{
    const auto s = Schedule::cosine(2, 64, 16);
    const std::vector<std::uint32_t> row = {1, 0, 1, 1, 2, 3, 1, 5, 7, 2, 11, 13, 6, 20, 3, 40};
    for (std::uint32_t t = 0; t < s.length; ++t)
        REQUIRE(row[t] < codebook_size_at(s, t));
    const auto model = fit_counts(labelled(64, {{row, 0}}), s);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        CHECK(sample_sequence(model, 0u, plain(s, 0.0, 1e-6), seed) == row);
        CHECK(sample_sequence(model, 0u, plain(s, 3.0, 1e-6), seed) == row);
    }
}

TEST_CASE("conditional logits favour the class's own tokens")
{
    const auto s = Schedule::constant(4, 2);
    const auto c = labelled(4, {{{0, 1}, 0}, {{1, 0}, 0}, {{0, 0}, 0}, {{2, 3}, 1}, {{3, 2}, 1}, {{3, 3}, 1}});
    const auto m = fit_counts(c, s);
    const std::vector<std::uint32_t> none;
    const auto cond = m.logits(0u, none, 0);
    const auto uncond = m.logits(std::nullopt, none, 0);
    CHECK(cond[0] > uncond[0]);
    CHECK(cond[1] > uncond[1]);
    CHECK(cond[2] < uncond[2]);
    CHECK(cond[3] < uncond[3]);
}

TEST_CASE("sampled tokens respect the schedule for every policy")
{
    std::mt19937_64 rng(12);
    for (const auto& s : {Schedule::cosine(2, 64, 20), Schedule::linear(3, 40, 9), Schedule::power(2, 30, 15, 2.5),
                          Schedule::constant(5, 6)}) {
        const auto sizes = codebook_sizes(s);
        TokenCorpus c(s.length, s.k_max);
        for (int i = 0; i < 60; ++i) {
            std::vector<std::uint32_t> row(s.length);
            for (std::uint32_t t = 0; t < s.length; ++t)
                row[t] = static_cast<std::uint32_t>(rng() % sizes[t]);
            c.push_back(row, static_cast<std::uint32_t>(i % 2));
        }
        const auto m = fit_counts(c, s, 3, 0.5);
        for (double temperature : {0.01, 0.5, 1.0, 3.0}) {
            for (double scale : {0.0, 1.0, 20.0}) {
                GuidancePolicy p = plain(s, scale, temperature);
                p.ramp = Ramp::CosinePower;
                const auto g = sample_corpus(m, p, 4, rng());
                for (std::uint64_t i = 0; i < g.n_samples; ++i)
                    for (std::uint32_t t = 0; t < s.length; ++t)
                        CHECK(g.row(i)[t] < sizes[t]);
                for (std::uint32_t t = 0; t < 3; ++t)
                    CHECK(sample_sequence(m, std::nullopt, p, t)[0] < sizes[0]);
            }
        }
    }
}

TEST_CASE("first-token frequencies pass a chi-square test against the class counts")
{
    // Class 0 uses tokens {0, 1, 2, 3} 40/30/20/10 times at position 0; class 1 differs.
    const auto s = Schedule::constant(4, 2);
    TokenCorpus c(2, 4);
    const std::uint32_t counts[4] = {40, 30, 20, 10};
    for (std::uint32_t tok = 0; tok < 4; ++tok)
        for (std::uint32_t i = 0; i < counts[tok]; ++i)
            c.push_back(std::vector<std::uint32_t>{tok, i % 4}, 0);
    for (std::uint32_t i = 0; i < 50; ++i)
        c.push_back(std::vector<std::uint32_t>{3, 0}, 1);
    const auto m = fit_counts(c, s);

    std::uint64_t observed[4] = {};
    const int draws = 10000;
    for (int i = 0; i < draws; ++i)
        ++observed[sample_sequence(m, 0u, plain(s), mix_seed(2024, i))[0]];
    double chi2 = 0.0;
    for (int tok = 0; tok < 4; ++tok) {
        const double expected = draws * counts[tok] / 100.0;
        chi2 += (observed[tok] - expected) * (observed[tok] - expected) / expected;
    }
    // 3 degrees of freedom, upper 0.1% point.
    CHECK(chi2 < 16.266);
}

TEST_CASE("sampling is deterministic per seed")
{
    const auto s = Schedule::cosine(2, 16, 10);
    std::mt19937_64 rng(1);
    const auto sizes = codebook_sizes(s);
    TokenCorpus c(10, 16);
    for (int i = 0; i < 40; ++i) {
        std::vector<std::uint32_t> row(10);
        for (std::uint32_t t = 0; t < 10; ++t)
            row[t] = static_cast<std::uint32_t>(rng() % sizes[t]);
        c.push_back(row, 0);
    }
    const auto m = fit_counts(c, s);
    const auto p = plain(s, 1.5);
    CHECK(sample_sequence(m, 0u, p, 5) == sample_sequence(m, 0u, p, 5));
    CHECK_THROWS_AS(sample_sequence(m, 0u, plain(Schedule::cosine(2, 16, 9)), 5), ConfigError);
}

TEST_CASE("policy JSON and presets")
{
    const auto s = Schedule::cosine(2, 256, 64);
    const auto p = policy_from_json(
        nlohmann::json::parse(R"({"scale": 2.5, "ramp": "cosine", "power": 1.5, "size_aware": false, "temperature": 0.9})"),
        s);
    CHECK(p.scale == 2.5);
    CHECK(p.ramp == Ramp::CosinePower);
    CHECK(p.power == 1.5);
    CHECK_FALSE(p.size_aware);
    CHECK(p.temperature == 0.9);
    const auto back = policy_from_json(to_json(p), s);
    CHECK(to_json(back) == to_json(p));
    CHECK_THROWS_AS(policy_from_json(nlohmann::json::parse(R"({"ramp": "linear"})"), s), ConfigError);
    CHECK_THROWS_AS(policy_from_json(nlohmann::json::parse(R"({"temperature": 0})"), s), ConfigError);
    CHECK_THROWS_AS(policy_from_json(nlohmann::json::parse(R"({"scale": "big"})"), s), ConfigError);

    const auto cos = guidance_preset("cosine", preset("cosine"));
    CHECK(cos.scale == 10.0);
    CHECK(cos.power == 1.5);
    CHECK(cos.ramp == Ramp::CosinePower);
    const auto c16 = guidance_preset("constant16k", preset("constant16k"));
    CHECK(c16.scale == 20.0);
    CHECK_FALSE(c16.size_aware);
    const auto nocfg = guidance_preset("l-xl-nocfg", s);
    CHECK(nocfg.scale == 0.0);
    CHECK(nocfg.temperature == 0.95);
    CHECK_THROWS_AS(guidance_preset("huge", s), ConfigError);
}

TEST_CASE("memorization report")
{
    const auto train = labelled(8, {{{1, 2, 3}, 0}, {{1, 2, 4}, 0}, {{5, 0, 0}, 1}});
    const auto same = memorization_report(train, train);
    CHECK(same.exact_match_rate == 1.0);
    CHECK(same.mean_longest_prefix == 3.0);

    const auto other = labelled(8, {{{6, 7, 6}, 0}, {{7, 7, 7}, 1}});
    const auto none = memorization_report(other, train);
    CHECK(none.exact_match_rate == 0.0);
    CHECK(none.mean_longest_prefix == 0.0);

    TokenCorpus short_rows(2, 8);
    short_rows.push_back(std::vector<std::uint32_t>{1, 2});
    CHECK_THROWS_AS(memorization_report(short_rows, train), ShapeError);
}

TEST_CASE("memorization matches a brute-force scan")
{
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 30; ++trial) {
        const std::uint32_t length = 1 + rng() % 6, k = 2 + rng() % 3;
        TokenCorpus train(length, k), gen(length, k);
        for (std::uint64_t i = 0, n = 1 + rng() % 60; i < n; ++i) {
            std::vector<std::uint32_t> row(length);
            for (auto& v : row)
                v = static_cast<std::uint32_t>(rng() % k);
            train.push_back(row);
        }
        double prefix_sum = 0;
        std::uint64_t matches = 0;
        for (std::uint64_t i = 0, n = 1 + rng() % 40; i < n; ++i) {
            std::vector<std::uint32_t> row(length);
            for (auto& v : row)
                v = static_cast<std::uint32_t>(rng() % k);
            gen.push_back(row);
            const auto best = brute_longest_prefix(row, train);
            prefix_sum += static_cast<double>(best);
            matches += best == length;
        }
        const auto r = memorization_report(gen, train);
        CHECK(r.exact_match_rate == doctest::Approx(static_cast<double>(matches) / gen.n_samples).epsilon(1e-15));
        CHECK(r.mean_longest_prefix == doctest::Approx(prefix_sum / gen.n_samples).epsilon(1e-15));
    }
}
