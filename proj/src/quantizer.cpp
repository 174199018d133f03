#include "vcq/quantizer.hpp"

#include "vcq/binary_io.hpp"
#include "vcq/error.hpp"
#include "vcq/random.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace vcq {

namespace {

// Exhaustive scan over the first k rows with partial-distance early exit.
// Terms are non-negative, so a partial sum already >= best can never win
// under the strict comparison that keeps the lowest index on ties.
Assignment nearest(const float* z, const float* rows, std::uint32_t k, std::size_t d)
{
    Assignment best{0, std::numeric_limits<double>::infinity()};
    for (std::uint32_t i = 0; i < k; ++i) {
        const float* e = rows + static_cast<std::size_t>(i) * d;
        double acc = 0.0;
        std::size_t j = 0;
        for (; j < d; ++j) {
            const double diff = static_cast<double>(z[j]) - static_cast<double>(e[j]);
            acc += diff * diff;
            if (acc >= best.distance)
                break;
        }
        if (j == d && acc < best.distance)
            best = {i, acc};
    }
    return best;
}

void check_finite(std::span<const float> z)
{
    for (float v : z)
        if (!std::isfinite(v))
            throw InputError("latent vector has a non-finite component");
}

} // namespace

Codebook::Codebook(Matrix m) : entries(std::move(m))
{
    if (entries.rows == 0 || entries.cols == 0)
        throw ShapeError("codebook needs at least one entry and one dimension");
    for (float v : entries.data)
        if (!std::isfinite(v))
            throw InputError("codebook entries must be finite");
}

std::vector<char> serialize(const Codebook& codebook)
{
    io::ByteWriter w;
    w.bytes("VCQC");
    w.le<std::uint16_t>(kCodebookVersion);
    w.le<std::uint32_t>(codebook.dim());
    w.le<std::uint32_t>(codebook.k_max());
    for (float v : codebook.entries.data)
        w.f32(v);
    return w.data();
}

Codebook deserialize_codebook(std::span<const char> bytes)
{
    io::ByteReader r(bytes);
    if (r.bytes(4) != "VCQC")
        throw FormatError("not a codebook file (bad magic)");
    const auto version = r.le<std::uint16_t>();
    if (version != kCodebookVersion)
        throw FormatError("unsupported codebook version " + std::to_string(version));
    const auto d = r.le<std::uint32_t>();
    const auto k = r.le<std::uint32_t>();
    if (r.remaining() != 4ULL * d * k)
        throw FormatError("codebook payload size does not match its header");
    Matrix m(k, d);
    for (auto& v : m.data)
        v = r.f32();
    return Codebook(std::move(m));
}

void save_codebook(const Codebook& codebook, const std::filesystem::path& path)
{
    io::write_file_atomic(path, serialize(codebook));
}

Codebook load_codebook(const std::filesystem::path& path)
{
    return deserialize_codebook(io::read_file(path));
}

Assignment quantize_position(std::span<const float> z, const Codebook& codebook, std::uint32_t k_t)
{
    if (z.size() != codebook.dim())
        throw ShapeError("latent dimension does not match the codebook");
    if (k_t < 1 || k_t > codebook.k_max())
        throw RangeError("k_t = " + std::to_string(k_t) + " outside [1, " + std::to_string(codebook.k_max()) + "]");
    check_finite(z);
    return nearest(z.data(), codebook.entries.data.data(), k_t, codebook.dim());
}

QuantizationResult quantize_sequence(const Matrix& latents, const Schedule& schedule, const Codebook& codebook)
{
    if (latents.rows != schedule.length)
        throw ShapeError("latents have " + std::to_string(latents.rows) + " rows, schedule length is " +
                         std::to_string(schedule.length));
    if (latents.cols != codebook.dim())
        throw ShapeError("latent dimension does not match the codebook");

    const auto sizes = codebook_sizes(schedule);
    QuantizationResult out;
    out.tokens.resize(latents.rows);
    out.distances.resize(latents.rows);
    out.quantized = Matrix(latents.rows, latents.cols);
    out.residuals = Matrix(latents.rows, latents.cols);

    for (std::size_t t = 0; t < latents.rows; ++t) {
        const auto a = quantize_position(latents.row(t), codebook, sizes[t]);
        out.tokens[t] = a.token;
        out.distances[t] = a.distance;
        const auto e = codebook.row(a.token);
        std::copy(e.begin(), e.end(), out.quantized.row(t).begin());
        for (std::size_t j = 0; j < latents.cols; ++j)
            out.residuals(t, j) = e[j] - latents(t, j);
    }
    return out;
}

Matrix decode(std::span<const std::uint32_t> tokens, const Codebook& codebook)
{
    Matrix out(tokens.size(), codebook.dim());
    for (std::size_t t = 0; t < tokens.size(); ++t) {
        if (tokens[t] >= codebook.k_max())
            throw RangeError("token " + std::to_string(tokens[t]) + " >= codebook size " +
                             std::to_string(codebook.k_max()));
        const auto e = codebook.row(tokens[t]);
        std::copy(e.begin(), e.end(), out.row(t).begin());
    }
    return out;
}

VqLossTerms vq_loss_terms(const Matrix& latents, const QuantizationResult& result)
{
    if (latents.rows != result.quantized.rows || latents.cols != result.quantized.cols)
        throw ShapeError("latents and quantization result disagree in shape");
    if (latents.rows == 0)
        return {};
    // Forward values of both terms coincide; only their gradients differ.
    double sum = 0.0;
    for (std::size_t t = 0; t < latents.rows; ++t) {
        double acc = 0.0;
        for (std::size_t j = 0; j < latents.cols; ++j) {
            const double diff = static_cast<double>(latents(t, j)) - static_cast<double>(result.quantized(t, j));
            acc += diff * diff;
        }
        sum += acc;
    }
    const double mean = sum / static_cast<double>(latents.rows);
    return {mean, mean};
}

Codebook fit_codebook(std::span<const Matrix> latents, const Schedule& schedule, const FitOptions& options)
{
    schedule.validate();
    if (latents.empty())
        throw InputError("cannot fit a codebook on an empty corpus");
    if (!(options.decay > 0.0 && options.decay < 1.0))
        throw ConfigError("EMA decay must lie in (0, 1)");
    if (options.k_max < 1 || options.dim < 1)
        throw ConfigError("codebook needs k_max >= 1 and dim >= 1");
    if (schedule.k_max > options.k_max)
        throw ConfigError("schedule k_max exceeds the codebook size");
    for (const auto& seq : latents) {
        if (seq.cols != options.dim)
            throw ShapeError("latent dimension " + std::to_string(seq.cols) + " != codebook dimension " +
                             std::to_string(options.dim));
        if (seq.rows != schedule.length)
            throw ShapeError("latent sequence length does not match the schedule");
        for (float v : seq.data)
            if (!std::isfinite(v))
                throw InputError("latent corpus has a non-finite value");
    }

    const auto sizes = codebook_sizes(schedule);
    const std::size_t d = options.dim;
    const std::uint32_t k = options.k_max;
    const std::uint32_t length = schedule.length;

    // Entry i is reachable only from positions t with K_t > i, a suffix of the
    // sequence since K_t is non-decreasing.
    std::vector<std::uint32_t> first_reachable(k, 0);
    for (std::uint32_t i = 0; i < k; ++i) {
        const auto it = std::upper_bound(sizes.begin(), sizes.end(), i);
        first_reachable[i] = it == sizes.end() ? 0 : static_cast<std::uint32_t>(it - sizes.begin());
    }

    Rng rng(options.seed);
    auto sample_latent = [&](std::uint32_t entry) {
        const auto& seq = latents[uniform_index(rng, latents.size())];
        const std::uint32_t lo = first_reachable[entry];
        const auto t = lo + static_cast<std::uint32_t>(uniform_index(rng, length - lo));
        return seq.row(t);
    };

    Matrix entries(k, d);
    for (std::uint32_t i = 0; i < k; ++i) {
        const auto src = sample_latent(i);
        std::copy(src.begin(), src.end(), entries.row(i).begin());
    }

    std::vector<double> ema_count(k, 0.0);
    std::vector<double> ema_sum(static_cast<std::size_t>(k) * d, 0.0);
    std::vector<std::uint64_t> count(k);
    std::vector<double> sum(static_cast<std::size_t>(k) * d);

    for (std::uint32_t epoch = 0; epoch < options.epochs; ++epoch) {
        std::fill(count.begin(), count.end(), 0);
        std::fill(sum.begin(), sum.end(), 0.0);
        for (const auto& seq : latents) {
            for (std::uint32_t t = 0; t < length; ++t) {
                const float* z = seq.data.data() + static_cast<std::size_t>(t) * d;
                const auto a = nearest(z, entries.data.data(), sizes[t], d);
                ++count[a.token];
                double* acc = sum.data() + static_cast<std::size_t>(a.token) * d;
                for (std::size_t j = 0; j < d; ++j)
                    acc[j] += z[j];
            }
        }
        for (std::uint32_t i = 0; i < k; ++i) {
            double* m = ema_sum.data() + static_cast<std::size_t>(i) * d;
            if (count[i] == 0) {
                const auto src = sample_latent(i);
                std::copy(src.begin(), src.end(), entries.row(i).begin());
                ema_count[i] = 0.0;
                std::fill(m, m + d, 0.0);
                continue;
            }
            ema_count[i] = options.decay * ema_count[i] + (1.0 - options.decay) * static_cast<double>(count[i]);
            const double* s = sum.data() + static_cast<std::size_t>(i) * d;
            for (std::size_t j = 0; j < d; ++j) {
                m[j] = options.decay * m[j] + (1.0 - options.decay) * s[j];
                entries(i, j) = static_cast<float>(m[j] / ema_count[i]);
            }
        }
    }
    return Codebook(std::move(entries));
}

std::vector<double> utilization_profile(const TokenCorpus& corpus, const Schedule& schedule)
{
    corpus.validate();
    if (corpus.length != schedule.length)
        throw ShapeError("corpus length does not match the schedule");
    const auto sizes = codebook_sizes(schedule);
    std::vector<double> out(corpus.length);
    std::vector<std::uint8_t> seen;
    for (std::uint32_t t = 0; t < corpus.length; ++t) {
        seen.assign(sizes[t], 0);
        std::uint32_t distinct = 0;
        for (std::uint64_t i = 0; i < corpus.n_samples; ++i) {
            const auto tok = corpus.tokens[i * corpus.length + t];
            if (tok >= sizes[t])
                throw RangeError("token " + std::to_string(tok) + " at position " + std::to_string(t) +
                                 " exceeds K_t = " + std::to_string(sizes[t]) + "; wrong schedule for this corpus?");
            if (!seen[tok]) {
                seen[tok] = 1;
                ++distinct;
            }
        }
        out[t] = static_cast<double>(distinct) / sizes[t];
    }
    return out;
}

} // namespace vcq
