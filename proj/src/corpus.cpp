#include "vcq/corpus.hpp"

#include "vcq/binary_io.hpp"
#include "vcq/error.hpp"

#include <limits>
#include <string>

namespace vcq {

void TokenCorpus::push_back(std::span<const std::uint32_t> row, std::optional<std::uint32_t> label)
{
    if (row.size() != length)
        throw ShapeError("row has " + std::to_string(row.size()) + " tokens, corpus length is " +
                         std::to_string(length));
    if (n_samples == 0 && label)
        labels.emplace();
    if (labels.has_value() != label.has_value())
        throw InputError("corpus rows must be either all labeled or all unlabeled");
    tokens.insert(tokens.end(), row.begin(), row.end());
    if (label)
        labels->push_back(*label);
    ++n_samples;
}

void TokenCorpus::validate() const
{
    if (length == 0 || k_max == 0)
        throw InputError("corpus length and k_max must be positive");
    if (tokens.size() != n_samples * length)
        throw ShapeError("token buffer does not hold N * L entries");
    for (auto tok : tokens)
        if (tok >= k_max)
            throw RangeError("token " + std::to_string(tok) + " >= k_max " + std::to_string(k_max));
    if (labels && labels->size() != n_samples)
        throw ShapeError("label count does not match N");
}

std::vector<char> serialize(const TokenCorpus& corpus)
{
    corpus.validate();
    if (corpus.length > std::numeric_limits<std::uint16_t>::max())
        throw RangeError("corpus length does not fit the u16 header field");

    io::ByteWriter w;
    w.bytes("VCQT");
    w.le<std::uint16_t>(kCorpusVersion);
    w.le<std::uint16_t>(static_cast<std::uint16_t>(corpus.length));
    w.le<std::uint32_t>(corpus.k_max);
    w.le<std::uint64_t>(corpus.n_samples);
    w.le<std::uint8_t>(corpus.labels ? 1 : 0);
    for (auto tok : corpus.tokens)
        w.le<std::uint32_t>(tok);
    if (corpus.labels)
        for (auto label : *corpus.labels)
            w.le<std::uint32_t>(label);
    return w.data();
}

TokenCorpus deserialize_corpus(std::span<const char> bytes)
{
    io::ByteReader r(bytes);
    if (r.bytes(4) != "VCQT")
        throw FormatError("not a token corpus file (bad magic)");
    const auto version = r.le<std::uint16_t>();
    if (version != kCorpusVersion)
        throw FormatError("unsupported corpus version " + std::to_string(version));

    TokenCorpus c;
    c.length = r.le<std::uint16_t>();
    c.k_max = r.le<std::uint32_t>();
    c.n_samples = r.le<std::uint64_t>();
    const auto flags = r.le<std::uint8_t>();
    if (flags & ~std::uint8_t{1})
        throw FormatError("unknown corpus flags");

    const std::uint64_t count = c.n_samples * c.length;
    const std::uint64_t needed = 4 * (count + ((flags & 1) ? c.n_samples : 0));
    if (r.remaining() != needed)
        throw FormatError("corpus payload size does not match its header");

    c.tokens.resize(count);
    for (auto& tok : c.tokens)
        tok = r.le<std::uint32_t>();
    if (flags & 1) {
        c.labels.emplace(c.n_samples);
        for (auto& label : *c.labels)
            label = r.le<std::uint32_t>();
    }
    c.validate();
    return c;
}

void save_corpus(const TokenCorpus& corpus, const std::filesystem::path& path)
{
    io::write_file_atomic(path, serialize(corpus));
}

TokenCorpus load_corpus(const std::filesystem::path& path)
{
    return deserialize_corpus(io::read_file(path));
}

} // namespace vcq
