#pragma once

// N sequences of L token ids with optional class labels, plus the VCQT file format:
//
//   "VCQT" | version u16 | L u16 | k_max u32 | N u64 | flags u8 (bit 0: labels)
//   | N*L token ids u32, row-major | [N class ids u32]
//
// All integers little-endian.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

namespace vcq {

struct TokenCorpus {
    std::uint32_t length = 0;
    std::uint32_t k_max = 0;
    std::uint64_t n_samples = 0;
    std::vector<std::uint32_t> tokens; // n_samples * length
    std::optional<std::vector<std::uint32_t>> labels;

    TokenCorpus() = default;
    TokenCorpus(std::uint32_t length, std::uint32_t k_max) : length(length), k_max(k_max) {}

    std::span<const std::uint32_t> row(std::uint64_t i) const
    {
        return {tokens.data() + i * length, length};
    }

    void push_back(std::span<const std::uint32_t> row, std::optional<std::uint32_t> label = std::nullopt);

    /// Throws InputError / ShapeError if any invariant is broken.
    void validate() const;

    bool operator==(const TokenCorpus&) const = default;
};

inline constexpr std::uint16_t kCorpusVersion = 1;

std::vector<char> serialize(const TokenCorpus& corpus);
TokenCorpus deserialize_corpus(std::span<const char> bytes);

void save_corpus(const TokenCorpus& corpus, const std::filesystem::path& path);
TokenCorpus load_corpus(const std::filesystem::path& path);

} // namespace vcq
