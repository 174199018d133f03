#pragma once

// In-process command-line entry point. Exit codes: 0 success, 1 usage or
// configuration error, 2 data error (unreadable, malformed or inconsistent input).

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace vcq {

struct ReferenceDataset {
    const char* name;
    std::uint64_t n_samples;
};

/// Dataset sizes used by the built-in t* table.
const std::vector<ReferenceDataset>& reference_datasets();

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace vcq
