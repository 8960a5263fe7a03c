#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace gradcf::cli {

enum ExitCode : int {
  kOk = 0,
  kRuntimeFailure = 1,
  kUsage = 2,
  kBudgetExhausted = 3,
};

// Entry point shared by the gradcf executable and the tests. args[0] is the
// program name.
int run(const std::vector<std::string>& args);

// Named sub-stream of the single --seed flag ("data", "init", "sampling",
// "composite").
std::uint64_t seed_stream(std::uint64_t seed, std::string_view name);

// Hex SHA-256 of a file's bytes.
std::string sha256_file(const std::string& path);

}  // namespace gradcf::cli
