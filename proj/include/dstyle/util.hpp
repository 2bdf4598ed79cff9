// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace dstyle {

/// Shortest decimal text that parses back to exactly `v`.
std::string format_double(double v);

/// Whole-field numeric parsing; nullopt on any trailing garbage.
std::optional<double> parse_double(std::string_view s);
std::optional<std::int64_t> parse_int(std::string_view s);

/// Splits on commas. No quoting: the telemetry schema has none.
std::vector<std::string_view> split_csv(std::string_view line);

/// Per-stage seed: splitmix64 over the root seed xor FNV-1a of the stage name.
std::uint64_t derive_seed(std::uint64_t root, std::string_view stage);

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
/// Writes atomically enough for a batch tool: temp file then rename.
void write_file(const std::filesystem::path& path, std::string_view bytes);

}  // namespace dstyle
