#pragma once

// Little-endian float32 row storage shared by the dataset and checkpoint
// formats.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace debias::blob {

/// Appends `values` as float32 little-endian.
void append_f32(std::vector<std::uint8_t>& out, std::span<const double> values);

/// Decodes `count` float32 values starting at byte `offset`.
std::vector<double> read_f32(std::span<const std::uint8_t> bytes, std::size_t offset,
                             std::size_t count);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text(const std::filesystem::path& path, const std::string& text);

/// Nearest float32 value, as a double.
double round_to_f32(double x);

}  // namespace debias::blob
