#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace qfed {

/// Writes `bytes` to `<path>.tmp` and renames it over `path`.
void write_file_atomic(const std::filesystem::path &path, std::span<const std::uint8_t> bytes);
void write_file_atomic(const std::filesystem::path &path, std::string_view text);

std::vector<std::uint8_t> read_file(const std::filesystem::path &path);
std::string read_text_file(const std::filesystem::path &path);

/// Little-endian append/read helpers for binary formats.
void put_u32(std::vector<std::uint8_t> &out, std::uint32_t v);
void put_u64(std::vector<std::uint8_t> &out, std::uint64_t v);
void put_f64(std::vector<std::uint8_t> &out, double v);
void put_f32(std::vector<std::uint8_t> &out, float v);
std::uint32_t get_u32(const std::uint8_t *p);
std::uint64_t get_u64(const std::uint8_t *p);
double get_f64(const std::uint8_t *p);
float get_f32(const std::uint8_t *p);

} // namespace qfed
