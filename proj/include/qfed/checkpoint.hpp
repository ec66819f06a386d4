#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "qfed/model.hpp"

namespace qfed {

/**
 * Checkpoint layout:
 *
 *   u64 LE   header length N
 *   N bytes  UTF-8 JSON: {"format": "qfed-checkpoint", "version": 1,
 *                         "model": <ModelSpec>,
 *                         "tensors": [{"name", "shape", "offset"}, ...]}
 *   payload  little-endian f64 values; "offset" is the byte offset of each
 *            tensor from the start of the payload
 */
std::vector<std::uint8_t> encode_checkpoint(const Model &model);
Model decode_checkpoint(const std::vector<std::uint8_t> &bytes);

void save_checkpoint(const std::filesystem::path &path, const Model &model);
Model load_checkpoint(const std::filesystem::path &path);

} // namespace qfed
