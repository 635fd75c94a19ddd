#pragma once

#include <cstdint>
#include <string>

#include "ncflow/init.hpp"
#include "ncflow/model.hpp"

#include <nlohmann/json_fwd.hpp>

namespace ncflow {

/// Checkpoint file layout: one line of JSON (dims, loss kind, payload
/// checksum), a newline, then the raw float64 payload, row-major,
/// little-endian: all of W then all of V.
void save_params(const NetParams& params, const std::string& path);

/// Throws DataError on parse failure or checksum mismatch.
NetParams load_params(const std::string& path);

/// Shapes reuse the same container with epsilon and seed in the header.
void save_shape(const InitShape& shape, const std::string& path, std::uint64_t seed);
InitShape load_shape(const std::string& path, std::uint64_t* seed_out = nullptr);

std::uint64_t fnv1a64(const unsigned char* data, std::size_t size);

}  // namespace ncflow
