// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "numerics/tensor.hpp"

namespace m2a::io {

enum class Dtype { F64, F32 };

std::string to_string(Dtype d);
Dtype parse_dtype(const std::string& s);

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Named tensors plus a metadata document.
///
/// On disk: the 8-byte magic "M2ACKPT\0", a little-endian u32 format
/// version, a u64 metadata length, the metadata JSON, then the raw
/// little-endian tensor bytes at the offsets listed in the metadata.
struct Checkpoint {
    /// Resolved run configuration; its hash is stored alongside.
    nlohmann::json config = nlohmann::json::object();
    /// Free-form extras (kind, training summary).
    nlohmann::json info = nlohmann::json::object();
    std::vector<std::pair<std::string, num::Tensor>> tensors;

    const num::Tensor* find(const std::string& name) const;
};

/// FNV-1a over the compact JSON dump, as 16 hex digits.
std::string config_hash(const nlohmann::json& config);

std::string encode_checkpoint(const Checkpoint& ckpt, Dtype dtype = Dtype::F64);
Checkpoint decode_checkpoint(const std::string& bytes);

/// Atomic write (temp file + rename).
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt, Dtype dtype = Dtype::F64);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace m2a::io
