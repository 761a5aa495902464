#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "seavae/vae.hpp"

namespace seavae {

inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Serialized .vaeckpt bytes: "VAEC", u32 version, u64 header length, JSON
/// header, float32 LE blobs in buffer order, trailing CRC32 of everything before it.
std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Hex CRC32 of the serialized checkpoint; used as the model id in detection records.
std::string checkpoint_id(const Checkpoint& ckpt);

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes);

}  // namespace seavae
