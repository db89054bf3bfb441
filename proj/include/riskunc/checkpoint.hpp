#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "riskunc/seq_model.hpp"

namespace riskunc {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Binary container: magic "RUQCKPT\0", u32 version, u64-length JSON manifest
/// (config, vocabulary size, ethnicities, tensor table, optimizer step, rng
/// state), raw little-endian doubles, trailing FNV-1a u64 over everything
/// before it.
std::string serialize_checkpoint(const SequenceModel& model);
/// Throws CheckpointError on bad magic, version mismatch, checksum failure
/// or a malformed manifest.
SequenceModel deserialize_checkpoint(const std::string& bytes);

void save_checkpoint(const SequenceModel& model, const std::filesystem::path& path);
SequenceModel load_checkpoint(const std::filesystem::path& path);

}  // namespace riskunc
