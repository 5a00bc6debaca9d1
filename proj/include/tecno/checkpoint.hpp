#pragma once

// Checkpoint file layout (all integers little-endian):
//
//   10 bytes  magic "TECNO-CKPT"
//   u32       version (1)
//   u64       header length H
//   H bytes   UTF-8 JSON header: {"arch": {...}, "seed": int, "training": {...}}
//   u64       parameter count P
//   P x f32   parameters in the canonical for_each_array order; each conv
//             weight array is laid out [out][in][tap]

#include <cstdint>
#include <filesystem>

#include "json.hpp"
#include "tecno/model.hpp"

namespace tecno {

inline constexpr char kCheckpointMagic[] = "TECNO-CKPT";
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelParams<float> params;
  std::uint64_t seed = 0;
  nlohmann::json training = nlohmann::json::object();
};

nlohmann::json arch_to_json(const ArchConfig& config);
ArchConfig arch_from_json(const nlohmann::json& j, ArchConfig defaults = {});

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace tecno
