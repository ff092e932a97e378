#ifndef FOX_CHECKPOINT_HPP_
#define FOX_CHECKPOINT_HPP_

// Binary checkpoint:
//   "FOXCKPT1" | u32 tensor count | per tensor:
//   u16 name length, name bytes, u8 dtype (0 = f32), u8 ndim, u32 dims[ndim],
//   row-major payload. All integers and floats little-endian.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fox/model.hpp"

namespace fox {

inline constexpr char kCheckpointMagic[8] = {'F', 'O', 'X', 'C', 'K', 'P', 'T', '1'};

struct TensorRecord {
  std::string name;
  std::uint8_t dtype = 0;
  std::vector<std::uint32_t> dims;
  std::vector<float> data;
};

void write_checkpoint(const std::filesystem::path& path, const std::vector<TensorRecord>& tensors);
std::vector<TensorRecord> read_checkpoint(const std::filesystem::path& path);

void ckpt_save(const ModelParams<float>& params, const ModelConfig& cfg, const std::filesystem::path& path);

// Validates tensor names, order and dims against cfg.
ModelParams<float> ckpt_load(const std::filesystem::path& path, const ModelConfig& cfg);

}  // namespace fox

#endif  // FOX_CHECKPOINT_HPP_
