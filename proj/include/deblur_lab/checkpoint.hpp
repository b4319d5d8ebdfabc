#pragma once

// Binary checkpoints:
//   "DBCK" | u16 version | u32 header bytes | JSON header | float32 arrays
// All integers and floats little-endian. The header records the model config,
// each array's name/shape/offset, the optimizer step and training progress.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "deblur_lab/adam.hpp"
#include "deblur_lab/model.hpp"

namespace deblur {

inline constexpr std::uint16_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelConfig config;
  ModelParams params;
  AdamState optimizer;  // may be empty
  double best_val_psnr = 0.0;
  int epoch = 0;
};

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes);

// Throws IoError on write/read failure; loading validates every expected
// parameter name and shape against the stored config.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Rounds every parameter to float32, i.e. the values a save/load cycle yields.
void quantize_to_storage(ModelParams& params);

}  // namespace deblur
