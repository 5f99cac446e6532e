#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "loopformer/tensor.hpp"

namespace loopformer {

// On-disk format: magic + version header, config snapshot as key=value text,
// then per-parameter records (name, shape, raw little-endian 64-bit floats),
// optionally followed by Adam moment buffers in the same parameter order.
struct Checkpoint {
  std::string config_text;
  uint64_t step = 0;
  std::vector<std::pair<std::string, Tensor>> params;
  bool has_optimizer = false;
  uint64_t adam_t = 0;
  std::vector<std::vector<double>> adam_m;
  std::vector<std::vector<double>> adam_v;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// Arithmetic mean of the parameters; optimizer state is dropped, config and
// step come from the last path. All checkpoints must agree on parameter
// names and shapes; mismatches raise an error listing every offender.
Checkpoint average_checkpoints(const std::vector<std::string>& paths);

// Copies checkpoint values into the target tensors, verifying names/shapes
// position by position.
void load_parameters(std::vector<std::pair<std::string, Tensor>> target, const Checkpoint& ckpt);

}  // namespace loopformer
