#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "assoc/array.h"
#include "assoc/model.h"

namespace assoc {

struct CheckpointMeta {
  std::string arch;
  int embedding_dim = 0;
  int num_classes = 0;
  InputShape input;
  long long step = 0;
};

struct Checkpoint {
  CheckpointMeta meta;
  std::vector<std::pair<std::string, NdArray<float>>> tensors;

  const NdArray<float>* find(const std::string& name) const {
    for (const auto& [n, t] : tensors)
      if (n == name) return &t;
    return nullptr;
  }
};

// Binary layout, little-endian:
//   "ASSC" | u32 version | u32 json_len | json meta | tensor blocks to EOF
//   tensor block: u32 name_len | name | u32 rank | u64 extents[rank] | f32 data
// Written to a temp file first, then renamed into place.
void save_checkpoint(const std::string& path, const CheckpointMeta& meta,
                     const std::vector<std::pair<std::string, NdArray<float>>>& tensors);

Checkpoint load_checkpoint(const std::string& path);

}  // namespace assoc
