#pragma once

#include <string>
#include <vector>

#include "dabf/model.hpp"

namespace dabf {

struct ParamRecord {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

/// Parameters rounded to f32, in registration order.
std::vector<ParamRecord> snapshot_params(Model& model);

/// Overwrites model parameters; names and shapes must match exactly.
void load_params(Model& model, const std::vector<ParamRecord>& records);

/// Little-endian binary: magic "DABF", u32 version, u32 record count,
/// then per record u16 name length, name bytes, u8 ndim, u32 dims, f32
/// payload.
void save_checkpoint(const std::string& path, const std::vector<ParamRecord>& records);
std::vector<ParamRecord> load_checkpoint(const std::string& path);

constexpr uint32_t kCheckpointVersion = 1;

}  // namespace dabf
