// Copyright 2026 exsep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

// Flat binary weight container.
//   header: magic "EXSP", version u32, record count u32
//   record: name length u16, name bytes, rank u8, dims u32 each,
//           little-endian f64 payload
// A record named "__model_config__" carries a JSON string, one byte per f64,
// and is surfaced as `config_json` instead of a tensor.

#include <map>
#include <string>

#include "exsep/tensor.hpp"

namespace exsep {

struct Checkpoint {
  std::map<std::string, Tensor> tensors;
  std::string config_json;
};

inline constexpr uint32_t kCheckpointVersion = 1;
inline constexpr const char* kConfigRecordName = "__model_config__";

void save_checkpoint(const std::string& path, const ParamSet& params,
                     const std::string& config_json = "");
void save_checkpoint(const std::string& path,
                     const std::map<std::string, Tensor>& tensors,
                     const std::string& config_json = "");

Checkpoint load_checkpoint(const std::string& path);

}  // namespace exsep
