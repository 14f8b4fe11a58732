// Copyright Contributors to the swiftgs project
// SPDX-License-Identifier: Apache-2.0
//
// Binary checkpoint of the shared parameters:
//   "SWGS" | u32 version | u32 header bytes | header JSON | f64 values
// All integers and doubles little-endian; the header records the model
// configuration and every parameter block's name and length in visit order.
#pragma once

#include "swiftgs/meta.hpp"

#include <filesystem>
#include <stdexcept>
#include <string>

namespace swiftgs {

inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

std::string encode_checkpoint(const SharedParams<double> &params);
SharedParams<double> decode_checkpoint(const std::string &bytes);

void save_checkpoint(const std::filesystem::path &path, const SharedParams<double> &params);
SharedParams<double> load_checkpoint(const std::filesystem::path &path);

/// ModelConfig <-> JSON text; unknown keys are rejected.
std::string model_config_to_json(const ModelConfig &config);
ModelConfig model_config_from_json(const std::string &text);

}  // namespace swiftgs
