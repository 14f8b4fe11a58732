// Copyright Contributors to the swiftgs project
// SPDX-License-Identifier: Apache-2.0
//
// Run configuration file: a JSON object with optional sections
//   "train", "weights", "model", "sample", "render", "calibration_box",
//   "episodes", "inference", "dataset"
// Every key is optional; missing keys keep their defaults and unknown keys
// are errors naming the section and key.
#pragma once

#include "swiftgs/meta.hpp"

#include <filesystem>
#include <string>

namespace swiftgs {

struct DatasetConfig {
    int train_episodes = 200;
    int held_out_episodes = 50;
};

struct InferenceConfig {
    int inner_steps = 3;  // used by `calibrate`
    double inner_lr = 3e-3;
    SampleConfig sample;
    RenderOptions render;
};

struct RunConfig {
    TrainConfig train;
    ModelConfig model;
    EpisodeConfig episodes;
    DatasetConfig dataset;
    InferenceConfig inference;

    void validate() const;
};

class ConfigError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

RunConfig parse_run_config(const std::string &text);
RunConfig load_run_config(const std::filesystem::path &path);
/// Every field, including defaults; parse_run_config(format_run_config(c)) == c.
std::string format_run_config(const RunConfig &config);

}  // namespace swiftgs
