#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "focalforge/autodiff/nn.hpp"
#include "focalforge/autodiff/optim.hpp"

namespace focalforge::ad {

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

// Flat little-endian container: magic "FFCK", u32 version, u64 count, then per
// tensor u32 name length, name bytes, u32 rank, i64 dims, f64 values.
void write_tensors(const std::filesystem::path& path, const NamedTensors& tensors);
NamedTensors read_tensors(const std::filesystem::path& path);

// Writes <path> and <path>.json. Optimizer moments, when given, are stored as
// "adam.m/<name>" and "adam.v/<name>" with the step count in the sidecar.
void save_checkpoint(const std::filesystem::path& path, const ParameterSet& params, const nlohmann::json& meta,
                     const Adam* optimizer = nullptr);

struct LoadedCheckpoint {
  nlohmann::json meta;
  bool has_optimizer = false;
  AdamState optimizer;
};

// Copies stored values into matching parameters. Every parameter must be
// present with an identical shape; extra tensors other than optimizer state are
// errors.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path, ParameterSet& params);

nlohmann::json read_checkpoint_meta(const std::filesystem::path& path);

}  // namespace focalforge::ad
