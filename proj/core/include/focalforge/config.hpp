#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "focalforge/cmos.hpp"
#include "focalforge/datagen.hpp"
#include "focalforge/error.hpp"
#include "focalforge/optics.hpp"
#include "focalforge/svblur.hpp"
#include "focalforge/train.hpp"

namespace focalforge {

struct RunConfig {
  LensParams lens;
  DegradeOpts degrade;
  DatasetSpec dataset;
  SplitSizes splits{795, 0, 654};
  CmosConfig model;  // [model] plus [gia]
  TrainConfig train;
  std::uint64_t seed = 0;
  int threads = 0;  // 0: hardware concurrency
};

/// Parse failure; the message starts with "<origin>:<line>:".
class ConfigError : public ValidationError {
 public:
  ConfigError(const std::string& origin, int line, const std::string& what);
  int line() const { return line_; }

 private:
  int line_;
};

// key = value lines under [lens], [degrade], [dataset], [model], [gia],
// [train] and [run] headers; '#' and ';' start comments. Keys before any
// header belong to [run]. Unknown keys, malformed values and violated
// invariants throw ConfigError naming the line.
RunConfig parse_config_text(std::string_view text, const std::string& origin = "<config>");
RunConfig parse_config(const std::filesystem::path& path);

nlohmann::json config_to_json(const RunConfig& cfg);

}  // namespace focalforge
