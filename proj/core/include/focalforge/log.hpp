#pragma once

#include <filesystem>
#include <fstream>
#include <iosfwd>
#include <string>

#include <nlohmann/json.hpp>

namespace focalforge {

enum class Verbosity { kQuiet, kNormal, kVerbose };

/// Line-delimited JSON events with an optional human-readable mirror.
class RunLog {
 public:
  RunLog() = default;  // discards everything
  RunLog(const std::filesystem::path& jsonl, std::ostream* human, Verbosity v = Verbosity::kNormal);

  void event(const std::string& kind, nlohmann::json fields = nlohmann::json::object());
  void set_human(std::ostream* human, Verbosity v) {
    human_ = human;
    verbosity_ = v;
  }

 private:
  std::ofstream file_;
  std::ostream* human_ = nullptr;
  Verbosity verbosity_ = Verbosity::kQuiet;
};

}  // namespace focalforge
