#include "focalforge/log.hpp"

#include <ostream>

#include "focalforge/error.hpp"

namespace focalforge {

RunLog::RunLog(const std::filesystem::path& jsonl, std::ostream* human, Verbosity v) : human_(human), verbosity_(v) {
  if (!jsonl.empty()) {
    if (jsonl.has_parent_path()) std::filesystem::create_directories(jsonl.parent_path());
    file_.open(jsonl, std::ios::app);
    if (!file_) throw IoError("cannot open log " + jsonl.string());
  }
}

void RunLog::event(const std::string& kind, nlohmann::json fields) {
  fields["event"] = kind;
  if (file_.is_open()) file_ << fields.dump() << '\n' << std::flush;
  if (human_ && verbosity_ != Verbosity::kQuiet) {
    std::string line = "[" + kind + "]";
    for (const auto& [k, v] : fields.items()) {
      if (k == "event") continue;
      line += " " + k + "=" + (v.is_string() ? v.get<std::string>() : v.dump());
    }
    *human_ << line << '\n' << std::flush;
  }
}

}  // namespace focalforge
