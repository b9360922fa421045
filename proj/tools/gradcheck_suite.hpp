#pragma once

#include <string>

#include <nlohmann/json.hpp>

namespace focalforge::tools {

// module: "ops", "gia", "cmos" or "all". Returns a JSON report with a
// top-level "passed" flag.
nlohmann::json run_gradcheck_suite(const std::string& module, std::uint64_t seed);

}  // namespace focalforge::tools
