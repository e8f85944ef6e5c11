#pragma once

#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "lorafuse/bench/harness.hpp"

namespace lorafuse::bench {

// JSON form of a benchmark config. Every key is optional and defaults to
// the in-code value; unknown keys are rejected.
BenchmarkConfig benchmark_config_from_json(std::string_view text);
std::string benchmark_config_to_json(const BenchmarkConfig& config, int indent = 2);

// Flat "section.key" -> value pairs for report headers.
std::vector<std::pair<std::string, std::string>> flatten_config(const BenchmarkConfig& config);

}  // namespace lorafuse::bench
