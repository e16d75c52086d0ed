#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "stagesim/core.h"
#include "stagesim/profile.h"

namespace stagesim {

struct LengthDist {
  enum class Kind { kFixed, kUniform };

  Kind kind = Kind::kFixed;
  int lo = 1;
  int hi = 1;

  static LengthDist fixed(int n) { return {Kind::kFixed, n, n}; }
  static LengthDist uniform(int lo, int hi) { return {Kind::kUniform, lo, hi}; }

  // Throws ConfigError unless 1 <= lo <= hi.
  void validate(const std::string& what) const;
  int sample(std::mt19937_64& rng) const;
};

// "50" -> fixed, "30..80" -> uniform. Throws ConfigError.
LengthDist parse_length_dist(const std::string& text);

inline constexpr int kDefaultRequestCount = 500;

struct WorkloadSpec {
  enum class Kind { kPoisson, kTrace };

  Kind kind = Kind::kPoisson;
  double rate_per_s = 0.5;
  int count = kDefaultRequestCount;
  LengthDist gen_len = LengthDist::uniform(30, 80);
  LengthDist prompt_tokens = LengthDist::fixed(1664);
  std::uint64_t seed = 0;
  std::filesystem::path trace_path;
  double time_scale = 1.0;

  void validate() const;
};

// Poisson arrivals: the first request arrives one exponential gap after 0.
// Ids are 0..count-1. Deterministic given the seed.
std::vector<Request> generate(const WorkloadSpec& spec);

// Trace CSV with header arrival_s,prompt_tokens,output_tokens. Arrival
// times are multiplied by time_scale. Throws ParseError naming the line.
std::vector<Request> parse_trace_workload(const std::string& content, double time_scale = 1.0);
std::vector<Request> load_trace_workload(const std::filesystem::path& path,
                                         double time_scale = 1.0);

// Dispatches on spec.kind.
std::vector<Request> make_workload(const WorkloadSpec& spec);

std::string workload_to_csv(const std::vector<Request>& requests);
void save_workload(const std::vector<Request>& requests, const std::filesystem::path& path);

// Message when rate_per_s is at or above the solo front-stage capacity
// 1 / (t_v + t_p) of the profile; empty otherwise.
std::optional<std::string> load_warning(double rate_per_s, const StageProfile& profile);

}  // namespace stagesim
