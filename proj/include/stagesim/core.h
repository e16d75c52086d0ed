#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace stagesim {

// Simulated time and durations, in milliseconds.
using Millis = double;

using RequestId = std::int64_t;

enum class Stage { kVision, kPrefill, kDecode };

// Which pair of stages shares the GPU at an instant.
enum class CorunContext { kDecodeVision, kDecodePrefill, kSolo };

std::string_view to_string(Stage stage);
std::string_view to_string(CorunContext context);
Stage parse_stage(std::string_view text);
CorunContext parse_context(std::string_view text);

struct Gpu {
  int total_sms = 84;
  int alloc_granularity = 2;

  // Throws ConfigError unless total_sms >= 2 * alloc_granularity >= 2.
  void validate() const;

  // The co-run allocations available to the decode worker:
  // granularity, 2 * granularity, ..., up to total_sms - granularity.
  std::vector<int> corun_allocations() const;
  bool is_corun_allocation(int sm_decode) const;

  int round_down(int sms) const { return sms / alloc_granularity * alloc_granularity; }
};

struct Partition {
  int sm_decode = 0;
  int sm_front = 0;
  CorunContext context = CorunContext::kSolo;

  // Decode and a front stage share the GPU; sm_front is the remainder.
  // Throws DomainError for allocations outside Gpu::corun_allocations().
  static Partition corun(const Gpu& gpu, CorunContext context, int sm_decode);
  // The single running stage holds every SM.
  static Partition solo(const Gpu& gpu, Stage stage);

  bool operator==(const Partition&) const = default;
};

struct StageSpan {
  std::optional<Millis> start;
  std::optional<Millis> end;

  bool done() const { return end.has_value(); }
  Millis duration() const { return *end - *start; }
};

// One agentic inference job. Stamps are filled in by the engine.
struct Request {
  RequestId id = 0;
  Millis arrival = 0;
  int prompt_tokens = 1;
  int gen_len = 1;  // number of decode iterations / output tokens

  StageSpan vision;
  StageSpan prefill;  // prefill.end is the first-token time
  std::vector<StageSpan> decode_iters;
  std::vector<Millis> emitted;  // one entry per decode iteration

  bool finished() const { return static_cast<int>(emitted.size()) == gen_len; }
  Millis completion() const { return emitted.back(); }
};

// Shortest decimal text that parses back to the same double.
std::string format_double(double value);
double parse_double(std::string_view text);
long long parse_int(std::string_view text);

// Comma split; a trailing comma yields a final empty cell.
std::vector<std::string> split_csv(std::string_view line);
std::string trim(std::string_view text);

// Whole file as bytes. Throws ConfigError naming `what` when unreadable.
std::string read_text_file(const std::filesystem::path& path, std::string_view what);
void write_text_file(const std::filesystem::path& path, std::string_view content);

}  // namespace stagesim
