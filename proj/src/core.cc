#include "stagesim/core.h"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <system_error>

#include "stagesim/error.h"

namespace stagesim {

std::string_view to_string(Stage stage) {
  switch (stage) {
    case Stage::kVision:
      return "vision";
    case Stage::kPrefill:
      return "prefill";
    case Stage::kDecode:
      return "decode";
  }
  return "?";
}

std::string_view to_string(CorunContext context) {
  switch (context) {
    case CorunContext::kDecodeVision:
      return "decode_vision";
    case CorunContext::kDecodePrefill:
      return "decode_prefill";
    case CorunContext::kSolo:
      return "solo";
  }
  return "?";
}

Stage parse_stage(std::string_view text) {
  if (text == "vision") return Stage::kVision;
  if (text == "prefill") return Stage::kPrefill;
  if (text == "decode" || text == "decode_iter") return Stage::kDecode;
  throw ParseError("unknown stage '" + std::string(text) + "'");
}

CorunContext parse_context(std::string_view text) {
  if (text == "decode_vision") return CorunContext::kDecodeVision;
  if (text == "decode_prefill") return CorunContext::kDecodePrefill;
  if (text == "solo") return CorunContext::kSolo;
  throw ParseError("unknown co-run context '" + std::string(text) + "'");
}

void Gpu::validate() const {
  if (alloc_granularity < 1) {
    throw ConfigError("allocation granularity must be >= 1");
  }
  if (total_sms < 2 * alloc_granularity) {
    throw ConfigError("gpu needs at least two allocation units (total_sms=" +
                      std::to_string(total_sms) + ", granularity=" +
                      std::to_string(alloc_granularity) + ")");
  }
}

std::vector<int> Gpu::corun_allocations() const {
  std::vector<int> out;
  for (int s = alloc_granularity; s <= total_sms - alloc_granularity; s += alloc_granularity) {
    out.push_back(s);
  }
  return out;
}

bool Gpu::is_corun_allocation(int sm_decode) const {
  return sm_decode >= alloc_granularity && sm_decode <= total_sms - alloc_granularity &&
         sm_decode % alloc_granularity == 0;
}

Partition Partition::corun(const Gpu& gpu, CorunContext context, int sm_decode) {
  if (context == CorunContext::kSolo) {
    throw DomainError("co-run partition needs a co-run context");
  }
  if (!gpu.is_corun_allocation(sm_decode)) {
    throw DomainError("sm_decode=" + std::to_string(sm_decode) +
                      " is not a valid co-run allocation on a " +
                      std::to_string(gpu.total_sms) + "-SM gpu");
  }
  // Both workers are limited to multiples of the granularity, so the front
  // share is the largest such multiple that fits next to the decode share.
  return Partition{sm_decode, gpu.round_down(gpu.total_sms - sm_decode), context};
}

Partition Partition::solo(const Gpu& gpu, Stage stage) {
  if (stage == Stage::kDecode) return Partition{gpu.total_sms, 0, CorunContext::kSolo};
  return Partition{0, gpu.total_sms, CorunContext::kSolo};
}

std::string format_double(double value) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, ptr);
}

double parse_double(std::string_view text) {
  while (!text.empty() && (text.front() == ' ' || text.front() == '\t')) text.remove_prefix(1);
  while (!text.empty() && (text.back() == ' ' || text.back() == '\t' || text.back() == '\r')) {
    text.remove_suffix(1);
  }
  double value = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size() || !std::isfinite(value)) {
    throw ParseError("not a finite number: '" + std::string(text) + "'");
  }
  return value;
}

long long parse_int(std::string_view text) {
  while (!text.empty() && (text.front() == ' ' || text.front() == '\t')) text.remove_prefix(1);
  while (!text.empty() && (text.back() == ' ' || text.back() == '\t' || text.back() == '\r')) {
    text.remove_suffix(1);
  }
  long long value = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw ParseError("not an integer: '" + std::string(text) + "'");
  }
  return value;
}

std::vector<std::string> split_csv(std::string_view line) {
  std::vector<std::string> out;
  size_t pos = 0;
  while (true) {
    const size_t comma = line.find(',', pos);
    if (comma == std::string_view::npos) {
      out.emplace_back(line.substr(pos));
      break;
    }
    out.emplace_back(line.substr(pos, comma - pos));
    pos = comma + 1;
  }
  return out;
}

std::string trim(std::string_view text) {
  auto ws = [](char c) { return c == ' ' || c == '\t' || c == '\r'; };
  while (!text.empty() && ws(text.front())) text.remove_prefix(1);
  while (!text.empty() && ws(text.back())) text.remove_suffix(1);
  return std::string(text);
}

std::string read_text_file(const std::filesystem::path& path, std::string_view what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + std::string(what) + " " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, std::string_view content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << content;
  if (!out) throw ConfigError("write failed for " + path.string());
}

}  // namespace stagesim
