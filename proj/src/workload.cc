#include "stagesim/workload.h"

#include <sstream>

#include "stagesim/error.h"

namespace stagesim {

void LengthDist::validate(const std::string& what) const {
  if (lo < 1 || hi < lo) {
    throw ConfigError(what + " range must satisfy 1 <= lo <= hi, got " + std::to_string(lo) +
                      ".." + std::to_string(hi));
  }
  if (kind == Kind::kFixed && lo != hi) throw ConfigError(what + ": fixed length with lo != hi");
}

int LengthDist::sample(std::mt19937_64& rng) const {
  if (kind == Kind::kFixed) return lo;
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

LengthDist parse_length_dist(const std::string& text) {
  try {
    const size_t dots = text.find("..");
    if (dots == std::string::npos) return LengthDist::fixed(static_cast<int>(parse_int(text)));
    return LengthDist::uniform(static_cast<int>(parse_int(text.substr(0, dots))),
                               static_cast<int>(parse_int(text.substr(dots + 2))));
  } catch (const ParseError&) {
    throw ConfigError("length must be N or LO..HI, got '" + text + "'");
  }
}

void WorkloadSpec::validate() const {
  if (count < 0) throw ConfigError("request count must be >= 0");
  gen_len.validate("gen_len");
  prompt_tokens.validate("prompt_tokens");
  if (kind == Kind::kPoisson && !(rate_per_s > 0)) {
    throw ConfigError("poisson rate must be positive");
  }
  if (kind == Kind::kTrace) {
    if (trace_path.empty()) throw ConfigError("trace workload needs a trace path");
    if (!(time_scale > 0)) throw ConfigError("time scale must be positive");
  }
}

std::vector<Request> generate(const WorkloadSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::exponential_distribution<double> gap_s(spec.rate_per_s);
  std::vector<Request> out;
  out.reserve(spec.count);
  Millis t = 0;
  for (int i = 0; i < spec.count; ++i) {
    t += gap_s(rng) * 1000.0;
    Request r;
    r.id = i;
    r.arrival = t;
    r.prompt_tokens = spec.prompt_tokens.sample(rng);
    r.gen_len = spec.gen_len.sample(rng);
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<Request> parse_trace_workload(const std::string& content, double time_scale) {
  if (!(time_scale > 0)) throw ConfigError("time scale must be positive");
  std::istringstream is(content);
  std::string raw;
  int line_no = 0;
  bool header = false;
  std::vector<Request> out;
  while (std::getline(is, raw)) {
    ++line_no;
    const std::string line = trim(raw);
    if (line.empty()) continue;
    if (!header) {
      if (line != "arrival_s,prompt_tokens,output_tokens") {
        throw ParseError("expected header arrival_s,prompt_tokens,output_tokens", line_no);
      }
      header = true;
      continue;
    }
    const auto cells = split_csv(line);
    if (cells.size() != 3) throw ParseError("expected 3 columns", line_no);
    Request r;
    try {
      r.arrival = parse_double(cells[0]) * 1000.0 * time_scale;
      r.prompt_tokens = static_cast<int>(parse_int(cells[1]));
      r.gen_len = static_cast<int>(parse_int(cells[2]));
    } catch (const ParseError& e) {
      throw ParseError(e.what(), line_no);
    }
    if (r.arrival < 0) throw ParseError("negative arrival time", line_no);
    if (r.prompt_tokens < 1) throw ParseError("prompt_tokens must be positive", line_no);
    if (r.gen_len < 1) throw ParseError("output_tokens must be positive", line_no);
    if (!out.empty() && r.arrival < out.back().arrival) {
      throw ParseError("arrivals not sorted", line_no);
    }
    r.id = static_cast<RequestId>(out.size());
    out.push_back(std::move(r));
  }
  if (!header) throw ParseError("missing header", line_no);
  return out;
}

std::vector<Request> load_trace_workload(const std::filesystem::path& path, double time_scale) {
  return parse_trace_workload(read_text_file(path, "workload trace"), time_scale);
}

std::vector<Request> make_workload(const WorkloadSpec& spec) {
  spec.validate();
  if (spec.kind == WorkloadSpec::Kind::kTrace) {
    return load_trace_workload(spec.trace_path, spec.time_scale);
  }
  return generate(spec);
}

std::string workload_to_csv(const std::vector<Request>& requests) {
  std::ostringstream os;
  os << "arrival_s,prompt_tokens,output_tokens\n";
  for (const Request& r : requests) {
    os << format_double(r.arrival / 1000.0) << ',' << r.prompt_tokens << ',' << r.gen_len << "\n";
  }
  return os.str();
}

void save_workload(const std::vector<Request>& requests, const std::filesystem::path& path) {
  write_text_file(path, workload_to_csv(requests));
}

std::optional<std::string> load_warning(double rate_per_s, const StageProfile& profile) {
  const double capacity = 1000.0 / (profile.vision_solo_ms + profile.prefill_solo_ms);
  if (rate_per_s < capacity) return std::nullopt;
  return "arrival rate " + format_double(rate_per_s) +
         " req/s is at or above the solo front-stage capacity " + format_double(capacity) +
         " req/s; queues will grow without bound";
}

}  // namespace stagesim
