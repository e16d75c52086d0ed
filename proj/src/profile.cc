#include "stagesim/profile.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "stagesim/error.h"

namespace stagesim {

Millis StageProfile::solo_ms(Stage stage) const {
  switch (stage) {
    case Stage::kVision:
      return vision_solo_ms;
    case Stage::kPrefill:
      return prefill_solo_ms;
    case Stage::kDecode:
      return decode_iter_solo_ms;
  }
  return 0;
}

const std::map<int, CorunEntry>& StageProfile::table(CorunContext context) const {
  if (context == CorunContext::kDecodeVision) return decode_vision;
  if (context == CorunContext::kDecodePrefill) return decode_prefill;
  throw DomainError("solo context has no co-run table");
}

std::map<int, CorunEntry>& StageProfile::table(CorunContext context) {
  return const_cast<std::map<int, CorunEntry>&>(std::as_const(*this).table(context));
}

const CorunEntry& StageProfile::corun(CorunContext context, int sm_decode) const {
  const auto& rows = table(context);
  auto it = rows.find(sm_decode);
  if (it == rows.end()) {
    throw DomainError("profile has no " + std::string(to_string(context)) + " row for sm_decode=" +
                      std::to_string(sm_decode));
  }
  return it->second;
}

double StageProfile::batch_multiplier(int batch) const {
  if (batch < 1) throw DomainError("decode batch size must be >= 1");
  if (batch_scale.empty() || batch <= batch_scale.front().batch_size) {
    return batch_scale.empty() ? 1.0 : batch_scale.front().multiplier;
  }
  for (size_t i = 1; i < batch_scale.size(); ++i) {
    const BatchAnchor& hi = batch_scale[i];
    if (batch <= hi.batch_size) {
      const BatchAnchor& lo = batch_scale[i - 1];
      double frac = static_cast<double>(batch - lo.batch_size) / (hi.batch_size - lo.batch_size);
      return lo.multiplier + (hi.multiplier - lo.multiplier) * frac;
    }
  }
  return batch_scale.back().multiplier;
}

Millis decode_batch_latency(const StageProfile& profile, Millis base_ms, int batch) {
  return base_ms * profile.batch_multiplier(batch);
}

namespace {

void check_table(const StageProfile& p, const Gpu& gpu, CorunContext ctx,
                 std::vector<std::string>& out) {
  const std::string name(to_string(ctx));
  const auto& rows = p.table(ctx);
  const Millis front_solo = ctx == CorunContext::kDecodeVision ? p.vision_solo_ms : p.prefill_solo_ms;

  for (int s : gpu.corun_allocations()) {
    if (!rows.contains(s)) {
      out.push_back(name + ": missing row for sm_decode=" + std::to_string(s));
      break;
    }
  }
  for (const auto& [s, e] : rows) {
    if (!gpu.is_corun_allocation(s)) {
      out.push_back(name + ": row sm_decode=" + std::to_string(s) +
                    " is not a valid allocation on this gpu");
      break;
    }
  }
  for (const auto& [s, e] : rows) {
    if (!(e.decode_iter_ms > 0) || !(e.front_ms > 0)) {
      out.push_back(name + ": non-positive duration at sm_decode=" + std::to_string(s));
      break;
    }
  }
  for (auto it = rows.begin(); it != rows.end() && std::next(it) != rows.end(); ++it) {
    auto nx = std::next(it);
    if (nx->second.decode_iter_ms > it->second.decode_iter_ms) {
      out.push_back(name + ": decode_iter_ms increases with sm_decode (" +
                    std::to_string(it->first) + " -> " + std::to_string(nx->first) + ")");
      break;
    }
  }
  for (auto it = rows.begin(); it != rows.end() && std::next(it) != rows.end(); ++it) {
    auto nx = std::next(it);
    if (nx->second.front_ms < it->second.front_ms) {
      out.push_back(name + ": front_ms decreases with sm_decode (" + std::to_string(it->first) +
                    " -> " + std::to_string(nx->first) + ")");
      break;
    }
  }
  for (const auto& [s, e] : rows) {
    if (e.decode_iter_ms < p.decode_iter_solo_ms) {
      out.push_back(name + ": co-run faster than solo for decode at sm_decode=" +
                    std::to_string(s));
      break;
    }
  }
  for (const auto& [s, e] : rows) {
    if (e.front_ms < front_solo) {
      out.push_back(name + ": co-run faster than solo for front stage at sm_decode=" +
                    std::to_string(s));
      break;
    }
  }
}

}  // namespace

std::vector<std::string> validate_profile(const StageProfile& p, const Gpu& gpu) {
  std::vector<std::string> out;
  if (!(p.vision_solo_ms > 0) || !(p.prefill_solo_ms > 0) || !(p.decode_iter_solo_ms > 0)) {
    out.push_back("solo durations must be positive");
  }
  check_table(p, gpu, CorunContext::kDecodeVision, out);
  check_table(p, gpu, CorunContext::kDecodePrefill, out);

  if (p.batch_scale.empty()) {
    out.push_back("batch scale has no anchors");
  } else {
    if (p.batch_scale.front().batch_size != 1 || p.batch_scale.front().multiplier != 1.0) {
      out.push_back("batch scale must start at (1, 1.0)");
    }
    for (size_t i = 1; i < p.batch_scale.size(); ++i) {
      const auto& a = p.batch_scale[i - 1];
      const auto& b = p.batch_scale[i];
      if (b.batch_size <= a.batch_size) {
        out.push_back("batch scale anchors not strictly increasing in batch size at " +
                      std::to_string(b.batch_size));
        break;
      }
      if (b.multiplier < a.multiplier) {
        out.push_back("batch multiplier decreases at batch " + std::to_string(b.batch_size));
        break;
      }
    }
  }
  return out;
}

ProfileShape default_profile_shape() {
  ProfileShape shape;
  // Front stages lose little speed when a few SMs go to decode; decode
  // degrades sub-linearly below saturation (max co-run TBT at 12 SMs stays
  // under 80 ms up to batch 10).
  shape.front_contention = 1.02;
  shape.front_exponent = 0.25;
  shape.decode_contention = 1.05;
  shape.decode_exponent = 0.6;
  return shape;
}

StageProfile synthesize_profile(const Gpu& gpu, const ProfileShape& shape) {
  gpu.validate();
  StageProfile p;
  p.vision_solo_ms = shape.vision_solo_ms;
  p.prefill_solo_ms = shape.prefill_solo_ms;
  p.decode_iter_solo_ms = shape.decode_iter_solo_ms;
  const double n = gpu.total_sms;
  for (int s : gpu.corun_allocations()) {
    const double front_scale =
        shape.front_contention * std::pow(n / (n - s), shape.front_exponent);
    auto decode_ms = [&](int saturation) {
      return shape.decode_iter_solo_ms * shape.decode_contention *
             std::pow(std::max(1.0, static_cast<double>(saturation) / s), shape.decode_exponent);
    };
    p.decode_vision[s] = {decode_ms(shape.decode_saturation_vision),
                          shape.vision_solo_ms * front_scale};
    p.decode_prefill[s] = {decode_ms(shape.decode_saturation_prefill),
                           shape.prefill_solo_ms * front_scale};
  }
  p.batch_scale = {{1, 1.0}, {10, shape.decode_iter_batch10_ms / shape.decode_iter_solo_ms}};
  return p;
}

StageProfile default_profile() { return synthesize_profile(Gpu{84, 2}, default_profile_shape()); }

StageProfile flat_profile(const Gpu& gpu, Millis vision_ms, Millis prefill_ms, Millis decode_ms) {
  StageProfile p;
  p.vision_solo_ms = vision_ms;
  p.prefill_solo_ms = prefill_ms;
  p.decode_iter_solo_ms = decode_ms;
  for (int s : gpu.corun_allocations()) {
    p.decode_vision[s] = {decode_ms, vision_ms};
    p.decode_prefill[s] = {decode_ms, prefill_ms};
  }
  p.batch_scale = {{1, 1.0}};
  return p;
}

// Text format:
//
//   # comments and blank lines are ignored
//   [solo_ms]
//   stage,ms
//   vision,806.8
//   prefill,324.1
//   decode_iter,28.9
//   [corun]
//   context,sm_decode,decode_iter_ms,front_ms
//   decode_vision,2,...
//   [decode_batch_scale]
//   batch_size,multiplier
//   1,1
//
// Every section starts with its header row. Numbers use shortest round-trip
// decimal form so that save -> load is value-identical.
std::string profile_to_text(const StageProfile& p) {
  std::ostringstream os;
  os << "[solo_ms]\nstage,ms\n";
  os << "vision," << format_double(p.vision_solo_ms) << "\n";
  os << "prefill," << format_double(p.prefill_solo_ms) << "\n";
  os << "decode_iter," << format_double(p.decode_iter_solo_ms) << "\n";
  os << "[corun]\ncontext,sm_decode,decode_iter_ms,front_ms\n";
  for (CorunContext ctx : {CorunContext::kDecodeVision, CorunContext::kDecodePrefill}) {
    for (const auto& [s, e] : p.table(ctx)) {
      os << to_string(ctx) << ',' << s << ',' << format_double(e.decode_iter_ms) << ','
         << format_double(e.front_ms) << "\n";
    }
  }
  os << "[decode_batch_scale]\nbatch_size,multiplier\n";
  for (const auto& a : p.batch_scale) {
    os << a.batch_size << ',' << format_double(a.multiplier) << "\n";
  }
  return os.str();
}

std::string profile_to_json(const StageProfile& p) {
  nlohmann::ordered_json j;
  j["solo_ms"] = {{"vision", p.vision_solo_ms},
                  {"prefill", p.prefill_solo_ms},
                  {"decode_iter", p.decode_iter_solo_ms}};
  j["corun"] = nlohmann::ordered_json::array();
  for (CorunContext ctx : {CorunContext::kDecodeVision, CorunContext::kDecodePrefill}) {
    for (const auto& [s, e] : p.table(ctx)) {
      j["corun"].push_back({{"context", to_string(ctx)},
                            {"sm_decode", s},
                            {"decode_iter_ms", e.decode_iter_ms},
                            {"front_ms", e.front_ms}});
    }
  }
  j["decode_batch_scale"] = nlohmann::ordered_json::array();
  for (const auto& a : p.batch_scale) {
    j["decode_batch_scale"].push_back({{"batch_size", a.batch_size}, {"multiplier", a.multiplier}});
  }
  return j.dump(2) + "\n";
}

namespace {

void add_corun_row(StageProfile& p, CorunContext ctx, int s, CorunEntry e, int line) {
  if (ctx == CorunContext::kSolo) throw ParseError("co-run row cannot use the solo context", line);
  if (!p.table(ctx).emplace(s, e).second) {
    throw ParseError("duplicate " + std::string(to_string(ctx)) + " row for sm_decode=" +
                         std::to_string(s),
                     line);
  }
}

StageProfile parse_json_profile(const std::string& content) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(content);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("invalid profile json: ") + e.what());
  }
  StageProfile p;
  try {
    const auto& solo = j.at("solo_ms");
    p.vision_solo_ms = solo.at("vision").get<double>();
    p.prefill_solo_ms = solo.at("prefill").get<double>();
    p.decode_iter_solo_ms = solo.at("decode_iter").get<double>();
    for (const auto& row : j.at("corun")) {
      add_corun_row(p, parse_context(row.at("context").get<std::string>()),
                    row.at("sm_decode").get<int>(),
                    {row.at("decode_iter_ms").get<double>(), row.at("front_ms").get<double>()}, 0);
    }
    for (const auto& row : j.at("decode_batch_scale")) {
      p.batch_scale.push_back({row.at("batch_size").get<int>(), row.at("multiplier").get<double>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("invalid profile json: ") + e.what());
  }
  return p;
}

}  // namespace

StageProfile parse_profile(const std::string& content) {
  size_t first = content.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && content[first] == '{') return parse_json_profile(content);

  enum class Section { kNone, kSolo, kCorun, kBatch };
  StageProfile p;
  Section section = Section::kNone;
  bool expect_header = false;
  bool seen_vision = false, seen_prefill = false, seen_decode = false;

  std::istringstream is(content);
  std::string raw;
  int line_no = 0;
  while (std::getline(is, raw)) {
    ++line_no;
    std::string line = trim(raw);
    if (line.empty() || line.front() == '#') continue;
    if (line.front() == '[') {
      if (line == "[solo_ms]") {
        section = Section::kSolo;
      } else if (line == "[corun]") {
        section = Section::kCorun;
      } else if (line == "[decode_batch_scale]") {
        section = Section::kBatch;
      } else {
        throw ParseError("unknown section " + line, line_no);
      }
      expect_header = true;
      continue;
    }
    auto cells = split_csv(line);
    for (auto& c : cells) c = trim(c);
    if (expect_header) {
      static const std::vector<std::string> kSolo = {"stage", "ms"};
      static const std::vector<std::string> kCorun = {"context", "sm_decode", "decode_iter_ms",
                                                      "front_ms"};
      static const std::vector<std::string> kBatch = {"batch_size", "multiplier"};
      const auto& want = section == Section::kSolo    ? kSolo
                         : section == Section::kCorun ? kCorun
                                                      : kBatch;
      if (cells != want) throw ParseError("unexpected section header '" + line + "'", line_no);
      expect_header = false;
      continue;
    }
    try {
      switch (section) {
        case Section::kNone:
          throw ParseError("data row outside of a section", line_no);
        case Section::kSolo: {
          if (cells.size() != 2) throw ParseError("expected 2 columns", line_no);
          Stage st = parse_stage(cells[0]);
          double v = parse_double(cells[1]);
          if (st == Stage::kVision) {
            p.vision_solo_ms = v;
            seen_vision = true;
          } else if (st == Stage::kPrefill) {
            p.prefill_solo_ms = v;
            seen_prefill = true;
          } else {
            p.decode_iter_solo_ms = v;
            seen_decode = true;
          }
          break;
        }
        case Section::kCorun: {
          if (cells.size() != 4) throw ParseError("expected 4 columns", line_no);
          add_corun_row(p, parse_context(cells[0]), static_cast<int>(parse_int(cells[1])),
                        {parse_double(cells[2]), parse_double(cells[3])}, line_no);
          break;
        }
        case Section::kBatch: {
          if (cells.size() != 2) throw ParseError("expected 2 columns", line_no);
          p.batch_scale.push_back(
              {static_cast<int>(parse_int(cells[0])), parse_double(cells[1])});
          break;
        }
      }
    } catch (const ParseError& e) {
      if (e.line() > 0) throw;
      throw ParseError(e.what(), line_no);
    }
  }
  if (!seen_vision || !seen_prefill || !seen_decode) {
    throw ParseError("profile is missing solo durations");
  }
  return p;
}

StageProfile load_profile(const std::filesystem::path& path) {
  return parse_profile(read_text_file(path, "profile"));
}

void save_profile(const StageProfile& profile, const std::filesystem::path& path) {
  write_text_file(path,
                  path.extension() == ".json" ? profile_to_json(profile) : profile_to_text(profile));
}

}  // namespace stagesim
