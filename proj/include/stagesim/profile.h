#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "stagesim/core.h"

namespace stagesim {

struct CorunEntry {
  Millis decode_iter_ms = 0;
  Millis front_ms = 0;

  bool operator==(const CorunEntry&) const = default;
};

struct BatchAnchor {
  int batch_size = 1;
  double multiplier = 1.0;

  bool operator==(const BatchAnchor&) const = default;
};

// Per-forward-pass latency model of the three stages.
//
// Solo durations are full-GPU forward passes. The co-run tables map the
// decode worker's SM share to the (decode iteration, front stage) durations
// while the two run side by side. Decode durations are for batch size 1 and
// are scaled by the batch multiplier curve.
struct StageProfile {
  Millis vision_solo_ms = 0;
  Millis prefill_solo_ms = 0;
  Millis decode_iter_solo_ms = 0;

  std::map<int, CorunEntry> decode_vision;
  std::map<int, CorunEntry> decode_prefill;

  // Sorted by batch size; the first anchor is (1, 1.0).
  std::vector<BatchAnchor> batch_scale;

  Millis solo_ms(Stage stage) const;
  const std::map<int, CorunEntry>& table(CorunContext context) const;
  std::map<int, CorunEntry>& table(CorunContext context);

  // Throws DomainError if the context has no row for sm_decode.
  const CorunEntry& corun(CorunContext context, int sm_decode) const;

  // Linear interpolation between anchors, flat beyond the last one.
  // Throws DomainError for batch < 1.
  double batch_multiplier(int batch) const;

  bool operator==(const StageProfile&) const = default;
};

// Returns one message per violated profile invariant; empty means valid.
// Violations of the same kind within one context are reported once, naming
// the first offending row.
std::vector<std::string> validate_profile(const StageProfile& profile, const Gpu& gpu);

// base_ms scaled by the batch multiplier. Throws DomainError for batch < 1.
Millis decode_batch_latency(const StageProfile& profile, Millis base_ms, int batch);

// Parameters of the closed-form co-run model used to build profiles when no
// measured table is available.
//
//   front_ms(s)  = solo_front * front_contention * (N / (N - s))^front_exponent
//   decode_ms(s) = solo_decode * decode_contention * max(1, sat / s)^decode_exponent
//
// where s is the decode worker's SM share and sat is a per-context
// saturation point beyond which the memory-bound decode stops speeding up.
// Field defaults give the linear-scaling form; default_profile_shape() holds
// the shipped calibration.
struct ProfileShape {
  Millis vision_solo_ms = 806.8;
  Millis prefill_solo_ms = 324.1;
  Millis decode_iter_solo_ms = 28.9;
  double front_contention = 1.10;
  double decode_contention = 1.10;
  double front_exponent = 1.0;
  double decode_exponent = 1.0;
  int decode_saturation_vision = 24;
  int decode_saturation_prefill = 30;
  // Decode iteration latency at batch 10 (batch 1 is decode_iter_solo_ms).
  Millis decode_iter_batch10_ms = 30.6;
};

StageProfile synthesize_profile(const Gpu& gpu, const ProfileShape& shape);

// The shipped calibration for an 84-SM GPU with 2-SM allocation units.
ProfileShape default_profile_shape();
StageProfile default_profile();

// A profile whose co-run durations equal the solo durations for every
// allocation, so timing does not depend on the partition.
StageProfile flat_profile(const Gpu& gpu, Millis vision_ms, Millis prefill_ms,
                          Millis decode_ms);

// Text (sectioned CSV) and JSON renderings. parse_profile accepts either.
std::string profile_to_text(const StageProfile& profile);
std::string profile_to_json(const StageProfile& profile);
StageProfile parse_profile(const std::string& content);
StageProfile load_profile(const std::filesystem::path& path);
void save_profile(const StageProfile& profile, const std::filesystem::path& path);

}  // namespace stagesim
