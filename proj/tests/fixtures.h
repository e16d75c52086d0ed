#pragma once

#include <vector>

#include "stagesim/core.h"
#include "stagesim/profile.h"

namespace stagesim::testing {

// 6-SM GPU with 2-SM units: decode may hold 2 or 4 SMs while co-running.
inline Gpu toy_gpu() { return Gpu{6, 2}; }

// Hand-written two-row tables per context.
inline StageProfile toy_profile() {
  StageProfile p;
  p.vision_solo_ms = 100;
  p.prefill_solo_ms = 50;
  p.decode_iter_solo_ms = 10;
  p.decode_vision[2] = {20, 120};
  p.decode_vision[4] = {12, 200};
  p.decode_prefill[2] = {25, 60};
  p.decode_prefill[4] = {14, 90};
  p.batch_scale = {{1, 1.0}};
  return p;
}

// n requests at the given arrival times (ms) with fixed lengths.
inline std::vector<Request> requests_at(const std::vector<Millis>& arrivals, int gen_len,
                                        int prompt_tokens = 1664) {
  std::vector<Request> out;
  for (size_t i = 0; i < arrivals.size(); ++i) {
    Request r;
    r.id = static_cast<RequestId>(i);
    r.arrival = arrivals[i];
    r.gen_len = gen_len;
    r.prompt_tokens = prompt_tokens;
    out.push_back(r);
  }
  return out;
}

}  // namespace stagesim::testing
