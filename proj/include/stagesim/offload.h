#pragma once

#include <string>
#include <vector>

#include "stagesim/core.h"

namespace stagesim {

// Ring-buffer weight offloading for a stack of uniform encoder layers: only
// physical_layers slots live on the GPU and each slot is refilled with the
// next logical layer as soon as the layer it holds has executed.
struct OffloadPlan {
  double model_bytes = 0;           // S
  Millis forward_ms = 0;            // T, one full forward pass
  int num_layers = 0;
  int physical_layers = 2;          // K
  double bandwidth_bytes_per_s = 0; // B, host-to-device

  // Throws DomainError unless 2 <= K <= num_layers and S, T, B > 0.
  void validate() const;
};

struct StallLedger {
  int passes = 0;
  std::vector<Millis> wait_ms;       // per executed layer, passes * num_layers entries
  std::vector<Millis> pass_stall_ms; // per pass
  Millis total_stall_ms = 0;
  Millis effective_forward_ms = 0;   // passes * T + total_stall_ms
};

// Logical layer loaded into a slot after cur_layer has executed.
// Throws DomainError when cur_layer is outside [0, num_layers).
int next_logical_layer(int cur_layer, int physical_layers, int num_layers);

// Minimum bandwidth (bytes/s) at which swap-in never delays a layer within
// one forward pass; 0 when every layer is resident. Throws DomainError when
// num_layers <= 2.
double required_bandwidth(const OffloadPlan& plan);

// Two-timeline simulation of compute and a single DMA engine over `passes`
// back-to-back forwards. Waits below 1e-9 * T are rounding noise and count
// as zero.
StallLedger simulate_offload(const OffloadPlan& plan, int passes = 1);

// Bytes held on the GPU for weights plus a fixed activation overhead.
double resident_bytes(const OffloadPlan& plan, double activation_overhead_bytes = 0);

// CSV with header pass,layer,wait_ms.
std::string stall_ledger_csv(const StallLedger& ledger, int num_layers);

}  // namespace stagesim
