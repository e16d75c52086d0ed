#include "stagesim/offload.h"

#include <algorithm>
#include <sstream>

#include "stagesim/error.h"

namespace stagesim {

void OffloadPlan::validate() const {
  if (!(model_bytes > 0) || !(forward_ms > 0) || !(bandwidth_bytes_per_s > 0)) {
    throw DomainError("model size, forward time and bandwidth must be positive");
  }
  if (physical_layers < 2 || physical_layers > num_layers) {
    throw DomainError("physical layers must satisfy 2 <= K <= num_layers");
  }
}

int next_logical_layer(int cur_layer, int physical_layers, int num_layers) {
  if (num_layers < 1 || cur_layer < 0 || cur_layer >= num_layers) {
    throw DomainError("layer " + std::to_string(cur_layer) + " outside [0, " +
                      std::to_string(num_layers) + ")");
  }
  return (cur_layer + physical_layers) % num_layers;
}

double required_bandwidth(const OffloadPlan& plan) {
  const int n = plan.num_layers;
  const int k = plan.physical_layers;
  if (n <= 2) throw DomainError("bandwidth bound needs more than two layers");
  // Layer l (1-based, l > K) needs l - K layers transferred, and swap-in can
  // only use the window after layer 1 finishes: (l - 2) layer-times.
  double worst = 0;
  for (int l = k + 1; l <= n; ++l) {
    worst = std::max(worst, static_cast<double>(l - k) / (l - 2));
  }
  return plan.model_bytes / (plan.forward_ms / 1000.0) * worst;
}

StallLedger simulate_offload(const OffloadPlan& plan, int passes) {
  plan.validate();
  if (passes < 1) throw DomainError("passes must be >= 1");
  const int n = plan.num_layers;
  const int k = plan.physical_layers;
  const Millis compute_ms = plan.forward_ms / n;
  const Millis transfer_ms = plan.model_bytes / n / plan.bandwidth_bytes_per_s * 1000.0;
  const Millis eps = 1e-9 * plan.forward_ms;
  const long total = static_cast<long>(passes) * n;

  // Global layer index g = pass * n + layer. Ready time of each layer's
  // weights; the first K are resident before the first pass.
  std::vector<Millis> ready(total, 0.0);
  std::vector<bool> loaded(total, false);
  for (long g = 0; g < std::min<long>(k, total); ++g) loaded[g] = true;

  StallLedger out;
  out.passes = passes;
  out.wait_ms.reserve(total);
  out.pass_stall_ms.assign(passes, 0.0);

  Millis compute_free = 0;  // end of the previous layer's compute
  Millis dma_free = 0;      // end of the previous transfer
  for (long g = 0; g < total; ++g) {
    if (!loaded[g]) throw InvariantViolation("layer executed before its weights were queued");
    Millis start = std::max(compute_free, ready[g]);
    Millis wait = start - compute_free;
    if (wait < eps) {
      wait = 0;
      start = compute_free;
    }
    out.wait_ms.push_back(wait);
    out.pass_stall_ms[g / n] += wait;
    out.total_stall_ms += wait;
    compute_free = start + compute_ms;

    // The slot just freed receives the next logical layer.
    const int layer = static_cast<int>(g % n);
    const int next = next_logical_layer(layer, k, n);
    const long next_g = g + k;
    if (next_g < total) {
      if (next_g % n != next) throw InvariantViolation("ring buffer order mismatch");
      const Millis xfer_start = std::max(compute_free, dma_free);
      dma_free = xfer_start + transfer_ms;
      ready[next_g] = dma_free;
      loaded[next_g] = true;
    }
  }
  out.effective_forward_ms = passes * plan.forward_ms + out.total_stall_ms;
  return out;
}

double resident_bytes(const OffloadPlan& plan, double activation_overhead_bytes) {
  plan.validate();
  return static_cast<double>(plan.physical_layers) / plan.num_layers * plan.model_bytes +
         activation_overhead_bytes;
}

std::string stall_ledger_csv(const StallLedger& ledger, int num_layers) {
  std::ostringstream os;
  os << "pass,layer,wait_ms\n";
  for (size_t i = 0; i < ledger.wait_ms.size(); ++i) {
    os << i / num_layers << ',' << i % num_layers << ',' << format_double(ledger.wait_ms[i])
       << "\n";
  }
  return os.str();
}

}  // namespace stagesim
