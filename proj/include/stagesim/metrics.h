#pragma once

#include <span>
#include <string>
#include <vector>

#include "stagesim/core.h"

namespace stagesim {

struct RequestMetrics {
  RequestId id = 0;
  Millis e2e_ms = 0;
  Millis ttft_ms = 0;
  Millis queue_wait_ms = 0;      // arrival -> vision start
  std::vector<Millis> tbt_ms;    // gaps between consecutive decode emissions
};

struct MetricsReport {
  std::vector<RequestMetrics> requests;

  int completed = 0;
  Millis makespan_ms = 0;  // first arrival -> last completion
  Millis avg_e2e_ms = 0;
  Millis max_e2e_ms = 0;
  Millis avg_ttft_ms = 0;
  Millis avg_tbt_ms = 0;
  Millis p99_tbt_ms = 0;
  double throughput_req_per_s = 0;
  double avg_decode_batch = 0;
  Millis avg_queue_wait_ms = 0;
};

// Aggregates finished requests. decode_batches holds the number of decode
// requests in every executed decode step. Unfinished requests are skipped.
MetricsReport compute_metrics(std::span<const Request> requests,
                              std::span<const int> decode_batches);

// Per-request rows: id,e2e_ms,ttft_ms,queue_wait_ms,mean_tbt_ms,max_tbt_ms
std::string metrics_requests_csv(const MetricsReport& report);
// Full report including per-request TBT lists.
std::string metrics_json(const MetricsReport& report);

}  // namespace stagesim
