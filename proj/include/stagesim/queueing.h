#pragma once

#include <optional>
#include <span>
#include <vector>

#include "stagesim/core.h"
#include "stagesim/engine.h"

namespace stagesim {

// Service time T is the span from vision start to prefill end, in seconds.
struct ServiceStats {
  double mean_t_s = 0;            // E[T]
  double second_moment_t_s2 = 0;  // E[T^2]
  double arrival_rate = 0;        // lambda, req/s
  long samples = 0;

  double utilization() const { return arrival_rate * mean_t_s; }
};

// Pollaczek-Khinchine mean wait in seconds. Throws OverloadError when
// utilization >= 1 and DomainError on negative inputs or E[T^2] < E[T]^2.
double mg1_wait(const ServiceStats& stats);

// Sample moments (1/n estimator) over requests with both stamps, and the
// empirical arrival rate (n - 1) / (last - first arrival). Throws DomainError
// when no request has completed its prefill.
ServiceStats measure_service_stats(std::span<const Request> requests);
ServiceStats measure_service_stats(const std::vector<TraceRecord>& trace);

// Rebuilds arrival, vision start and prefill end stamps from a trace.
// Hybrid passes count as prefill; the last prefill end per request wins.
std::vector<Request> requests_from_trace(const std::vector<TraceRecord>& trace);

// Mean of (vision start - arrival) in seconds over requests that started.
double measured_wait(std::span<const Request> requests);

struct WaitComparison {
  double measured_s = 0;
  std::optional<double> predicted_s;  // empty when overloaded
  std::optional<double> relative_error;
  double utilization = 0;
};

WaitComparison compare_wait(std::span<const Request> requests, const ServiceStats& stats);

}  // namespace stagesim
