#include "stagesim/queueing.h"

#include <algorithm>
#include <cmath>
#include <map>

#include "stagesim/error.h"

namespace stagesim {

double mg1_wait(const ServiceStats& s) {
  if (!(s.arrival_rate >= 0) || !(s.mean_t_s >= 0) || !(s.second_moment_t_s2 >= 0)) {
    throw DomainError("service statistics must be non-negative");
  }
  const double var_floor = s.mean_t_s * s.mean_t_s;
  if (s.second_moment_t_s2 < var_floor * (1 - 1e-12)) {
    throw DomainError("second moment below squared mean");
  }
  const double rho = s.utilization();
  if (rho >= 1) {
    throw OverloadError("utilization " + format_double(rho) + " >= 1, queue is unstable");
  }
  return s.arrival_rate * s.second_moment_t_s2 / (2 * (1 - rho));
}

ServiceStats measure_service_stats(std::span<const Request> requests) {
  ServiceStats out;
  double sum = 0, sum_sq = 0;
  for (const Request& r : requests) {
    if (!r.vision.start || !r.prefill.end) continue;
    const double t = (*r.prefill.end - *r.vision.start) / 1000.0;
    sum += t;
    sum_sq += t * t;
    ++out.samples;
  }
  if (out.samples == 0) throw DomainError("no request completed prefill");
  out.mean_t_s = sum / out.samples;
  out.second_moment_t_s2 = sum_sq / out.samples;

  if (requests.size() >= 2) {
    Millis first = requests.front().arrival, last = first;
    for (const Request& r : requests) {
      first = std::min(first, r.arrival);
      last = std::max(last, r.arrival);
    }
    if (!(last > first)) throw DomainError("all arrivals coincide");
    out.arrival_rate = (requests.size() - 1) / ((last - first) / 1000.0);
  }
  return out;
}

std::vector<Request> requests_from_trace(const std::vector<TraceRecord>& trace) {
  std::map<RequestId, Request> by_id;
  for (const TraceRecord& rec : trace) {
    if (rec.request_id < 0) continue;
    switch (rec.kind) {
      case TraceKind::kArrival: {
        Request& r = by_id[rec.request_id];
        r.id = rec.request_id;
        r.arrival = rec.time;
        break;
      }
      case TraceKind::kStart:
        if (rec.stage == "vision") by_id[rec.request_id].vision.start = rec.time;
        break;
      case TraceKind::kEnd:
        if (rec.stage == "prefill" || rec.stage == "hybrid") {
          by_id[rec.request_id].prefill.end = rec.time;
        }
        break;
      default:
        break;
    }
  }
  std::vector<Request> out;
  out.reserve(by_id.size());
  for (auto& [id, r] : by_id) out.push_back(std::move(r));
  return out;
}

ServiceStats measure_service_stats(const std::vector<TraceRecord>& trace) {
  if (trace.empty()) throw DomainError("empty trace");
  const std::vector<Request> reqs = requests_from_trace(trace);
  return measure_service_stats(std::span<const Request>(reqs));
}

double measured_wait(std::span<const Request> requests) {
  double sum = 0;
  long n = 0;
  for (const Request& r : requests) {
    if (!r.vision.start) continue;
    sum += (*r.vision.start - r.arrival) / 1000.0;
    ++n;
  }
  if (n == 0) throw DomainError("no request started vision");
  return sum / n;
}

WaitComparison compare_wait(std::span<const Request> requests, const ServiceStats& stats) {
  WaitComparison out;
  out.measured_s = measured_wait(requests);
  out.utilization = stats.utilization();
  try {
    out.predicted_s = mg1_wait(stats);
  } catch (const OverloadError&) {
    return out;
  }
  if (*out.predicted_s > 0) {
    out.relative_error = std::abs(out.measured_s - *out.predicted_s) / *out.predicted_s;
  }
  return out;
}

}  // namespace stagesim
