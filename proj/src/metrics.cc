#include "stagesim/metrics.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

namespace stagesim {

MetricsReport compute_metrics(std::span<const Request> requests,
                              std::span<const int> decode_batches) {
  MetricsReport report;
  std::vector<Millis> all_tbt;
  Millis first_arrival = std::numeric_limits<Millis>::infinity();
  Millis last_completion = -std::numeric_limits<Millis>::infinity();
  double sum_e2e = 0, sum_ttft = 0, sum_wait = 0;

  for (const Request& r : requests) {
    if (!r.finished()) continue;
    RequestMetrics m;
    m.id = r.id;
    m.e2e_ms = r.completion() - r.arrival;
    m.ttft_ms = *r.prefill.end - r.arrival;
    m.queue_wait_ms = *r.vision.start - r.arrival;
    for (size_t i = 1; i < r.emitted.size(); ++i) {
      m.tbt_ms.push_back(r.emitted[i] - r.emitted[i - 1]);
    }
    all_tbt.insert(all_tbt.end(), m.tbt_ms.begin(), m.tbt_ms.end());
    first_arrival = std::min(first_arrival, r.arrival);
    last_completion = std::max(last_completion, r.completion());
    sum_e2e += m.e2e_ms;
    sum_ttft += m.ttft_ms;
    sum_wait += m.queue_wait_ms;
    report.max_e2e_ms = std::max(report.max_e2e_ms, m.e2e_ms);
    report.requests.push_back(std::move(m));
  }

  report.completed = static_cast<int>(report.requests.size());
  if (report.completed == 0) return report;

  const double n = report.completed;
  report.avg_e2e_ms = sum_e2e / n;
  report.avg_ttft_ms = sum_ttft / n;
  report.avg_queue_wait_ms = sum_wait / n;
  report.makespan_ms = last_completion - first_arrival;
  if (report.makespan_ms > 0) report.throughput_req_per_s = n / (report.makespan_ms / 1000.0);

  if (!all_tbt.empty()) {
    report.avg_tbt_ms = std::accumulate(all_tbt.begin(), all_tbt.end(), 0.0) / all_tbt.size();
    // Nearest-rank percentile.
    std::sort(all_tbt.begin(), all_tbt.end());
    size_t rank = static_cast<size_t>(std::ceil(0.99 * all_tbt.size()));
    report.p99_tbt_ms = all_tbt[std::max<size_t>(rank, 1) - 1];
  }
  if (!decode_batches.empty()) {
    report.avg_decode_batch =
        std::accumulate(decode_batches.begin(), decode_batches.end(), 0.0) / decode_batches.size();
  }
  return report;
}

std::string metrics_requests_csv(const MetricsReport& report) {
  std::ostringstream os;
  os << "id,e2e_ms,ttft_ms,queue_wait_ms,mean_tbt_ms,max_tbt_ms\n";
  for (const auto& m : report.requests) {
    double mean = 0, mx = 0;
    if (!m.tbt_ms.empty()) {
      mean = std::accumulate(m.tbt_ms.begin(), m.tbt_ms.end(), 0.0) / m.tbt_ms.size();
      mx = *std::max_element(m.tbt_ms.begin(), m.tbt_ms.end());
    }
    os << m.id << ',' << format_double(m.e2e_ms) << ',' << format_double(m.ttft_ms) << ','
       << format_double(m.queue_wait_ms) << ',' << format_double(mean) << ','
       << format_double(mx) << "\n";
  }
  return os.str();
}

std::string metrics_json(const MetricsReport& report) {
  nlohmann::ordered_json j;
  j["completed"] = report.completed;
  j["makespan_ms"] = report.makespan_ms;
  j["avg_e2e_ms"] = report.avg_e2e_ms;
  j["max_e2e_ms"] = report.max_e2e_ms;
  j["avg_ttft_ms"] = report.avg_ttft_ms;
  j["avg_tbt_ms"] = report.avg_tbt_ms;
  j["p99_tbt_ms"] = report.p99_tbt_ms;
  j["throughput_req_per_s"] = report.throughput_req_per_s;
  j["avg_decode_batch"] = report.avg_decode_batch;
  j["avg_queue_wait_ms"] = report.avg_queue_wait_ms;
  auto& rows = j["requests"] = nlohmann::ordered_json::array();
  for (const auto& m : report.requests) {
    rows.push_back({{"id", m.id},
                    {"e2e_ms", m.e2e_ms},
                    {"ttft_ms", m.ttft_ms},
                    {"queue_wait_ms", m.queue_wait_ms},
                    {"tbt_ms", m.tbt_ms}});
  }
  return j.dump(2) + "\n";
}

}  // namespace stagesim
