#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "stagesim/core.h"
#include "stagesim/metrics.h"
#include "stagesim/policy.h"
#include "stagesim/profile.h"

namespace stagesim {

// Calendar entry. Ties at equal time resolve as pass completions before
// arrivals, then by request id, then by insertion sequence.
struct SimEvent {
  enum class Kind { kPassEnd = 0, kArrival = 1 };

  Millis time = 0;
  Kind kind = Kind::kArrival;
  RequestId request = -1;  // arrival: the request; pass end: lowest id in the pass
  std::int64_t pass = -1;  // pass end only
  std::uint64_t seq = 0;   // assigned by the calendar

  bool operator<(const SimEvent& o) const;
};

class EventCalendar {
 public:
  // Throws InvariantViolation when time precedes the last popped event.
  void schedule(SimEvent event);
  // Removes a previously scheduled event; returns false if it was not present.
  bool cancel(const SimEvent& event);
  SimEvent pop();

  bool empty() const { return events_.empty(); }
  size_t size() const { return events_.size(); }
  Millis now() const { return now_; }

  // The event as stored (with its assigned sequence number).
  const SimEvent& last_scheduled() const { return last_; }

 private:
  std::set<SimEvent> events_;
  Millis now_ = 0;
  std::uint64_t next_seq_ = 0;
  SimEvent last_;
};

enum class TraceKind { kArrival, kStart, kEnd, kToken, kFinish, kRepartition };

std::string_view to_string(TraceKind kind);

// One line of the event trace:
//   time_ms,event_kind,request_id,stage,sm_decode,batch_size
//
// start/end: one record per pass; request_id is the vision or prefill owner
//   (hybrid included) and the lowest member id for pure decode passes; stage
//   is the pass kind.
// token: one record per decode emission, stage "decode" or "hybrid".
// repartition: request_id -1, stage is the co-run context whose share changed.
// sm_decode is the decode worker's SM share under the active partition
// (total SMs for solo decode, 0 when no decode runs or nothing is partitioned).
struct TraceRecord {
  Millis time = 0;
  TraceKind kind = TraceKind::kArrival;
  RequestId request_id = -1;
  std::string stage;
  int sm_decode = 0;
  int batch_size = 0;

  bool operator==(const TraceRecord&) const = default;
};

std::string trace_to_csv(const std::vector<TraceRecord>& trace);
std::vector<TraceRecord> parse_trace(const std::string& content);
std::vector<TraceRecord> load_trace(const std::filesystem::path& path);

struct RunInputs {
  PolicyConfig policy;
  std::vector<Request> workload;  // ids must be 0..n-1 in arrival order
  StageProfile profile;
  Gpu gpu;
  std::uint64_t seed = 0;
};

// Audit data for one executed pass.
struct PassRecord {
  PassKind kind = PassKind::kVision;
  Millis start = 0;
  Millis end = 0;
  Millis initial_duration_ms = 0;
  double work_done = 0;  // integral of rate over the pass
  bool rescaled = false;
  int decode_batch = 0;
};

struct RunResult {
  std::vector<Request> requests;
  std::vector<TraceRecord> trace;
  std::vector<PassRecord> passes;
  std::vector<int> decode_batches;
  MetricsReport metrics;
};

// Simulates the workload to completion. Deterministic: identical inputs give
// bit-identical results. Throws InvariantViolation with a dump of the most
// recent trace records when the model's invariants break.
RunResult run(const RunInputs& inputs);

// Same, with a caller-owned policy (inputs.policy is ignored).
RunResult run(Policy& policy, const RunInputs& inputs);

// True iff re-simulating inputs reproduces trace exactly.
bool replay_check(const RunInputs& inputs, const std::vector<TraceRecord>& trace);

}  // namespace stagesim
