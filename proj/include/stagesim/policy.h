#pragma once

#include <cstdint>
#include <deque>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "stagesim/core.h"
#include "stagesim/planner.h"
#include "stagesim/profile.h"

namespace stagesim {

// Kinds of forward pass the engine can execute. kHybrid is one chunked-prefill
// engine step: a prefill chunk batched with the current decode requests.
enum class PassKind { kVision, kPrefill, kDecode, kHybrid };

std::string_view to_string(PassKind kind);

// One unit of work handed to a worker.
struct Dispatch {
  PassKind kind = PassKind::kVision;
  RequestId front_request = -1;           // vision / prefill / hybrid prefill owner
  std::vector<RequestId> decode_batch;    // decode / hybrid riders
  int chunk_tokens = 0;                   // hybrid only
  double chunk_fraction = 0;              // hybrid: chunk_tokens / prompt_tokens
  bool final_chunk = false;               // hybrid: completes the prefill

  bool operator==(const Dispatch&) const = default;
};

// Decode worker SM share for each co-run context.
struct PartitionPlan {
  int sm_decode_vision = 0;
  int sm_decode_prefill = 0;

  bool operator==(const PartitionPlan&) const = default;
};

struct PolicyDecision {
  std::vector<Dispatch> dispatches;
  std::optional<PartitionPlan> new_partition;
};

// A forward pass in flight. Work is normalized to 1 and drains at
// 1 / duration_ms; the duration is recomputed whenever the set of running
// passes or the partition changes.
struct RunningPass {
  std::int64_t id = 0;
  Dispatch work;
  Millis started = 0;
  Millis last_update = 0;
  double remaining_work = 1.0;
  double work_done = 0;
  Millis duration_ms = 0;
  Millis finish = 0;
  Millis initial_duration_ms = 0;
  bool rescaled = false;

  int decode_batch_size() const { return static_cast<int>(work.decode_batch.size()); }
  bool is_decode() const { return work.kind == PassKind::kDecode; }
  // Compute-bound work: vision, prefill, or a prefill chunk step.
  bool is_front() const { return work.kind != PassKind::kDecode; }
};

struct SchedEvent {
  enum class Kind { kArrival, kPassEnd };
  Kind kind = Kind::kArrival;
  Millis time = 0;
  RequestId request = -1;             // kArrival
  const RunningPass* pass = nullptr;  // kPassEnd
  std::vector<RequestId> finished;    // kPassEnd: requests that emitted their last token
};

// What a timing model may look at.
struct ExecutionState {
  std::span<const RunningPass> running;
  const StageProfile& profile;
  const Gpu& gpu;
  PartitionPlan plan;
};

class Policy {
 public:
  virtual ~Policy() = default;

  virtual std::string_view name() const = 0;

  // Consulted once per event, after the engine has applied the event's
  // bookkeeping to the request stamps.
  virtual PolicyDecision step(const SchedEvent& event, std::span<const Request> requests) = 0;

  // Duration of pass at the current execution state.
  virtual Millis pass_duration(const RunningPass& pass, const ExecutionState& exec) const = 0;

  // SM split in force for the current running set (trace reporting).
  virtual Partition active_partition(const ExecutionState& exec) const;

  virtual PartitionPlan initial_plan(const Gpu& gpu) const { return {gpu.total_sms, gpu.total_sms}; }

  // Engine-checked execution constraints.
  virtual bool sequential() const { return false; }
  virtual bool allows_front_corun() const { return false; }
};

enum class PolicyKind { kPipelined, kPfLimit, kChunk, kMultiStream, kStatic };

std::string_view to_string(PolicyKind kind);
PolicyKind parse_policy_kind(std::string_view text);

struct PolicyConfig {
  PolicyKind kind = PolicyKind::kPipelined;
  AdaptiveRule rule_vision{24, 12, 4, 2};
  AdaptiveRule rule_prefill{30, 12, 6, 2};
  int pf_threshold = 5;
  int chunk_budget = 128;
  double sigma = 0.25;
  int static_sm_vision = 24;
  int static_sm_prefill = 30;
};

// Throws ConfigError for invalid parameters.
std::unique_ptr<Policy> make_policy(const PolicyConfig& config, const Gpu& gpu);

// Stage-parallel scheduling with adaptive SM partitioning. Decode is never
// blocked by front stages; vision and prefill never overlap; prefill beats
// queued vision work; decode uses in-flight batching.
class PipelinedPolicy final : public Policy {
 public:
  PipelinedPolicy(AdaptiveRule rule_vision, AdaptiveRule rule_prefill, std::string name);

  std::string_view name() const override { return name_; }
  PolicyDecision step(const SchedEvent& event, std::span<const Request> requests) override;
  Millis pass_duration(const RunningPass& pass, const ExecutionState& exec) const override;
  Partition active_partition(const ExecutionState& exec) const override;
  PartitionPlan initial_plan(const Gpu& gpu) const override;

  int pending() const;
  const std::deque<RequestId>& suspended_vision() const { return q_vision_; }
  const std::vector<RequestId>& suspended_decode() const { return q_decode_; }

 private:
  AdaptiveRule rule_vision_;
  AdaptiveRule rule_prefill_;
  std::string name_;

  std::deque<RequestId> q_vision_;   // waiting for vision encode
  std::deque<RequestId> q_prefill_;  // vision done, waiting for prefill
  std::vector<RequestId> q_decode_;   // waiting to join the next decode batch
  bool vision_running_ = false;
  bool prefill_running_ = false;
  bool decode_running_ = false;
};

// Sequential prefill-first scheduling. Decode runs only when more than
// `threshold` requests wait for it, or when no front-stage work exists.
class PfLimitPolicy final : public Policy {
 public:
  explicit PfLimitPolicy(int threshold);

  std::string_view name() const override { return "pf-limit"; }
  PolicyDecision step(const SchedEvent& event, std::span<const Request> requests) override;
  Millis pass_duration(const RunningPass& pass, const ExecutionState& exec) const override;
  bool sequential() const override { return true; }

 private:
  int threshold_;
  std::deque<RequestId> q_vision_;
  std::deque<RequestId> q_prefill_;
  std::vector<RequestId> decode_ready_;
  bool busy_ = false;
};

// Chunked prefill: prompts are split into token-budget chunks, each batched
// with every decode-ready request in one engine step. Vision runs alone.
class ChunkPolicy final : public Policy {
 public:
  explicit ChunkPolicy(int token_budget);

  std::string_view name() const override { return "chunk"; }
  PolicyDecision step(const SchedEvent& event, std::span<const Request> requests) override;
  Millis pass_duration(const RunningPass& pass, const ExecutionState& exec) const override;
  bool sequential() const override { return true; }

 private:
  int budget_;
  std::deque<RequestId> q_vision_;
  std::deque<RequestId> q_prefill_;
  RequestId chunking_ = -1;
  int chunk_tokens_left_ = 0;
  std::vector<RequestId> decode_ready_;
  bool busy_ = false;
};

// Unpartitioned concurrent streams. Every worker dispatches as soon as it is
// free. Decode slows by 1/sigma while any front stage runs; concurrent front
// stages share the GPU equally.
class MultiStreamPolicy final : public Policy {
 public:
  explicit MultiStreamPolicy(double sigma);

  std::string_view name() const override { return "multistream"; }
  PolicyDecision step(const SchedEvent& event, std::span<const Request> requests) override;
  Millis pass_duration(const RunningPass& pass, const ExecutionState& exec) const override;
  bool allows_front_corun() const override { return true; }

 private:
  double sigma_;
  std::deque<RequestId> q_vision_;
  std::deque<RequestId> q_prefill_;
  std::vector<RequestId> q_decode_;
  bool vision_running_ = false;
  bool prefill_running_ = false;
  bool decode_running_ = false;
};

// Number of prefill chunks for a prompt under a token budget.
int chunk_count(int prompt_tokens, int token_budget);

}  // namespace stagesim
