#include <algorithm>

#include "stagesim/error.h"
#include "stagesim/policy.h"

namespace stagesim {

std::string_view to_string(PassKind kind) {
  switch (kind) {
    case PassKind::kVision:
      return "vision";
    case PassKind::kPrefill:
      return "prefill";
    case PassKind::kDecode:
      return "decode";
    case PassKind::kHybrid:
      return "hybrid";
  }
  return "?";
}

std::string_view to_string(PolicyKind kind) {
  switch (kind) {
    case PolicyKind::kPipelined:
      return "nova";
    case PolicyKind::kPfLimit:
      return "pf-limit";
    case PolicyKind::kChunk:
      return "chunk";
    case PolicyKind::kMultiStream:
      return "multistream";
    case PolicyKind::kStatic:
      return "static";
  }
  return "?";
}

PolicyKind parse_policy_kind(std::string_view text) {
  if (text == "nova") return PolicyKind::kPipelined;
  if (text == "pf-limit") return PolicyKind::kPfLimit;
  if (text == "chunk") return PolicyKind::kChunk;
  if (text == "multistream") return PolicyKind::kMultiStream;
  if (text == "static") return PolicyKind::kStatic;
  throw ConfigError("unknown policy '" + std::string(text) + "'");
}

int chunk_count(int prompt_tokens, int token_budget) {
  if (token_budget < 1) throw ConfigError("chunk token budget must be >= 1");
  if (prompt_tokens < 1) throw DomainError("prompt must have at least one token");
  return (prompt_tokens + token_budget - 1) / token_budget;
}

Partition Policy::active_partition(const ExecutionState& exec) const {
  if (exec.running.size() != 1) return Partition{};
  const RunningPass& p = exec.running.front();
  switch (p.work.kind) {
    case PassKind::kVision:
      return Partition::solo(exec.gpu, Stage::kVision);
    case PassKind::kPrefill:
    case PassKind::kHybrid:
      return Partition::solo(exec.gpu, Stage::kPrefill);
    case PassKind::kDecode:
      return Partition::solo(exec.gpu, Stage::kDecode);
  }
  return Partition{};
}

std::unique_ptr<Policy> make_policy(const PolicyConfig& c, const Gpu& gpu) {
  gpu.validate();
  switch (c.kind) {
    case PolicyKind::kPipelined: {
      for (const AdaptiveRule* r : {&c.rule_vision, &c.rule_prefill}) {
        r->validate();
        if (r->granularity != gpu.alloc_granularity) {
          throw ConfigError("adaptive rule granularity must match the gpu");
        }
        if (!gpu.is_corun_allocation(r->sm_op) || !gpu.is_corun_allocation(r->sm_min)) {
          throw ConfigError("sm_op / sm_min must be valid co-run allocations");
        }
      }
      return std::make_unique<PipelinedPolicy>(c.rule_vision, c.rule_prefill, "nova");
    }
    case PolicyKind::kStatic: {
      for (int s : {c.static_sm_vision, c.static_sm_prefill}) {
        if (!gpu.is_corun_allocation(s)) {
          throw ConfigError("static sm_decode " + std::to_string(s) +
                            " is not a valid co-run allocation");
        }
      }
      const int g = gpu.alloc_granularity;
      return std::make_unique<PipelinedPolicy>(
          AdaptiveRule{c.static_sm_vision, c.static_sm_vision, 0, g},
          AdaptiveRule{c.static_sm_prefill, c.static_sm_prefill, 0, g}, "static");
    }
    case PolicyKind::kPfLimit:
      if (c.pf_threshold < 0) throw ConfigError("pf-limit threshold must be >= 0");
      return std::make_unique<PfLimitPolicy>(c.pf_threshold);
    case PolicyKind::kChunk:
      if (c.chunk_budget < 1) throw ConfigError("chunk token budget must be >= 1");
      return std::make_unique<ChunkPolicy>(c.chunk_budget);
    case PolicyKind::kMultiStream:
      if (!(c.sigma > 0) || c.sigma > 1) throw ConfigError("sigma must be in (0, 1]");
      return std::make_unique<MultiStreamPolicy>(c.sigma);
  }
  throw ConfigError("unknown policy");
}

namespace {

// Requests of a finished decode step that still have tokens to emit.
std::vector<RequestId> continuing_members(const SchedEvent& ev) {
  std::vector<RequestId> out;
  for (RequestId id : ev.pass->work.decode_batch) {
    if (std::find(ev.finished.begin(), ev.finished.end(), id) == ev.finished.end()) {
      out.push_back(id);
    }
  }
  return out;
}

RequestId pop_front(std::deque<RequestId>& q) {
  RequestId id = q.front();
  q.pop_front();
  return id;
}

Dispatch front_dispatch(PassKind kind, RequestId id) {
  Dispatch d;
  d.kind = kind;
  d.front_request = id;
  return d;
}

Dispatch decode_dispatch(std::vector<RequestId> batch) {
  Dispatch d;
  d.kind = PassKind::kDecode;
  d.decode_batch = std::move(batch);
  return d;
}

Millis decode_duration(const StageProfile& profile, Millis base, const RunningPass& pass) {
  return decode_batch_latency(profile, base, std::max(1, pass.decode_batch_size()));
}

}  // namespace

// ---------------------------------------------------------------------------
// Pipelined (adaptive partition) policy

PipelinedPolicy::PipelinedPolicy(AdaptiveRule rule_vision, AdaptiveRule rule_prefill,
                                 std::string name)
    : rule_vision_(rule_vision), rule_prefill_(rule_prefill), name_(std::move(name)) {}

int PipelinedPolicy::pending() const {
  return static_cast<int>(q_vision_.size() + q_prefill_.size()) + (vision_running_ ? 1 : 0) +
         (prefill_running_ ? 1 : 0);
}

PartitionPlan PipelinedPolicy::initial_plan(const Gpu&) const {
  return {adaptive_sm(rule_vision_, 1), adaptive_sm(rule_prefill_, 1)};
}

PolicyDecision PipelinedPolicy::step(const SchedEvent& ev, std::span<const Request>) {
  PolicyDecision decision;
  std::vector<RequestId> next_batch;

  if (ev.kind == SchedEvent::Kind::kArrival) {
    q_vision_.push_back(ev.request);
  } else {
    const Dispatch& done = ev.pass->work;
    switch (done.kind) {
      case PassKind::kVision:
        vision_running_ = false;
        q_prefill_.push_back(done.front_request);
        break;
      case PassKind::kPrefill:
        prefill_running_ = false;
        q_decode_.push_back(done.front_request);
        break;
      case PassKind::kDecode:
        decode_running_ = false;
        next_batch = continuing_members(ev);
        break;
      case PassKind::kHybrid:
        throw InvariantViolation(name_ + " policy never dispatches hybrid steps");
    }
  }

  // In-flight batching: the continuing batch absorbs everyone who became
  // decode-ready while it ran.
  if (!decode_running_ && (!next_batch.empty() || !q_decode_.empty())) {
    next_batch.insert(next_batch.end(), q_decode_.begin(), q_decode_.end());
    q_decode_.clear();
    decision.dispatches.push_back(decode_dispatch(std::move(next_batch)));
    decode_running_ = true;
  }

  if (!vision_running_ && !prefill_running_) {
    if (!q_prefill_.empty()) {
      decision.dispatches.push_back(front_dispatch(PassKind::kPrefill, pop_front(q_prefill_)));
      prefill_running_ = true;
    } else if (!q_vision_.empty()) {
      decision.dispatches.push_back(front_dispatch(PassKind::kVision, pop_front(q_vision_)));
      vision_running_ = true;
    }
  }

  const int n = pending();
  decision.new_partition = PartitionPlan{adaptive_sm(rule_vision_, n), adaptive_sm(rule_prefill_, n)};
  return decision;
}

namespace {

struct Occupancy {
  const RunningPass* decode = nullptr;
  const RunningPass* front = nullptr;
};

Occupancy occupancy(std::span<const RunningPass> running) {
  Occupancy o;
  for (const RunningPass& p : running) {
    if (p.is_decode()) {
      o.decode = &p;
    } else {
      o.front = &p;
    }
  }
  return o;
}

CorunContext context_of(const RunningPass& front) {
  return front.work.kind == PassKind::kVision ? CorunContext::kDecodeVision
                                              : CorunContext::kDecodePrefill;
}

int plan_share(const PartitionPlan& plan, CorunContext ctx) {
  return ctx == CorunContext::kDecodeVision ? plan.sm_decode_vision : plan.sm_decode_prefill;
}

}  // namespace

Millis PipelinedPolicy::pass_duration(const RunningPass& pass, const ExecutionState& exec) const {
  const Occupancy o = occupancy(exec.running);
  const StageProfile& prof = exec.profile;
  if (o.decode && o.front) {
    const CorunContext ctx = context_of(*o.front);
    const CorunEntry& e = prof.corun(ctx, plan_share(exec.plan, ctx));
    return pass.is_decode() ? decode_duration(prof, e.decode_iter_ms, pass) : e.front_ms;
  }
  if (pass.is_decode()) return decode_duration(prof, prof.decode_iter_solo_ms, pass);
  return pass.work.kind == PassKind::kVision ? prof.vision_solo_ms : prof.prefill_solo_ms;
}

Partition PipelinedPolicy::active_partition(const ExecutionState& exec) const {
  const Occupancy o = occupancy(exec.running);
  if (o.decode && o.front) {
    const CorunContext ctx = context_of(*o.front);
    return Partition::corun(exec.gpu, ctx, plan_share(exec.plan, ctx));
  }
  return Policy::active_partition(exec);
}

// ---------------------------------------------------------------------------
// PF-Limit

PfLimitPolicy::PfLimitPolicy(int threshold) : threshold_(threshold) {}

PolicyDecision PfLimitPolicy::step(const SchedEvent& ev, std::span<const Request>) {
  PolicyDecision decision;
  if (ev.kind == SchedEvent::Kind::kArrival) {
    q_vision_.push_back(ev.request);
  } else {
    busy_ = false;
    const Dispatch& done = ev.pass->work;
    switch (done.kind) {
      case PassKind::kVision:
        q_prefill_.push_back(done.front_request);
        break;
      case PassKind::kPrefill:
        decode_ready_.push_back(done.front_request);
        break;
      case PassKind::kDecode: {
        auto cont = continuing_members(ev);
        decode_ready_.insert(decode_ready_.begin(), cont.begin(), cont.end());
        break;
      }
      case PassKind::kHybrid:
        throw InvariantViolation("pf-limit never dispatches hybrid steps");
    }
  }
  if (busy_) return decision;

  const bool front_pending = !q_prefill_.empty() || !q_vision_.empty();
  const int waiting = static_cast<int>(decode_ready_.size());
  if (waiting > 0 && (waiting > threshold_ || !front_pending)) {
    decision.dispatches.push_back(decode_dispatch(std::move(decode_ready_)));
    decode_ready_.clear();
  } else if (!q_prefill_.empty()) {
    decision.dispatches.push_back(front_dispatch(PassKind::kPrefill, pop_front(q_prefill_)));
  } else if (!q_vision_.empty()) {
    decision.dispatches.push_back(front_dispatch(PassKind::kVision, pop_front(q_vision_)));
  }
  busy_ = !decision.dispatches.empty();
  return decision;
}

Millis PfLimitPolicy::pass_duration(const RunningPass& pass, const ExecutionState& exec) const {
  const StageProfile& prof = exec.profile;
  switch (pass.work.kind) {
    case PassKind::kVision:
      return prof.vision_solo_ms;
    case PassKind::kPrefill:
      return prof.prefill_solo_ms;
    case PassKind::kDecode:
      return decode_duration(prof, prof.decode_iter_solo_ms, pass);
    case PassKind::kHybrid:
      break;
  }
  throw InvariantViolation("pf-limit never dispatches hybrid steps");
}

// ---------------------------------------------------------------------------
// Chunked prefill

ChunkPolicy::ChunkPolicy(int token_budget) : budget_(token_budget) {}

PolicyDecision ChunkPolicy::step(const SchedEvent& ev, std::span<const Request> requests) {
  PolicyDecision decision;
  if (ev.kind == SchedEvent::Kind::kArrival) {
    q_vision_.push_back(ev.request);
  } else {
    busy_ = false;
    const Dispatch& done = ev.pass->work;
    auto cont = continuing_members(ev);
    switch (done.kind) {
      case PassKind::kVision:
        q_prefill_.push_back(done.front_request);
        break;
      case PassKind::kHybrid:
        decode_ready_ = std::move(cont);
        if (done.final_chunk) decode_ready_.push_back(done.front_request);
        break;
      case PassKind::kDecode:
        decode_ready_ = std::move(cont);
        break;
      case PassKind::kPrefill:
        throw InvariantViolation("chunk policy never dispatches whole prefills");
    }
  }
  if (busy_) return decision;

  if (chunking_ < 0 && !q_prefill_.empty()) {
    chunking_ = pop_front(q_prefill_);
    chunk_tokens_left_ = requests[chunking_].prompt_tokens;
  }
  if (chunking_ >= 0) {
    const int prompt = requests[chunking_].prompt_tokens;
    Dispatch d;
    d.kind = PassKind::kHybrid;
    d.front_request = chunking_;
    d.chunk_tokens = std::min(budget_, chunk_tokens_left_);
    d.chunk_fraction = static_cast<double>(d.chunk_tokens) / prompt;
    d.decode_batch = decode_ready_;
    chunk_tokens_left_ -= d.chunk_tokens;
    d.final_chunk = chunk_tokens_left_ == 0;
    if (d.final_chunk) chunking_ = -1;
    decode_ready_.clear();
    decision.dispatches.push_back(std::move(d));
  } else if (!q_vision_.empty()) {
    decision.dispatches.push_back(front_dispatch(PassKind::kVision, pop_front(q_vision_)));
  } else if (!decode_ready_.empty()) {
    decision.dispatches.push_back(decode_dispatch(std::move(decode_ready_)));
    decode_ready_.clear();
  }
  busy_ = !decision.dispatches.empty();
  return decision;
}

Millis ChunkPolicy::pass_duration(const RunningPass& pass, const ExecutionState& exec) const {
  const StageProfile& prof = exec.profile;
  switch (pass.work.kind) {
    case PassKind::kVision:
      return prof.vision_solo_ms;
    case PassKind::kDecode:
      return decode_duration(prof, prof.decode_iter_solo_ms, pass);
    case PassKind::kHybrid: {
      const Millis chunk_ms = prof.prefill_solo_ms * pass.work.chunk_fraction;
      if (pass.decode_batch_size() == 0) return chunk_ms;
      return std::max(chunk_ms, decode_duration(prof, prof.decode_iter_solo_ms, pass));
    }
    case PassKind::kPrefill:
      break;
  }
  throw InvariantViolation("chunk policy never dispatches whole prefills");
}

// ---------------------------------------------------------------------------
// Multi-stream

MultiStreamPolicy::MultiStreamPolicy(double sigma) : sigma_(sigma) {}

PolicyDecision MultiStreamPolicy::step(const SchedEvent& ev, std::span<const Request>) {
  PolicyDecision decision;
  std::vector<RequestId> next_batch;
  if (ev.kind == SchedEvent::Kind::kArrival) {
    q_vision_.push_back(ev.request);
  } else {
    const Dispatch& done = ev.pass->work;
    switch (done.kind) {
      case PassKind::kVision:
        vision_running_ = false;
        q_prefill_.push_back(done.front_request);
        break;
      case PassKind::kPrefill:
        prefill_running_ = false;
        q_decode_.push_back(done.front_request);
        break;
      case PassKind::kDecode:
        decode_running_ = false;
        next_batch = continuing_members(ev);
        break;
      case PassKind::kHybrid:
        throw InvariantViolation("multistream never dispatches hybrid steps");
    }
  }
  if (!decode_running_ && (!next_batch.empty() || !q_decode_.empty())) {
    next_batch.insert(next_batch.end(), q_decode_.begin(), q_decode_.end());
    q_decode_.clear();
    decision.dispatches.push_back(decode_dispatch(std::move(next_batch)));
    decode_running_ = true;
  }
  if (!prefill_running_ && !q_prefill_.empty()) {
    decision.dispatches.push_back(front_dispatch(PassKind::kPrefill, pop_front(q_prefill_)));
    prefill_running_ = true;
  }
  if (!vision_running_ && !q_vision_.empty()) {
    decision.dispatches.push_back(front_dispatch(PassKind::kVision, pop_front(q_vision_)));
    vision_running_ = true;
  }
  return decision;
}

Millis MultiStreamPolicy::pass_duration(const RunningPass& pass, const ExecutionState& exec) const {
  const StageProfile& prof = exec.profile;
  const auto fronts = std::count_if(exec.running.begin(), exec.running.end(),
                                    [](const RunningPass& p) { return p.is_front(); });
  if (pass.is_decode()) {
    const Millis base = decode_duration(prof, prof.decode_iter_solo_ms, pass);
    return fronts > 0 ? base / sigma_ : base;
  }
  const Millis solo =
      pass.work.kind == PassKind::kVision ? prof.vision_solo_ms : prof.prefill_solo_ms;
  return solo * static_cast<double>(std::max<long>(1, fronts));
}

}  // namespace stagesim
