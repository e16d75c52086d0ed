#include "stagesim/engine.h"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>

#include "stagesim/error.h"

namespace stagesim {

bool SimEvent::operator<(const SimEvent& o) const {
  if (time != o.time) return time < o.time;
  if (kind != o.kind) return kind < o.kind;
  if (request != o.request) return request < o.request;
  return seq < o.seq;
}

void EventCalendar::schedule(SimEvent event) {
  if (!(event.time >= now_)) {
    throw InvariantViolation("event scheduled in the past (t=" + format_double(event.time) +
                             " < now=" + format_double(now_) + ")");
  }
  event.seq = next_seq_++;
  events_.insert(event);
  last_ = event;
}

bool EventCalendar::cancel(const SimEvent& event) { return events_.erase(event) > 0; }

SimEvent EventCalendar::pop() {
  if (events_.empty()) throw InvariantViolation("pop from an empty event calendar");
  SimEvent ev = *events_.begin();
  events_.erase(events_.begin());
  if (ev.time < now_) throw InvariantViolation("event calendar regressed in time");
  now_ = ev.time;
  return ev;
}

std::string_view to_string(TraceKind kind) {
  switch (kind) {
    case TraceKind::kArrival:
      return "arrival";
    case TraceKind::kStart:
      return "start";
    case TraceKind::kEnd:
      return "end";
    case TraceKind::kToken:
      return "token";
    case TraceKind::kFinish:
      return "finish";
    case TraceKind::kRepartition:
      return "repartition";
  }
  return "?";
}

namespace {

TraceKind parse_trace_kind(std::string_view s) {
  for (TraceKind k : {TraceKind::kArrival, TraceKind::kStart, TraceKind::kEnd, TraceKind::kToken,
                      TraceKind::kFinish, TraceKind::kRepartition}) {
    if (to_string(k) == s) return k;
  }
  throw ParseError("unknown trace event kind '" + std::string(s) + "'");
}

}  // namespace

std::string trace_to_csv(const std::vector<TraceRecord>& trace) {
  std::ostringstream os;
  os << "time_ms,event_kind,request_id,stage,sm_decode,batch_size\n";
  for (const auto& r : trace) {
    os << format_double(r.time) << ',' << to_string(r.kind) << ',' << r.request_id << ','
       << r.stage << ',' << r.sm_decode << ',' << r.batch_size << '\n';
  }
  return os.str();
}

std::vector<TraceRecord> parse_trace(const std::string& content) {
  std::vector<TraceRecord> out;
  std::istringstream is(content);
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line.rfind("time_ms,", 0) == 0) continue;
    const std::vector<std::string> cells = split_csv(line);
    if (cells.size() != 6) throw ParseError("expected 6 columns", line_no);
    try {
      TraceRecord r;
      r.time = parse_double(cells[0]);
      r.kind = parse_trace_kind(cells[1]);
      r.request_id = parse_int(cells[2]);
      r.stage = cells[3];
      r.sm_decode = static_cast<int>(parse_int(cells[4]));
      r.batch_size = static_cast<int>(parse_int(cells[5]));
      out.push_back(std::move(r));
    } catch (const ParseError& e) {
      throw ParseError(e.what(), line_no);
    }
  }
  return out;
}

std::vector<TraceRecord> load_trace(const std::filesystem::path& path) {
  return parse_trace(read_text_file(path, "trace"));
}

namespace {

// Work tolerance: 1e-9, widened to a few ulps of the clock so short passes
// late in long runs do not trip on time rounding.
double work_slack(const RunningPass& p, Millis now) {
  const double clock_ulps = 8 * std::numeric_limits<double>::epsilon() * std::max(1.0, now);
  return std::max(1e-9, clock_ulps / p.duration_ms);
}

// Trace id of a pass: the prefill or vision owner, else the lowest decode member.
RequestId lead_id(const Dispatch& d) {
  if (d.front_request >= 0) return d.front_request;
  return *std::min_element(d.decode_batch.begin(), d.decode_batch.end());
}

enum class Phase { kPending, kWaitVision, kVision, kWaitPrefill, kPrefill, kWaitDecode, kDecode, kDone };

class Engine {
 public:
  Engine(Policy& policy, const RunInputs& in) : policy_(policy), in_(in) {}

  RunResult run();

 private:
  ExecutionState exec() const { return ExecutionState{running_, in_.profile, in_.gpu, plan_}; }
  int sm_decode_now() const { return policy_.active_partition(exec()).sm_decode; }

  void record(TraceKind kind, RequestId id, std::string stage, int batch, int sm) {
    out_.trace.push_back({now_, kind, id, std::move(stage), sm, batch});
  }
  [[noreturn]] void fail(const std::string& what) const;

  Request& request(RequestId id);
  void set_phase(RequestId id, Phase from, Phase to);

  void advance(Millis t);
  SchedEvent finish_pass(RunningPass& done);
  void apply(const PolicyDecision& decision, bool boundary);
  void start_pass(const Dispatch& d);
  void retime();
  void check_invariants() const;

  Policy& policy_;
  const RunInputs& in_;
  Millis now_ = 0;
  std::vector<Phase> phase_;
  std::array<size_t, 8> phase_count_{};
  std::vector<RunningPass> running_;
  std::map<std::int64_t, SimEvent> pass_events_;
  EventCalendar calendar_;
  PartitionPlan plan_;
  std::optional<PartitionPlan> pending_plan_;
  std::int64_t next_pass_ = 0;
  RunResult out_;
};

void Engine::fail(const std::string& what) const {
  std::ostringstream os;
  os << "invariant violation at t=" << format_double(now_) << " ms (" << policy_.name()
     << "): " << what << "\nrecent events:\n";
  const size_t n = out_.trace.size();
  std::vector<TraceRecord> tail(out_.trace.begin() + (n > 20 ? n - 20 : 0), out_.trace.end());
  os << trace_to_csv(tail);
  throw InvariantViolation(os.str());
}

Request& Engine::request(RequestId id) {
  if (id < 0 || id >= static_cast<RequestId>(out_.requests.size())) {
    fail("unknown request id " + std::to_string(id));
  }
  return out_.requests[id];
}

void Engine::set_phase(RequestId id, Phase from, Phase to) {
  request(id);
  if (phase_[id] != from) {
    fail("request " + std::to_string(id) + " is not in the expected phase for this transition");
  }
  --phase_count_[static_cast<size_t>(from)];
  ++phase_count_[static_cast<size_t>(to)];
  phase_[id] = to;
}

void Engine::advance(Millis t) {
  for (RunningPass& p : running_) {
    const Millis dt = t - p.last_update;
    if (dt > 0) {
      const double w = dt / p.duration_ms;
      p.remaining_work -= w;
      p.work_done += w;
      p.last_update = t;
    }
    if (p.remaining_work < -work_slack(p, t)) {
      fail("pass " + std::to_string(p.id) + " overran its work");
    }
    p.remaining_work = std::max(0.0, p.remaining_work);
  }
  now_ = t;
}

SchedEvent Engine::finish_pass(RunningPass& done) {
  SchedEvent sched;
  sched.kind = SchedEvent::Kind::kPassEnd;
  sched.time = now_;

  const Dispatch& w = done.work;
  record(TraceKind::kEnd, lead_id(w), std::string(to_string(w.kind)), done.decode_batch_size(),
         sm_decode_now());
  out_.passes.push_back({w.kind, done.started, now_, done.initial_duration_ms, done.work_done,
                         done.rescaled, done.decode_batch_size()});

  switch (w.kind) {
    case PassKind::kVision:
      request(w.front_request).vision.end = now_;
      set_phase(w.front_request, Phase::kVision, Phase::kWaitPrefill);
      break;
    case PassKind::kPrefill:
      request(w.front_request).prefill.end = now_;
      set_phase(w.front_request, Phase::kPrefill, Phase::kWaitDecode);
      break;
    case PassKind::kHybrid:
      if (w.final_chunk) {
        request(w.front_request).prefill.end = now_;
        set_phase(w.front_request, Phase::kPrefill, Phase::kWaitDecode);
      } else {
        set_phase(w.front_request, Phase::kPrefill, Phase::kWaitPrefill);
      }
      break;
    case PassKind::kDecode:
      break;
  }

  const int sm = sm_decode_now();
  for (RequestId id : w.decode_batch) {
    Request& r = request(id);
    r.decode_iters.back().end = now_;
    if (!r.emitted.empty() && !(now_ > r.emitted.back())) {
      fail("token emission times of request " + std::to_string(id) + " not increasing");
    }
    r.emitted.push_back(now_);
    record(TraceKind::kToken, id, std::string(to_string(w.kind)), done.decode_batch_size(), sm);
    if (r.finished()) {
      set_phase(id, Phase::kDecode, Phase::kDone);
      record(TraceKind::kFinish, id, "decode", 0, sm);
      sched.finished.push_back(id);
    } else {
      set_phase(id, Phase::kDecode, Phase::kWaitDecode);
    }
  }
  return sched;
}

void Engine::start_pass(const Dispatch& d) {
  RunningPass p;
  p.id = next_pass_++;
  p.work = d;
  p.started = now_;
  p.last_update = now_;

  switch (d.kind) {
    case PassKind::kVision:
      set_phase(d.front_request, Phase::kWaitVision, Phase::kVision);
      request(d.front_request).vision.start = now_;
      if (!d.decode_batch.empty()) fail("vision pass with decode riders");
      break;
    case PassKind::kPrefill:
      set_phase(d.front_request, Phase::kWaitPrefill, Phase::kPrefill);
      request(d.front_request).prefill.start = now_;
      if (!d.decode_batch.empty()) fail("prefill pass with decode riders");
      break;
    case PassKind::kHybrid: {
      set_phase(d.front_request, Phase::kWaitPrefill, Phase::kPrefill);
      Request& r = request(d.front_request);
      if (!r.prefill.start) r.prefill.start = now_;
      if (d.chunk_tokens < 1 || !(d.chunk_fraction > 0) || d.chunk_fraction > 1) {
        fail("malformed prefill chunk");
      }
      break;
    }
    case PassKind::kDecode:
      if (d.decode_batch.empty()) fail("empty decode batch dispatched");
      break;
  }
  for (RequestId id : d.decode_batch) {
    set_phase(id, Phase::kWaitDecode, Phase::kDecode);
    request(id).decode_iters.push_back({now_, std::nullopt});
  }
  if (!d.decode_batch.empty()) {
    out_.decode_batches.push_back(static_cast<int>(d.decode_batch.size()));
  }
  running_.push_back(std::move(p));
}

void Engine::retime() {
  const ExecutionState state = exec();
  std::vector<Millis> durations;
  durations.reserve(running_.size());
  for (const RunningPass& p : running_) {
    const Millis d = policy_.pass_duration(p, state);
    if (!(d > 0) || !std::isfinite(d)) fail("non-positive pass duration");
    durations.push_back(d);
  }
  for (size_t i = 0; i < running_.size(); ++i) {
    RunningPass& p = running_[i];
    const Millis d = durations[i];
    const bool fresh = p.duration_ms == 0;
    if (!fresh && d == p.duration_ms) continue;
    if (fresh) {
      p.initial_duration_ms = d;
    } else {
      p.rescaled = true;
      calendar_.cancel(pass_events_.at(p.id));
    }
    p.duration_ms = d;
    p.finish = now_ + p.remaining_work * d;
    SimEvent ev;
    ev.time = p.finish;
    ev.kind = SimEvent::Kind::kPassEnd;
    ev.pass = p.id;
    ev.request = p.work.front_request;
    for (RequestId id : p.work.decode_batch) {
      ev.request = ev.request < 0 ? id : std::min(ev.request, id);
    }
    calendar_.schedule(ev);
    pass_events_[p.id] = calendar_.last_scheduled();
  }
}

void Engine::apply(const PolicyDecision& decision, bool boundary) {
  if (decision.new_partition) pending_plan_ = decision.new_partition;
  boundary = boundary || !decision.dispatches.empty();
  if (boundary && pending_plan_) {
    if (pending_plan_->sm_decode_vision != plan_.sm_decode_vision) {
      plan_.sm_decode_vision = pending_plan_->sm_decode_vision;
      record(TraceKind::kRepartition, -1, "decode_vision", 0, plan_.sm_decode_vision);
    }
    if (pending_plan_->sm_decode_prefill != plan_.sm_decode_prefill) {
      plan_.sm_decode_prefill = pending_plan_->sm_decode_prefill;
      record(TraceKind::kRepartition, -1, "decode_prefill", 0, plan_.sm_decode_prefill);
    }
    pending_plan_.reset();
  }

  const size_t first_new = running_.size();
  for (const Dispatch& d : decision.dispatches) start_pass(d);
  retime();

  const int sm = sm_decode_now();
  for (size_t i = first_new; i < running_.size(); ++i) {
    const RunningPass& p = running_[i];
    record(TraceKind::kStart, lead_id(p.work), std::string(to_string(p.work.kind)), p.decode_batch_size(), sm);
  }
}

void Engine::check_invariants() const {
  int decodes = 0, fronts = 0;
  for (const RunningPass& p : running_) {
    if (p.is_decode() || p.work.kind == PassKind::kHybrid) ++decodes;
    if (p.is_front()) ++fronts;
  }
  if (decodes > 1) fail("more than one decode step in flight");
  if (policy_.sequential() && running_.size() > 1) fail("sequential policy co-ran passes");
  if (!policy_.allows_front_corun() && fronts > 1) fail("vision and prefill co-ran");
  if (running_.empty()) {
    for (Phase p : {Phase::kWaitVision, Phase::kWaitPrefill, Phase::kWaitDecode}) {
      if (phase_count_[static_cast<size_t>(p)] > 0) fail("gpu idle while requests wait");
    }
  }
}

RunResult Engine::run() {
  in_.gpu.validate();
  if (auto violations = validate_profile(in_.profile, in_.gpu); !violations.empty()) {
    std::string msg = "invalid profile:";
    for (const auto& v : violations) msg += "\n  " + v;
    throw ConfigError(msg);
  }
  out_.requests = in_.workload;
  phase_.assign(out_.requests.size(), Phase::kPending);
  phase_count_[static_cast<size_t>(Phase::kPending)] = out_.requests.size();
  for (size_t i = 0; i < out_.requests.size(); ++i) {
    Request& r = out_.requests[i];
    if (r.id != static_cast<RequestId>(i)) throw ConfigError("request ids must be 0..n-1 in order");
    if (i > 0 && r.arrival < out_.requests[i - 1].arrival) {
      throw ConfigError("requests must be sorted by arrival");
    }
    if (r.gen_len < 1 || r.prompt_tokens < 1 || !(r.arrival >= 0) || !std::isfinite(r.arrival)) {
      throw ConfigError("request " + std::to_string(i) + " has invalid fields");
    }
    r.vision = {};
    r.prefill = {};
    r.decode_iters.clear();
    r.emitted.clear();
    SimEvent ev;
    ev.time = r.arrival;
    ev.kind = SimEvent::Kind::kArrival;
    ev.request = r.id;
    calendar_.schedule(ev);
  }
  plan_ = policy_.initial_plan(in_.gpu);

  while (!calendar_.empty()) {
    const SimEvent ev = calendar_.pop();
    advance(ev.time);
    if (ev.kind == SimEvent::Kind::kArrival) {
      set_phase(ev.request, Phase::kPending, Phase::kWaitVision);
      record(TraceKind::kArrival, ev.request, "none", 0, sm_decode_now());
      SchedEvent sched;
      sched.kind = SchedEvent::Kind::kArrival;
      sched.time = now_;
      sched.request = ev.request;
      apply(policy_.step(sched, out_.requests), false);
    } else {
      auto it = std::find_if(running_.begin(), running_.end(),
                             [&](const RunningPass& p) { return p.id == ev.pass; });
      if (it == running_.end()) fail("completion for unknown pass " + std::to_string(ev.pass));
      RunningPass done = *it;
      if (done.remaining_work > work_slack(done, now_)) fail("pass completed with work remaining");
      done.remaining_work = 0;
      pass_events_.erase(done.id);
      SchedEvent sched = finish_pass(done);
      running_.erase(std::find_if(running_.begin(), running_.end(),
                                  [&](const RunningPass& p) { return p.id == done.id; }));
      sched.pass = &done;
      apply(policy_.step(sched, out_.requests), true);
    }
    check_invariants();
  }

  if (phase_count_[static_cast<size_t>(Phase::kDone)] != out_.requests.size()) {
    fail("simulation drained with unfinished requests");
  }
  out_.metrics = compute_metrics(out_.requests, out_.decode_batches);
  return std::move(out_);
}

}  // namespace

RunResult run(Policy& policy, const RunInputs& inputs) { return Engine(policy, inputs).run(); }

RunResult run(const RunInputs& inputs) {
  auto policy = make_policy(inputs.policy, inputs.gpu);
  return run(*policy, inputs);
}

bool replay_check(const RunInputs& inputs, const std::vector<TraceRecord>& trace) {
  try {
    return run(inputs).trace == trace;
  } catch (const std::exception&) {
    return false;
  }
}

}  // namespace stagesim
