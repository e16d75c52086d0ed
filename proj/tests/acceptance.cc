// Acceptance suite: one PASS/FAIL line per criterion. Exit status is nonzero
// when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "stagesim/engine.h"
#include "stagesim/error.h"
#include "stagesim/metrics.h"
#include "stagesim/offload.h"
#include "stagesim/planner.h"
#include "stagesim/queueing.h"
#include "stagesim/workload.h"

using namespace stagesim;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

// Every simulated run is replay-checked; failures feed criterion 10.
int g_replay_failures = 0;
int g_replay_runs = 0;

RunResult checked_run(const RunInputs& in) {
  RunResult r = run(in);
  ++g_replay_runs;
  if (!replay_check(in, r.trace)) ++g_replay_failures;
  return r;
}

std::vector<Request> poisson(double rate, int count, std::uint64_t seed,
                             LengthDist gen_len = LengthDist::uniform(30, 80)) {
  WorkloadSpec spec;
  spec.rate_per_s = rate;
  spec.count = count;
  spec.seed = seed;
  spec.gen_len = gen_len;
  return generate(spec);
}

RunInputs default_inputs(PolicyKind kind, std::vector<Request> workload) {
  RunInputs in;
  in.policy.kind = kind;
  in.workload = std::move(workload);
  in.profile = default_profile();
  return in;
}

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

Outcome adaptive_rule() {
  const AdaptiveRule rule{24, 12, 4, 2};
  std::vector<int> got;
  for (int n = 1; n <= 6; ++n) got.push_back(adaptive_sm(rule, n));
  std::ostringstream os;
  for (size_t i = 0; i < got.size(); ++i) os << (i ? "," : "") << got[i];
  return {got == std::vector<int>{24, 20, 16, 12, 12, 12}, "[" + os.str() + "]"};
}

Outcome planner_engine_consistency() {
  const Gpu gpu;
  const StageProfile flat = flat_profile(gpu, 806.8, 324.1, 28.9);
  double worst = 0;
  int runs = 0;
  for (int sv : {2, 12, 24, 40, 82}) {
    for (int sp : {2, 18, 30, 60, 82}) {
      const Partition pv = Partition::corun(gpu, CorunContext::kDecodeVision, sv);
      const Partition pp = Partition::corun(gpu, CorunContext::kDecodePrefill, sp);
      for (int gen_len : {1, 50, 80}) {
        RunInputs in;
        in.policy.kind = PolicyKind::kStatic;
        in.policy.static_sm_vision = sv;
        in.policy.static_sm_prefill = sp;
        in.profile = flat;
        Request r;
        r.arrival = 1000;
        r.gen_len = gen_len;
        r.prompt_tokens = 1664;
        in.workload = {r};
        const RunResult res = checked_run(in);
        const double expected = expected_e2e(flat, pv, pp, gen_len);
        worst = std::max(worst, std::abs(res.metrics.avg_e2e_ms - expected) / expected);
        ++runs;
      }
    }
  }
  return {worst <= 1e-6, std::to_string(runs) + " runs, max rel err " + fmt("%.3g", worst)};
}

Outcome static_optimum() {
  const auto opt = optimal_static_partition(default_profile(), Gpu{}, kDefaultPlanGenLen);
  const int v = opt.partition_v.sm_decode, p = opt.partition_p.sm_decode;
  return {v == 24 && p == 30, "DV=" + std::to_string(v) + " DP=" + std::to_string(p) +
                                  fmt(" e2e=%.1f ms", opt.expected_e2e_ms)};
}

Outcome pareto() {
  // Toy GPU: quadratic scan over all enumerated pairs.
  const Gpu toy{6, 2};
  StageProfile tp;
  tp.vision_solo_ms = 100;
  tp.prefill_solo_ms = 50;
  tp.decode_iter_solo_ms = 10;
  tp.decode_vision[2] = {20, 120};
  tp.decode_vision[4] = {12, 200};
  tp.decode_prefill[2] = {25, 60};
  tp.decode_prefill[4] = {14, 90};
  tp.batch_scale = {{1, 1.0}};
  const auto all = enumerate_plans(tp, toy, 10);
  std::vector<std::pair<int, int>> oracle, got;
  for (const PlanPoint& a : all) {
    bool dominated = false;
    for (const PlanPoint& b : all) {
      const bool no_worse = b.expected_e2e_ms <= a.expected_e2e_ms && b.throughput_rps >= a.throughput_rps;
      const bool better = b.expected_e2e_ms < a.expected_e2e_ms || b.throughput_rps > a.throughput_rps;
      dominated = dominated || (no_worse && better);
    }
    if (!dominated) oracle.emplace_back(a.partition_v.sm_decode, a.partition_p.sm_decode);
  }
  for (const PlanPoint& f : pareto_frontier(tp, toy, 10)) {
    got.emplace_back(f.partition_v.sm_decode, f.partition_p.sm_decode);
  }
  std::sort(oracle.begin(), oracle.end());
  std::sort(got.begin(), got.end());
  const bool toy_ok = all.size() == 4 && oracle == got;

  // Default profile: decode share falls as throughput rises.
  const StageProfile p = default_profile();
  const auto frontier = pareto_frontier(p, Gpu{}, kDefaultPlanGenLen);
  int violations = 0;
  for (size_t i = 1; i < frontier.size(); ++i) {
    const double prev = effective_sm_decode(p, frontier[i - 1].partition_v, frontier[i - 1].partition_p);
    const double cur = effective_sm_decode(p, frontier[i].partition_v, frontier[i].partition_p);
    violations += frontier[i].throughput_rps < frontier[i - 1].throughput_rps || cur > prev;
  }
  return {toy_ok && violations == 0 && !frontier.empty(),
          "toy frontier " + std::string(toy_ok ? "matches" : "differs") + "; default frontier " +
              std::to_string(frontier.size()) + " points, " + std::to_string(violations) +
              " monotonicity violations"};
}

Outcome md1_convergence() {
  // Front stages total 1.39 s regardless of partition; one output token.
  const Gpu gpu;
  RunInputs in;
  in.profile = flat_profile(gpu, 1389.9, 0.1, 1.0);
  in.workload = poisson(0.3, 100000, 5, LengthDist::fixed(1));
  const RunResult r = checked_run(in);
  const double measured = measured_wait(r.requests);
  const double formula = mg1_wait({1.39, 1.39 * 1.39, 0.3, 0});
  const double err_formula = std::abs(measured - formula) / formula;
  const double err_table = std::abs(measured - 0.51) / 0.51;
  return {std::abs(formula - 0.497) < 5e-4 && err_formula <= 0.05 && err_table <= 0.10,
          fmt("measured %.4f s", measured) + fmt(", formula %.4f s", formula) +
              fmt(" (err %.1f%%)", 100 * err_formula) + fmt(", vs 0.51 s err %.1f%%", 100 * err_table)};
}

Outcome queueing_shape() {
  bool ok = true;
  std::string detail;
  for (double lambda : {0.3, 0.4, 0.5, 0.7}) {
    const RunResult r = checked_run(default_inputs(PolicyKind::kPipelined, poisson(lambda, 5000, 0)));
    const WaitComparison c = compare_wait(r.requests, measure_service_stats(r.requests));
    detail += (detail.empty() ? "" : "; ") + fmt("l=%.1f", lambda) +
              fmt(" meas %.3f", c.measured_s);
    if (c.predicted_s) {
      detail += fmt(" pred %.3f", *c.predicted_s) + fmt(" err %.1f%%", 100 * *c.relative_error);
    } else {
      detail += fmt(" overloaded (rho %.2f)", c.utilization);
    }
    if (lambda < 0.6) ok = ok && c.relative_error && *c.relative_error <= 0.30;
  }
  return {ok, detail + " (0.7 reported only)"};
}

Outcome offload_bound() {
  const double gb = 1e9;
  const OffloadPlan base{8 * gb, 500.0, 64, 2, 16 * gb};
  const double b2 = required_bandwidth(base);
  int mismatches = 0, cases = 0;
  for (int k = 2; k <= 8; ++k) {
    OffloadPlan p = base;
    p.physical_layers = k;
    const double need = required_bandwidth(p);
    for (double f : {0.5, 1.0, 2.0}) {
      p.bandwidth_bytes_per_s = need * f;
      const StallLedger l = simulate_offload(p);
      const bool stalls = l.total_stall_ms > 1e-6;
      const bool below = p.bandwidth_bytes_per_s < need * (1 - 1e-6);
      mismatches += stalls != below;
      ++cases;
    }
  }
  return {b2 == 16 * gb && mismatches == 0,
          fmt("B(K=2) = %.6g GB/s", b2 / gb) + ", " + std::to_string(cases - mismatches) + "/" +
              std::to_string(cases) + " stall predictions agree"};
}

Outcome end_to_end() {
  const auto workload = poisson(0.7, 500, 0);
  const MetricsReport nova = checked_run(default_inputs(PolicyKind::kPipelined, workload)).metrics;
  bool ok = true;
  double best_thr = 0;
  std::string detail = fmt("nova avg %.0f", nova.avg_e2e_ms) + fmt(" max %.0f", nova.max_e2e_ms) +
                       fmt(" thr %.4f", nova.throughput_req_per_s);
  for (PolicyKind k : {PolicyKind::kPfLimit, PolicyKind::kChunk, PolicyKind::kMultiStream}) {
    const MetricsReport m = checked_run(default_inputs(k, workload)).metrics;
    ok = ok && nova.avg_e2e_ms <= m.avg_e2e_ms && nova.max_e2e_ms <= m.max_e2e_ms;
    best_thr = std::max(best_thr, m.throughput_req_per_s);
    detail += "; " + std::string(to_string(k)) + fmt(" avg %.0f", m.avg_e2e_ms) +
              fmt(" max %.0f", m.max_e2e_ms) + fmt(" thr %.4f", m.throughput_req_per_s);
  }
  ok = ok && nova.throughput_req_per_s >= 0.95 * best_thr;
  return {ok, detail};
}

Outcome adaptive_vs_static() {
  const auto high = poisson(0.7, 500, 0);
  const MetricsReport adaptive_high = checked_run(default_inputs(PolicyKind::kPipelined, high)).metrics;
  RunInputs fixed = default_inputs(PolicyKind::kStatic, high);
  fixed.policy.static_sm_vision = 24;
  fixed.policy.static_sm_prefill = 30;
  const MetricsReport static_high = checked_run(fixed).metrics;
  const bool high_ok = adaptive_high.max_e2e_ms <= static_high.max_e2e_ms;

  const auto low = poisson(0.3, 500, 0);
  const MetricsReport adaptive_low = checked_run(default_inputs(PolicyKind::kPipelined, low)).metrics;
  double best_static = 1e300;
  int best_sm = 0;
  for (int sm : {12, 16, 20, 24}) {
    RunInputs in = default_inputs(PolicyKind::kStatic, low);
    in.policy.static_sm_vision = sm;
    in.policy.static_sm_prefill = sm;
    const double avg = checked_run(in).metrics.avg_e2e_ms;
    if (avg < best_static) {
      best_static = avg;
      best_sm = sm;
    }
  }
  const bool low_ok = adaptive_low.avg_e2e_ms <= 1.05 * best_static;
  return {high_ok && low_ok,
          fmt("l=0.7 max: adaptive %.0f", adaptive_high.max_e2e_ms) +
              fmt(" vs static(24,30) %.0f", static_high.max_e2e_ms) +
              fmt("; l=0.3 avg: adaptive %.0f", adaptive_low.avg_e2e_ms) +
              fmt(" vs best static %.0f", best_static) + " (sm " + std::to_string(best_sm) + ")"};
}

Outcome determinism() {
  int mismatched = 0;
  for (PolicyKind k : {PolicyKind::kPipelined, PolicyKind::kPfLimit, PolicyKind::kChunk,
                       PolicyKind::kMultiStream, PolicyKind::kStatic}) {
    const RunInputs in = default_inputs(k, poisson(0.7, 500, 0));
    const RunResult a = checked_run(in);
    const RunResult b = checked_run(in);
    mismatched += metrics_json(a.metrics) != metrics_json(b.metrics) ||
                  trace_to_csv(a.trace) != trace_to_csv(b.trace);
  }
  return {mismatched == 0 && g_replay_failures == 0,
          std::to_string(mismatched) + " rerun mismatches; replay_check failed on " +
              std::to_string(g_replay_failures) + "/" + std::to_string(g_replay_runs) + " runs"};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"1 adaptive rule exactness", adaptive_rule},
      {"2 planner-engine consistency", planner_engine_consistency},
      {"3 static optimum", static_optimum},
      {"4 pareto frontier", pareto},
      {"5 M/D/1 convergence", md1_convergence},
      {"6 queueing delay vs M/G/1", queueing_shape},
      {"7 offload bandwidth bound", offload_bound},
      {"8 end-to-end vs baselines", end_to_end},
      {"9 adaptive vs static", adaptive_vs_static},
      {"10 determinism and replay", determinism},
  };
  int failures = 0;
  for (const auto& [name, check] : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    failures += !o.pass;
    std::printf("%s criterion %s: %s [%.0f ms]\n", o.pass ? "PASS" : "FAIL", name.c_str(),
                o.detail.c_str(), ms);
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
