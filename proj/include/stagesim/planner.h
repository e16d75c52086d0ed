#pragma once

#include <string>
#include <utility>
#include <vector>

#include "stagesim/core.h"
#include "stagesim/profile.h"

namespace stagesim {

// The default output length used for planning when no workload mean is given.
inline constexpr int kDefaultPlanGenLen = 50;

struct PlanPoint {
  Partition partition_v;  // decode + vision
  Partition partition_p;  // decode + prefill
  Millis expected_e2e_ms = 0;
  double throughput_rps = 0;
};

struct Corun {
  double prop_v = 0;
  double prop_p = 0;
};

// Share of decode iterations overlapping vision vs. prefill, proportional to
// the two front-stage durations. Throws DomainError on a zero denominator.
Corun corun_proportions(Millis vision_ms, Millis prefill_ms);
Corun corun_proportions(const StageProfile& profile, const Partition& pv, const Partition& pp);

// Ideal pipelined end-to-end latency: both front stages back to back, then
// gen_len decode iterations whose duration is the co-run-time-weighted mix of
// the two co-run decode latencies.
Millis expected_e2e(const StageProfile& profile, const Partition& pv, const Partition& pp,
                    int gen_len);

// Requests per second when front stages run back to back.
double throughput(const StageProfile& profile, const Partition& pv, const Partition& pp);

// Decode SM share averaged over one vision + prefill cycle, weighted by the
// co-run proportions.
double effective_sm_decode(const StageProfile& profile, const Partition& pv, const Partition& pp);

struct StaticOptimum {
  Partition partition_v;
  Partition partition_p;
  Millis expected_e2e_ms = 0;
};

// Exhaustive argmin of expected_e2e over all co-run allocation pairs. Ties go
// to more decode SMs in decode+vision first, then in decode+prefill.
StaticOptimum optimal_static_partition(const StageProfile& profile, const Gpu& gpu, int gen_len);

// Every allocation pair, in (sm_decode_v, sm_decode_p) order.
std::vector<PlanPoint> enumerate_plans(const StageProfile& profile, const Gpu& gpu, int gen_len);

// a dominates b: no worse on both axes and strictly better on one.
bool dominates(const PlanPoint& a, const PlanPoint& b);

// Non-dominated subset of points, sorted by ascending throughput.
std::vector<PlanPoint> non_dominated(std::vector<PlanPoint> points);
std::vector<PlanPoint> pareto_frontier(const StageProfile& profile, const Gpu& gpu, int gen_len);

// Decode SM share for one co-run context under load.
struct AdaptiveRule {
  int sm_op = 24;
  int sm_min = 12;
  int alpha = 4;
  int granularity = 2;

  // Throws ConfigError unless sm_min <= sm_op and all are granularity multiples.
  void validate() const;
};

// max(sm_min, sm_op - alpha * (n_pending - 1)) rounded down to the allocation
// granularity and never below sm_min. n_pending is clamped to at least 1.
int adaptive_sm(const AdaptiveRule& rule, int n_pending);

// sm_decode_v,sm_decode_p,expected_e2e_ms,throughput_rps,on_frontier
std::string plans_csv(const std::vector<PlanPoint>& all, const std::vector<PlanPoint>& frontier);

}  // namespace stagesim
