#include "stagesim/planner.h"

#include <algorithm>
#include <set>
#include <sstream>

#include "stagesim/error.h"

namespace stagesim {

namespace {

void require_context(const Partition& p, CorunContext want) {
  if (p.context != want) {
    throw DomainError("expected a " + std::string(to_string(want)) + " partition, got " +
                      std::string(to_string(p.context)));
  }
}

}  // namespace

Corun corun_proportions(Millis vision_ms, Millis prefill_ms) {
  const Millis total = vision_ms + prefill_ms;
  if (!(total > 0)) throw DomainError("front-stage durations sum to zero");
  if (vision_ms <= 0 || prefill_ms <= 0) throw DomainError("front-stage durations must be positive");
  return {vision_ms / total, prefill_ms / total};
}

Corun corun_proportions(const StageProfile& profile, const Partition& pv, const Partition& pp) {
  require_context(pv, CorunContext::kDecodeVision);
  require_context(pp, CorunContext::kDecodePrefill);
  return corun_proportions(profile.corun(CorunContext::kDecodeVision, pv.sm_decode).front_ms,
                           profile.corun(CorunContext::kDecodePrefill, pp.sm_decode).front_ms);
}

Millis expected_e2e(const StageProfile& profile, const Partition& pv, const Partition& pp,
                    int gen_len) {
  if (gen_len < 1) throw DomainError("gen_len must be >= 1");
  require_context(pv, CorunContext::kDecodeVision);
  require_context(pp, CorunContext::kDecodePrefill);
  const CorunEntry& v = profile.corun(CorunContext::kDecodeVision, pv.sm_decode);
  const CorunEntry& p = profile.corun(CorunContext::kDecodePrefill, pp.sm_decode);
  const Corun prop = corun_proportions(v.front_ms, p.front_ms);
  return v.front_ms + p.front_ms +
         (prop.prop_v * v.decode_iter_ms + prop.prop_p * p.decode_iter_ms) * gen_len;
}

double throughput(const StageProfile& profile, const Partition& pv, const Partition& pp) {
  require_context(pv, CorunContext::kDecodeVision);
  require_context(pp, CorunContext::kDecodePrefill);
  const Millis t = profile.corun(CorunContext::kDecodeVision, pv.sm_decode).front_ms +
                   profile.corun(CorunContext::kDecodePrefill, pp.sm_decode).front_ms;
  return 1000.0 / t;
}

double effective_sm_decode(const StageProfile& profile, const Partition& pv, const Partition& pp) {
  const Corun c = corun_proportions(profile, pv, pp);
  return c.prop_v * pv.sm_decode + c.prop_p * pp.sm_decode;
}

StaticOptimum optimal_static_partition(const StageProfile& profile, const Gpu& gpu, int gen_len) {
  const auto allocs = gpu.corun_allocations();
  if (allocs.empty()) throw DomainError("gpu has no valid co-run allocations");
  // Descending order so that strict '<' keeps the larger sm_decode on ties.
  std::optional<StaticOptimum> best;
  for (auto v = allocs.rbegin(); v != allocs.rend(); ++v) {
    Partition pv = Partition::corun(gpu, CorunContext::kDecodeVision, *v);
    for (auto p = allocs.rbegin(); p != allocs.rend(); ++p) {
      Partition pp = Partition::corun(gpu, CorunContext::kDecodePrefill, *p);
      Millis e2e = expected_e2e(profile, pv, pp, gen_len);
      if (!best || e2e < best->expected_e2e_ms) best = StaticOptimum{pv, pp, e2e};
    }
  }
  return *best;
}

std::vector<PlanPoint> enumerate_plans(const StageProfile& profile, const Gpu& gpu, int gen_len) {
  std::vector<PlanPoint> out;
  for (int v : gpu.corun_allocations()) {
    Partition pv = Partition::corun(gpu, CorunContext::kDecodeVision, v);
    for (int p : gpu.corun_allocations()) {
      Partition pp = Partition::corun(gpu, CorunContext::kDecodePrefill, p);
      out.push_back({pv, pp, expected_e2e(profile, pv, pp, gen_len), throughput(profile, pv, pp)});
    }
  }
  return out;
}

bool dominates(const PlanPoint& a, const PlanPoint& b) {
  const bool no_worse =
      a.expected_e2e_ms <= b.expected_e2e_ms && a.throughput_rps >= b.throughput_rps;
  const bool better =
      a.expected_e2e_ms < b.expected_e2e_ms || a.throughput_rps > b.throughput_rps;
  return no_worse && better;
}

std::vector<PlanPoint> non_dominated(std::vector<PlanPoint> points) {
  // Sweep by descending throughput (ties: ascending latency). A point survives
  // iff its latency beats everything with higher throughput, or it exactly
  // ties the current best on both axes.
  std::sort(points.begin(), points.end(), [](const PlanPoint& a, const PlanPoint& b) {
    if (a.throughput_rps != b.throughput_rps) return a.throughput_rps > b.throughput_rps;
    if (a.expected_e2e_ms != b.expected_e2e_ms) return a.expected_e2e_ms < b.expected_e2e_ms;
    if (a.partition_v.sm_decode != b.partition_v.sm_decode) {
      return a.partition_v.sm_decode > b.partition_v.sm_decode;
    }
    return a.partition_p.sm_decode > b.partition_p.sm_decode;
  });
  std::vector<PlanPoint> kept;
  for (const PlanPoint& pt : points) {
    if (kept.empty() || pt.expected_e2e_ms < kept.back().expected_e2e_ms ||
        (pt.expected_e2e_ms == kept.back().expected_e2e_ms &&
         pt.throughput_rps == kept.back().throughput_rps)) {
      kept.push_back(pt);
    }
  }
  std::reverse(kept.begin(), kept.end());
  return kept;
}

std::vector<PlanPoint> pareto_frontier(const StageProfile& profile, const Gpu& gpu, int gen_len) {
  return non_dominated(enumerate_plans(profile, gpu, gen_len));
}

void AdaptiveRule::validate() const {
  if (granularity < 1) throw ConfigError("rule granularity must be >= 1");
  if (sm_min > sm_op) throw ConfigError("sm_min must not exceed sm_op");
  if (sm_min < granularity) throw ConfigError("sm_min must be at least one allocation unit");
  if (alpha < 0) throw ConfigError("alpha must be non-negative");
  if (sm_op % granularity || sm_min % granularity || alpha % granularity) {
    throw ConfigError("sm_op, sm_min and alpha must be multiples of the granularity");
  }
}

int adaptive_sm(const AdaptiveRule& rule, int n_pending) {
  const int n = std::max(1, n_pending);
  // Widen before multiplying: n_pending is unbounded.
  const long long raw = static_cast<long long>(rule.sm_op) -
                        static_cast<long long>(rule.alpha) * (n - 1);
  long long sm = std::max<long long>(rule.sm_min, raw);
  sm = sm / rule.granularity * rule.granularity;
  return static_cast<int>(std::max<long long>(sm, rule.sm_min));
}

std::string plans_csv(const std::vector<PlanPoint>& all, const std::vector<PlanPoint>& frontier) {
  std::set<std::pair<int, int>> on;
  for (const auto& f : frontier) on.insert({f.partition_v.sm_decode, f.partition_p.sm_decode});
  std::ostringstream os;
  os << "sm_decode_v,sm_decode_p,expected_e2e_ms,throughput_rps,on_frontier\n";
  for (const auto& p : all) {
    os << p.partition_v.sm_decode << ',' << p.partition_p.sm_decode << ','
       << format_double(p.expected_e2e_ms) << ',' << format_double(p.throughput_rps) << ','
       << (on.contains({p.partition_v.sm_decode, p.partition_p.sm_decode}) ? 1 : 0) << "\n";
  }
  return os.str();
}

}  // namespace stagesim
