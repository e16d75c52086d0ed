#include <doctest.h>

#include <algorithm>

#include "fixtures.h"
#include "stagesim/error.h"
#include "stagesim/planner.h"

using namespace stagesim;
using stagesim::testing::toy_gpu;
using stagesim::testing::toy_profile;

namespace {

struct Oracle {
  int sv, sp;
  double e2e, thr;
};

// Hand computation over the four toy pairs: proportions from the two
// front-stage durations, then a weighted decode iteration times gen_len.
std::vector<Oracle> toy_oracle(int gen_len) {
  const double dv[] = {20, 12}, fv[] = {120, 200};
  const double dp[] = {25, 14}, fp[] = {60, 90};
  std::vector<Oracle> out;
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) {
      const double tv = fv[i], tp = fp[j];
      const double td = (tv * dv[i] + tp * dp[j]) / (tv + tp);
      out.push_back({2 + 2 * i, 2 + 2 * j, tv + tp + td * gen_len, 1000.0 / (tv + tp)});
    }
  }
  return out;
}

bool oracle_dominates(const Oracle& a, const Oracle& b) {
  return a.e2e <= b.e2e && a.thr >= b.thr && (a.e2e < b.e2e || a.thr > b.thr);
}

}  // namespace

TEST_CASE("co-run proportions") {
  const Corun c = corun_proportions(806.8, 324.1);
  CHECK(c.prop_v == doctest::Approx(0.7134).epsilon(1e-4));
  CHECK(c.prop_p == doctest::Approx(0.2866).epsilon(1e-3));
  CHECK(c.prop_v + c.prop_p == doctest::Approx(1.0).epsilon(1e-12));
  const Corun half = corun_proportions(500, 500);
  CHECK(half.prop_v == 0.5);
  CHECK(half.prop_p == 0.5);
  CHECK_THROWS_AS(corun_proportions(0, 0), DomainError);
  CHECK_THROWS_AS(corun_proportions(100, 0), DomainError);
}

TEST_CASE("expected latency and throughput on solo measurements") {
  const Gpu gpu{84, 2};
  const StageProfile flat = flat_profile(gpu, 806.8, 324.1, 28.9);
  const Partition pv = Partition::corun(gpu, CorunContext::kDecodeVision, 24);
  const Partition pp = Partition::corun(gpu, CorunContext::kDecodePrefill, 30);
  CHECK(expected_e2e(flat, pv, pp, 50) == doctest::Approx(806.8 + 324.1 + 28.9 * 50));
  CHECK(expected_e2e(flat, pv, pp, 50) == doctest::Approx(2575.9));
  CHECK(throughput(flat, pv, pp) == doctest::Approx(0.884).epsilon(1e-3));
  CHECK(throughput(flat, pv, pp) * (806.8 + 324.1) / 1000.0 == doctest::Approx(1.0));
  // Linear in gen_len: one more token adds one weighted decode iteration.
  CHECK(expected_e2e(flat, pv, pp, 1) == doctest::Approx(806.8 + 324.1 + 28.9));
  CHECK_THROWS_AS(expected_e2e(flat, pv, pp, 0), DomainError);
  // Context mismatch is rejected.
  CHECK_THROWS_AS(expected_e2e(flat, pp, pv, 50), DomainError);

  const StageProfile halves = flat_profile(gpu, 500, 500, 10);
  CHECK(throughput(halves, pv, pp) == doctest::Approx(1.0));
  const StageProfile doubled = flat_profile(gpu, 1000, 1000, 10);
  CHECK(throughput(doubled, pv, pp) == doctest::Approx(0.5));
}

TEST_CASE("expected latency on the default profile from table rows") {
  const Gpu gpu{84, 2};
  const StageProfile p = default_profile();
  const Partition pv = Partition::corun(gpu, CorunContext::kDecodeVision, 24);
  const Partition pp = Partition::corun(gpu, CorunContext::kDecodePrefill, 30);
  // Manual lookup of the two rows, then the arithmetic.
  const CorunEntry v = p.decode_vision.at(24);
  const CorunEntry q = p.decode_prefill.at(30);
  const double tv = v.front_ms, tp = q.front_ms;
  const double manual =
      tv + tp + (tv / (tv + tp) * v.decode_iter_ms + tp / (tv + tp) * q.decode_iter_ms) * 50;
  CHECK(expected_e2e(p, pv, pp, 50) == doctest::Approx(manual).epsilon(1e-12));
  CHECK(manual == doctest::Approx(2781.5952).epsilon(1e-7));
}

TEST_CASE("static optimum on the default profile") {
  const auto opt = optimal_static_partition(default_profile(), Gpu{84, 2}, kDefaultPlanGenLen);
  CHECK(opt.partition_v.sm_decode == 24);
  CHECK(opt.partition_p.sm_decode == 30);
  CHECK(opt.partition_v.context == CorunContext::kDecodeVision);
  CHECK(opt.partition_p.context == CorunContext::kDecodePrefill);
}

TEST_CASE("shorter outputs shift the optimum toward fewer decode SMs") {
  const Gpu gpu{84, 2};
  const StageProfile p = default_profile();
  const auto long_run = optimal_static_partition(p, gpu, 50);
  const auto short_run = optimal_static_partition(p, gpu, 1);
  CHECK(short_run.partition_v.sm_decode < long_run.partition_v.sm_decode);
  CHECK(short_run.partition_p.sm_decode < long_run.partition_p.sm_decode);
}

TEST_CASE("constant decode latency sends minimum SMs to decode") {
  const Gpu gpu{84, 2};
  StageProfile p = default_profile();
  for (auto* table : {&p.decode_vision, &p.decode_prefill}) {
    for (auto& [s, e] : *table) e.decode_iter_ms = 30.0;
  }
  const auto opt = optimal_static_partition(p, gpu, 50);
  CHECK(opt.partition_v.sm_decode == 2);
  CHECK(opt.partition_p.sm_decode == 2);
}

TEST_CASE("ties prefer more decode SMs, vision context first") {
  const Gpu gpu{84, 2};
  const StageProfile flat = flat_profile(gpu, 806.8, 324.1, 28.9);
  const auto opt = optimal_static_partition(flat, gpu, 50);
  CHECK(opt.partition_v.sm_decode == 82);
  CHECK(opt.partition_p.sm_decode == 82);
}

TEST_CASE("toy GPU enumeration matches hand computation") {
  const auto oracle = toy_oracle(10);
  const auto plans = enumerate_plans(toy_profile(), toy_gpu(), 10);
  REQUIRE(plans.size() == 4);
  for (const PlanPoint& pt : plans) {
    auto it = std::find_if(oracle.begin(), oracle.end(), [&](const Oracle& o) {
      return o.sv == pt.partition_v.sm_decode && o.sp == pt.partition_p.sm_decode;
    });
    REQUIRE(it != oracle.end());
    CHECK(pt.expected_e2e_ms == doctest::Approx(it->e2e).epsilon(1e-12));
    CHECK(pt.throughput_rps == doctest::Approx(it->thr).epsilon(1e-12));
  }
  const auto opt = optimal_static_partition(toy_profile(), toy_gpu(), 10);
  CHECK(opt.partition_v.sm_decode == 2);
  CHECK(opt.partition_p.sm_decode == 4);
  CHECK(opt.expected_e2e_ms == doctest::Approx(210 + 3660.0 / 210 * 10));
}

TEST_CASE("toy GPU frontier equals quadratic-scan oracle") {
  const auto oracle = toy_oracle(10);
  std::vector<std::pair<int, int>> expected;
  for (const Oracle& a : oracle) {
    bool dominated = false;
    for (const Oracle& b : oracle) dominated = dominated || oracle_dominates(b, a);
    if (!dominated) expected.emplace_back(a.sv, a.sp);
  }
  std::vector<std::pair<int, int>> got;
  const auto frontier = pareto_frontier(toy_profile(), toy_gpu(), 10);
  for (const PlanPoint& p : frontier) got.emplace_back(p.partition_v.sm_decode, p.partition_p.sm_decode);
  std::sort(expected.begin(), expected.end());
  std::sort(got.begin(), got.end());
  CHECK(got == expected);
  CHECK(got == std::vector<std::pair<int, int>>{{2, 2}, {2, 4}});
  // Ascending throughput.
  REQUIRE(frontier.size() == 2);
  CHECK(frontier[0].throughput_rps < frontier[1].throughput_rps);
}

TEST_CASE("default frontier is non-dominated and monotone") {
  const Gpu gpu{84, 2};
  const StageProfile p = default_profile();
  const auto all = enumerate_plans(p, gpu, 50);
  const auto frontier = pareto_frontier(p, gpu, 50);
  REQUIRE_FALSE(frontier.empty());
  for (const PlanPoint& f : frontier) {
    for (const PlanPoint& a : all) CHECK_FALSE(dominates(a, f));
  }
  for (size_t i = 1; i < frontier.size(); ++i) {
    CHECK(frontier[i].throughput_rps >= frontier[i - 1].throughput_rps);
    CHECK(effective_sm_decode(p, frontier[i].partition_v, frontier[i].partition_p) <=
          effective_sm_decode(p, frontier[i - 1].partition_v, frontier[i - 1].partition_p));
  }
  // The static optimum is on the frontier or ties a frontier point.
  const auto opt = optimal_static_partition(p, gpu, 50);
  for (const PlanPoint& a : all) {
    PlanPoint o{opt.partition_v, opt.partition_p, opt.expected_e2e_ms,
                throughput(p, opt.partition_v, opt.partition_p)};
    CHECK_FALSE(dominates(a, o));
  }
}

TEST_CASE("effective decode share") {
  const Gpu gpu{84, 2};
  const StageProfile flat = flat_profile(gpu, 806.8, 324.1, 28.9);
  const Partition pv = Partition::corun(gpu, CorunContext::kDecodeVision, 24);
  const Partition pp = Partition::corun(gpu, CorunContext::kDecodePrefill, 30);
  CHECK(effective_sm_decode(flat, pv, pp) ==
        doctest::Approx((806.8 * 24 + 324.1 * 30) / (806.8 + 324.1)));
  CHECK(effective_sm_decode(flat, pv, Partition::corun(gpu, CorunContext::kDecodePrefill, 24)) ==
        doctest::Approx(24.0));
}

TEST_CASE("single allocation gives a single frontier point") {
  const Gpu gpu{4, 2};
  StageProfile p;
  p.vision_solo_ms = 10;
  p.prefill_solo_ms = 5;
  p.decode_iter_solo_ms = 1;
  p.decode_vision[2] = {2, 12};
  p.decode_prefill[2] = {2, 6};
  p.batch_scale = {{1, 1.0}};
  CHECK(pareto_frontier(p, gpu, 10).size() == 1);
}

TEST_CASE("adaptive rule") {
  const AdaptiveRule rule{24, 12, 4, 2};
  std::vector<int> got;
  for (int n = 1; n <= 6; ++n) got.push_back(adaptive_sm(rule, n));
  CHECK(got == std::vector<int>{24, 20, 16, 12, 12, 12});
  CHECK(adaptive_sm(rule, 100) == 12);
  CHECK(adaptive_sm(rule, 0) == 24);

  const AdaptiveRule prefill{30, 12, 6, 2};
  CHECK(adaptive_sm(prefill, 1) == 30);
  CHECK(adaptive_sm(prefill, 2) == 24);
  CHECK(adaptive_sm(prefill, 4) == 12);

  // Non-increasing and bounded for a range of rules.
  for (int alpha : {2, 4, 6, 8}) {
    const AdaptiveRule r{30, 12, alpha, 2};
    int prev = adaptive_sm(r, 1);
    for (int n = 1; n < 40; ++n) {
      const int v = adaptive_sm(r, n);
      CHECK(v <= prev);
      CHECK(v >= r.sm_min);
      CHECK(v <= r.sm_op);
      CHECK(v % 2 == 0);
      prev = v;
    }
  }
  CHECK_THROWS_AS((AdaptiveRule{10, 12, 4, 2}.validate()), ConfigError);
  CHECK_THROWS_AS((AdaptiveRule{24, 12, 3, 2}.validate()), ConfigError);
}

TEST_CASE("plans csv marks frontier membership") {
  const auto all = enumerate_plans(toy_profile(), toy_gpu(), 10);
  const auto frontier = non_dominated(all);
  const std::string csv = plans_csv(all, frontier);
  CHECK(csv.rfind("sm_decode_v,sm_decode_p,expected_e2e_ms,throughput_rps,on_frontier\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);
  CHECK(csv.find(",1\n") != std::string::npos);
}
