#include <doctest.h>

#include <filesystem>

#include "stagesim/error.h"
#include "stagesim/profile.h"
#include "stagesim/workload.h"

using namespace stagesim;

TEST_CASE("poisson inter-arrival mean") {
  WorkloadSpec spec;
  spec.rate_per_s = 0.5;
  spec.count = 100000;
  spec.seed = 7;
  const auto reqs = generate(spec);
  REQUIRE(reqs.size() == 100000);
  const double mean_gap_s = reqs.back().arrival / 1000.0 / reqs.size();
  CHECK(mean_gap_s == doctest::Approx(2.0).epsilon(0.02));
  CHECK(reqs.front().arrival > 0);
  for (size_t i = 1; i < reqs.size(); ++i) {
    CHECK(reqs[i].arrival >= reqs[i - 1].arrival);
    CHECK(reqs[i].id == static_cast<RequestId>(i));
  }
  for (const Request& r : reqs) {
    CHECK(r.gen_len >= 30);
    CHECK(r.gen_len <= 80);
    CHECK(r.prompt_tokens == 1664);
  }
}

TEST_CASE("generator edge cases") {
  WorkloadSpec spec;
  spec.count = 0;
  CHECK(generate(spec).empty());
  spec.count = 10;
  spec.gen_len = LengthDist::fixed(50);
  for (const Request& r : generate(spec)) CHECK(r.gen_len == 50);
  spec.rate_per_s = 0;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  spec.rate_per_s = 1;
  spec.gen_len = LengthDist::uniform(10, 5);
  CHECK_THROWS_AS(spec.validate(), ConfigError);
}

TEST_CASE("same seed gives identical workloads") {
  WorkloadSpec spec;
  spec.seed = 99;
  spec.count = 300;
  CHECK(workload_to_csv(generate(spec)) == workload_to_csv(generate(spec)));
  WorkloadSpec other = spec;
  other.seed = 100;
  CHECK(workload_to_csv(generate(spec)) != workload_to_csv(generate(other)));
}

TEST_CASE("length distribution parsing") {
  CHECK(parse_length_dist("50").kind == LengthDist::Kind::kFixed);
  const LengthDist u = parse_length_dist("30..80");
  CHECK(u.kind == LengthDist::Kind::kUniform);
  CHECK(u.lo == 30);
  CHECK(u.hi == 80);
  CHECK_THROWS(parse_length_dist("30-80"));
  CHECK_THROWS_AS(parse_length_dist("0").validate("gen_len"), ConfigError);
}

TEST_CASE("trace workloads") {
  const std::string ok =
      "arrival_s,prompt_tokens,output_tokens\n"
      "0.0,1664,50\n"
      "1.5,1000,20\n"
      "4.0,2048,1\n";
  const auto reqs = parse_trace_workload(ok);
  REQUIRE(reqs.size() == 3);
  CHECK(reqs[1].arrival == 1500.0);
  CHECK(reqs[1].prompt_tokens == 1000);
  CHECK(reqs[2].gen_len == 1);
  CHECK(parse_trace_workload(ok, 0.5)[2].arrival == 2000.0);

  auto line_of = [](const std::string& text) {
    try {
      parse_trace_workload(text);
    } catch (const ParseError& e) {
      return e.line();
    }
    return -1;
  };
  CHECK(line_of("arrival_s,prompt_tokens,output_tokens\n0,1664,50\n1,1664,0\n") == 3);
  CHECK(line_of("arrival_s,prompt_tokens,output_tokens\n2,1664,50\n1,1664,5\n") == 3);
  CHECK(line_of("arrival_s,prompt_tokens,output_tokens\n-1,1664,50\n") == 2);
  CHECK(line_of("arrival_s,prompt_tokens,output_tokens\n0,1664\n") == 2);
  CHECK(line_of("0,1664,50\n") == 1);

  const auto dir = std::filesystem::temp_directory_path() / "stagesim_workload_test";
  std::filesystem::create_directories(dir);
  save_workload(reqs, dir / "w.csv");
  const auto back = load_trace_workload(dir / "w.csv");
  REQUIRE(back.size() == 3);
  for (size_t i = 0; i < 3; ++i) {
    CHECK(back[i].arrival == reqs[i].arrival);
    CHECK(back[i].gen_len == reqs[i].gen_len);
  }
  std::filesystem::remove_all(dir);
  CHECK_THROWS_AS(load_trace_workload(dir / "missing.csv"), ConfigError);
}

TEST_CASE("overload warning") {
  const StageProfile p = default_profile();
  CHECK_FALSE(load_warning(0.5, p).has_value());
  CHECK(load_warning(0.9, p).has_value());
}
