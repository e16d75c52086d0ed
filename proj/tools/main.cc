// stagesim command-line front end.
//
// Exit codes: 0 success, 2 configuration or parse error, 3 simulator
// invariant violation, 4 analytic request undefined because of overload.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "stagesim/core.h"
#include "stagesim/engine.h"
#include "stagesim/error.h"
#include "stagesim/metrics.h"
#include "stagesim/offload.h"
#include "stagesim/planner.h"
#include "stagesim/policy.h"
#include "stagesim/profile.h"
#include "stagesim/queueing.h"
#include "stagesim/workload.h"

namespace fs = std::filesystem;
using namespace stagesim;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitInvariant = 3;
constexpr int kExitOverload = 4;

struct GlobalOptions {
  std::string profile_path;
  int gpu_sms = 84;
  int granularity = 2;
  std::uint64_t seed = 0;
  std::string out_dir;

  Gpu gpu() const {
    Gpu g{gpu_sms, granularity};
    g.validate();
    return g;
  }

  StageProfile profile() const {
    const Gpu g = gpu();
    StageProfile p = profile_path.empty() ? synthesize_profile(g, default_profile_shape())
                                          : load_profile(profile_path);
    if (auto violations = validate_profile(p, g); !violations.empty()) {
      std::string msg = "invalid profile:";
      for (const auto& v : violations) msg += "\n  " + v;
      throw ConfigError(msg);
    }
    return p;
  }

  // Writes to out_dir/name, or to stdout when no --out.
  void emit(const std::string& name, const std::string& content) const {
    if (out_dir.empty()) {
      std::cout << content;
      return;
    }
    fs::create_directories(out_dir);
    write_text_file(fs::path(out_dir) / name, content);
    std::cerr << "wrote " << (fs::path(out_dir) / name).string() << "\n";
  }
};

struct PolicyOptions {
  std::vector<std::string> policies{"nova"};
  int pf_threshold = 5;
  int chunk_budget = 128;
  double sigma = 0.25;
  int static_sm_v = 24;
  int static_sm_p = 30;
  int sm_op_v = 24;
  int sm_op_p = 30;
  int sm_min = 12;
  int alpha_v = 4;
  int alpha_p = 6;

  PolicyConfig config(const std::string& name, const Gpu& gpu) const {
    PolicyConfig c;
    c.kind = parse_policy_kind(name);
    c.rule_vision = {sm_op_v, sm_min, alpha_v, gpu.alloc_granularity};
    c.rule_prefill = {sm_op_p, sm_min, alpha_p, gpu.alloc_granularity};
    c.pf_threshold = pf_threshold;
    c.chunk_budget = chunk_budget;
    c.sigma = sigma;
    c.static_sm_vision = static_sm_v;
    c.static_sm_prefill = static_sm_p;
    make_policy(c, gpu);  // validates
    return c;
  }

  void add_flags(CLI::App* cmd) {
    cmd->add_option("--policy", policies, "nova, pf-limit, chunk, multistream, static")
        ->delimiter(',');
    cmd->add_option("--pf-threshold", pf_threshold, "PF-Limit decode threshold");
    cmd->add_option("--chunk-budget", chunk_budget, "Chunked prefill token budget");
    cmd->add_option("--sigma", sigma, "Multi-stream decode starvation factor");
    cmd->add_option("--static-sm-v", static_sm_v, "Static policy decode SMs, decode-vision");
    cmd->add_option("--static-sm-p", static_sm_p, "Static policy decode SMs, decode-prefill");
    cmd->add_option("--sm-op-v", sm_op_v, "Adaptive rule SM_op, decode-vision");
    cmd->add_option("--sm-op-p", sm_op_p, "Adaptive rule SM_op, decode-prefill");
    cmd->add_option("--sm-min", sm_min, "Adaptive rule SM_min");
    cmd->add_option("--alpha-v", alpha_v, "Adaptive rule step, decode-vision");
    cmd->add_option("--alpha-p", alpha_p, "Adaptive rule step, decode-prefill");
  }
};

struct WorkloadOptions {
  std::vector<double> lambdas{0.7};
  int count = kDefaultRequestCount;
  std::string gen_len = "30..80";
  std::string prompt_tokens = "1664";
  std::string workload_path;
  double time_scale = 1.0;

  void add_flags(CLI::App* cmd) {
    cmd->add_option("--lambda", lambdas, "Poisson arrival rates (req/s)")->delimiter(',');
    cmd->add_option("--count", count, "Requests per run");
    cmd->add_option("--gen-len", gen_len, "Output length: N or LO..HI");
    cmd->add_option("--prompt-tokens", prompt_tokens, "Prompt length: N or LO..HI");
    cmd->add_option("--workload", workload_path,
                    "Replay a workload CSV (arrival_s,prompt_tokens,output_tokens)");
    cmd->add_option("--time-scale", time_scale, "Multiplier on replayed arrival times");
  }

  WorkloadSpec spec(double lambda, std::uint64_t seed) const {
    WorkloadSpec s;
    s.rate_per_s = lambda;
    s.count = count;
    s.gen_len = parse_length_dist(gen_len);
    s.prompt_tokens = parse_length_dist(prompt_tokens);
    s.seed = seed;
    if (!workload_path.empty()) {
      s.kind = WorkloadSpec::Kind::kTrace;
      s.trace_path = workload_path;
      s.time_scale = time_scale;
    }
    s.validate();
    return s;
  }
};

std::string lambda_tag(double lambda) {
  std::string s = format_double(lambda);
  for (char& c : s) {
    if (c == '.') c = 'p';
  }
  return s;
}

int cmd_plan(const GlobalOptions& g, int gen_len) {
  const Gpu gpu = g.gpu();
  const StageProfile profile = g.profile();
  const auto all = enumerate_plans(profile, gpu, gen_len);
  const auto frontier = non_dominated(all);
  const auto opt = optimal_static_partition(profile, gpu, gen_len);

  std::ostringstream os;
  os << "sm_decode_v,sm_decode_p,expected_e2e_ms,throughput_rps\n"
     << opt.partition_v.sm_decode << ',' << opt.partition_p.sm_decode << ','
     << format_double(opt.expected_e2e_ms) << ','
     << format_double(throughput(profile, opt.partition_v, opt.partition_p)) << "\n";
  if (g.out_dir.empty()) {
    std::cout << plans_csv(all, frontier) << "\n" << os.str();
  } else {
    g.emit("plans.csv", plans_csv(all, frontier));
    g.emit("optimum.csv", os.str());
  }
  return 0;
}

std::string comparison_header() {
  return "policy,lambda,requests,completed,makespan_ms,avg_e2e_ms,max_e2e_ms,avg_ttft_ms,"
         "avg_tbt_ms,p99_tbt_ms,throughput_rps,avg_decode_batch,avg_queue_wait_ms\n";
}

std::string comparison_row(const std::string& policy, double lambda, const MetricsReport& m) {
  std::ostringstream os;
  os << policy << ',' << format_double(lambda) << ',' << m.requests.size() << ',' << m.completed << ','
     << format_double(m.makespan_ms) << ',' << format_double(m.avg_e2e_ms) << ','
     << format_double(m.max_e2e_ms) << ',' << format_double(m.avg_ttft_ms) << ','
     << format_double(m.avg_tbt_ms) << ',' << format_double(m.p99_tbt_ms) << ','
     << format_double(m.throughput_req_per_s) << ',' << format_double(m.avg_decode_batch) << ','
     << format_double(m.avg_queue_wait_ms) << "\n";
  return os.str();
}

int cmd_simulate(const GlobalOptions& g, const PolicyOptions& po, const WorkloadOptions& wo,
                 bool emit_trace, bool replay) {
  const Gpu gpu = g.gpu();
  const StageProfile profile = g.profile();
  if (po.policies.empty() || wo.lambdas.empty()) throw ConfigError("empty sweep axis");

  // A replayed workload has a single arrival process; the rate axis is ignored.
  const std::vector<double> lambdas =
      wo.workload_path.empty() ? wo.lambdas : std::vector<double>{0.0};
  std::string table = comparison_header();
  for (double lambda : lambdas) {
    const WorkloadSpec spec = wo.spec(lambda > 0 ? lambda : 1.0, g.seed);
    if (spec.kind == WorkloadSpec::Kind::kPoisson) {
      if (auto w = load_warning(lambda, profile)) std::cerr << "warning: " << *w << "\n";
    }
    RunInputs in;
    in.workload = make_workload(spec);
    in.profile = profile;
    in.gpu = gpu;
    in.seed = g.seed;
    for (const std::string& name : po.policies) {
      in.policy = po.config(name, gpu);
      const RunResult r = run(in);
      if (replay && !replay_check(in, r.trace)) {
        throw InvariantViolation("replay of " + name + " did not reproduce its trace");
      }
      const std::string policy(to_string(in.policy.kind));
      table += comparison_row(policy, lambda, r.metrics);
      if (!g.out_dir.empty()) {
        const std::string tag = policy + "_" + lambda_tag(lambda);
        g.emit("metrics_" + tag + ".json", metrics_json(r.metrics));
        g.emit("requests_" + tag + ".csv", metrics_requests_csv(r.metrics));
        if (emit_trace) g.emit("trace_" + tag + ".csv", trace_to_csv(r.trace));
      }
    }
  }
  g.emit("comparison.csv", table);
  return 0;
}

int cmd_offload(const GlobalOptions& g, double model_gb, double forward_ms, int layers,
                const std::vector<int>& ks, const std::vector<double>& bandwidths_gbs, int passes,
                double activation_mb, bool ledger) {
  if (ks.empty() || bandwidths_gbs.empty()) throw ConfigError("empty sweep axis");
  std::ostringstream table;
  table << "k,bandwidth_gbs,required_gbs,zero_stall_predicted,total_stall_ms,"
           "effective_forward_ms,resident_mb\n";
  std::string ledger_csv;
  for (int k : ks) {
    for (double bw : bandwidths_gbs) {
      OffloadPlan plan{model_gb * 1e9, forward_ms, layers, k, bw * 1e9};
      plan.validate();
      const double required = required_bandwidth(plan);
      const StallLedger l = simulate_offload(plan, passes);
      table << k << ',' << format_double(bw) << ',' << format_double(required / 1e9) << ','
            << (plan.bandwidth_bytes_per_s >= required ? "true" : "false") << ','
            << format_double(l.total_stall_ms) << ',' << format_double(l.effective_forward_ms)
            << ',' << format_double(resident_bytes(plan, activation_mb * 1e6) / 1e6) << "\n";
      if (ledger) {
        std::istringstream rows(stall_ledger_csv(l, layers));
        std::string line;
        bool first = true;
        while (std::getline(rows, line)) {
          if (first) {
            if (ledger_csv.empty()) ledger_csv = "k,bandwidth_gbs," + line + "\n";
            first = false;
            continue;
          }
          ledger_csv += std::to_string(k) + "," + format_double(bw) + "," + line + "\n";
        }
      }
    }
  }
  if (g.out_dir.empty()) {
    std::cout << table.str();
    if (ledger) std::cout << "\n" << ledger_csv;
  } else {
    g.emit("offload.csv", table.str());
    if (ledger) g.emit("offload_ledger.csv", ledger_csv);
  }
  return 0;
}

int cmd_queue_predict(const GlobalOptions& g, const std::vector<double>& lambdas, double mean_t,
                      std::optional<double> second_moment) {
  if (lambdas.empty()) throw ConfigError("empty sweep axis");
  std::ostringstream os;
  os << "lambda,mean_t_s,second_moment_t_s2,utilization,predicted_wait_s\n";
  bool overloaded = false;
  for (double lambda : lambdas) {
    ServiceStats s;
    s.arrival_rate = lambda;
    s.mean_t_s = mean_t;
    s.second_moment_t_s2 = second_moment.value_or(mean_t * mean_t);
    os << format_double(lambda) << ',' << format_double(s.mean_t_s) << ','
       << format_double(s.second_moment_t_s2) << ',' << format_double(s.utilization()) << ',';
    try {
      os << format_double(mg1_wait(s));
    } catch (const OverloadError& e) {
      overloaded = true;
      std::cerr << "lambda " << format_double(lambda) << ": " << e.what() << "\n";
    }
    os << "\n";
  }
  g.emit("queue_predict.csv", os.str());
  return overloaded ? kExitOverload : 0;
}

std::string wait_row(const std::string& label, const ServiceStats& s, const WaitComparison& c) {
  std::ostringstream os;
  os << label << ',' << format_double(s.arrival_rate) << ',' << format_double(s.mean_t_s) << ','
     << format_double(s.second_moment_t_s2) << ',' << format_double(c.utilization) << ','
     << format_double(c.measured_s) << ','
     << (c.predicted_s ? format_double(*c.predicted_s) : "") << ','
     << (c.relative_error ? format_double(*c.relative_error) : "") << "\n";
  return os.str();
}

int cmd_queue_validate(const GlobalOptions& g, const PolicyOptions& po, const WorkloadOptions& wo,
                       const std::string& trace_path) {
  std::string out =
      "source,lambda_measured,mean_t_s,second_moment_t_s2,utilization,measured_wait_s,"
      "predicted_wait_s,relative_error\n";
  if (!trace_path.empty()) {
    const auto reqs = requests_from_trace(load_trace(trace_path));
    const ServiceStats s = measure_service_stats(std::span<const Request>(reqs));
    out += wait_row(fs::path(trace_path).filename().string(), s, compare_wait(reqs, s));
  } else {
    const Gpu gpu = g.gpu();
    RunInputs in;
    in.profile = g.profile();
    in.gpu = gpu;
    in.seed = g.seed;
    in.policy = po.config(po.policies.empty() ? "nova" : po.policies.front(), gpu);
    for (double lambda : wo.lambdas) {
      in.workload = generate(wo.spec(lambda, g.seed));
      const RunResult r = run(in);
      const ServiceStats s = measure_service_stats(std::span<const Request>(r.requests));
      out += wait_row("lambda=" + format_double(lambda), s, compare_wait(r.requests, s));
    }
  }
  g.emit("queue_validate.csv", out);
  return 0;
}

int cmd_profile_validate(const GlobalOptions& g, const std::string& export_path) {
  const Gpu gpu = g.gpu();
  const StageProfile p = g.profile_path.empty() ? synthesize_profile(gpu, default_profile_shape())
                                                : load_profile(g.profile_path);
  const auto violations = validate_profile(p, gpu);
  for (const auto& v : violations) std::cout << v << "\n";
  if (!export_path.empty()) save_profile(p, export_path);
  if (!violations.empty()) return kExitConfig;
  std::cout << "ok\n";
  return 0;
}

int cmd_trace_gen(const GlobalOptions& g, const WorkloadOptions& wo) {
  if (wo.lambdas.size() != 1) throw ConfigError("trace-gen takes exactly one --lambda");
  const WorkloadSpec spec = wo.spec(wo.lambdas.front(), g.seed);
  if (auto w = load_warning(spec.rate_per_s, g.profile())) std::cerr << "warning: " << *w << "\n";
  g.emit("workload.csv", workload_to_csv(generate(spec)));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Discrete-event simulator and planner for single-GPU VLM serving"};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalOptions g;
  app.add_option("--profile", g.profile_path, "Stage profile (sectioned CSV or JSON)")
      ->check(CLI::ExistingFile);
  app.add_option("--gpu-sms", g.gpu_sms, "Total SMs");
  app.add_option("--granularity", g.granularity, "SM allocation unit");
  app.add_option("--seed", g.seed, "Workload seed");
  app.add_option("--out", g.out_dir, "Output directory (default: stdout)");

  int gen_len = kDefaultPlanGenLen;
  auto* plan = app.add_subcommand("plan", "Enumerate partitions, Pareto frontier, static optimum");
  plan->add_option("--gen-len", gen_len, "Output length used by the latency model");

  PolicyOptions po;
  WorkloadOptions wo;
  bool emit_trace = false, replay = false;
  auto* sim = app.add_subcommand("simulate", "Run policies over a rate sweep");
  po.add_flags(sim);
  wo.add_flags(sim);
  sim->add_flag("--trace", emit_trace, "Write event traces (needs --out)");
  sim->add_flag("--replay-check", replay, "Re-run each simulation and compare traces");

  double model_gb = 8, forward_ms = 500, activation_mb = 0;
  int layers = 64, passes = 1;
  std::vector<int> ks{2};
  std::vector<double> bandwidths{32};
  bool ledger = false;
  auto* off = app.add_subcommand("offload-check", "Weight ring-buffer bandwidth and stalls");
  off->add_option("--model-gb", model_gb, "Model size S (GB, 1e9 bytes)");
  off->add_option("--forward-ms", forward_ms, "Forward latency T (ms)");
  off->add_option("--layers", layers, "Encoder layers");
  off->add_option("--k", ks, "Physical layers K (list)")->delimiter(',');
  off->add_option("--bandwidth-gbs", bandwidths, "Host-to-device bandwidth B (GB/s, list)")
      ->delimiter(',');
  off->add_option("--passes", passes, "Consecutive forward passes");
  off->add_option("--activation-mb", activation_mb, "Fixed activation memory (MB)");
  off->add_flag("--ledger", ledger, "Also emit per-layer waits");

  std::vector<double> q_lambdas;
  double mean_t = 0;
  std::optional<double> second_moment;
  auto* qp = app.add_subcommand("queue-predict", "M/G/1 mean queueing delay");
  qp->add_option("--lambda", q_lambdas, "Arrival rates (req/s)")->delimiter(',')->required();
  qp->add_option("--mean-t", mean_t, "E[T] (s)")->required();
  qp->add_option("--second-moment-t", second_moment, "E[T^2] (s^2), default E[T]^2");

  std::string trace_path;
  PolicyOptions qv_po;
  WorkloadOptions qv_wo;
  qv_wo.lambdas = {0.3, 0.4, 0.5, 0.6, 0.7};
  auto* qv = app.add_subcommand("queue-validate",
                                "Measured vs predicted queueing delay (trace or rate sweep)");
  qv->add_option("--trace", trace_path, "Event trace from simulate --trace")
      ->check(CLI::ExistingFile);
  qv_po.add_flags(qv);
  qv_wo.add_flags(qv);

  std::string export_path;
  auto* pv = app.add_subcommand("profile-validate", "Check profile invariants");
  pv->add_option("--export", export_path, "Write the (default or loaded) profile here");

  WorkloadOptions tg_wo;
  tg_wo.lambdas = {0.5};
  auto* tg = app.add_subcommand("trace-gen", "Generate a Poisson workload CSV");
  tg_wo.add_flags(tg);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  try {
    if (plan->parsed()) return cmd_plan(g, gen_len);
    if (sim->parsed()) return cmd_simulate(g, po, wo, emit_trace, replay);
    if (off->parsed()) {
      return cmd_offload(g, model_gb, forward_ms, layers, ks, bandwidths, passes, activation_mb,
                         ledger);
    }
    if (qp->parsed()) return cmd_queue_predict(g, q_lambdas, mean_t, second_moment);
    if (qv->parsed()) return cmd_queue_validate(g, qv_po, qv_wo, trace_path);
    if (pv->parsed()) return cmd_profile_validate(g, export_path);
    if (tg->parsed()) return cmd_trace_gen(g, tg_wo);
  } catch (const InvariantViolation& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInvariant;
  } catch (const OverloadError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitOverload;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  }
  return kExitConfig;
}
