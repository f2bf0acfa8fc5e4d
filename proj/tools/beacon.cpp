#include <cstdint>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "beacon/io.hpp"
#include "beacon/pool.hpp"
#include "beacon/twin.hpp"
#include "beacon/validate.hpp"

namespace {

using namespace beacon;

struct CommonOpts {
  std::string config_path;
  std::string out_dir;
  uint64_t seed = 0;
  bool seed_set = false;
  bool deterministic = false;
  int iterations = -1;
};

void add_common(CLI::App* cmd, CommonOpts& opts, bool with_iterations) {
  cmd->add_option("--config", opts.config_path, "Config file (flat key = value)");
  cmd->add_option("--out", opts.out_dir, "Output directory");
  cmd->add_option("--seed", opts.seed, "Master seed")->each([&](const std::string&) {
    opts.seed_set = true;
  });
  cmd->add_flag("--deterministic", opts.deterministic,
                "Single-threaded, bit-reproducible execution");
  if (with_iterations)
    cmd->add_option("--iterations", opts.iterations, "Override the iteration count");
}

RunConfig load_run_config(const CommonOpts& opts) {
  RunConfig rc = opts.config_path.empty() ? default_run_config() : parse_config(opts.config_path);
  if (opts.seed_set) rc.twin.seed = opts.seed;
  if (!opts.out_dir.empty()) rc.out_dir = opts.out_dir;
  if (opts.deterministic) rc.twin.deterministic = true;
  if (opts.iterations >= 0) rc.twin.iterations = opts.iterations;
  return rc;
}

std::unique_ptr<ThreadPool> make_pool(const TwinConfig& cfg) {
  int threads = cfg.deterministic ? 1 : cfg.threads;
  if (threads <= 0) threads = static_cast<int>(std::thread::hardware_concurrency());
  if (threads < 1) threads = 1;
  return std::make_unique<ThreadPool>(threads);
}

int run_twin(const CommonOpts& opts, const std::string& resume_path, bool random_placement) {
  TwinConfig cfg;
  TwinState state;
  std::string out_dir = opts.out_dir;
  std::string label;
  if (!resume_path.empty()) {
    if (!opts.config_path.empty())
      throw ConfigError("--resume and --config are mutually exclusive");
    if (opts.seed_set) throw ConfigError("--seed cannot be combined with --resume");
    LoadedCheckpoint ckpt = load_checkpoint(resume_path);
    if (ckpt.random_placement != random_placement)
      throw ConfigError("checkpoint method does not match this subcommand");
    cfg = ckpt.cfg;
    state = std::move(ckpt.state);
    if (opts.iterations >= 0) cfg.iterations = opts.iterations;
    if (opts.deterministic) cfg.deterministic = true;
    if (out_dir.empty()) out_dir = "out";
  } else {
    RunConfig rc = load_run_config(opts);
    cfg = rc.twin;
    out_dir = rc.out_dir;
    label = rc.label;
    state = twin_init(cfg);
  }

  auto pool = make_pool(cfg);
  std::filesystem::create_directories(out_dir);
  while (state.k < cfg.iterations) {
    run_iteration(state, cfg, random_placement, pool.get());
    save_checkpoint(state, cfg, random_placement, out_dir + "/checkpoint.bin");
    const IterationMetrics& m = state.history.back();
    std::cout << "iteration " << m.k << ": drilled column " << m.drilled_column
              << ", rmse " << m.rmse << ", posterior std " << m.mean_posterior_std << "\n";
  }
  Report report = make_report(state, cfg, random_placement);
  emit_report(report, cfg, label, out_dir);
  std::cout << "wrote " << out_dir << "/metrics.csv\n";
  return 0;
}

int run_compare(const CommonOpts& opts, int pairs) {
  RunConfig rc = load_run_config(opts);
  auto pool = make_pool(rc.twin);
  std::vector<Report> reports;
  reports.reserve(2 * pairs);
  for (int p = 0; p < pairs; ++p) {
    TwinConfig cfg = rc.twin;
    cfg.seed = rc.twin.seed + static_cast<uint64_t>(p);
    reports.push_back(run_experiment(cfg, false, nullptr, pool.get()));
    reports.push_back(run_experiment(cfg, true, nullptr, pool.get()));
    const Report& b = reports[reports.size() - 2];
    const Report& r = reports[reports.size() - 1];
    std::cout << "seed " << cfg.seed << ": final rmse beacon " << b.rows.back().rmse
              << " vs random " << r.rows.back().rmse << "\n";
  }
  std::filesystem::create_directories(rc.out_dir);
  std::vector<const Report*> ptrs;
  for (const Report& r : reports) ptrs.push_back(&r);
  write_metrics_csv(ptrs, rc.out_dir + "/metrics.csv");
  std::cout << "wrote " << rc.out_dir << "/metrics.csv\n";
  return 0;
}

int run_gradcheck(uint64_t seed) {
  std::vector<AuditCheck> checks = gradient_audit(seed);
  bool ok = true;
  for (const AuditCheck& c : checks) {
    std::cout << (c.pass ? "[PASS] " : "[FAIL] ") << c.name << ": " << c.value
              << " (tol " << c.tol << ")\n";
    ok = ok && c.pass;
  }
  if (!ok) throw NumericError("gradient audit failed");
  return 0;
}

int run_oracle(uint64_t seed) {
  PosteriorValidation pv = validate_flow_posterior(seed);
  bool mean_ok = pv.mean_rel_err < 0.10;
  bool std_ok = pv.max_std_rel_err < 0.15;
  std::cout << (mean_ok ? "[PASS] " : "[FAIL] ") << "posterior mean relative error: "
            << pv.mean_rel_err << " (tol 0.1)\n";
  std::cout << (std_ok ? "[PASS] " : "[FAIL] ") << "posterior marginal std relative error: "
            << pv.max_std_rel_err << " (tol 0.15)\n";
  OrderingTrial trial = design_ordering_trial(seed);
  std::cout << "analytic EIG: low-noise candidate " << trial.eig_low_noise
            << " nats, high-noise " << trial.eig_high_noise << " nats\n";
  std::cout << (trial.ranked_optimal_first ? "[PASS] " : "[FAIL] ")
            << "trained density ranks the EIG-optimal candidate first (w = " << trial.w_low
            << " vs " << trial.w_high << ")\n";
  if (!mean_ok || !std_ok || !trial.ranked_optimal_first)
    throw NumericError("oracle validation failed");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"beacon: sequential well-placement design with a conditional normalizing flow"};
  app.require_subcommand(1);

  CommonOpts twin_opts, baseline_opts, compare_opts;
  std::string twin_resume, baseline_resume;
  int compare_pairs = 10;
  uint64_t tool_seed = 0;

  CLI::App* twin_cmd = app.add_subcommand("twin", "Run the digital-twin loop with optimized placement");
  add_common(twin_cmd, twin_opts, true);
  twin_cmd->add_option("--resume", twin_resume, "Resume from a checkpoint file");

  CLI::App* baseline_cmd = app.add_subcommand("baseline", "Run the random-placement baseline");
  add_common(baseline_cmd, baseline_opts, true);
  baseline_cmd->add_option("--resume", baseline_resume, "Resume from a checkpoint file");

  CLI::App* compare_cmd = app.add_subcommand("compare", "Paired twin/baseline runs, aggregate CSV");
  add_common(compare_cmd, compare_opts, false);
  compare_cmd->add_option("--pairs", compare_pairs, "Number of paired seeds")->check(CLI::PositiveNumber);

  CLI::App* gradcheck_cmd = app.add_subcommand("gradcheck", "Gradient-audit suite");
  gradcheck_cmd->add_option("--seed", tool_seed, "Audit seed");

  CLI::App* oracle_cmd = app.add_subcommand("oracle", "Linear-Gaussian oracle validation suite");
  oracle_cmd->add_option("--seed", tool_seed, "Validation seed");

  try {
    app.parse(argc, argv);
    if (twin_cmd->parsed()) return run_twin(twin_opts, twin_resume, false);
    if (baseline_cmd->parsed()) return run_twin(baseline_opts, baseline_resume, true);
    if (compare_cmd->parsed()) return run_compare(compare_opts, compare_pairs);
    if (gradcheck_cmd->parsed()) return run_gradcheck(tool_seed);
    if (oracle_cmd->parsed()) return run_oracle(tool_seed);
    return 1;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return 1;
  } catch (const beacon::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
