// xglab: experiment runner, summarizer, theta sweep, teaching simulator and
// session server.

#include <csignal>
#include <iostream>

#include <CLI11.hpp>

#include "xgl/server.hpp"
#include "xgl/teaching.hpp"

namespace {

using namespace xgl;

void print_summary(const std::vector<SummaryRow>& rows) {
  std::printf("%-16s %-12s %5s %10s %10s %10s\n", "dataset", "strategy", "runs", "F1", "std", "NB");
  for (const auto& r : rows) {
    std::printf("%-16s %-12s %5zu %9.4f%s %10.4f %9.4f%s\n", r.dataset.c_str(), to_string(r.strategy).c_str(), r.runs,
                r.f1_mean, r.best_f1 ? "*" : " ", r.f1_std, r.nb_mean, r.best_nb ? "*" : " ");
  }
}

int report_failures(const ExperimentResult& res) {
  for (const auto& f : res.failures) std::cerr << "failed: " << f.key.id() << ": " << f.message << '\n';
  std::cerr << res.computed << " computed, " << res.resumed << " resumed, " << res.failures.size() << " failed\n";
  return res.failures.empty() ? 0 : 1;
}

httplib::Server* g_server = nullptr;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Explanatory guided learning lab"};
  app.require_subcommand(1);

  std::string config_path, output, results_dir, thetas = "0,1,10,100";
  std::size_t workers = std::max(1u, std::thread::hardware_concurrency());
  bool resume = false, quiet = false;

  auto* run = app.add_subcommand("run", "Run every (dataset, strategy, fold, seed) key of a config");
  run->add_option("config", config_path, "YAML or JSON config")->required()->check(CLI::ExistingFile);
  run->add_option("-o,--output", output, "Override output_dir");
  run->add_option("-j,--workers", workers, "Worker threads")->check(CLI::PositiveNumber);
  run->add_flag("--resume", resume, "Skip keys whose record already exists");
  run->add_flag("-q,--quiet", quiet, "No per-key progress lines");

  auto* summarize_cmd = app.add_subcommand("summarize", "Rebuild summary.csv and curves.csv from records");
  summarize_cmd->add_option("results", results_dir, "Results directory")->required()->check(CLI::ExistingDirectory);

  auto* sweep = app.add_subcommand("sweep-theta", "XGL only, once per theta value");
  sweep->add_option("config", config_path, "YAML or JSON config")->required()->check(CLI::ExistingFile);
  sweep->add_option("--thetas", thetas, "Comma-separated theta values")->capture_default_str();
  sweep->add_option("-o,--output", output, "Override output_dir");
  sweep->add_option("-j,--workers", workers, "Worker threads")->check(CLI::PositiveNumber);
  sweep->add_flag("--resume", resume, "Skip keys whose record already exists");

  std::size_t size = 16, trials = 200, eta = 0, side = 4, h_size = 64;
  long target = -1;
  double delta = 0.1;
  std::uint64_t seed = 0;
  std::string policy = "first", teach_csv;
  bool prop1 = false;
  auto* teach = app.add_subcommand("teach", "Teaching-oracle trials on the threshold class");
  teach->add_option("--size", size, "Instances in the threshold class")->capture_default_str();
  teach->add_option("--trials", trials, "Number of trials")->capture_default_str();
  teach->add_option("--delta", delta, "Failure probability")->capture_default_str()->check(CLI::Range(1e-9, 0.999999));
  teach->add_option("--eta", eta, "Tolerated disagreements")->capture_default_str();
  teach->add_option("--target", target, "Target hypothesis (-1: random per trial)")->capture_default_str();
  teach->add_option("--policy", policy, "Learner tie policy")->check(CLI::IsMember({"first", "last"}));
  teach->add_option("--seed", seed, "Seed")->capture_default_str();
  teach->add_option("--csv", teach_csv, "Write per-trial rows here");
  teach->add_flag("--projection", prop1, "Run the projection pipeline on depth-2 tree explanations instead");
  teach->add_option("--side", side, "Grid side for --projection")->capture_default_str();
  teach->add_option("--hypotheses", h_size, "Size of the random class for --projection")->capture_default_str();

  std::string host = "127.0.0.1", snapshots;
  int port = 8080;
  long timeout_ms = 30000;
  auto* serve = app.add_subcommand("serve", "HTTP/JSON session service");
  serve->add_option("--host", host, "Bind address")->capture_default_str();
  serve->add_option("--port", port, "Port (0: any)")->capture_default_str();
  serve->add_option("--config", config_path, "Register this config's datasets")->check(CLI::ExistingFile);
  serve->add_option("--snapshots", snapshots, "Snapshot directory; sessions are recovered on start");
  serve->add_option("--timeout-ms", timeout_ms, "Refit time before answering 202")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run || *sweep) {
      ExperimentConfig cfg = load_experiment_config(config_path);
      if (!output.empty()) cfg.output_dir = output;
      RunOptions opt;
      opt.workers = workers;
      opt.resume = resume;
      opt.log = quiet ? nullptr : &std::cerr;
      if (*run) {
        const auto res = run_experiment(cfg, opt);
        if (!res.records.empty()) print_summary(write_summaries(cfg.output_dir, res.records));
        return report_failures(res);
      }
      const auto result = theta_sweep(cfg, parse_theta_list(thetas), opt);
      int code = 0;
      for (std::size_t i = 0; i < result.thetas.size(); ++i) {
        if (!result.runs[i].records.empty())
          write_summaries(fs::path(cfg.output_dir) / ("theta_" + format_exact(result.thetas[i])), result.runs[i].records);
        code |= report_failures(result.runs[i]);
      }
      std::ostringstream csv;
      write_theta_sweep_csv(csv, result);
      detail::write_atomically(fs::path(cfg.output_dir) / "theta_sweep.csv", csv.str());
      std::cout << csv.str();
      return code;
    }
    if (*summarize_cmd) {
      print_summary(write_summaries(results_dir, load_records(results_dir)));
      return 0;
    }
    if (*teach) {
      TeachingOptions opt;
      opt.delta = delta;
      opt.eta = eta;
      opt.policy = policy == "first" ? LearnerPolicy::first_consistent : LearnerPolicy::last_consistent;
      if (prop1) {
        const auto s = proposition1_trials(trials, side, h_size, opt, seed);
        std::printf("trials %zu  halted %zu  without_output %zu  holds %zu  violations %zu  max_rho %.4f\n", s.trials,
                    s.halted, s.without_output, s.holds, s.violations, s.max_rho);
        return s.violations == 0 ? 0 : 1;
      }
      const auto reports = threshold_trials(size, trials, opt, seed, target);
      const auto s = summarize_trials(reports);
      std::printf("trials %zu  success %.4f  bound_violations %zu  weight_violations %zu  lemma4 %zu  "
                  "mean_sample %.3f  mean_bound %.3f\n",
                  s.trials, s.success_rate(), s.bound_violations, s.weight_violations, s.lemma4_events,
                  s.mean_sample_size, s.mean_sample_bound);
      if (!teach_csv.empty()) {
        std::ofstream out(teach_csv);
        write_teaching_csv(out, reports);
      }
      return 0;
    }
    if (*serve) {
      SessionManagerOptions opt;
      if (!config_path.empty()) {
        const auto cfg = load_experiment_config(config_path);
        for (const auto& d : cfg.datasets)
          if (std::none_of(opt.registry.begin(), opt.registry.end(), [&](const auto& r) { return r.name == d.name; }))
            opt.registry.push_back(d);
      }
      if (!snapshots.empty()) opt.snapshot_dir = snapshots;
      opt.refit_timeout = std::chrono::milliseconds(timeout_ms);
      SessionManager manager(opt);
      const std::size_t recovered = manager.recover();
      httplib::Server server;
      install_routes(server, manager);
      g_server = &server;
      std::signal(SIGINT, [](int) {
        if (g_server) g_server->stop();
      });
      std::signal(SIGTERM, [](int) {
        if (g_server) g_server->stop();
      });
      const int bound = port == 0 ? server.bind_to_any_port(host) : (server.bind_to_port(host, port) ? port : -1);
      if (bound < 0) {
        std::cerr << "cannot bind " << host << ':' << port << '\n';
        return 1;
      }
      std::cerr << "listening on http://" << host << ':' << bound << " (" << recovered << " sessions recovered)\n";
      server.listen_after_bind();
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
