// cacemix: fit complier-average-causal-effect estimators on trial CSVs and
// run the Monte Carlo study.
#include <CLI11.hpp>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <json.hpp>
#include <string>
#include <vector>

#include "cacemix/baselines.hpp"
#include "cacemix/estimators.hpp"
#include "cacemix/io.hpp"
#include "cacemix/simgen.hpp"
#include "cacemix/version.hpp"

using namespace cacemix;
namespace fs = std::filesystem;

namespace {

int resolve_threads(int flag_value) {
  if (flag_value > 0) return flag_value;
  if (const char* env = std::getenv("CACEMIX_THREADS")) {
    int v = std::atoi(env);
    if (v > 0) return v;
  }
  return 0;  // library default: all available
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

nlohmann::json conventions_json() {
  return nlohmann::json::array({
      "two-expert posteriors use the complement h_nc = 1 - h_c",
      "three-expert posteriors normalize g_s*L_s over the full three-term sum",
      "multinomial gating uses reference coding: last stratum pinned at 0",
      "gaussian variance update divides by n'-d (parametric) or n' (learner-based);"
      " posterior-mass denominator available via configuration",
  });
}

struct ManifestBuilder {
  nlohmann::json j;
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

  ManifestBuilder(const std::string& command, std::uint64_t seed) {
    j["command"] = command;
    j["version"] = kVersion;
    j["seed"] = seed;
    j["conventions"] = conventions_json();
    j["warnings"] = nlohmann::json::array();
    j["outputs"] = nlohmann::json::array();
  }
  void warn(const std::string& w) { j["warnings"].push_back(w); }
  void output(const std::string& o) { j["outputs"].push_back(o); }
  void write(const fs::path& dir) {
    j["wall_time_seconds"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    write_text_file((dir / "manifest.json").string(), j.dump(2) + "\n");
  }
};

int run_fit(const std::string& data_path, const std::string& outcome_kind,
            const std::string& assume, int bootstrap, double level, std::uint64_t seed,
            const std::string& out_dir, const std::string& covariates, const std::string& eta,
            int starts, int n_groups, int threads, bool strict) {
  TrialDataset data = read_trial_csv(data_path, split_list(covariates));

  PipelineConfig cfg;
  cfg.outcome = outcome_kind == "binary" ? OutcomeKind::Binary : OutcomeKind::Continuous;
  cfg.eta_mode = eta == "logistic" ? EtaMode::Logistic : EtaMode::ConstantMle;
  cfg.seed = seed;
  cfg.strict = strict;
  if (starts > 0) cfg.experts.n_starts = starts;
  if (cfg.outcome == OutcomeKind::Binary) {
    for (Eigen::Index i = 0; i < data.n(); ++i)
      if (data.y[i] != 0.0 && data.y[i] != 1.0)
        raise(ErrorCode::SchemaViolation, "binary outcome column must be strictly 0/1");
  }

  std::vector<AssumptionSet> pi_sets;
  bool want_iv = false;
  if (assume == "none") {
    pi_sets.push_back({false, false});
  } else if (assume == "er") {
    pi_sets.push_back({true, false});
  } else if (assume == "mo") {
    pi_sets.push_back({false, true});
  } else if (assume == "er+mo") {
    pi_sets.push_back({true, true});
  } else if (assume == "iv") {
    want_iv = true;
  } else if (assume == "all") {
    pi_sets = {{false, false}, {true, false}, {false, true}, {true, true}};
    want_iv = true;
  } else {
    raise(ErrorCode::SchemaViolation, "unknown --assume value: " + assume);
  }

  ManifestBuilder manifest("fit", seed);
  manifest.j["options"] = {{"data", data_path},   {"outcome_kind", outcome_kind},
                           {"assume", assume},    {"bootstrap", bootstrap},
                           {"level", level},      {"eta", eta},
                           {"starts", starts},    {"n_groups", n_groups},
                           {"threads", threads},  {"strict", strict},
                           {"covariates", covariates}};

  BootstrapConfig boot;
  boot.replicates = bootstrap;
  boot.level = level;
  boot.threads = resolve_threads(threads);

  std::vector<std::pair<std::string, CaceEstimate>> results;
  for (const AssumptionSet& a : pi_sets) {
    CaceEstimate est;
    if (bootstrap > 0) {
      est = bootstrap_cace(data, a, cfg, boot, seed);
    } else {
      auto fit = fit_cace(data, a, cfg);
      est = fit.estimate;
      char buf[96];
      std::snprintf(buf, sizeof(buf), "%s: extrapolation share %.4f", estimator_label(a).c_str(),
                    fit.extrapolation_share);
      manifest.warn(buf);
      for (const auto& w : fit.warnings) manifest.warn(estimator_label(a) + ": " + w);
    }
    if (est.bootstrap && est.bootstrap->failures > 0)
      manifest.warn(estimator_label(a) + ": " + std::to_string(est.bootstrap->failures) +
                    " bootstrap replicates dropped");
    results.emplace_back(estimator_label(a), est);
  }

  if (want_iv) {
    MatchingConfig mcfg;
    mcfg.n_groups = n_groups;
    auto wald_fn = [](const TrialDataset& d) { return wald_estimator(d.z, d.t, d.y); };
    auto matching_fn = [&cfg, mcfg](const TrialDataset& d) {
      AllocationModel em = estimate_eta(d, cfg.eta_mode);
      return iv_matching_estimator(d.z, d.t, d.y, em.predict(d.X), mcfg).estimate;
    };
    std::vector<std::pair<std::string, std::function<double(const TrialDataset&)>>> ivs{
        {"iv_wald", wald_fn}, {"iv_matching", matching_fn}};
    for (const auto& [label, fn] : ivs) {
      CaceEstimate est;
      est.delta_hat = fn(data);
      est.n = data.n();
      if (bootstrap > 0) est.bootstrap = bootstrap_statistic(data, fn, boot, seed);
      if (est.bootstrap && est.bootstrap->failures > 0)
        manifest.warn(label + ": " + std::to_string(est.bootstrap->failures) +
                      " bootstrap replicates dropped");
      results.emplace_back(label, est);
    }
  }

  fs::create_directories(out_dir);
  write_text_file((fs::path(out_dir) / "estimates.json").string(),
                  estimates_json(results, "manifest.json"));
  manifest.output("estimates.json");
  manifest.write(out_dir);

  for (const auto& [label, est] : results) {
    if (est.bootstrap) {
      std::printf("%-12s delta_hat=%+.6f ci%.0f=[%+.6f, %+.6f] (n=%ld, B=%d, failed=%d)\n",
                  label.c_str(), est.delta_hat, level * 100.0, est.bootstrap->ci_low,
                  est.bootstrap->ci_high, long(est.n), est.bootstrap->replicates,
                  est.bootstrap->failures);
    } else {
      std::printf("%-12s delta_hat=%+.6f (n=%ld)\n", label.c_str(), est.delta_hat, long(est.n));
    }
  }
  return 0;
}

EstimatorKind parse_estimator(const std::string& name) {
  if (name == "pi") return EstimatorKind::Pi;
  if (name == "pi_er") return EstimatorKind::PiEr;
  if (name == "pi_mo") return EstimatorKind::PiMo;
  if (name == "pi_mo_er") return EstimatorKind::PiMoEr;
  if (name == "iv_wald") return EstimatorKind::IvWald;
  if (name == "iv_matching") return EstimatorKind::IvMatching;
  raise(ErrorCode::SchemaViolation, "unknown estimator: " + name);
}

int run_simulate(std::vector<int> scenarios, const std::string& spec, const std::string& n_list,
                 int replicates, const std::string& estimators, std::uint64_t seed,
                 const std::string& out_dir, long population_size, bool plots,
                 const std::string& emit_data, int threads) {
  if (replicates < 1) raise(ErrorCode::SchemaViolation, "--replicates must be >= 1");

  StudyConfig cfg;
  cfg.scenarios.clear();
  for (int s : scenarios) {
    if (s < 1 || s > 4) raise(ErrorCode::SchemaViolation, "--scenario must be in 1..4");
    cfg.scenarios.push_back(Scenario(s));
  }
  cfg.spec = spec == "well" ? Specification::Well : Specification::Misspecified;
  cfg.sample_sizes.clear();
  for (const std::string& tok : split_list(n_list)) {
    int n = std::atoi(tok.c_str());
    if (n < 1) raise(ErrorCode::SchemaViolation, "bad --n-list entry: " + tok);
    cfg.sample_sizes.push_back(n);
  }
  if (cfg.sample_sizes.empty()) raise(ErrorCode::SchemaViolation, "--n-list is empty");
  cfg.replicates = replicates;
  if (!estimators.empty()) {
    cfg.estimators.clear();
    for (const std::string& tok : split_list(estimators))
      cfg.estimators.push_back(parse_estimator(tok));
  }
  cfg.seed = seed;
  if (population_size < 1) raise(ErrorCode::SchemaViolation, "--population-size must be >= 1");
  cfg.population_size = population_size;
  cfg.threads = resolve_threads(threads);
  cfg.pipeline.seed = seed;

  ManifestBuilder manifest("simulate", seed);
  manifest.j["options"] = {{"scenarios", scenarios},
                           {"spec", spec},
                           {"n_list", n_list},
                           {"replicates", replicates},
                           {"estimators", estimators},
                           {"population_size", population_size},
                           {"threads", threads},
                           {"plots", plots},
                           {"emit_data", emit_data}};

  fs::create_directories(out_dir);

  if (!emit_data.empty()) {
    TrialDataset sample =
        draw_study_dataset(cfg, cfg.scenarios.front(), cfg.sample_sizes.front(), 0);
    write_trial_csv(emit_data, sample);
    manifest.output(emit_data);
  }

  StudyReport report = run_study(cfg);
  write_study_csv((fs::path(out_dir) / "study.csv").string(), report, "manifest.json");
  write_text_file((fs::path(out_dir) / "study.json").string(),
                  study_json(report, "manifest.json"));
  manifest.output("study.csv");
  manifest.output("study.json");
  for (const StudyCell& cell : report.cells)
    if (cell.failures > 0)
      manifest.warn(estimator_kind_label(cell.estimator) + " scenario " +
                    std::to_string(int(cell.scenario)) + " n=" + std::to_string(cell.n) + ": " +
                    std::to_string(cell.failures) + " replicates failed");

  if (plots) {
    // figure 1: absolute bias vs RMSE bars
    std::string fig1 =
        "# manifest: manifest.json\nscenario,spec,n,estimator,abs_bias_pct,rmse_pct\n";
    char buf[256];
    for (const StudyCell& cell : report.cells) {
      std::snprintf(buf, sizeof(buf), "%d,%s,%d,%s,%.10g,%.10g\n", int(cell.scenario),
                    spec.c_str(), cell.n, estimator_kind_label(cell.estimator).c_str(),
                    std::abs(cell.bias_pct), cell.rmse_pct);
      fig1 += buf;
    }
    write_text_file((fs::path(out_dir) / "fig1_bias_rmse.csv").string(), fig1);
    manifest.output("fig1_bias_rmse.csv");

    // figure 2: log SE against log n with the fitted slope per estimator x scenario
    std::string fig2 =
        "# manifest: manifest.json\nscenario,spec,estimator,n,log_n,log_se_pct,slope,intercept\n";
    for (Scenario sc : cfg.scenarios) {
      for (EstimatorKind est : cfg.estimators) {
        double slope = log_se_log_n_slope(report, sc, est);
        double mx = 0, my = 0;
        int cnt = 0;
        for (const StudyCell& cell : report.cells) {
          if (cell.scenario != sc || cell.estimator != est || cell.se_pct <= 0) continue;
          mx += std::log(double(cell.n));
          my += std::log(cell.se_pct);
          ++cnt;
        }
        double intercept = cnt > 0 && std::isfinite(slope)
                               ? my / cnt - slope * mx / cnt
                               : std::numeric_limits<double>::quiet_NaN();
        for (const StudyCell& cell : report.cells) {
          if (cell.scenario != sc || cell.estimator != est) continue;
          std::snprintf(buf, sizeof(buf), "%d,%s,%s,%d,%.10g,%.10g,%.10g,%.10g\n", int(sc),
                        spec.c_str(), estimator_kind_label(est).c_str(), cell.n,
                        std::log(double(cell.n)),
                        cell.se_pct > 0 ? std::log(cell.se_pct)
                                        : std::numeric_limits<double>::quiet_NaN(),
                        slope, intercept);
          fig2 += buf;
        }
      }
    }
    write_text_file((fs::path(out_dir) / "fig2_convergence.csv").string(), fig2);
    manifest.output("fig2_convergence.csv");
  }

  manifest.write(out_dir);

  for (const StudyCell& cell : report.cells)
    std::printf("scenario=%d spec=%s n=%d %-12s bias=%+7.2f%% se=%6.2f%% rmse=%6.2f%% failed=%d\n",
                int(cell.scenario), spec.c_str(), cell.n,
                estimator_kind_label(cell.estimator).c_str(), cell.bias_pct, cell.se_pct,
                cell.rmse_pct, cell.failures);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mixture-of-experts estimation of complier average causal effects"};
  app.require_subcommand(1);

  // fit
  auto* fit = app.add_subcommand("fit", "Fit CACE estimators on a trial CSV");
  std::string data_path, outcome_kind = "binary", assume = "none", out_dir = "cacemix_out";
  std::string covariates, eta = "constant";
  int bootstrap = 0, starts = 0, n_groups = 5, threads = 0;
  double level = 0.95;
  std::uint64_t seed = 1;
  bool strict = false;
  fit->add_option("--data", data_path, "input CSV with z,t,y + covariates")->required();
  fit->add_option("--outcome-kind", outcome_kind, "binary|continuous")
      ->check(CLI::IsMember({"binary", "continuous"}));
  fit->add_option("--assume", assume, "none|er|mo|er+mo|all|iv");
  fit->add_option("--bootstrap", bootstrap, "bootstrap replicates (0 = none)");
  fit->add_option("--level", level, "confidence level");
  fit->add_option("--seed", seed, "random seed");
  fit->add_option("--out", out_dir, "output directory");
  fit->add_option("--covariates", covariates, "comma list selecting covariate columns");
  fit->add_option("--eta", eta, "constant|logistic allocation model")
      ->check(CLI::IsMember({"constant", "logistic"}));
  fit->add_option("--starts", starts, "expert EM random starts");
  fit->add_option("--n-groups", n_groups, "matching groups for iv_matching");
  fit->add_option("--threads", threads, "bootstrap threads (or CACEMIX_THREADS)");
  fit->add_flag("--strict", strict, "degenerate strata become hard errors");

  // simulate
  auto* sim = app.add_subcommand("simulate", "Run the Monte Carlo study");
  std::vector<int> scenarios{1, 2, 3, 4};
  std::string spec = "mis", n_list = "2000,5000,10000", estimators, emit_data;
  std::string sim_out = "cacemix_study";
  int replicates = 1000, sim_threads = 0;
  long population_size = 1000000;
  std::uint64_t sim_seed = 1;
  bool plots = false;
  sim->add_option("--scenario", scenarios, "scenarios to run (1..4)");
  sim->add_option("--spec", spec, "well|mis")->check(CLI::IsMember({"well", "mis"}));
  sim->add_option("--n-list", n_list, "comma list of sample sizes");
  sim->add_option("--replicates", replicates, "replicates per cell");
  sim->add_option("--estimators", estimators,
                  "comma list: pi,pi_er,pi_mo,pi_mo_er,iv_wald,iv_matching");
  sim->add_option("--seed", sim_seed, "study seed");
  sim->add_option("--out", sim_out, "output directory");
  sim->add_option("--population-size", population_size, "target population size");
  sim->add_flag("--plots", plots, "emit per-figure CSVs");
  sim->add_option("--emit-data", emit_data, "write replicate 0's dataset to this CSV");
  sim->add_option("--threads", sim_threads, "replicate threads (or CACEMIX_THREADS)");

  try {
    app.parse(argc, argv);
    if (fit->parsed())
      return run_fit(data_path, outcome_kind, assume, bootstrap, level, seed, out_dir, covariates,
                     eta, starts, n_groups, threads, strict);
    return run_simulate(scenarios, spec, n_list, replicates, estimators, sim_seed, sim_out,
                        population_size, plots, emit_data, sim_threads);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help and friends
    app.exit(e);
    return 2;
  } catch (const Error& e) {
    std::fprintf(stderr, "%s\n", e.what());
    return e.code() == ErrorCode::SchemaViolation ? 2 : 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
}
