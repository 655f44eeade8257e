// Benchmark: replicate-parallel bootstrap and study loops against the serial
// path, verifying that results are identical before timing them.
#include <chrono>
#include <cmath>
#include <cstdio>

#include "cacemix/estimators.hpp"
#include "cacemix/simgen.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

using namespace cacemix;
using clock_type = std::chrono::steady_clock;

namespace {

double seconds_since(clock_type::time_point t0) {
  return std::chrono::duration<double>(clock_type::now() - t0).count();
}

}  // namespace

int main(int argc, char** argv) {
  int threads = 0;
#ifdef _OPENMP
  threads = omp_get_max_threads();
#endif
  if (argc > 1) threads = std::atoi(argv[1]);
  if (threads < 2) {
    std::printf("single hardware thread detected; timing the serial path only\n");
    threads = 1;
  }

  SimulationParams params = build_params(42, Scenario::S4, Specification::Well);
  PopulationWithTruth pop = draw_population(params, 50000, 7);
  TrialDataset data = misspecify_view(pop, Specification::Well);
  std::vector<Eigen::Index> rows;
  for (Eigen::Index i = 0; i < 4000; ++i) rows.push_back(i * 12);
  TrialDataset sample = data.subset(rows);

  PipelineConfig cfg;
  cfg.seed = 11;
  BootstrapConfig boot;
  boot.replicates = 60;
  boot.level = 0.95;

  std::printf("bootstrap: %d replicates at n=%ld\n", boot.replicates, long(sample.n()));
  boot.threads = 1;
  auto t0 = clock_type::now();
  CaceEstimate serial = bootstrap_cace(sample, {true, true}, cfg, boot, 5);
  double t_serial = seconds_since(t0);
  std::printf("  serial   (1 thread ): %6.2f s\n", t_serial);

  boot.threads = threads;
  t0 = clock_type::now();
  CaceEstimate parallel = bootstrap_cace(sample, {true, true}, cfg, boot, 5);
  double t_parallel = seconds_since(t0);
  std::printf("  parallel (%d threads): %6.2f s  speedup %.2fx\n", threads, t_parallel,
              t_serial / t_parallel);

  bool identical = serial.bootstrap->samples.size() == parallel.bootstrap->samples.size() &&
                   serial.bootstrap->ci_low == parallel.bootstrap->ci_low &&
                   serial.bootstrap->ci_high == parallel.bootstrap->ci_high;
  for (size_t i = 0; identical && i < serial.bootstrap->samples.size(); ++i)
    identical = serial.bootstrap->samples[i] == parallel.bootstrap->samples[i];
  std::printf("  results identical: %s\n", identical ? "yes" : "NO");

  StudyConfig study;
  study.scenarios = {Scenario::S1};
  study.sample_sizes = {2000};
  study.replicates = 12;
  study.population_size = 50000;
  study.estimators = {EstimatorKind::Pi, EstimatorKind::IvWald};
  study.seed = 3;

  std::printf("study: %d replicates x %zu estimators at n=%d\n", study.replicates,
              study.estimators.size(), study.sample_sizes[0]);
  study.threads = 1;
  t0 = clock_type::now();
  StudyReport rs = run_study(study);
  double s_serial = seconds_since(t0);
  std::printf("  serial   (1 thread ): %6.2f s\n", s_serial);

  study.threads = threads;
  t0 = clock_type::now();
  StudyReport rp = run_study(study);
  double s_parallel = seconds_since(t0);
  std::printf("  parallel (%d threads): %6.2f s  speedup %.2fx\n", threads, s_parallel,
              s_serial / s_parallel);

  bool same = rs.cells.size() == rp.cells.size();
  for (size_t c = 0; same && c < rs.cells.size(); ++c) {
    same = rs.cells[c].estimates.size() == rp.cells[c].estimates.size();
    for (size_t i = 0; same && i < rs.cells[c].estimates.size(); ++i)
      same = rs.cells[c].estimates[i] == rp.cells[c].estimates[i];
  }
  std::printf("  results identical: %s\n", same ? "yes" : "NO");
  return identical && same ? 0 : 1;
}
