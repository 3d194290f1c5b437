#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "covertpath/agents.hpp"
#include "covertpath/oracle.hpp"

namespace covertpath {

struct RunResult {
  Algo algo = Algo::Sac;
  std::uint64_t seed = 0;
  bool failed = false;
  std::string error;
  TrainReport report;
  std::optional<int> steps_to_80;
  double final_return = 0.0;
  double final_ratio = 0.0;
  double final_accuracy = 0.0;
};

struct SummaryRow {
  Algo algo = Algo::Sac;
  int runs = 0;
  int failed = 0;
  // nullopt when the median run never sustained 80% of the oracle.
  std::optional<double> median_steps_to_80;
  double median_final_return = 0.0;
  double median_return_ratio = 0.0;
  double mean_accuracy = 0.0;
  double oracle = 0.0;
};

struct CompareResult {
  double oracle = 0.0;
  std::vector<RunResult> runs;  // sorted by (algo, seed)
  std::vector<SummaryRow> summary;

  bool any_failed() const;
};

// Builds per-run hooks; called once per (algo, seed) on the worker that runs it.
using HookFactory = std::function<TrainHooks(Algo, std::uint64_t)>;

/// Worker count from COVERTPATH_THREADS, else the hardware concurrency (>= 1).
int worker_count();

double oracle_value(const Scenario& scenario, Aggregator aggregator);

RunResult run_one(const Scenario& scenario, Algo algo, std::uint64_t seed,
                  const TrainConfig& config, double oracle, const TrainHooks& hooks = {});

/// Trains every (algo, seed) pair on `workers` threads. Runs share nothing; the
/// result does not depend on the worker count.
CompareResult run_compare(const Scenario& scenario, const std::vector<Algo>& algos,
                          const std::vector<std::uint64_t>& seeds, const TrainConfig& config,
                          int workers, const HookFactory& hooks = {});

std::vector<SummaryRow> summarize(const std::vector<RunResult>& runs, double oracle);

// Median with nullopt treated as +infinity.
std::optional<double> median_or_inf(std::vector<std::optional<double>> values);
double median(std::vector<double> values);

// algo,seed,step,eval_return,eval_accuracy,success_rate,return_ratio
std::string curves_csv(const CompareResult& result);
// algo,runs,failed,median_steps_to_80,median_final_return,median_return_ratio,mean_accuracy,oracle
std::string summary_csv(const CompareResult& result);

// "1..5" or "1,3,7"
std::vector<std::uint64_t> parse_seed_list(const std::string& text);

}  // namespace covertpath
