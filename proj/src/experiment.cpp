#include "covertpath/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cstdlib>
#include <limits>
#include <thread>

#include <fmt/format.h>

namespace covertpath {

bool CompareResult::any_failed() const {
  return std::any_of(runs.begin(), runs.end(), [](const RunResult& r) { return r.failed; });
}

int worker_count() {
  if (const char* env = std::getenv("COVERTPATH_THREADS")) {
    int n = 0;
    const char* end = env + std::char_traits<char>::length(env);
    if (std::from_chars(env, end, n).ptr == end && n >= 1) return n;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

double oracle_value(const Scenario& scenario, Aggregator aggregator) {
  const auto best = brute_force_optimum(scenario, {aggregator});
  if (!best) throw SetupError("scenario has no covert path from alice to bob");
  return best->selection.report.aggregate;
}

RunResult run_one(const Scenario& scenario, Algo algo, std::uint64_t seed,
                  const TrainConfig& config, double oracle, const TrainHooks& hooks) {
  RunResult r;
  r.algo = algo;
  r.seed = seed;
  try {
    r.report = train(scenario, algo, config, seed, hooks);
  } catch (const std::exception& e) {
    r.failed = true;
    r.error = e.what();
    return r;
  }
  if (r.report.aborted) {
    r.failed = true;
    r.error = r.report.abort_reason;
  }
  r.final_return = r.report.final_eval_return();
  r.final_accuracy = r.report.final_eval_accuracy();
  r.final_ratio = oracle != 0.0 ? r.final_return / oracle : 0.0;
  r.steps_to_80 = steps_to_threshold(r.report.evals, 0.8 * oracle);
  return r;
}

CompareResult run_compare(const Scenario& scenario, const std::vector<Algo>& algos,
                          const std::vector<std::uint64_t>& seeds, const TrainConfig& config,
                          int workers, const HookFactory& hooks) {
  if (algos.empty() || seeds.empty()) throw ContractError("compare needs algos and seeds");
  CompareResult out;
  out.oracle = oracle_value(scenario, config.env.aggregator);

  std::vector<std::pair<Algo, std::uint64_t>> jobs;
  for (Algo a : algos) {
    for (std::uint64_t s : seeds) jobs.emplace_back(a, s);
  }
  std::sort(jobs.begin(), jobs.end());
  jobs.erase(std::unique(jobs.begin(), jobs.end()), jobs.end());
  out.runs.resize(jobs.size());

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      const auto [algo, seed] = jobs[i];
      const TrainHooks h = hooks ? hooks(algo, seed) : TrainHooks{};
      out.runs[i] = run_one(scenario, algo, seed, config, out.oracle, h);
    }
  };
  const int n = std::clamp(workers, 1, static_cast<int>(jobs.size()));
  if (n == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int i = 0; i < n; ++i) pool.emplace_back(worker);
  }
  out.summary = summarize(out.runs, out.oracle);
  return out;
}

double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

std::optional<double> median_or_inf(std::vector<std::optional<double>> values) {
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> v;
  for (const auto& x : values) v.push_back(x ? *x : inf);
  const double m = median(std::move(v));
  if (std::isinf(m) || std::isnan(m)) return std::nullopt;
  return m;
}

std::vector<SummaryRow> summarize(const std::vector<RunResult>& runs, double oracle) {
  std::vector<SummaryRow> rows;
  for (Algo algo : {Algo::Sac, Algo::Dsac}) {
    SummaryRow row;
    row.algo = algo;
    row.oracle = oracle;
    std::vector<std::optional<double>> steps;
    std::vector<double> returns, ratios;
    double acc = 0.0;
    for (const RunResult& r : runs) {
      if (r.algo != algo) continue;
      ++row.runs;
      if (r.failed) {
        ++row.failed;
        continue;
      }
      steps.push_back(r.steps_to_80 ? std::optional<double>(*r.steps_to_80) : std::nullopt);
      returns.push_back(r.final_return);
      ratios.push_back(r.final_ratio);
      acc += r.final_accuracy;
    }
    if (row.runs == 0) continue;
    const int ok = row.runs - row.failed;
    if (ok > 0) {
      row.median_steps_to_80 = median_or_inf(steps);
      row.median_final_return = median(returns);
      row.median_return_ratio = median(ratios);
      row.mean_accuracy = acc / ok;
    }
    rows.push_back(row);
  }
  return rows;
}

std::string curves_csv(const CompareResult& result) {
  std::string out = "algo,seed,step,eval_return,eval_accuracy,success_rate,return_ratio\n";
  for (const RunResult& r : result.runs) {
    for (const EvalRecord& e : r.report.evals) {
      out += fmt::format("{},{},{},{},{},{},{}\n", to_string(r.algo), r.seed, e.step, e.eval_return,
                         e.eval_accuracy, e.success_rate,
                         result.oracle != 0.0 ? e.eval_return / result.oracle : 0.0);
    }
  }
  return out;
}

std::string summary_csv(const CompareResult& result) {
  std::string out =
      "algo,runs,failed,median_steps_to_80,median_final_return,median_return_ratio,"
      "mean_accuracy,oracle\n";
  for (const SummaryRow& s : result.summary) {
    out += fmt::format("{},{},{},{},{},{},{},{}\n", to_string(s.algo), s.runs, s.failed,
                       s.median_steps_to_80 ? fmt::format("{}", *s.median_steps_to_80) : "",
                       s.median_final_return, s.median_return_ratio, s.mean_accuracy, s.oracle);
  }
  return out;
}

namespace {

std::uint64_t parse_u64(std::string_view s) {
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty())
    throw std::invalid_argument(fmt::format("'{}' is not a seed", s));
  return v;
}

}  // namespace

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> out;
  if (const auto dots = text.find(".."); dots != std::string::npos) {
    const std::uint64_t lo = parse_u64(std::string_view(text).substr(0, dots));
    const std::uint64_t hi = parse_u64(std::string_view(text).substr(dots + 2));
    if (hi < lo) throw std::invalid_argument("seed range is empty");
    for (std::uint64_t s = lo; s <= hi; ++s) out.push_back(s);
    return out;
  }
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t comma = std::min(text.find(',', start), text.size());
    out.push_back(parse_u64(std::string_view(text).substr(start, comma - start)));
    start = comma + 1;
  }
  return out;
}

}  // namespace covertpath
