#include "covertpath/cli.hpp"

#include <chrono>
#include <ctime>
#include <filesystem>
#include <sstream>

#include <CLI11.hpp>
#include <Eigen/Core>
#include <fmt/format.h>
#include <json.hpp>

#include "covertpath/experiment.hpp"
#include "covertpath/scenario_gen.hpp"

namespace covertpath {

namespace {

namespace fs = std::filesystem;

constexpr std::string_view kVersion = "0.1.0";

// Non-deterministic run facts live here so that primary outputs stay byte-stable.
class Sidecar {
 public:
  Sidecar(std::string command, int argc, const char* const* argv)
      : command_(std::move(command)), start_(std::chrono::steady_clock::now()) {
    for (int i = 0; i < argc; ++i) args_.emplace_back(argv[i]);
    const std::time_t now = std::time(nullptr);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
    started_ = buf;
  }

  void write(const std::string& path, nlohmann::json extra = nlohmann::json::object()) const {
    nlohmann::json j = std::move(extra);
    j["command"] = command_;
    j["argv"] = args_;
    j["prng"] = std::string(kPrngName);
    j["version"] = std::string(kVersion);
    j["eigen"] = fmt::format("{}.{}.{}", EIGEN_WORLD_VERSION, EIGEN_MAJOR_VERSION,
                             EIGEN_MINOR_VERSION);
    j["compiler"] = __VERSION__;
    j["started_utc"] = started_;
    j["wall_clock_seconds"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    write_file(path, j.dump(2) + "\n");
  }

 private:
  std::string command_;
  std::vector<std::string> args_;
  std::string started_;
  std::chrono::steady_clock::time_point start_;
};

class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

Aggregator parse_aggregator(const std::string& s) {
  const auto a = aggregator_from_string(s);
  if (!a) throw InputError(fmt::format("unknown aggregator '{}'", s));
  return *a;
}

std::vector<Algo> parse_algos(const std::string& s) {
  std::vector<Algo> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    const auto a = algo_from_string(item);
    if (!a) throw InputError(fmt::format("unknown algorithm '{}'", item));
    out.push_back(*a);
  }
  if (out.empty()) throw InputError("no algorithms given");
  return out;
}

Scenario load_scenario(const std::string& path) { return parse_scenario(read_file(path)); }

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir))
    throw InputError(fmt::format("cannot create output directory '{}'", dir));
}

struct GenArgs {
  std::string config_path;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<int> nodes;
  std::optional<int> k_max;
  std::optional<int> wardens;
  std::optional<double> tau;
  std::optional<double> feasible_fraction;
  std::string slots;
};

int cmd_gen(const GenArgs& a, const Sidecar& meta, std::ostream& out) {
  GenConfig cfg = a.config_path.empty() ? GenConfig{} : parse_config(read_file(a.config_path));
  if (a.seed) cfg.seed = *a.seed;
  if (a.nodes) cfg.n_nodes = *a.nodes;
  if (a.k_max) cfg.k_max = *a.k_max;
  if (a.wardens) cfg.n_wardens = *a.wardens;
  if (a.tau) cfg.tau = *a.tau;
  if (a.feasible_fraction) cfg.feasible_fraction = *a.feasible_fraction;
  if (!a.slots.empty()) {
    int lo = 0, hi = 0;
    char colon = 0;
    std::istringstream in(a.slots);
    if (!(in >> lo >> colon >> hi) || colon != ':' || !in.eof())
      throw InputError(fmt::format("--slots expects LO:HI, got '{}'", a.slots));
    cfg.slots_min = lo;
    cfg.slots_max = hi;
  }
  const Scenario s = generate(cfg);
  write_file(a.out, serialize(s));
  meta.write(a.out + ".meta.json");

  int feasible = 0;
  for (const auto& n : s.nodes) {
    for (const auto& c : n.out_channels) feasible += covert_feasible(c, s.tau) ? 1 : 0;
  }
  const int channels = s.channel_count();
  out << fmt::format("nodes {}\nchannels {}\nfeasible_fraction {:.4f}\nwardens {}\n",
                     s.node_count(), channels,
                     channels ? static_cast<double>(feasible) / channels : 0.0, s.wardens.size());
  return kExitOk;
}

int cmd_oracle(const std::string& path, const std::string& agg, int max_hops, bool no_prune,
               const std::string& out_path, std::ostream& out, std::ostream& err) {
  const Scenario s = load_scenario(path);
  SearchOptions opt;
  opt.aggregator = parse_aggregator(agg);
  opt.max_hops = max_hops;
  opt.prune = !no_prune;
  const auto best = brute_force_optimum(s, opt);
  if (!best) {
    err << "infeasible: no covert path from alice to bob\n";
    return kExitInfeasible;
  }
  const std::string text = optimum_to_json(*best, false);
  if (!out_path.empty()) write_file(out_path, text);
  out << text;
  err << fmt::format("nodes_expanded {}\n", best->nodes_expanded);
  return kExitOk;
}

struct TrainArgs {
  std::string scenario;
  std::string algo = "dsac";
  int steps = 100000;
  std::uint64_t seed = 1;
  std::string out_dir;
  std::string aggregator = "sum";
  int eval_every = 1000;
  int eval_episodes = 20;
};

TrainConfig train_config(int steps, const std::string& aggregator, int eval_every,
                         int eval_episodes) {
  if (steps <= 0) throw InputError("--steps must be positive");
  TrainConfig cfg;
  cfg.total_steps = steps;
  cfg.env.aggregator = parse_aggregator(aggregator);
  cfg.eval_every = eval_every;
  cfg.eval_episodes = eval_episodes;
  return cfg;
}

int cmd_train(const TrainArgs& a, const Sidecar& meta, std::ostream& out, std::ostream& err) {
  const auto algo = algo_from_string(a.algo);
  if (!algo) throw InputError(fmt::format("unknown algorithm '{}'", a.algo));
  const TrainConfig cfg = train_config(a.steps, a.aggregator, a.eval_every, a.eval_episodes);
  const Scenario s = load_scenario(a.scenario);
  ensure_dir(a.out_dir);
  const auto best = brute_force_optimum(s, {cfg.env.aggregator});
  if (!best) {
    err << "infeasible: no covert path from alice to bob\n";
    return kExitInfeasible;
  }
  const double oracle = best->selection.report.aggregate;
  const RunResult r = run_one(s, *algo, a.seed, cfg, oracle);
  if (r.failed && r.report.steps_done == 0) {
    err << "training failed: " << r.error << "\n";
    return kExitInput;
  }

  const std::string stem =
      (fs::path(a.out_dir) / fmt::format("train_{}_{}", to_string(*algo), a.seed)).string();
  write_file(stem + ".csv", train_csv(r.report));
  if (r.report.best) write_file(stem + "_best.json", serialize(*r.report.best));
  write_file(stem + "_final.json", serialize(r.report.final_checkpoint));
  meta.write(stem + ".meta.json", {{"aborted", r.report.aborted}});

  if (r.report.aborted) {
    err << "aborted: " << r.report.abort_reason << "\n";
    return kExitDiverged;
  }
  out << fmt::format("final_eval_return {}\noracle {}\noracle_ratio {}\n", r.final_return, oracle,
                     r.final_ratio);
  return kExitOk;
}

int cmd_eval(const std::string& checkpoint, const std::string& scenario, int episodes,
             const std::string& agg, std::ostream& out) {
  AgentCheckpoint ck;
  try {
    ck = parse_checkpoint(read_file(checkpoint));
  } catch (const ContractError& e) {
    throw InputError(e.what());
  }
  const Scenario s = load_scenario(scenario);
  EnvConfig env;
  env.aggregator = parse_aggregator(agg);
  EvalReport r;
  try {
    r = evaluate(ck, s, episodes, env);
  } catch (const ContractError& e) {
    throw InputError(e.what());
  }
  nlohmann::json j;
  j["episodes"] = r.episodes;
  j["mean_return"] = r.mean_return;
  j["success_rate"] = r.success_rate;
  j["mean_accuracy"] = r.mean_accuracy;
  j["modal_path"] = nlohmann::json::array();
  for (const auto& c : r.modal_path) j["modal_path"].push_back(to_string(c));
  out << j.dump(2) << "\n";
  return kExitOk;
}

struct CompareArgs {
  std::string scenario;
  std::string algos = "sac,dsac";
  std::string seeds = "1..5";
  int steps = 100000;
  std::string out_dir;
  std::string aggregator = "sum";
  int eval_every = 1000;
  int eval_episodes = 20;
};

int cmd_compare(const CompareArgs& a, const Sidecar& meta, std::ostream& out, std::ostream& err) {
  const std::vector<Algo> algos = parse_algos(a.algos);
  std::vector<std::uint64_t> seeds;
  try {
    seeds = parse_seed_list(a.seeds);
  } catch (const std::invalid_argument& e) {
    throw InputError(e.what());
  }
  const TrainConfig cfg = train_config(a.steps, a.aggregator, a.eval_every, a.eval_episodes);
  const Scenario s = load_scenario(a.scenario);
  ensure_dir(a.out_dir);
  if (!brute_force_optimum(s, {cfg.env.aggregator})) {
    err << "infeasible: no covert path from alice to bob\n";
    return kExitInfeasible;
  }
  const int workers = worker_count();
  const CompareResult r = run_compare(s, algos, seeds, cfg, workers);
  const fs::path dir(a.out_dir);
  write_file((dir / "curves.csv").string(), curves_csv(r));
  write_file((dir / "summary.csv").string(), summary_csv(r));
  nlohmann::json failures = nlohmann::json::array();
  for (const RunResult& run : r.runs) {
    if (run.failed)
      failures.push_back({{"algo", std::string(to_string(run.algo))}, {"seed", run.seed},
                          {"error", run.error}});
  }
  meta.write((dir / "compare.meta.json").string(), {{"workers", workers}, {"failures", failures}});

  out << fmt::format("{:<6}{:>6}{:>8}{:>14}{:>14}{:>12}{:>12}{:>12}\n", "algo", "runs", "failed",
                     "steps_to_80", "final_return", "ratio", "accuracy", "oracle");
  for (const SummaryRow& row : r.summary) {
    out << fmt::format("{:<6}{:>6}{:>8}{:>14}{:>14.4f}{:>12.4f}{:>12.4f}{:>12.4f}\n",
                       to_string(row.algo), row.runs, row.failed,
                       row.median_steps_to_80 ? fmt::format("{}", *row.median_steps_to_80) : "-",
                       row.median_final_return, row.median_return_ratio, row.mean_accuracy,
                       row.oracle);
  }
  for (const RunResult& run : r.runs) {
    if (run.failed) err << fmt::format("{} seed {} failed: {}\n", to_string(run.algo), run.seed, run.error);
  }
  return r.any_failed() ? kExitDiverged : kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Covert channel path selection: generation, exact search, SAC and DSAC training"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen", "generate a scenario");
  g->add_option("--config", gen.config_path, "generator config JSON");
  g->add_option("--seed", gen.seed, "generator seed");
  g->add_option("--out", gen.out, "output scenario file")->required();
  g->add_option("--nodes", gen.nodes, "node count");
  g->add_option("--k-max", gen.k_max, "slot bound per node");
  g->add_option("--slots", gen.slots, "channels per node as LO:HI");
  g->add_option("--wardens", gen.wardens, "warden count");
  g->add_option("--tau", gen.tau, "covert threshold");
  g->add_option("--feasible-fraction", gen.feasible_fraction, "target feasible channel share");

  std::string oracle_path, oracle_agg = "sum", oracle_out;
  int max_hops = 0;
  bool no_prune = false;
  auto* o = app.add_subcommand("oracle", "exact optimum by path enumeration");
  o->add_option("scenario", oracle_path, "scenario file")->required();
  o->add_option("--aggregator", oracle_agg, "sum or min");
  o->add_option("--max-hops", max_hops, "hop bound (0 = n - 1)");
  o->add_flag("--no-prune", no_prune, "disable branch and bound");
  o->add_option("--out", oracle_out, "also write the result here");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "train one agent");
  t->add_option("scenario", tr.scenario, "scenario file")->required();
  t->add_option("--algo", tr.algo, "sac or dsac");
  t->add_option("--steps", tr.steps, "environment steps");
  t->add_option("--seed", tr.seed, "run seed");
  t->add_option("--out-dir", tr.out_dir, "output directory")->required();
  t->add_option("--aggregator", tr.aggregator, "sum or min");
  t->add_option("--eval-every", tr.eval_every, "steps between evaluations");
  t->add_option("--eval-episodes", tr.eval_episodes, "episodes per evaluation");

  std::string ev_ckpt, ev_scenario, ev_agg = "sum";
  int ev_episodes = 20;
  auto* e = app.add_subcommand("eval", "greedy evaluation of a checkpoint");
  e->add_option("checkpoint", ev_ckpt, "checkpoint file")->required();
  e->add_option("scenario", ev_scenario, "scenario file")->required();
  e->add_option("--episodes", ev_episodes, "episodes");
  e->add_option("--aggregator", ev_agg, "sum or min");

  CompareArgs cmp;
  auto* c = app.add_subcommand("compare", "paired multi-seed comparison");
  c->add_option("scenario", cmp.scenario, "scenario file")->required();
  c->add_option("--algos", cmp.algos, "comma separated list");
  c->add_option("--seeds", cmp.seeds, "A..B or a comma separated list");
  c->add_option("--steps", cmp.steps, "environment steps per run");
  c->add_option("--out-dir", cmp.out_dir, "output directory")->required();
  c->add_option("--aggregator", cmp.aggregator, "sum or min");
  c->add_option("--eval-every", cmp.eval_every, "steps between evaluations");
  c->add_option("--eval-episodes", cmp.eval_episodes, "episodes per evaluation");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& ex) {
    err << ex.what() << "\n";
    return kExitInput;
  }

  const std::string name = app.get_subcommands().front()->get_name();
  const Sidecar meta(name, argc, argv);
  try {
    if (*g) return cmd_gen(gen, meta, out);
    if (*o) return cmd_oracle(oracle_path, oracle_agg, max_hops, no_prune, oracle_out, out, err);
    if (*t) return cmd_train(tr, meta, out, err);
    if (*e) return cmd_eval(ev_ckpt, ev_scenario, ev_episodes, ev_agg, out);
    return cmd_compare(cmp, meta, out, err);
  } catch (const GenerationError& ex) {
    err << "generation failed: " << ex.what() << "\n";
    return kExitInfeasible;
  } catch (const SetupError& ex) {
    err << "infeasible: " << ex.what() << "\n";
    return kExitInfeasible;
  } catch (const ParseError& ex) {
    err << "parse error at " << ex.path() << ": " << ex.what() << "\n";
    return kExitInput;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << "\n";
    return kExitInput;
  }
}

}  // namespace covertpath
