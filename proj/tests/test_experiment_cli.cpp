#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <locale>
#include <sstream>

#include <json.hpp>

#include "covertpath/cli.hpp"
#include "covertpath/experiment.hpp"
#include "covertpath/scenario_gen.hpp"
#include "fixtures.hpp"

using namespace covertpath;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = 0;
  std::string out;
  std::string err;
};

Run cli(std::vector<std::string> args) {
  args.insert(args.begin(), "covertpath");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / "covertpath_cli_test" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string write_scenario(const fs::path& dir, const std::string& name, const Scenario& s) {
  const std::string path = (dir / name).string();
  write_file(path, serialize(s));
  return path;
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

std::vector<std::string> split(const std::string& row) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = row.find(',', start);
    out.push_back(row.substr(start, comma - start));
    if (comma == std::string::npos) return out;
    start = comma + 1;
  }
}

}  // namespace

TEST_CASE("gen is byte-stable and feeds the oracle") {
  const fs::path dir = scratch("gen");
  const std::string a = (dir / "a.json").string();
  const std::string b = (dir / "b.json").string();
  const Run first = cli({"gen", "--seed", "42", "--out", a});
  REQUIRE(first.code == kExitOk);
  CHECK(first.out.find("nodes 20") != std::string::npos);
  CHECK(first.out.find("wardens 3") != std::string::npos);
  CHECK(cli({"gen", "--seed", "42", "--out", b}).code == kExitOk);
  CHECK(read_file(a) == read_file(b));
  CHECK(fs::exists(a + ".meta.json"));
  CHECK(cli({"oracle", a}).code == kExitOk);

  const std::string tiny = (dir / "tiny.json").string();
  REQUIRE(cli({"gen", "--nodes", "2", "--slots", "1:1", "--out", tiny}).code == kExitOk);
  const Scenario s = parse_scenario(read_file(tiny));
  CHECK(s.node_count() == 2);
  for (const auto& n : s.nodes) CHECK(n.out_channels.size() == 1);

  CHECK(cli({"gen", "--nodes", "1", "--out", tiny}).code != kExitOk);
  CHECK(cli({"gen", "--slots", "3-4", "--out", tiny}).code == kExitInput);
}

TEST_CASE("gen reads a config file and lets flags override it") {
  const fs::path dir = scratch("gen_config");
  GenConfig cfg;
  cfg.n_nodes = 7;
  cfg.seed = 5;
  const std::string cfg_path = (dir / "cfg.json").string();
  write_file(cfg_path, serialize(cfg));
  const std::string out = (dir / "s.json").string();
  REQUIRE(cli({"gen", "--config", cfg_path, "--out", out}).code == kExitOk);
  CHECK(read_file(out) == serialize(generate(cfg)));
  REQUIRE(cli({"gen", "--config", cfg_path, "--seed", "6", "--out", out}).code == kExitOk);
  cfg.seed = 6;
  CHECK(read_file(out) == serialize(generate(cfg)));
}

TEST_CASE("oracle exit codes and triangle optimum") {
  const fs::path dir = scratch("oracle");
  const Run tri = cli({"oracle", write_scenario(dir, "tri.json", covertpath::testing::triangle())});
  REQUIRE(tri.code == kExitOk);
  const auto j = nlohmann::json::parse(tri.out);
  CHECK(j["aggregate"].get<double>() == 5.0);
  CHECK(j["path"] == nlohmann::json::array({"0:1", "1:0"}));
  CHECK_FALSE(j.contains("nodes_expanded"));

  const Run min = cli({"oracle", (dir / "tri.json").string(), "--aggregator", "min"});
  CHECK(nlohmann::json::parse(min.out)["aggregate"].get<double>() == 2.0);

  Scenario blocked = covertpath::testing::triangle();
  for (auto& n : blocked.nodes) {
    for (auto& c : n.out_channels) c.covert_lo = 0.9;
  }
  CHECK(cli({"oracle", write_scenario(dir, "blocked.json", blocked)}).code == kExitInfeasible);

  write_file((dir / "broken.json").string(), "{\"nodes\": [");
  CHECK(cli({"oracle", (dir / "broken.json").string()}).code == kExitInput);
  CHECK(cli({"oracle", (dir / "missing.json").string()}).code == kExitInput);
  CHECK(cli({"oracle", (dir / "tri.json").string(), "--aggregator", "max"}).code == kExitInput);
}

TEST_CASE("oracle output does not depend on pruning") {
  const fs::path dir = scratch("oracle_prune");
  const std::string path = write_scenario(dir, "s42.json", generate(GenConfig{}));
  const Run pruned = cli({"oracle", path});
  const Run full = cli({"oracle", path, "--no-prune"});
  REQUIRE(pruned.code == kExitOk);
  REQUIRE(full.code == kExitOk);
  CHECK(pruned.out == full.out);
}

TEST_CASE("train writes csv, checkpoints and prints the oracle ratio") {
  const fs::path dir = scratch("train");
  GenConfig g;
  g.n_nodes = 6;
  g.seed = 2;
  const std::string path = write_scenario(dir, "s.json", generate(g));
  const std::string out = (dir / "out").string();
  for (const std::string algo : {"sac", "dsac"}) {
    const Run r = cli({"train", path, "--algo", algo, "--steps", "1500", "--seed", "3",
                       "--out-dir", out, "--eval-every", "500", "--eval-episodes", "2"});
    REQUIRE(r.code == kExitOk);
    const std::string stem = out + "/train_" + algo + "_3";
    const auto rows = lines(read_file(stem + ".csv"));
    CHECK(rows.front() ==
          "step,episode,episode_return,success,critic1_loss,critic2_loss,actor_loss,alpha_ent,"
          "eval_return,eval_accuracy");
    std::vector<int> eval_steps;
    for (std::size_t i = 1; i < rows.size(); ++i) {
      const auto cols = split(rows[i]);
      REQUIRE(cols.size() == 10);
      if (!cols[8].empty()) eval_steps.push_back(std::stoi(cols[0]));
    }
    CHECK(eval_steps == std::vector<int>{500, 1000, 1500});
    CHECK(fs::exists(stem + "_best.json"));
    CHECK(fs::exists(stem + "_final.json"));
    CHECK(fs::exists(stem + ".meta.json"));

    std::istringstream in(r.out);
    std::string key;
    double final_return = 0, oracle = 0, ratio = 0;
    in >> key >> final_return >> key >> oracle >> key >> ratio;
    CHECK(oracle == doctest::Approx(oracle_value(parse_scenario(read_file(path)), Aggregator::Sum)));
    CHECK(ratio == doctest::Approx(final_return / oracle));
    const auto last = split(rows.back());
    CHECK(std::stod(last[8]) == doctest::Approx(final_return));

    const Run ev = cli({"eval", stem + "_best.json", path, "--episodes", "2"});
    CHECK(ev.code == kExitOk);
    CHECK(nlohmann::json::parse(ev.out).contains("modal_path"));
  }
  const Run bad = cli({"eval", out + "/train_sac_3_best.json",
                       write_scenario(dir, "tri.json", covertpath::testing::triangle())});
  CHECK(bad.code == kExitInput);
  CHECK(cli({"train", path, "--algo", "ppo", "--out-dir", out}).code == kExitInput);
}

TEST_CASE("compare summarizes paired runs deterministically") {
  const fs::path dir = scratch("compare");
  GenConfig g;
  g.n_nodes = 6;
  g.seed = 8;
  const Scenario s = generate(g);
  const std::string path = write_scenario(dir, "s.json", s);
  const std::vector<std::string> args = {"compare", path, "--algos", "sac,dsac", "--seeds", "4",
                                         "--steps", "1200", "--eval-every", "300",
                                         "--eval-episodes", "2", "--out-dir"};
  auto with_out = [&](const std::string& out) {
    auto a = args;
    a.push_back(out);
    return a;
  };
  const Run r = cli(with_out((dir / "a").string()));
  REQUIRE(r.code == kExitOk);
  REQUIRE(cli(with_out((dir / "b").string())).code == kExitOk);
  CHECK(read_file((dir / "a/curves.csv").string()) == read_file((dir / "b/curves.csv").string()));
  CHECK(read_file((dir / "a/summary.csv").string()) == read_file((dir / "b/summary.csv").string()));

  const auto rows = lines(read_file((dir / "a/summary.csv").string()));
  REQUIRE(rows.size() == 3);
  const double oracle = nlohmann::json::parse(cli({"oracle", path}).out)["aggregate"].get<double>();
  const auto curves = lines(read_file((dir / "a/curves.csv").string()));
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto cols = split(rows[i]);
    CHECK(cols[1] == "1");
    CHECK(cols[2] == "0");
    CHECK(std::stod(cols[7]) == oracle);
    // With one seed the medians are that run's final values.
    std::string last_eval;
    for (const auto& c : curves) {
      if (c.rfind(cols[0] + ",4,1200,", 0) == 0) last_eval = c;
    }
    REQUIRE_FALSE(last_eval.empty());
    CHECK(std::stod(split(last_eval)[3]) == std::stod(cols[4]));
    CHECK(std::stod(split(last_eval)[4]) == std::stod(cols[6]));
  }
  CHECK(split(rows[1])[0] == "sac");
  CHECK(split(rows[2])[0] == "dsac");
}

TEST_CASE("compare results do not depend on the worker count") {
  GenConfig g;
  g.n_nodes = 5;
  g.seed = 1;
  const Scenario s = generate(g);
  TrainConfig cfg;
  cfg.total_steps = 400;
  cfg.eval_every = 200;
  cfg.eval_episodes = 1;
  cfg.sac.hidden = {16, 16};
  cfg.sac.batch = 16;
  cfg.sac.warmup_steps = 50;
  const auto one = run_compare(s, {Algo::Sac, Algo::Dsac}, {1, 2}, cfg, 1);
  const auto many = run_compare(s, {Algo::Dsac, Algo::Sac}, {2, 1}, cfg, 3);
  CHECK(curves_csv(one) == curves_csv(many));
  CHECK(summary_csv(one) == summary_csv(many));
  CHECK(one.runs.size() == 4);
}

TEST_CASE("worker count honours COVERTPATH_THREADS") {
  ::setenv("COVERTPATH_THREADS", "3", 1);
  CHECK(worker_count() == 3);
  ::setenv("COVERTPATH_THREADS", "zero", 1);
  CHECK(worker_count() >= 1);
  ::unsetenv("COVERTPATH_THREADS");
  CHECK(worker_count() >= 1);
}

TEST_CASE("seed lists and medians") {
  CHECK(parse_seed_list("1..5") == std::vector<std::uint64_t>{1, 2, 3, 4, 5});
  CHECK(parse_seed_list("7,3") == std::vector<std::uint64_t>{7, 3});
  CHECK_THROWS(parse_seed_list("5..1"));
  CHECK_THROWS(parse_seed_list("a"));
  CHECK(median({3.0, 1.0, 2.0}) == 2.0);
  CHECK(median({4.0, 1.0}) == 2.5);
  CHECK(median_or_inf({1.0, std::nullopt, 3.0}) == 3.0);
  CHECK_FALSE(median_or_inf({1.0, std::nullopt, std::nullopt}).has_value());
}

struct CommaDecimal : std::numpunct<char> {
  char do_decimal_point() const override { return ','; }
};

TEST_CASE("csv numbers use a dot regardless of the global locale") {
  const std::locale previous = std::locale::global(std::locale(std::locale(), new CommaDecimal));
  std::ostringstream probe;
  probe << 0.5;
  CHECK(probe.str() == "0,5");
  EvalRecord e{1000, 3, 12.5, 0.75, 1.0};
  CompareResult r;
  r.oracle = 25.0;
  RunResult run;
  run.report.evals = {e};
  r.runs = {run};
  r.summary = summarize(r.runs, r.oracle);
  const std::string curves = curves_csv(r);
  const std::string summary = summary_csv(r);
  std::locale::global(previous);
  CHECK(curves.find("sac,0,1000,12.5,0.75,1,0.5") != std::string::npos);
  CHECK(summary.find(",25\n") != std::string::npos);
}
