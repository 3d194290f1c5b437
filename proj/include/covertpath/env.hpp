#pragma once

#include <cstdint>
#include <ostream>
#include <stdexcept>
#include <vector>

#include "covertpath/model.hpp"

namespace covertpath {

using ActionMask = std::vector<std::uint8_t>;

struct EnvConfig {
  Aggregator aggregator = Aggregator::Sum;
  // Added to the final reward of an episode that strands the agent.
  double r_fail = -5.0;
};

struct EnvState {
  int current = 0;
  std::vector<std::uint8_t> visited;
  int steps = 0;
  bool done = false;
  bool success = false;
  double last_reward = 0.0;
  // Bottleneck quality so far; only used for Min aggregation.
  double path_min = 0.0;
  std::vector<ChannelRef> path;

  bool operator==(const EnvState&) const = default;
};

struct StepInfo {
  int node_from = 0;
  int node_to = 0;
  int slot = 0;
  bool success = false;
  bool dead_end = false;
  bool truncated = false;
  // The action was masked; the env refused it and ended the episode.
  bool violation = false;
};

struct StepResult {
  EnvState state;
  std::vector<double> observation;
  double reward = 0.0;
  bool done = false;
  StepInfo info;
};

class SetupError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Hop-by-hop path construction over a fixed scenario.
///
/// Observations have 3 * n_nodes + 4 * k_max entries: one-hot current node,
/// one-hot bob, visited mask, then per slot of the current node
/// [exists, feasible and unvisited destination, V / V_max, h / h_max], where the
/// normalizers are maxima over covert-feasible channels.
///
/// The env is immutable; episode state travels in EnvState values, so one
/// instance can serve any number of concurrent episodes.
class CovertPathEnv {
 public:
  explicit CovertPathEnv(Scenario scenario, EnvConfig config = {});

  // The start state is fixed by the scenario; the seed only exists so that
  // callers can treat all envs alike.
  std::pair<EnvState, std::vector<double>> reset(std::uint64_t episode_seed = 0) const;

  ActionMask action_mask(const EnvState& state) const;
  StepResult step(const EnvState& state, int action) const;
  std::vector<double> encode(const EnvState& state) const;

  int state_dim() const { return 3 * node_count() + 4 * k_max(); }
  int action_dim() const { return k_max(); }
  int node_count() const { return scenario_.node_count(); }
  int k_max() const { return scenario_.k_max; }
  int step_limit() const { return node_count() - 1; }

  const Scenario& scenario() const { return scenario_; }
  const EnvConfig& config() const { return config_; }

  bool slot_exists(int node, int slot) const;
  bool slot_feasible(int node, int slot) const;
  double slot_quality(int node, int slot) const;
  double slot_p_detect(int node, int slot) const;

 private:
  struct Slot {
    int dst = 0;
    bool feasible = false;
    double v_norm = 0.0;
    double h = 0.0;
    double h_norm = 0.0;
    double p_detect = 0.0;
  };

  const Slot& slot_at(int node, int slot) const;

  Scenario scenario_;
  EnvConfig config_;
  std::vector<std::vector<Slot>> slots_;
  bool solvable_ = false;
};

/// CSV trajectory log: episode,step,node_from,slot,node_to,reward,done,success.
class TrajectoryLog {
 public:
  explicit TrajectoryLog(std::ostream& out);
  void record(std::uint64_t episode, const StepResult& result);

 private:
  std::ostream* out_;
};

}  // namespace covertpath
