#include "covertpath/env.hpp"

#include <algorithm>
#include <limits>

#include <fmt/format.h>

#include "covertpath/oracle.hpp"

namespace covertpath {

CovertPathEnv::CovertPathEnv(Scenario scenario, EnvConfig config)
    : scenario_(std::move(scenario)), config_(config) {
  if (auto v = validate_scenario(scenario_); !v.empty()) {
    throw SetupError(fmt::format("invalid scenario: {}: {}", v.front().kind, v.front().detail));
  }
  double v_max = 0.0;
  double h_max = 0.0;
  slots_.resize(scenario_.nodes.size());
  for (const NodeSpec& node : scenario_.nodes) {
    auto& row = slots_[static_cast<std::size_t>(node.id)];
    for (const Channel& c : node.out_channels) {
      Slot s;
      s.dst = c.dst;
      s.feasible = covert_feasible(c, scenario_.tau);
      s.p_detect = layer_detection(c, scenario_);
      s.h = channel_quality(c, s.p_detect);
      if (s.feasible) {
        v_max = std::max(v_max, c.capacity_v);
        h_max = std::max(h_max, s.h);
      }
      row.push_back(s);
    }
  }
  for (const NodeSpec& node : scenario_.nodes) {
    auto& row = slots_[static_cast<std::size_t>(node.id)];
    for (std::size_t k = 0; k < row.size(); ++k) {
      const double v = node.out_channels[k].capacity_v;
      row[k].v_norm = v_max > 0.0 ? std::min(1.0, v / v_max) : 0.0;
      row[k].h_norm = h_max > 0.0 ? std::min(1.0, row[k].h / h_max) : 0.0;
    }
  }
  solvable_ = reachable(feasible_subgraph(scenario_), scenario_.alice, scenario_.bob);
}

const CovertPathEnv::Slot& CovertPathEnv::slot_at(int node, int slot) const {
  if (!scenario_.has_node(node) || !slot_exists(node, slot)) {
    throw ContractError(fmt::format("no channel at {}:{}", node, slot));
  }
  return slots_[static_cast<std::size_t>(node)][static_cast<std::size_t>(slot)];
}

bool CovertPathEnv::slot_exists(int node, int slot) const {
  return scenario_.has_node(node) && slot >= 0 &&
         slot < static_cast<int>(slots_[static_cast<std::size_t>(node)].size());
}

bool CovertPathEnv::slot_feasible(int node, int slot) const { return slot_at(node, slot).feasible; }
double CovertPathEnv::slot_quality(int node, int slot) const { return slot_at(node, slot).h; }
double CovertPathEnv::slot_p_detect(int node, int slot) const {
  return slot_at(node, slot).p_detect;
}

std::pair<EnvState, std::vector<double>> CovertPathEnv::reset(std::uint64_t) const {
  if (!solvable_) {
    throw SetupError("scenario has no covert-feasible path from alice to bob");
  }
  EnvState s;
  s.current = scenario_.alice;
  s.visited.assign(scenario_.nodes.size(), 0);
  s.visited[static_cast<std::size_t>(s.current)] = 1;
  s.path_min = std::numeric_limits<double>::infinity();
  return {s, encode(s)};
}

ActionMask CovertPathEnv::action_mask(const EnvState& state) const {
  if (state.done) throw ContractError("action_mask on a finished episode");
  ActionMask mask(static_cast<std::size_t>(k_max()), 0);
  const auto& row = slots_[static_cast<std::size_t>(state.current)];
  for (std::size_t k = 0; k < row.size() && k < mask.size(); ++k) {
    mask[k] = row[k].feasible && !state.visited[static_cast<std::size_t>(row[k].dst)];
  }
  return mask;
}

StepResult CovertPathEnv::step(const EnvState& state, int action) const {
  StepResult r;
  r.state = state;
  r.info.node_from = state.current;
  r.info.node_to = state.current;
  r.info.slot = action;

  const bool legal = !state.done && action >= 0 && action < k_max() &&
                     action_mask(state)[static_cast<std::size_t>(action)];
  if (!legal) {
    r.info.violation = true;
    r.reward = config_.r_fail;
    r.done = r.state.done = true;
    r.state.last_reward = r.reward;
    r.observation = encode(r.state);
    return r;
  }

  const Slot& slot = slots_[static_cast<std::size_t>(state.current)][static_cast<std::size_t>(action)];
  EnvState& next = r.state;
  next.current = slot.dst;
  next.visited[static_cast<std::size_t>(slot.dst)] = 1;
  next.steps += 1;
  next.path.push_back({state.current, action});
  next.path_min = std::min(next.path_min, slot.h);
  r.info.node_to = slot.dst;

  const bool sum_mode = config_.aggregator == Aggregator::Sum;
  r.reward = sum_mode ? slot.h : 0.0;
  if (slot.dst == scenario_.bob) {
    next.done = next.success = true;
    r.info.success = true;
    if (!sum_mode) r.reward = next.path_min;
  } else {
    const ActionMask mask = action_mask(next);
    if (std::none_of(mask.begin(), mask.end(), [](std::uint8_t m) { return m != 0; })) {
      next.done = true;
      r.info.dead_end = true;
      r.reward += config_.r_fail;
    } else if (next.steps >= step_limit()) {
      next.done = true;
      r.info.truncated = true;
    }
  }
  next.last_reward = r.reward;
  r.done = next.done;
  r.observation = encode(next);
  return r;
}

std::vector<double> CovertPathEnv::encode(const EnvState& state) const {
  const auto n = static_cast<std::size_t>(node_count());
  std::vector<double> x(static_cast<std::size_t>(state_dim()), 0.0);
  x[static_cast<std::size_t>(state.current)] = 1.0;
  x[n + static_cast<std::size_t>(scenario_.bob)] = 1.0;
  for (std::size_t i = 0; i < n; ++i) x[2 * n + i] = state.visited[i] ? 1.0 : 0.0;
  const auto& row = slots_[static_cast<std::size_t>(state.current)];
  for (std::size_t k = 0; k < row.size(); ++k) {
    double* f = &x[3 * n + 4 * k];
    f[0] = 1.0;
    f[1] = row[k].feasible && !state.visited[static_cast<std::size_t>(row[k].dst)] ? 1.0 : 0.0;
    f[2] = row[k].v_norm;
    f[3] = row[k].h_norm;
  }
  return x;
}

TrajectoryLog::TrajectoryLog(std::ostream& out) : out_(&out) {
  *out_ << "episode,step,node_from,slot,node_to,reward,done,success\n";
}

void TrajectoryLog::record(std::uint64_t episode, const StepResult& r) {
  *out_ << fmt::format("{},{},{},{},{},{},{},{}\n", episode, r.state.steps, r.info.node_from,
                       r.info.slot, r.info.node_to, r.reward, r.done ? 1 : 0,
                       r.info.success ? 1 : 0);
}

}  // namespace covertpath
