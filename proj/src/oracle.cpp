#include "covertpath/oracle.hpp"

#include <algorithm>
#include <functional>
#include <limits>

#include <fmt/format.h>
#include <json.hpp>

namespace covertpath {

std::size_t FeasibleGraph::edge_count() const {
  std::size_t total = 0;
  for (const auto& edges : out) total += edges.size();
  return total;
}

FeasibleGraph feasible_subgraph(const Scenario& scenario) {
  FeasibleGraph g;
  g.node_count = scenario.node_count();
  g.out.resize(scenario.nodes.size());
  for (const NodeSpec& node : scenario.nodes) {
    for (std::size_t slot = 0; slot < node.out_channels.size(); ++slot) {
      const Channel& c = node.out_channels[slot];
      if (covert_feasible(c, scenario.tau)) {
        g.out[static_cast<std::size_t>(node.id)].push_back(
            {{node.id, static_cast<int>(slot)}, c.dst});
      }
    }
  }
  return g;
}

bool reachable(const FeasibleGraph& graph, int src, int dst) {
  std::vector<char> seen(static_cast<std::size_t>(graph.node_count), 0);
  std::vector<int> frontier = {src};
  seen[static_cast<std::size_t>(src)] = 1;
  while (!frontier.empty()) {
    const int u = frontier.back();
    frontier.pop_back();
    if (u == dst) return true;
    for (const auto& e : graph.out[static_cast<std::size_t>(u)]) {
      if (!seen[static_cast<std::size_t>(e.dst)]) {
        seen[static_cast<std::size_t>(e.dst)] = 1;
        frontier.push_back(e.dst);
      }
    }
  }
  return false;
}

SimplePathEnumerator::SimplePathEnumerator(const FeasibleGraph& graph, int src, int dst,
                                           int max_hops)
    : graph_(&graph),
      dst_(dst),
      max_hops_(max_hops),
      on_path_(static_cast<std::size_t>(graph.node_count), 0) {
  if (src != dst && max_hops >= 1) {
    stack_.push_back({src, 0});
    on_path_[static_cast<std::size_t>(src)] = 1;
  }
}

std::optional<std::vector<ChannelRef>> SimplePathEnumerator::next() {
  while (!stack_.empty()) {
    Frame& top = stack_.back();
    const auto& edges = graph_->out[static_cast<std::size_t>(top.node)];
    if (top.next_edge >= edges.size() || static_cast<int>(path_.size()) >= max_hops_) {
      on_path_[static_cast<std::size_t>(top.node)] = 0;
      stack_.pop_back();
      if (!path_.empty()) path_.pop_back();
      continue;
    }
    const FeasibleEdge& e = edges[top.next_edge++];
    if (on_path_[static_cast<std::size_t>(e.dst)]) continue;
    if (e.dst == dst_) {
      std::vector<ChannelRef> found = path_;
      found.push_back(e.ref);
      return found;
    }
    path_.push_back(e.ref);
    on_path_[static_cast<std::size_t>(e.dst)] = 1;
    stack_.push_back({e.dst, 0});
  }
  return std::nullopt;
}

namespace {

const Channel& channel_at(const Scenario& scenario, ChannelRef ref) {
  if (!scenario.has_node(ref.node)) {
    throw ContractError(fmt::format("channel {} has unknown node", to_string(ref)));
  }
  const auto& channels = scenario.node(ref.node).out_channels;
  if (ref.slot < 0 || ref.slot >= static_cast<int>(channels.size())) {
    throw ContractError(fmt::format("channel {} has unknown slot", to_string(ref)));
  }
  return channels[static_cast<std::size_t>(ref.slot)];
}

double quality_of(const Channel& c, const Scenario& scenario) {
  return channel_quality(c, layer_detection(c, scenario));
}

}  // namespace

QualityReport path_quality(std::span<const ChannelRef> path, const Scenario& scenario,
                           Aggregator aggregator) {
  if (path.empty()) throw std::domain_error("path_quality: empty path");
  QualityReport report;
  report.aggregator = aggregator;
  report.aggregate = aggregator == Aggregator::Sum ? 0.0 : std::numeric_limits<double>::infinity();
  int expected_src = path.front().node;
  for (ChannelRef ref : path) {
    const Channel& c = channel_at(scenario, ref);
    if (ref.node != expected_src) {
      throw ContractError(fmt::format("path_quality: broken chain at {}", to_string(ref)));
    }
    expected_src = c.dst;
    const double p = layer_detection(c, scenario);
    const double h = channel_quality(c, p);
    report.per_channel.push_back({ref, p, h});
    report.aggregate = aggregator == Aggregator::Sum ? report.aggregate + h
                                                     : std::min(report.aggregate, h);
  }
  return report;
}

std::vector<Violation> check_path(std::span<const ChannelRef> path, const Scenario& scenario) {
  std::vector<Violation> out;
  if (path.empty()) {
    out.push_back({"empty path", "no channels selected"});
    return out;
  }
  std::vector<char> seen(scenario.nodes.size(), 0);
  int at = scenario.alice;
  if (scenario.has_node(at)) seen[static_cast<std::size_t>(at)] = 1;
  for (ChannelRef ref : path) {
    if (ref.node != at) {
      out.push_back({"broken chain", fmt::format("{} does not leave node {}", to_string(ref), at)});
      return out;
    }
    const Channel* c = nullptr;
    try {
      c = &channel_at(scenario, ref);
    } catch (const ContractError& e) {
      out.push_back({"unknown channel", e.what()});
      return out;
    }
    if (!covert_feasible(*c, scenario.tau)) {
      out.push_back({"covert constraint", fmt::format("{} excludes tau", to_string(ref))});
    }
    if (!scenario.has_node(c->dst)) {
      out.push_back({"unknown endpoint", to_string(ref)});
      return out;
    }
    if (seen[static_cast<std::size_t>(c->dst)]) {
      out.push_back({"revisit", fmt::format("{} re-enters node {}", to_string(ref), c->dst)});
    }
    seen[static_cast<std::size_t>(c->dst)] = 1;
    at = c->dst;
  }
  if (at != scenario.bob) {
    out.push_back({"reachability", fmt::format("path ends at {} instead of {}", at, scenario.bob)});
  }
  return out;
}

namespace {

struct Best {
  std::vector<ChannelRef> path;
  double value = -std::numeric_limits<double>::infinity();
  bool found = false;

  // Strictly better value, or equal value with fewer hops. Among equals the
  // first candidate in slot-lexicographic order is kept.
  bool offer(double value_in, std::size_t hops) {
    if (!found || value_in > value || (value_in == value && hops < path.size())) {
      value = value_in;
      found = true;
      return true;
    }
    return false;
  }
};

class PrunedSearch {
 public:
  PrunedSearch(const Scenario& scenario, const FeasibleGraph& graph, Aggregator agg,
               int max_hops)
      : scenario_(scenario),
        graph_(graph),
        agg_(agg),
        max_hops_(max_hops),
        visited_(static_cast<std::size_t>(graph.node_count), 0),
        best_out_(static_cast<std::size_t>(graph.node_count), 0.0) {
    h_.resize(graph.out.size());
    for (std::size_t u = 0; u < graph.out.size(); ++u) {
      for (const auto& e : graph.out[u]) {
        const double h = quality_of(channel_at(scenario, e.ref), scenario);
        h_[u].push_back(h);
        best_out_[u] = std::max(best_out_[u], h);
      }
    }
  }

  void run() {
    visited_[static_cast<std::size_t>(scenario_.alice)] = 1;
    const double start =
        agg_ == Aggregator::Sum ? 0.0 : std::numeric_limits<double>::infinity();
    dfs(scenario_.alice, 0, start);
  }

  const Best& best() const { return best_; }
  std::uint64_t expanded() const { return expanded_; }

 private:
  bool bob_reachable(int from) {
    scratch_seen_.assign(visited_.begin(), visited_.end());
    scratch_stack_.clear();
    scratch_stack_.push_back(from);
    while (!scratch_stack_.empty()) {
      const int u = scratch_stack_.back();
      scratch_stack_.pop_back();
      for (const auto& e : graph_.out[static_cast<std::size_t>(u)]) {
        if (e.dst == scenario_.bob) return true;
        if (!scratch_seen_[static_cast<std::size_t>(e.dst)]) {
          scratch_seen_[static_cast<std::size_t>(e.dst)] = 1;
          scratch_stack_.push_back(e.dst);
        }
      }
    }
    return false;
  }

  // Admissible upper bound on any completion from `node`. Every further hop
  // leaves a distinct node: first `node` itself, then unvisited non-bob nodes.
  double upper_bound(int node, int depth, double acc) {
    if (agg_ == Aggregator::Min) return std::min(acc, best_out_[static_cast<std::size_t>(node)]);
    const int remaining = max_hops_ - depth;
    scratch_bounds_.clear();
    for (int v = 0; v < graph_.node_count; ++v) {
      if (!visited_[static_cast<std::size_t>(v)] && v != scenario_.bob) {
        scratch_bounds_.push_back(best_out_[static_cast<std::size_t>(v)]);
      }
    }
    const auto take =
        std::min<std::size_t>(scratch_bounds_.size(), static_cast<std::size_t>(remaining - 1));
    std::partial_sort(scratch_bounds_.begin(), scratch_bounds_.begin() + static_cast<long>(take),
                      scratch_bounds_.end(), std::greater<>());
    double bound = acc + best_out_[static_cast<std::size_t>(node)];
    for (std::size_t i = 0; i < take; ++i) bound += scratch_bounds_[i];
    return bound;
  }

  void dfs(int node, int depth, double acc) {
    ++expanded_;
    if (depth >= max_hops_) return;
    if (!bob_reachable(node)) return;
    if (best_.found) {
      const double bound = upper_bound(node, depth, acc);
      // Slack absorbs summation-order rounding so no equal-valued path is cut.
      const double slack = 1e-9 * std::max(1.0, std::abs(best_.value));
      if (bound < best_.value - slack) return;
    }
    const auto u = static_cast<std::size_t>(node);
    for (std::size_t i = 0; i < graph_.out[u].size(); ++i) {
      const FeasibleEdge& e = graph_.out[u][i];
      if (visited_[static_cast<std::size_t>(e.dst)]) continue;
      const double value = agg_ == Aggregator::Sum ? acc + h_[u][i] : std::min(acc, h_[u][i]);
      path_.push_back(e.ref);
      if (e.dst == scenario_.bob) {
        if (best_.offer(value, path_.size())) best_.path = path_;
      } else {
        visited_[static_cast<std::size_t>(e.dst)] = 1;
        dfs(e.dst, depth + 1, value);
        visited_[static_cast<std::size_t>(e.dst)] = 0;
      }
      path_.pop_back();
    }
  }

  const Scenario& scenario_;
  const FeasibleGraph& graph_;
  Aggregator agg_;
  int max_hops_;
  std::vector<char> visited_;
  std::vector<std::vector<double>> h_;
  std::vector<double> best_out_;
  std::vector<ChannelRef> path_;
  Best best_;
  std::uint64_t expanded_ = 0;
  std::vector<char> scratch_seen_;
  std::vector<int> scratch_stack_;
  std::vector<double> scratch_bounds_;
};

}  // namespace

std::optional<OptimumResult> brute_force_optimum(const Scenario& scenario,
                                                 const SearchOptions& options) {
  const FeasibleGraph graph = feasible_subgraph(scenario);
  const int max_hops = options.max_hops > 0 ? options.max_hops : scenario.node_count() - 1;

  Best best;
  std::uint64_t expanded = 0;
  if (options.prune) {
    PrunedSearch search(scenario, graph, options.aggregator, max_hops);
    search.run();
    best = search.best();
    expanded = search.expanded();
  } else {
    SimplePathEnumerator paths(graph, scenario.alice, scenario.bob, max_hops);
    while (auto p = paths.next()) {
      ++expanded;
      const double value = path_quality(*p, scenario, options.aggregator).aggregate;
      if (best.offer(value, p->size())) best.path = std::move(*p);
    }
  }
  if (!best.found) return std::nullopt;

  OptimumResult result;
  result.selection.channels = best.path;
  result.selection.aggregator = options.aggregator;
  result.selection.report = path_quality(best.path, scenario, options.aggregator);
  result.nodes_expanded = expanded;
  return result;
}

std::string optimum_to_json(const OptimumResult& result, bool include_stats) {
  nlohmann::json j;
  const auto& sel = result.selection;
  j["path"] = nlohmann::json::array();
  j["per_channel"] = nlohmann::json::array();
  for (const auto& score : sel.report.per_channel) {
    j["path"].push_back(to_string(score.ref));
    j["per_channel"].push_back({{"channel", to_string(score.ref)},
                                {"p_detect", score.p_detect},
                                {"h_score", score.h_score}});
  }
  j["aggregate"] = sel.report.aggregate;
  j["aggregator"] = std::string(to_string(sel.aggregator));
  if (include_stats) j["nodes_expanded"] = result.nodes_expanded;
  return j.dump(2) + "\n";
}

}  // namespace covertpath
