#include "covertpath/model.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <set>

namespace covertpath {

std::string_view to_string(Layer layer) {
  switch (layer) {
    case Layer::Physical:
      return "physical";
    case Layer::Network:
      return "network";
    case Layer::Application:
      return "application";
  }
  return "unknown";
}

std::optional<Layer> layer_from_string(std::string_view name) {
  for (Layer layer : kAllLayers) {
    if (to_string(layer) == name) return layer;
  }
  return std::nullopt;
}

std::string_view to_string(Aggregator agg) { return agg == Aggregator::Sum ? "sum" : "min"; }

std::optional<Aggregator> aggregator_from_string(std::string_view name) {
  if (name == "sum") return Aggregator::Sum;
  if (name == "min") return Aggregator::Min;
  return std::nullopt;
}

std::string to_string(ChannelRef ref) { return fmt::format("{}:{}", ref.node, ref.slot); }

double euclidean_distance(Point a, Point b) { return std::hypot(a.x - b.x, a.y - b.y); }

double LayerWeights::operator[](Layer layer) const {
  switch (layer) {
    case Layer::Physical:
      return physical;
    case Layer::Network:
      return network;
    case Layer::Application:
      return application;
  }
  return 1.0;
}

const NodeSpec& Scenario::node(int id) const {
  if (!has_node(id)) throw ScenarioError(fmt::format("unknown node id {}", id));
  return nodes[static_cast<std::size_t>(id)];
}

std::size_t Scenario::channel_count() const {
  std::size_t total = 0;
  for (const auto& n : nodes) total += n.out_channels.size();
  return total;
}

double effective_detection(const Warden& warden, const NodeSpec& src_node) {
  const double dist = euclidean_distance(warden.position, src_node.position);
  if (dist == 0.0) return 1.0;
  return std::clamp(warden.detect_d / dist, 0.0, 1.0);
}

double combined_detection(const Channel& channel, const Scenario& scenario) {
  const NodeSpec& src = scenario.node(channel.src);
  double miss = 1.0;
  for (const auto& w : scenario.wardens) miss *= 1.0 - effective_detection(w, src);
  return std::clamp(1.0 - miss, 0.0, 1.0);
}

double layer_detection(const Channel& channel, const Scenario& scenario) {
  return std::clamp(scenario.layer_weights[channel.layer] * combined_detection(channel, scenario),
                    0.0, 1.0);
}

bool covert_feasible(const Channel& channel, double tau) {
  return channel.covert_lo <= tau && tau <= channel.covert_hi;
}

double channel_quality(const Channel& channel, double p_detect) {
  if (!(p_detect >= 0.0 && p_detect <= 1.0)) {
    throw std::domain_error(fmt::format("p_detect {} outside [0, 1]", p_detect));
  }
  return channel.capacity_v * channel.car_sigma * (1.0 - p_detect);
}

namespace {

bool in_unit(double v) { return v >= 0.0 && v <= 1.0; }
bool finite(Point p) { return std::isfinite(p.x) && std::isfinite(p.y); }

}  // namespace

std::vector<Violation> validate_scenario(const Scenario& s) {
  std::vector<Violation> out;
  auto add = [&out](std::string kind, std::string detail) {
    out.push_back({std::move(kind), std::move(detail)});
  };

  if (s.nodes.empty()) add("empty topology", "scenario has no nodes");
  if (s.k_max <= 0) add("invalid k_max", fmt::format("k_max = {}", s.k_max));
  if (!in_unit(s.tau)) add("parameter range", fmt::format("tau = {} outside [0, 1]", s.tau));
  if (!s.has_node(s.alice)) add("unknown endpoint", fmt::format("alice = {}", s.alice));
  if (!s.has_node(s.bob)) add("unknown endpoint", fmt::format("bob = {}", s.bob));
  if (s.alice == s.bob) add("alice equals bob", fmt::format("both are node {}", s.alice));
  for (Layer layer : kAllLayers) {
    const double w = s.layer_weights[layer];
    if (!(std::isfinite(w) && w >= 0.0)) {
      add("parameter range", fmt::format("layer weight {} = {}", to_string(layer), w));
    }
  }

  std::set<int> seen;
  for (std::size_t i = 0; i < s.nodes.size(); ++i) {
    const NodeSpec& n = s.nodes[i];
    if (!seen.insert(n.id).second) add("duplicate id", fmt::format("node id {}", n.id));
    // Node ids double as dense indices everywhere downstream.
    if (n.id != static_cast<int>(i)) {
      add("non-dense id", fmt::format("node at index {} has id {}", i, n.id));
    }
    if (!finite(n.position)) add("parameter range", fmt::format("node {} position", n.id));
    if (s.k_max > 0 && n.out_channels.size() > static_cast<std::size_t>(s.k_max)) {
      add("slot bound exceeded",
          fmt::format("node {} has {} channels, k_max = {}", n.id, n.out_channels.size(), s.k_max));
    }
    for (std::size_t slot = 0; slot < n.out_channels.size(); ++slot) {
      const Channel& c = n.out_channels[slot];
      const std::string where = fmt::format("channel {}:{}", n.id, slot);
      if (c.src != n.id) add("source mismatch", fmt::format("{} has src {}", where, c.src));
      if (c.src == c.dst) add("self-loop", where);
      if (!s.has_node(c.dst)) add("unknown endpoint", fmt::format("{} dst {}", where, c.dst));
      if (!(std::isfinite(c.capacity_v) && c.capacity_v >= 0.0)) {
        add("parameter range", fmt::format("{} capacity_v = {}", where, c.capacity_v));
      }
      if (!in_unit(c.car_sigma)) {
        add("parameter range", fmt::format("{} car_sigma = {}", where, c.car_sigma));
      }
      if (!in_unit(c.covert_lo) || !in_unit(c.covert_hi)) {
        add("parameter range",
            fmt::format("{} covert interval [{}, {}]", where, c.covert_lo, c.covert_hi));
      } else if (c.covert_lo > c.covert_hi) {
        add("inverted interval",
            fmt::format("{} covert interval [{}, {}]", where, c.covert_lo, c.covert_hi));
      }
    }
  }

  for (std::size_t i = 0; i < s.wardens.size(); ++i) {
    const Warden& w = s.wardens[i];
    if (!finite(w.position)) add("parameter range", fmt::format("warden {} position", i));
    if (!in_unit(w.detect_d)) {
      add("parameter range", fmt::format("warden {} detect_d = {}", i, w.detect_d));
    }
  }
  return out;
}

}  // namespace covertpath
