#pragma once

#include <array>
#include <compare>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace covertpath {

enum class Layer { Physical, Network, Application };

inline constexpr std::array<Layer, 3> kAllLayers = {Layer::Physical, Layer::Network,
                                                    Layer::Application};

std::string_view to_string(Layer layer);
std::optional<Layer> layer_from_string(std::string_view name);

struct Point {
  double x = 0.0;
  double y = 0.0;
  bool operator==(const Point&) const = default;
};

double euclidean_distance(Point a, Point b);

/// A directed covert link between two nodes.
///
/// The covert interval [covert_lo, covert_hi] is the range of warden thresholds
/// under which the channel is not classified as covert.
struct Channel {
  int src = 0;
  int dst = 0;
  Layer layer = Layer::Physical;
  double capacity_v = 0.0;
  double car_sigma = 0.0;
  double covert_lo = 0.0;
  double covert_hi = 0.0;

  double covert_capacity() const { return capacity_v * car_sigma; }
  bool operator==(const Channel&) const = default;
};

struct NodeSpec {
  int id = 0;
  Point position;
  std::vector<Channel> out_channels;
  bool operator==(const NodeSpec&) const = default;
};

struct Warden {
  Point position;
  double detect_d = 0.0;
  bool operator==(const Warden&) const = default;
};

/// Multiplier applied to a channel's combined detection probability, per layer.
struct LayerWeights {
  double physical = 1.0;
  double network = 0.7;
  double application = 0.4;

  double operator[](Layer layer) const;
  bool operator==(const LayerWeights&) const = default;
};

inline constexpr std::string_view kPrngName = "mt19937_64+splitmix64";

struct Scenario {
  std::vector<NodeSpec> nodes;
  std::vector<Warden> wardens;
  double tau = 0.5;
  int alice = 0;
  int bob = 1;
  int k_max = 9;
  LayerWeights layer_weights;
  std::string prng = std::string(kPrngName);

  int node_count() const { return static_cast<int>(nodes.size()); }
  bool has_node(int id) const { return id >= 0 && id < node_count(); }
  const NodeSpec& node(int id) const;
  std::size_t channel_count() const;
  bool operator==(const Scenario&) const = default;
};

/// Identifies a channel by its source node and slot index within that node.
struct ChannelRef {
  int node = 0;
  int slot = 0;
  auto operator<=>(const ChannelRef&) const = default;
};

std::string to_string(ChannelRef ref);

enum class Aggregator { Sum, Min };

std::string_view to_string(Aggregator agg);
std::optional<Aggregator> aggregator_from_string(std::string_view name);

struct ChannelScore {
  ChannelRef ref;
  double p_detect = 0.0;
  double h_score = 0.0;
};

struct QualityReport {
  std::vector<ChannelScore> per_channel;
  double aggregate = 0.0;
  Aggregator aggregator = Aggregator::Sum;
};

/// Raised when a scenario references nodes or channels that do not exist.
class ScenarioError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when a caller breaks an operation's precondition.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

struct Violation {
  std::string kind;
  std::string detail;
};

// Detection ability of one warden against traffic leaving `src_node`, discounted
// by the reciprocal of their distance and clamped to [0, 1]. A co-located warden
// detects with probability 1.
double effective_detection(const Warden& warden, const NodeSpec& src_node);

// 1 - prod(1 - d_eff) over all wardens; 0 with no wardens.
double combined_detection(const Channel& channel, const Scenario& scenario);

// combined_detection scaled by the channel layer's weight, clamped to [0, 1].
double layer_detection(const Channel& channel, const Scenario& scenario);

bool covert_feasible(const Channel& channel, double tau);

// V * sigma * (1 - p_detect). Throws std::domain_error if p_detect is outside [0, 1].
double channel_quality(const Channel& channel, double p_detect);

std::vector<Violation> validate_scenario(const Scenario& scenario);

}  // namespace covertpath
