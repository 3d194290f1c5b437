#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "covertpath/model.hpp"

namespace covertpath {

struct FeasibleEdge {
  ChannelRef ref;
  int dst = 0;
};

/// Directed multigraph of the covert-feasible channels. Out-edges keep slot order;
/// parallel channels between the same pair stay distinct.
struct FeasibleGraph {
  int node_count = 0;
  std::vector<std::vector<FeasibleEdge>> out;

  std::size_t edge_count() const;
};

FeasibleGraph feasible_subgraph(const Scenario& scenario);

bool reachable(const FeasibleGraph& graph, int src, int dst);

/// Lazily yields every simple path of at most max_hops channels from src to dst,
/// in slot-lexicographic depth-first order. src == dst yields nothing.
class SimplePathEnumerator {
 public:
  SimplePathEnumerator(const FeasibleGraph& graph, int src, int dst, int max_hops);

  std::optional<std::vector<ChannelRef>> next();

 private:
  struct Frame {
    int node;
    std::size_t next_edge;
  };

  const FeasibleGraph* graph_;
  int dst_;
  int max_hops_;
  std::vector<Frame> stack_;
  std::vector<ChannelRef> path_;
  std::vector<char> on_path_;
};

// Scores a chained channel sequence. Empty paths throw std::domain_error; a
// broken chain or unknown slot throws ContractError.
QualityReport path_quality(std::span<const ChannelRef> path, const Scenario& scenario,
                           Aggregator aggregator);

struct PathSelection {
  std::vector<ChannelRef> channels;
  Aggregator aggregator = Aggregator::Sum;
  QualityReport report;
};

// Reachability, covert-constraint and simplicity checks for a candidate path.
std::vector<Violation> check_path(std::span<const ChannelRef> path, const Scenario& scenario);

struct OptimumResult {
  PathSelection selection;
  std::uint64_t nodes_expanded = 0;
};

struct SearchOptions {
  Aggregator aggregator = Aggregator::Sum;
  // <= 0 means n_nodes - 1.
  int max_hops = 0;
  bool prune = true;
};

/// Quality-maximal feasible simple path from alice to bob, or nullopt when none
/// exists. Ties go to fewer hops, then to the lexicographically smaller slot
/// sequence. Pruned and exhaustive searches return the same selection.
std::optional<OptimumResult> brute_force_optimum(const Scenario& scenario,
                                                 const SearchOptions& options = {});

// include_stats adds nodes_expanded, which differs between search strategies.
std::string optimum_to_json(const OptimumResult& result, bool include_stats = true);

}  // namespace covertpath
