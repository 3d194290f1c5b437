#pragma once

#include <vector>

#include "covertpath/model.hpp"

namespace covertpath::testing {

inline Channel make_channel(int src, int dst, double v, double sigma, double lo = 0.0,
                            double hi = 1.0, Layer layer = Layer::Physical) {
  return {src, dst, layer, v, sigma, lo, hi};
}

/// Empty scenario with `n` nodes on a line at x = 0, 1, 2, ...
inline Scenario line_nodes(int n, int alice, int bob, int k_max = 9) {
  Scenario s;
  s.alice = alice;
  s.bob = bob;
  s.k_max = k_max;
  s.tau = 0.5;
  for (int i = 0; i < n; ++i) s.nodes.push_back({i, {static_cast<double>(i), 0.0}, {}});
  return s;
}

// A = 0, C = 1, B = 2; alice = A, bob = B. No wardens, sigma = 1, so h = V.
// A's slots: [A->B (h 2), A->C (h 1)]; C's slot: [C->B (h 4)].
inline Scenario triangle() {
  Scenario s = line_nodes(3, 0, 2);
  s.nodes[0].out_channels = {make_channel(0, 2, 2.0, 1.0), make_channel(0, 1, 1.0, 1.0)};
  s.nodes[1].out_channels = {make_channel(1, 2, 4.0, 1.0)};
  return s;
}

}  // namespace covertpath::testing
