#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "covertpath/model.hpp"

namespace covertpath {

struct Range {
  double lo = 0.0;
  double hi = 0.0;
  bool operator==(const Range&) const = default;
};

struct LayerRange {
  Range v;
  Range sigma;
  double detect_weight = 1.0;
  bool operator==(const LayerRange&) const = default;
};

struct GenConfig {
  int n_nodes = 20;
  int k_max = 9;
  int slots_min = 3;
  int slots_max = 9;
  int n_wardens = 3;
  double tau = 0.5;
  double feasible_fraction = 0.8;
  // Indexed by Layer.
  std::array<LayerRange, 3> layers = {{
      {{2.0, 6.0}, {0.3, 0.7}, 1.0},
      {{4.0, 10.0}, {0.5, 0.9}, 0.7},
      {{1.0, 4.0}, {0.7, 1.0}, 0.4},
  }};
  Range warden_d = {0.3, 0.9};
  double arena_side = 10.0;
  std::uint64_t seed = 42;
  int max_retries = 1000;

  const LayerRange& layer(Layer l) const { return layers[static_cast<std::size_t>(l)]; }
  bool operator==(const GenConfig&) const = default;
};

std::vector<std::string> validate_config(const GenConfig& config);

class GenerationError : public std::runtime_error {
 public:
  GenerationError(std::uint64_t seed, const std::string& what)
      : std::runtime_error(what), seed_(seed) {}
  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
};

/// Draws a solvable scenario: alice is node 0, bob is node n_nodes - 1, and at
/// least one covert-feasible path joins them. Channel sets are redrawn up to
/// max_retries times; failure throws GenerationError naming the seed.
Scenario generate(const GenConfig& config);

class ParseError : public std::runtime_error {
 public:
  enum class Kind { Malformed, UnknownField, InvalidValue };

  ParseError(Kind kind, std::string path, const std::string& what,
             std::vector<Violation> violations = {})
      : std::runtime_error(what),
        kind_(kind),
        path_(std::move(path)),
        violations_(std::move(violations)) {}

  Kind kind() const { return kind_; }
  const std::string& path() const { return path_; }
  const std::vector<Violation>& violations() const { return violations_; }

 private:
  Kind kind_;
  std::string path_;
  std::vector<Violation> violations_;
};

inline constexpr std::string_view kFormatVersion = "1";

// Canonical JSON: sorted keys, declaration-ordered arrays, shortest round-trip
// reals, trailing newline.
std::string serialize(const Scenario& scenario);
Scenario parse_scenario(std::string_view text);

std::string serialize(const GenConfig& config);
GenConfig parse_config(std::string_view text);

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view contents);

}  // namespace covertpath
