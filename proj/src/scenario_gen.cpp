#include "covertpath/scenario_gen.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "covertpath/oracle.hpp"
#include "covertpath/rng.hpp"

namespace covertpath {

using nlohmann::json;

namespace {

bool valid_range(Range r, double lo, double hi) {
  return std::isfinite(r.lo) && std::isfinite(r.hi) && r.lo <= r.hi && r.lo >= lo && r.hi <= hi;
}

}  // namespace

std::vector<std::string> validate_config(const GenConfig& c) {
  std::vector<std::string> out;
  if (c.n_nodes < 2) out.push_back(fmt::format("n_nodes = {} (need >= 2)", c.n_nodes));
  if (c.k_max <= 0) out.push_back(fmt::format("k_max = {} (need > 0)", c.k_max));
  if (c.slots_min < 0 || c.slots_min > c.slots_max || c.slots_max > c.k_max) {
    out.push_back(fmt::format("slots_per_node [{}, {}] not within [0, k_max = {}]", c.slots_min,
                              c.slots_max, c.k_max));
  }
  if (c.n_wardens < 0) out.push_back(fmt::format("n_wardens = {}", c.n_wardens));
  if (!(c.tau >= 0.0 && c.tau <= 1.0)) out.push_back(fmt::format("tau = {}", c.tau));
  if (!(c.feasible_fraction >= 0.0 && c.feasible_fraction <= 1.0)) {
    out.push_back(fmt::format("feasible_fraction = {}", c.feasible_fraction));
  }
  for (Layer l : kAllLayers) {
    const LayerRange& r = c.layer(l);
    if (!valid_range(r.v, 0.0, std::numeric_limits<double>::max())) {
      out.push_back(fmt::format("{} v_range [{}, {}]", to_string(l), r.v.lo, r.v.hi));
    }
    if (!valid_range(r.sigma, 0.0, 1.0)) {
      out.push_back(fmt::format("{} sigma_range [{}, {}]", to_string(l), r.sigma.lo, r.sigma.hi));
    }
    if (!(std::isfinite(r.detect_weight) && r.detect_weight >= 0.0)) {
      out.push_back(fmt::format("{} detect_weight = {}", to_string(l), r.detect_weight));
    }
  }
  if (!valid_range(c.warden_d, 0.0, 1.0)) {
    out.push_back(fmt::format("warden_d_range [{}, {}]", c.warden_d.lo, c.warden_d.hi));
  }
  if (!(std::isfinite(c.arena_side) && c.arena_side > 0.0)) {
    out.push_back(fmt::format("arena_side = {}", c.arena_side));
  }
  if (c.max_retries < 1) out.push_back(fmt::format("max_retries = {}", c.max_retries));
  return out;
}

namespace {

// Covert interval that contains tau when `straddle`, otherwise lies strictly on
// one side of it.
std::pair<double, double> draw_interval(Rng& rng, double tau, bool straddle) {
  if (straddle) return {uniform(rng, 0.0, tau), uniform(rng, tau, 1.0)};
  bool below = uniform(rng, 0.0, 1.0) < 0.5;
  if (tau <= 0.0) below = false;
  if (tau >= 1.0) below = true;
  double a = 0.0;
  double b = 0.0;
  if (below) {
    a = uniform(rng, 0.0, tau);
    b = uniform(rng, 0.0, tau);
  } else {
    // 1 - U[0, 1 - tau) lies in (tau, 1].
    a = 1.0 - uniform(rng, 0.0, 1.0 - tau);
    b = 1.0 - uniform(rng, 0.0, 1.0 - tau);
  }
  return {std::min(a, b), std::max(a, b)};
}

}  // namespace

Scenario generate(const GenConfig& config) {
  if (auto errors = validate_config(config); !errors.empty()) {
    throw GenerationError(config.seed,
                          fmt::format("invalid generator config (seed {}): {}", config.seed,
                                      errors.front()));
  }

  Scenario s;
  s.tau = config.tau;
  s.alice = 0;
  s.bob = config.n_nodes - 1;
  s.k_max = config.k_max;
  s.layer_weights = {config.layer(Layer::Physical).detect_weight,
                     config.layer(Layer::Network).detect_weight,
                     config.layer(Layer::Application).detect_weight};

  Rng topo = make_rng(config.seed, 0);
  s.nodes.resize(static_cast<std::size_t>(config.n_nodes));
  for (int i = 0; i < config.n_nodes; ++i) {
    auto& node = s.nodes[static_cast<std::size_t>(i)];
    node.id = i;
    node.position.x = uniform(topo, 0.0, config.arena_side);
    node.position.y = uniform(topo, 0.0, config.arena_side);
  }
  for (int w = 0; w < config.n_wardens; ++w) {
    Warden warden;
    warden.position.x = uniform(topo, 0.0, config.arena_side);
    warden.position.y = uniform(topo, 0.0, config.arena_side);
    warden.detect_d = uniform(topo, config.warden_d.lo, config.warden_d.hi);
    s.wardens.push_back(warden);
  }

  for (int attempt = 0; attempt < config.max_retries; ++attempt) {
    Rng rng = make_rng(config.seed, 1 + static_cast<std::uint64_t>(attempt));
    for (auto& node : s.nodes) {
      node.out_channels.clear();
      const int slots = uniform_int(rng, config.slots_min, config.slots_max);
      for (int k = 0; k < slots; ++k) {
        Channel c;
        c.src = node.id;
        const int pick = uniform_int(rng, 0, config.n_nodes - 2);
        c.dst = pick >= node.id ? pick + 1 : pick;
        c.layer = kAllLayers[static_cast<std::size_t>(uniform_int(rng, 0, 2))];
        const LayerRange& r = config.layer(c.layer);
        c.capacity_v = uniform(rng, r.v.lo, r.v.hi);
        c.car_sigma = uniform(rng, r.sigma.lo, r.sigma.hi);
        const bool straddle = uniform(rng, 0.0, 1.0) < config.feasible_fraction;
        std::tie(c.covert_lo, c.covert_hi) = draw_interval(rng, config.tau, straddle);
        node.out_channels.push_back(c);
      }
    }
    if (reachable(feasible_subgraph(s), s.alice, s.bob)) return s;
  }
  throw GenerationError(config.seed,
                        fmt::format("no solvable scenario for seed {} within {} attempts",
                                    config.seed, config.max_retries));
}

namespace {

json point_json(Point p) { return {{"x", p.x}, {"y", p.y}}; }

json scenario_json(const Scenario& s) {
  json nodes = json::array();
  for (const auto& n : s.nodes) {
    json channels = json::array();
    for (const auto& c : n.out_channels) {
      channels.push_back({{"src", c.src},
                          {"dst", c.dst},
                          {"layer", std::string(to_string(c.layer))},
                          {"capacity_v", c.capacity_v},
                          {"car_sigma", c.car_sigma},
                          {"covert_lo", c.covert_lo},
                          {"covert_hi", c.covert_hi}});
    }
    nodes.push_back({{"id", n.id}, {"position", point_json(n.position)}, {"channels", channels}});
  }
  json wardens = json::array();
  for (const auto& w : s.wardens) {
    wardens.push_back({{"position", point_json(w.position)}, {"detect_d", w.detect_d}});
  }
  json weights = json::object();
  for (Layer l : kAllLayers) weights[std::string(to_string(l))] = s.layer_weights[l];
  return {{"format_version", std::string(kFormatVersion)},
          {"prng", s.prng},
          {"nodes", nodes},
          {"wardens", wardens},
          {"tau", s.tau},
          {"alice", s.alice},
          {"bob", s.bob},
          {"k_max", s.k_max},
          {"layer_weights", weights}};
}

// Strict field access: every key must be expected, every expected key present.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail_malformed("expected an object");
  }

  void expect_only(std::initializer_list<std::string_view> keys) const {
    for (const auto& [key, value] : j_.items()) {
      bool known = false;
      for (auto k : keys) known = known || k == key;
      if (!known) {
        const std::string p = path_ + "." + key;
        throw ParseError(ParseError::Kind::UnknownField, p, "unknown field " + p);
      }
    }
  }

  const json& at(std::string_view key) const {
    auto it = j_.find(key);
    if (it == j_.end()) fail_malformed(fmt::format("missing field '{}'", key));
    return *it;
  }

  std::string child(std::string_view key) const { return path_ + "." + std::string(key); }

  double real(std::string_view key) const {
    const json& v = at(key);
    if (!v.is_number()) fail_malformed(fmt::format("'{}' must be a number", key));
    return v.get<double>();
  }

  std::int64_t integer(std::string_view key) const {
    const json& v = at(key);
    if (!v.is_number_integer()) fail_malformed(fmt::format("'{}' must be an integer", key));
    return v.get<std::int64_t>();
  }

  std::uint64_t unsigned_integer(std::string_view key) const {
    const json& v = at(key);
    if (!v.is_number_unsigned()) {
      fail_malformed(fmt::format("'{}' must be a nonnegative integer", key));
    }
    return v.get<std::uint64_t>();
  }

  std::string text(std::string_view key) const {
    const json& v = at(key);
    if (!v.is_string()) fail_malformed(fmt::format("'{}' must be a string", key));
    return v.get<std::string>();
  }

  const json& array(std::string_view key) const {
    const json& v = at(key);
    if (!v.is_array()) fail_malformed(fmt::format("'{}' must be an array", key));
    return v;
  }

  Range range(std::string_view key) const {
    const json& v = array(key);
    if (v.size() != 2 || !v[0].is_number() || !v[1].is_number()) {
      fail_malformed(fmt::format("'{}' must be a [lo, hi] pair", key));
    }
    return {v[0].get<double>(), v[1].get<double>()};
  }

  [[noreturn]] void fail_malformed(const std::string& why) const {
    throw ParseError(ParseError::Kind::Malformed, path_, path_ + ": " + why);
  }

 private:
  const json& j_;
  std::string path_;
};

int as_int(const Reader& r, std::string_view key) {
  const auto v = r.integer(key);
  if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max()) {
    r.fail_malformed(fmt::format("'{}' out of range", key));
  }
  return static_cast<int>(v);
}

Point read_point(const json& j, const std::string& path) {
  Reader r(j, path);
  r.expect_only({"x", "y"});
  return {r.real("x"), r.real("y")};
}

Layer read_layer(const Reader& r, std::string_view key) {
  const std::string name = r.text(key);
  auto layer = layer_from_string(name);
  if (!layer) {
    throw ParseError(ParseError::Kind::InvalidValue, r.child(key),
                     fmt::format("{}: unknown layer '{}'", r.child(key), name));
  }
  return *layer;
}

json parse_json(std::string_view text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(ParseError::Kind::Malformed, "$", std::string("malformed JSON: ") + e.what());
  }
}

}  // namespace

std::string serialize(const Scenario& scenario) { return scenario_json(scenario).dump(2) + "\n"; }

Scenario parse_scenario(std::string_view text) {
  const json root = parse_json(text);
  Reader r(root, "$");
  r.expect_only({"format_version", "prng", "nodes", "wardens", "tau", "alice", "bob", "k_max",
                 "layer_weights"});
  if (r.text("format_version") != kFormatVersion) {
    throw ParseError(ParseError::Kind::InvalidValue, "$.format_version",
                     "unsupported format_version " + r.text("format_version"));
  }

  Scenario s;
  s.prng = r.text("prng");
  s.tau = r.real("tau");
  s.alice = as_int(r, "alice");
  s.bob = as_int(r, "bob");
  s.k_max = as_int(r, "k_max");

  Reader weights(r.at("layer_weights"), r.child("layer_weights"));
  weights.expect_only({"physical", "network", "application"});
  s.layer_weights = {weights.real("physical"), weights.real("network"),
                     weights.real("application")};

  const json& nodes = r.array("nodes");
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const std::string npath = fmt::format("$.nodes[{}]", i);
    Reader nr(nodes[i], npath);
    nr.expect_only({"id", "position", "channels"});
    NodeSpec node;
    node.id = as_int(nr, "id");
    node.position = read_point(nr.at("position"), nr.child("position"));
    const json& channels = nr.array("channels");
    for (std::size_t k = 0; k < channels.size(); ++k) {
      Reader cr(channels[k], fmt::format("{}.channels[{}]", npath, k));
      cr.expect_only({"src", "dst", "layer", "capacity_v", "car_sigma", "covert_lo", "covert_hi"});
      Channel c;
      c.src = as_int(cr, "src");
      c.dst = as_int(cr, "dst");
      c.layer = read_layer(cr, "layer");
      c.capacity_v = cr.real("capacity_v");
      c.car_sigma = cr.real("car_sigma");
      c.covert_lo = cr.real("covert_lo");
      c.covert_hi = cr.real("covert_hi");
      node.out_channels.push_back(c);
    }
    s.nodes.push_back(std::move(node));
  }

  const json& wardens = r.array("wardens");
  for (std::size_t i = 0; i < wardens.size(); ++i) {
    const std::string wpath = fmt::format("$.wardens[{}]", i);
    Reader wr(wardens[i], wpath);
    wr.expect_only({"position", "detect_d"});
    s.wardens.push_back({read_point(wr.at("position"), wr.child("position")), wr.real("detect_d")});
  }

  if (auto violations = validate_scenario(s); !violations.empty()) {
    std::string what = "scenario violates invariants:";
    for (const auto& v : violations) what += fmt::format(" [{}: {}]", v.kind, v.detail);
    throw ParseError(ParseError::Kind::InvalidValue, "$", what, std::move(violations));
  }
  return s;
}

std::string serialize(const GenConfig& c) {
  json layers = json::object();
  for (Layer l : kAllLayers) {
    const LayerRange& r = c.layer(l);
    layers[std::string(to_string(l))] = {{"v_range", {r.v.lo, r.v.hi}},
                                         {"sigma_range", {r.sigma.lo, r.sigma.hi}},
                                         {"detect_weight", r.detect_weight}};
  }
  json j = {{"n_nodes", c.n_nodes},
            {"k_max", c.k_max},
            {"slots_per_node", {c.slots_min, c.slots_max}},
            {"n_wardens", c.n_wardens},
            {"tau", c.tau},
            {"feasible_fraction", c.feasible_fraction},
            {"layers", layers},
            {"warden_d_range", {c.warden_d.lo, c.warden_d.hi}},
            {"arena_side", c.arena_side},
            {"seed", c.seed},
            {"max_retries", c.max_retries}};
  return j.dump(2) + "\n";
}

GenConfig parse_config(std::string_view text) {
  const json root = parse_json(text);
  Reader r(root, "$");
  r.expect_only({"n_nodes", "k_max", "slots_per_node", "n_wardens", "tau", "feasible_fraction",
                 "layers", "warden_d_range", "arena_side", "seed", "max_retries"});
  GenConfig c;
  c.n_nodes = as_int(r, "n_nodes");
  c.k_max = as_int(r, "k_max");
  const Range slots = r.range("slots_per_node");
  if (slots.lo != std::floor(slots.lo) || slots.hi != std::floor(slots.hi)) {
    r.fail_malformed("'slots_per_node' must hold integers");
  }
  c.slots_min = static_cast<int>(slots.lo);
  c.slots_max = static_cast<int>(slots.hi);
  c.n_wardens = as_int(r, "n_wardens");
  c.tau = r.real("tau");
  c.feasible_fraction = r.real("feasible_fraction");
  Reader layers(r.at("layers"), r.child("layers"));
  layers.expect_only({"physical", "network", "application"});
  for (Layer l : kAllLayers) {
    const std::string key(to_string(l));
    Reader lr(layers.at(key), layers.child(key));
    lr.expect_only({"v_range", "sigma_range", "detect_weight"});
    c.layers[static_cast<std::size_t>(l)] = {lr.range("v_range"), lr.range("sigma_range"),
                                             lr.real("detect_weight")};
  }
  c.warden_d = r.range("warden_d_range");
  c.arena_side = r.real("arena_side");
  c.seed = r.unsigned_integer("seed");
  c.max_retries = as_int(r, "max_retries");
  if (auto errors = validate_config(c); !errors.empty()) {
    throw ParseError(ParseError::Kind::InvalidValue, "$", "invalid config: " + errors.front());
  }
  return c;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const std::string& path, std::string_view contents) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
  if (!out) throw std::runtime_error("short write to " + path);
}

}  // namespace covertpath
