#include "covertpath/nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "covertpath/model.hpp"

namespace covertpath::nn {

std::size_t MlpSpec::param_count() const {
  std::size_t total = 0;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    total += static_cast<std::size_t>(widths[i + 1]) * static_cast<std::size_t>(widths[i] + 1);
  }
  return total;
}

void validate(const MlpSpec& spec) {
  if (spec.widths.size() < 2) throw ContractError("MlpSpec needs at least two widths");
  for (int w : spec.widths) {
    if (w <= 0) throw ContractError(fmt::format("MlpSpec width {} is not positive", w));
  }
}

ParamSet::ParamSet(MlpSpec spec) : spec_(std::move(spec)) {
  validate(spec_);
  std::size_t at = 0;
  for (std::size_t i = 0; i < spec_.layer_count(); ++i) {
    offsets_.push_back(at);
    at += static_cast<std::size_t>(spec_.widths[i + 1]) * static_cast<std::size_t>(spec_.widths[i]);
    offsets_.push_back(at);
    at += static_cast<std::size_t>(spec_.widths[i + 1]);
  }
  data_.assign(at, 0.0);
}

Eigen::Map<const Eigen::MatrixXd> ParamSet::weight(std::size_t layer) const {
  return {data_.data() + offsets_[2 * layer], spec_.widths[layer + 1], spec_.widths[layer]};
}

Eigen::Map<const Eigen::VectorXd> ParamSet::bias(std::size_t layer) const {
  return {data_.data() + offsets_[2 * layer + 1], spec_.widths[layer + 1]};
}

Eigen::Map<Eigen::MatrixXd> ParamSet::weight(std::size_t layer) {
  ++generation_;
  return {data_.data() + offsets_[2 * layer], spec_.widths[layer + 1], spec_.widths[layer]};
}

Eigen::Map<Eigen::VectorXd> ParamSet::bias(std::size_t layer) {
  ++generation_;
  return {data_.data() + offsets_[2 * layer + 1], spec_.widths[layer + 1]};
}

void ParamSet::set_zero() {
  ++generation_;
  std::fill(data_.begin(), data_.end(), 0.0);
}

bool ParamSet::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
}

void init_uniform(ParamSet& params, Rng& rng, double output_scale) {
  const std::size_t layers = params.spec().layer_count();
  for (std::size_t i = 0; i < layers; ++i) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(params.spec().widths[i]));
    const double scale = i + 1 == layers ? output_scale : 1.0;
    auto w = params.weight(i);
    auto b = params.bias(i);
    // Column-major fill order keeps initialization reproducible.
    for (Eigen::Index k = 0; k < w.size(); ++k) w.data()[k] = scale * uniform(rng, -bound, bound);
    for (Eigen::Index k = 0; k < b.size(); ++k) b[k] = scale * uniform(rng, -bound, bound);
  }
}

void polyak_update(ParamSet& target, const ParamSet& source, double rho) {
  if (!(target.spec() == source.spec())) throw ContractError("polyak_update: spec mismatch");
  auto t = target.flat();
  auto s = source.flat();
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = (1.0 - rho) * t[i] + rho * s[i];
}

double max_abs_diff(const ParamSet& a, const ParamSet& b) {
  if (a.size() != b.size()) throw ContractError("max_abs_diff: size mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.flat()[i] - b.flat()[i]));
  return m;
}

std::uint64_t ForwardCache::kink_signature() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t layer = 0; layer + 1 < pre.size(); ++layer) {
    const auto& z = pre[layer];
    for (Eigen::Index k = 0; k < z.size(); ++k) {
      h ^= z.data()[k] > 0.0 ? 1u : 0u;
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

namespace {

void activate(Eigen::MatrixXd& z, Activation act) {
  if (act == Activation::Relu) {
    z = z.cwiseMax(0.0);
  } else {
    z = z.array().tanh().matrix();
  }
}

}  // namespace

Eigen::MatrixXd forward(const ParamSet& params, const Eigen::MatrixXd& input,
                        ForwardCache* cache) {
  const MlpSpec& spec = params.spec();
  if (input.rows() != spec.input_dim()) {
    throw ContractError(fmt::format("forward: input has {} rows, expected {}", input.rows(),
                                    spec.input_dim()));
  }
  const std::size_t layers = spec.layer_count();
  if (cache) {
    cache->owner = &params;
    cache->generation = params.generation();
    cache->inputs.resize(layers);
    cache->pre.resize(layers);
  }
  Eigen::MatrixXd a = input;
  for (std::size_t i = 0; i < layers; ++i) {
    Eigen::MatrixXd z = params.weight(i) * a;
    z.colwise() += params.bias(i);
    if (cache) {
      cache->inputs[i] = std::move(a);
      cache->pre[i] = z;
    }
    if (i + 1 < layers) activate(z, spec.activation);
    a = std::move(z);
  }
  return a;
}

Eigen::VectorXd forward(const ParamSet& params, const Eigen::VectorXd& input) {
  return forward(params, Eigen::MatrixXd(input), nullptr).col(0);
}

Eigen::MatrixXd backward(const ParamSet& params, const ForwardCache& cache,
                         const Eigen::MatrixXd& grad_output, ParamSet& grads) {
  const MlpSpec& spec = params.spec();
  const std::size_t layers = spec.layer_count();
  if (cache.owner != &params || cache.generation != params.generation()) {
    throw ContractError("backward: cache is stale or belongs to other parameters");
  }
  if (cache.pre.size() != layers || !(grads.spec() == spec)) {
    throw ContractError("backward: cache or gradient shape mismatch");
  }
  if (grad_output.rows() != spec.output_dim() || grad_output.cols() != cache.pre.back().cols()) {
    throw ContractError("backward: output gradient shape mismatch");
  }
  Eigen::MatrixXd delta = grad_output;
  for (std::size_t i = layers; i-- > 0;) {
    if (i + 1 < layers) {
      const auto& z = cache.pre[i];
      if (spec.activation == Activation::Relu) {
        delta = (z.array() > 0.0).select(delta, 0.0);
      } else {
        delta = (delta.array() * (1.0 - z.array().tanh().square())).matrix();
      }
    }
    grads.weight(i).noalias() += delta * cache.inputs[i].transpose();
    grads.bias(i) += delta.rowwise().sum();
    delta = params.weight(i).transpose() * delta;
  }
  return delta;
}

std::vector<double> masked_softmax(std::span<const double> logits, const ActionMask& mask) {
  if (mask.size() != logits.size()) throw ContractError("masked_softmax: mask size mismatch");
  double top = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (mask[i]) top = std::max(top, logits[i]);
  }
  if (top == -std::numeric_limits<double>::infinity()) {
    throw ContractError("masked_softmax: every action is masked");
  }
  std::vector<double> p(logits.size(), 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (mask[i]) total += p[i] = std::exp(logits[i] - top);
  }
  for (double& x : p) x /= total;
  return p;
}

Eigen::MatrixXd masked_softmax(
    const Eigen::MatrixXd& logits,
    const Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>& mask) {
  if (mask.rows() != logits.rows() || mask.cols() != logits.cols()) {
    throw ContractError("masked_softmax: mask shape mismatch");
  }
  Eigen::MatrixXd p = Eigen::MatrixXd::Zero(logits.rows(), logits.cols());
  for (Eigen::Index c = 0; c < logits.cols(); ++c) {
    double top = -std::numeric_limits<double>::infinity();
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
      if (mask(r, c)) top = std::max(top, logits(r, c));
    }
    if (top == -std::numeric_limits<double>::infinity()) {
      throw ContractError("masked_softmax: every action is masked");
    }
    double total = 0.0;
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
      if (mask(r, c)) total += p(r, c) = std::exp(logits(r, c) - top);
    }
    p.col(c) /= total;
  }
  return p;
}

Adam::Adam(std::size_t n_params, AdamConfig config)
    : config_(config), m_(n_params, 0.0), v_(n_params, 0.0) {}

bool Adam::step(std::span<double> params, std::span<const double> grads,
                std::string* diagnostic) {
  if (params.size() != m_.size() || grads.size() != m_.size()) {
    throw ContractError("Adam::step: shape mismatch");
  }
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!std::isfinite(grads[i])) {
      if (diagnostic) *diagnostic = fmt::format("non-finite gradient {} at index {}", grads[i], i);
      return false;
    }
  }
  ++steps_;
  const double b1 = config_.beta1;
  const double b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = b1 * m_[i] + (1.0 - b1) * grads[i];
    v_[i] = b2 * v_[i] + (1.0 - b2) * grads[i] * grads[i];
    params[i] -= config_.lr * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + config_.eps);
  }
  return true;
}

GradCheckReport finite_difference_check(ParamSet params, const ParamSet& analytic,
                                        const std::function<Probe(const ParamSet&)>& loss,
                                        double h, std::span<const std::size_t> coords,
                                        double abs_floor) {
  if (analytic.size() != params.size()) throw ContractError("gradient check: size mismatch");
  std::vector<std::size_t> all;
  if (coords.empty()) {
    all.resize(params.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    coords = all;
  }
  const std::uint64_t base = loss(params).kink_signature;
  GradCheckReport report;
  for (std::size_t i : coords) {
    const double original = params.flat()[i];
    params.flat()[i] = original + h;
    const Probe up = loss(params);
    params.flat()[i] = original - h;
    const Probe down = loss(params);
    params.flat()[i] = original;
    if (up.kink_signature != base || down.kink_signature != base) {
      ++report.skipped_kinks;
      continue;
    }
    const double numeric = (up.value - down.value) / (2.0 * h);
    const double a = analytic.flat()[i];
    const double denom = std::max({std::abs(a), std::abs(numeric), abs_floor});
    report.max_rel_error = std::max(report.max_rel_error, std::abs(a - numeric) / denom);
    ++report.checked;
  }
  return report;
}

nlohmann::json to_json(const ParamSet& params) {
  return {{"format", "covertpath-mlp"},
          {"version", 1},
          {"widths", params.spec().widths},
          {"activation", params.spec().activation == Activation::Relu ? "relu" : "tanh"},
          {"values", std::vector<double>(params.flat().begin(), params.flat().end())}};
}

ParamSet params_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format") != "covertpath-mlp" || j.at("version") != 1) {
      throw ContractError("unsupported parameter container");
    }
    MlpSpec spec;
    spec.widths = j.at("widths").get<std::vector<int>>();
    const std::string act = j.at("activation").get<std::string>();
    if (act != "relu" && act != "tanh") throw ContractError("unknown activation " + act);
    spec.activation = act == "relu" ? Activation::Relu : Activation::Tanh;
    ParamSet params(spec);
    const auto values = j.at("values").get<std::vector<double>>();
    if (values.size() != params.size()) {
      throw ContractError(fmt::format("parameter container holds {} values, spec needs {}",
                                      values.size(), params.size()));
    }
    std::copy(values.begin(), values.end(), params.flat().begin());
    return params;
  } catch (const nlohmann::json::exception& e) {
    throw ContractError(std::string("malformed parameter container: ") + e.what());
  }
}

}  // namespace covertpath::nn
