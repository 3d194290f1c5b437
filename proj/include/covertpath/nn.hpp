#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "covertpath/env.hpp"
#include "covertpath/rng.hpp"

namespace covertpath::nn {

enum class Activation { Relu, Tanh };

struct MlpSpec {
  // input -> hidden... -> output; hidden layers use `activation`, output is linear.
  std::vector<int> widths;
  Activation activation = Activation::Relu;

  int input_dim() const { return widths.front(); }
  int output_dim() const { return widths.back(); }
  std::size_t layer_count() const { return widths.size() - 1; }
  std::size_t param_count() const;
  bool operator==(const MlpSpec&) const = default;
};

void validate(const MlpSpec& spec);

/// Weights and biases of an MLP stored in one flat buffer. Layer i maps to a
/// (widths[i+1] x widths[i]) weight matrix followed by a bias vector.
///
/// Every non-const access bumps generation(), which lets forward caches detect
/// that the parameters changed underneath them.
class ParamSet {
 public:
  ParamSet() = default;
  explicit ParamSet(MlpSpec spec);

  const MlpSpec& spec() const { return spec_; }
  std::size_t size() const { return data_.size(); }
  std::uint64_t generation() const { return generation_; }

  std::span<const double> flat() const { return data_; }
  std::span<double> flat() {
    ++generation_;
    return data_;
  }

  Eigen::Map<const Eigen::MatrixXd> weight(std::size_t layer) const;
  Eigen::Map<const Eigen::VectorXd> bias(std::size_t layer) const;
  Eigen::Map<Eigen::MatrixXd> weight(std::size_t layer);
  Eigen::Map<Eigen::VectorXd> bias(std::size_t layer);

  void set_zero();
  bool all_finite() const;

  bool operator==(const ParamSet& other) const {
    return spec_ == other.spec_ && data_ == other.data_;
  }

 private:
  MlpSpec spec_;
  // Aligned so that vectorized kernels see the same layout on every allocation;
  // otherwise results can differ bitwise between two copies of the same params.
  std::vector<double, Eigen::aligned_allocator<double>> data_;
  std::vector<std::size_t> offsets_;
  std::uint64_t generation_ = 0;
};

// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)] for weights and biases; the last
// layer is additionally multiplied by output_scale.
void init_uniform(ParamSet& params, Rng& rng, double output_scale = 1.0);

// target <- (1 - rho) * target + rho * source
void polyak_update(ParamSet& target, const ParamSet& source, double rho);

double max_abs_diff(const ParamSet& a, const ParamSet& b);

/// Activations recorded by forward(); one column per sample.
struct ForwardCache {
  const ParamSet* owner = nullptr;
  std::uint64_t generation = 0;
  // inputs[i] feeds layer i; pre[i] is layer i's affine output.
  std::vector<Eigen::MatrixXd> inputs;
  std::vector<Eigen::MatrixXd> pre;

  // Hash of the ReLU on/off pattern; finite-difference probes that change it
  // straddle a kink.
  std::uint64_t kink_signature() const;
};

Eigen::MatrixXd forward(const ParamSet& params, const Eigen::MatrixXd& input,
                        ForwardCache* cache = nullptr);
Eigen::VectorXd forward(const ParamSet& params, const Eigen::VectorXd& input);

// Accumulates parameter gradients into `grads` and returns the input gradient.
// Throws ContractError if the cache was produced by other or since-modified params.
Eigen::MatrixXd backward(const ParamSet& params, const ForwardCache& cache,
                         const Eigen::MatrixXd& grad_output, ParamSet& grads);

/// Softmax restricted to unmasked entries; masked entries are exactly zero.
/// Throws ContractError when nothing is unmasked.
std::vector<double> masked_softmax(std::span<const double> logits, const ActionMask& mask);

// Column-wise version; mask columns are samples.
Eigen::MatrixXd masked_softmax(const Eigen::MatrixXd& logits,
                               const Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>& mask);

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  Adam() = default;
  Adam(std::size_t n_params, AdamConfig config);

  // Bias-corrected Adam update. Non-finite gradients leave parameters and
  // moments untouched and return false with `diagnostic` set.
  bool step(std::span<double> params, std::span<const double> grads,
            std::string* diagnostic = nullptr);
  bool step(ParamSet& params, const ParamSet& grads, std::string* diagnostic = nullptr) {
    return step(params.flat(), grads.flat(), diagnostic);
  }

  std::uint64_t steps() const { return steps_; }
  const AdamConfig& config() const { return config_; }
  std::span<const double> first_moment() const { return m_; }
  std::span<const double> second_moment() const { return v_; }

 private:
  AdamConfig config_;
  std::vector<double> m_;
  std::vector<double> v_;
  std::uint64_t steps_ = 0;
};

struct Probe {
  double value = 0.0;
  std::uint64_t kink_signature = 0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped_kinks = 0;
};

/// Compares analytic gradients against central differences, coordinate by
/// coordinate. Relative error uses max(|analytic|, |numeric|, abs_floor) as the
/// denominator. Coordinates whose +h / -h probes change the kink signature are
/// skipped and counted. An empty `coords` checks every parameter.
GradCheckReport finite_difference_check(ParamSet params, const ParamSet& analytic,
                                        const std::function<Probe(const ParamSet&)>& loss,
                                        double h = 1e-5, std::span<const std::size_t> coords = {},
                                        double abs_floor = 1e-6);

nlohmann::json to_json(const ParamSet& params);
ParamSet params_from_json(const nlohmann::json& j);

}  // namespace covertpath::nn
