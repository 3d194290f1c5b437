#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "covertpath/env.hpp"
#include "covertpath/nn.hpp"
#include "covertpath/rng.hpp"

namespace covertpath {

using MaskMatrix = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>;

enum class Algo { Sac, Dsac };

std::string_view to_string(Algo algo);
std::optional<Algo> algo_from_string(std::string_view name);

struct SacConfig {
  double gamma = 0.95;
  double polyak = 0.005;
  int batch = 256;
  double lr_actor = 3e-4;
  double lr_critic = 3e-4;
  double lr_alpha = 3e-4;
  // Entropy target per state is c_ent * ln(number of legal actions).
  double c_ent = 0.3;
  double init_alpha = 0.2;
  int warmup_steps = 1000;
  int updates_per_step = 1;
  std::size_t buffer_capacity = 100000;
  std::vector<int> hidden = {128, 128};
};

void validate(const SacConfig& config);

struct DiffusionConfig {
  int steps = 5;
  double beta_start = 1e-2;
  double beta_end = 2e-1;
  int time_embed_dim = 16;
  // Scale of the denoiser's output layer at initialization.
  double output_scale = 0.1;
  // Shrink equal-width hidden layers so the denoiser has about as many
  // parameters as the plain SAC actor.
  bool match_actor_params = true;
};

void validate(const DiffusionConfig& config);

/// Precomputed linear beta schedule; index t runs 1..T (index 0 unused).
struct DiffusionSchedule {
  explicit DiffusionSchedule(const DiffusionConfig& config);

  int steps = 0;
  std::vector<double> beta;
  std::vector<double> alpha_bar;
  int embed_dim = 0;

  Eigen::VectorXd embedding(int t) const;
};

// ---------------------------------------------------------------------------
// Replay buffer

struct Transition {
  std::vector<double> state;
  ActionMask mask;
  int action = 0;
  double reward = 0.0;
  std::vector<double> next_state;
  ActionMask next_mask;
  bool done = false;
};

struct Batch {
  Eigen::MatrixXd states;       // state_dim x B
  MaskMatrix masks;             // k x B
  std::vector<int> actions;
  Eigen::VectorXd rewards;
  Eigen::MatrixXd next_states;  // state_dim x B
  MaskMatrix next_masks;        // k x B; all ones for terminal entries
  Eigen::VectorXd done;
  std::vector<std::size_t> indices;

  int size() const { return static_cast<int>(actions.size()); }
};

/// Fixed-capacity FIFO of transitions with uniform sampling (with replacement).
class ReplayBuffer {
 public:
  ReplayBuffer(std::size_t capacity, int state_dim, int action_dim);

  void add(const Transition& t);
  std::size_t size() const { return size_; }
  std::size_t capacity() const { return capacity_; }
  // Total transitions ever added, including evicted ones.
  std::uint64_t added() const { return added_; }
  Transition at(std::size_t index) const;
  Batch sample(std::size_t n, Rng& rng) const;
  Batch gather(std::span<const std::size_t> indices) const;

 private:
  std::size_t capacity_;
  int state_dim_;
  int action_dim_;
  std::size_t size_ = 0;
  std::size_t head_ = 0;
  std::uint64_t added_ = 0;
  std::vector<double> states_;
  std::vector<double> next_states_;
  std::vector<std::uint8_t> masks_;
  std::vector<std::uint8_t> next_masks_;
  std::vector<int> actions_;
  std::vector<double> rewards_;
  std::vector<std::uint8_t> done_;
};

// ---------------------------------------------------------------------------
// Diffusion chain

/// Noise for a batch of chains: x_T plus one draw per step t = 2..T (z[t]).
struct ChainNoise {
  Eigen::MatrixXd x_T;
  std::vector<Eigen::MatrixXd> z;  // indexed by t; z[0] and z[1] unused

  static ChainNoise sample(const DiffusionSchedule& schedule, int k, int batch, Rng& rng);
  static ChainNoise zeros(const DiffusionSchedule& schedule, int k, int batch);
};

struct ChainTrace {
  std::vector<nn::ForwardCache> caches;  // indexed by t
};

class ChainError : public std::runtime_error {
 public:
  ChainError(int t, const std::string& what) : std::runtime_error(what), t_(t) {}
  int step() const { return t_; }

 private:
  int t_;
};

/// Runs the reverse process from x_T to x_0:
///   x_{t-1} = (x_t - beta_t / sqrt(1 - abar_t) * eps(x_t, t, s)) / sqrt(1 - beta_t)
///             + [t > 1] sqrt(beta_t) * z_t
/// The denoiser sees [state; x_t; embedding(t)]. Returns x_0 (k x B), the action
/// logits. Non-finite intermediates throw ChainError naming t.
Eigen::MatrixXd denoise_chain(const nn::ParamSet& denoiser, const DiffusionSchedule& schedule,
                              const Eigen::MatrixXd& states, const ChainNoise& noise,
                              ChainTrace* trace = nullptr);

// Backpropagates dL/dx_0 through every step, treating the noise as constant.
void denoise_chain_backward(const nn::ParamSet& denoiser, const DiffusionSchedule& schedule,
                            const ChainTrace& trace, const Eigen::MatrixXd& grad_x0,
                            nn::ParamSet& grads);

// ---------------------------------------------------------------------------
// Soft actor-critic

struct UpdateLosses {
  double critic1 = 0.0;
  double critic2 = 0.0;
  double actor = 0.0;
  double alpha_loss = 0.0;
  double alpha = 0.0;
  double entropy = 0.0;
  bool skipped = false;
  std::string diagnostic;
};

/// Actor loss sum_a pi(a|s) [alpha log pi(a|s) - min Q(s, a)] averaged over the
/// batch, and its gradient with respect to the logits. Masked actions carry no
/// probability and no gradient.
struct ActorObjective {
  double loss = 0.0;
  Eigen::MatrixXd grad_logits;
  Eigen::MatrixXd probs;
  Eigen::VectorXd entropy;
};

ActorObjective actor_objective(const Eigen::MatrixXd& logits, const MaskMatrix& masks,
                               const Eigen::MatrixXd& q_min, double alpha);

// Soft state value sum_a pi(a|s) [min Q(s, a) - alpha log pi(a|s)] per column.
Eigen::VectorXd soft_value(const Eigen::MatrixXd& probs, const Eigen::MatrixXd& q_min,
                           double alpha);

// Entropy of each column over its unmasked support.
Eigen::VectorXd masked_entropy(const Eigen::MatrixXd& probs);

/// Twin critics with Polyak targets, an auto-tuned entropy temperature, and an
/// actor whose logits come either from a plain MLP (SAC) or from a conditional
/// denoising chain (DSAC).
class SoftActorCritic {
 public:
  SoftActorCritic(Algo algo, int state_dim, int action_dim, SacConfig config,
                  DiffusionConfig diffusion, std::uint64_t seed);

  Algo algo() const { return algo_; }
  int state_dim() const { return state_dim_; }
  int action_dim() const { return action_dim_; }
  const SacConfig& config() const { return config_; }
  const DiffusionConfig& diffusion() const { return diffusion_; }
  const DiffusionSchedule& schedule() const { return schedule_; }

  // Action logits for a batch of states. DSAC draws chain noise from `rng`;
  // with rng == nullptr it runs the noise-free chain.
  Eigen::MatrixXd logits(const Eigen::MatrixXd& states, Rng* rng,
                         ChainTrace* trace = nullptr) const;
  void actor_backward(const ChainTrace& trace, const Eigen::MatrixXd& grad_logits,
                      nn::ParamSet& grads) const;

  // Stochastic policy used for exploration.
  std::vector<double> policy(std::span<const double> state, const ActionMask& mask,
                             Rng& rng) const;
  int greedy_action(std::span<const double> state, const ActionMask& mask) const;

  // y = r + gamma (1 - done) V(s') with V from the target critics.
  Eigen::VectorXd critic_targets(const Batch& batch, Rng& rng) const;
  UpdateLosses update(const Batch& batch, Rng& rng);

  double alpha() const;
  const nn::ParamSet& actor() const { return actor_; }
  nn::ParamSet& mutable_actor() { return actor_; }
  const nn::ParamSet& critic(int which) const { return which == 1 ? q1_ : q2_; }
  const nn::ParamSet& target(int which) const { return which == 1 ? q1_target_ : q2_target_; }
  nn::ParamSet& mutable_critic(int which) { return which == 1 ? q1_ : q2_; }
  nn::ParamSet& mutable_target(int which) { return which == 1 ? q1_target_ : q2_target_; }

 private:
  Algo algo_;
  int state_dim_;
  int action_dim_;
  SacConfig config_;
  DiffusionConfig diffusion_;
  DiffusionSchedule schedule_;
  nn::ParamSet actor_;
  nn::ParamSet q1_, q2_, q1_target_, q2_target_;
  nn::Adam actor_opt_, q1_opt_, q2_opt_, alpha_opt_;
  double log_alpha_;
};

nn::MlpSpec actor_spec(Algo algo, int state_dim, int action_dim, const SacConfig& config,
                       const DiffusionConfig& diffusion);
nn::MlpSpec critic_spec(int state_dim, int action_dim, const SacConfig& config);

// ---------------------------------------------------------------------------
// Checkpoints, policies, evaluation

struct AgentCheckpoint {
  Algo algo = Algo::Sac;
  int state_dim = 0;
  int action_dim = 0;
  DiffusionConfig diffusion;
  nn::ParamSet actor;
};

AgentCheckpoint make_checkpoint(const SoftActorCritic& agent);
std::string serialize(const AgentCheckpoint& checkpoint);
AgentCheckpoint parse_checkpoint(std::string_view text);

class Policy {
 public:
  virtual ~Policy() = default;
  virtual int act(const EnvState& state, std::span<const double> observation,
                  const ActionMask& mask) const = 0;
};

/// Greedy (argmax) policy of a checkpointed actor.
class CheckpointPolicy : public Policy {
 public:
  explicit CheckpointPolicy(AgentCheckpoint checkpoint);
  int act(const EnvState& state, std::span<const double> observation,
          const ActionMask& mask) const override;
  const AgentCheckpoint& checkpoint() const { return checkpoint_; }

 private:
  AgentCheckpoint checkpoint_;
  DiffusionSchedule schedule_;
};

/// Replays a fixed channel sequence; falls back to the first legal slot.
class FixedPathPolicy : public Policy {
 public:
  explicit FixedPathPolicy(std::vector<ChannelRef> path) : path_(std::move(path)) {}
  int act(const EnvState& state, std::span<const double> observation,
          const ActionMask& mask) const override;

 private:
  std::vector<ChannelRef> path_;
};

/// Samples uniformly among legal actions.
class UniformPolicy : public Policy {
 public:
  explicit UniformPolicy(std::uint64_t seed) : rng_(make_rng(seed, 17)) {}
  int act(const EnvState& state, std::span<const double> observation,
          const ActionMask& mask) const override;

 private:
  mutable Rng rng_;
};

struct EvalReport {
  int episodes = 0;
  double mean_return = 0.0;
  double success_rate = 0.0;
  // Mean of (1 - p_detect) over every channel selected in every episode.
  double mean_accuracy = 0.0;
  std::vector<ChannelRef> modal_path;
  std::vector<std::vector<ChannelRef>> paths;
};

EvalReport evaluate(const Policy& policy, const CovertPathEnv& env, int n_episodes);
// Throws ContractError when the checkpoint does not fit the scenario.
EvalReport evaluate(const AgentCheckpoint& checkpoint, const Scenario& scenario, int n_episodes,
                    EnvConfig env_config = {});

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  SacConfig sac;
  DiffusionConfig diffusion;
  EnvConfig env;
  int total_steps = 100000;
  int eval_every = 1000;
  int eval_episodes = 20;
  int max_consecutive_skips = 100;
};

struct TrainHooks {
  std::function<void(std::uint64_t episode, const StepResult&)> on_transition;
  std::function<void(std::span<const double> probs, const ActionMask& mask)> on_policy;
  std::function<void(int step, const EvalReport& report)> on_eval;
};

struct EpisodeRecord {
  int step = 0;
  int episode = 0;
  double episode_return = 0.0;
  bool success = false;
};

struct EvalRecord {
  int step = 0;
  int episode = 0;
  double eval_return = 0.0;
  double eval_accuracy = 0.0;
  double success_rate = 0.0;
};

struct LossRecord {
  int step = 0;
  UpdateLosses losses;
};

struct TrainReport {
  Algo algo = Algo::Sac;
  std::uint64_t run_seed = 0;
  int steps_done = 0;
  std::vector<EpisodeRecord> episodes;
  std::vector<EvalRecord> evals;
  std::vector<LossRecord> losses;
  std::optional<AgentCheckpoint> best;
  double best_eval_return = 0.0;
  AgentCheckpoint final_checkpoint;
  bool aborted = false;
  std::string abort_reason;

  double final_eval_return() const { return evals.empty() ? 0.0 : evals.back().eval_return; }
  double final_eval_accuracy() const { return evals.empty() ? 0.0 : evals.back().eval_accuracy; }
};

TrainReport train(const Scenario& scenario, Algo algo, const TrainConfig& config,
                  std::uint64_t run_seed, const TrainHooks& hooks = {});

// CSV: step,episode,episode_return,success,critic1_loss,critic2_loss,actor_loss,
// alpha_ent,eval_return,eval_accuracy. Episode rows leave eval columns empty and
// eval rows leave episode columns empty.
std::string train_csv(const TrainReport& report);

// First eval step that starts a run of `sustain` consecutive evals at or above
// `threshold`; nullopt if never reached.
std::optional<int> steps_to_threshold(const std::vector<EvalRecord>& evals, double threshold,
                                      int sustain = 3);

}  // namespace covertpath
