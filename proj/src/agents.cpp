#include "covertpath/agents.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include <fmt/format.h>

namespace covertpath {

std::string_view to_string(Algo algo) { return algo == Algo::Sac ? "sac" : "dsac"; }

std::optional<Algo> algo_from_string(std::string_view name) {
  if (name == "sac") return Algo::Sac;
  if (name == "dsac") return Algo::Dsac;
  return std::nullopt;
}

void validate(const SacConfig& c) {
  if (!(c.gamma >= 0.0 && c.gamma < 1.0))
    throw ContractError(fmt::format("gamma must lie in [0, 1), got {}", c.gamma));
  if (!(c.polyak > 0.0 && c.polyak <= 1.0))
    throw ContractError(fmt::format("polyak must lie in (0, 1], got {}", c.polyak));
  if (c.batch < 1) throw ContractError("batch must be positive");
  if (!(c.c_ent >= 0.0)) throw ContractError("c_ent must be non-negative");
  if (!(c.init_alpha > 0.0)) throw ContractError("init_alpha must be positive");
  if (c.lr_actor <= 0.0 || c.lr_critic <= 0.0 || c.lr_alpha < 0.0)
    throw ContractError("learning rates must be positive");
  if (c.warmup_steps < 0 || c.updates_per_step < 0) throw ContractError("negative schedule");
  if (c.buffer_capacity == 0) throw ContractError("buffer capacity must be positive");
  for (int w : c.hidden) {
    if (w <= 0) throw ContractError("hidden widths must be positive");
  }
}

void validate(const DiffusionConfig& c) {
  if (c.steps < 1) throw ContractError("diffusion steps must be >= 1");
  if (!(c.beta_start > 0.0 && c.beta_end < 1.0 && c.beta_start <= c.beta_end))
    throw ContractError(fmt::format("beta schedule {} -> {} is not ascending within (0, 1)",
                                    c.beta_start, c.beta_end));
  if (c.steps > 1 && c.beta_start == c.beta_end)
    throw ContractError("beta schedule must be strictly ascending");
  if (c.time_embed_dim < 2 || c.time_embed_dim % 2 != 0)
    throw ContractError("time embedding dimension must be even and >= 2");
  if (!(c.output_scale > 0.0)) throw ContractError("output_scale must be positive");
}

DiffusionSchedule::DiffusionSchedule(const DiffusionConfig& config)
    : steps(config.steps), embed_dim(config.time_embed_dim) {
  validate(config);
  beta.assign(static_cast<std::size_t>(steps) + 1, 0.0);
  alpha_bar.assign(static_cast<std::size_t>(steps) + 1, 1.0);
  for (int t = 1; t <= steps; ++t) {
    const double frac = steps == 1 ? 0.0 : static_cast<double>(t - 1) / (steps - 1);
    beta[t] = config.beta_start + (config.beta_end - config.beta_start) * frac;
    alpha_bar[t] = alpha_bar[t - 1] * (1.0 - beta[t]);
  }
}

Eigen::VectorXd DiffusionSchedule::embedding(int t) const {
  Eigen::VectorXd e(embed_dim);
  const int half = embed_dim / 2;
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * i / half);
    e[2 * i] = std::sin(t * freq);
    e[2 * i + 1] = std::cos(t * freq);
  }
  return e;
}

// ---------------------------------------------------------------------------

ReplayBuffer::ReplayBuffer(std::size_t capacity, int state_dim, int action_dim)
    : capacity_(capacity), state_dim_(state_dim), action_dim_(action_dim) {
  if (capacity == 0 || state_dim <= 0 || action_dim <= 0)
    throw ContractError("replay buffer needs positive capacity and dimensions");
}

void ReplayBuffer::add(const Transition& t) {
  const auto sd = static_cast<std::size_t>(state_dim_);
  const auto k = static_cast<std::size_t>(action_dim_);
  if (t.state.size() != sd || t.next_state.size() != sd || t.mask.size() != k)
    throw ContractError("transition does not match buffer dimensions");
  if (!t.done && t.next_mask.size() != k) throw ContractError("missing next mask");

  const std::size_t pos = static_cast<std::size_t>(added_ % capacity_);
  if (size_ < capacity_) {
    states_.resize(states_.size() + sd);
    next_states_.resize(next_states_.size() + sd);
    masks_.resize(masks_.size() + k);
    next_masks_.resize(next_masks_.size() + k);
    actions_.push_back(0);
    rewards_.push_back(0.0);
    done_.push_back(0);
    ++size_;
  }
  std::copy(t.state.begin(), t.state.end(), states_.begin() + static_cast<std::ptrdiff_t>(pos * sd));
  std::copy(t.next_state.begin(), t.next_state.end(),
            next_states_.begin() + static_cast<std::ptrdiff_t>(pos * sd));
  std::copy(t.mask.begin(), t.mask.end(), masks_.begin() + static_cast<std::ptrdiff_t>(pos * k));
  // Terminal entries get an all-ones next mask; their bootstrap term is zeroed anyway.
  for (std::size_t j = 0; j < k; ++j) next_masks_[pos * k + j] = t.done ? 1 : t.next_mask[j];
  actions_[pos] = t.action;
  rewards_[pos] = t.reward;
  done_[pos] = t.done ? 1 : 0;
  head_ = (pos + 1) % capacity_;
  ++added_;
}

Transition ReplayBuffer::at(std::size_t index) const {
  if (index >= size_) throw ContractError("replay index out of range");
  const auto sd = static_cast<std::size_t>(state_dim_);
  const auto k = static_cast<std::size_t>(action_dim_);
  Transition t;
  t.state.assign(states_.begin() + static_cast<std::ptrdiff_t>(index * sd),
                 states_.begin() + static_cast<std::ptrdiff_t>((index + 1) * sd));
  t.next_state.assign(next_states_.begin() + static_cast<std::ptrdiff_t>(index * sd),
                      next_states_.begin() + static_cast<std::ptrdiff_t>((index + 1) * sd));
  t.mask.assign(masks_.begin() + static_cast<std::ptrdiff_t>(index * k),
                masks_.begin() + static_cast<std::ptrdiff_t>((index + 1) * k));
  t.next_mask.assign(next_masks_.begin() + static_cast<std::ptrdiff_t>(index * k),
                     next_masks_.begin() + static_cast<std::ptrdiff_t>((index + 1) * k));
  t.action = actions_[index];
  t.reward = rewards_[index];
  t.done = done_[index] != 0;
  return t;
}

Batch ReplayBuffer::sample(std::size_t n, Rng& rng) const {
  if (size_ == 0) throw ContractError("cannot sample an empty replay buffer");
  std::uniform_int_distribution<std::size_t> pick(0, size_ - 1);
  std::vector<std::size_t> idx(n);
  for (auto& i : idx) i = pick(rng);
  return gather(idx);
}

Batch ReplayBuffer::gather(std::span<const std::size_t> indices) const {
  const int B = static_cast<int>(indices.size());
  Batch b;
  b.states.resize(state_dim_, B);
  b.next_states.resize(state_dim_, B);
  b.masks.resize(action_dim_, B);
  b.next_masks.resize(action_dim_, B);
  b.actions.resize(indices.size());
  b.rewards.resize(B);
  b.done.resize(B);
  b.indices.assign(indices.begin(), indices.end());
  const auto sd = static_cast<std::size_t>(state_dim_);
  const auto k = static_cast<std::size_t>(action_dim_);
  for (int c = 0; c < B; ++c) {
    const std::size_t i = indices[static_cast<std::size_t>(c)];
    if (i >= size_) throw ContractError("replay index out of range");
    std::copy_n(states_.data() + i * sd, sd, b.states.col(c).data());
    std::copy_n(next_states_.data() + i * sd, sd, b.next_states.col(c).data());
    std::copy_n(masks_.data() + i * k, k, b.masks.col(c).data());
    std::copy_n(next_masks_.data() + i * k, k, b.next_masks.col(c).data());
    b.actions[static_cast<std::size_t>(c)] = actions_[i];
    b.rewards[c] = rewards_[i];
    b.done[c] = done_[i];
  }
  return b;
}

// ---------------------------------------------------------------------------

namespace {

Eigen::MatrixXd gaussian(int rows, int cols, Rng& rng) {
  std::normal_distribution<double> n01(0.0, 1.0);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n01(rng);
  return m;
}

}  // namespace

ChainNoise ChainNoise::sample(const DiffusionSchedule& schedule, int k, int batch, Rng& rng) {
  ChainNoise n;
  n.x_T = gaussian(k, batch, rng);
  n.z.resize(static_cast<std::size_t>(schedule.steps) + 1);
  for (int t = schedule.steps; t >= 2; --t) n.z[t] = gaussian(k, batch, rng);
  return n;
}

ChainNoise ChainNoise::zeros(const DiffusionSchedule& schedule, int k, int batch) {
  ChainNoise n;
  n.x_T = Eigen::MatrixXd::Zero(k, batch);
  n.z.resize(static_cast<std::size_t>(schedule.steps) + 1);
  for (int t = schedule.steps; t >= 2; --t) n.z[t] = Eigen::MatrixXd::Zero(k, batch);
  return n;
}

Eigen::MatrixXd denoise_chain(const nn::ParamSet& denoiser, const DiffusionSchedule& schedule,
                              const Eigen::MatrixXd& states, const ChainNoise& noise,
                              ChainTrace* trace) {
  const Eigen::Index k = noise.x_T.rows();
  const Eigen::Index B = noise.x_T.cols();
  const Eigen::Index d = states.rows();
  if (states.cols() != B) throw ContractError("state batch and noise batch differ");
  if (denoiser.spec().input_dim() != d + k + schedule.embed_dim ||
      denoiser.spec().output_dim() != k)
    throw ContractError("denoiser shape does not match state, logits and embedding");
  if (static_cast<int>(noise.z.size()) != schedule.steps + 1)
    throw ContractError("noise does not match the number of chain steps");

  Eigen::MatrixXd input(d + k + schedule.embed_dim, B);
  input.topRows(d) = states;
  Eigen::MatrixXd x = noise.x_T;
  if (trace) trace->caches.assign(static_cast<std::size_t>(schedule.steps) + 1, {});
  for (int t = schedule.steps; t >= 1; --t) {
    input.middleRows(d, k) = x;
    input.bottomRows(schedule.embed_dim) = schedule.embedding(t).replicate(1, B);
    const Eigen::MatrixXd eps =
        nn::forward(denoiser, input, trace ? &trace->caches[static_cast<std::size_t>(t)] : nullptr);
    const double c1 = 1.0 / std::sqrt(1.0 - schedule.beta[t]);
    const double c2 = schedule.beta[t] / std::sqrt(1.0 - schedule.alpha_bar[t]);
    x = c1 * (x - c2 * eps);
    if (t > 1) x += std::sqrt(schedule.beta[t]) * noise.z[static_cast<std::size_t>(t)];
    if (!x.allFinite()) throw ChainError(t, fmt::format("non-finite logits at chain step {}", t));
  }
  return x;
}

void denoise_chain_backward(const nn::ParamSet& denoiser, const DiffusionSchedule& schedule,
                            const ChainTrace& trace, const Eigen::MatrixXd& grad_x0,
                            nn::ParamSet& grads) {
  if (static_cast<int>(trace.caches.size()) != schedule.steps + 1)
    throw ContractError("chain trace does not match the schedule");
  const Eigen::Index k = grad_x0.rows();
  const Eigen::Index d = denoiser.spec().input_dim() - k - schedule.embed_dim;
  Eigen::MatrixXd g = grad_x0;
  for (int t = 1; t <= schedule.steps; ++t) {
    const double c1 = 1.0 / std::sqrt(1.0 - schedule.beta[t]);
    const double c2 = schedule.beta[t] / std::sqrt(1.0 - schedule.alpha_bar[t]);
    const Eigen::MatrixXd g_in =
        nn::backward(denoiser, trace.caches[static_cast<std::size_t>(t)], -c1 * c2 * g, grads);
    g = c1 * g + g_in.middleRows(d, k);
  }
}

// ---------------------------------------------------------------------------

namespace {

// log of the masked softmax; masked entries are left at 0.
Eigen::MatrixXd masked_log_softmax(const Eigen::MatrixXd& logits, const MaskMatrix& masks) {
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(logits.rows(), logits.cols());
  for (Eigen::Index c = 0; c < logits.cols(); ++c) {
    double hi = -std::numeric_limits<double>::infinity();
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
      if (masks(r, c)) hi = std::max(hi, logits(r, c));
    }
    double total = 0.0;
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
      if (masks(r, c)) total += std::exp(logits(r, c) - hi);
    }
    const double log_z = hi + std::log(total);
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
      if (masks(r, c)) out(r, c) = logits(r, c) - log_z;
    }
  }
  return out;
}

double plogp(double p) { return p > 0.0 ? p * std::log(p) : 0.0; }

}  // namespace

ActorObjective actor_objective(const Eigen::MatrixXd& logits, const MaskMatrix& masks,
                               const Eigen::MatrixXd& q_min, double alpha) {
  const Eigen::Index B = logits.cols();
  ActorObjective out;
  out.probs = nn::masked_softmax(logits, masks);
  const Eigen::MatrixXd logp = masked_log_softmax(logits, masks);
  out.grad_logits = Eigen::MatrixXd::Zero(logits.rows(), B);
  out.entropy.resize(B);
  for (Eigen::Index c = 0; c < B; ++c) {
    double mean_f = 0.0;
    double h = 0.0;
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
      if (!masks(r, c)) continue;
      const double p = out.probs(r, c);
      mean_f += p * (alpha * logp(r, c) - q_min(r, c));
      h -= p * logp(r, c);
    }
    out.loss += mean_f;
    out.entropy[c] = h;
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
      if (!masks(r, c)) continue;
      const double f = alpha * logp(r, c) - q_min(r, c);
      out.grad_logits(r, c) = out.probs(r, c) * (f - mean_f) / static_cast<double>(B);
    }
  }
  out.loss /= static_cast<double>(B);
  return out;
}

Eigen::VectorXd soft_value(const Eigen::MatrixXd& probs, const Eigen::MatrixXd& q_min,
                           double alpha) {
  Eigen::VectorXd v(probs.cols());
  for (Eigen::Index c = 0; c < probs.cols(); ++c) {
    double s = 0.0;
    for (Eigen::Index r = 0; r < probs.rows(); ++r) {
      if (probs(r, c) > 0.0) s += probs(r, c) * q_min(r, c) - alpha * plogp(probs(r, c));
    }
    v[c] = s;
  }
  return v;
}

Eigen::VectorXd masked_entropy(const Eigen::MatrixXd& probs) {
  Eigen::VectorXd h(probs.cols());
  for (Eigen::Index c = 0; c < probs.cols(); ++c) {
    double s = 0.0;
    for (Eigen::Index r = 0; r < probs.rows(); ++r) s -= plogp(probs(r, c));
    h[c] = s;
  }
  return h;
}

nn::MlpSpec actor_spec(Algo algo, int state_dim, int action_dim, const SacConfig& config,
                       const DiffusionConfig& diffusion) {
  auto build = [&](int input, const std::vector<int>& hidden) {
    nn::MlpSpec spec;
    spec.widths.push_back(input);
    spec.widths.insert(spec.widths.end(), hidden.begin(), hidden.end());
    spec.widths.push_back(action_dim);
    return spec;
  };
  const nn::MlpSpec plain = build(state_dim, config.hidden);
  if (algo == Algo::Sac) return plain;
  const int input = state_dim + action_dim + diffusion.time_embed_dim;
  const bool equal = !config.hidden.empty() &&
                     std::all_of(config.hidden.begin(), config.hidden.end(),
                                 [&](int w) { return w == config.hidden.front(); });
  if (!diffusion.match_actor_params || !equal) return build(input, config.hidden);

  const auto target = static_cast<double>(plain.param_count());
  std::vector<int> best = config.hidden;
  double best_gap = std::numeric_limits<double>::infinity();
  for (int w = 1; w <= config.hidden.front(); ++w) {
    const std::vector<int> hidden(config.hidden.size(), w);
    const double gap = std::abs(static_cast<double>(build(input, hidden).param_count()) - target);
    if (gap < best_gap) {
      best_gap = gap;
      best = hidden;
    }
  }
  return build(input, best);
}

nn::MlpSpec critic_spec(int state_dim, int action_dim, const SacConfig& config) {
  nn::MlpSpec spec;
  spec.widths.push_back(state_dim);
  spec.widths.insert(spec.widths.end(), config.hidden.begin(), config.hidden.end());
  spec.widths.push_back(action_dim);
  return spec;
}

SoftActorCritic::SoftActorCritic(Algo algo, int state_dim, int action_dim, SacConfig config,
                                 DiffusionConfig diffusion, std::uint64_t seed)
    : algo_(algo),
      state_dim_(state_dim),
      action_dim_(action_dim),
      config_(std::move(config)),
      diffusion_(diffusion),
      schedule_(diffusion),
      log_alpha_(0.0) {
  validate(config_);
  if (state_dim <= 0 || action_dim <= 0) throw ContractError("agent dimensions must be positive");
  Rng rng = make_rng(seed, 100);
  actor_ = nn::ParamSet(actor_spec(algo, state_dim, action_dim, config_, diffusion_));
  nn::init_uniform(actor_, rng, algo == Algo::Dsac ? diffusion_.output_scale : 1.0);
  const nn::MlpSpec cs = critic_spec(state_dim, action_dim, config_);
  q1_ = nn::ParamSet(cs);
  q2_ = nn::ParamSet(cs);
  nn::init_uniform(q1_, rng);
  nn::init_uniform(q2_, rng);
  q1_target_ = q1_;
  q2_target_ = q2_;
  actor_opt_ = nn::Adam(actor_.size(), {config_.lr_actor});
  q1_opt_ = nn::Adam(q1_.size(), {config_.lr_critic});
  q2_opt_ = nn::Adam(q2_.size(), {config_.lr_critic});
  alpha_opt_ = nn::Adam(1, {config_.lr_alpha});
  log_alpha_ = std::log(config_.init_alpha);
}

double SoftActorCritic::alpha() const { return std::exp(log_alpha_); }

Eigen::MatrixXd SoftActorCritic::logits(const Eigen::MatrixXd& states, Rng* rng,
                                        ChainTrace* trace) const {
  if (algo_ == Algo::Sac) {
    if (!trace) return nn::forward(actor_, states);
    trace->caches.assign(1, {});
    return nn::forward(actor_, states, &trace->caches[0]);
  }
  const int B = static_cast<int>(states.cols());
  const ChainNoise noise = rng ? ChainNoise::sample(schedule_, action_dim_, B, *rng)
                               : ChainNoise::zeros(schedule_, action_dim_, B);
  return denoise_chain(actor_, schedule_, states, noise, trace);
}

void SoftActorCritic::actor_backward(const ChainTrace& trace, const Eigen::MatrixXd& grad_logits,
                                     nn::ParamSet& grads) const {
  if (algo_ == Algo::Sac) {
    if (trace.caches.size() != 1) throw ContractError("actor trace has the wrong shape");
    nn::backward(actor_, trace.caches[0], grad_logits, grads);
    return;
  }
  denoise_chain_backward(actor_, schedule_, trace, grad_logits, grads);
}

std::vector<double> SoftActorCritic::policy(std::span<const double> state, const ActionMask& mask,
                                            Rng& rng) const {
  if (static_cast<int>(state.size()) != state_dim_ || static_cast<int>(mask.size()) != action_dim_)
    throw ContractError("state or mask has the wrong length");
  const Eigen::MatrixXd s = Eigen::Map<const Eigen::VectorXd>(state.data(), state_dim_);
  const Eigen::MatrixXd l = logits(s, &rng);
  return nn::masked_softmax(std::span<const double>(l.data(), static_cast<std::size_t>(l.size())),
                            mask);
}

int SoftActorCritic::greedy_action(std::span<const double> state, const ActionMask& mask) const {
  CheckpointPolicy p(make_checkpoint(*this));
  return p.act({}, state, mask);
}

Eigen::VectorXd SoftActorCritic::critic_targets(const Batch& batch, Rng& rng) const {
  const Eigen::MatrixXd next_probs =
      nn::masked_softmax(logits(batch.next_states, &rng), batch.next_masks);
  const Eigen::MatrixXd q_next = nn::forward(q1_target_, batch.next_states)
                                     .cwiseMin(nn::forward(q2_target_, batch.next_states));
  const Eigen::VectorXd v_next = soft_value(next_probs, q_next, alpha());
  return batch.rewards.array() + config_.gamma * (1.0 - batch.done.array()) * v_next.array();
}

UpdateLosses SoftActorCritic::update(const Batch& batch, Rng& rng) {
  const int B = batch.size();
  if (B < 1) throw ContractError("empty batch");
  const double alpha = this->alpha();
  UpdateLosses out;
  out.alpha = alpha;

  const Eigen::VectorXd y = critic_targets(batch, rng);

  nn::ForwardCache c1, c2;
  const Eigen::MatrixXd q1 = nn::forward(q1_, batch.states, &c1);
  const Eigen::MatrixXd q2 = nn::forward(q2_, batch.states, &c2);
  Eigen::MatrixXd g1 = Eigen::MatrixXd::Zero(action_dim_, B);
  Eigen::MatrixXd g2 = Eigen::MatrixXd::Zero(action_dim_, B);
  for (int c = 0; c < B; ++c) {
    const int a = batch.actions[static_cast<std::size_t>(c)];
    const double d1 = q1(a, c) - y[c];
    const double d2 = q2(a, c) - y[c];
    out.critic1 += d1 * d1;
    out.critic2 += d2 * d2;
    g1(a, c) = 2.0 * d1 / B;
    g2(a, c) = 2.0 * d2 / B;
  }
  out.critic1 /= B;
  out.critic2 /= B;
  nn::ParamSet grad_q1(q1_.spec()), grad_q2(q2_.spec());
  nn::backward(q1_, c1, g1, grad_q1);
  nn::backward(q2_, c2, g2, grad_q2);

  ChainTrace trace;
  const Eigen::MatrixXd l = logits(batch.states, &rng, &trace);
  const ActorObjective obj = actor_objective(l, batch.masks, q1.cwiseMin(q2), alpha);
  out.actor = obj.loss;
  nn::ParamSet grad_actor(actor_.spec());
  actor_backward(trace, obj.grad_logits, grad_actor);

  double gap = 0.0;
  for (int c = 0; c < B; ++c) {
    int legal = 0;
    for (int r = 0; r < action_dim_; ++r) legal += batch.masks(r, c) ? 1 : 0;
    gap += obj.entropy[c] - config_.c_ent * std::log(static_cast<double>(legal));
  }
  gap /= B;
  out.entropy = obj.entropy.mean();
  out.alpha_loss = log_alpha_ * gap;

  const bool finite = std::isfinite(out.critic1) && std::isfinite(out.critic2) &&
                      std::isfinite(out.actor) && std::isfinite(gap) && grad_q1.all_finite() &&
                      grad_q2.all_finite() && grad_actor.all_finite();
  if (!finite) {
    out.skipped = true;
    out.diagnostic = fmt::format("non-finite loss or gradient (critic1 {}, critic2 {}, actor {})",
                                 out.critic1, out.critic2, out.actor);
    return out;
  }
  q1_opt_.step(q1_, grad_q1);
  q2_opt_.step(q2_, grad_q2);
  actor_opt_.step(actor_, grad_actor);
  double la[1] = {log_alpha_};
  const double ga[1] = {gap};
  alpha_opt_.step(la, ga);
  log_alpha_ = la[0];
  nn::polyak_update(q1_target_, q1_, config_.polyak);
  nn::polyak_update(q2_target_, q2_, config_.polyak);
  return out;
}

}  // namespace covertpath
