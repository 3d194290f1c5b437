#include <algorithm>
#include <cmath>
#include <map>

#include <fmt/format.h>
#include <json.hpp>

#include "covertpath/agents.hpp"

namespace covertpath {

using nlohmann::json;

AgentCheckpoint make_checkpoint(const SoftActorCritic& agent) {
  return {agent.algo(), agent.state_dim(), agent.action_dim(), agent.diffusion(), agent.actor()};
}

std::string serialize(const AgentCheckpoint& c) {
  json j;
  j["format"] = "covertpath-agent";
  j["version"] = 1;
  j["algo"] = std::string(to_string(c.algo));
  j["state_dim"] = c.state_dim;
  j["action_dim"] = c.action_dim;
  j["diffusion"] = {{"steps", c.diffusion.steps},
                    {"beta_start", c.diffusion.beta_start},
                    {"beta_end", c.diffusion.beta_end},
                    {"time_embed_dim", c.diffusion.time_embed_dim},
                    {"output_scale", c.diffusion.output_scale}};
  j["actor"] = nn::to_json(c.actor);
  return j.dump(2) + "\n";
}

AgentCheckpoint parse_checkpoint(std::string_view text) {
  try {
    const json j = json::parse(text);
    if (j.at("format") != "covertpath-agent" || j.at("version") != 1)
      throw ContractError("not a covertpath agent checkpoint");
    AgentCheckpoint c;
    const auto algo = algo_from_string(j.at("algo").get<std::string>());
    if (!algo) throw ContractError("unknown algo in checkpoint");
    c.algo = *algo;
    c.state_dim = j.at("state_dim").get<int>();
    c.action_dim = j.at("action_dim").get<int>();
    const json& d = j.at("diffusion");
    c.diffusion.steps = d.at("steps").get<int>();
    c.diffusion.beta_start = d.at("beta_start").get<double>();
    c.diffusion.beta_end = d.at("beta_end").get<double>();
    c.diffusion.time_embed_dim = d.at("time_embed_dim").get<int>();
    c.diffusion.output_scale = d.at("output_scale").get<double>();
    validate(c.diffusion);
    c.actor = nn::params_from_json(j.at("actor"));
    const int in = c.actor.spec().input_dim();
    const int expect_in = c.algo == Algo::Sac
                              ? c.state_dim
                              : c.state_dim + c.action_dim + c.diffusion.time_embed_dim;
    if (in != expect_in || c.actor.spec().output_dim() != c.action_dim)
      throw ContractError("checkpoint actor shape disagrees with its dimensions");
    return c;
  } catch (const json::exception& e) {
    throw ContractError(fmt::format("malformed checkpoint: {}", e.what()));
  }
}

// ---------------------------------------------------------------------------

namespace {

int masked_argmax(const Eigen::VectorXd& logits, const ActionMask& mask) {
  int best = -1;
  for (int a = 0; a < static_cast<int>(mask.size()); ++a) {
    if (!mask[static_cast<std::size_t>(a)]) continue;
    if (best < 0 || logits[a] > logits[best]) best = a;
  }
  if (best < 0) throw ContractError("no legal action");
  return best;
}

int first_legal(const ActionMask& mask) {
  for (std::size_t a = 0; a < mask.size(); ++a) {
    if (mask[a]) return static_cast<int>(a);
  }
  throw ContractError("no legal action");
}

}  // namespace

CheckpointPolicy::CheckpointPolicy(AgentCheckpoint checkpoint)
    : checkpoint_(std::move(checkpoint)), schedule_(checkpoint_.diffusion) {}

int CheckpointPolicy::act(const EnvState&, std::span<const double> observation,
                          const ActionMask& mask) const {
  if (static_cast<int>(observation.size()) != checkpoint_.state_dim ||
      static_cast<int>(mask.size()) != checkpoint_.action_dim)
    throw ContractError("observation or mask does not fit the checkpoint");
  const Eigen::MatrixXd s =
      Eigen::Map<const Eigen::VectorXd>(observation.data(), checkpoint_.state_dim);
  // Greedy DSAC runs the chain with all noise set to zero.
  const Eigen::MatrixXd l =
      checkpoint_.algo == Algo::Sac
          ? nn::forward(checkpoint_.actor, s)
          : denoise_chain(checkpoint_.actor, schedule_, s,
                          ChainNoise::zeros(schedule_, checkpoint_.action_dim, 1));
  return masked_argmax(l.col(0), mask);
}

int FixedPathPolicy::act(const EnvState& state, std::span<const double>,
                         const ActionMask& mask) const {
  const auto step = static_cast<std::size_t>(state.steps);
  if (step < path_.size() && path_[step].node == state.current) return path_[step].slot;
  return first_legal(mask);
}

int UniformPolicy::act(const EnvState&, std::span<const double>, const ActionMask& mask) const {
  std::vector<int> legal;
  for (std::size_t a = 0; a < mask.size(); ++a) {
    if (mask[a]) legal.push_back(static_cast<int>(a));
  }
  if (legal.empty()) throw ContractError("no legal action");
  return legal[static_cast<std::size_t>(uniform_int(rng_, 0, static_cast<int>(legal.size()) - 1))];
}

EvalReport evaluate(const Policy& policy, const CovertPathEnv& env, int n_episodes) {
  if (n_episodes < 1) throw ContractError("n_episodes must be positive");
  EvalReport rep;
  rep.episodes = n_episodes;
  double total_return = 0.0;
  double accuracy_sum = 0.0;
  std::size_t channels = 0;
  int successes = 0;
  std::map<std::vector<ChannelRef>, int> counts;
  for (int e = 0; e < n_episodes; ++e) {
    auto [state, obs] = env.reset(static_cast<std::uint64_t>(e));
    double ret = 0.0;
    while (!state.done) {
      const ActionMask mask = env.action_mask(state);
      const int a = policy.act(state, obs, mask);
      const StepResult r = env.step(state, a);
      if (!r.info.violation) {
        accuracy_sum += 1.0 - env.slot_p_detect(r.info.node_from, r.info.slot);
        ++channels;
      }
      ret += r.reward;
      state = r.state;
      obs = r.observation;
    }
    total_return += ret;
    successes += state.success ? 1 : 0;
    ++counts[state.path];
    rep.paths.push_back(state.path);
  }
  rep.mean_return = total_return / n_episodes;
  rep.success_rate = static_cast<double>(successes) / n_episodes;
  rep.mean_accuracy = channels ? accuracy_sum / static_cast<double>(channels) : 0.0;
  int most = 0;
  for (const auto& [path, n] : counts) {
    if (n > most) {
      most = n;
      rep.modal_path = path;
    }
  }
  return rep;
}

EvalReport evaluate(const AgentCheckpoint& checkpoint, const Scenario& scenario, int n_episodes,
                    EnvConfig env_config) {
  const CovertPathEnv env(scenario, env_config);
  if (checkpoint.state_dim != env.state_dim() || checkpoint.action_dim != env.action_dim())
    throw ContractError(fmt::format("checkpoint expects state {} / actions {}, scenario has {} / {}",
                                    checkpoint.state_dim, checkpoint.action_dim, env.state_dim(),
                                    env.action_dim()));
  return evaluate(CheckpointPolicy(checkpoint), env, n_episodes);
}

// ---------------------------------------------------------------------------

namespace {

int sample_categorical(const std::vector<double>& probs, Rng& rng) {
  const double u = uniform(rng, 0.0, 1.0);
  double acc = 0.0;
  int last = -1;
  for (std::size_t a = 0; a < probs.size(); ++a) {
    if (probs[a] <= 0.0) continue;
    acc += probs[a];
    last = static_cast<int>(a);
    if (u < acc) return last;
  }
  if (last < 0) throw ContractError("distribution has no support");
  return last;
}

}  // namespace

TrainReport train(const Scenario& scenario, Algo algo, const TrainConfig& config,
                  std::uint64_t run_seed, const TrainHooks& hooks) {
  if (config.total_steps < 0 || config.eval_every < 1 || config.eval_episodes < 1)
    throw ContractError("invalid training schedule");
  const CovertPathEnv env(scenario, config.env);
  SoftActorCritic agent(algo, env.state_dim(), env.action_dim(), config.sac, config.diffusion,
                        splitmix64(run_seed));
  Rng act_rng = make_rng(run_seed, 2);
  Rng noise_rng = make_rng(run_seed, 3);
  Rng sample_rng = make_rng(run_seed, 4);
  ReplayBuffer buffer(config.sac.buffer_capacity, env.state_dim(), env.action_dim());

  TrainReport rep;
  rep.algo = algo;
  rep.run_seed = run_seed;
  int episode = 0;
  auto [state, obs] = env.reset(0);
  double ep_return = 0.0;
  int consecutive_skips = 0;

  for (int step = 1; step <= config.total_steps; ++step) {
    const ActionMask mask = env.action_mask(state);
    const std::vector<double> probs = agent.policy(obs, mask, noise_rng);
    if (hooks.on_policy) hooks.on_policy(probs, mask);
    const int action = sample_categorical(probs, act_rng);
    const StepResult r = env.step(state, action);
    if (hooks.on_transition) hooks.on_transition(static_cast<std::uint64_t>(episode), r);

    Transition t;
    t.state = obs;
    t.mask = mask;
    t.action = action;
    t.reward = r.reward;
    t.next_state = r.observation;
    t.done = r.done;
    if (!r.done) t.next_mask = env.action_mask(r.state);
    buffer.add(t);

    ep_return += r.reward;
    if (r.done) {
      rep.episodes.push_back({step, episode, ep_return, r.info.success});
      ++episode;
      ep_return = 0.0;
      std::tie(state, obs) = env.reset(static_cast<std::uint64_t>(episode));
    } else {
      state = r.state;
      obs = r.observation;
    }

    if (step > config.sac.warmup_steps &&
        buffer.size() >= static_cast<std::size_t>(config.sac.batch)) {
      for (int u = 0; u < config.sac.updates_per_step; ++u) {
        UpdateLosses losses;
        try {
          losses = agent.update(buffer.sample(static_cast<std::size_t>(config.sac.batch), sample_rng),
                                noise_rng);
        } catch (const ChainError& e) {
          losses.skipped = true;
          losses.diagnostic = e.what();
        }
        consecutive_skips = losses.skipped ? consecutive_skips + 1 : 0;
        rep.losses.push_back({step, losses});
        if (consecutive_skips > config.max_consecutive_skips) {
          rep.aborted = true;
          rep.abort_reason = fmt::format("{} consecutive non-finite updates at step {}: {}",
                                         consecutive_skips, step, losses.diagnostic);
          break;
        }
      }
    }
    rep.steps_done = step;
    if (rep.aborted) break;

    if (step % config.eval_every == 0) {
      const AgentCheckpoint ckpt = make_checkpoint(agent);
      const EvalReport ev = evaluate(CheckpointPolicy(ckpt), env, config.eval_episodes);
      if (hooks.on_eval) hooks.on_eval(step, ev);
      rep.evals.push_back({step, episode, ev.mean_return, ev.mean_accuracy, ev.success_rate});
      if (!rep.best || ev.mean_return > rep.best_eval_return) {
        rep.best = ckpt;
        rep.best_eval_return = ev.mean_return;
      }
    }
  }
  rep.final_checkpoint = make_checkpoint(agent);
  return rep;
}

std::string train_csv(const TrainReport& rep) {
  std::string out =
      "step,episode,episode_return,success,critic1_loss,critic2_loss,actor_loss,alpha_ent,"
      "eval_return,eval_accuracy\n";
  std::size_t li = 0;
  std::size_t ei = 0;
  const UpdateLosses* last = nullptr;
  auto loss_cols = [&](int step) {
    while (li < rep.losses.size() && rep.losses[li].step <= step) last = &rep.losses[li++].losses;
    if (!last) return std::string(",,,");
    return fmt::format("{},{},{},{}", last->critic1, last->critic2, last->actor, last->alpha);
  };
  for (const EpisodeRecord& e : rep.episodes) {
    while (ei < rep.evals.size() && rep.evals[ei].step < e.step) {
      const EvalRecord& v = rep.evals[ei++];
      out += fmt::format("{},{},,,{},{},{}\n", v.step, v.episode, loss_cols(v.step), v.eval_return,
                         v.eval_accuracy);
    }
    out += fmt::format("{},{},{},{},{},,\n", e.step, e.episode, e.episode_return,
                       e.success ? 1 : 0, loss_cols(e.step));
  }
  while (ei < rep.evals.size()) {
    const EvalRecord& v = rep.evals[ei++];
    out += fmt::format("{},{},,,{},{},{}\n", v.step, v.episode, loss_cols(v.step), v.eval_return,
                       v.eval_accuracy);
  }
  return out;
}

std::optional<int> steps_to_threshold(const std::vector<EvalRecord>& evals, double threshold,
                                      int sustain) {
  int run = 0;
  for (std::size_t i = 0; i < evals.size(); ++i) {
    run = evals[i].eval_return >= threshold ? run + 1 : 0;
    if (run >= sustain) return evals[i + 1 - static_cast<std::size_t>(sustain)].step;
  }
  return std::nullopt;
}

}  // namespace covertpath
