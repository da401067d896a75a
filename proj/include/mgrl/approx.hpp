#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mgrl/envs.hpp"
#include "mgrl/metrics.hpp"
#include "mgrl/rng.hpp"

namespace mgrl {

// Minimal self-contained function-approximation stack: MLP with
// backpropagation, Adam, a trajectory replay buffer, soft target updates,
// and the deep UVFA / HER / delta-DQN variants for the Torus environment.

// ---------------------------------------------------------------------------
// MLP with rectifier hidden layers and identity output
// ---------------------------------------------------------------------------

struct Mlp {
  std::vector<int> widths;       // input, hidden..., output
  std::vector<double> params;    // flat: [W0 b0 W1 b1 ...], W row-major out x in
  std::vector<std::size_t> w_off, b_off;

  int n_layers() const { return static_cast<int>(widths.size()) - 1; }
  int input_dim() const { return widths.front(); }
  int output_dim() const { return widths.back(); }

  static Mlp make(const std::vector<int>& widths) {
    if (widths.size() < 2)
      throw std::invalid_argument("Mlp: need at least input and output widths");
    Mlp net;
    net.widths = widths;
    std::size_t total = 0;
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
      net.w_off.push_back(total);
      total += static_cast<std::size_t>(widths[l + 1]) * widths[l];
      net.b_off.push_back(total);
      total += widths[l + 1];
    }
    net.params.assign(total, 0.0);
    return net;
  }

  /// He-style init: weights ~ N(0, 2/fan_in), biases 0.
  static Mlp make_random(const std::vector<int>& widths, Pcg32& rng) {
    Mlp net = make(widths);
    for (int l = 0; l < net.n_layers(); ++l) {
      double scale = std::sqrt(2.0 / net.widths[l]);
      std::size_t n = static_cast<std::size_t>(net.widths[l + 1]) * net.widths[l];
      for (std::size_t i = 0; i < n; ++i)
        net.params[net.w_off[l] + i] = scale * rng.normal();
    }
    return net;
  }
};

/// Forward pass; if `acts` is given, pre-activation inputs of every layer are
/// stored for the backward pass (acts[0] = input, acts[l+1] = layer output).
inline std::vector<double> mlp_forward(const Mlp& net,
                                       const std::vector<double>& input,
                                       std::vector<std::vector<double>>* acts = nullptr) {
  if (static_cast<int>(input.size()) != net.input_dim())
    throw std::invalid_argument("mlp_forward: input dimension mismatch");
  std::vector<double> cur = input;
  if (acts) {
    acts->clear();
    acts->push_back(cur);
  }
  for (int l = 0; l < net.n_layers(); ++l) {
    int in = net.widths[l], out = net.widths[l + 1];
    std::vector<double> next(out);
    const double* w = net.params.data() + net.w_off[l];
    const double* b = net.params.data() + net.b_off[l];
    for (int o = 0; o < out; ++o) {
      double acc = b[o];
      const double* wrow = w + static_cast<std::size_t>(o) * in;
      for (int i = 0; i < in; ++i) acc += wrow[i] * cur[i];
      next[o] = acc;
    }
    if (l + 1 < net.n_layers())
      for (double& x : next) x = x > 0.0 ? x : 0.0;  // rectifier on hidden
    cur = std::move(next);
    if (acts) acts->push_back(cur);
  }
  return cur;
}

/// Accumulates the gradient of <seed, forward(input)> with respect to every
/// parameter into `grad` (same layout as net.params). Plain backprop.
inline void mlp_param_gradient_into(const Mlp& net,
                                    const std::vector<double>& input,
                                    const std::vector<double>& seed,
                                    std::vector<double>& grad) {
  if (static_cast<int>(seed.size()) != net.output_dim())
    throw std::invalid_argument("mlp_param_gradient: seed dimension mismatch");
  if (grad.size() != net.params.size())
    throw std::invalid_argument("mlp_param_gradient: grad buffer size mismatch");
  std::vector<std::vector<double>> acts;
  mlp_forward(net, input, &acts);

  std::vector<double> delta = seed;  // dL/d(layer output)
  for (int l = net.n_layers() - 1; l >= 0; --l) {
    int in = net.widths[l], out = net.widths[l + 1];
    const std::vector<double>& below = acts[l];
    double* gw = grad.data() + net.w_off[l];
    double* gb = grad.data() + net.b_off[l];
    for (int o = 0; o < out; ++o) {
      double d = delta[o];
      if (d == 0.0) continue;
      gb[o] += d;
      double* grow = gw + static_cast<std::size_t>(o) * in;
      for (int i = 0; i < in; ++i) grow[i] += d * below[i];
    }
    if (l == 0) break;
    const double* w = net.params.data() + net.w_off[l];
    std::vector<double> prev(in, 0.0);
    for (int o = 0; o < out; ++o) {
      double d = delta[o];
      if (d == 0.0) continue;
      const double* wrow = w + static_cast<std::size_t>(o) * in;
      for (int i = 0; i < in; ++i) prev[i] += d * wrow[i];
    }
    // rectifier gate of layer l's output (acts[l] stores post-activation)
    for (int i = 0; i < in; ++i)
      if (acts[l][i] <= 0.0) prev[i] = 0.0;
    delta = std::move(prev);
  }
}

inline std::vector<double> mlp_param_gradient(const Mlp& net,
                                              const std::vector<double>& input,
                                              const std::vector<double>& seed) {
  std::vector<double> grad(net.params.size(), 0.0);
  mlp_param_gradient_into(net, input, seed, grad);
  return grad;
}

// ---------------------------------------------------------------------------
// Adam (ascent form, matching theta <- theta + eta * direction)
// ---------------------------------------------------------------------------

struct AdamState {
  std::vector<double> m1, m2;
  long t = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState make(std::size_t n_params) {
    AdamState st;
    st.m1.assign(n_params, 0.0);
    st.m2.assign(n_params, 0.0);
    return st;
  }
};

inline void adam_step(std::vector<double>& params,
                      const std::vector<double>& ascent, AdamState& st,
                      double lr) {
  if (params.size() != ascent.size() || params.size() != st.m1.size())
    throw std::invalid_argument("adam_step: size mismatch");
  ++st.t;
  double c1 = 1.0 - std::pow(st.beta1, st.t);
  double c2 = 1.0 - std::pow(st.beta2, st.t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    st.m1[i] = st.beta1 * st.m1[i] + (1.0 - st.beta1) * ascent[i];
    st.m2[i] = st.beta2 * st.m2[i] + (1.0 - st.beta2) * ascent[i] * ascent[i];
    params[i] += lr * (st.m1[i] / c1) / (std::sqrt(st.m2[i] / c2) + st.eps);
  }
}

/// theta_tar <- (1 - mix) theta_tar + mix theta.
inline void soft_target_update(std::vector<double>& target,
                               const std::vector<double>& params, double mix) {
  if (target.size() != params.size())
    throw std::invalid_argument("soft_target_update: size mismatch");
  for (std::size_t i = 0; i < target.size(); ++i)
    target[i] = (1.0 - mix) * target[i] + mix * params[i];
}

// ---------------------------------------------------------------------------
// Replay buffer of whole torus trajectories
// ---------------------------------------------------------------------------

struct TorusTrajectory {
  std::vector<double> goal;
  std::vector<TorusState> states;  // length T + 1
  std::vector<int> actions;        // length T
};

/// Ring buffer over full trajectories, with capacity counted in transitions.
struct ReplayBuffer {
  std::size_t capacity_transitions = 1000000;
  std::vector<TorusTrajectory> trajs;
  std::size_t cursor = 0;
  std::size_t stored_transitions = 0;

  void push(TorusTrajectory traj) {
    std::size_t len = traj.actions.size();
    if (len == 0) return;
    if (stored_transitions + len <= capacity_transitions || trajs.empty()) {
      stored_transitions += len;
      trajs.push_back(std::move(traj));
      return;
    }
    // full: overwrite in ring order
    if (cursor >= trajs.size()) cursor = 0;
    stored_transitions += len - trajs[cursor].actions.size();
    trajs[cursor] = std::move(traj);
    cursor = (cursor + 1) % trajs.size();
  }

  bool empty() const { return trajs.empty(); }

  /// Uniform over stored transitions; returns (trajectory index, step).
  std::pair<int, int> sample_index(Pcg32& rng) const {
    if (trajs.empty()) throw std::runtime_error("replay buffer is empty");
    // trajectories share the same length in this artifact, so two uniform
    // draws are exact; fall back to weighting if they ever differ
    int ti = rng.uniform_int(static_cast<int>(trajs.size()));
    int t = rng.uniform_int(static_cast<int>(trajs[ti].actions.size()));
    return {ti, t};
  }
};

// ---------------------------------------------------------------------------
// Q-networks over the torus: input (obs(s), g), one output head per action
// ---------------------------------------------------------------------------

struct TorusQNet {
  Mlp net;
  Mlp target;

  static TorusQNet make(const TorusEnv& env, const std::vector<int>& hidden,
                        Pcg32& rng) {
    std::vector<int> widths;
    widths.push_back(2 * env.dim + env.dim);  // cos/sin observation + raw goal
    for (int h : hidden) widths.push_back(h);
    widths.push_back(env.n_actions());
    TorusQNet q;
    q.net = Mlp::make_random(widths, rng);
    q.target = q.net;
    return q;
  }
};

inline std::vector<double> qnet_input(const TorusEnv& env, const TorusState& s,
                                      const std::vector<double>& goal) {
  std::vector<double> in = torus_observe(s);
  in.insert(in.end(), goal.begin(), goal.end());
  (void)env;
  return in;
}

inline int qnet_greedy_action(const Mlp& net, const TorusEnv& env,
                              const TorusState& s,
                              const std::vector<double>& goal) {
  std::vector<double> out = mlp_forward(net, qnet_input(env, s, goal));
  int best = 0;
  for (int a = 1; a < static_cast<int>(out.size()); ++a)
    if (out[a] > out[best]) best = a;
  return best;
}

// ---------------------------------------------------------------------------
// Deep update steps
// ---------------------------------------------------------------------------

/// Accumulates one sample's two-term delta-DQN ascent direction into `grad`:
///   c_delta * grad q(s, a, phi(s)) + grad q(s, a, g) (gamma max_a'
///   q_tar(s', a', g) - q(s, a, g)).
/// Two backward passes, the TD coefficient treated as a constant.
inline void deep_delta_dqn_direction(const TorusQNet& q, const TorusEnv& env,
                                     const TorusState& s, int a,
                                     const TorusState& s_next,
                                     const std::vector<double>& goal,
                                     std::vector<double>& grad) {
  std::vector<double> seed(q.net.output_dim(), 0.0);
  std::vector<double> in_g = qnet_input(env, s, goal);
  double q_sag = mlp_forward(q.net, in_g)[a];
  std::vector<double> out_next =
      mlp_forward(q.target, qnet_input(env, s_next, goal));
  double boot = *std::max_element(out_next.begin(), out_next.end());

  seed[a] = env.discount * boot - q_sag;  // TD part at the independent goal
  mlp_param_gradient_into(q.net, in_g, seed, grad);
  seed[a] = env.reward_scale;             // Dirac part at phi(s) = s
  mlp_param_gradient_into(q.net, qnet_input(env, s, s.coords), seed, grad);
}

/// One delta-DQN gradient step on a batch: per element draws an independent
/// uniform goal, averages the two-term direction over the batch and feeds it
/// to Adam. Never evaluates the sparse reward.
inline void deep_delta_dqn_step(TorusQNet& q, AdamState& adam,
                                const ReplayBuffer& buffer, const TorusEnv& env,
                                int batch, double lr, Pcg32& rng) {
  if (buffer.empty()) throw std::runtime_error("deep_delta_dqn_step: empty buffer");
  std::vector<double> grad(q.net.params.size(), 0.0);
  std::vector<double> goal(env.dim);
  for (int b = 0; b < batch; ++b) {
    auto [ti, t] = buffer.sample_index(rng);
    const TorusTrajectory& traj = buffer.trajs[ti];
    for (int i = 0; i < env.dim; ++i) goal[i] = rng.uniform();
    deep_delta_dqn_direction(q, env, traj.states[t], traj.actions[t],
                             traj.states[t + 1], goal, grad);
  }
  for (double& g : grad) g /= batch;
  adam_step(q.net.params, grad, adam, lr);
}

/// UVFA / HER gradient step on sparse rewards. HER relabels each sampled
/// transition: with probability `future_prob` the goal becomes the goal
/// achieved by a uniformly drawn state at step >= t of the same trajectory
/// (the l = 0 convention keeps the current state eligible); otherwise the
/// original trajectory goal is kept. UVFA is the same step with
/// future_prob = 0 and consumes the same rng draws.
inline void deep_her_step(TorusQNet& q, AdamState& adam,
                          const ReplayBuffer& buffer, const TorusEnv& env,
                          int batch, double lr, double future_prob,
                          double reward_scale, Pcg32& rng) {
  if (buffer.empty()) throw std::runtime_error("deep_her_step: empty buffer");
  std::vector<double> grad(q.net.params.size(), 0.0);
  std::vector<double> seed(q.net.output_dim(), 0.0);
  for (int b = 0; b < batch; ++b) {
    auto [ti, t] = buffer.sample_index(rng);
    const TorusTrajectory& traj = buffer.trajs[ti];
    const TorusState& s = traj.states[t];
    const TorusState& s_next = traj.states[t + 1];
    int a = traj.actions[t];

    bool relabel = rng.bernoulli(future_prob);
    int j = t + rng.uniform_int(static_cast<int>(traj.states.size()) - t);
    const std::vector<double>& goal = relabel ? traj.states[j].coords : traj.goal;

    double r = reward_scale * torus_sparse_reward(env, s.coords, goal);
    std::vector<double> in_g = qnet_input(env, s, goal);
    double q_sag = mlp_forward(q.net, in_g)[a];
    std::vector<double> out_next = mlp_forward(q.target, qnet_input(env, s_next, goal));
    double boot = *std::max_element(out_next.begin(), out_next.end());

    seed.assign(seed.size(), 0.0);
    seed[a] = r + env.discount * boot - q_sag;
    mlp_param_gradient_into(q.net, in_g, seed, grad);
  }
  for (double& g : grad) g /= batch;
  adam_step(q.net.params, grad, adam, lr);
}

inline void deep_uvfa_step(TorusQNet& q, AdamState& adam,
                           const ReplayBuffer& buffer, const TorusEnv& env,
                           int batch, double lr, double reward_scale,
                           Pcg32& rng) {
  deep_her_step(q, adam, buffer, env, batch, lr, /*future_prob=*/0.0,
                reward_scale, rng);
}

// ---------------------------------------------------------------------------
// Torus training loop
// ---------------------------------------------------------------------------

struct DeepTrainConfig {
  int epochs = 300;
  int trajs_per_epoch = 4;
  int grad_steps_per_epoch = 50;
  int batch = 64;
  double lr = 3e-3;
  double target_mix = 0.05;   // soft target update after every epoch
  double epsilon = 0.2;       // eps-greedy behavior
  double her_future_prob = 0.8;
  double reward_scale = 1.0;  // R for UVFA / HER
  std::vector<int> hidden = {64, 64};
  std::size_t buffer_capacity = 1000000;
  int eval_episodes = 50;
  int eval_interval = 10;     // epochs between evaluations
  long seed = 0;
};

/// Collects one behavior episode (eps-greedy around the live net).
inline TorusTrajectory collect_torus_episode(const TorusQNet& q,
                                             const TorusEnv& env,
                                             double epsilon, Pcg32& rng) {
  TorusTrajectory traj;
  traj.goal.resize(env.dim);
  for (int i = 0; i < env.dim; ++i) traj.goal[i] = rng.uniform();
  TorusState s = torus_random_state(env, rng);
  traj.states.push_back(s);
  for (int t = 0; t < env.horizon; ++t) {
    int a;
    if (rng.bernoulli(epsilon))
      a = rng.uniform_int(env.n_actions());
    else
      a = qnet_greedy_action(q.net, env, s, traj.goal);
    TorusState s2 = torus_step(s, a, env, rng);
    traj.actions.push_back(a);
    traj.states.push_back(s2);
    s = std::move(s2);
  }
  return traj;
}

/// Mean distance to the goal at episode end under the greedy policy.
inline double evaluate_torus_policy(const TorusQNet& q, const TorusEnv& env,
                                    int episodes, Pcg32& rng) {
  double total = 0.0;
  for (int e = 0; e < episodes; ++e) {
    std::vector<double> goal(env.dim);
    for (int i = 0; i < env.dim; ++i) goal[i] = rng.uniform();
    TorusState s = torus_random_state(env, rng);
    for (int t = 0; t < env.horizon; ++t)
      s = torus_step(s, qnet_greedy_action(q.net, env, s, goal), env, rng);
    total += torus_distance(s.coords, goal);
  }
  return total / episodes;
}

struct DeepTrainResult {
  MetricLog log;
  TorusQNet q;
  double final_mean_distance = 0.0;
};

inline DeepTrainResult train_torus(Algo algo, const TorusEnv& env,
                                   const DeepTrainConfig& cfg, Pcg32& rng) {
  if (!algo_is_deep(algo))
    throw std::invalid_argument("train_torus: expected a deep algo id");
  env.validate();
  DeepTrainResult result;
  result.q = TorusQNet::make(env, cfg.hidden, rng);
  AdamState adam = AdamState::make(result.q.net.params.size());
  ReplayBuffer buffer;
  buffer.capacity_transitions = cfg.buffer_capacity;

  long episode = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (int k = 0; k < cfg.trajs_per_epoch; ++k) {
      buffer.push(collect_torus_episode(result.q, env, cfg.epsilon, rng));
      ++episode;
    }
    for (int k = 0; k < cfg.grad_steps_per_epoch; ++k) {
      switch (algo) {
        case Algo::deep_delta_dqn:
          deep_delta_dqn_step(result.q, adam, buffer, env, cfg.batch, cfg.lr, rng);
          break;
        case Algo::deep_her:
          deep_her_step(result.q, adam, buffer, env, cfg.batch, cfg.lr,
                        cfg.her_future_prob, cfg.reward_scale, rng);
          break;
        case Algo::deep_uvfa:
          deep_uvfa_step(result.q, adam, buffer, env, cfg.batch, cfg.lr,
                         cfg.reward_scale, rng);
          break;
        default:
          throw std::logic_error("train_torus: unhandled algo");
      }
    }
    soft_target_update(result.q.target.params, result.q.net.params, cfg.target_mix);
    if (!all_finite(result.q.net.params))
      throw std::runtime_error("train_torus: parameters became non-finite");
    if (cfg.eval_interval > 0 && (epoch + 1) % cfg.eval_interval == 0) {
      double d = evaluate_torus_policy(result.q, env, cfg.eval_episodes, rng);
      result.log.push_back({static_cast<long>(epoch + 1) * cfg.grad_steps_per_epoch,
                            episode, "mean_final_distance", d, cfg.seed});
    }
  }
  result.final_mean_distance =
      evaluate_torus_policy(result.q, env, cfg.eval_episodes, rng);
  result.log.push_back({static_cast<long>(cfg.epochs) * cfg.grad_steps_per_epoch,
                        episode, "mean_final_distance",
                        result.final_mean_distance, cfg.seed});
  return result;
}

// ---------------------------------------------------------------------------
// Checkpoint format: magic, layer count, widths, little-endian f64 params
// ---------------------------------------------------------------------------

constexpr char kCheckpointMagic[8] = {'M', 'G', 'R', 'L', 'N', 'E', 'T', '1'};

inline void save_checkpoint(const Mlp& net, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
  out.write(kCheckpointMagic, 8);
  std::uint32_t n = static_cast<std::uint32_t>(net.widths.size());
  out.write(reinterpret_cast<const char*>(&n), 4);
  for (int w : net.widths) {
    std::uint32_t v = static_cast<std::uint32_t>(w);
    out.write(reinterpret_cast<const char*>(&v), 4);
  }
  out.write(reinterpret_cast<const char*>(net.params.data()),
            static_cast<std::streamsize>(net.params.size() * sizeof(double)));
  if (!out) throw std::runtime_error("save_checkpoint: write failed");
}

inline Mlp load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw std::runtime_error("load_checkpoint: bad magic in " + path);
  std::uint32_t n = 0;
  in.read(reinterpret_cast<char*>(&n), 4);
  if (!in || n < 2 || n > 64)
    throw std::runtime_error("load_checkpoint: corrupt layer count");
  std::vector<int> widths(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 4);
    widths[i] = static_cast<int>(v);
  }
  Mlp net = Mlp::make(widths);
  in.read(reinterpret_cast<char*>(net.params.data()),
          static_cast<std::streamsize>(net.params.size() * sizeof(double)));
  if (!in) throw std::runtime_error("load_checkpoint: truncated parameter block");
  return net;
}

}  // namespace mgrl
