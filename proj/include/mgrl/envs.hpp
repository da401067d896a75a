#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "mgrl/mdp.hpp"
#include "mgrl/rng.hpp"

namespace mgrl {

// ---------------------------------------------------------------------------
// Finite test environments
// ---------------------------------------------------------------------------

/// Random stochastic MDP: each (s,a) row has `branching` distinct successor
/// states chosen uniformly, with Dirichlet(1,...,1) weights. Goals are the
/// states themselves (phi = identity), rho_G and rho_0 uniform.
inline FiniteMultiGoalMdp make_random_mdp(int n_states, int n_actions,
                                          int branching, double discount,
                                          Pcg32& rng) {
  if (branching < 1 || branching > n_states)
    throw std::invalid_argument("make_random_mdp: need 1 <= branching <= n_states");
  FiniteMultiGoalMdp mdp;
  mdp.n_states = n_states;
  mdp.n_actions = n_actions;
  mdp.n_goals = n_states;
  mdp.discount = discount;
  mdp.transition = Table3(n_states, n_actions, n_states, 0.0);
  mdp.goal_map.resize(n_states);
  std::iota(mdp.goal_map.begin(), mdp.goal_map.end(), 0);
  mdp.goal_dist.assign(n_states, 1.0 / n_states);
  mdp.init_dist = Table2(n_states, n_states, 1.0 / n_states);

  std::vector<int> pool(n_states);
  for (int s = 0; s < n_states; ++s)
    for (int a = 0; a < n_actions; ++a) {
      // partial Fisher-Yates for the support, exponentials for the weights
      std::iota(pool.begin(), pool.end(), 0);
      double total = 0.0;
      std::vector<std::pair<int, double>> support(branching);
      for (int b = 0; b < branching; ++b) {
        int pick = b + rng.uniform_int(n_states - b);
        std::swap(pool[b], pool[pick]);
        double u = rng.uniform();
        while (u <= 0.0) u = rng.uniform();
        double w = -std::log(u);
        support[b] = {pool[b], w};
        total += w;
      }
      for (auto& [s2, w] : support) mdp.transition.at(s, a, s2) = w / total;
    }
  mdp.validate();
  return mdp;
}

/// Deterministic MDP in which every state is reachable from every other:
/// action 0 is the cycle s -> (s+1) mod S, the remaining actions jump to
/// random states. Strong connectivity is verified before returning.
inline FiniteMultiGoalMdp make_deterministic_reachable_mdp(int n_states,
                                                           int n_actions,
                                                           double discount,
                                                           Pcg32& rng) {
  if (n_actions < 2)
    throw std::invalid_argument("make_deterministic_reachable_mdp: need A >= 2");
  FiniteMultiGoalMdp mdp;
  mdp.n_states = n_states;
  mdp.n_actions = n_actions;
  mdp.n_goals = n_states;
  mdp.discount = discount;
  mdp.transition = Table3(n_states, n_actions, n_states, 0.0);
  mdp.goal_map.resize(n_states);
  std::iota(mdp.goal_map.begin(), mdp.goal_map.end(), 0);
  mdp.goal_dist.assign(n_states, 1.0 / n_states);
  mdp.init_dist = Table2(n_states, n_states, 1.0 / n_states);

  for (int s = 0; s < n_states; ++s) {
    mdp.transition.at(s, 0, (s + 1) % n_states) = 1.0;
    for (int a = 1; a < n_actions; ++a)
      mdp.transition.at(s, a, rng.uniform_int(n_states)) = 1.0;
  }

  // Floyd-Warshall closure; the cycle makes failure impossible, assert anyway.
  std::vector<std::vector<bool>> reach(n_states, std::vector<bool>(n_states, false));
  for (int s = 0; s < n_states; ++s) {
    reach[s][s] = true;
    for (int a = 0; a < n_actions; ++a)
      for (int s2 = 0; s2 < n_states; ++s2)
        if (mdp.transition.at(s, a, s2) > 0.0) reach[s][s2] = true;
  }
  for (int k = 0; k < n_states; ++k)
    for (int i = 0; i < n_states; ++i)
      if (reach[i][k])
        for (int j = 0; j < n_states; ++j)
          if (reach[k][j]) reach[i][j] = true;
  for (int i = 0; i < n_states; ++i)
    for (int j = 0; j < n_states; ++j)
      if (!reach[i][j])
        throw std::logic_error("make_deterministic_reachable_mdp: connectivity check failed");

  mdp.validate();
  return mdp;
}

/// Index layout of a freeze-augmented MDP: augmented state (s, x) <-> x*S + s,
/// freeze action = base action count.
struct FreezeSpec {
  int base_states = 0;
  int base_actions = 0;

  explicit FreezeSpec(const FiniteMultiGoalMdp& base)
      : base_states(base.n_states), base_actions(base.n_actions) {}

  int unfrozen(int s) const { return s; }
  int frozen(int s) const { return base_states + s; }
  int freeze_action() const { return base_actions; }
  bool is_frozen(int aug_state) const { return aug_state >= base_states; }
  int base_state(int aug_state) const {
    return aug_state >= base_states ? aug_state - base_states : aug_state;
  }
};

/// Augments a base MDP with a freeze action a*: 2S states (s, x), A+1
/// actions. Frozen states self-loop under every action; a* from an unfrozen
/// state lands uniformly on frozen states; other actions keep the base
/// dynamics on unfrozen states. Goals are unchanged, phi((s,x)) = phi(s),
/// and rho_0 is restricted to unfrozen states.
inline FiniteMultiGoalMdp augment_with_freeze(const FiniteMultiGoalMdp& base) {
  if (base.freeze_action >= 0)
    throw std::invalid_argument(
        "augment_with_freeze: MDP already has a freeze action (index " +
        std::to_string(base.freeze_action) + "); stacking is not supported");
  FreezeSpec ix(base);
  int S = base.n_states;
  int A = base.n_actions;

  FiniteMultiGoalMdp aug;
  aug.n_states = 2 * S;
  aug.n_actions = A + 1;
  aug.n_goals = base.n_goals;
  aug.discount = base.discount;
  aug.freeze_action = ix.freeze_action();
  aug.transition = Table3(2 * S, A + 1, 2 * S, 0.0);
  aug.goal_map.resize(2 * S);
  aug.goal_dist = base.goal_dist;
  aug.init_dist = Table2(base.n_goals, 2 * S, 0.0);

  for (int s = 0; s < S; ++s) {
    aug.goal_map[ix.unfrozen(s)] = base.goal_map[s];
    aug.goal_map[ix.frozen(s)] = base.goal_map[s];
    for (int a = 0; a <= A; ++a)
      aug.transition.at(ix.frozen(s), a, ix.frozen(s)) = 1.0;
    for (int a = 0; a < A; ++a)
      for (int s2 = 0; s2 < S; ++s2)
        aug.transition.at(ix.unfrozen(s), a, ix.unfrozen(s2)) =
            base.transition.at(s, a, s2);
    for (int s2 = 0; s2 < S; ++s2)
      aug.transition.at(ix.unfrozen(s), ix.freeze_action(), ix.frozen(s2)) =
          1.0 / S;
  }
  for (int g = 0; g < base.n_goals; ++g)
    for (int s = 0; s < S; ++s)
      aug.init_dist.at(g, ix.unfrozen(s)) = base.init_dist.at(g, s);

  aug.validate();
  return aug;
}

/// Rooted dyadic tree truncated at `depth`: states are binary strings of
/// length <= depth in heap order (root 0, children 2i+1 / 2i+2), actions
/// append a 0 or a 1, depth-D states self-loop. phi = identity.
inline FiniteMultiGoalMdp dyadic_tree_mdp(int depth, double discount) {
  if (depth < 1) throw std::invalid_argument("dyadic_tree_mdp: depth >= 1");
  int S = (1 << (depth + 1)) - 1;
  int leaves_from = (1 << depth) - 1;  // heap index of the first depth-D state

  FiniteMultiGoalMdp mdp;
  mdp.n_states = S;
  mdp.n_actions = 2;
  mdp.n_goals = S;
  mdp.discount = discount;
  mdp.transition = Table3(S, 2, S, 0.0);
  mdp.goal_map.resize(S);
  std::iota(mdp.goal_map.begin(), mdp.goal_map.end(), 0);
  mdp.goal_dist.assign(S, 1.0 / S);
  mdp.init_dist = Table2(S, S, 0.0);
  for (int g = 0; g < S; ++g) mdp.init_dist.at(g, 0) = 1.0;  // start at root

  for (int s = 0; s < S; ++s) {
    if (s >= leaves_from) {
      mdp.transition.at(s, 0, s) = 1.0;
      mdp.transition.at(s, 1, s) = 1.0;
    } else {
      mdp.transition.at(s, 0, 2 * s + 1) = 1.0;
      mdp.transition.at(s, 1, 2 * s + 2) = 1.0;
    }
  }
  mdp.validate();
  return mdp;
}

// ---------------------------------------------------------------------------
// Torus(n): continuous multi-goal environment with wrap-around dynamics
// ---------------------------------------------------------------------------

/// Torus(n) parameters. Actions are (axis i, sign u in {-alpha, +alpha}),
/// encoded as 2n discrete actions: a = 2*i + (u > 0 ? 1 : 0).
struct TorusEnv {
  int dim = 2;               // n
  double step_size = 0.1;    // alpha
  double noise_sigma = 0.05; // sigma, default 0.1/n
  double reward_eps = 0.05;  // sparse-reward radius
  int horizon = 200;         // T
  double discount = 0.995;   // gamma
  double reward_scale = 1e-2;  // c_delta, Dirac-reward scaling for delta methods
  bool noise_isotropic = true;  // false: Gaussian noise only on the moved axis

  // Counts sparse-reward evaluations; lets tests assert that the Dirac
  // methods never query the reward.
  mutable std::uint64_t reward_queries = 0;

  void validate() const {
    if (dim < 1) throw std::invalid_argument("torus: dim >= 1");
    if (!(step_size > 0.0 && step_size < 0.5))
      throw std::invalid_argument("torus: need 0 < step_size < 0.5");
    if (noise_sigma < 0.0) throw std::invalid_argument("torus: sigma >= 0");
    if (!(reward_eps > 0.0 && reward_eps < 0.5))
      throw std::invalid_argument("torus: need 0 < reward_eps < 0.5");
    if (!(discount >= 0.0 && discount < 1.0))
      throw std::invalid_argument("torus: discount in [0,1)");
  }

  int n_actions() const { return 2 * dim; }
  int action_axis(int a) const { return a / 2; }
  double action_move(int a) const { return (a % 2 == 0) ? -step_size : step_size; }

  static TorusEnv defaults(int n) {
    TorusEnv env;
    env.dim = n;
    env.noise_sigma = 0.1 / n;
    return env;
  }
};

struct TorusState {
  std::vector<double> coords;  // each in [0, 1)
};

inline double wrap01(double x) {
  double r = x - std::floor(x);
  return r < 1.0 ? r : 0.0;  // floor can leave exactly 1.0 for tiny negatives
}

/// One environment step: move `u` along the chosen axis, add N(0, sigma^2)
/// noise, wrap mod 1. By default the noise is isotropic across coordinates;
/// noise_isotropic = false restricts it to the moved axis.
inline TorusState torus_step(const TorusState& state, int action,
                             const TorusEnv& env, Pcg32& rng) {
  int axis = env.action_axis(action);
  if (axis >= env.dim) throw std::invalid_argument("torus_step: action out of range");
  TorusState next = state;
  next.coords[axis] += env.action_move(action);
  for (int i = 0; i < env.dim; ++i) {
    if (env.noise_sigma > 0.0 && (env.noise_isotropic || i == axis))
      next.coords[i] += env.noise_sigma * rng.normal();
    next.coords[i] = wrap01(next.coords[i]);
  }
  return next;
}

/// Rescaled L1 torus distance: (1/n) sum_i min(d_i, 1 - d_i) with
/// d_i = (s_i - g_i) mod 1. Symmetric, in [0, 0.5].
inline double torus_distance(const std::vector<double>& s,
                             const std::vector<double>& g) {
  if (s.size() != g.size())
    throw std::invalid_argument("torus_distance: dimension mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    double d = wrap01(s[i] - g[i]);
    total += std::min(d, 1.0 - d);
  }
  return total / static_cast<double>(s.size());
}

/// Observation embedding (cos(2 pi s_1), ..., cos(2 pi s_n),
/// sin(2 pi s_1), ..., sin(2 pi s_n)); removes the wrap discontinuity.
inline std::vector<double> torus_observe(const TorusState& state) {
  int n = static_cast<int>(state.coords.size());
  std::vector<double> obs(2 * n);
  for (int i = 0; i < n; ++i) {
    double t = 2.0 * 3.14159265358979323846 * state.coords[i];
    obs[i] = std::cos(t);
    obs[n + i] = std::sin(t);
  }
  return obs;
}

/// Sparse reward indicator 1{distance <= eps}. The Dirac methods never call
/// this; the counter lets tests check that structurally.
inline double torus_sparse_reward(const TorusEnv& env,
                                  const std::vector<double>& s,
                                  const std::vector<double>& g) {
  ++env.reward_queries;
  return torus_distance(s, g) <= env.reward_eps ? 1.0 : 0.0;
}

inline TorusState torus_random_state(const TorusEnv& env, Pcg32& rng) {
  TorusState s;
  s.coords.resize(env.dim);
  for (int i = 0; i < env.dim; ++i) s.coords[i] = rng.uniform();
  return s;
}

}  // namespace mgrl
