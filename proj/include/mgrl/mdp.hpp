#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "mgrl/rng.hpp"
#include "mgrl/table.hpp"

namespace mgrl {

constexpr double kProbTol = 1e-12;  // tolerance for stochasticity checks

/// Finite multi-goal MDP: state/action/goal counts, transition tensor
/// P[s][a][s'], goal map phi : S -> G, goal sampling distribution rho_G,
/// per-goal initial distribution rho_0(s0|g), and discount gamma.
///
/// The finite reward for goal g is R(s, g) = 1{phi(s) = g}; the Dirac-reward
/// methods never evaluate it and work with densities instead (see oracle.hpp).
struct FiniteMultiGoalMdp {
  int n_states = 0;
  int n_actions = 0;
  int n_goals = 0;
  Table3 transition;      // [s][a][s']
  std::vector<int> goal_map;  // phi[s] in {0..G-1}
  std::vector<double> goal_dist;  // rho_G[g]
  Table2 init_dist;       // rho_0[g][s0]
  double discount = 0.9;

  // Set by validate(): whether every goal is hit by some state. Needed by the
  // deterministic-environment unbiasedness checks.
  bool goal_map_surjective = false;
  // Index of a freeze action if this MDP came out of augment_with_freeze,
  // -1 otherwise. Guards against stacking two freeze augmentations.
  int freeze_action = -1;

  double reward(int s, int g) const { return goal_map[s] == g ? 1.0 : 0.0; }

  bool is_deterministic() const {
    for (int s = 0; s < n_states; ++s)
      for (int a = 0; a < n_actions; ++a)
        for (int s2 = 0; s2 < n_states; ++s2) {
          double p = transition.at(s, a, s2);
          if (p != 0.0 && p != 1.0) return false;
        }
    return true;
  }

  /// Checks every structural invariant; throws std::invalid_argument with a
  /// description on the first violation. Also records goal-map surjectivity.
  void validate() {
    if (n_states <= 0 || n_actions <= 0 || n_goals <= 0)
      throw std::invalid_argument("mdp: state/action/goal counts must be positive");
    if (!(discount >= 0.0 && discount < 1.0))
      throw std::invalid_argument("mdp: discount must lie in [0,1)");
    if (transition.d0 != n_states || transition.d1 != n_actions ||
        transition.d2 != n_states)
      throw std::invalid_argument("mdp: transition tensor shape mismatch");
    if (static_cast<int>(goal_map.size()) != n_states)
      throw std::invalid_argument("mdp: goal_map must have one entry per state");
    if (static_cast<int>(goal_dist.size()) != n_goals)
      throw std::invalid_argument("mdp: goal_dist size mismatch");
    if (init_dist.d0 != n_goals || init_dist.d1 != n_states)
      throw std::invalid_argument("mdp: init_dist shape mismatch");

    for (int s = 0; s < n_states; ++s)
      for (int a = 0; a < n_actions; ++a) {
        double sum = 0.0;
        for (int s2 = 0; s2 < n_states; ++s2) {
          double p = transition.at(s, a, s2);
          if (p < 0.0)
            throw std::invalid_argument("mdp: negative transition probability at s=" +
                                        std::to_string(s) + " a=" + std::to_string(a));
          sum += p;
        }
        if (std::fabs(sum - 1.0) > kProbTol)
          throw std::invalid_argument("mdp: transition row (s=" + std::to_string(s) +
                                      ", a=" + std::to_string(a) + ") sums to " +
                                      std::to_string(sum));
      }

    double gsum = 0.0;
    for (int g = 0; g < n_goals; ++g) {
      if (goal_dist[g] < 0.0)
        throw std::invalid_argument("mdp: negative goal probability");
      gsum += goal_dist[g];
    }
    if (std::fabs(gsum - 1.0) > kProbTol)
      throw std::invalid_argument("mdp: goal_dist sums to " + std::to_string(gsum));

    for (int g = 0; g < n_goals; ++g) {
      double isum = 0.0;
      for (int s = 0; s < n_states; ++s) {
        double p = init_dist.at(g, s);
        if (p < 0.0) throw std::invalid_argument("mdp: negative init probability");
        isum += p;
      }
      if (std::fabs(isum - 1.0) > kProbTol)
        throw std::invalid_argument("mdp: init_dist row for goal " +
                                    std::to_string(g) + " sums to " +
                                    std::to_string(isum));
    }

    std::vector<bool> hit(n_goals, false);
    for (int s = 0; s < n_states; ++s) {
      if (goal_map[s] < 0 || goal_map[s] >= n_goals)
        throw std::invalid_argument("mdp: goal_map[" + std::to_string(s) +
                                    "] out of range");
      hit[goal_map[s]] = true;
    }
    goal_map_surjective = true;
    for (int g = 0; g < n_goals; ++g)
      if (!hit[g]) goal_map_surjective = false;
  }
};

/// Goal-conditioned policy pi(a|s, g), stored as probs[s][g][a].
/// When built from logits (softmax_policy) the logits are kept so policy
/// gradient code can differentiate through the parametrization.
struct TabularPolicy {
  Table3 probs;       // [s][g][a]
  Table3 logits;      // [s][g][a]; empty unless softmax-parametrized
  bool has_logits = false;

  int n_states() const { return probs.d0; }
  int n_goals() const { return probs.d1; }
  int n_actions() const { return probs.d2; }

  void validate() const {
    for (int s = 0; s < probs.d0; ++s)
      for (int g = 0; g < probs.d1; ++g) {
        double sum = 0.0;
        for (int a = 0; a < probs.d2; ++a) {
          double p = probs.at(s, g, a);
          if (p < 0.0)
            throw std::invalid_argument("policy: negative probability");
          sum += p;
        }
        if (std::fabs(sum - 1.0) > kProbTol)
          throw std::invalid_argument("policy: row (s=" + std::to_string(s) +
                                      ", g=" + std::to_string(g) + ") sums to " +
                                      std::to_string(sum));
      }
  }

  void check_matches(const FiniteMultiGoalMdp& mdp) const {
    if (probs.d0 != mdp.n_states || probs.d1 != mdp.n_goals ||
        probs.d2 != mdp.n_actions)
      throw std::invalid_argument("policy dimensions do not match mdp");
  }
};

/// One sampled episode: the goal it was conditioned on, states s_0..s_T and
/// actions a_0..a_{T-1}.
struct Trajectory {
  int goal = 0;
  std::vector<int> states;
  std::vector<int> actions;

  int length() const { return static_cast<int>(actions.size()); }

  void validate(const FiniteMultiGoalMdp& mdp) const {
    if (actions.size() + 1 != states.size())
      throw std::invalid_argument("trajectory: actions.length must be states.length - 1");
    if (goal < 0 || goal >= mdp.n_goals)
      throw std::invalid_argument("trajectory: goal out of range");
    for (int s : states)
      if (s < 0 || s >= mdp.n_states)
        throw std::invalid_argument("trajectory: state out of range");
    for (int a : actions)
      if (a < 0 || a >= mdp.n_actions)
        throw std::invalid_argument("trajectory: action out of range");
  }
};

struct TransitionSample {
  int s = 0;
  int a = 0;
  int s_next = 0;
  int g = 0;
};

/// Samples one episode of `horizon` steps. Draw order is fixed so runs are
/// reproducible: goal (1 draw), s0 (1 draw), then per step action then next
/// state -- exactly 2 + 2*horizon draws total.
inline Trajectory sample_trajectory(const FiniteMultiGoalMdp& mdp,
                                    const TabularPolicy& policy, int horizon,
                                    Pcg32& rng) {
  if (horizon < 1) throw std::invalid_argument("sample_trajectory: horizon >= 1");
  policy.check_matches(mdp);

  Trajectory traj;
  traj.goal = rng.categorical(mdp.goal_dist.data(), mdp.n_goals);
  int s = rng.categorical(mdp.init_dist.row(traj.goal), mdp.n_states);
  traj.states.reserve(horizon + 1);
  traj.actions.reserve(horizon);
  traj.states.push_back(s);
  for (int t = 0; t < horizon; ++t) {
    int a = rng.categorical(policy.probs.row(s, traj.goal), mdp.n_actions);
    int s2 = rng.categorical(mdp.transition.row(s, a), mdp.n_states);
    traj.actions.push_back(a);
    traj.states.push_back(s2);
    s = s2;
  }
  return traj;
}

/// P^pi[g][s][s'] = sum_a pi(a|s,g) P(s'|s,a).
inline Table3 policy_transition_kernel(const FiniteMultiGoalMdp& mdp,
                                       const TabularPolicy& policy) {
  policy.check_matches(mdp);
  Table3 kernel(mdp.n_goals, mdp.n_states, mdp.n_states, 0.0);
  for (int g = 0; g < mdp.n_goals; ++g)
    for (int s = 0; s < mdp.n_states; ++s)
      for (int a = 0; a < mdp.n_actions; ++a) {
        double pa = policy.probs.at(s, g, a);
        if (pa == 0.0) continue;
        const double* prow = mdp.transition.row(s, a);
        double* krow = kernel.row(g, s);
        for (int s2 = 0; s2 < mdp.n_states; ++s2) krow[s2] += pa * prow[s2];
      }
  return kernel;
}

/// Greedy argmax over actions of q[s][a][g], lowest action index winning ties.
inline int greedy_action(const Table3& q, int s, int g) {
  int best = 0;
  double best_v = q.at(s, 0, g);
  for (int a = 1; a < q.d1; ++a) {
    double v = q.at(s, a, g);
    if (v > best_v) {
      best_v = v;
      best = a;
    }
  }
  return best;
}

/// Epsilon-greedy policy around a q table (q indexed [s][a][g]): mass
/// 1-epsilon on the greedy action (ties to the lowest index), epsilon spread
/// uniformly over all actions.
inline TabularPolicy epsilon_greedy(const Table3& q, double epsilon) {
  if (!(epsilon >= 0.0 && epsilon <= 1.0))
    throw std::invalid_argument("epsilon_greedy: epsilon must lie in [0,1]");
  int S = q.d0, A = q.d1, G = q.d2;
  TabularPolicy policy;
  policy.probs = Table3(S, G, A, epsilon / A);
  for (int s = 0; s < S; ++s)
    for (int g = 0; g < G; ++g)
      policy.probs.at(s, g, greedy_action(q, s, g)) += 1.0 - epsilon;
  return policy;
}

template <typename QTable>
TabularPolicy epsilon_greedy(const QTable& q, double epsilon)
  requires requires { q.q; }
{
  return epsilon_greedy(q.q, epsilon);
}

/// Row-wise softmax of logits[s][g][a], guarded by max-subtraction.
inline TabularPolicy softmax_policy(const Table3& logits) {
  if (!all_finite(logits.v))
    throw std::invalid_argument("softmax_policy: logits must be finite");
  TabularPolicy policy;
  policy.logits = logits;
  policy.has_logits = true;
  policy.probs = Table3(logits.d0, logits.d1, logits.d2, 0.0);
  for (int s = 0; s < logits.d0; ++s)
    for (int g = 0; g < logits.d1; ++g) {
      const double* in = logits.row(s, g);
      double* out = policy.probs.row(s, g);
      double mx = in[0];
      for (int a = 1; a < logits.d2; ++a) mx = std::max(mx, in[a]);
      double z = 0.0;
      for (int a = 0; a < logits.d2; ++a) {
        out[a] = std::exp(in[a] - mx);
        z += out[a];
      }
      for (int a = 0; a < logits.d2; ++a) out[a] /= z;
    }
  return policy;
}

/// Uniform policy over actions for every (s, g).
inline TabularPolicy uniform_policy(int n_states, int n_goals, int n_actions) {
  TabularPolicy policy;
  policy.probs = Table3(n_states, n_goals, n_actions, 1.0 / n_actions);
  return policy;
}

}  // namespace mgrl
