#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "mgrl/mdp.hpp"
#include "mgrl/metrics.hpp"
#include "mgrl/oracle.hpp"

namespace mgrl {

// Stochastic tabular learners: single-sample updates for UVFA, HER,
// delta-DQN, delta-TD(n) and delta-Actor-Critic, plus a seeded training
// loop. Update rules follow the ascent convention theta <- theta + eta * d.

/// Mutable state of one tabular learner. Q-learners use q/q_target,
/// policy-evaluation and actor-critic use m/m_target (+ logits for the
/// actor). `use_target` switches bootstrapping between the live table
/// (the literal algorithm) and a periodically refreshed hard copy.
struct LearnerState {
  Table3 q;         // [s][a][g]
  Table3 q_target;
  Table3 m;         // [s][g][g']
  Table3 m_target;
  Table3 logits;    // [s][g][a]
  bool use_target = false;
  long steps = 0;

  void refresh_targets() {
    q_target = q;
    m_target = m;
  }
  const Table3& q_boot() const { return use_target ? q_target : q; }
  const Table3& m_boot() const { return use_target ? m_target : m; }
};

inline LearnerState make_q_learner(const FiniteMultiGoalMdp& mdp,
                                   bool use_target = false) {
  LearnerState st;
  st.q = Table3(mdp.n_states, mdp.n_actions, mdp.n_goals, 0.0);
  st.q_target = st.q;
  st.use_target = use_target;
  return st;
}

inline LearnerState make_m_learner(const FiniteMultiGoalMdp& mdp,
                                   bool use_target = false) {
  LearnerState st;
  st.m = Table3(mdp.n_states, mdp.n_goals, mdp.n_goals, 0.0);
  st.m_target = st.m;
  st.logits = Table3(mdp.n_states, mdp.n_goals, mdp.n_actions, 0.0);
  st.use_target = use_target;
  return st;
}

inline void check_finite_entry(double v, const char* who) {
  if (!std::isfinite(v))
    throw std::runtime_error(std::string(who) + ": table entry became non-finite");
}

/// UVFA Q-learning update; touches exactly one entry.
inline void uvfa_step(LearnerState& st, const FiniteMultiGoalMdp& mdp,
                      const TransitionSample& t, double eta) {
  const Table3& boot = st.q_boot();
  double vmax = boot.at(t.s_next, 0, t.g);
  for (int a = 1; a < boot.d1; ++a)
    vmax = std::max(vmax, boot.at(t.s_next, a, t.g));
  double& cell = st.q.at(t.s, t.a, t.g);
  cell += eta * (mdp.reward(t.s, t.g) + mdp.discount * vmax - cell);
  check_finite_entry(cell, "uvfa_step");
  ++st.steps;
}

/// HER resampling of one transition from a trajectory. Draw order: U, then K
/// (redrawn while K+1 exceeds the horizon), then L (redrawn while K+L does).
/// U = 1 relabels the goal to phi(s_{K+L}); L = 0 therefore relabels to the
/// goal achieved at the update state itself.
inline TransitionSample her_resample(const FiniteMultiGoalMdp& mdp,
                                     const Trajectory& traj,
                                     const HerConfig& cfg, Pcg32& rng) {
  int T = traj.length();
  if (T < 1) throw std::invalid_argument("her_resample: empty trajectory");
  auto geometric = [&rng](double gamma) {
    double u = rng.uniform();
    if (u <= 0.0) return 0;
    double k = std::floor(std::log1p(-u) / std::log(gamma));
    if (!(k >= 0.0)) return 0;
    return k > 1e9 ? 1000000000 : static_cast<int>(k);
  };
  constexpr int kMaxRedraws = 100000;

  bool relabel = rng.bernoulli(cfg.alpha);
  int k = geometric(cfg.pk_gamma);
  int tries = 0;
  while (k + 1 > T) {
    if (++tries > kMaxRedraws)
      throw std::runtime_error("her_resample: trajectory of length " +
                               std::to_string(T) + " too short for p_K");
    k = geometric(cfg.pk_gamma);
  }
  TransitionSample out;
  out.s = traj.states[k];
  out.a = traj.actions[k];
  out.s_next = traj.states[k + 1];
  out.g = traj.goal;
  if (relabel) {
    int l = geometric(cfg.pl_gamma);
    tries = 0;
    while (k + l > T) {
      if (++tries > kMaxRedraws)
        throw std::runtime_error("her_resample: trajectory of length " +
                                 std::to_string(T) + " too short for p_L");
      l = geometric(cfg.pl_gamma);
    }
    out.g = mdp.goal_map[traj.states[k + l]];
  }
  return out;
}

/// HER Q-learning step: the UVFA rule applied to the resampled transition
/// (bootstrapping at s_{K+1}).
inline void her_step(LearnerState& st, const FiniteMultiGoalMdp& mdp,
                     const TransitionSample& resampled, double eta) {
  uvfa_step(st, mdp, resampled, eta);
}

/// Tabular delta-DQN update. `t.g` must be an independently sampled goal.
/// Exactly two entries change (one when g = phi(s): the Dirac increment is
/// applied first and the decay term reads the pre-increment value).
inline void delta_dqn_step(LearnerState& st, const FiniteMultiGoalMdp& mdp,
                           const TransitionSample& t, double eta) {
  const Table3& boot = st.q_boot();
  double vmax = boot.at(t.s_next, 0, t.g);
  for (int a = 1; a < boot.d1; ++a)
    vmax = std::max(vmax, boot.at(t.s_next, a, t.g));
  double pre = st.q.at(t.s, t.a, t.g);
  st.q.at(t.s, t.a, mdp.goal_map[t.s]) += eta;
  double& cell = st.q.at(t.s, t.a, t.g);
  cell += eta * (mdp.discount * vmax - pre);
  check_finite_entry(cell, "delta_dqn_step");
  ++st.steps;
}

/// Horizon-n delta-TD update at the head of a trajectory segment
/// s_k .. s_{k+n} (n = segment.size() - 1). `g` is the trajectory goal,
/// `g_indep` an independently sampled goal. Touches at most n+1 entries.
inline void delta_td_n_step(LearnerState& st, const FiniteMultiGoalMdp& mdp,
                            const std::vector<int>& segment, int g, int g_indep,
                            double eta) {
  if (segment.size() < 2)
    throw std::invalid_argument("delta_td_n_step: segment needs >= 2 states");
  int n = static_cast<int>(segment.size()) - 1;
  int s0 = segment[0];
  double discount_l = 1.0;
  for (int l = 0; l < n; ++l) {
    st.m.at(s0, g, mdp.goal_map[segment[l]]) += eta * discount_l;
    discount_l *= mdp.discount;
  }
  double boot = st.m_boot().at(segment[n], g, g_indep);
  double& cell = st.m.at(s0, g, g_indep);
  cell += eta * (discount_l * boot - cell);
  check_finite_entry(cell, "delta_td_n_step");
  ++st.steps;
}

/// One step of delta-Actor-Critic (critic = delta-TD(1), actor = discounted
/// score-function update on the softmax logits). Both deltas are computed
/// from pre-update values, then applied critic first.
inline void delta_ac_step(LearnerState& st, const FiniteMultiGoalMdp& mdp,
                          int t, const TransitionSample& tr, int g_indep,
                          double eta_critic, double eta_actor) {
  int A = st.logits.d2;
  // critic delta (not yet applied)
  double boot = st.m_boot().at(tr.s_next, tr.g, g_indep);
  double pre = st.m.at(tr.s, tr.g, g_indep);
  double critic_delta = mdp.discount * boot - pre;

  // actor delta from pre-update critic values
  double adv = mdp.discount * st.m.at(tr.s_next, tr.g, tr.g) -
               st.m.at(tr.s, tr.g, tr.g);
  double scale = eta_actor * std::pow(mdp.discount, t) * adv;
  const double* lrow = st.logits.row(tr.s, tr.g);
  double mx = lrow[0];
  for (int a = 1; a < A; ++a) mx = std::max(mx, lrow[a]);
  double z = 0.0;
  std::vector<double> p(A);
  for (int a = 0; a < A; ++a) {
    p[a] = std::exp(lrow[a] - mx);
    z += p[a];
  }
  for (int a = 0; a < A; ++a) p[a] /= z;

  st.m.at(tr.s, tr.g, mdp.goal_map[tr.s]) += eta_critic;
  st.m.at(tr.s, tr.g, g_indep) += eta_critic * critic_delta;
  check_finite_entry(st.m.at(tr.s, tr.g, g_indep), "delta_ac_step");
  for (int b = 0; b < A; ++b) {
    double& cell = st.logits.at(tr.s, tr.g, b);
    cell += scale * ((b == tr.a ? 1.0 : 0.0) - p[b]);
    check_finite_entry(cell, "delta_ac_step");
  }
  ++st.steps;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct TabularTrainConfig {
  long total_updates = 20000;
  int horizon = 50;          // behavior trajectory length
  double lr = 0.1;           // eta (critic eta_M for delta-AC)
  double lr_actor = 0.05;    // eta_pi
  double lr_decay = 0.0;     // eta_t = lr / (1 + lr_decay * t)
  double epsilon = 0.2;      // eps-greedy behavior for the q-learners
  double her_alpha = 0.8;
  double her_pk = 0.9;
  double her_pl = 0.9;
  int target_refresh = 0;    // 0: bootstrap on the live table; else hard copy period
  int td_n = 1;
  long eval_interval = 2000;
  long seed = 0;
};

struct TabularTrainResult {
  MetricLog log;
  LearnerState state;
};

/// Runs one tabular training: alternates trajectory collection (eps-greedy
/// for the q-learners, softmax actor for delta-AC, uniform for delta-TD) and
/// single-sample updates, logging the exact sup-norm distance to the oracle
/// solution (and exact J for the actor) every eval interval.
inline TabularTrainResult train(Algo algo, const FiniteMultiGoalMdp& mdp,
                                const TabularTrainConfig& cfg, Pcg32& rng) {
  if (algo_is_deep(algo))
    throw std::invalid_argument("train: deep algorithms live in approx.hpp");
  if (algo == Algo::delta_td && cfg.td_n > cfg.horizon)
    throw std::invalid_argument("train: td_n must not exceed the horizon");

  bool q_learner =
      algo == Algo::uvfa || algo == Algo::her || algo == Algo::delta_dqn;
  LearnerState st = q_learner ? make_q_learner(mdp, cfg.target_refresh > 0)
                              : make_m_learner(mdp, cfg.target_refresh > 0);

  // oracle references for the logged distance
  Table3 q_ref;  // Q scale for uvfa/her, density scale for delta_dqn
  Table3 m_ref;
  TabularPolicy td_policy =
      uniform_policy(mdp.n_states, mdp.n_goals, mdp.n_actions);
  if (q_learner) {
    TabularQ qs = solve_q_star(mdp);
    q_ref = (algo == Algo::delta_dqn) ? qs.q : q_from_density(mdp, qs.q);
  } else if (algo == Algo::delta_td) {
    m_ref = solve_m_pi(mdp, td_policy).m;
  }

  HerConfig her_cfg;
  her_cfg.alpha = cfg.her_alpha;
  her_cfg.pk_gamma = cfg.her_pk;
  her_cfg.pl_gamma = cfg.her_pl;

  TabularTrainResult result;
  long episode = 0;
  auto log_eval = [&](long step) {
    if (q_learner) {
      result.log.push_back({step, episode, "sup_dist_to_oracle",
                            sup_diff(st.q.v, q_ref.v), cfg.seed});
    } else if (algo == Algo::delta_td) {
      result.log.push_back({step, episode, "sup_dist_to_oracle",
                            sup_diff(st.m.v, m_ref.v), cfg.seed});
    } else {
      TabularPolicy actor = softmax_policy(st.logits);
      result.log.push_back({step, episode, "exact_return",
                            exact_expected_return(mdp, actor), cfg.seed});
      GoalDensityTable m_now = solve_m_pi(mdp, actor);
      result.log.push_back({step, episode, "critic_sup_dist",
                            sup_diff(st.m.v, m_now.m.v), cfg.seed});
    }
  };

  auto eta_at = [&](long t) { return cfg.lr / (1.0 + cfg.lr_decay * t); };

  while (st.steps < cfg.total_updates) {
    TabularPolicy behavior;
    if (q_learner)
      behavior = epsilon_greedy(st.q, cfg.epsilon);
    else if (algo == Algo::delta_ac)
      behavior = softmax_policy(st.logits);
    else
      behavior = td_policy;
    Trajectory traj = sample_trajectory(mdp, behavior, cfg.horizon, rng);
    ++episode;

    int T = traj.length();
    for (int t = 0; t < T && st.steps < cfg.total_updates; ++t) {
      if (cfg.target_refresh > 0 && st.steps % cfg.target_refresh == 0)
        st.refresh_targets();
      double eta = eta_at(st.steps);
      long steps_before = st.steps;
      switch (algo) {
        case Algo::uvfa: {
          TransitionSample tr{traj.states[t], traj.actions[t],
                              traj.states[t + 1], traj.goal};
          uvfa_step(st, mdp, tr, eta);
          break;
        }
        case Algo::her: {
          TransitionSample tr = her_resample(mdp, traj, her_cfg, rng);
          her_step(st, mdp, tr, eta);
          break;
        }
        case Algo::delta_dqn: {
          TransitionSample tr{traj.states[t], traj.actions[t],
                              traj.states[t + 1],
                              rng.categorical(mdp.goal_dist)};
          delta_dqn_step(st, mdp, tr, eta);
          break;
        }
        case Algo::delta_td: {
          if (t + cfg.td_n > T) break;
          std::vector<int> seg(traj.states.begin() + t,
                               traj.states.begin() + t + cfg.td_n + 1);
          delta_td_n_step(st, mdp, seg, traj.goal,
                          rng.categorical(mdp.goal_dist), eta);
          break;
        }
        case Algo::delta_ac: {
          TransitionSample tr{traj.states[t], traj.actions[t],
                              traj.states[t + 1], traj.goal};
          delta_ac_step(st, mdp, t, tr, rng.categorical(mdp.goal_dist), eta,
                        cfg.lr_actor);
          break;
        }
        default:
          throw std::logic_error("train: unhandled algo");
      }
      if (st.steps == steps_before) continue;  // segment too short, no update
      if (cfg.eval_interval > 0 && st.steps % cfg.eval_interval == 0) {
        // the step functions guard every written entry; sweep the whole
        // table here as well before trusting it for evaluation
        if (!all_finite(q_learner ? st.q.v : st.m.v))
          throw std::runtime_error("train: non-finite table at step " +
                                   std::to_string(st.steps));
        log_eval(st.steps);
      }
    }
  }
  if (cfg.total_updates > 0 &&
      !(cfg.eval_interval > 0 && st.steps % cfg.eval_interval == 0))
    log_eval(st.steps);
  result.state = std::move(st);
  return result;
}

}  // namespace mgrl
