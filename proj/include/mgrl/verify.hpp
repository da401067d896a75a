#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "mgrl/envs.hpp"
#include "mgrl/oracle.hpp"
#include "mgrl/tabular.hpp"

namespace mgrl {

// Machine checks of the theorem statements, shared by `mgrl verify` and the
// acceptance suite. Every check reports a measured value against a bound
// pinned here.

enum class CheckKind {
  residual,  // pass iff value <= bound; --tol overrides the bound
  margin,    // pass iff value >  bound (bound fixed)
  flag,      // pass iff value != 0     (bound unused)
};

struct CheckResult {
  std::string name;
  CheckKind kind = CheckKind::residual;
  double value = 0.0;
  double bound = 0.0;
  bool pass = false;
  std::string note;
};

struct SuiteReport {
  std::string suite;
  std::vector<CheckResult> checks;

  bool all_pass() const {
    for (const CheckResult& c : checks)
      if (!c.pass) return false;
    return true;
  }
};

namespace verify_detail {

inline CheckResult residual_check(const std::string& name, double value,
                                  double bound, double tol_override,
                                  const std::string& note = "") {
  CheckResult c;
  c.name = name;
  c.kind = CheckKind::residual;
  c.value = value;
  c.bound = tol_override >= 0.0 ? tol_override : bound;
  c.pass = value <= c.bound;
  c.note = note;
  return c;
}

inline CheckResult margin_check(const std::string& name, double value,
                                double bound, const std::string& note = "") {
  CheckResult c;
  c.name = name;
  c.kind = CheckKind::margin;
  c.value = value;
  c.bound = bound;
  c.pass = value > bound;
  c.note = note;
  return c;
}

inline CheckResult flag_check(const std::string& name, bool ok,
                              const std::string& note = "") {
  CheckResult c;
  c.name = name;
  c.kind = CheckKind::flag;
  c.value = ok ? 1.0 : 0.0;
  c.pass = ok;
  c.note = note;
  return c;
}

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0.0 || bb == 0.0) return 0.0;
  return ab / std::sqrt(aa * bb);
}

inline HerConfig standard_her_config(const FiniteMultiGoalMdp& mdp,
                                     const TabularPolicy& exploration) {
  HerConfig cfg;
  cfg.alpha = 0.8;
  cfg.pk_gamma = mdp.discount;
  cfg.pl_gamma = mdp.discount;
  cfg.exploration = exploration;
  cfg.truncation = 1;
  cfg.truncation = her_required_truncation(cfg) + 10;
  return cfg;
}

inline Table3 random_logits(int S, int G, int A, Pcg32& rng) {
  Table3 logits(S, G, A, 0.0);
  for (double& x : logits.v) x = rng.normal();
  return logits;
}

}  // namespace verify_detail

/// HER is unbiased in deterministic environments: on 20 random
/// deterministic strongly connected MDPs (S <= 6, A in {2,3}, gamma = 0.9,
/// eps-greedy exploration around Q* with eps = 0.2), the exact expected HER
/// update at Q_theta = Q_tar = Q* has sup norm <= 1e-10.
inline SuiteReport suite_theorem2_deterministic(double tol = -1.0) {
  using namespace verify_detail;
  SuiteReport rep;
  rep.suite = "theorem2_deterministic";
  double worst = 0.0;
  double worst_factor = 0.0;
  for (int i = 0; i < 20; ++i) {
    Pcg32 rng(100 + i, 3);
    int S = 3 + i % 4;
    int A = 2 + i % 2;
    FiniteMultiGoalMdp mdp = make_deterministic_reachable_mdp(S, A, 0.9, rng);
    TabularQ q_star = solve_q_star(mdp, 1e-13);
    Table3 q_plain = q_from_density(mdp, q_star.q);
    HerConfig cfg = standard_her_config(mdp, epsilon_greedy(q_star.q, 0.2));
    HerDistribution dist = her_distribution(mdp, cfg);
    TabularQ qs{q_plain};
    Table3 upd = expected_update_her(mdp, dist, qs, qs);
    worst = std::max(worst, sup_norm(upd.v));
    // factorization mu = mu_tilde * P must hold in the deterministic case
    double fac = 0.0;
    for (int s = 0; s < mdp.n_states; ++s)
      for (int a = 0; a < mdp.n_actions; ++a)
        for (int s2 = 0; s2 < mdp.n_states; ++s2)
          for (int g = 0; g < mdp.n_goals; ++g)
            fac = std::max(fac, std::fabs(dist.mu.at(s, a, s2, g) -
                                          dist.mu_tilde.at(s, a, g) *
                                              mdp.transition.at(s, a, s2)));
    worst_factor = std::max(worst_factor, fac);
  }
  rep.checks.push_back(residual_check("expected_her_update_at_q_star_sup",
                                      worst, 1e-10, tol, "20 deterministic MDPs"));
  rep.checks.push_back(residual_check("mu_her_factorization_deterministic",
                                      worst_factor, 1e-10, tol,
                                      "mu = mu_tilde * P"));
  return rep;
}

/// HER is biased under the freeze action: on 10 freeze-augmented
/// random MDPs (base S = 5, gamma = 0.9), the HER fixed point strictly
/// overestimates a* at every unfrozen (s, g), while the true
/// Q*((s,0), a*, g) equals R(s,g) + gamma / (S (1 - gamma)).
inline SuiteReport suite_theorem1_bias(double tol = -1.0) {
  using namespace verify_detail;
  SuiteReport rep;
  rep.suite = "theorem1_bias";
  double min_margin = std::numeric_limits<double>::infinity();
  double worst_analytic = 0.0;
  for (int i = 0; i < 10; ++i) {
    Pcg32 rng(200 + i, 3);
    FiniteMultiGoalMdp base = make_random_mdp(5, 2, 2, 0.9, rng);
    FiniteMultiGoalMdp aug = augment_with_freeze(base);
    FreezeSpec ix(base);
    TabularQ q_star = solve_q_star(aug, 1e-13);
    Table3 q_plain = q_from_density(aug, q_star.q);
    HerConfig cfg = standard_her_config(aug, epsilon_greedy(q_star.q, 0.2));
    HerDistribution dist = her_distribution(aug, cfg);
    TabularQ q_inf = her_fixed_point(aug, dist, 1e-13);

    double analytic_base = aug.discount / (base.n_states * (1.0 - aug.discount));
    for (int s = 0; s < base.n_states; ++s)
      for (int g = 0; g < aug.n_goals; ++g) {
        int su = ix.unfrozen(s);
        int astar = ix.freeze_action();
        double margin = q_inf.q.at(su, astar, g) - q_plain.at(su, astar, g);
        min_margin = std::min(min_margin, margin);
        double expect = aug.reward(su, g) + analytic_base;
        worst_analytic = std::max(
            worst_analytic, std::fabs(q_plain.at(su, astar, g) - expect));
      }
  }
  rep.checks.push_back(margin_check("her_fixed_point_overestimates_a_star",
                                    min_margin, 0.0,
                                    "min margin over 10 freeze MDPs"));
  rep.checks.push_back(residual_check("q_star_freeze_matches_analytic",
                                      worst_analytic, 1e-9, tol,
                                      "R + gamma/(S(1-gamma))"));
  return rep;
}

/// Unbiasedness of the delta-DQN update: exact expected update at the exact
/// density fixed point vanishes on 20 random stochastic MDPs, and the
/// empirical mean of 1e6 sampled tabular updates per MDP stays inside its
/// 4-sigma Monte-Carlo band coordinate-wise.
inline SuiteReport suite_theorem4_dqn_fixedpoint(double tol = -1.0,
                                                 long mc_samples = 1000000) {
  using namespace verify_detail;
  SuiteReport rep;
  rep.suite = "theorem4_dqn_fixedpoint";
  double worst = 0.0;
  double worst_z = 0.0;  // |mean| / (4 sigma / sqrt(N)), must stay <= 1
  for (int i = 0; i < 20; ++i) {
    Pcg32 rng(300 + i, 3);
    int S = 3 + i % 4;
    int A = 2 + i % 2;
    int branching = 2 + i % 2;
    FiniteMultiGoalMdp mdp = make_random_mdp(S, A, branching, 0.9, rng);
    TabularQ q_star = solve_q_star(mdp, 1e-13);
    Table2 rho_sa(S, A, 1.0 / (S * A));
    Table3 upd = expected_update_delta_dqn(mdp, q_star, q_star, rho_sa);
    worst = std::max(worst, sup_norm(upd.v));

    // Monte-Carlo side: sample the stochastic two-entry update at q*.
    int G = mdp.n_goals;
    std::vector<double> sum(static_cast<std::size_t>(S) * A * G, 0.0);
    std::vector<double> sumsq(sum.size(), 0.0);
    Pcg32 mc_rng(9000 + i, 5);
    Table2 vmax(S, G, 0.0);
    for (int s = 0; s < S; ++s)
      for (int g = 0; g < G; ++g) {
        double m = q_star.q.at(s, 0, g);
        for (int a = 1; a < A; ++a) m = std::max(m, q_star.q.at(s, a, g));
        vmax.at(s, g) = m;
      }
    for (long n = 0; n < mc_samples; ++n) {
      int sa = mc_rng.uniform_int(S * A);
      int s = sa / A, a = sa % A;
      int s2 = mc_rng.categorical(mdp.transition.row(s, a), S);
      int g = mc_rng.categorical(mdp.goal_dist.data(), G);
      std::size_t dirac_ix =
          (static_cast<std::size_t>(s) * A + a) * G + mdp.goal_map[s];
      std::size_t td_ix = (static_cast<std::size_t>(s) * A + a) * G + g;
      double td = mdp.discount * vmax.at(s2, g) - q_star.q.at(s, a, g);
      sum[dirac_ix] += 1.0;
      sumsq[dirac_ix] += 1.0;
      sum[td_ix] += td;
      sumsq[td_ix] += td * td;
      if (dirac_ix == td_ix) {
        // both increments hit one coordinate: correct to a single draw
        sumsq[dirac_ix] += 2.0 * td;  // (1+td)^2 = 1 + 2 td + td^2
      }
    }
    for (std::size_t c = 0; c < sum.size(); ++c) {
      double mean = sum[c] / mc_samples;
      double var = (sumsq[c] - sum[c] * sum[c] / mc_samples) / (mc_samples - 1);
      if (var <= 0.0) {
        if (mean != 0.0) worst_z = std::max(worst_z, 1e18);
        continue;
      }
      double band = 4.0 * std::sqrt(var / mc_samples);
      worst_z = std::max(worst_z, std::fabs(mean) / band);
    }
  }
  rep.checks.push_back(residual_check("expected_dqn_update_at_q_star_sup",
                                      worst, 1e-10, tol, "20 stochastic MDPs"));
  rep.checks.push_back(residual_check("mc_mean_within_4_sigma_band", worst_z,
                                      1.0, tol,
                                      "1e6 sampled updates per MDP"));
  return rep;
}

/// Unbiasedness of delta-TD(n): exact expected update at m^pi vanishes for
/// n in {1, 2, 3} on 20 random MDPs with random full-support policies.
inline SuiteReport suite_theorem5_td_fixedpoint(double tol = -1.0) {
  using namespace verify_detail;
  SuiteReport rep;
  rep.suite = "theorem5_td_fixedpoint";
  double worst = 0.0;
  for (int i = 0; i < 20; ++i) {
    Pcg32 rng(400 + i, 3);
    int S = 3 + i % 4;
    int A = 2 + i % 2;
    FiniteMultiGoalMdp mdp = make_random_mdp(S, A, 2, 0.9, rng);
    TabularPolicy policy =
        softmax_policy(random_logits(S, mdp.n_goals, A, rng));
    GoalDensityTable m_pi = solve_m_pi(mdp, policy);
    Table2 rho_sg(S, mdp.n_goals, 1.0 / (S * mdp.n_goals));
    for (int n = 1; n <= 3; ++n) {
      Table3 upd =
          expected_update_delta_td(mdp, policy, m_pi, m_pi, rho_sg, n);
      worst = std::max(worst, sup_norm(upd.v));
    }
  }
  rep.checks.push_back(residual_check("expected_td_update_at_m_pi_sup", worst,
                                      1e-10, tol,
                                      "20 MDPs, n in {1,2,3}"));
  return rep;
}

/// Policy gradient direction: with the exact critic m^pi, the expected
/// delta-AC update matches central finite differences of the exact return
/// (cosine >= 0.999, proportionality residual <= 1e-3), and adding a
/// state-goal baseline changes nothing.
inline SuiteReport suite_policy_gradient_direction(double tol = -1.0) {
  using namespace verify_detail;
  SuiteReport rep;
  rep.suite = "policy_gradient_direction";
  double min_cos = 1.0;
  double worst_baseline = 0.0;
  double worst_prop = 0.0;
  for (int i = 0; i < 10; ++i) {
    Pcg32 rng(500 + i, 3);
    int S = 2 + i % 3;
    int A = 2 + i % 2;
    FiniteMultiGoalMdp mdp = make_random_mdp(S, A, 2, 0.9, rng);
    Table3 logits = random_logits(S, mdp.n_goals, A, rng);
    TabularPolicy policy = softmax_policy(logits);
    GoalDensityTable m_pi = solve_m_pi(mdp, policy);
    Table3 upd = expected_update_delta_ac(mdp, policy, m_pi);
    Table3 fd = finite_difference_grad_J(mdp, logits, 1e-5);
    min_cos = std::min(min_cos, cosine(upd.v, fd.v));

    double dot = 0.0, fd2 = 0.0;
    for (std::size_t c = 0; c < fd.v.size(); ++c) {
      dot += upd.v[c] * fd.v[c];
      fd2 += fd.v[c] * fd.v[c];
    }
    double scale = fd2 > 0.0 ? dot / fd2 : 0.0;
    double resid2 = 0.0;
    for (std::size_t c = 0; c < fd.v.size(); ++c) {
      double r = upd.v[c] - scale * fd.v[c];
      resid2 += r * r;
    }
    if (fd2 > 0.0)
      worst_prop = std::max(worst_prop, std::sqrt(resid2 / fd2));

    Table2 baseline(S, mdp.n_goals, 0.0);
    for (double& b : baseline.v) b = rng.normal();
    Table3 upd_b = expected_update_delta_ac(mdp, policy, m_pi, &baseline);
    worst_baseline = std::max(worst_baseline, sup_diff(upd.v, upd_b.v));
  }
  rep.checks.push_back(margin_check("delta_ac_vs_fd_cosine", min_cos, 0.999,
                                    "min over 10 MDPs, h = 1e-5"));
  rep.checks.push_back(residual_check("delta_ac_proportionality_residual",
                                      worst_prop, 1e-3, tol, "relative"));
  rep.checks.push_back(residual_check("baseline_invariance_sup",
                                      worst_baseline, 1e-10, tol,
                                      "random state-goal baseline"));
  return rep;
}

/// Monotone mass on the dyadic tree (depth 12): masses of T^t 0 never
/// decrease in t; for gamma = 0.4 the root mass converges to 3 within the
/// geometric tail bound; for gamma = 0.6 the divergence flag is raised.
inline SuiteReport suite_dyadic_mass(double tol = -1.0) {
  using namespace verify_detail;
  SuiteReport rep;
  rep.suite = "dyadic_mass";
  const int depth = 12;
  std::vector<int> tree = dyadic_tree_successors(depth);

  double worst_monotone_violation = 0.0;
  double limit_gap = 0.0;
  bool diverge_flag_04 = false, diverge_flag_06 = false;
  double first_mass = 0.0;
  for (double gamma : {0.4, 0.6}) {
    Table2 prev;
    for (int t = 1; t <= depth; ++t) {
      FiniteHorizonMass fh = finite_horizon_mass(tree, 2, t, gamma);
      if (gamma == 0.4) {
        if (t == 1) first_mass = fh.mass.at(0, 0);
        diverge_flag_04 = fh.diverges;
        if (t == depth) {
          double tail = dyadic_mass_tail(gamma, t);
          limit_gap = std::fabs(fh.mass.at(0, 0) - dyadic_mass_limit(gamma)) - tail;
        }
      } else {
        diverge_flag_06 = fh.diverges;
      }
      if (t > 1)
        for (std::size_t c = 0; c < fh.mass.v.size(); ++c)
          worst_monotone_violation =
              std::max(worst_monotone_violation, prev.v[c] - fh.mass.v[c]);
      prev = fh.mass;
    }
  }
  rep.checks.push_back(residual_check("mass_monotone_in_horizon",
                                      worst_monotone_violation, 0.0, tol,
                                      "all (s,a), gamma in {0.4, 0.6}"));
  rep.checks.push_back(residual_check("mass_t1_equals_one",
                                      std::fabs(first_mass - 1.0), 0.0, tol));
  rep.checks.push_back(residual_check("mass_gamma04_within_tail_of_3",
                                      std::max(limit_gap, 0.0), 0.0, tol,
                                      "limit 1 + sum gamma^k 2^(k-1) = 3"));
  rep.checks.push_back(flag_check("divergence_flag_gamma06", diverge_flag_06));
  rep.checks.push_back(flag_check("no_divergence_flag_gamma04", !diverge_flag_04));
  return rep;
}

inline std::vector<std::string> verify_suite_names() {
  return {"theorem1_bias",     "theorem2_deterministic",
          "theorem4_dqn_fixedpoint", "theorem5_td_fixedpoint",
          "policy_gradient_direction", "dyadic_mass"};
}

inline SuiteReport run_verify_suite(const std::string& name, double tol = -1.0) {
  if (name == "theorem1_bias") return suite_theorem1_bias(tol);
  if (name == "theorem2_deterministic") return suite_theorem2_deterministic(tol);
  if (name == "theorem4_dqn_fixedpoint") return suite_theorem4_dqn_fixedpoint(tol);
  if (name == "theorem5_td_fixedpoint") return suite_theorem5_td_fixedpoint(tol);
  if (name == "policy_gradient_direction") return suite_policy_gradient_direction(tol);
  if (name == "dyadic_mass") return suite_dyadic_mass(tol);
  throw std::invalid_argument("unknown verify suite '" + name + "'");
}

}  // namespace mgrl
