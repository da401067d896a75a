#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "mgrl/mdp.hpp"

namespace mgrl {

// Exact solvers and expected-update calculators for finite multi-goal MDPs.
//
// Scale conventions, used consistently below:
//  * "density" tables q[s][a][g] and m[s][g][g'] store Radon-Nikodym
//    densities with respect to rho_G. The Dirac reward delta_{phi(s)}(dg)
//    has density 1{phi(s)=g} / rho_G(g); for uniform rho_G that is
//    G * 1{phi(s)=g}, hence q = G * Q.
//  * HER and UVFA operate on plain Q tables with reward R(s,g) = 1{phi(s)=g}.
// Conversions between the two scales are explicit (q_density_from_q /
// q_from_density below).

/// Density of Q(s, a, dg) with respect to rho_G, stored as q[s][a][g].
/// her_fixed_point reuses the struct for plain (unnormalized) Q tables.
struct TabularQ {
  Table3 q;  // [s][a][g]
};

/// Density of M^pi(s, g, dg') with respect to rho_G, stored as m[s][g][g'].
struct GoalDensityTable {
  Table3 m;  // [s][g][g']
};

struct ConvergenceError : std::runtime_error {
  double residual;
  ConvergenceError(const std::string& what, double res)
      : std::runtime_error(what), residual(res) {}
};

/// Density of the Dirac reward at phi(s), coordinate g.
inline double dirac_density(const FiniteMultiGoalMdp& mdp, int s, int g) {
  if (mdp.goal_map[s] != g) return 0.0;
  double p = mdp.goal_dist[g];
  if (p <= 0.0)
    throw std::invalid_argument("dirac_density: rho_G(g) must be positive for goal " +
                                std::to_string(g));
  return 1.0 / p;
}

inline Table3 q_density_from_q(const FiniteMultiGoalMdp& mdp, const Table3& q_plain) {
  Table3 out = q_plain;
  for (int s = 0; s < out.d0; ++s)
    for (int a = 0; a < out.d1; ++a)
      for (int g = 0; g < out.d2; ++g) out.at(s, a, g) /= mdp.goal_dist[g];
  return out;
}

inline Table3 q_from_density(const FiniteMultiGoalMdp& mdp, const Table3& q_density) {
  Table3 out = q_density;
  for (int s = 0; s < out.d0; ++s)
    for (int a = 0; a < out.d1; ++a)
      for (int g = 0; g < out.d2; ++g) out.at(s, a, g) *= mdp.goal_dist[g];
  return out;
}

/// One optimal Bellman backup in density form:
/// (T q)(s,a,g) = dirac_density(s,g) + gamma * sum_s' P(s'|s,a) max_a' q(s',a',g).
inline Table3 bellman_backup_density(const FiniteMultiGoalMdp& mdp, const Table3& q) {
  int S = mdp.n_states, A = mdp.n_actions, G = mdp.n_goals;
  Table2 vmax(S, G, 0.0);
  for (int s = 0; s < S; ++s)
    for (int g = 0; g < G; ++g) {
      double m = q.at(s, 0, g);
      for (int a = 1; a < A; ++a) m = std::max(m, q.at(s, a, g));
      vmax.at(s, g) = m;
    }
  Table3 out(S, A, G, 0.0);
  for (int s = 0; s < S; ++s)
    for (int a = 0; a < A; ++a) {
      const double* prow = mdp.transition.row(s, a);
      for (int g = 0; g < G; ++g) {
        double acc = 0.0;
        for (int s2 = 0; s2 < S; ++s2) acc += prow[s2] * vmax.at(s2, g);
        out.at(s, a, g) = dirac_density(mdp, s, g) + mdp.discount * acc;
      }
    }
  return out;
}

/// Value iteration from 0 for the density of the optimal action-value
/// measure Q*(s, a, dg). Iterates are entrywise non-decreasing (checked each
/// sweep); they converge to the smallest fixed point of the Bellman operator.
inline TabularQ solve_q_star(const FiniteMultiGoalMdp& mdp, double tol = 1e-12,
                             int max_iter = 100000) {
  if (tol <= 0.0) throw std::invalid_argument("solve_q_star: tol must be positive");
  Table3 q(mdp.n_states, mdp.n_actions, mdp.n_goals, 0.0);
  double residual = 0.0;
  for (int it = 0; it < max_iter; ++it) {
    Table3 next = bellman_backup_density(mdp, q);
    residual = 0.0;
    for (std::size_t i = 0; i < q.v.size(); ++i) {
      double d = next.v[i] - q.v[i];
      if (d < 0.0)
        throw std::logic_error("solve_q_star: iterate decreased (monotonicity violated)");
      residual = std::max(residual, d);
    }
    q = std::move(next);
    if (residual < tol) return TabularQ{std::move(q)};
  }
  throw ConvergenceError("solve_q_star: no convergence after " +
                             std::to_string(max_iter) +
                             " sweeps, residual " + std::to_string(residual),
                         residual);
}

/// Exact successor goal measure density: for each conditioning goal g, solves
/// (I - gamma P^pi_g) m(.,g,.) = D with D(s,g') = dirac_density(s,g').
inline GoalDensityTable solve_m_pi(const FiniteMultiGoalMdp& mdp,
                                   const TabularPolicy& policy) {
  policy.check_matches(mdp);
  int S = mdp.n_states, G = mdp.n_goals;
  Table3 kernel = policy_transition_kernel(mdp, policy);

  Eigen::MatrixXd dirac(S, G);
  for (int s = 0; s < S; ++s)
    for (int g2 = 0; g2 < G; ++g2) dirac(s, g2) = dirac_density(mdp, s, g2);

  GoalDensityTable out;
  out.m = Table3(S, G, G, 0.0);
  for (int g = 0; g < G; ++g) {
    Eigen::MatrixXd system = Eigen::MatrixXd::Identity(S, S);
    for (int s = 0; s < S; ++s)
      for (int s2 = 0; s2 < S; ++s2)
        system(s, s2) -= mdp.discount * kernel.at(g, s, s2);
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(system);
    Eigen::MatrixXd sol = lu.solve(dirac);  // gamma < 1 keeps this regular
    if (!sol.allFinite())
      throw std::runtime_error("solve_m_pi: singular system");
    for (int s = 0; s < S; ++s)
      for (int g2 = 0; g2 < G; ++g2) out.m.at(s, g, g2) = sol(s, g2);
  }
  return out;
}

/// Discounted visitation nu[g][s0][s] = (1-k) sum_t k^t (P^pi_g)^t, computed
/// by linear solve. Each (g, s0) row is a probability vector.
inline Table3 solve_nu_pi(const FiniteMultiGoalMdp& mdp,
                          const TabularPolicy& policy, double pk_gamma) {
  if (!(pk_gamma > 0.0 && pk_gamma < 1.0))
    throw std::invalid_argument("solve_nu_pi: need 0 < pk_gamma < 1");
  policy.check_matches(mdp);
  int S = mdp.n_states, G = mdp.n_goals;
  Table3 kernel = policy_transition_kernel(mdp, policy);
  Table3 nu(G, S, S, 0.0);
  for (int g = 0; g < G; ++g) {
    // nu_g = (1-k) (I - k P)^-1, i.e. solve (I - k P)^T x = (1-k) e_s0 per row;
    // solving with the identity as RHS gives all rows at once.
    Eigen::MatrixXd system = Eigen::MatrixXd::Identity(S, S);
    for (int s = 0; s < S; ++s)
      for (int s2 = 0; s2 < S; ++s2)
        system(s, s2) -= pk_gamma * kernel.at(g, s, s2);
    Eigen::MatrixXd inv =
        Eigen::PartialPivLU<Eigen::MatrixXd>(system).solve(Eigen::MatrixXd::Identity(S, S));
    for (int s0 = 0; s0 < S; ++s0)
      for (int s = 0; s < S; ++s)
        nu.at(g, s0, s) = (1.0 - pk_gamma) * inv(s0, s);
  }
  return nu;
}

// ---------------------------------------------------------------------------
// The exact HER sampling distribution mu_HER and its fixed point
// ---------------------------------------------------------------------------

/// HER resampling model: U ~ Bernoulli(alpha) selects the relabeled-goal
/// branch, K ~ geometric(pk_gamma) the update step, L ~ geometric(pl_gamma)
/// the future offset (L = 0 relabels to the goal achieved at the current
/// state). `truncation` caps the series for K and L.
struct HerConfig {
  double alpha = 0.8;
  double pk_gamma = 0.9;
  double pl_gamma = 0.9;
  int truncation = 300;
  TabularPolicy exploration;

  void validate() const {
    if (!(alpha >= 0.0 && alpha <= 1.0))
      throw std::invalid_argument("her: alpha in [0,1]");
    if (!(pk_gamma > 0.0 && pk_gamma < 1.0) || !(pl_gamma > 0.0 && pl_gamma < 1.0))
      throw std::invalid_argument("her: geometric parameters must lie in (0,1)");
    if (truncation < 1) throw std::invalid_argument("her: truncation >= 1");
  }
};

constexpr double kHerTailBound = 1e-10;

/// Truncation T guaranteeing the geometric tail beyond T stays below the
/// bound for both p_K and p_L (tail mass of the larger parameter is
/// worst^(T+1), so ceil keeps the bound strict even on integer edges).
inline int her_required_truncation(const HerConfig& cfg,
                                   double bound = kHerTailBound) {
  double worst = std::max(cfg.pk_gamma, cfg.pl_gamma);
  int t = static_cast<int>(std::ceil(std::log(bound) / std::log(worst)));
  return std::max(t, 1);
}

/// Exact sampling distribution of HER transitions, assembled from the
/// truncated, renormalized geometric series:
///   mu(s,a,s',g) = (1-alpha) rho_G(g) nu(s|g) pi(a|s,g) P(s'|s,a)
///     + alpha P(s'|s,a) sum_gt rho_G(gt) nu(s|gt) pi(a|s,gt)
///         [ p_L(0) 1{g = phi(s)} + sum_{l>=1} p_L(l) Pr(phi(s_{l-1}) = g | s') ].
/// In deterministic environments mu factorizes as mu_tilde(s,a,g) P(s'|s,a);
/// the factor is returned in `mu_tilde` in that case.
struct HerDistribution {
  Table4 mu;        // [s][a][s'][g]
  Table3 mu_tilde;  // [s][a][g], filled when the MDP is deterministic
  Table2 nu;        // [s][g]: visitation of states given the trajectory goal
  bool deterministic = false;
};

inline HerDistribution her_distribution(const FiniteMultiGoalMdp& mdp,
                                        const HerConfig& cfg) {
  cfg.validate();
  cfg.exploration.check_matches(mdp);
  int required = her_required_truncation(cfg);
  if (cfg.truncation < required)
    throw std::invalid_argument(
        "her_distribution: truncation " + std::to_string(cfg.truncation) +
        " leaves a geometric tail above " + std::to_string(kHerTailBound) +
        "; need at least " + std::to_string(required));

  int S = mdp.n_states, A = mdp.n_actions, G = mdp.n_goals;
  int T = cfg.truncation;
  Table3 kernel = policy_transition_kernel(mdp, cfg.exploration);

  // Renormalized truncated geometric weights.
  auto weights = [T](double gamma) {
    std::vector<double> w(T + 1);
    double norm = 1.0 - std::pow(gamma, T + 1);
    double cur = (1.0 - gamma) / norm;
    for (int k = 0; k <= T; ++k) {
      w[k] = cur;
      cur *= gamma;
    }
    return w;
  };
  std::vector<double> wk = weights(cfg.pk_gamma);
  std::vector<double> wl = weights(cfg.pl_gamma);

  // nu(s|g): distribution of the update state s for trajectory goal g.
  Table2 nu(S, G, 0.0);
  for (int g = 0; g < G; ++g) {
    std::vector<double> dist(mdp.init_dist.row(g), mdp.init_dist.row(g) + S);
    std::vector<double> next(S);
    for (int k = 0; k <= T; ++k) {
      for (int s = 0; s < S; ++s) nu.at(s, g) += wk[k] * dist[s];
      if (k == T) break;
      std::fill(next.begin(), next.end(), 0.0);
      for (int s = 0; s < S; ++s) {
        if (dist[s] == 0.0) continue;
        const double* krow = kernel.row(g, s);
        for (int s2 = 0; s2 < S; ++s2) next[s2] += dist[s] * krow[s2];
      }
      dist.swap(next);
    }
  }

  // fut[gt][s'][g] = sum_{l>=1} p_L(l) Pr(phi(s_{l-1}) = g), chains started
  // at s' under the exploration kernel for trajectory goal gt.
  Table3 fut(G, S, G, 0.0);
  {
    Eigen::MatrixXd P(S, S), power(S, S), acc(S, S);
    for (int gt = 0; gt < G; ++gt) {
      for (int s = 0; s < S; ++s)
        for (int s2 = 0; s2 < S; ++s2) P(s, s2) = kernel.at(gt, s, s2);
      power = Eigen::MatrixXd::Identity(S, S);
      acc.setZero();
      for (int l = 1; l <= T; ++l) {
        acc += wl[l] * power;
        if (l < T) power = power * P;
      }
      for (int s2 = 0; s2 < S; ++s2)
        for (int s3 = 0; s3 < S; ++s3)
          fut.at(gt, s2, mdp.goal_map[s3]) += acc(s2, s3);
    }
  }

  HerDistribution out;
  out.nu = nu;
  out.mu = Table4(S, A, S, G, 0.0);
  for (int s = 0; s < S; ++s)
    for (int a = 0; a < A; ++a) {
      // branch weights shared across s': w(s,a,gt) = rho_G nu pi
      std::vector<double> w(G);
      double wsum = 0.0;
      for (int gt = 0; gt < G; ++gt) {
        w[gt] = mdp.goal_dist[gt] * nu.at(s, gt) * cfg.exploration.probs.at(s, gt, a);
        wsum += w[gt];
      }
      const double* prow = mdp.transition.row(s, a);
      for (int s2 = 0; s2 < S; ++s2) {
        double p = prow[s2];
        if (p == 0.0) continue;
        for (int g = 0; g < G; ++g) {
          double original = w[g];  // U = 0 branch keeps the trajectory goal
          double relabeled = 0.0;  // U = 1 branch
          if (mdp.goal_map[s] == g) relabeled += wl[0] * wsum;
          for (int gt = 0; gt < G; ++gt) relabeled += w[gt] * fut.at(gt, s2, g);
          out.mu.at(s, a, s2, g) =
              p * ((1.0 - cfg.alpha) * original + cfg.alpha * relabeled);
        }
      }
    }

  out.deterministic = mdp.is_deterministic();
  if (out.deterministic) {
    out.mu_tilde = Table3(S, A, G, 0.0);
    for (int s = 0; s < S; ++s)
      for (int a = 0; a < A; ++a)
        for (int s2 = 0; s2 < S; ++s2)
          for (int g = 0; g < G; ++g)
            out.mu_tilde.at(s, a, g) += out.mu.at(s, a, s2, g);
  }
  return out;
}

/// Expected fixed point of tabular HER: iterates
///   Q(s,a,g) <- R(s,g) + gamma E_{s' ~ mu_HER(.|s,a,g)} max_a' Q(s',a',g).
/// Requires mu_HER(s,a,g) > 0 for every triple (full-support exploration).
/// Returns a plain Q table (reward scale 1, not a density). Halves the step
/// if the residual ever grows.
inline TabularQ her_fixed_point(const FiniteMultiGoalMdp& mdp,
                                const HerDistribution& dist, double tol = 1e-12,
                                int max_iter = 100000) {
  int S = mdp.n_states, A = mdp.n_actions, G = mdp.n_goals;
  Table4 cond(S, A, S, G, 0.0);  // mu(s'|s,a,g)
  for (int s = 0; s < S; ++s)
    for (int a = 0; a < A; ++a)
      for (int g = 0; g < G; ++g) {
        double marginal = 0.0;
        for (int s2 = 0; s2 < S; ++s2) marginal += dist.mu.at(s, a, s2, g);
        if (marginal <= 0.0)
          throw std::invalid_argument(
              "her_fixed_point: mu_HER(s,a,g) = 0 at (s=" + std::to_string(s) +
              ", a=" + std::to_string(a) + ", g=" + std::to_string(g) +
              "); exploration must have full support");
        for (int s2 = 0; s2 < S; ++s2)
          cond.at(s, a, s2, g) = dist.mu.at(s, a, s2, g) / marginal;
      }

  Table3 q(S, A, G, 0.0);
  double damping = 1.0;
  double prev_residual = std::numeric_limits<double>::infinity();
  for (int it = 0; it < max_iter; ++it) {
    Table2 vmax(S, G, 0.0);
    for (int s = 0; s < S; ++s)
      for (int g = 0; g < G; ++g) {
        double m = q.at(s, 0, g);
        for (int a = 1; a < A; ++a) m = std::max(m, q.at(s, a, g));
        vmax.at(s, g) = m;
      }
    double residual = 0.0;
    Table3 next(S, A, G, 0.0);
    for (int s = 0; s < S; ++s)
      for (int a = 0; a < A; ++a)
        for (int g = 0; g < G; ++g) {
          double acc = 0.0;
          for (int s2 = 0; s2 < S; ++s2)
            acc += cond.at(s, a, s2, g) * vmax.at(s2, g);
          double target = mdp.reward(s, g) + mdp.discount * acc;
          double value = q.at(s, a, g) + damping * (target - q.at(s, a, g));
          residual = std::max(residual, std::fabs(target - q.at(s, a, g)));
          next.at(s, a, g) = value;
        }
    q = std::move(next);
    if (residual < tol) return TabularQ{std::move(q)};
    if (residual > prev_residual && damping > 0.49) damping = 0.5;
    prev_residual = residual;
  }
  throw ConvergenceError("her_fixed_point: no convergence after " +
                             std::to_string(max_iter) + " sweeps, residual " +
                             std::to_string(prev_residual),
                         prev_residual);
}

// ---------------------------------------------------------------------------
// Exact expected updates (the unbiasedness assertions)
// ---------------------------------------------------------------------------

/// Exact expectation of the delta-DQN update (two-term Dirac form) over
/// (s,a) ~ rho_SA, s' ~ P, g ~ rho_G. Density-scale tables. At coordinate
/// (s,a,g): rho_SA(s,a) [ 1{g=phi(s)}
///                        + rho_G(g) (gamma sum_s' P max_a' q_tar - q_theta) ].
inline Table3 expected_update_delta_dqn(const FiniteMultiGoalMdp& mdp,
                                        const TabularQ& q_theta,
                                        const TabularQ& q_tar,
                                        const Table2& rho_sa) {
  int S = mdp.n_states, A = mdp.n_actions, G = mdp.n_goals;
  if (rho_sa.d0 != S || rho_sa.d1 != A)
    throw std::invalid_argument("expected_update_delta_dqn: rho_sa shape mismatch");
  Table2 vmax(S, G, 0.0);
  for (int s = 0; s < S; ++s)
    for (int g = 0; g < G; ++g) {
      double m = q_tar.q.at(s, 0, g);
      for (int a = 1; a < A; ++a) m = std::max(m, q_tar.q.at(s, a, g));
      vmax.at(s, g) = m;
    }
  Table3 upd(S, A, G, 0.0);
  for (int s = 0; s < S; ++s)
    for (int a = 0; a < A; ++a) {
      double w = rho_sa.at(s, a);
      const double* prow = mdp.transition.row(s, a);
      for (int g = 0; g < G; ++g) {
        double boot = 0.0;
        for (int s2 = 0; s2 < S; ++s2) boot += prow[s2] * vmax.at(s2, g);
        double dirac = (mdp.goal_map[s] == g) ? 1.0 : 0.0;
        upd.at(s, a, g) =
            w * (dirac + mdp.goal_dist[g] *
                             (mdp.discount * boot - q_theta.q.at(s, a, g)));
      }
    }
  return upd;
}

/// Exact expectation of the UVFA update over (s,a) ~ rho_SA, s' ~ P,
/// g ~ rho_G, with reward reward_scale * 1{phi(s)=g}. Plain Q tables.
/// With reward_scale = |G| and density tables this coincides with
/// expected_update_delta_dqn under uniform rho_G.
inline Table3 expected_update_uvfa(const FiniteMultiGoalMdp& mdp,
                                   const TabularQ& q_theta, const TabularQ& q_tar,
                                   const Table2& rho_sa,
                                   double reward_scale = 1.0) {
  int S = mdp.n_states, A = mdp.n_actions, G = mdp.n_goals;
  if (rho_sa.d0 != S || rho_sa.d1 != A)
    throw std::invalid_argument("expected_update_uvfa: rho_sa shape mismatch");
  Table2 vmax(S, G, 0.0);
  for (int s = 0; s < S; ++s)
    for (int g = 0; g < G; ++g) {
      double m = q_tar.q.at(s, 0, g);
      for (int a = 1; a < A; ++a) m = std::max(m, q_tar.q.at(s, a, g));
      vmax.at(s, g) = m;
    }
  Table3 upd(S, A, G, 0.0);
  for (int s = 0; s < S; ++s)
    for (int a = 0; a < A; ++a) {
      double w = rho_sa.at(s, a);
      const double* prow = mdp.transition.row(s, a);
      for (int g = 0; g < G; ++g) {
        double boot = 0.0;
        for (int s2 = 0; s2 < S; ++s2) boot += prow[s2] * vmax.at(s2, g);
        double r = reward_scale * mdp.reward(s, g);
        upd.at(s, a, g) = w * mdp.goal_dist[g] *
                          (r + mdp.discount * boot - q_theta.q.at(s, a, g));
      }
    }
  return upd;
}

/// Exact expectation of the HER tabular update under mu_HER. Plain Q tables.
inline Table3 expected_update_her(const FiniteMultiGoalMdp& mdp,
                                  const HerDistribution& dist,
                                  const TabularQ& q_theta, const TabularQ& q_tar) {
  int S = mdp.n_states, A = mdp.n_actions, G = mdp.n_goals;
  Table2 vmax(S, G, 0.0);
  for (int s = 0; s < S; ++s)
    for (int g = 0; g < G; ++g) {
      double m = q_tar.q.at(s, 0, g);
      for (int a = 1; a < A; ++a) m = std::max(m, q_tar.q.at(s, a, g));
      vmax.at(s, g) = m;
    }
  Table3 upd(S, A, G, 0.0);
  for (int s = 0; s < S; ++s)
    for (int a = 0; a < A; ++a)
      for (int g = 0; g < G; ++g) {
        double acc = 0.0;
        for (int s2 = 0; s2 < S; ++s2) {
          double w = dist.mu.at(s, a, s2, g);
          if (w == 0.0) continue;
          acc += w * (mdp.reward(s, g) + mdp.discount * vmax.at(s2, g) -
                      q_theta.q.at(s, a, g));
        }
        upd.at(s, a, g) = acc;
      }
  return upd;
}

/// Exact expectation of the horizon-n delta-TD update over (s0,g) ~ rho_SG,
/// n on-policy steps, and an independent g' ~ rho_G. Density-scale tables.
inline Table3 expected_update_delta_td(const FiniteMultiGoalMdp& mdp,
                                       const TabularPolicy& policy,
                                       const GoalDensityTable& m_theta,
                                       const GoalDensityTable& m_tar,
                                       const Table2& rho_sg, int n) {
  if (n < 1) throw std::invalid_argument("expected_update_delta_td: n >= 1");
  policy.check_matches(mdp);
  int S = mdp.n_states, G = mdp.n_goals;
  if (rho_sg.d0 != S || rho_sg.d1 != G)
    throw std::invalid_argument("expected_update_delta_td: rho_sg shape mismatch");
  Table3 kernel = policy_transition_kernel(mdp, policy);

  Table3 upd(S, G, G, 0.0);
  for (int g = 0; g < G; ++g) {
    // step distributions from every s0 simultaneously: rows of P^k
    Eigen::MatrixXd P(S, S);
    for (int s = 0; s < S; ++s)
      for (int s2 = 0; s2 < S; ++s2) P(s, s2) = kernel.at(g, s, s2);
    Eigen::MatrixXd power = Eigen::MatrixXd::Identity(S, S);
    double discount_l = 1.0;
    for (int l = 0; l < n; ++l) {
      for (int s0 = 0; s0 < S; ++s0) {
        double w = rho_sg.at(s0, g);
        if (w == 0.0) continue;
        for (int s = 0; s < S; ++s)
          upd.at(s0, g, mdp.goal_map[s]) += w * discount_l * power(s0, s);
      }
      power = power * P;
      discount_l *= mdp.discount;
    }
    // power now holds P^n; discount_l = gamma^n
    for (int s0 = 0; s0 < S; ++s0) {
      double w = rho_sg.at(s0, g);
      if (w == 0.0) continue;
      for (int h = 0; h < G; ++h) {
        double boot = 0.0;
        for (int sn = 0; sn < S; ++sn)
          boot += power(s0, sn) * m_tar.m.at(sn, g, h);
        upd.at(s0, g, h) += w * mdp.goal_dist[h] *
                            (discount_l * boot - m_theta.m.at(s0, g, h));
      }
    }
  }
  return upd;
}

/// Exact expected return with infinitely sparse rewards (density scale):
/// J = sum_g rho_G(g) sum_s0 rho_0(s0|g) m(s0, g, g).
inline double exact_expected_return(const FiniteMultiGoalMdp& mdp,
                                    const TabularPolicy& policy) {
  GoalDensityTable m = solve_m_pi(mdp, policy);
  double j = 0.0;
  for (int g = 0; g < mdp.n_goals; ++g)
    for (int s0 = 0; s0 < mdp.n_states; ++s0)
      j += mdp.goal_dist[g] * mdp.init_dist.at(g, s0) * m.m.at(s0, g, g);
  return j;
}

/// Exact expectation of the delta-Actor-Critic update on softmax logits,
/// evaluated with the true discounted visitation:
///   sum_g rho_G(g) sum_s0 rho_0(s0|g) sum_t gamma^t sum_{s,a}
///     Pr(s_t=s) pi(a|s,g) dlog pi(a|s,g) [ sum_s' P(s'|s,a)
///       (gamma m(s',g,g) - m(s,g,g)) - baseline(s,g) ].
/// With m = m^pi this equals the exact policy gradient of
/// exact_expected_return. `baseline` (optional, shape [s][g]) exercises the
/// score-function identity; it never changes the result.
inline Table3 expected_update_delta_ac(const FiniteMultiGoalMdp& mdp,
                                       const TabularPolicy& policy,
                                       const GoalDensityTable& m,
                                       const Table2* baseline = nullptr) {
  policy.check_matches(mdp);
  int S = mdp.n_states, A = mdp.n_actions, G = mdp.n_goals;
  // sum_t gamma^t Pr(s_t = s) = nu_gamma / (1 - gamma); gamma = 0 degenerates
  // to the initial distribution.
  Table2 weight(S, G, 0.0);  // [s][g]
  if (mdp.discount > 0.0) {
    Table3 nu = solve_nu_pi(mdp, policy, mdp.discount);
    for (int g = 0; g < G; ++g)
      for (int s0 = 0; s0 < S; ++s0) {
        double w0 = mdp.goal_dist[g] * mdp.init_dist.at(g, s0) / (1.0 - mdp.discount);
        if (w0 == 0.0) continue;
        for (int s = 0; s < S; ++s) weight.at(s, g) += w0 * nu.at(g, s0, s);
      }
  } else {
    for (int g = 0; g < G; ++g)
      for (int s = 0; s < S; ++s)
        weight.at(s, g) = mdp.goal_dist[g] * mdp.init_dist.at(g, s);
  }

  Table3 upd(S, G, A, 0.0);
  for (int s = 0; s < S; ++s)
    for (int g = 0; g < G; ++g) {
      double w = weight.at(s, g);
      if (w == 0.0) continue;
      double v_here = m.m.at(s, g, g);
      // expected score-weighted advantage per logit coordinate b:
      // sum_a pi(a) (1{b=a} - pi(b)) adv(a)
      std::vector<double> adv(A);
      double mean_adv = 0.0;
      for (int a = 0; a < A; ++a) {
        const double* prow = mdp.transition.row(s, a);
        double acc = 0.0;
        for (int s2 = 0; s2 < S; ++s2)
          acc += prow[s2] * (mdp.discount * m.m.at(s2, g, g) - v_here);
        if (baseline) acc -= baseline->at(s, g);
        adv[a] = acc;
        mean_adv += policy.probs.at(s, g, a) * acc;
      }
      for (int b = 0; b < A; ++b)
        upd.at(s, g, b) =
            w * policy.probs.at(s, g, b) * (adv[b] - mean_adv);
    }
  return upd;
}

/// Central finite differences of exact_expected_return over each softmax
/// logit coordinate. Independent oracle for the policy gradient direction.
inline Table3 finite_difference_grad_J(const FiniteMultiGoalMdp& mdp,
                                       const Table3& logits, double h = 1e-5) {
  if (h <= 0.0) throw std::invalid_argument("finite_difference_grad_J: h > 0");
  Table3 grad(logits.d0, logits.d1, logits.d2, 0.0);
  Table3 probe = logits;
  for (std::size_t i = 0; i < probe.v.size(); ++i) {
    double saved = probe.v[i];
    probe.v[i] = saved + h;
    double jp = exact_expected_return(mdp, softmax_policy(probe));
    probe.v[i] = saved - h;
    double jm = exact_expected_return(mdp, softmax_policy(probe));
    probe.v[i] = saved;
    grad.v[i] = (jp - jm) / (2.0 * h);
  }
  return grad;
}

// ---------------------------------------------------------------------------
// Finite-horizon mass of T^t 0 on tree-structured MDPs
// ---------------------------------------------------------------------------

struct FiniteHorizonMass {
  Table2 mass;    // [s][a]: total goal mass of (T^t 0)(s, a, .)
  bool diverges;  // gamma >= 1/2: the t -> infinity limit is infinite
};

/// Closed-form limit of the root mass on the dyadic tree, 1 + sum_k gamma^k
/// 2^(k-1); finite only for gamma < 1/2.
inline double dyadic_mass_limit(double gamma) {
  if (gamma >= 0.5) return std::numeric_limits<double>::infinity();
  return 1.0 + gamma / (1.0 - 2.0 * gamma);
}

/// Tail of the limit series beyond horizon t (exact for the infinite tree).
inline double dyadic_mass_tail(double gamma, int t) {
  if (gamma >= 0.5) return std::numeric_limits<double>::infinity();
  // sum_{k >= t} gamma^k 2^{k-1} = (2 gamma)^t / (2 (1 - 2 gamma))
  return std::pow(2.0 * gamma, t) / (2.0 * (1.0 - 2.0 * gamma));
}

/// Heap-ordered successor table of the depth-D dyadic tree (children of
/// node i are 2i+1 and 2i+2, depth-D nodes self-loop); row-major [s][a].
inline std::vector<int> dyadic_tree_successors(int depth) {
  if (depth < 1) throw std::invalid_argument("dyadic_tree_successors: depth >= 1");
  int S = (1 << (depth + 1)) - 1;
  int leaves_from = (1 << depth) - 1;
  std::vector<int> succ(static_cast<std::size_t>(S) * 2);
  for (int s = 0; s < S; ++s) {
    succ[2 * s] = s < leaves_from ? 2 * s + 1 : s;
    succ[2 * s + 1] = s < leaves_from ? 2 * s + 2 : s;
  }
  return succ;
}

/// Total goal mass of Q_t = T^t 0 for every (s, a) of a deterministic
/// tree-structured MDP given by its successor table (children of distinct
/// actions lead to disjoint subtrees; terminal states self-loop).
/// Propagates the per-state mass of sup_a Q_t(s, a, .): the Dirac at phi(s)
/// is shared across actions while subtree atoms are disjoint, so the sup
/// adds child masses.
inline FiniteHorizonMass finite_horizon_mass(const std::vector<int>& succ,
                                             int n_actions, int t,
                                             double gamma) {
  if (t < 1) throw std::invalid_argument("finite_horizon_mass: t >= 1");
  if (!(gamma >= 0.0 && gamma < 1.0))
    throw std::invalid_argument("finite_horizon_mass: gamma in [0,1)");
  int A = n_actions;
  if (A < 1 || succ.size() % A != 0)
    throw std::invalid_argument("finite_horizon_mass: bad successor table");
  int S = static_cast<int>(succ.size()) / A;

  std::vector<double> sup_mass(S, 0.0);       // mass of sup_a Q_j(s, a, .)
  std::vector<double> next_sup(S, 0.0);
  FiniteHorizonMass out;
  out.diverges = gamma >= 0.5;
  out.mass = Table2(S, A, 0.0);
  for (int j = 1; j <= t; ++j) {
    for (int s = 0; s < S; ++s)
      for (int a = 0; a < A; ++a)
        out.mass.at(s, a) =
            1.0 + gamma * sup_mass[succ[static_cast<std::size_t>(s) * A + a]];
    for (int s = 0; s < S; ++s) {
      bool self_loop_all = true;
      bool children_distinct = true;
      double sum = 0.0;
      for (int a = 0; a < A; ++a) {
        int s2 = succ[static_cast<std::size_t>(s) * A + a];
        if (s2 != s) self_loop_all = false;
        if (s2 == s) children_distinct = false;
        for (int a2 = 0; a2 < a; ++a2)
          if (succ[static_cast<std::size_t>(s) * A + a2] == s2)
            children_distinct = false;
        sum += sup_mass[s2];
      }
      if (!self_loop_all && !children_distinct)
        throw std::invalid_argument(
            "finite_horizon_mass: state " + std::to_string(s) +
            " is neither terminal nor tree-branching; supports would overlap");
      // terminal states: every action's measure is the same Dirac pile, so
      // the sup does not add; branching states have disjoint child supports.
      next_sup[s] = self_loop_all ? 1.0 + gamma * sup_mass[s] : 1.0 + gamma * sum;
    }
    sup_mass.swap(next_sup);
  }
  return out;
}

/// Same computation from a dense deterministic MDP (rows must be point
/// masses); extracts the successor table and delegates.
inline FiniteHorizonMass finite_horizon_mass(const FiniteMultiGoalMdp& tree,
                                             int t, double gamma) {
  int S = tree.n_states, A = tree.n_actions;
  std::vector<int> succ(static_cast<std::size_t>(S) * A);
  for (int s = 0; s < S; ++s)
    for (int a = 0; a < A; ++a) {
      int hit = -1;
      for (int s2 = 0; s2 < S; ++s2)
        if (tree.transition.at(s, a, s2) == 1.0) hit = s2;
      if (hit < 0)
        throw std::invalid_argument("finite_horizon_mass: MDP must be deterministic");
      succ[static_cast<std::size_t>(s) * A + a] = hit;
    }
  return finite_horizon_mass(succ, A, t, gamma);
}

}  // namespace mgrl
