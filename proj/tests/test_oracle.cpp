#include <catch_amalgamated.hpp>

#include <cmath>
#include <functional>
#include <map>
#include <sstream>

#include "mgrl/envs.hpp"
#include "mgrl/mdp_io.hpp"
#include "mgrl/oracle.hpp"

using namespace mgrl;

// ---------------------------------------------------------------------------
// Independent oracles (test-side implementations, kept away from oracle.hpp)
// ---------------------------------------------------------------------------

namespace {

// Per-goal scalar value iteration with reward r_g(s) = dirac_density(s, g);
// a second route to the q* density that never touches bellman_backup_density.
Table3 brute_force_q_star(const FiniteMultiGoalMdp& mdp, int sweeps = 4000) {
  int S = mdp.n_states, A = mdp.n_actions, G = mdp.n_goals;
  Table3 q(S, A, G, 0.0);
  for (int g = 0; g < G; ++g) {
    std::vector<std::vector<double>> cur(S, std::vector<double>(A, 0.0));
    for (int it = 0; it < sweeps; ++it) {
      std::vector<std::vector<double>> next(S, std::vector<double>(A, 0.0));
      for (int s = 0; s < S; ++s)
        for (int a = 0; a < A; ++a) {
          double acc = 0.0;
          for (int s2 = 0; s2 < S; ++s2) {
            double best = cur[s2][0];
            for (int a2 = 1; a2 < A; ++a2) best = std::max(best, cur[s2][a2]);
            acc += mdp.transition.at(s, a, s2) * best;
          }
          next[s][a] =
              (mdp.goal_map[s] == g ? 1.0 / mdp.goal_dist[g] : 0.0) +
              mdp.discount * acc;
        }
      cur = next;
    }
    for (int s = 0; s < S; ++s)
      for (int a = 0; a < A; ++a) q.at(s, a, g) = cur[s][a];
  }
  return q;
}

// Truncated-series route to the successor goal density.
Table3 brute_force_m_pi(const FiniteMultiGoalMdp& mdp,
                        const TabularPolicy& policy, int terms) {
  int S = mdp.n_states, G = mdp.n_goals;
  Table3 kernel = policy_transition_kernel(mdp, policy);
  Table3 m(S, G, G, 0.0);
  for (int g = 0; g < G; ++g) {
    // dist[s0][s] = (P^pi_g)^k row
    std::vector<std::vector<double>> dist(S, std::vector<double>(S, 0.0));
    for (int s = 0; s < S; ++s) dist[s][s] = 1.0;
    double disc = 1.0;
    for (int k = 0; k < terms; ++k) {
      for (int s0 = 0; s0 < S; ++s0)
        for (int s = 0; s < S; ++s)
          m.at(s0, g, mdp.goal_map[s]) +=
              disc * dist[s0][s] / mdp.goal_dist[mdp.goal_map[s]];
      std::vector<std::vector<double>> next(S, std::vector<double>(S, 0.0));
      for (int s0 = 0; s0 < S; ++s0)
        for (int s = 0; s < S; ++s) {
          if (dist[s0][s] == 0.0) continue;
          for (int s2 = 0; s2 < S; ++s2)
            next[s0][s2] += dist[s0][s] * kernel.at(g, s, s2);
        }
      dist = next;
      disc *= mdp.discount;
    }
  }
  return m;
}

// One application of T^pi in density form (test-side copy for composition
// checks): (T m)(s, g, h) = dirac + gamma sum_s' P^pi(s'|s,g) m(s', g, h).
Table3 apply_t_pi(const FiniteMultiGoalMdp& mdp, const Table3& kernel,
                  const Table3& m) {
  int S = mdp.n_states, G = mdp.n_goals;
  Table3 out(S, G, G, 0.0);
  for (int g = 0; g < G; ++g)
    for (int s = 0; s < S; ++s)
      for (int h = 0; h < G; ++h) {
        double acc = 0.0;
        for (int s2 = 0; s2 < S; ++s2)
          acc += kernel.at(g, s, s2) * m.at(s2, g, h);
        out.at(s, g, h) =
            (mdp.goal_map[s] == h ? 1.0 / mdp.goal_dist[h] : 0.0) +
            mdp.discount * acc;
      }
  return out;
}

// Scalar Bellman-residual loss whose negative gradient the delta-DQN update
// must equal: 1/2 sum rho_SA rho_G (q_theta - (T q_tar))^2.
double dqn_loss(const FiniteMultiGoalMdp& mdp, const Table3& q_theta,
                const Table3& q_tar, const Table2& rho_sa) {
  int S = mdp.n_states, A = mdp.n_actions, G = mdp.n_goals;
  double loss = 0.0;
  for (int s = 0; s < S; ++s)
    for (int a = 0; a < A; ++a)
      for (int g = 0; g < G; ++g) {
        double boot = 0.0;
        for (int s2 = 0; s2 < S; ++s2) {
          double best = q_tar.at(s2, 0, g);
          for (int a2 = 1; a2 < A; ++a2) best = std::max(best, q_tar.at(s2, a2, g));
          boot += mdp.transition.at(s, a, s2) * best;
        }
        double target = (mdp.goal_map[s] == g ? 1.0 / mdp.goal_dist[g] : 0.0) +
                        mdp.discount * boot;
        double r = q_theta.at(s, a, g) - target;
        loss += 0.5 * rho_sa.at(s, a) * mdp.goal_dist[g] * r * r;
      }
  return loss;
}

// Same idea for HER in the deterministic case, weighted by mu_tilde.
double her_loss(const FiniteMultiGoalMdp& mdp, const Table3& mu_tilde,
                const Table3& q_theta, const Table3& q_tar) {
  int S = mdp.n_states, A = mdp.n_actions, G = mdp.n_goals;
  double loss = 0.0;
  for (int s = 0; s < S; ++s)
    for (int a = 0; a < A; ++a)
      for (int g = 0; g < G; ++g) {
        double boot = 0.0;
        for (int s2 = 0; s2 < S; ++s2) {
          double best = q_tar.at(s2, 0, g);
          for (int a2 = 1; a2 < A; ++a2) best = std::max(best, q_tar.at(s2, a2, g));
          boot += mdp.transition.at(s, a, s2) * best;
        }
        double r = q_theta.at(s, a, g) - mdp.reward(s, g) - mdp.discount * boot;
        loss += 0.5 * mu_tilde.at(s, a, g) * r * r;
      }
  return loss;
}

Table3 numeric_gradient(const std::function<double(const Table3&)>& f,
                        Table3 point, double h = 1e-6) {
  Table3 grad(point.d0, point.d1, point.d2, 0.0);
  for (std::size_t i = 0; i < point.v.size(); ++i) {
    double saved = point.v[i];
    point.v[i] = saved + h;
    double up = f(point);
    point.v[i] = saved - h;
    double down = f(point);
    point.v[i] = saved;
    grad.v[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

Table3 random_table(int a, int b, int c, Pcg32& rng, double scale = 1.0) {
  Table3 t(a, b, c, 0.0);
  for (double& x : t.v) x = scale * rng.normal();
  return t;
}

HerConfig her_cfg_for(const FiniteMultiGoalMdp& mdp, const TabularPolicy& expl,
                      double alpha = 0.8) {
  HerConfig cfg;
  cfg.alpha = alpha;
  cfg.pk_gamma = mdp.discount;
  cfg.pl_gamma = mdp.discount;
  cfg.exploration = expl;
  cfg.truncation = 1;
  cfg.truncation = her_required_truncation(cfg) + 5;
  return cfg;
}

}  // namespace

// ---------------------------------------------------------------------------
// solve_q_star
// ---------------------------------------------------------------------------

TEST_CASE("solve_q_star with gamma 0 is the Dirac density") {
  Pcg32 rng(1, 1);
  FiniteMultiGoalMdp mdp = make_random_mdp(4, 2, 2, 0.0, rng);
  TabularQ q = solve_q_star(mdp);
  for (int s = 0; s < 4; ++s)
    for (int a = 0; a < 2; ++a)
      for (int g = 0; g < 4; ++g)
        CHECK(q.q.at(s, a, g) ==
              Catch::Approx(mdp.goal_map[s] == g ? 4.0 : 0.0).margin(1e-12));
}

TEST_CASE("solve_q_star matches an independent per-goal value iteration") {
  Pcg32 rng(17, 1);
  FiniteMultiGoalMdp mdp = make_random_mdp(5, 3, 2, 0.9, rng);
  TabularQ fast = solve_q_star(mdp, 1e-13);
  Table3 slow = brute_force_q_star(mdp);
  CHECK(sup_diff(fast.q.v, slow.v) < 1e-9);
}

TEST_CASE("solve_q_star freeze-environment closed forms") {
  Pcg32 rng(2, 1);
  FiniteMultiGoalMdp base = make_random_mdp(5, 2, 2, 0.9, rng);
  FiniteMultiGoalMdp aug = augment_with_freeze(base);
  FreezeSpec ix(base);
  TabularQ q = solve_q_star(aug, 1e-13);
  int G = aug.n_goals;

  // frozen state achieving the goal: q = G / (1 - gamma)
  for (int s = 0; s < 5; ++s)
    for (int a = 0; a < 3; ++a) {
      CHECK(q.q.at(ix.frozen(s), a, base.goal_map[s]) ==
            Catch::Approx(G / (1.0 - 0.9)).epsilon(1e-9));
      // frozen state missing the goal: 0
      int other = (base.goal_map[s] + 1) % G;
      CHECK(q.q.at(ix.frozen(s), a, other) == Catch::Approx(0.0).margin(1e-9));
    }
  // unfrozen freeze action, goal not achieved here: Q = gamma/(S(1-gamma)) = 1.8
  for (int s = 0; s < 5; ++s)
    for (int g = 0; g < G; ++g) {
      if (base.goal_map[s] == g) continue;
      CHECK(q.q.at(ix.unfrozen(s), ix.freeze_action(), g) ==
            Catch::Approx(G * 1.8).epsilon(1e-9));
    }
}

TEST_CASE("solve_q_star fixed point residual is small") {
  Pcg32 rng(3, 1);
  FiniteMultiGoalMdp mdp = make_random_mdp(6, 2, 3, 0.95, rng);
  double tol = 1e-11;
  TabularQ q = solve_q_star(mdp, tol);
  Table3 backed = bellman_backup_density(mdp, q.q);
  CHECK(sup_diff(backed.v, q.q.v) < 10 * tol);
}

TEST_CASE("solve_q_star reports non-convergence with the residual") {
  Pcg32 rng(4, 1);
  FiniteMultiGoalMdp mdp = make_random_mdp(4, 2, 2, 0.99, rng);
  try {
    solve_q_star(mdp, 1e-12, 3);
    FAIL("expected ConvergenceError");
  } catch (const ConvergenceError& e) {
    CHECK(e.residual > 0.0);
  }
}

// ---------------------------------------------------------------------------
// solve_m_pi / solve_nu_pi
// ---------------------------------------------------------------------------

TEST_CASE("solve_m_pi gamma 0 and single-state closed forms") {
  Pcg32 rng(5, 1);
  FiniteMultiGoalMdp mdp = make_random_mdp(4, 2, 2, 0.0, rng);
  TabularPolicy uni = uniform_policy(4, 4, 2);
  GoalDensityTable m = solve_m_pi(mdp, uni);
  for (int s = 0; s < 4; ++s)
    for (int g = 0; g < 4; ++g)
      for (int h = 0; h < 4; ++h)
        CHECK(m.m.at(s, g, h) ==
              Catch::Approx(mdp.goal_map[s] == h ? 4.0 : 0.0).margin(1e-12));

  FiniteMultiGoalMdp one;
  one.n_states = one.n_actions = one.n_goals = 1;
  one.discount = 0.5;
  one.transition = Table3(1, 1, 1, 1.0);
  one.goal_map = {0};
  one.goal_dist = {1.0};
  one.init_dist = Table2(1, 1, 1.0);
  one.validate();
  GoalDensityTable m1 = solve_m_pi(one, uniform_policy(1, 1, 1));
  CHECK(m1.m.at(0, 0, 0) == Catch::Approx(2.0));  // geometric series at 0.5
}

TEST_CASE("solve_m_pi mass identity and series oracle") {
  Pcg32 rng(6, 1);
  FiniteMultiGoalMdp mdp = make_random_mdp(5, 2, 3, 0.9, rng);
  Table3 logits = random_table(5, 5, 2, rng);
  TabularPolicy policy = softmax_policy(logits);
  GoalDensityTable m = solve_m_pi(mdp, policy);

  for (int s = 0; s < 5; ++s)
    for (int g = 0; g < 5; ++g) {
      double mass = 0.0;
      for (int h = 0; h < 5; ++h) mass += mdp.goal_dist[h] * m.m.at(s, g, h);
      CHECK(mass == Catch::Approx(1.0 / (1.0 - 0.9)).epsilon(1e-9));
    }

  Table3 series = brute_force_m_pi(mdp, policy, 400);  // tail ~ 0.9^400
  CHECK(sup_diff(m.m.v, series.v) < 1e-9);
}

TEST_CASE("solve_nu_pi closed forms") {
  // 2-state deterministic swap chain
  FiniteMultiGoalMdp swap;
  swap.n_states = 2;
  swap.n_actions = 1;
  swap.n_goals = 2;
  swap.discount = 0.9;
  swap.transition = Table3(2, 1, 2, 0.0);
  swap.transition.at(0, 0, 1) = 1.0;
  swap.transition.at(1, 0, 0) = 1.0;
  swap.goal_map = {0, 1};
  swap.goal_dist = {0.5, 0.5};
  swap.init_dist = Table2(2, 2, 0.5);
  swap.validate();
  TabularPolicy uni = uniform_policy(2, 2, 1);
  Table3 nu = solve_nu_pi(swap, uni, 0.5);
  CHECK(nu.at(0, 0, 0) == Catch::Approx(2.0 / 3));
  CHECK(nu.at(0, 0, 1) == Catch::Approx(1.0 / 3));

  // pk -> 0: point mass at s0
  Table3 nu0 = solve_nu_pi(swap, uni, 1e-12);
  CHECK(nu0.at(0, 0, 0) == Catch::Approx(1.0).margin(1e-10));
  CHECK(nu0.at(1, 1, 1) == Catch::Approx(1.0).margin(1e-10));

  // self-loop state keeps all its mass
  FiniteMultiGoalMdp loop;
  loop.n_states = 1;
  loop.n_actions = 1;
  loop.n_goals = 1;
  loop.discount = 0.9;
  loop.transition = Table3(1, 1, 1, 1.0);
  loop.goal_map = {0};
  loop.goal_dist = {1.0};
  loop.init_dist = Table2(1, 1, 1.0);
  loop.validate();
  Table3 nul = solve_nu_pi(loop, uniform_policy(1, 1, 1), 0.7);
  CHECK(nul.at(0, 0, 0) == Catch::Approx(1.0));
}

TEST_CASE("solve_nu_pi rows are probability vectors") {
  Pcg32 rng(7, 1);
  FiniteMultiGoalMdp mdp = make_random_mdp(6, 2, 3, 0.9, rng);
  TabularPolicy policy = softmax_policy(random_table(6, 6, 2, rng));
  Table3 nu = solve_nu_pi(mdp, policy, 0.9);
  for (int g = 0; g < 6; ++g)
    for (int s0 = 0; s0 < 6; ++s0) {
      double sum = 0.0;
      for (int s = 0; s < 6; ++s) {
        CHECK(nu.at(g, s0, s) >= -1e-14);
        sum += nu.at(g, s0, s);
      }
      CHECK(std::fabs(sum - 1.0) < 1e-10);
    }
}

// ---------------------------------------------------------------------------
// her_distribution
// ---------------------------------------------------------------------------

TEST_CASE("her_distribution alpha 0 is the pure UVFA sampling distribution") {
  Pcg32 rng(8, 1);
  FiniteMultiGoalMdp mdp = make_random_mdp(4, 2, 2, 0.9, rng);
  TabularPolicy expl = uniform_policy(4, 4, 2);
  HerConfig cfg = her_cfg_for(mdp, expl, 0.0);
  HerDistribution dist = her_distribution(mdp, cfg);

  for (int s = 0; s < 4; ++s)
    for (int a = 0; a < 2; ++a)
      for (int s2 = 0; s2 < 4; ++s2)
        for (int g = 0; g < 4; ++g) {
          double expected = mdp.goal_dist[g] * dist.nu.at(s, g) *
                            expl.probs.at(s, g, a) * mdp.transition.at(s, a, s2);
          CHECK(dist.mu.at(s, a, s2, g) == Catch::Approx(expected).margin(1e-14));
        }
}

TEST_CASE("her_distribution sums to one and is nonnegative") {
  Pcg32 rng(9, 1);
  FiniteMultiGoalMdp mdp = make_random_mdp(5, 2, 3, 0.9, rng);
  TabularQ qs = solve_q_star(mdp);
  HerConfig cfg = her_cfg_for(mdp, epsilon_greedy(qs.q, 0.2));
  HerDistribution dist = her_distribution(mdp, cfg);
  double total = 0.0;
  for (double x : dist.mu.v) {
    CHECK(x >= 0.0);
    total += x;
  }
  CHECK(std::fabs(total - 1.0) < 1e-8);
}

TEST_CASE("her_distribution factorizes in deterministic environments") {
  Pcg32 rng(10, 1);
  FiniteMultiGoalMdp mdp = make_deterministic_reachable_mdp(5, 2, 0.9, rng);
  TabularQ qs = solve_q_star(mdp);
  HerConfig cfg = her_cfg_for(mdp, epsilon_greedy(qs.q, 0.2));
  HerDistribution dist = her_distribution(mdp, cfg);
  REQUIRE(dist.deterministic);
  for (int s = 0; s < 5; ++s)
    for (int a = 0; a < 2; ++a)
      for (int s2 = 0; s2 < 5; ++s2)
        for (int g = 0; g < 5; ++g)
          CHECK(dist.mu.at(s, a, s2, g) ==
                Catch::Approx(dist.mu_tilde.at(s, a, g) *
                              mdp.transition.at(s, a, s2))
                    .margin(1e-10));
}

TEST_CASE("her_distribution alpha branches are marginally consistent") {
  Pcg32 rng(11, 1);
  FiniteMultiGoalMdp mdp = make_random_mdp(4, 2, 2, 0.9, rng);
  TabularPolicy expl = uniform_policy(4, 4, 2);
  HerDistribution d0 = her_distribution(mdp, her_cfg_for(mdp, expl, 0.0));
  HerDistribution d1 = her_distribution(mdp, her_cfg_for(mdp, expl, 1.0));
  HerDistribution dm = her_distribution(mdp, her_cfg_for(mdp, expl, 0.8));

  // relabeling only reshuffles the goal coordinate
  for (int s = 0; s < 4; ++s)
    for (int a = 0; a < 2; ++a)
      for (int s2 = 0; s2 < 4; ++s2) {
        double m0 = 0.0, m1 = 0.0;
        for (int g = 0; g < 4; ++g) {
          m0 += d0.mu.at(s, a, s2, g);
          m1 += d1.mu.at(s, a, s2, g);
        }
        CHECK(m0 == Catch::Approx(m1).margin(1e-8));
      }
  // and the mixture is linear in alpha
  for (std::size_t i = 0; i < dm.mu.v.size(); ++i)
    CHECK(dm.mu.v[i] ==
          Catch::Approx(0.2 * d0.mu.v[i] + 0.8 * d1.mu.v[i]).margin(1e-12));
}

TEST_CASE("her_distribution favors the relabeled frozen state") {
  Pcg32 rng(12, 1);
  FiniteMultiGoalMdp base = make_random_mdp(5, 2, 2, 0.9, rng);
  FiniteMultiGoalMdp aug = augment_with_freeze(base);
  FreezeSpec ix(base);
  TabularQ qs = solve_q_star(aug);
  HerConfig cfg = her_cfg_for(aug, epsilon_greedy(qs.q, 0.2));
  HerDistribution dist = her_distribution(aug, cfg);

  int astar = ix.freeze_action();
  for (int s = 0; s < 5; ++s)
    for (int g = 0; g < 5; ++g) {
      double at_goal = dist.mu.at(ix.unfrozen(s), astar, ix.frozen(g), g);
      double total = 0.0;
      for (int s2 = 0; s2 < 5; ++s2)
        total += dist.mu.at(ix.unfrozen(s), astar, ix.frozen(s2), g);
      CHECK(at_goal > total / 5.0);
    }
}

TEST_CASE("her_distribution rejects an insufficient truncation") {
  Pcg32 rng(13, 1);
  FiniteMultiGoalMdp mdp = make_random_mdp(3, 2, 2, 0.9, rng);
  HerConfig cfg;
  cfg.alpha = 0.8;
  cfg.pk_gamma = 0.9;
  cfg.pl_gamma = 0.9;
  cfg.exploration = uniform_policy(3, 3, 2);
  cfg.truncation = 50;  // tail 0.9^51 ~ 4.6e-3, far above the bound
  try {
    her_distribution(mdp, cfg);
    FAIL("expected truncation rejection");
  } catch (const std::invalid_argument& e) {
    std::string what = e.what();
    CHECK(what.find("truncation") != std::string::npos);
    CHECK(what.find(std::to_string(her_required_truncation(cfg))) !=
          std::string::npos);
  }
}

TEST_CASE("density conversions invert each other") {
  Pcg32 rng(31, 1);
  FiniteMultiGoalMdp mdp = make_random_mdp(4, 2, 2, 0.9, rng);
  Table3 q = random_table(4, 2, 4, rng, 3.0);
  Table3 back = q_from_density(mdp, q_density_from_q(mdp, q));
  CHECK(sup_diff(q.v, back.v) < 1e-14);
  // uniform rho_G: density is G times the plain table
  Table3 dens = q_density_from_q(mdp, q);
  for (std::size_t i = 0; i < q.v.size(); ++i)
    CHECK(dens.v[i] == Catch::Approx(4.0 * q.v[i]));
}

TEST_CASE("a file-loaded counterexample drives the oracle pipeline") {
  // the user-supplied-MDP workflow: save a freeze environment, load it back,
  // and check the overestimation margin on the loaded instance
  Pcg32 rng(32, 1);
  FiniteMultiGoalMdp base = make_random_mdp(4, 2, 2, 0.9, rng);
  FiniteMultiGoalMdp aug = augment_with_freeze(base);
  std::stringstream buf;
  save_mdp(aug, buf);
  FiniteMultiGoalMdp loaded = load_mdp(buf);
  FreezeSpec ix(base);

  TabularQ qs = solve_q_star(loaded, 1e-13);
  HerConfig cfg = her_cfg_for(loaded, epsilon_greedy(qs.q, 0.2));
  HerDistribution dist = her_distribution(loaded, cfg);
  TabularQ qinf = her_fixed_point(loaded, dist, 1e-13);
  Table3 plain = q_from_density(loaded, qs.q);
  int astar = base.n_actions;  // freeze action index survives the round trip
  for (int s = 0; s < base.n_states; ++s)
    for (int g = 0; g < loaded.n_goals; ++g)
      CHECK(qinf.q.at(ix.unfrozen(s), astar, g) >
            plain.at(ix.unfrozen(s), astar, g));
}

// ---------------------------------------------------------------------------
// her_fixed_point
// ---------------------------------------------------------------------------

TEST_CASE("her_fixed_point equals q_star on deterministic environments") {
  Pcg32 rng(14, 1);
  FiniteMultiGoalMdp mdp = make_deterministic_reachable_mdp(5, 3, 0.9, rng);
  TabularQ q_star = solve_q_star(mdp, 1e-13);
  HerConfig cfg = her_cfg_for(mdp, epsilon_greedy(q_star.q, 0.2));
  HerDistribution dist = her_distribution(mdp, cfg);
  TabularQ q_inf = her_fixed_point(mdp, dist, 1e-13);
  Table3 q_plain = q_from_density(mdp, q_star.q);
  CHECK(sup_diff(q_inf.q.v, q_plain.v) < 1e-9);
}

TEST_CASE("her_fixed_point freeze values") {
  Pcg32 rng(15, 1);
  FiniteMultiGoalMdp base = make_random_mdp(5, 2, 2, 0.9, rng);
  FiniteMultiGoalMdp aug = augment_with_freeze(base);
  FreezeSpec ix(base);
  TabularQ q_star = solve_q_star(aug, 1e-13);
  HerConfig cfg = her_cfg_for(aug, epsilon_greedy(q_star.q, 0.2));
  HerDistribution dist = her_distribution(aug, cfg);
  TabularQ q_inf = her_fixed_point(aug, dist, 1e-13);

  for (int s = 0; s < 5; ++s)
    for (int a = 0; a < 3; ++a)
      for (int g = 0; g < 5; ++g) {
        double want = aug.reward(ix.frozen(s), g) / (1.0 - 0.9);
        CHECK(q_inf.q.at(ix.frozen(s), a, g) ==
              Catch::Approx(want).margin(1e-9));
      }
  for (int s = 0; s < 5; ++s)
    for (int g = 0; g < 5; ++g) {
      double lower = aug.reward(ix.unfrozen(s), g) + 0.9 / (5 * 0.1);
      CHECK(q_inf.q.at(ix.unfrozen(s), ix.freeze_action(), g) > lower);
    }
}

// ---------------------------------------------------------------------------
// expected updates
// ---------------------------------------------------------------------------

TEST_CASE("expected delta-DQN update vanishes exactly at q_star") {
  Pcg32 rng(16, 1);
  FiniteMultiGoalMdp mdp = make_random_mdp(5, 2, 3, 0.9, rng);
  TabularQ q_star = solve_q_star(mdp, 1e-13);
  Table2 rho_sa(5, 2, 1.0 / 10);
  Table3 upd = expected_update_delta_dqn(mdp, q_star, q_star, rho_sa);
  CHECK(sup_norm(upd.v) < 1e-10);
}

TEST_CASE("expected delta-DQN update at zero tables is the Dirac row") {
  Pcg32 rng(17, 1);
  FiniteMultiGoalMdp mdp = make_random_mdp(4, 2, 2, 0.7, rng);
  TabularQ zero{Table3(4, 2, 4, 0.0)};
  Table2 rho_sa(4, 2, 0.0);
  for (int s = 0; s < 4; ++s)
    for (int a = 0; a < 2; ++a) rho_sa.at(s, a) = (s + 1) / 20.0;  // nonuniform
  Table3 upd = expected_update_delta_dqn(mdp, zero, zero, rho_sa);
  for (int s = 0; s < 4; ++s)
    for (int a = 0; a < 2; ++a)
      for (int g = 0; g < 4; ++g)
        CHECK(upd.at(s, a, g) ==
              Catch::Approx(mdp.goal_map[s] == g ? rho_sa.at(s, a) : 0.0)
                  .margin(1e-15));
}

TEST_CASE("expected delta-DQN update is the gradient of the Bellman loss") {
  Pcg32 rng(18, 1);
  FiniteMultiGoalMdp mdp = make_random_mdp(4, 2, 2, 0.9, rng);
  Table3 q_theta = random_table(4, 2, 4, rng, 2.0);
  Table3 q_tar = random_table(4, 2, 4, rng, 2.0);
  Table2 rho_sa(4, 2, 1.0 / 8);

  Table3 upd = expected_update_delta_dqn(mdp, TabularQ{q_theta},
                                         TabularQ{q_tar}, rho_sa);
  Table3 fd = numeric_gradient(
      [&](const Table3& q) { return dqn_loss(mdp, q, q_tar, rho_sa); },
      q_theta);
  // ascent direction = minus the loss gradient
  for (std::size_t i = 0; i < upd.v.size(); ++i)
    CHECK(upd.v[i] == Catch::Approx(-fd.v[i]).margin(1e-6));
}

TEST_CASE("expected UVFA update matches delta-DQN after the density scaling") {
  Pcg32 rng(19, 1);
  FiniteMultiGoalMdp mdp = make_random_mdp(4, 3, 2, 0.85, rng);
  Table3 q_theta = random_table(4, 3, 4, rng);
  Table3 q_tar = random_table(4, 3, 4, rng);
  Table2 rho_sa(4, 3, 1.0 / 12);
  Table3 dqn = expected_update_delta_dqn(mdp, TabularQ{q_theta},
                                         TabularQ{q_tar}, rho_sa);
  Table3 uvfa = expected_update_uvfa(mdp, TabularQ{q_theta}, TabularQ{q_tar},
                                     rho_sa, /*reward_scale=*/4.0);
  CHECK(sup_diff(dqn.v, uvfa.v) < 1e-13);
}

TEST_CASE("expected UVFA update vanishes at the plain Q fixed point") {
  Pcg32 rng(20, 1);
  FiniteMultiGoalMdp mdp = make_random_mdp(5, 2, 2, 0.9, rng);
  TabularQ q_star = solve_q_star(mdp, 1e-13);
  TabularQ plain{q_from_density(mdp, q_star.q)};
  Table2 rho_sa(5, 2, 0.1);
  Table3 upd = expected_update_uvfa(mdp, plain, plain, rho_sa, 1.0);
  CHECK(sup_norm(upd.v) < 1e-10);
}

TEST_CASE("expected HER update vanishes at Q_star only when deterministic") {
  Pcg32 rng(21, 1);
  FiniteMultiGoalMdp det = make_deterministic_reachable_mdp(5, 2, 0.9, rng);
  TabularQ qs = solve_q_star(det, 1e-13);
  TabularQ plain{q_from_density(det, qs.q)};
  HerDistribution dist = her_distribution(det, her_cfg_for(det, epsilon_greedy(qs.q, 0.2)));
  Table3 upd = expected_update_her(det, dist, plain, plain);
  CHECK(sup_norm(upd.v) < 1e-10);

  FiniteMultiGoalMdp base = make_random_mdp(5, 2, 2, 0.9, rng);
  FiniteMultiGoalMdp aug = augment_with_freeze(base);
  FreezeSpec ix(base);
  TabularQ qs2 = solve_q_star(aug, 1e-13);
  TabularQ plain2{q_from_density(aug, qs2.q)};
  HerDistribution dist2 =
      her_distribution(aug, her_cfg_for(aug, epsilon_greedy(qs2.q, 0.2)));
  Table3 upd2 = expected_update_her(aug, dist2, plain2, plain2);
  for (int s = 0; s < 5; ++s)
    for (int g = 0; g < 5; ++g)
      CHECK(upd2.at(ix.unfrozen(s), ix.freeze_action(), g) > 1e-6);
}

TEST_CASE("expected HER update is the gradient of the mu-tilde loss") {
  Pcg32 rng(22, 1);
  FiniteMultiGoalMdp mdp = make_deterministic_reachable_mdp(4, 2, 0.8, rng);
  Table3 q_theta = random_table(4, 2, 4, rng);
  Table3 q_tar = random_table(4, 2, 4, rng);
  HerDistribution dist =
      her_distribution(mdp, her_cfg_for(mdp, uniform_policy(4, 4, 2)));
  Table3 upd = expected_update_her(mdp, dist, TabularQ{q_theta}, TabularQ{q_tar});
  Table3 fd = numeric_gradient(
      [&](const Table3& q) { return her_loss(mdp, dist.mu_tilde, q, q_tar); },
      q_theta);
  for (std::size_t i = 0; i < upd.v.size(); ++i)
    CHECK(upd.v[i] == Catch::Approx(-fd.v[i]).margin(1e-6));
}

TEST_CASE("expected delta-TD update vanishes at m_pi for n in 1..3") {
  Pcg32 rng(23, 1);
  FiniteMultiGoalMdp mdp = make_random_mdp(4, 2, 2, 0.9, rng);
  TabularPolicy policy = softmax_policy(random_table(4, 4, 2, rng));
  GoalDensityTable m_pi = solve_m_pi(mdp, policy);
  Table2 rho_sg(4, 4, 1.0 / 16);
  for (int n = 1; n <= 3; ++n) {
    Table3 upd = expected_update_delta_td(mdp, policy, m_pi, m_pi, rho_sg, n);
    CHECK(sup_norm(upd.v) < 1e-10);
  }
}

TEST_CASE("expected delta-TD at gamma 0 keeps only the Dirac term") {
  Pcg32 rng(24, 1);
  FiniteMultiGoalMdp mdp = make_random_mdp(4, 2, 2, 0.0, rng);
  TabularPolicy policy = uniform_policy(4, 4, 2);
  GoalDensityTable zero{Table3(4, 4, 4, 0.0)};
  Table2 rho_sg(4, 4, 1.0 / 16);
  Table3 upd = expected_update_delta_td(mdp, policy, zero, zero, rho_sg, 1);
  for (int s = 0; s < 4; ++s)
    for (int g = 0; g < 4; ++g)
      for (int h = 0; h < 4; ++h)
        CHECK(upd.at(s, g, h) ==
              Catch::Approx(mdp.goal_map[s] == h ? rho_sg.at(s, g) : 0.0)
                  .margin(1e-15));
}

TEST_CASE("expected delta-TD(n) equals the composed-operator form") {
  Pcg32 rng(25, 1);
  FiniteMultiGoalMdp mdp = make_random_mdp(4, 2, 2, 0.9, rng);
  TabularPolicy policy = softmax_policy(random_table(4, 4, 2, rng));
  Table3 kernel = policy_transition_kernel(mdp, policy);
  Table3 m_theta = random_table(4, 4, 4, rng);
  Table3 m_tar = random_table(4, 4, 4, rng);
  Table2 rho_sg(4, 4, 0.0);
  Pcg32 wrng(77, 1);
  double total = 0.0;
  for (double& w : rho_sg.v) {
    w = wrng.uniform();
    total += w;
  }
  for (double& w : rho_sg.v) w /= total;

  for (int n : {2, 3}) {
    Table3 upd = expected_update_delta_td(mdp, policy, GoalDensityTable{m_theta},
                                          GoalDensityTable{m_tar}, rho_sg, n);
    // independent route: rho_sg * rho_G * ((T^pi)^n m_tar - m_theta)
    Table3 composed = m_tar;
    for (int k = 0; k < n; ++k) composed = apply_t_pi(mdp, kernel, composed);
    for (int s = 0; s < 4; ++s)
      for (int g = 0; g < 4; ++g)
        for (int h = 0; h < 4; ++h) {
          double want = rho_sg.at(s, g) * mdp.goal_dist[h] *
                        (composed.at(s, g, h) - m_theta.at(s, g, h));
          CHECK(upd.at(s, g, h) == Catch::Approx(want).margin(1e-11));
        }
  }
}

// ---------------------------------------------------------------------------
// exact return and policy gradient
// ---------------------------------------------------------------------------

TEST_CASE("exact_expected_return closed forms") {
  FiniteMultiGoalMdp one;
  one.n_states = one.n_actions = one.n_goals = 1;
  one.discount = 0.9;
  one.transition = Table3(1, 1, 1, 1.0);
  one.goal_map = {0};
  one.goal_dist = {1.0};
  one.init_dist = Table2(1, 1, 1.0);
  one.validate();
  CHECK(exact_expected_return(one, uniform_policy(1, 1, 1)) ==
        Catch::Approx(10.0));

  Pcg32 rng(26, 1);
  FiniteMultiGoalMdp mdp = make_random_mdp(4, 2, 2, 0.0, rng);
  double j = exact_expected_return(mdp, uniform_policy(4, 4, 2));
  double want = 0.0;
  for (int g = 0; g < 4; ++g)
    for (int s0 = 0; s0 < 4; ++s0)
      want += mdp.goal_dist[g] * mdp.init_dist.at(g, s0) *
              (mdp.goal_map[s0] == g ? 4.0 : 0.0);
  CHECK(j == Catch::Approx(want));
}

TEST_CASE("greedy policy improves on uniform across random MDPs") {
  for (int i = 0; i < 20; ++i) {
    Pcg32 rng(900 + i, 1);
    FiniteMultiGoalMdp mdp = make_random_mdp(4, 2, 2, 0.9, rng);
    TabularQ qs = solve_q_star(mdp, 1e-12);
    TabularPolicy greedy = epsilon_greedy(qs.q, 0.0);
    TabularPolicy uni = uniform_policy(4, 4, 2);
    CHECK(exact_expected_return(mdp, greedy) >=
          exact_expected_return(mdp, uni) - 1e-9);
  }
}

TEST_CASE("delta-AC expected update is zero on a one-state MDP") {
  FiniteMultiGoalMdp one;
  one.n_states = one.n_goals = 1;
  one.n_actions = 3;
  one.discount = 0.9;
  one.transition = Table3(1, 3, 1, 1.0);
  one.goal_map = {0};
  one.goal_dist = {1.0};
  one.init_dist = Table2(1, 1, 1.0);
  one.validate();
  Pcg32 rng(27, 1);
  TabularPolicy policy = softmax_policy(random_table(1, 1, 3, rng));
  GoalDensityTable m = solve_m_pi(one, policy);
  Table3 upd = expected_update_delta_ac(one, policy, m);
  CHECK(sup_norm(upd.v) < 1e-12);
}

TEST_CASE("delta-AC baseline invariance") {
  Pcg32 rng(28, 1);
  FiniteMultiGoalMdp mdp = make_random_mdp(3, 2, 2, 0.9, rng);
  TabularPolicy policy = softmax_policy(random_table(3, 3, 2, rng));
  GoalDensityTable m = solve_m_pi(mdp, policy);
  Table2 baseline(3, 3, 0.0);
  for (double& b : baseline.v) b = 10.0 * rng.normal();
  Table3 a = expected_update_delta_ac(mdp, policy, m);
  Table3 b = expected_update_delta_ac(mdp, policy, m, &baseline);
  CHECK(sup_diff(a.v, b.v) < 1e-10);
}

TEST_CASE("delta-AC expected update matches finite differences of J") {
  for (int i = 0; i < 3; ++i) {
    Pcg32 rng(600 + i, 1);
    FiniteMultiGoalMdp mdp = make_random_mdp(3, 2, 2, 0.9, rng);
    Table3 logits = random_table(3, 3, 2, rng);
    TabularPolicy policy = softmax_policy(logits);
    GoalDensityTable m = solve_m_pi(mdp, policy);
    Table3 upd = expected_update_delta_ac(mdp, policy, m);
    Table3 fd = finite_difference_grad_J(mdp, logits, 1e-5);
    CHECK(sup_diff(upd.v, fd.v) < 1e-6);
  }
}

TEST_CASE("finite differences inherit the softmax shift symmetry") {
  Pcg32 rng(29, 1);
  FiniteMultiGoalMdp mdp = make_random_mdp(3, 2, 2, 0.9, rng);
  Table3 logits(3, 3, 2, 0.0);  // uniform policy
  Table3 fd = finite_difference_grad_J(mdp, logits, 1e-5);
  for (int s = 0; s < 3; ++s)
    for (int g = 0; g < 3; ++g)
      CHECK(fd.at(s, g, 0) == Catch::Approx(-fd.at(s, g, 1)).margin(1e-7));
}

TEST_CASE("finite difference error shrinks at the Richardson rate") {
  Pcg32 rng(30, 1);
  FiniteMultiGoalMdp mdp = make_random_mdp(3, 2, 2, 0.9, rng);
  Table3 logits = random_table(3, 3, 2, rng);
  double h = 1e-2;
  Table3 g1 = finite_difference_grad_J(mdp, logits, h);
  Table3 g2 = finite_difference_grad_J(mdp, logits, h / 2);
  Table3 g3 = finite_difference_grad_J(mdp, logits, h / 4);
  // pick the coordinate with the largest curvature signal
  std::size_t best = 0;
  double best_diff = 0.0;
  for (std::size_t c = 0; c < g1.v.size(); ++c) {
    double d = std::fabs(g2.v[c] - g3.v[c]);
    if (d > best_diff) {
      best_diff = d;
      best = c;
    }
  }
  REQUIRE(best_diff > 1e-12);
  double ratio = (g1.v[best] - g2.v[best]) / (g2.v[best] - g3.v[best]);
  CHECK(ratio == Catch::Approx(4.0).margin(0.6));
}

// ---------------------------------------------------------------------------
// finite-horizon mass on the dyadic tree
// ---------------------------------------------------------------------------

namespace {

// Exact sparse-measure propagation oracle: represents Q_t(s, a, .) as a full
// per-goal vector and takes the coordinate-wise sup over actions.
std::vector<double> oracle_masses(const FiniteMultiGoalMdp& tree, int t,
                                  double gamma) {
  int S = tree.n_states, A = tree.n_actions, G = tree.n_goals;
  // q[s][a] is a G-vector of atom masses
  std::vector<std::vector<std::vector<double>>> q(
      S, std::vector<std::vector<double>>(A, std::vector<double>(G, 0.0)));
  for (int step = 0; step < t; ++step) {
    auto next = q;
    for (int s = 0; s < S; ++s)
      for (int a = 0; a < A; ++a) {
        std::vector<double> acc(G, 0.0);
        for (int s2 = 0; s2 < S; ++s2) {
          double p = tree.transition.at(s, a, s2);
          if (p == 0.0) continue;
          for (int g = 0; g < G; ++g) {
            double best = q[s2][0][g];
            for (int a2 = 1; a2 < A; ++a2) best = std::max(best, q[s2][a2][g]);
            acc[g] += p * best;
          }
        }
        for (int g = 0; g < G; ++g)
          next[s][a][g] = (tree.goal_map[s] == g ? 1.0 : 0.0) + gamma * acc[g];
      }
    q = next;
  }
  std::vector<double> masses(static_cast<std::size_t>(S) * A, 0.0);
  for (int s = 0; s < S; ++s)
    for (int a = 0; a < A; ++a) {
      double total = 0.0;
      for (int g = 0; g < G; ++g) total += q[s][a][g];
      masses[static_cast<std::size_t>(s) * A + a] = total;
    }
  return masses;
}

}  // namespace

TEST_CASE("finite_horizon_mass t=1 is one everywhere") {
  FiniteMultiGoalMdp tree = dyadic_tree_mdp(3, 0.4);
  FiniteHorizonMass fh = finite_horizon_mass(tree, 1, 0.4);
  for (double m : fh.mass.v) CHECK(m == Catch::Approx(1.0));
}

TEST_CASE("finite_horizon_mass matches the sparse-measure oracle") {
  FiniteMultiGoalMdp tree = dyadic_tree_mdp(4, 0.45);
  for (double gamma : {0.3, 0.45, 0.6})
    for (int t = 1; t <= 4; ++t) {
      FiniteHorizonMass fh = finite_horizon_mass(tree, t, gamma);
      std::vector<double> want = oracle_masses(tree, t, gamma);
      CHECK(sup_diff(fh.mass.v, want) < 1e-12);
    }
}

TEST_CASE("finite_horizon_mass converges to 3 at gamma 0.4") {
  std::vector<int> tree = dyadic_tree_successors(12);
  double prev = 0.0;
  for (int t = 1; t <= 12; ++t) {
    FiniteHorizonMass fh = finite_horizon_mass(tree, 2, t, 0.4);
    double root = fh.mass.at(0, 0);
    CHECK(root >= prev);
    prev = root;
    CHECK_FALSE(fh.diverges);
    CHECK(std::fabs(root - dyadic_mass_limit(0.4)) <=
          dyadic_mass_tail(0.4, t) + 1e-12);
  }
  CHECK(dyadic_mass_limit(0.4) == Catch::Approx(3.0));
}

TEST_CASE("successor-table and dense routes agree") {
  FiniteMultiGoalMdp tree = dyadic_tree_mdp(5, 0.4);
  std::vector<int> succ = dyadic_tree_successors(5);
  // the heap table matches the dense transitions
  for (int s = 0; s < tree.n_states; ++s)
    for (int a = 0; a < 2; ++a)
      CHECK(tree.transition.at(s, a, succ[2 * s + a]) == 1.0);
  for (int t = 1; t <= 5; ++t) {
    FiniteHorizonMass dense = finite_horizon_mass(tree, t, 0.45);
    FiniteHorizonMass sparse = finite_horizon_mass(succ, 2, t, 0.45);
    CHECK(dense.mass.v == sparse.mass.v);
  }
}

TEST_CASE("finite_horizon_mass raises the divergence flag at gamma >= 0.5") {
  std::vector<int> tree = dyadic_tree_successors(8);
  FiniteHorizonMass fh = finite_horizon_mass(tree, 2, 8, 0.6);
  CHECK(fh.diverges);
  CHECK(std::isinf(dyadic_mass_limit(0.6)));
  // masses keep growing: horizon-8 mass exceeds any earlier one
  double m8 = fh.mass.at(0, 0);
  double m4 = finite_horizon_mass(tree, 2, 4, 0.6).mass.at(0, 0);
  CHECK(m8 > m4 + 1.0);
}
