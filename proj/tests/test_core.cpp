#include <catch_amalgamated.hpp>

#include <cmath>

#include "mgrl/mdp.hpp"
#include "mgrl/rng.hpp"

using namespace mgrl;

namespace {

FiniteMultiGoalMdp single_state_mdp(double gamma = 0.5) {
  FiniteMultiGoalMdp mdp;
  mdp.n_states = 1;
  mdp.n_actions = 1;
  mdp.n_goals = 1;
  mdp.discount = gamma;
  mdp.transition = Table3(1, 1, 1, 1.0);
  mdp.goal_map = {0};
  mdp.goal_dist = {1.0};
  mdp.init_dist = Table2(1, 1, 1.0);
  mdp.validate();
  return mdp;
}

FiniteMultiGoalMdp chain_mdp(int n, double gamma = 0.9) {
  FiniteMultiGoalMdp mdp;
  mdp.n_states = n;
  mdp.n_actions = 2;
  mdp.n_goals = n;
  mdp.discount = gamma;
  mdp.transition = Table3(n, 2, n, 0.0);
  for (int s = 0; s < n; ++s) {
    mdp.transition.at(s, 0, (s + 1) % n) = 1.0;
    mdp.transition.at(s, 1, s) = 1.0;
  }
  mdp.goal_map.resize(n);
  for (int s = 0; s < n; ++s) mdp.goal_map[s] = s;
  mdp.goal_dist.assign(n, 1.0 / n);
  mdp.init_dist = Table2(n, n, 1.0 / n);
  mdp.validate();
  return mdp;
}

FiniteMultiGoalMdp random_valid_mdp(Pcg32& rng, int S = 4, int A = 2) {
  FiniteMultiGoalMdp mdp;
  mdp.n_states = S;
  mdp.n_actions = A;
  mdp.n_goals = S;
  mdp.discount = 0.9;
  mdp.transition = Table3(S, A, S, 0.0);
  for (int s = 0; s < S; ++s)
    for (int a = 0; a < A; ++a) {
      double total = 0.0;
      for (int s2 = 0; s2 < S; ++s2) {
        double w = -std::log(1.0 - rng.uniform() + 1e-12);
        mdp.transition.at(s, a, s2) = w;
        total += w;
      }
      for (int s2 = 0; s2 < S; ++s2) mdp.transition.at(s, a, s2) /= total;
    }
  mdp.goal_map.resize(S);
  for (int s = 0; s < S; ++s) mdp.goal_map[s] = s;
  mdp.goal_dist.assign(S, 1.0 / S);
  mdp.init_dist = Table2(S, S, 1.0 / S);
  mdp.validate();
  return mdp;
}

}  // namespace

TEST_CASE("pcg32 matches the reference stream") {
  Pcg32 rng(42, 54);
  // first outputs of pcg32 seeded with (42, 54), from the reference demo
  CHECK(rng.next_u32() == 0xa15c02b7u);
  CHECK(rng.next_u32() == 0x7b47f409u);
  CHECK(rng.next_u32() == 0xba1d3330u);
}

TEST_CASE("pcg32 helpers stay in range") {
  Pcg32 rng(7, 1);
  for (int i = 0; i < 10000; ++i) {
    double u = rng.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    int k = rng.uniform_int(7);
    CHECK(k >= 0);
    CHECK(k < 7);
  }
}

TEST_CASE("categorical sampling is exact for point masses") {
  Pcg32 rng(1, 1);
  std::vector<double> w = {0.0, 0.0, 1.0, 0.0};
  for (int i = 0; i < 100; ++i) CHECK(rng.categorical(w) == 2);
}

TEST_CASE("mdp validation accepts valid and rejects perturbed instances") {
  Pcg32 rng(11, 2);
  for (int i = 0; i < 20; ++i) {
    FiniteMultiGoalMdp mdp = random_valid_mdp(rng);
    CHECK_NOTHROW(mdp.validate());
    FiniteMultiGoalMdp broken = mdp;
    broken.transition.at(i % 4, i % 2, 0) += 1e-6;
    CHECK_THROWS_AS(broken.validate(), std::invalid_argument);
    FiniteMultiGoalMdp bad_goal = mdp;
    bad_goal.goal_dist[0] += 1e-6;
    CHECK_THROWS_AS(bad_goal.validate(), std::invalid_argument);
  }
}

TEST_CASE("validation records goal-map surjectivity") {
  FiniteMultiGoalMdp mdp = chain_mdp(3);
  CHECK(mdp.goal_map_surjective);
  mdp.goal_map = {0, 0, 1};  // goal 2 unattained
  mdp.validate();
  CHECK_FALSE(mdp.goal_map_surjective);
}

TEST_CASE("sample_trajectory on a single absorbing state") {
  FiniteMultiGoalMdp mdp = single_state_mdp();
  TabularPolicy policy = uniform_policy(1, 1, 1);
  Pcg32 rng(3, 1);
  Trajectory traj = sample_trajectory(mdp, policy, 10, rng);
  traj.validate(mdp);
  for (int s : traj.states) CHECK(s == 0);
}

TEST_CASE("sample_trajectory is deterministic under a fixed seed") {
  FiniteMultiGoalMdp mdp = chain_mdp(3);
  TabularPolicy policy = uniform_policy(3, 3, 2);
  Pcg32 a(42, 0), b(42, 0);
  Trajectory ta = sample_trajectory(mdp, policy, 25, a);
  Trajectory tb = sample_trajectory(mdp, policy, 25, b);
  CHECK(ta.goal == tb.goal);
  CHECK(ta.states == tb.states);
  CHECK(ta.actions == tb.actions);
}

TEST_CASE("sample_trajectory consumes exactly 2 + 2*horizon draws") {
  FiniteMultiGoalMdp mdp = chain_mdp(4);
  TabularPolicy policy = uniform_policy(4, 4, 2);
  for (int horizon : {1, 5, 17}) {
    Pcg32 used(9, 4), reference(9, 4);
    sample_trajectory(mdp, policy, horizon, used);
    for (int i = 0; i < 2 + 2 * horizon; ++i) reference.next_u32();
    CHECK(used.state() == reference.state());
  }
}

TEST_CASE("sample_trajectory empirical transition frequency matches P") {
  FiniteMultiGoalMdp mdp;
  mdp.n_states = 2;
  mdp.n_actions = 1;
  mdp.n_goals = 2;
  mdp.discount = 0.9;
  mdp.transition = Table3(2, 1, 2, 0.0);
  mdp.transition.at(0, 0, 0) = 0.7;
  mdp.transition.at(0, 0, 1) = 0.3;
  mdp.transition.at(1, 0, 0) = 1.0;
  mdp.goal_map = {0, 1};
  mdp.goal_dist = {0.5, 0.5};
  mdp.init_dist = Table2(2, 2, 0.0);
  mdp.init_dist.at(0, 0) = 1.0;
  mdp.init_dist.at(1, 0) = 1.0;
  mdp.validate();
  TabularPolicy policy = uniform_policy(2, 2, 1);

  Pcg32 rng(2024, 1);
  long from0 = 0, jumps = 0;
  for (int i = 0; i < 100000; ++i) {
    Trajectory t = sample_trajectory(mdp, policy, 1, rng);
    if (t.states[0] == 0) {
      ++from0;
      if (t.states[1] == 1) ++jumps;
    }
  }
  double freq = static_cast<double>(jumps) / from0;
  CHECK(freq > 0.29);
  CHECK(freq < 0.31);
}

TEST_CASE("policy dimension mismatch is a configuration error") {
  FiniteMultiGoalMdp mdp = chain_mdp(3);
  TabularPolicy bad = uniform_policy(2, 3, 2);
  Pcg32 rng(1, 1);
  CHECK_THROWS_AS(sample_trajectory(mdp, bad, 5, rng), std::invalid_argument);
}

TEST_CASE("policy_transition_kernel degenerate and mixture cases") {
  FiniteMultiGoalMdp mdp = chain_mdp(4);
  TabularPolicy det = uniform_policy(4, 4, 2);
  det.probs = Table3(4, 4, 2, 0.0);
  for (int s = 0; s < 4; ++s)
    for (int g = 0; g < 4; ++g) det.probs.at(s, g, 0) = 1.0;
  Table3 k0 = policy_transition_kernel(mdp, det);
  for (int g = 0; g < 4; ++g)
    for (int s = 0; s < 4; ++s)
      for (int s2 = 0; s2 < 4; ++s2)
        CHECK(k0.at(g, s, s2) == mdp.transition.at(s, 0, s2));

  TabularPolicy uni = uniform_policy(4, 4, 2);
  Table3 ku = policy_transition_kernel(mdp, uni);
  for (int g = 0; g < 4; ++g)
    for (int s = 0; s < 4; ++s)
      for (int s2 = 0; s2 < 4; ++s2)
        CHECK(ku.at(g, s, s2) ==
              Catch::Approx(0.5 * (mdp.transition.at(s, 0, s2) +
                                   mdp.transition.at(s, 1, s2))));
}

TEST_CASE("policy kernel rows sum to one on random instances") {
  Pcg32 rng(5, 2);
  FiniteMultiGoalMdp mdp = random_valid_mdp(rng, 5, 3);
  Table3 logits(5, 5, 3, 0.0);
  for (double& x : logits.v) x = rng.normal();
  TabularPolicy policy = softmax_policy(logits);
  Table3 kernel = policy_transition_kernel(mdp, policy);
  for (int g = 0; g < 5; ++g)
    for (int s = 0; s < 5; ++s) {
      double sum = 0.0;
      for (int s2 = 0; s2 < 5; ++s2) sum += kernel.at(g, s, s2);
      CHECK(std::fabs(sum - 1.0) < 1e-12);
    }
}

TEST_CASE("k-step kernel equals repeated matrix multiplication") {
  Pcg32 rng(6, 2);
  FiniteMultiGoalMdp mdp = random_valid_mdp(rng, 4, 2);
  TabularPolicy policy = uniform_policy(4, 4, 2);
  Table3 kernel = policy_transition_kernel(mdp, policy);
  int g = 1, k = 5;
  // reference: dense matrix powers
  std::vector<std::vector<double>> m(4, std::vector<double>(4, 0.0));
  for (int i = 0; i < 4; ++i) m[i][i] = 1.0;
  for (int step = 0; step < k; ++step) {
    std::vector<std::vector<double>> next(4, std::vector<double>(4, 0.0));
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j)
        for (int l = 0; l < 4; ++l) next[i][j] += m[i][l] * kernel.at(g, l, j);
    m = next;
  }
  // same thing composed pairwise then squared etc. via (P^2)^2 * P
  std::vector<std::vector<double>> p2(4, std::vector<double>(4, 0.0));
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j)
      for (int l = 0; l < 4; ++l)
        p2[i][j] += kernel.at(g, i, l) * kernel.at(g, l, j);
  std::vector<std::vector<double>> p4(4, std::vector<double>(4, 0.0));
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j)
      for (int l = 0; l < 4; ++l) p4[i][j] += p2[i][l] * p2[l][j];
  std::vector<std::vector<double>> p5(4, std::vector<double>(4, 0.0));
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j)
      for (int l = 0; l < 4; ++l) p5[i][j] += p4[i][l] * kernel.at(g, l, j);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) CHECK(std::fabs(m[i][j] - p5[i][j]) < 1e-10);
}

TEST_CASE("epsilon_greedy limits") {
  Table3 q(2, 2, 2, 0.0);
  q.at(0, 1, 0) = 1.0;
  q.at(0, 0, 1) = 1.0;
  q.at(1, 1, 0) = 2.0;
  q.at(1, 1, 1) = 2.0;

  TabularPolicy uniform = epsilon_greedy(q, 1.0);
  for (double p : uniform.probs.v) CHECK(p == Catch::Approx(0.5));

  TabularPolicy greedy = epsilon_greedy(q, 0.0);
  CHECK(greedy.probs.at(0, 0, 1) == 1.0);
  CHECK(greedy.probs.at(0, 1, 0) == 1.0);
  CHECK(greedy.probs.at(1, 0, 1) == 1.0);

  TabularPolicy mixed = epsilon_greedy(q, 0.2);
  CHECK(mixed.probs.at(0, 0, 0) == Catch::Approx(0.1));
  CHECK(mixed.probs.at(0, 0, 1) == Catch::Approx(0.9));
}

TEST_CASE("epsilon_greedy breaks ties toward the lowest action index") {
  Table3 q(1, 3, 1, 0.0);  // all equal
  TabularPolicy greedy = epsilon_greedy(q, 0.0);
  CHECK(greedy.probs.at(0, 0, 0) == 1.0);
  CHECK(greedy.probs.at(0, 0, 1) == 0.0);
}

TEST_CASE("softmax_policy closed forms") {
  Table3 zeros(1, 1, 3, 0.0);
  TabularPolicy p0 = softmax_policy(zeros);
  for (int a = 0; a < 3; ++a)
    CHECK(p0.probs.at(0, 0, a) == Catch::Approx(1.0 / 3));

  Table3 shift(1, 1, 2, 123.0);
  TabularPolicy p1 = softmax_policy(shift);
  CHECK(p1.probs.at(0, 0, 0) == Catch::Approx(0.5));

  Table3 ln3(1, 1, 2, 0.0);
  ln3.at(0, 0, 1) = std::log(3.0);
  TabularPolicy p2 = softmax_policy(ln3);
  CHECK(p2.probs.at(0, 0, 0) == Catch::Approx(0.25));
  CHECK(p2.probs.at(0, 0, 1) == Catch::Approx(0.75));

  Table3 nan_logits(1, 1, 2, 0.0);
  nan_logits.at(0, 0, 0) = std::nan("");
  CHECK_THROWS_AS(softmax_policy(nan_logits), std::invalid_argument);
}

TEST_CASE("softmax_policy survives huge logits via max subtraction") {
  Table3 logits(1, 1, 2, 0.0);
  logits.at(0, 0, 0) = 800.0;
  logits.at(0, 0, 1) = 799.0;
  TabularPolicy p = softmax_policy(logits);
  CHECK(p.probs.at(0, 0, 0) > 0.5);
  CHECK(p.probs.at(0, 0, 1) > 0.0);
  CHECK(p.probs.at(0, 0, 0) + p.probs.at(0, 0, 1) == Catch::Approx(1.0));
}
