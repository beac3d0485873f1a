#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "bats/planner.hpp"

using namespace bats;

namespace {

/// Exact linear ensemble: members are single linear layers computing
/// delta = L * [s, a] with zero log-variance. No training noise.
DynamicsEnsemble linear_ensemble(int state_dim, int action_dim,
                                 const Eigen::MatrixXd& L, int members = 3) {
  DynamicsEnsemble ens;
  ens.state_dim = state_dim;
  ens.action_dim = action_dim;
  ens.n_trained = members;
  ens.n_kept = members;
  const int in = state_dim + action_dim;
  ens.in_norm.mean = Eigen::VectorXd::Zero(in);
  ens.in_norm.stddev = Eigen::VectorXd::Ones(in);
  ens.delta_norm.mean = Eigen::VectorXd::Zero(state_dim);
  ens.delta_norm.stddev = Eigen::VectorXd::Ones(state_dim);
  for (int m = 0; m < members; ++m) {
    DynamicsMember mem;
    Eigen::MatrixXd W = Eigen::MatrixXd::Zero(2 * state_dim, in);
    W.topRows(state_dim) = L;
    mem.net.W = {W};
    mem.net.b = {Eigen::VectorXd::Zero(2 * state_dim)};
    mem.index = m;
    ens.members.push_back(std::move(mem));
    ens.validation_losses.push_back(0.0);
  }
  std::mt19937_64 rng(0);
  ens.reward_net = nn::Mlp::make({in, 2, 1}, rng);
  return ens;
}

/// 1-D system s' = s + a.
DynamicsEnsemble one_d_integrator() {
  Eigen::MatrixXd L(1, 2);
  L << 0.0, 1.0;
  return linear_ensemble(1, 1, L);
}

CemConfig cem_1d() {
  CemConfig cfg;
  cfg.action_lo = {-1.0};
  cfg.action_hi = {1.0};
  return cfg;
}

}  // namespace

TEST_CASE("double integrator: zero action holds the fixed point") {
  // s = (x, v), delta = (v*dt, a*dt); at v = 0 the zero action is a fixed
  // point, so planning from a rest state back to itself must succeed.
  const double dt = 0.1;
  Eigen::MatrixXd L(2, 3);
  L << 0.0, dt, 0.0,
       0.0, 0.0, dt;
  const DynamicsEnsemble ens = linear_ensemble(2, 1, L);
  CemConfig cfg = cem_1d();
  const Vec rest{0.7, 0.0};
  const PlanResult res =
      plan_stitch(ens, rest, rest, 1, 0.01, euclidean_metric(), cfg, 5);
  CHECK(res.accepted);
  CHECK(res.achieved_distance < 1e-3);
}

TEST_CASE("1-d linear system: recovers the closed-form action") {
  const DynamicsEnsemble ens = one_d_integrator();
  const PlanResult res = plan_stitch(ens, {0.0}, {0.5}, 1, 0.05,
                                     euclidean_metric(), cem_1d(), 11);
  CHECK(res.accepted);
  CHECK(res.actions.size() == 1);
  CHECK(res.actions[0][0] == doctest::Approx(0.5).epsilon(0.04));
  CHECK(res.predicted_states.size() == 1);
  CHECK(res.predicted_states[0][0] == doctest::Approx(0.5).epsilon(0.05));
}

TEST_CASE("unreachable target is rejected, not thrown") {
  const DynamicsEnsemble ens = one_d_integrator();
  const PlanResult res = plan_stitch(ens, {0.0}, {10.0}, 1, 0.05,
                                     euclidean_metric(), cem_1d(), 3);
  CHECK(!res.accepted);
  CHECK(res.achieved_distance == doctest::Approx(9.0).epsilon(0.01));
}

TEST_CASE("cem achieves the projected closed-form optimum on 1-step problems") {
  const DynamicsEnsemble ens = one_d_integrator();
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> targets(-3.0, 3.0);
  for (int trial = 0; trial < 20; ++trial) {
    const double target = targets(rng);
    const double optimum = std::abs(target) <= 1.0 ? 0.0 : std::abs(target) - 1.0;
    const PlanResult res = plan_stitch(ens, {0.0}, {target}, 1, 1e-3,
                                       euclidean_metric(), cem_1d(),
                                       1000 + trial);
    CHECK(res.achieved_distance <= std::max(1.05 * optimum, optimum + 0.02));
  }
}

TEST_CASE("cem respects bounds and its best score is monotone") {
  Eigen::MatrixXd L(1, 2);
  L << 0.0, 2.5;  // s' = s + 2.5 a, pushes optima toward the bounds
  const DynamicsEnsemble ens = linear_ensemble(1, 1, L);
  CemConfig cfg = cem_1d();
  cfg.iterations = 6;
  std::vector<double> history;
  const PlanResult res = plan_stitch(ens, {0.0}, {5.0}, 2, 0.5,
                                     euclidean_metric(), cfg, 21, &history);
  for (const Vec& a : res.actions) {
    CHECK(a[0] >= -1.0);
    CHECK(a[0] <= 1.0);
  }
  for (std::size_t i = 1; i < history.size(); ++i) {
    CHECK(history[i] <= history[i - 1] + 1e-15);
  }
  CHECK(res.accepted);  // 2 steps of 2.5 reach 5.0 exactly
}

TEST_CASE("plan_stitch is deterministic per seed") {
  const DynamicsEnsemble ens = one_d_integrator();
  const PlanResult a = plan_stitch(ens, {0.0}, {0.4}, 1, 0.05,
                                   euclidean_metric(), cem_1d(), 77);
  const PlanResult b = plan_stitch(ens, {0.0}, {0.4}, 1, 0.05,
                                   euclidean_metric(), cem_1d(), 77);
  CHECK(a.achieved_distance == b.achieved_distance);
  CHECK(a.actions[0] == b.actions[0]);
}

TEST_CASE("multi_start_test_edge: single attempt equals the derived plan") {
  const DynamicsEnsemble ens = one_d_integrator();
  const PlanResult direct =
      plan_stitch(ens, {0.0}, {0.5}, 1, 0.05, euclidean_metric(), cem_1d(),
                  derive_seed(55, 0xa77e, 0));
  const PlanResult multi = multi_start_test_edge(ens, {0.0}, {0.5}, 1, 0.05,
                                                 euclidean_metric(), cem_1d(),
                                                 1, 55);
  CHECK(multi.achieved_distance == direct.achieved_distance);
  CHECK(multi.actions[0] == direct.actions[0]);
  CHECK_THROWS_AS(multi_start_test_edge(ens, {0.0}, {0.5}, 1, 0.05,
                                        euclidean_metric(), cem_1d(), 0, 55),
                  ConfigError);
}

TEST_CASE("multi_start_test_edge takes the min over attempts") {
  const DynamicsEnsemble ens = one_d_integrator();
  // Deliberately weak search so per-seed outcomes vary.
  CemConfig weak = cem_1d();
  weak.population = 4;
  weak.elite_fraction = 0.5;
  weak.iterations = 1;
  const double delta = 0.02;

  const PlanResult three = multi_start_test_edge(ens, {0.0}, {0.5}, 1, delta,
                                                 euclidean_metric(), weak, 3, 9);
  for (int j = 0; j < 3; ++j) {
    const PlanResult single =
        plan_stitch(ens, {0.0}, {0.5}, 1, delta, euclidean_metric(), weak,
                    derive_seed(9, 0xa77e, j));
    CHECK(three.achieved_distance <= single.achieved_distance);
  }

  // Find a seed whose first attempt fails but a later attempt succeeds: the
  // combined test must accept.
  bool found = false;
  for (uint64_t seed = 0; seed < 200 && !found; ++seed) {
    const PlanResult first =
        plan_stitch(ens, {0.0}, {0.5}, 1, delta, euclidean_metric(), weak,
                    derive_seed(seed, 0xa77e, 0));
    if (first.accepted) continue;
    const PlanResult combined = multi_start_test_edge(
        ens, {0.0}, {0.5}, 1, delta, euclidean_metric(), weak, 4, seed);
    if (combined.accepted) {
      found = true;
      CHECK(combined.achieved_distance < first.achieved_distance);
    }
  }
  CHECK(found);
}

TEST_CASE("config validation") {
  CemConfig cfg = cem_1d();
  cfg.population = 10;
  cfg.elite_fraction = 0.05;  // 0.5 elites < 2
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = cem_1d();
  cfg.action_hi = {-2.0};
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  const DynamicsEnsemble ens = one_d_integrator();
  CHECK_THROWS_AS(plan_stitch(ens, {0.0}, {1.0}, 0, 0.1, euclidean_metric(),
                              cem_1d(), 1),
                  ConfigError);
  CHECK_THROWS_AS(plan_stitch(ens, {0.0}, {1.0}, 1, -0.1, euclidean_metric(),
                              cem_1d(), 1),
                  ConfigError);
}
