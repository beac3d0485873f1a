#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "bats/dynamics.hpp"
#include "bats/envs.hpp"

using namespace bats;

namespace {

// Noiseless linear system s' = As + Ba + c with known matrices.
const double kA[2][2] = {{0.9, 0.1}, {-0.05, 0.85}};
const double kB[2] = {0.2, -0.1};
const double kC[2] = {0.05, -0.02};

Vec linear_step(const Vec& s, const Vec& a) {
  return {kA[0][0] * s[0] + kA[0][1] * s[1] + kB[0] * a[0] + kC[0],
          kA[1][0] * s[0] + kA[1][1] * s[1] + kB[1] * a[0] + kC[1]};
}

TrajectoryDataset linear_dataset(uint64_t seed, int n_traj, int len,
                                 double reward_mode) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> act(-1.0, 1.0);
  std::uniform_real_distribution<double> start(-1.0, 1.0);
  TrajectoryDataset d;
  d.state_dim = 2;
  d.action_dim = 1;
  for (int t = 0; t < n_traj; ++t) {
    Vec s{start(rng), start(rng)};
    d.trajectories.emplace_back();
    for (int i = 0; i < len; ++i) {
      const Vec a{act(rng)};
      const Vec s2 = linear_step(s, a);
      // reward_mode < -1 means constant reward 0.7, else r = s[0].
      const double r = reward_mode < -1.0 ? 0.7 : s[0];
      d.trajectories.back().push_back(DataRecord{s, a, r, s2, false});
      s = s2;
    }
  }
  d.compute_normalization();
  return d;
}

DynamicsConfig small_config() {
  DynamicsConfig cfg;
  cfg.n_trained = 3;
  cfg.n_kept = 2;
  cfg.hidden = {32, 32};
  cfg.batch_size = 64;
  cfg.lr = 0.02;
  cfg.max_epochs = 80;
  cfg.plateau_patience = 10;
  cfg.validation_size = 200;
  return cfg;
}

/// Constant-delta ensemble built by hand: every member predicts s + delta.
DynamicsEnsemble constant_ensemble(int members, const Vec& delta) {
  DynamicsEnsemble ens;
  ens.state_dim = static_cast<int>(delta.size());
  ens.action_dim = 1;
  ens.n_trained = members;
  ens.n_kept = members;
  const int in = ens.state_dim + 1;
  ens.in_norm.mean = Eigen::VectorXd::Zero(in);
  ens.in_norm.stddev = Eigen::VectorXd::Ones(in);
  ens.delta_norm.mean = nn::to_eigen(delta);
  ens.delta_norm.stddev = Eigen::VectorXd::Ones(ens.state_dim);
  std::mt19937_64 rng(0);
  for (int m = 0; m < members; ++m) {
    DynamicsMember mem;
    mem.net = nn::Mlp::make({in, 4, 2 * ens.state_dim}, rng);
    for (auto& w : mem.net.W) w.setZero();
    for (auto& b : mem.net.b) b.setZero();
    mem.index = m;
    ens.members.push_back(std::move(mem));
    ens.validation_losses.push_back(0.0);
  }
  ens.reward_net = nn::Mlp::make({in, 4, 1}, rng);
  for (auto& w : ens.reward_net.W) w.setZero();
  for (auto& b : ens.reward_net.b) b.setZero();
  return ens;
}

}  // namespace

TEST_CASE("trained ensemble tracks a noiseless linear system") {
  const TrajectoryDataset train = linear_dataset(10, 60, 40, 0.0);
  const DynamicsEnsemble ens = train_ensemble(train, small_config(), 7);

  // Held-out one-step predictions.
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> u(-0.8, 0.8);
  double se = 0.0;
  const int n = 200;
  for (int i = 0; i < n; ++i) {
    const Vec s{u(rng), u(rng)};
    const Vec a{u(rng)};
    const Vec truth = linear_step(s, a);
    const Prediction p = predict(ens, s, a);
    se += (p.aggregate[0] - truth[0]) * (p.aggregate[0] - truth[0]) +
          (p.aggregate[1] - truth[1]) * (p.aggregate[1] - truth[1]);
  }
  const double rmse = std::sqrt(se / (2 * n));
  CHECK(rmse < 1e-2);
}

TEST_CASE("reward head learns a constant to 1e-3") {
  const TrajectoryDataset train = linear_dataset(11, 40, 30, -2.0);
  const DynamicsEnsemble ens = train_ensemble(train, small_config(), 3);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-0.8, 0.8);
  for (int i = 0; i < 50; ++i) {
    const double r = ens.predict_reward({u(rng), u(rng)}, {u(rng)});
    CHECK(r == doctest::Approx(0.7).epsilon(1e-3));
  }
}

TEST_CASE("mountain car desk config reaches 1e-3 position rmse") {
  MountainCarEnv env;
  const TrajectoryDataset data = generate_dataset(env, GenSpec{3, 25, 110, 21});
  DynamicsConfig cfg;
  cfg.n_trained = 2;
  cfg.n_kept = 1;
  cfg.hidden = {64, 64, 64};  // desk-scale mountain car architecture
  cfg.batch_size = 256;
  cfg.lr = 0.02;
  cfg.max_epochs = 120;
  cfg.plateau_patience = 12;
  cfg.validation_size = 300;
  const DynamicsEnsemble ens = train_ensemble(data, cfg, 4);

  const TrajectoryDataset held = generate_dataset(env, GenSpec{1, 6, 110, 1999});
  double se = 0.0;
  std::size_t n = 0;
  for (const auto& traj : held.trajectories) {
    for (const DataRecord& rec : traj) {
      const Prediction p = predict(ens, rec.s, rec.a);
      se += (p.aggregate[0] - rec.s2[0]) * (p.aggregate[0] - rec.s2[0]);
      ++n;
    }
  }
  CHECK(std::sqrt(se / n) < 1e-3);
}

TEST_CASE("predict: constant members aggregate and shapes") {
  const DynamicsEnsemble ens = constant_ensemble(5, {0.3, -0.1});
  const Prediction p = predict(ens, {1.0, 2.0}, {0.0});
  CHECK(p.member_means.size() == 5);
  CHECK(p.aggregate[0] == doctest::Approx(1.3));
  CHECK(p.aggregate[1] == doctest::Approx(1.9));
  for (const Vec& m : p.member_means) {
    CHECK(m[0] == doctest::Approx(1.3));
    CHECK(m[1] == doctest::Approx(1.9));
  }
  CHECK_THROWS_AS(predict(ens, {1.0}, {0.0}), ConfigError);
}

TEST_CASE("nearest-rank quantile definition") {
  CHECK(quantile_nearest_rank({1, 2, 3, 4, 5}, 0.8) == 4);
  CHECK(quantile_nearest_rank({5, 1, 3, 2, 4}, 1.0) == 5);
  CHECK(quantile_nearest_rank({2.5}, 0.5) == 2.5);
  CHECK_THROWS_AS(quantile_nearest_rank({}, 0.8), ConfigError);
  CHECK_THROWS_AS(quantile_nearest_rank({1.0}, 0.0), ConfigError);
}

TEST_CASE("member quantile distance: identical members and matrix oracle") {
  const DynamicsEnsemble ens = constant_ensemble(5, {0.25, 0.0});
  const Vec target{2.0, 2.0};
  const std::vector<Vec> seq{{0.1}, {0.2}, {0.3}};
  // All members identical: every quantile equals the common distance.
  const double d05 = member_quantile_distance(ens, {1.0, 2.0}, seq, target, 0.5,
                                              euclidean_metric());
  const double d10 = member_quantile_distance(ens, {1.0, 2.0}, seq, target, 1.0,
                                              euclidean_metric());
  CHECK(d05 == doctest::Approx(d10));
  // Matrix oracle: three constant steps of +0.25 in x.
  CHECK(d05 == doctest::Approx(l2_distance({1.75, 2.0}, target)));
  CHECK_THROWS_AS(member_quantile_distance(ens, {1.0, 2.0}, {}, target, 0.8,
                                           euclidean_metric()),
                  ConfigError);
}

TEST_CASE("trained member rollout matches explicit linear iteration") {
  const TrajectoryDataset train = linear_dataset(12, 60, 40, 0.0);
  const DynamicsEnsemble ens = train_ensemble(train, small_config(), 11);
  const Vec s0{0.2, -0.3};
  const std::vector<Vec> seq{{0.5}, {-0.25}, {0.75}};
  Vec truth = s0;
  for (const Vec& a : seq) truth = linear_step(truth, a);
  const double q = member_quantile_distance(ens, s0, seq, truth, 0.8,
                                            euclidean_metric());
  CHECK(q < 5e-2);  // accumulated three-step model error stays small
}

TEST_CASE("seed determinism and keep-best selection") {
  const TrajectoryDataset train = linear_dataset(13, 30, 30, 0.0);
  DynamicsConfig cfg = small_config();
  cfg.n_trained = 4;
  cfg.n_kept = 2;
  cfg.max_epochs = 15;
  const DynamicsEnsemble a = train_ensemble(train, cfg, 123);
  const DynamicsEnsemble b = train_ensemble(train, cfg, 123);
  REQUIRE(a.validation_losses.size() == b.validation_losses.size());
  for (std::size_t i = 0; i < a.validation_losses.size(); ++i) {
    CHECK(a.validation_losses[i] == b.validation_losses[i]);  // bitwise
  }

  double kept_max = -1e300;
  for (const auto& m : a.members) kept_max = std::max(kept_max, m.validation_loss);
  std::vector<uint8_t> is_kept(cfg.n_trained, 0);
  for (const auto& m : a.members) is_kept[m.index] = 1;
  for (int i = 0; i < cfg.n_trained; ++i) {
    if (!is_kept[i]) CHECK(kept_max <= a.validation_losses[i]);
  }

  const DynamicsEnsemble c = train_ensemble(train, cfg, 124);
  bool any_diff = false;
  for (std::size_t i = 0; i < c.validation_losses.size(); ++i) {
    any_diff |= c.validation_losses[i] != a.validation_losses[i];
  }
  CHECK(any_diff);
}

TEST_CASE("ensemble checkpoint round trip") {
  namespace fs = std::filesystem;
  const TrajectoryDataset train = linear_dataset(14, 20, 20, 0.0);
  DynamicsConfig cfg = small_config();
  cfg.n_trained = 2;
  cfg.n_kept = 2;
  cfg.max_epochs = 8;
  cfg.validation_size = 50;
  const DynamicsEnsemble ens = train_ensemble(train, cfg, 7);
  const fs::path path = fs::temp_directory_path() / "bats_dyn_ckpt.json";
  save_ensemble(ens, path.string());
  const DynamicsEnsemble back = load_ensemble(path.string());
  const Prediction p1 = predict(ens, {0.1, 0.2}, {0.3});
  const Prediction p2 = predict(back, {0.1, 0.2}, {0.3});
  CHECK(p1.aggregate == p2.aggregate);
  CHECK(back.predict_reward({0.1, 0.2}, {0.3}) ==
        ens.predict_reward({0.1, 0.2}, {0.3}));
  fs::remove(path);
  CHECK_THROWS_AS(load_ensemble("/nonexistent/ens.json"), MissingArtifactError);
}

TEST_CASE("training errors: too small dataset, bad member counts") {
  const TrajectoryDataset tiny = linear_dataset(15, 1, 10, 0.0);
  DynamicsConfig cfg = small_config();
  CHECK_THROWS_AS(train_ensemble(tiny, cfg, 1), ConfigError);
  cfg.n_kept = 9;
  CHECK_THROWS_AS(train_ensemble(linear_dataset(16, 30, 30, 0.0), cfg, 1),
                  ConfigError);
}
