#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bats/dataset.hpp"
#include "bats/metric.hpp"
#include "bats/nn.hpp"

namespace bats {

struct DynamicsConfig {
  int n_trained = 7;
  int n_kept = 5;
  std::vector<int> hidden{200, 200, 200, 200};
  int batch_size = 256;
  double lr = 0.01;
  double momentum = 0.9;
  int max_epochs = 200;
  /// Early stop after this many validation evaluations without improvement.
  int plateau_patience = 10;
  /// Capped at 10% of the data.
  int validation_size = 1000;
  double logvar_min = -6.0;
  double logvar_max = 0.5;
  /// Global gradient-norm clip; the NLL mean gradient scales with the
  /// inverse variance and overwhelms plain SGD otherwise.
  double grad_clip = 5.0;
};

struct DynamicsMember {
  nn::Mlp net;  // (s, a) -> (delta mean, delta log-variance)
  double validation_loss = 0.0;
  int index = 0;
};

/// Probabilistic ensemble over state deltas plus a squared-error reward
/// head. Members are trained on bootstrapped shuffles; the kept members are
/// exactly the n_kept lowest validation losses. Planning uses member means.
struct DynamicsEnsemble {
  std::vector<DynamicsMember> members;  // kept members, ordered by (loss, index)
  nn::Mlp reward_net;                   // (s, a) -> normalized reward
  nn::Normalizer in_norm;               // over [s, a]
  nn::Normalizer delta_norm;            // over s' - s
  double reward_mean = 0.0;
  double reward_std = 1.0;
  double logvar_min = -10.0;
  double logvar_max = 0.5;
  int n_trained = 0;
  int n_kept = 0;
  int state_dim = 0;
  int action_dim = 0;
  std::vector<double> validation_losses;  // all trained members, by index

  double predict_reward(const Vec& s, const Vec& a) const;
};

DynamicsEnsemble train_ensemble(const TrajectoryDataset& data,
                                const DynamicsConfig& config, uint64_t seed);

struct Prediction {
  std::vector<Vec> member_means;
  Vec aggregate;
};

Prediction predict(const DynamicsEnsemble& ensemble, const Vec& state,
                   const Vec& action);

/// Rolls every kept member independently through the action sequence from a
/// batch of start states. actions_per_step[t] has one action row per batch
/// row. Returns each member's terminal states (one matrix per member).
std::vector<Eigen::MatrixXd> rollout_member_batch(
    const DynamicsEnsemble& ensemble, const Eigen::MatrixXd& starts,
    const std::vector<Eigen::MatrixXd>& actions_per_step);

/// Per-member state trajectories for a single start and action sequence:
/// result[m][t] is member m's state after t+1 steps.
std::vector<std::vector<Vec>> rollout_member_trajectories(
    const DynamicsEnsemble& ensemble, const Vec& start,
    const std::vector<Vec>& actions);

/// Nearest-rank quantile of per-member terminal distances to `target` after
/// rolling the action sequence.
double member_quantile_distance(const DynamicsEnsemble& ensemble,
                                const Vec& state,
                                const std::vector<Vec>& actions,
                                const Vec& target, double q,
                                const Metric& metric);

double quantile_nearest_rank(std::vector<double> values, double q);

void save_ensemble(const DynamicsEnsemble& ensemble, const std::string& path);
DynamicsEnsemble load_ensemble(const std::string& path);

}  // namespace bats
