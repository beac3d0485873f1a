#pragma once

#include <optional>
#include <string>
#include <vector>

#include "bats/dataset.hpp"
#include "bats/envs.hpp"
#include "bats/mdp.hpp"
#include "bats/nn.hpp"

namespace bats {

struct CloneConfig {
  std::vector<int> hidden{256, 256};
  int batch_size = 256;
  int batch_updates = 2000;
  double lr = 0.01;
  double momentum = 0.9;
  double logstd_min = -5.0;
  double logstd_max = 2.0;
};

/// Gaussian policy: the network outputs per-dimension mean and log-std.
/// Deterministic deployment uses the mean, clamped to the action bounds.
struct ClonedPolicy {
  nn::Mlp net;  // normalized state -> (mean, log std)
  nn::Normalizer state_norm;
  Vec action_lo;
  Vec action_hi;
  int state_dim = 0;
  int action_dim = 0;
  std::vector<double> loss_history;

  Vec mean_action(const Vec& state) const;
};

struct HarvestResult {
  TrajectoryDataset data;
  /// Undiscounted return of the greedy rollout from each start state, in
  /// start_states order, before threshold filtering.
  std::vector<double> start_returns;
  std::vector<uint8_t> kept;
};

/// Greedy rollouts of `policy` from every start state of the stitched MDP;
/// trajectories below the return threshold are dropped. Rewards are the raw
/// edge rewards (penalties are solver pessimism, not environment reward).
HarvestResult harvest_trajectories(const TabularMdp& mdp,
                                   const TabularPolicy& policy,
                                   double return_threshold, int horizon);

ClonedPolicy behavior_clone(const TrajectoryDataset& harvest,
                            const CloneConfig& config, const Vec& action_lo,
                            const Vec& action_hi, uint64_t seed);

struct EvalStats {
  std::optional<double> mean;
  std::optional<double> stddev;
  std::vector<double> episode_returns;
  /// Fraction of the final 50 steps spent in the goal cell, averaged over
  /// episodes; only populated for environments with a goal region.
  std::optional<double> goal_occupancy;
};

/// Deterministic mean-action rollouts; the seed controls start-state draws.
EvalStats evaluate_policy(const ClonedPolicy& policy, const Env& env,
                          int n_episodes, uint64_t seed, int max_steps = 0);

/// Env return of the policy when started from a specific state.
double rollout_return(const ClonedPolicy& policy, const Env& env,
                      const Vec& start, int max_steps);

void save_policy(const ClonedPolicy& policy, const std::string& path);
ClonedPolicy load_policy(const std::string& path);

}  // namespace bats
