#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "bats/common.hpp"

namespace bats {

/// One available action at a state of a finite deterministic MDP.
struct Edge {
  Vec action;
  int next_state = -1;
  double reward = 0.0;
  bool is_stitch = false;
  /// Subtracted from reward during value iteration (pessimistic semantics).
  /// Zero on non-stitch edges.
  double penalty = 0.0;
  /// Planner distance behind the penalty, kept so penalties can be
  /// recomputed with a different coefficient without replanning.
  double stitch_distance = 0.0;
};

/// Finite deterministic MDP with per-state action lists.
///
/// Terminal states are absorbing: a single zero-reward self-loop. States
/// added by stitching are flagged `imagined` and are never valid stitch
/// targets.
struct TabularMdp {
  std::vector<Vec> states;
  std::vector<std::vector<Edge>> actions;
  double discount = 0.99;
  std::vector<int> start_states;
  std::vector<uint8_t> terminal;
  std::vector<uint8_t> imagined;

  int num_states() const { return static_cast<int>(states.size()); }
  std::size_t num_edges() const;
  int add_state(Vec s, bool is_terminal = false, bool is_imagined = false);

  /// Throws ConfigError when a structural invariant is violated.
  void validate() const;
};

inline double effective_reward(const Edge& e) { return e.reward - e.penalty; }

struct ValueTable {
  std::vector<double> values;
  std::vector<std::vector<double>> q_values;
  int iterations_run = 0;
  double residual = 0.0;
  bool converged = false;
};

struct TabularPolicy {
  enum class Mode { greedy, boltzmann };
  Mode mode = Mode::greedy;
  double temperature = 0.0;
  /// Greedy mode: chosen action index per state.
  std::vector<int> action_choice;
  /// Boltzmann mode: categorical distribution over actions per state.
  std::vector<std::vector<double>> action_probs;

  bool deterministic() const { return mode == Mode::greedy; }
  int sample(int state, std::mt19937_64& rng) const;
};

/// Synchronous (Jacobi) value iteration on effective rewards
/// (reward - penalty). Stops when the sup-norm Bellman residual drops to
/// `tolerance` or after `max_iters` sweeps (reported via `converged`).
ValueTable value_iteration(const TabularMdp& mdp, double tolerance = 1e-8,
                           int max_iters = 1000000,
                           std::vector<double>* residual_history = nullptr);

/// Per-state argmax of Q; ties broken by lowest action index.
TabularPolicy greedy_policy(const ValueTable& values, const TabularMdp& mdp);

/// P(a|s) proportional to exp(Q(s,a)/temperature).
TabularPolicy boltzmann_policy(const ValueTable& values, const TabularMdp& mdp,
                               double temperature);

/// Exact value of a deterministic policy, solved on the functional graph
/// (cycle sums, no iteration error beyond floating point).
std::vector<double> policy_values(const TabularMdp& mdp,
                                  const TabularPolicy& policy);

/// Draws states weighted by the discounted occupancy of `policy`: rollouts
/// start uniformly from start_states and terminate with probability
/// 1 - discount at each step, recording every visited state. A rollout
/// visits at most `horizon` states. Returns exactly n_samples states.
std::vector<int> sample_occupancy(const TabularMdp& mdp,
                                  const TabularPolicy& policy, int n_samples,
                                  int horizon, uint64_t rng_seed);

// Versioned JSON round trip, used for CLI checkpointing.
std::string mdp_to_json(const TabularMdp& mdp);
TabularMdp mdp_from_json(const std::string& text);
void save_mdp(const TabularMdp& mdp, const std::string& path);
TabularMdp load_mdp(const std::string& path);

}  // namespace bats
