#pragma once

#include <string>
#include <vector>

#include "bats/dataset.hpp"
#include "bats/dynamics.hpp"
#include "bats/mdp.hpp"
#include "bats/planner.hpp"
#include "bats/stitching.hpp"

namespace bats {

struct BatsConfig {
  int n_iterations = 10;
  /// Occupancy samples drawn per iteration.
  int m_samples = 200;
  /// Max candidates sent to the planner per iteration.
  int stitch_budget = 200;
  /// Max MDP edges in a feasibility path (K).
  int max_stitch_len = 1;

  NeighborGraph::Mode neighbor_mode = NeighborGraph::Mode::radius;
  double epsilon = 0.1;  // radius mode
  int knn = 25;          // knn mode
  NeighborHop neighbor_hop = NeighborHop::last;

  double delta = 0.1;  // planning acceptance tolerance
  double penalty_coefficient = 1.0;
  PenaltyMode penalty_mode = PenaltyMode::all_edges;
  double discount = 0.99;
  double boltzmann_temperature = 0.25;
  double vi_tolerance = 1e-8;
  int plan_attempts = 1;
  int occupancy_horizon = 1000;
  CemConfig cem;
  uint64_t rng_seed = 0;

  void validate() const;
};

struct IterationMetrics {
  int iteration = 0;
  int candidates = 0;
  int attempted = 0;
  int accepted = 0;
  /// Mean pessimistic start-state value of M_i before this iteration's
  /// stitches.
  double mean_start_value = 0.0;
  int num_states = 0;
  std::size_t num_edges = 0;
};

struct BatsRunState {
  TabularMdp mdp;
  int iteration = 0;
  bool finished = false;
  std::vector<StitchLogEntry> log;
  std::vector<IterationMetrics> metrics;
  uint64_t config_fingerprint = 0;
};

struct BatsResult {
  TabularMdp mdp;
  BatsRunState state;
  ValueTable final_values;
  double final_mean_start_value = 0.0;
};

/// Runs the stitching loop: value iteration, Boltzmann occupancy sampling,
/// feasible/impactful candidate search, CEM edge tests, and a serialized
/// stitch commit, until n_iterations or no impactful candidate remains.
/// Deterministic given the config seed. When `resume_from` is set the loop
/// continues an earlier checkpoint and reproduces the uninterrupted run bit
/// for bit.
BatsResult run_bats(const TrajectoryDataset& data,
                    const DynamicsEnsemble& ensemble, const BatsConfig& config,
                    const Metric& metric,
                    const BatsRunState* resume_from = nullptr,
                    const std::string& checkpoint_path = "");

/// Recomputes stitched-edge penalties as c' times the stored planner
/// distance, without replanning.
TabularMdp relabel_penalties(TabularMdp mdp, double new_coefficient);

uint64_t config_fingerprint(const BatsConfig& config);

std::string run_state_to_json(const BatsRunState& state);
BatsRunState run_state_from_json(const std::string& text);
void save_run_state(const BatsRunState& state, const std::string& path);
BatsRunState load_run_state(const std::string& path);

std::string metrics_to_csv(const std::vector<IterationMetrics>& metrics);

}  // namespace bats
