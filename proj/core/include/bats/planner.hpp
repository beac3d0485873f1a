#pragma once

#include <vector>

#include "bats/dynamics.hpp"
#include "bats/metric.hpp"

namespace bats {

struct CemConfig {
  int population = 200;
  double elite_fraction = 0.1;
  int iterations = 5;
  int restarts = 1;
  /// Per action dimension; empty means (hi - lo) / 4.
  Vec init_std;
  /// Per action dimension [lo, hi].
  Vec action_lo{-1.0};
  Vec action_hi{1.0};
  /// Quantile of member terminal distances used as the planning objective.
  double score_quantile = 0.8;

  void validate() const;
};

struct PlanResult {
  std::vector<Vec> actions;
  double achieved_distance = 0.0;
  bool accepted = false;
  /// Aggregate (mean over members) model states after each action.
  std::vector<Vec> predicted_states;
};

/// Cross-entropy search for a k-action sequence driving the ensemble from
/// source to within delta of target under the given metric. Failure is
/// accepted=false, never an exception.
PlanResult plan_stitch(const DynamicsEnsemble& ensemble, const Vec& source,
                       const Vec& target, int k, double delta,
                       const Metric& metric, const CemConfig& config,
                       uint64_t rng_seed,
                       std::vector<double>* best_history = nullptr);

/// Runs plan_stitch `attempts` times with derived seeds and keeps the
/// minimum-distance result.
PlanResult multi_start_test_edge(const DynamicsEnsemble& ensemble,
                                 const Vec& source, const Vec& target, int k,
                                 double delta, const Metric& metric,
                                 const CemConfig& config, int attempts,
                                 uint64_t rng_seed);

}  // namespace bats
