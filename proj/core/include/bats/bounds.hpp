#pragma once

#include <string>
#include <utility>
#include <vector>

#include "bats/mdp.hpp"

namespace bats {

/// Single-action stitch (b, c, a) with its penalty term. The action must not
/// already be available at b in the dataset MDP.
struct StitchTuple {
  int source = -1;  // b
  int target = -1;  // c
  Vec action;       // a
  double epsilon = 0.0;
};

using StitchTupleSet = std::vector<StitchTuple>;

/// Pessimistic and optimistic MDPs: shared structure, stitched-edge rewards
/// shifted by -gamma*eps and +gamma*eps respectively. true_rewards[j] is
/// r(b_j, a_j) in the ground-truth MDP. Stitched edges are appended after
/// the dataset actions in tuple order, identically in both MDPs.
std::pair<TabularMdp, TabularMdp> build_m_minus_plus(
    const TabularMdp& m0, const StitchTupleSet& tuples,
    const std::vector<double>& true_rewards);

struct BisimTable {
  std::vector<std::vector<double>> d;
  double residual = 0.0;
  int iterations = 0;
};

/// On-policy bisimulation distance for a deterministic policy on a finite
/// deterministic MDP: the fixed point of
///   d(s,t) = |r(s,pi(s)) - r(t,pi(t))| + gamma * d(T(s,pi(s)), T(t,pi(t))),
/// iterated until the sup-norm residual falls below `tolerance`.
BisimTable exact_bisim_distance(const TabularMdp& mdp,
                                const TabularPolicy& policy,
                                double tolerance = 1e-9,
                                int max_iters = 100000);

/// Re-index a policy on `from` as a policy on `to` by matching action
/// vectors bit for bit at each shared state index.
TabularPolicy map_policy_by_action(const TabularPolicy& policy,
                                   const TabularMdp& from, const TabularMdp& to);

struct SandwichReport {
  std::vector<double> eps_min;       // bisim oracle distance per tuple
  bool assumptions_satisfied = false;
  bool bound_holds = false;
  double max_lower_violation = 0.0;  // max over states of V_minus - V_true
  double max_upper_violation = 0.0;  // max over states of V_true - V_plus
  std::vector<double> v_minus;
  std::vector<double> v_true;
  std::vector<double> v_plus;
  /// Max abs gap between the hitting-time expansion rollouts and the
  /// policy-evaluation values of M-/M+.
  double expansion_lower_error = 0.0;
  double expansion_upper_error = 0.0;
  int n_states_checked = 0;
};

/// Certifies the sandwich V_M-(s) <= V_Mtrue(s) <= V_M+(s) for pi_minus on
/// every original state, using the exact bisimulation metric as the epsilon
/// oracle, and checks the hitting-time expansion identity by explicit
/// rollout. m_true must share state indices with m0 and contain every
/// stitched action.
SandwichReport certify_sandwich(const TabularMdp& m_true, const TabularMdp& m0,
                                const StitchTupleSet& tuples,
                                const TabularPolicy& pi_minus,
                                double tolerance = 1e-9);

struct ImprovementReport {
  int premises_fired = 0;
  int violations = 0;
  /// Smallest conclusion margin V_true^{pi'} - V_true^{pi} over fired
  /// premises; meaningless when none fired.
  double min_margin = 0.0;
};

/// Checks the policy-improvement corollary: wherever the optimistic value of
/// pi under `tuples` is below the pessimistic value of pi' under `tuples2`,
/// pi' must truly be better at that state.
ImprovementReport certify_improvement(const TabularMdp& m_true,
                                      const TabularMdp& m0,
                                      const StitchTupleSet& tuples,
                                      const StitchTupleSet& tuples2,
                                      double tolerance = 1e-9);

struct BoundInstance {
  TabularMdp m_true;
  TabularMdp m0;
  StitchTupleSet tuples;
};

/// Seeded random deterministic instance: a ground-truth MDP, a sub-MDP with
/// some actions withheld, and single-action stitches drawn from the withheld
/// pairs with random targets. Epsilons are left at zero.
BoundInstance random_bound_instance(uint64_t seed, int max_states = 30,
                                    int max_actions = 3, int max_stitches = 5);

/// Iterates building M- with the current epsilons, extracting its optimal
/// policy, and raising each epsilon to the bisim-oracle minimum for that
/// policy, until the penalty assumption holds. Returns the calibrated tuples
/// and the resulting optimal policy of the final M-.
std::pair<StitchTupleSet, TabularPolicy> calibrate_epsilons(
    const TabularMdp& m_true, const TabularMdp& m0, StitchTupleSet tuples,
    int max_rounds = 50);

}  // namespace bats
