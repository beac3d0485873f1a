#pragma once

#include <functional>
#include <string>
#include <vector>

#include "bats/dataset.hpp"
#include "bats/mdp.hpp"

namespace bats {

/// Where the single neighbor-graph edge may sit in a feasibility path.
enum class NeighborHop { last, anywhere };

enum class PenaltyMode {
  all_edges,    // penalty c*d on every edge of the stitch
  final_gamma,  // penalty gamma*d on the final edge only
};

struct StitchCandidate {
  int source = -1;
  int target = -1;
  /// Number of MDP edges on the witness path; the planning budget.
  int k = 0;
};

struct StitchRecord {
  StitchCandidate candidate;
  std::vector<Vec> actions;
  /// Aggregate model states after each action; the first k-1 become new
  /// imagined MDP states.
  std::vector<Vec> predicted_states;
  double achieved_distance = 0.0;
  bool accepted = false;
  int iteration_added = 0;
};

/// All (from_state -> target) pairs connected by at most K directed MDP
/// edges plus exactly one neighbor-graph edge, with targets restricted to
/// original (non-imagined) states. k is the minimum number of MDP edges over
/// witness paths, and 1 <= k <= K.
std::vector<StitchCandidate> find_feasible(const TabularMdp& mdp,
                                           const NeighborGraph& neighbors,
                                           int from_state, int K,
                                           NeighborHop hop = NeighborHop::last);

/// Keeps candidates whose target beats the state the policy reaches in k
/// steps from the source: V(target) > V(s_k), strictly.
std::vector<StitchCandidate> filter_impactful(
    const std::vector<StitchCandidate>& candidates, const ValueTable& values,
    const TabularPolicy& policy, const TabularMdp& mdp);

using RewardFn = std::function<double(const Vec& state, const Vec& action)>;

/// Inserts the stitch into the MDP: k-1 imagined intermediate states and k
/// stitched edges, rewards from the reward model, penalties from the
/// achieved distance. Idempotent for identical records. Adding an escape
/// action to a terminal state clears its terminal flag.
void apply_stitch(TabularMdp& mdp, const StitchRecord& record,
                  const RewardFn& reward_fn, double penalty_coefficient,
                  PenaltyMode mode = PenaltyMode::all_edges);

struct StitchLogEntry {
  int iteration = 0;
  int source = -1;
  int target = -1;
  int k = 0;
  bool accepted = false;
  double distance = 0.0;
};

void append_stitch_log(const std::string& path,
                       const std::vector<StitchLogEntry>& entries);
std::vector<StitchLogEntry> load_stitch_log(const std::string& path);

}  // namespace bats
