#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "bats/common.hpp"
#include "bats/mdp.hpp"
#include "bats/metric.hpp"

namespace bats {

struct DataRecord {
  Vec s;
  Vec a;
  double r = 0.0;
  Vec s2;
  bool terminal = false;
};

/// Ordered trajectories of logged transitions. Within a trajectory the next
/// state of record i equals the state of record i+1, bit for bit.
struct TrajectoryDataset {
  std::vector<std::vector<DataRecord>> trajectories;
  int state_dim = 0;
  int action_dim = 0;
  /// Per-dimension standardization over distinct states, used by the
  /// normalized distance metric.
  Normalization normalization;

  std::size_t num_records() const;
  void validate() const;
  void compute_normalization();
};

/// JSON-lines file: a header line {"state_dim":..,"action_dim":..} followed
/// by one record per line, sorted by (traj, t).
TrajectoryDataset load_dataset(const std::string& path);
void save_dataset(const TrajectoryDataset& data, const std::string& path);

/// Distinct dataset states in first-occurrence order. This ordering defines
/// the shared state indexing of build_m0 and build_neighbor_graph.
struct StateIndex {
  std::vector<Vec> states;
  std::unordered_map<std::string, int> index;  // bit_key -> state id

  int lookup(const Vec& s) const {
    auto it = index.find(bit_key(s));
    return it == index.end() ? -1 : it->second;
  }
};

StateIndex collect_states(const TrajectoryDataset& data);

/// Tabular MDP induced by the log: one state per distinct dataset state,
/// logged actions as edges, uniform starts over trajectory-initial states.
/// States with no outgoing edges get the absorbing terminal convention.
TabularMdp build_m0(const TrajectoryDataset& data, double discount);

struct NeighborGraph {
  enum class Mode { radius, knn };
  Mode mode = Mode::radius;
  double radius = 0.0;
  int k = 0;
  std::string metric_name;
  /// Indexed like the StateIndex / build_m0 states. Radius mode is
  /// symmetric; knn mode is directed.
  std::vector<std::vector<int>> adjacency;
};

NeighborGraph build_neighbor_graph(const TrajectoryDataset& data,
                                   NeighborGraph::Mode mode, double param,
                                   const Metric& metric);

struct StartRegion {
  enum class Kind { box, points };
  Kind kind = Kind::box;
  // box: lo <= x <= hi per dimension
  Vec lo;
  Vec hi;
  // points: within `radius` (euclidean) of any listed point
  std::vector<Vec> points;
  double radius = 0.0;

  bool contains(const Vec& x) const;
};

/// Adds every non-imagined mdp state inside the region to start_states,
/// keeping the original ones. Returns the number of states added (0 is a
/// warning condition for callers, not an error).
int relabel_start_states(TabularMdp& mdp, const TrajectoryDataset& data,
                         const StartRegion& region);

}  // namespace bats
