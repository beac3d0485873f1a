#include "bats/stitching.hpp"

#include <algorithm>
#include <deque>
#include <fstream>
#include <limits>
#include <map>

#include <json.hpp>

namespace bats {

using nlohmann::json;

namespace {

constexpr int kUnreached = std::numeric_limits<int>::max();

/// Min number of MDP edges from `source` to every state, walks allowed.
std::vector<int> mdp_bfs(const TabularMdp& mdp, int source, int max_depth) {
  std::vector<int> dist(mdp.num_states(), kUnreached);
  dist[source] = 0;
  std::deque<int> queue{source};
  while (!queue.empty()) {
    const int u = queue.front();
    queue.pop_front();
    if (dist[u] >= max_depth) continue;
    for (const Edge& e : mdp.actions[u]) {
      if (dist[e.next_state] == kUnreached) {
        dist[e.next_state] = dist[u] + 1;
        queue.push_back(e.next_state);
      }
    }
  }
  return dist;
}

/// Min length >= 1 of a walk from source back to itself, or kUnreached.
int min_cycle_length(const TabularMdp& mdp, int source, int max_depth,
                     const std::vector<int>& d0) {
  int best = kUnreached;
  for (int v = 0; v < mdp.num_states(); ++v) {
    if (d0[v] == kUnreached || d0[v] >= max_depth) continue;
    for (const Edge& e : mdp.actions[v]) {
      if (e.next_state == source) best = std::min(best, d0[v] + 1);
    }
  }
  return best;
}

const std::vector<int>* neighbor_list(const NeighborGraph& g, int state) {
  if (state < 0 || state >= static_cast<int>(g.adjacency.size())) return nullptr;
  return &g.adjacency[state];
}

}  // namespace

std::vector<StitchCandidate> find_feasible(const TabularMdp& mdp,
                                           const NeighborGraph& neighbors,
                                           int from_state, int K,
                                           NeighborHop hop) {
  if (from_state < 0 || from_state >= mdp.num_states()) {
    throw ConfigError("find_feasible: invalid from_state");
  }
  if (K < 1) throw ConfigError("find_feasible: K must be >= 1");

  std::map<int, int> best_k;  // target -> min k, ordered for determinism
  auto offer = [&](int target, int k) {
    if (k < 1 || k > K) return;
    if (target >= static_cast<int>(mdp.imagined.size()) || mdp.imagined[target]) return;
    auto [it, inserted] = best_k.emplace(target, k);
    if (!inserted && k < it->second) it->second = k;
  };

  const std::vector<int> d0 = mdp_bfs(mdp, from_state, K);
  const int cyc = min_cycle_length(mdp, from_state, K, d0);

  if (hop == NeighborHop::last) {
    for (int u = 0; u < mdp.num_states(); ++u) {
      if (d0[u] == kUnreached) continue;
      const auto* adj = neighbor_list(neighbors, u);
      if (!adj) continue;
      const int k = u == from_state ? cyc : d0[u];
      if (k == kUnreached) continue;
      for (int n : *adj) offer(n, k);
    }
    std::vector<StitchCandidate> out;
    out.reserve(best_k.size());
    for (const auto& [target, k] : best_k) {
      out.push_back(StitchCandidate{from_state, target, k});
    }
    return out;
  }

  // Neighbor hop anywhere: 0-1 BFS over (state, hop-used) layers where MDP
  // edges cost 1 and the single neighbor hop costs 0.
  const int n_states = mdp.num_states();
  std::vector<int> dist0 = d0;
  std::vector<int> dist1(n_states, kUnreached);
  std::deque<int> queue;
  for (int u = 0; u < n_states; ++u) {
    if (dist0[u] == kUnreached) continue;
    const auto* adj = neighbor_list(neighbors, u);
    if (!adj) continue;
    for (int n : *adj) {
      if (dist0[u] < dist1[n]) {
        dist1[n] = dist0[u];
        queue.push_back(n);
      }
    }
  }
  while (!queue.empty()) {
    const int u = queue.front();
    queue.pop_front();
    if (dist1[u] >= K) continue;
    for (const Edge& e : mdp.actions[u]) {
      if (dist1[u] + 1 < dist1[e.next_state]) {
        dist1[e.next_state] = dist1[u] + 1;
        queue.push_back(e.next_state);
      }
    }
  }
  for (int t = 0; t < n_states; ++t) {
    if (dist1[t] != kUnreached) offer(t, dist1[t]);
  }
  // A walk may also loop back to the source before its neighbor hop; that is
  // the only case where a non-minimal prefix changes the answer.
  if (cyc != kUnreached) {
    const auto* adj = neighbor_list(neighbors, from_state);
    if (adj) {
      for (int n : *adj) offer(n, cyc);
    }
  }

  std::vector<StitchCandidate> out;
  out.reserve(best_k.size());
  for (const auto& [target, k] : best_k) {
    out.push_back(StitchCandidate{from_state, target, k});
  }
  return out;
}

std::vector<StitchCandidate> filter_impactful(
    const std::vector<StitchCandidate>& candidates, const ValueTable& values,
    const TabularPolicy& policy, const TabularMdp& mdp) {
  std::vector<StitchCandidate> kept;
  for (const StitchCandidate& c : candidates) {
    int s = c.source;
    for (int step = 0; step < c.k; ++step) {
      s = mdp.actions[s][policy.action_choice[s]].next_state;
    }
    if (values.values[c.target] > values.values[s]) kept.push_back(c);
  }
  return kept;
}

void apply_stitch(TabularMdp& mdp, const StitchRecord& record,
                  const RewardFn& reward_fn, double penalty_coefficient,
                  PenaltyMode mode) {
  if (!record.accepted) {
    throw ConfigError("apply_stitch: record was not accepted by planning");
  }
  const int k = record.candidate.k;
  if (static_cast<int>(record.actions.size()) != k ||
      static_cast<int>(record.predicted_states.size()) != k) {
    throw ConfigError("apply_stitch: record has wrong action or state count");
  }
  const int source = record.candidate.source;
  const int target = record.candidate.target;
  if (source < 0 || source >= mdp.num_states() || target < 0 ||
      target >= mdp.num_states()) {
    throw ConfigError("apply_stitch: invalid source or target index");
  }
  if (mdp.imagined[target]) {
    throw ConfigError("apply_stitch: stitch targets an imagined state");
  }

  // A second edge with the same (state, action) would break determinism;
  // identical records become no-ops here.
  const std::string a0 = bit_key(record.actions[0]);
  for (const Edge& e : mdp.actions[source]) {
    if (bit_key(e.action) == a0) return;
  }

  const double d = record.achieved_distance;
  auto penalty_at = [&](int i) {
    if (mode == PenaltyMode::all_edges) return penalty_coefficient * d;
    return i == k - 1 ? mdp.discount * d : 0.0;
  };

  int cur = source;
  Vec cur_vec = mdp.states[source];
  for (int i = 0; i < k; ++i) {
    const int next = i == k - 1
                         ? target
                         : mdp.add_state(record.predicted_states[i], false, true);
    Edge e;
    e.action = record.actions[i];
    e.next_state = next;
    e.reward = reward_fn(cur_vec, record.actions[i]);
    e.is_stitch = true;
    e.penalty = penalty_at(i);
    e.stitch_distance = d;
    if (mdp.terminal[cur]) mdp.terminal[cur] = 0;  // no longer absorbing
    mdp.actions[cur].push_back(std::move(e));
    cur = next;
    cur_vec = record.predicted_states[i];
  }
}

void append_stitch_log(const std::string& path,
                       const std::vector<StitchLogEntry>& entries) {
  std::ofstream out(path, std::ios::app);
  if (!out) throw MissingArtifactError("stitch log: cannot open " + path);
  for (const StitchLogEntry& e : entries) {
    out << json{{"iter", e.iteration},   {"source", e.source},
                {"target", e.target},    {"k", e.k},
                {"accepted", e.accepted}, {"distance", e.distance}}
               .dump()
        << "\n";
  }
}

std::vector<StitchLogEntry> load_stitch_log(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifactError("stitch log: cannot open " + path);
  std::vector<StitchLogEntry> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const json j = json::parse(line);
    out.push_back(StitchLogEntry{j.at("iter").get<int>(), j.at("source").get<int>(),
                                 j.at("target").get<int>(), j.at("k").get<int>(),
                                 j.at("accepted").get<bool>(),
                                 j.at("distance").get<double>()});
  }
  return out;
}

}  // namespace bats
