#pragma once

// Independent test-side oracles. These deliberately use different algorithms
// than the library (finite rollouts, exhaustive enumeration, quadratic
// scans) so agreement is meaningful.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <vector>

#include "bats/dataset.hpp"
#include "bats/mdp.hpp"
#include "bats/stitching.hpp"

namespace oracles {

using bats::TabularMdp;
using bats::Vec;

/// Random deterministic MDP where exactly `n_multi` states have between 2
/// and `max_actions` actions and the rest have one; keeps exhaustive policy
/// enumeration tractable.
inline TabularMdp random_test_mdp(uint64_t seed, int n_states, int n_multi,
                                  int max_actions, double gamma) {
  std::mt19937_64 rng(bats::splitmix64(seed));
  std::uniform_int_distribution<int> next_dist(0, n_states - 1);
  std::uniform_int_distribution<int> multi_dist(2, max_actions);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  TabularMdp mdp;
  mdp.discount = gamma;
  std::vector<int> ids(n_states);
  for (int s = 0; s < n_states; ++s) ids[s] = s;
  std::shuffle(ids.begin(), ids.end(), rng);
  std::set<int> multi(ids.begin(), ids.begin() + n_multi);

  for (int s = 0; s < n_states; ++s) {
    mdp.add_state({static_cast<double>(s)});
    const int na = multi.count(s) ? multi_dist(rng) : 1;
    for (int a = 0; a < na; ++a) {
      bats::Edge e;
      e.action = {static_cast<double>(a)};
      e.next_state = next_dist(rng);
      e.reward = unit(rng);
      mdp.actions[s].push_back(e);
    }
    mdp.start_states.push_back(s);
  }
  mdp.validate();
  return mdp;
}

/// Discounted return of a fixed action table by plain rollout.
inline double rollout_value(const TabularMdp& mdp, const std::vector<int>& pi,
                            int start, int steps) {
  double acc = 0.0, g = 1.0;
  int s = start;
  for (int t = 0; t < steps; ++t) {
    const bats::Edge& e = mdp.actions[s][pi[s]];
    acc += g * bats::effective_reward(e);
    g *= mdp.discount;
    s = e.next_state;
  }
  return acc;
}

/// Optimal values by enumerating every deterministic stationary policy and
/// evaluating each with a long finite rollout.
inline std::vector<double> enumerate_optimal_values(const TabularMdp& mdp) {
  const int n = mdp.num_states();
  const int steps = 10 * static_cast<int>(
      std::ceil(std::log(1e-9) / std::log(mdp.discount)));
  std::vector<int> pi(n, 0);
  std::vector<double> best(n, -1e300);
  while (true) {
    for (int s = 0; s < n; ++s) {
      best[s] = std::max(best[s], rollout_value(mdp, pi, s, steps));
    }
    int s = 0;
    while (s < n) {
      if (++pi[s] < static_cast<int>(mdp.actions[s].size())) break;
      pi[s++] = 0;
    }
    if (s == n) break;
  }
  return best;
}

/// Iterative policy evaluation (the library solves the functional graph
/// exactly instead).
inline std::vector<double> iterative_policy_values(const TabularMdp& mdp,
                                                   const std::vector<int>& pi,
                                                   double tol = 1e-12) {
  const int n = mdp.num_states();
  std::vector<double> v(n, 0.0), w(n, 0.0);
  for (int iter = 0; iter < 1000000; ++iter) {
    double resid = 0.0;
    for (int s = 0; s < n; ++s) {
      const bats::Edge& e = mdp.actions[s][pi[s]];
      w[s] = bats::effective_reward(e) + mdp.discount * v[e.next_state];
      resid = std::max(resid, std::abs(w[s] - v[s]));
    }
    std::swap(v, w);
    if (resid <= tol) break;
  }
  return v;
}

/// O(n^2) scan for the epsilon-ball graph.
inline std::vector<std::vector<int>> brute_force_radius(
    const std::vector<Vec>& pts, double eps) {
  std::vector<std::vector<int>> adj(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) {
    for (std::size_t j = 0; j < pts.size(); ++j) {
      if (i != j && bats::l2_distance(pts[i], pts[j]) <= eps) {
        adj[i].push_back(static_cast<int>(j));
      }
    }
  }
  return adj;
}

/// Exhaustive walk enumeration for feasible stitches: at most K MDP edges
/// plus exactly one neighbor edge, minimum k per target.
inline std::vector<bats::StitchCandidate> exhaustive_feasible(
    const TabularMdp& mdp, const bats::NeighborGraph& g, int source, int K,
    bats::NeighborHop hop) {
  std::map<int, int> best;
  auto offer = [&](int target, int k) {
    if (k < 1 || k > K) return;
    if (mdp.imagined[target]) return;
    auto [it, ok] = best.emplace(target, k);
    if (!ok && k < it->second) it->second = k;
  };
  auto adj_of = [&](int u) -> const std::vector<int>* {
    if (u < 0 || u >= static_cast<int>(g.adjacency.size())) return nullptr;
    return &g.adjacency[u];
  };

  // dfs over walks; hop==false means the neighbor edge is still unused.
  std::function<void(int, int, bool)> dfs = [&](int u, int used, bool hopped) {
    if (hopped) offer(u, used);
    if (!hopped) {
      if (const auto* adj = adj_of(u)) {
        for (int nb : *adj) {
          if (hop == bats::NeighborHop::last) {
            offer(nb, used);
          } else {
            dfs(nb, used, true);
          }
        }
      }
    }
    if (used < K) {
      for (const bats::Edge& e : mdp.actions[u]) dfs(e.next_state, used + 1, hopped);
    }
  };
  dfs(source, 0, false);

  std::vector<bats::StitchCandidate> out;
  for (const auto& [target, k] : best) {
    out.push_back(bats::StitchCandidate{source, target, k});
  }
  return out;
}

/// Spearman rank correlation with average ranks for ties.
inline double spearman(const std::vector<double>& a,
                       const std::vector<double>& b) {
  auto ranks = [](const std::vector<double>& x) {
    const std::size_t n = x.size();
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](std::size_t i, std::size_t j) { return x[i] < x[j]; });
    std::vector<double> r(n);
    std::size_t i = 0;
    while (i < n) {
      std::size_t j = i;
      while (j + 1 < n && x[order[j + 1]] == x[order[i]]) ++j;
      const double avg = 0.5 * (i + j) + 1.0;
      for (std::size_t m = i; m <= j; ++m) r[order[m]] = avg;
      i = j + 1;
    }
    return r;
  };
  const std::vector<double> ra = ranks(a), rb = ranks(b);
  const std::size_t n = a.size();
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < n; ++i) {
    ma += ra[i];
    mb += rb[i];
  }
  ma /= n;
  mb /= n;
  double cov = 0, va = 0, vb = 0;
  for (std::size_t i = 0; i < n; ++i) {
    cov += (ra[i] - ma) * (rb[i] - mb);
    va += (ra[i] - ma) * (ra[i] - ma);
    vb += (rb[i] - mb) * (rb[i] - mb);
  }
  return cov / std::sqrt(va * vb);
}

}  // namespace oracles
