#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <random>

#include "bats/stitching.hpp"
#include "oracles.hpp"

using namespace bats;

namespace {

NeighborGraph random_symmetric_graph(int n, double edge_prob, uint64_t seed) {
  NeighborGraph g;
  g.mode = NeighborGraph::Mode::radius;
  g.radius = 1.0;
  g.adjacency.resize(n);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      if (unit(rng) < edge_prob) {
        g.adjacency[i].push_back(j);
        g.adjacency[j].push_back(i);
      }
    }
  }
  return g;
}

bool same_candidates(std::vector<StitchCandidate> a,
                     std::vector<StitchCandidate> b) {
  auto key = [](const StitchCandidate& c) {
    return std::tuple<int, int, int>(c.source, c.target, c.k);
  };
  auto cmp = [&](const StitchCandidate& x, const StitchCandidate& y) {
    return key(x) < key(y);
  };
  std::sort(a.begin(), a.end(), cmp);
  std::sort(b.begin(), b.end(), cmp);
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (key(a[i]) != key(b[i])) return false;
  }
  return true;
}

StitchRecord make_record(int source, int target, int k, double distance,
                         int action_dim = 1) {
  StitchRecord rec;
  rec.candidate = {source, target, k};
  rec.accepted = true;
  rec.achieved_distance = distance;
  for (int i = 0; i < k; ++i) {
    rec.actions.push_back(Vec(action_dim, 0.5 + i));
    rec.predicted_states.push_back(Vec{100.0 + i});
  }
  return rec;
}

}  // namespace

TEST_CASE("find_feasible: isolated absorbing state has no candidates") {
  TabularMdp mdp;
  mdp.discount = 0.9;
  mdp.add_state({0.0}, /*is_terminal=*/true);
  NeighborGraph g;
  g.adjacency.resize(1);
  CHECK(find_feasible(mdp, g, 0, 3).empty());
}

TEST_CASE("find_feasible: one mdp edge plus one neighbor edge") {
  TabularMdp mdp;
  mdp.discount = 0.9;
  mdp.add_state({0.0});  // a
  mdp.add_state({1.0}, true);  // b
  mdp.add_state({2.0}, true);  // c
  mdp.actions[0].push_back(Edge{{0.0}, 1, 0.0});
  NeighborGraph g;
  g.adjacency.resize(3);
  g.adjacency[1] = {2};
  g.adjacency[2] = {1};
  const auto cands = find_feasible(mdp, g, 0, 1);
  REQUIRE(cands.size() == 1);
  CHECK(cands[0].source == 0);
  CHECK(cands[0].target == 2);
  CHECK(cands[0].k == 1);
}

TEST_CASE("find_feasible matches exhaustive path enumeration") {
  for (uint64_t seed : {1u, 2u, 3u, 4u}) {
    const TabularMdp mdp = oracles::random_test_mdp(seed, 50, 20, 3, 0.9);
    const NeighborGraph g = random_symmetric_graph(50, 0.06, seed * 31 + 1);
    for (const NeighborHop hop : {NeighborHop::last, NeighborHop::anywhere}) {
      for (int source : {0, 7, 23, 49}) {
        const auto got = find_feasible(mdp, g, source, 3, hop);
        const auto want = oracles::exhaustive_feasible(mdp, g, source, 3, hop);
        CHECK(same_candidates(got, want));
      }
    }
  }
}

TEST_CASE("find_feasible: imagined states are never targets") {
  TabularMdp mdp;
  mdp.discount = 0.9;
  mdp.add_state({0.0});
  mdp.add_state({1.0}, true);
  mdp.add_state({2.0}, true, /*is_imagined=*/true);
  mdp.actions[0].push_back(Edge{{0.0}, 1, 0.0});
  NeighborGraph g;
  g.adjacency.resize(2);  // imagined states have no neighbor entries
  g.adjacency[1] = {0};
  g.adjacency[0] = {1};
  for (const auto& c : find_feasible(mdp, g, 0, 2, NeighborHop::anywhere)) {
    CHECK(!mdp.imagined[c.target]);
  }
}

TEST_CASE("filter_impactful: strict inequality and terminal sources") {
  TabularMdp mdp;
  mdp.discount = 0.5;
  mdp.add_state({0.0}, true);   // terminal source, V = 0
  mdp.add_state({1.0});         // feeds reward, V > 0
  mdp.add_state({2.0}, true);   // V = 0
  mdp.actions[1].push_back(Edge{{0.0}, 2, 1.0});
  mdp.start_states = {0};
  const ValueTable vt = value_iteration(mdp, 1e-10);
  const TabularPolicy pi = greedy_policy(vt, mdp);

  // Terminal source: candidate to a higher-valued state is kept.
  const std::vector<StitchCandidate> in{{0, 1, 1}, {0, 2, 1}};
  const auto kept = filter_impactful(in, vt, pi, mdp);
  REQUIRE(kept.size() == 1);
  CHECK(kept[0].target == 1);  // V(2) == V(terminal rollout) == 0 is rejected
}

TEST_CASE("filter_impactful matches per-candidate rollout recomputation") {
  const TabularMdp mdp = oracles::random_test_mdp(8, 30, 10, 3, 0.9);
  const NeighborGraph g = random_symmetric_graph(30, 0.1, 5);
  const ValueTable vt = value_iteration(mdp, 1e-10);
  const TabularPolicy pi = greedy_policy(vt, mdp);
  std::vector<StitchCandidate> all;
  for (int s = 0; s < mdp.num_states(); ++s) {
    const auto c = find_feasible(mdp, g, s, 3);
    all.insert(all.end(), c.begin(), c.end());
  }
  REQUIRE(!all.empty());
  const auto kept = filter_impactful(all, vt, pi, mdp);
  std::vector<StitchCandidate> expect;
  for (const auto& c : all) {
    int s = c.source;
    for (int i = 0; i < c.k; ++i) s = mdp.actions[s][pi.action_choice[s]].next_state;
    if (vt.values[c.target] > vt.values[s]) expect.push_back(c);
  }
  CHECK(same_candidates(kept, expect));
}

TEST_CASE("apply_stitch: penalty arithmetic for a one-step stitch") {
  TabularMdp mdp;
  mdp.discount = 0.9;
  mdp.add_state({0.0}, true);
  mdp.add_state({1.0}, true);
  mdp.start_states = {0};

  StitchRecord rec;
  rec.candidate = {0, 1, 1};
  rec.accepted = true;
  rec.achieved_distance = 0.1;
  rec.actions = {Vec{0.7}};
  rec.predicted_states = {Vec{1.05}};

  apply_stitch(mdp, rec, [](const Vec&, const Vec&) { return 0.5; }, 20.0);
  REQUIRE(mdp.actions[0].size() == 2);  // old self-loop + stitch
  const Edge& e = mdp.actions[0][1];
  CHECK(e.reward == 0.5);
  CHECK(e.penalty == doctest::Approx(2.0));
  CHECK(effective_reward(e) == doctest::Approx(-1.5));
  CHECK(e.is_stitch);
  CHECK(e.stitch_distance == 0.1);
  CHECK(mdp.terminal[0] == 0);  // absorbing source gained an escape
  mdp.validate();

  // Idempotent: applying the identical record again is a no-op.
  apply_stitch(mdp, rec, [](const Vec&, const Vec&) { return 0.5; }, 20.0);
  CHECK(mdp.actions[0].size() == 2);
}

TEST_CASE("apply_stitch: zero distance means zero penalty") {
  TabularMdp mdp;
  mdp.discount = 0.9;
  mdp.add_state({0.0}, true);
  mdp.add_state({1.0}, true);
  StitchRecord rec = make_record(0, 1, 1, 0.0);
  apply_stitch(mdp, rec, [](const Vec&, const Vec& a) { return a[0]; }, 20.0);
  const Edge& e = mdp.actions[0].back();
  CHECK(e.penalty == 0.0);
  CHECK(effective_reward(e) == e.reward);
}

TEST_CASE("apply_stitch: k=3 adds two states and three edges") {
  TabularMdp mdp;
  mdp.discount = 0.9;
  mdp.add_state({0.0}, true);
  mdp.add_state({1.0}, true);
  const int states_before = mdp.num_states();
  const std::size_t edges_before = mdp.num_edges();

  StitchRecord rec = make_record(0, 1, 3, 0.05);
  rec.predicted_states = {Vec{10.0}, Vec{11.0}, Vec{1.01}};
  apply_stitch(mdp, rec, [](const Vec&, const Vec&) { return 0.1; }, 2.0);

  CHECK(mdp.num_states() == states_before + 2);
  CHECK(mdp.num_edges() == edges_before + 3);
  CHECK(mdp.imagined[2] == 1);
  CHECK(mdp.imagined[3] == 1);
  // Chain lands on the original target.
  CHECK(mdp.actions[0].back().next_state == 2);
  CHECK(mdp.actions[2][0].next_state == 3);
  CHECK(mdp.actions[3][0].next_state == 1);
  for (const Edge& e : {mdp.actions[0].back(), mdp.actions[2][0], mdp.actions[3][0]}) {
    CHECK(e.is_stitch);
    CHECK(e.penalty == doctest::Approx(2.0 * 0.05));
  }
  mdp.validate();
}

TEST_CASE("apply_stitch: final_gamma penalty mode") {
  TabularMdp mdp;
  mdp.discount = 0.8;
  mdp.add_state({0.0}, true);
  mdp.add_state({1.0}, true);
  StitchRecord rec = make_record(0, 1, 2, 0.25);
  rec.predicted_states = {Vec{5.0}, Vec{1.0}};
  apply_stitch(mdp, rec, [](const Vec&, const Vec&) { return 0.0; }, 99.0,
               PenaltyMode::final_gamma);
  CHECK(mdp.actions[0].back().penalty == 0.0);
  CHECK(mdp.actions[2][0].penalty == doctest::Approx(0.8 * 0.25));
}

TEST_CASE("apply_stitch contract violations") {
  TabularMdp mdp;
  mdp.discount = 0.9;
  mdp.add_state({0.0}, true);
  mdp.add_state({1.0}, true);
  StitchRecord rec = make_record(0, 1, 1, 0.3);
  rec.accepted = false;
  CHECK_THROWS_AS(apply_stitch(mdp, rec, [](const Vec&, const Vec&) { return 0.0; }, 1.0),
                  ConfigError);

  StitchRecord to_imagined = make_record(0, 1, 1, 0.0);
  TabularMdp with_imagined = mdp;
  with_imagined.imagined[1] = 1;
  CHECK_THROWS_AS(apply_stitch(with_imagined, to_imagined,
                               [](const Vec&, const Vec&) { return 0.0; }, 1.0),
                  ConfigError);
}

TEST_CASE("impactful stitch with zero penalty never lowers the source value") {
  for (uint64_t seed : {3u, 5u, 9u}) {
    TabularMdp mdp = oracles::random_test_mdp(seed, 25, 8, 3, 0.9);
    const NeighborGraph g = random_symmetric_graph(25, 0.1, seed + 100);
    const ValueTable vt = value_iteration(mdp, 1e-11);
    const TabularPolicy pi = greedy_policy(vt, mdp);
    std::vector<StitchCandidate> cands;
    for (int s = 0; s < mdp.num_states(); ++s) {
      const auto c = filter_impactful(find_feasible(mdp, g, s, 2), vt, pi, mdp);
      cands.insert(cands.end(), c.begin(), c.end());
    }
    if (cands.empty()) continue;
    const StitchCandidate& c = cands.front();
    StitchRecord rec = make_record(c.source, c.target, c.k, 0.0);
    rec.predicted_states.back() = mdp.states[c.target];
    rec.actions.assign(c.k, Vec{77.0});
    for (int i = 0; i + 1 < c.k; ++i) rec.predicted_states[i] = Vec{200.0 + i};
    apply_stitch(mdp, rec, [](const Vec&, const Vec&) { return 0.2; }, 0.0);
    const ValueTable after = value_iteration(mdp, 1e-11);
    CHECK(after.values[c.source] >= vt.values[c.source] - 1e-8);
  }
}

TEST_CASE("stitch log appends and reloads") {
  namespace fs = std::filesystem;
  const fs::path path = fs::temp_directory_path() / "bats_stitch_log.jsonl";
  fs::remove(path);
  append_stitch_log(path.string(), {{0, 1, 2, 1, true, 0.05}});
  append_stitch_log(path.string(), {{1, 3, 4, 2, false, 0.9}});
  const auto log = load_stitch_log(path.string());
  REQUIRE(log.size() == 2);
  CHECK(log[0].accepted);
  CHECK(log[1].iteration == 1);
  CHECK(log[1].distance == 0.9);
  fs::remove(path);
}
