#include "bats/bounds.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace bats {

namespace {

/// Index of the edge at `state` whose action matches `action` bit for bit,
/// or -1.
int find_action(const TabularMdp& mdp, int state, const Vec& action) {
  const std::string key = bit_key(action);
  const auto& edges = mdp.actions[state];
  for (std::size_t i = 0; i < edges.size(); ++i) {
    if (bit_key(edges[i].action) == key) return static_cast<int>(i);
  }
  return -1;
}

void validate_tuples(const TabularMdp& m0, const StitchTupleSet& tuples) {
  std::vector<std::pair<int, std::string>> seen;
  for (const StitchTuple& t : tuples) {
    if (t.source < 0 || t.source >= m0.num_states() || t.target < 0 ||
        t.target >= m0.num_states()) {
      throw ConfigError("stitch tuples: invalid state index");
    }
    if (m0.imagined[t.target]) {
      throw ConfigError("stitch tuples: target is an imagined state");
    }
    if (t.epsilon < 0.0) throw ConfigError("stitch tuples: negative penalty");
    if (find_action(m0, t.source, t.action) >= 0) {
      throw ConfigError("stitch tuples: action already present at source state " +
                        std::to_string(t.source));
    }
    const auto pair = std::make_pair(t.source, bit_key(t.action));
    if (std::find(seen.begin(), seen.end(), pair) != seen.end()) {
      throw ConfigError("stitch tuples: duplicate (source, action) pair");
    }
    seen.push_back(pair);
  }
}

}  // namespace

std::pair<TabularMdp, TabularMdp> build_m_minus_plus(
    const TabularMdp& m0, const StitchTupleSet& tuples,
    const std::vector<double>& true_rewards) {
  if (true_rewards.size() != tuples.size()) {
    throw ConfigError("build_m_minus_plus: one true reward per tuple required");
  }
  validate_tuples(m0, tuples);

  TabularMdp minus = m0;
  TabularMdp plus = m0;
  const double gamma = m0.discount;
  for (std::size_t j = 0; j < tuples.size(); ++j) {
    const StitchTuple& t = tuples[j];
    const double shift = gamma * t.epsilon;

    Edge down;
    down.action = t.action;
    down.next_state = t.target;
    down.reward = true_rewards[j];
    down.is_stitch = true;
    down.penalty = shift;  // effective reward r - gamma*eps
    down.stitch_distance = t.epsilon;

    Edge up = down;
    up.reward = true_rewards[j] + shift;  // effective reward r + gamma*eps
    up.penalty = 0.0;

    if (minus.terminal[t.source]) {
      minus.terminal[t.source] = 0;
      plus.terminal[t.source] = 0;
    }
    minus.actions[t.source].push_back(std::move(down));
    plus.actions[t.source].push_back(std::move(up));
  }
  minus.validate();
  plus.validate();
  return {std::move(minus), std::move(plus)};
}

BisimTable exact_bisim_distance(const TabularMdp& mdp,
                                const TabularPolicy& policy, double tolerance,
                                int max_iters) {
  if (!policy.deterministic()) {
    throw ConfigError("exact_bisim_distance: stochastic policies are unsupported");
  }
  const int n = mdp.num_states();
  std::vector<double> r(n);
  std::vector<int> nxt(n);
  for (int s = 0; s < n; ++s) {
    const Edge& e = mdp.actions[s][policy.action_choice[s]];
    r[s] = effective_reward(e);
    nxt[s] = e.next_state;
  }

  BisimTable out;
  out.d.assign(n, std::vector<double>(n, 0.0));
  std::vector<std::vector<double>> next(n, std::vector<double>(n, 0.0));
  const double gamma = mdp.discount;

  for (int iter = 0; iter < max_iters; ++iter) {
    double resid = 0.0;
    for (int s = 0; s < n; ++s) {
      next[s][s] = 0.0;
      for (int t = s + 1; t < n; ++t) {
        const double v = std::abs(r[s] - r[t]) + gamma * out.d[nxt[s]][nxt[t]];
        resid = std::max(resid, std::abs(v - out.d[s][t]));
        next[s][t] = v;
        next[t][s] = v;
      }
    }
    std::swap(out.d, next);
    ++out.iterations;
    out.residual = resid;
    if (resid <= tolerance) break;
  }
  return out;
}

TabularPolicy map_policy_by_action(const TabularPolicy& policy,
                                   const TabularMdp& from,
                                   const TabularMdp& to) {
  if (!policy.deterministic()) {
    throw ConfigError("map_policy_by_action: deterministic policies only");
  }
  if (from.num_states() != to.num_states()) {
    throw ConfigError("map_policy_by_action: MDPs must share the state set");
  }
  TabularPolicy out;
  out.mode = TabularPolicy::Mode::greedy;
  out.action_choice.resize(to.num_states());
  for (int s = 0; s < from.num_states(); ++s) {
    const Vec& a = from.actions[s][policy.action_choice[s]].action;
    const int idx = find_action(to, s, a);
    if (idx < 0) {
      throw ConfigError("map_policy_by_action: action missing at state " +
                        std::to_string(s));
    }
    out.action_choice[s] = idx;
  }
  return out;
}

namespace {

/// Discounted return of pi in the structure of `mdp`, accumulated term by
/// term: true reward plus sign*gamma^{t+1}*eps at every stitched edge. This
/// realizes the hitting-time expansion of the value function.
double expansion_rollout(const TabularMdp& mdp, const TabularPolicy& pi,
                         int start, double sign, double cutoff) {
  double r_bound = 1e-12;
  for (const auto& edges : mdp.actions) {
    for (const Edge& e : edges) {
      r_bound = std::max(r_bound, std::abs(e.reward) +
                                      mdp.discount * e.stitch_distance);
    }
  }
  const double gamma = mdp.discount;
  const int horizon = static_cast<int>(std::ceil(
      std::log(cutoff * (1.0 - gamma) / r_bound) / std::log(gamma)));

  double acc = 0.0;
  double g = 1.0;
  int s = start;
  for (int t = 0; t < horizon; ++t) {
    const Edge& e = mdp.actions[s][pi.action_choice[s]];
    if (e.is_stitch) {
      acc += g * e.reward + sign * g * gamma * e.stitch_distance;
    } else {
      acc += g * e.reward;
    }
    g *= gamma;
    s = e.next_state;
  }
  return acc;
}

}  // namespace

SandwichReport certify_sandwich(const TabularMdp& m_true, const TabularMdp& m0,
                                const StitchTupleSet& tuples,
                                const TabularPolicy& pi_minus,
                                double tolerance) {
  std::vector<double> true_rewards(tuples.size());
  std::vector<int> true_succ(tuples.size());
  for (std::size_t j = 0; j < tuples.size(); ++j) {
    const int idx = find_action(m_true, tuples[j].source, tuples[j].action);
    if (idx < 0) {
      throw ConfigError("certify_sandwich: stitched action missing from the ground truth");
    }
    true_rewards[j] = m_true.actions[tuples[j].source][idx].reward;
    true_succ[j] = m_true.actions[tuples[j].source][idx].next_state;
  }

  auto [m_minus, m_plus] = build_m_minus_plus(m0, tuples, true_rewards);

  SandwichReport rep;
  rep.v_minus = policy_values(m_minus, pi_minus);
  rep.v_plus = policy_values(m_plus, pi_minus);

  const TabularPolicy pi_true = map_policy_by_action(pi_minus, m_minus, m_true);
  rep.v_true = policy_values(m_true, pi_true);

  const BisimTable bisim = exact_bisim_distance(m_true, pi_true, 1e-13);
  rep.eps_min.resize(tuples.size());
  rep.assumptions_satisfied = true;
  for (std::size_t j = 0; j < tuples.size(); ++j) {
    rep.eps_min[j] = bisim.d[true_succ[j]][tuples[j].target];
    if (tuples[j].epsilon < rep.eps_min[j] - 1e-12) {
      rep.assumptions_satisfied = false;
    }
  }

  rep.n_states_checked = m0.num_states();
  for (int s = 0; s < m0.num_states(); ++s) {
    if (m0.imagined[s]) continue;
    rep.max_lower_violation =
        std::max(rep.max_lower_violation, rep.v_minus[s] - rep.v_true[s]);
    rep.max_upper_violation =
        std::max(rep.max_upper_violation, rep.v_true[s] - rep.v_plus[s]);
  }
  rep.bound_holds = rep.assumptions_satisfied &&
                    rep.max_lower_violation <= tolerance &&
                    rep.max_upper_violation <= tolerance;

  for (int s = 0; s < m0.num_states(); ++s) {
    const double lo = expansion_rollout(m_minus, pi_minus, s, -1.0, 1e-8);
    const double hi = expansion_rollout(m_minus, pi_minus, s, +1.0, 1e-8);
    rep.expansion_lower_error =
        std::max(rep.expansion_lower_error, std::abs(lo - rep.v_minus[s]));
    rep.expansion_upper_error =
        std::max(rep.expansion_upper_error, std::abs(hi - rep.v_plus[s]));
  }
  return rep;
}

ImprovementReport certify_improvement(const TabularMdp& m_true,
                                      const TabularMdp& m0,
                                      const StitchTupleSet& tuples,
                                      const StitchTupleSet& tuples2,
                                      double tolerance) {
  auto values_for = [&](const StitchTupleSet& ts) {
    std::vector<double> r(ts.size());
    for (std::size_t j = 0; j < ts.size(); ++j) {
      const int idx = find_action(m_true, ts[j].source, ts[j].action);
      if (idx < 0) throw ConfigError("certify_improvement: action missing in ground truth");
      r[j] = m_true.actions[ts[j].source][idx].reward;
    }
    auto [mm, mp] = build_m_minus_plus(m0, ts, r);
    const ValueTable vt = value_iteration(mm, 1e-12, 1000000);
    const TabularPolicy pi = greedy_policy(vt, mm);
    return std::make_tuple(std::move(mm), std::move(mp), pi);
  };

  auto [mm1, mp1, pi1] = values_for(tuples);
  auto [mm2, mp2, pi2] = values_for(tuples2);

  const std::vector<double> v_plus_1 = policy_values(mp1, pi1);
  const std::vector<double> v_minus_2 = policy_values(mm2, pi2);
  const std::vector<double> v_true_1 =
      policy_values(m_true, map_policy_by_action(pi1, mm1, m_true));
  const std::vector<double> v_true_2 =
      policy_values(m_true, map_policy_by_action(pi2, mm2, m_true));

  ImprovementReport rep;
  rep.min_margin = std::numeric_limits<double>::infinity();
  for (int s = 0; s < m0.num_states(); ++s) {
    if (m0.imagined[s]) continue;
    if (v_plus_1[s] < v_minus_2[s]) {
      ++rep.premises_fired;
      rep.min_margin = std::min(rep.min_margin, v_true_2[s] - v_true_1[s]);
      if (v_true_1[s] >= v_true_2[s] + tolerance) ++rep.violations;
    }
  }
  if (rep.premises_fired == 0) rep.min_margin = 0.0;
  return rep;
}

BoundInstance random_bound_instance(uint64_t seed, int max_states,
                                    int max_actions, int max_stitches) {
  std::mt19937_64 rng(splitmix64(seed));
  std::uniform_int_distribution<int> n_dist(5, max_states);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  const int n = n_dist(rng);
  const double gamma = 0.6 + 0.35 * unit(rng);

  BoundInstance inst;
  inst.m_true.discount = gamma;
  inst.m0.discount = gamma;
  std::uniform_int_distribution<int> next_dist(0, n - 1);
  std::uniform_int_distribution<int> na_dist(1, max_actions);
  for (int s = 0; s < n; ++s) {
    inst.m_true.add_state({static_cast<double>(s)});
    inst.m0.add_state({static_cast<double>(s)});
    const int na = na_dist(rng);
    for (int a = 0; a < na; ++a) {
      Edge e;
      e.action = {static_cast<double>(a)};
      e.next_state = next_dist(rng);
      e.reward = unit(rng);
      inst.m_true.actions[s].push_back(e);
    }
  }
  // Withhold a random subset of actions to form the dataset MDP.
  std::vector<std::pair<int, int>> withheld;  // (state, action index)
  for (int s = 0; s < n; ++s) {
    const auto& edges = inst.m_true.actions[s];
    std::vector<int> keep;
    for (std::size_t a = 0; a < edges.size(); ++a) {
      if (unit(rng) < 0.65) keep.push_back(static_cast<int>(a));
    }
    if (keep.empty()) {
      keep.push_back(static_cast<int>(edges.size() > 1 ? next_dist(rng) % edges.size() : 0));
    }
    std::vector<uint8_t> kept(edges.size(), 0);
    for (int a : keep) kept[a] = 1;
    for (std::size_t a = 0; a < edges.size(); ++a) {
      if (kept[a]) {
        inst.m0.actions[s].push_back(edges[a]);
      } else {
        withheld.emplace_back(s, static_cast<int>(a));
      }
    }
  }
  for (int s = 0; s < n; ++s) {
    inst.m_true.start_states.push_back(s);
    inst.m0.start_states.push_back(s);
  }

  std::shuffle(withheld.begin(), withheld.end(), rng);
  std::uniform_int_distribution<int> l_dist(1, max_stitches);
  const int l = std::min<int>(l_dist(rng), static_cast<int>(withheld.size()));
  for (int j = 0; j < l; ++j) {
    const auto [s, a] = withheld[j];
    StitchTuple t;
    t.source = s;
    t.target = next_dist(rng);
    t.action = inst.m_true.actions[s][a].action;
    t.epsilon = 0.0;
    inst.tuples.push_back(std::move(t));
  }
  inst.m_true.validate();
  inst.m0.validate();
  return inst;
}

std::pair<StitchTupleSet, TabularPolicy> calibrate_epsilons(
    const TabularMdp& m_true, const TabularMdp& m0, StitchTupleSet tuples,
    int max_rounds) {
  std::vector<double> true_rewards(tuples.size());
  std::vector<int> true_succ(tuples.size());
  for (std::size_t j = 0; j < tuples.size(); ++j) {
    const int idx = find_action(m_true, tuples[j].source, tuples[j].action);
    if (idx < 0) throw ConfigError("calibrate_epsilons: action missing in ground truth");
    true_rewards[j] = m_true.actions[tuples[j].source][idx].reward;
    true_succ[j] = m_true.actions[tuples[j].source][idx].next_state;
  }

  for (int round = 0; round < max_rounds; ++round) {
    auto [mm, mp] = build_m_minus_plus(m0, tuples, true_rewards);
    const ValueTable vt = value_iteration(mm, 1e-12, 1000000);
    const TabularPolicy pi = greedy_policy(vt, mm);
    const TabularPolicy pi_true = map_policy_by_action(pi, mm, m_true);
    const BisimTable bisim = exact_bisim_distance(m_true, pi_true, 1e-13);

    bool ok = true;
    for (std::size_t j = 0; j < tuples.size(); ++j) {
      const double need = bisim.d[true_succ[j]][tuples[j].target];
      if (tuples[j].epsilon < need - 1e-12) {
        tuples[j].epsilon = need;
        ok = false;
      }
    }
    if (ok) return {std::move(tuples), pi};
  }
  throw NumericalError("calibrate_epsilons: did not converge");
}

}  // namespace bats
