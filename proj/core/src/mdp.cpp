#include "bats/mdp.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

namespace bats {

using nlohmann::json;

std::size_t TabularMdp::num_edges() const {
  std::size_t n = 0;
  for (const auto& a : actions) n += a.size();
  return n;
}

int TabularMdp::add_state(Vec s, bool is_terminal, bool is_imagined) {
  const int idx = num_states();
  states.push_back(std::move(s));
  actions.emplace_back();
  terminal.push_back(is_terminal ? 1 : 0);
  imagined.push_back(is_imagined ? 1 : 0);
  if (is_terminal) {
    actions.back().push_back(Edge{Vec(states.back().size(), 0.0), idx, 0.0});
  }
  return idx;
}

void TabularMdp::validate() const {
  const int n = num_states();
  if (static_cast<int>(actions.size()) != n ||
      static_cast<int>(terminal.size()) != n ||
      static_cast<int>(imagined.size()) != n) {
    throw ConfigError("mdp: per-state arrays disagree on state count");
  }
  if (!(discount > 0.0 && discount < 1.0)) {
    throw ConfigError("mdp: discount must lie strictly inside (0,1)");
  }
  for (int s = 0; s < n; ++s) {
    if (actions[s].empty() && !terminal[s]) {
      throw ConfigError("mdp: state " + std::to_string(s) +
                        " has no actions and is not terminal");
    }
    if (terminal[s]) {
      if (actions[s].size() != 1 || actions[s][0].next_state != s ||
          actions[s][0].reward != 0.0) {
        throw ConfigError("mdp: terminal state " + std::to_string(s) +
                          " must have a single zero-reward self-loop");
      }
    }
    for (const Edge& e : actions[s]) {
      if (e.next_state < 0 || e.next_state >= n) {
        throw ConfigError("mdp: state " + std::to_string(s) +
                          " has an edge to invalid state index " +
                          std::to_string(e.next_state));
      }
      if (!std::isfinite(e.reward) || !std::isfinite(e.penalty)) {
        throw ConfigError("mdp: non-finite reward or penalty at state " +
                          std::to_string(s));
      }
      if (!e.is_stitch && e.penalty != 0.0) {
        throw ConfigError("mdp: non-stitch edge with nonzero penalty at state " +
                          std::to_string(s));
      }
      if (e.penalty < 0.0) {
        throw ConfigError("mdp: negative penalty at state " + std::to_string(s));
      }
      if (!all_finite(e.action)) {
        throw ConfigError("mdp: non-finite action vector at state " +
                          std::to_string(s));
      }
    }
  }
  for (int s : start_states) {
    if (s < 0 || s >= n) throw ConfigError("mdp: invalid start state index");
  }
}

int TabularPolicy::sample(int state, std::mt19937_64& rng) const {
  if (mode == Mode::greedy) return action_choice[state];
  const auto& probs = action_probs[state];
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  double u = unit(rng);
  double acc = 0.0;
  for (std::size_t a = 0; a < probs.size(); ++a) {
    acc += probs[a];
    if (u <= acc) return static_cast<int>(a);
  }
  return static_cast<int>(probs.size()) - 1;
}

ValueTable value_iteration(const TabularMdp& mdp, double tolerance,
                           int max_iters,
                           std::vector<double>* residual_history) {
  if (!(tolerance > 0.0)) throw ConfigError("value_iteration: tolerance must be > 0");
  mdp.validate();
  const int n = mdp.num_states();

  ValueTable out;
  out.values.assign(n, 0.0);
  out.q_values.resize(n);
  for (int s = 0; s < n; ++s) out.q_values[s].resize(mdp.actions[s].size());

  std::vector<double> next(n, 0.0);
  const double gamma = mdp.discount;

  for (int iter = 0; iter < max_iters; ++iter) {
    double resid = 0.0;
    for (int s = 0; s < n; ++s) {
      const auto& edges = mdp.actions[s];
      auto& q = out.q_values[s];
      double best = -std::numeric_limits<double>::infinity();
      for (std::size_t a = 0; a < edges.size(); ++a) {
        q[a] = effective_reward(edges[a]) + gamma * out.values[edges[a].next_state];
        if (q[a] > best) best = q[a];
      }
      if (edges.empty()) best = 0.0;  // terminal-only guard; validate() forbids otherwise
      next[s] = best;
      resid = std::max(resid, std::abs(next[s] - out.values[s]));
    }
    std::swap(next, out.values);
    ++out.iterations_run;
    out.residual = resid;
    if (residual_history) residual_history->push_back(resid);
    if (resid <= tolerance) {
      out.converged = true;
      break;
    }
  }
  // q_values were computed from the pre-sweep values; redo one backup against
  // the returned values so values[s] == max_a q_values[s][a] holds exactly.
  for (int s = 0; s < n; ++s) {
    const auto& edges = mdp.actions[s];
    auto& q = out.q_values[s];
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < edges.size(); ++a) {
      q[a] = effective_reward(edges[a]) + gamma * out.values[edges[a].next_state];
      best = std::max(best, q[a]);
    }
    if (!edges.empty()) next[s] = best;
  }
  out.values = next;
  return out;
}

TabularPolicy greedy_policy(const ValueTable& values, const TabularMdp& mdp) {
  TabularPolicy pi;
  pi.mode = TabularPolicy::Mode::greedy;
  const int n = mdp.num_states();
  pi.action_choice.resize(n);
  for (int s = 0; s < n; ++s) {
    const auto& q = values.q_values[s];
    int best = 0;
    for (std::size_t a = 1; a < q.size(); ++a) {
      if (q[a] > q[best]) best = static_cast<int>(a);
    }
    pi.action_choice[s] = best;
  }
  return pi;
}

TabularPolicy boltzmann_policy(const ValueTable& values, const TabularMdp& mdp,
                               double temperature) {
  if (!(temperature > 0.0)) {
    throw ConfigError("boltzmann_policy: temperature must be > 0");
  }
  TabularPolicy pi;
  pi.mode = TabularPolicy::Mode::boltzmann;
  pi.temperature = temperature;
  const int n = mdp.num_states();
  pi.action_probs.resize(n);
  for (int s = 0; s < n; ++s) {
    const auto& q = values.q_values[s];
    auto& p = pi.action_probs[s];
    p.resize(q.size());
    double qmax = -std::numeric_limits<double>::infinity();
    for (double v : q) qmax = std::max(qmax, v);
    double z = 0.0;
    for (std::size_t a = 0; a < q.size(); ++a) {
      p[a] = std::exp((q[a] - qmax) / temperature);
      z += p[a];
    }
    for (auto& v : p) v /= z;
  }
  return pi;
}

std::vector<double> policy_values(const TabularMdp& mdp,
                                  const TabularPolicy& policy) {
  if (!policy.deterministic()) {
    throw ConfigError("policy_values: stochastic policies are unsupported");
  }
  const int n = mdp.num_states();
  const double gamma = mdp.discount;
  std::vector<double> values(n, 0.0);
  std::vector<uint8_t> done(n, 0);
  std::vector<int> walk_pos(n, -1);
  std::vector<int> path;
  std::vector<double> path_reward;

  auto edge_of = [&](int s) -> const Edge& {
    const int a = policy.action_choice[s];
    if (a < 0 || a >= static_cast<int>(mdp.actions[s].size())) {
      throw ConfigError("policy_values: policy action out of range at state " +
                        std::to_string(s));
    }
    return mdp.actions[s][a];
  };

  for (int s0 = 0; s0 < n; ++s0) {
    if (done[s0]) continue;
    path.clear();
    path_reward.clear();
    int s = s0;
    while (true) {
      if (done[s]) break;
      if (walk_pos[s] >= 0) {
        // Cycle found. Solve the cycle head from its discounted loop sum,
        // then unwind the loop backwards.
        const int p = walk_pos[s];
        const int len = static_cast<int>(path.size()) - p;
        double loop_sum = 0.0;
        double g = 1.0;
        for (int i = 0; i < len; ++i) {
          loop_sum += g * path_reward[p + i];
          g *= gamma;
        }
        const double head = loop_sum / (1.0 - g);
        values[path[p]] = head;
        done[path[p]] = 1;
        double v_next = head;
        for (int i = static_cast<int>(path.size()) - 1; i > p; --i) {
          v_next = path_reward[i] + gamma * v_next;
          values[path[i]] = v_next;
          done[path[i]] = 1;
        }
        s = path[p];
        break;
      }
      walk_pos[s] = static_cast<int>(path.size());
      path.push_back(s);
      const Edge& e = edge_of(s);
      path_reward.push_back(effective_reward(e));
      s = e.next_state;
    }
    // Back-substitute the remaining prefix of the walk.
    int tail = s;
    for (int i = static_cast<int>(path.size()) - 1; i >= 0; --i) {
      const int u = path[i];
      walk_pos[u] = -1;
      if (done[u]) {
        tail = u;
        continue;
      }
      values[u] = path_reward[i] + gamma * values[tail];
      done[u] = 1;
      tail = u;
    }
  }
  return values;
}

std::vector<int> sample_occupancy(const TabularMdp& mdp,
                                  const TabularPolicy& policy, int n_samples,
                                  int horizon, uint64_t rng_seed) {
  if (mdp.start_states.empty()) {
    throw ConfigError("sample_occupancy: mdp has no start states");
  }
  if (horizon < 1) throw ConfigError("sample_occupancy: horizon must be >= 1");
  std::mt19937_64 rng(splitmix64(rng_seed));
  std::uniform_int_distribution<std::size_t> pick_start(
      0, mdp.start_states.size() - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  std::vector<int> out;
  out.reserve(n_samples);
  while (static_cast<int>(out.size()) < n_samples) {
    int s = mdp.start_states[pick_start(rng)];
    for (int step = 0; step < horizon; ++step) {
      out.push_back(s);
      if (static_cast<int>(out.size()) >= n_samples) break;
      if (unit(rng) > mdp.discount) break;  // geometric termination, p = 1-gamma
      const int a = policy.sample(s, rng);
      s = mdp.actions[s][a].next_state;
    }
  }
  return out;
}

namespace {
constexpr const char* kMdpFormat = "bats-mdp";
constexpr int kMdpVersion = 1;
}  // namespace

std::string mdp_to_json(const TabularMdp& mdp) {
  json j;
  j["format"] = kMdpFormat;
  j["version"] = kMdpVersion;
  j["discount"] = mdp.discount;
  j["states"] = mdp.states;
  j["terminal"] = mdp.terminal;
  j["imagined"] = mdp.imagined;
  j["start_states"] = mdp.start_states;
  json acts = json::array();
  for (const auto& edges : mdp.actions) {
    json row = json::array();
    for (const Edge& e : edges) {
      row.push_back({{"a", e.action},
                     {"next", e.next_state},
                     {"r", e.reward},
                     {"stitch", e.is_stitch},
                     {"penalty", e.penalty},
                     {"dist", e.stitch_distance}});
    }
    acts.push_back(std::move(row));
  }
  j["actions"] = std::move(acts);
  return j.dump();
}

TabularMdp mdp_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("mdp: parse failure: ") + e.what());
  }
  if (j.value("format", "") != kMdpFormat || j.value("version", -1) != kMdpVersion) {
    throw ConfigError("mdp: unknown format or version, refusing to load");
  }
  TabularMdp mdp;
  try {
    mdp.discount = j.at("discount").get<double>();
    mdp.states = j.at("states").get<std::vector<Vec>>();
    mdp.terminal = j.at("terminal").get<std::vector<uint8_t>>();
    mdp.imagined = j.at("imagined").get<std::vector<uint8_t>>();
    mdp.start_states = j.at("start_states").get<std::vector<int>>();
    for (const auto& row : j.at("actions")) {
      mdp.actions.emplace_back();
      for (const auto& je : row) {
        Edge e;
        e.action = je.at("a").get<Vec>();
        e.next_state = je.at("next").get<int>();
        e.reward = je.at("r").get<double>();
        e.is_stitch = je.at("stitch").get<bool>();
        e.penalty = je.at("penalty").get<double>();
        e.stitch_distance = je.at("dist").get<double>();
        mdp.actions.back().push_back(std::move(e));
      }
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("mdp: malformed document: ") + e.what());
  }
  mdp.validate();
  return mdp;
}

void save_mdp(const TabularMdp& mdp, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw MissingArtifactError("mdp: cannot open " + path + " for writing");
  out << mdp_to_json(mdp) << "\n";
}

TabularMdp load_mdp(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifactError("mdp: cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return mdp_from_json(ss.str());
}

}  // namespace bats
