#include "bats/bats_loop.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "bats/manifest.hpp"

namespace bats {

using nlohmann::json;

void BatsConfig::validate() const {
  if (n_iterations < 1 || m_samples < 1 || stitch_budget < 1 ||
      max_stitch_len < 1) {
    throw ConfigError("bats config: counts must be >= 1");
  }
  if (!(discount > 0.0 && discount < 1.0)) {
    throw ConfigError("bats config: discount must be in (0,1)");
  }
  if (!(delta > 0.0) || !(boltzmann_temperature > 0.0) || !(vi_tolerance > 0.0)) {
    throw ConfigError("bats config: delta, temperature, and vi tolerance must be > 0");
  }
  if (penalty_coefficient < 0.0) {
    throw ConfigError("bats config: penalty coefficient must be >= 0");
  }
  if (plan_attempts < 1 || occupancy_horizon < 1) {
    throw ConfigError("bats config: plan_attempts and occupancy_horizon must be >= 1");
  }
  if (neighbor_mode == NeighborGraph::Mode::radius && !(epsilon > 0.0)) {
    throw ConfigError("bats config: neighbor radius must be > 0");
  }
  if (neighbor_mode == NeighborGraph::Mode::knn && knn < 1) {
    throw ConfigError("bats config: knn must be >= 1");
  }
  cem.validate();
}

namespace {

json config_to_json(const BatsConfig& c) {
  json j;
  j["n_iterations"] = c.n_iterations;
  j["m_samples"] = c.m_samples;
  j["stitch_budget"] = c.stitch_budget;
  j["max_stitch_len"] = c.max_stitch_len;
  j["neighbor_mode"] = c.neighbor_mode == NeighborGraph::Mode::radius ? "radius" : "knn";
  j["epsilon"] = c.epsilon;
  j["knn"] = c.knn;
  j["neighbor_hop"] = c.neighbor_hop == NeighborHop::last ? "last" : "anywhere";
  j["delta"] = c.delta;
  j["penalty_coefficient"] = c.penalty_coefficient;
  j["penalty_mode"] = c.penalty_mode == PenaltyMode::all_edges ? "all_edges" : "final_gamma";
  j["discount"] = c.discount;
  j["boltzmann_temperature"] = c.boltzmann_temperature;
  j["vi_tolerance"] = c.vi_tolerance;
  j["plan_attempts"] = c.plan_attempts;
  j["occupancy_horizon"] = c.occupancy_horizon;
  j["rng_seed"] = c.rng_seed;
  j["cem"] = {{"population", c.cem.population},
              {"elite_fraction", c.cem.elite_fraction},
              {"iterations", c.cem.iterations},
              {"restarts", c.cem.restarts},
              {"init_std", c.cem.init_std},
              {"action_lo", c.cem.action_lo},
              {"action_hi", c.cem.action_hi},
              {"score_quantile", c.cem.score_quantile}};
  return j;
}

double mean_start_value(const TabularMdp& mdp, const ValueTable& vt) {
  double acc = 0.0;
  for (int s : mdp.start_states) acc += vt.values[s];
  return mdp.start_states.empty() ? 0.0 : acc / mdp.start_states.size();
}

struct ScoredCandidate {
  StitchCandidate cand;
  double advantage = 0.0;
};

}  // namespace

uint64_t config_fingerprint(const BatsConfig& config) {
  return fnv1a64(config_to_json(config).dump());
}

BatsResult run_bats(const TrajectoryDataset& data,
                    const DynamicsEnsemble& ensemble, const BatsConfig& config,
                    const Metric& metric, const BatsRunState* resume_from,
                    const std::string& checkpoint_path) {
  config.validate();
  const uint64_t fingerprint = config_fingerprint(config);

  const NeighborGraph neighbors = build_neighbor_graph(
      data, config.neighbor_mode,
      config.neighbor_mode == NeighborGraph::Mode::radius
          ? config.epsilon
          : static_cast<double>(config.knn),
      metric);

  BatsRunState st;
  if (resume_from) {
    if (resume_from->config_fingerprint != fingerprint) {
      throw ConfigError("run_bats: checkpoint was produced with a different config");
    }
    st = *resume_from;
  } else {
    st.mdp = build_m0(data, config.discount);
    st.config_fingerprint = fingerprint;
  }

  std::set<std::pair<int, int>> accepted_pairs;
  for (const StitchLogEntry& e : st.log) {
    if (e.accepted) accepted_pairs.emplace(e.source, e.target);
  }

  const RewardFn reward_fn = [&ensemble](const Vec& s, const Vec& a) {
    return ensemble.predict_reward(s, a);
  };

  for (int iter = st.iteration; iter < config.n_iterations && !st.finished;
       ++iter) {
    const ValueTable vt = value_iteration(st.mdp, config.vi_tolerance);
    const TabularPolicy greedy = greedy_policy(vt, st.mdp);
    const TabularPolicy boltz =
        boltzmann_policy(vt, st.mdp, config.boltzmann_temperature);
    const double mean_v = mean_start_value(st.mdp, vt);

    std::vector<int> samples =
        sample_occupancy(st.mdp, boltz, config.m_samples,
                         config.occupancy_horizon,
                         derive_seed(config.rng_seed, 0x0cc0, iter));
    std::sort(samples.begin(), samples.end());
    samples.erase(std::unique(samples.begin(), samples.end()), samples.end());

    std::vector<ScoredCandidate> pool;
    for (int s : samples) {
      std::vector<StitchCandidate> cands = find_feasible(
          st.mdp, neighbors, s, config.max_stitch_len, config.neighbor_hop);
      cands.erase(std::remove_if(cands.begin(), cands.end(),
                                 [&](const StitchCandidate& c) {
                                   return accepted_pairs.count(
                                       {c.source, c.target});
                                 }),
                  cands.end());
      cands = filter_impactful(cands, vt, greedy, st.mdp);
      for (const StitchCandidate& c : cands) {
        int reach = c.source;
        for (int step = 0; step < c.k; ++step) {
          reach = st.mdp.actions[reach][greedy.action_choice[reach]].next_state;
        }
        pool.push_back({c, vt.values[c.target] - vt.values[reach]});
      }
    }

    const int n_candidates = static_cast<int>(pool.size());
    if (pool.empty()) {
      st.metrics.push_back(IterationMetrics{iter, 0, 0, 0, mean_v,
                                            st.mdp.num_states(),
                                            st.mdp.num_edges()});
      st.iteration = iter + 1;
      st.finished = true;  // no stitch with positive advantage exists
      if (!checkpoint_path.empty()) save_run_state(st, checkpoint_path);
      break;
    }

    std::sort(pool.begin(), pool.end(),
              [](const ScoredCandidate& a, const ScoredCandidate& b) {
                return std::tie(b.advantage, a.cand.source, a.cand.target) <
                       std::tie(a.advantage, b.cand.source, b.cand.target);
              });
    if (static_cast<int>(pool.size()) > config.stitch_budget) {
      pool.resize(config.stitch_budget);
    }

    std::vector<PlanResult> plans(pool.size());
    const uint64_t plan_root = derive_seed(config.rng_seed, 0x91a7);
    parallel_for(pool.size(), [&](std::size_t i) {
      const StitchCandidate& c = pool[i].cand;
      plans[i] = multi_start_test_edge(
          ensemble, st.mdp.states[c.source], st.mdp.states[c.target], c.k,
          config.delta, metric, config.cem, config.plan_attempts,
          derive_seed(plan_root, static_cast<uint64_t>(iter) * 0x100000ull + i));
    });

    int n_accepted = 0;
    for (std::size_t i = 0; i < pool.size(); ++i) {
      const StitchCandidate& c = pool[i].cand;
      const PlanResult& plan = plans[i];
      st.log.push_back(StitchLogEntry{iter, c.source, c.target, c.k,
                                      plan.accepted, plan.achieved_distance});
      if (!plan.accepted) continue;
      StitchRecord rec;
      rec.candidate = c;
      rec.actions = plan.actions;
      rec.predicted_states = plan.predicted_states;
      rec.achieved_distance = plan.achieved_distance;
      rec.accepted = true;
      rec.iteration_added = iter;
      apply_stitch(st.mdp, rec, reward_fn, config.penalty_coefficient,
                   config.penalty_mode);
      accepted_pairs.emplace(c.source, c.target);
      ++n_accepted;
    }

    st.metrics.push_back(IterationMetrics{
        iter, n_candidates, static_cast<int>(pool.size()), n_accepted, mean_v,
        st.mdp.num_states(), st.mdp.num_edges()});
    st.iteration = iter + 1;
    if (!checkpoint_path.empty()) save_run_state(st, checkpoint_path);
  }

  BatsResult res;
  res.final_values = value_iteration(st.mdp, config.vi_tolerance);
  res.final_mean_start_value = mean_start_value(st.mdp, res.final_values);
  res.mdp = st.mdp;
  res.state = std::move(st);
  return res;
}

TabularMdp relabel_penalties(TabularMdp mdp, double new_coefficient) {
  if (new_coefficient < 0.0) {
    throw ConfigError("relabel_penalties: coefficient must be >= 0");
  }
  for (auto& edges : mdp.actions) {
    for (Edge& e : edges) {
      if (e.is_stitch) e.penalty = new_coefficient * e.stitch_distance;
    }
  }
  return mdp;
}

namespace {
constexpr const char* kRunFormat = "bats-run";
constexpr int kRunVersion = 1;
}  // namespace

std::string run_state_to_json(const BatsRunState& state) {
  json j;
  j["format"] = kRunFormat;
  j["version"] = kRunVersion;
  j["fingerprint"] = state.config_fingerprint;
  j["iteration"] = state.iteration;
  j["finished"] = state.finished;
  j["mdp"] = json::parse(mdp_to_json(state.mdp));
  j["log"] = json::array();
  for (const StitchLogEntry& e : state.log) {
    j["log"].push_back({{"iter", e.iteration},
                        {"source", e.source},
                        {"target", e.target},
                        {"k", e.k},
                        {"accepted", e.accepted},
                        {"distance", e.distance}});
  }
  j["metrics"] = json::array();
  for (const IterationMetrics& m : state.metrics) {
    j["metrics"].push_back({{"iteration", m.iteration},
                            {"candidates", m.candidates},
                            {"attempted", m.attempted},
                            {"accepted", m.accepted},
                            {"mean_start_value", m.mean_start_value},
                            {"num_states", m.num_states},
                            {"num_edges", m.num_edges}});
  }
  return j.dump();
}

BatsRunState run_state_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("run state: parse failure: ") + e.what());
  }
  if (j.value("format", "") != kRunFormat || j.value("version", -1) != kRunVersion) {
    throw ConfigError("run state: unknown format or version, refusing to load");
  }
  BatsRunState st;
  st.config_fingerprint = j.at("fingerprint").get<uint64_t>();
  st.iteration = j.at("iteration").get<int>();
  st.finished = j.at("finished").get<bool>();
  st.mdp = mdp_from_json(j.at("mdp").dump());
  for (const auto& je : j.at("log")) {
    st.log.push_back(StitchLogEntry{je.at("iter").get<int>(),
                                    je.at("source").get<int>(),
                                    je.at("target").get<int>(),
                                    je.at("k").get<int>(),
                                    je.at("accepted").get<bool>(),
                                    je.at("distance").get<double>()});
  }
  for (const auto& jm : j.at("metrics")) {
    st.metrics.push_back(IterationMetrics{
        jm.at("iteration").get<int>(), jm.at("candidates").get<int>(),
        jm.at("attempted").get<int>(), jm.at("accepted").get<int>(),
        jm.at("mean_start_value").get<double>(), jm.at("num_states").get<int>(),
        jm.at("num_edges").get<std::size_t>()});
  }
  return st;
}

void save_run_state(const BatsRunState& state, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw MissingArtifactError("run state: cannot open " + path + " for writing");
  out << run_state_to_json(state) << "\n";
}

BatsRunState load_run_state(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifactError("run state: cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return run_state_from_json(ss.str());
}

std::string metrics_to_csv(const std::vector<IterationMetrics>& metrics) {
  std::ostringstream out;
  out << "iteration,candidates,attempted,accepted,mean_start_value,num_states,num_edges\n";
  for (const IterationMetrics& m : metrics) {
    out << m.iteration << "," << m.candidates << "," << m.attempted << ","
        << m.accepted << "," << m.mean_start_value << "," << m.num_states << ","
        << m.num_edges << "\n";
  }
  return out.str();
}

}  // namespace bats
