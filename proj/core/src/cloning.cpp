#include "bats/cloning.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace bats {

using nlohmann::json;

HarvestResult harvest_trajectories(const TabularMdp& mdp,
                                   const TabularPolicy& policy,
                                   double return_threshold, int horizon) {
  if (!policy.deterministic()) {
    throw ConfigError("harvest_trajectories: deterministic policy required");
  }
  if (horizon < 1) throw ConfigError("harvest_trajectories: horizon must be >= 1");

  HarvestResult res;
  res.data.state_dim = static_cast<int>(mdp.states.at(0).size());
  res.data.action_dim = -1;

  for (int s0 : mdp.start_states) {
    std::vector<DataRecord> traj;
    double ret = 0.0;
    int s = s0;
    for (int step = 0; step < horizon && !mdp.terminal[s]; ++step) {
      const Edge& e = mdp.actions[s][policy.action_choice[s]];
      traj.push_back(DataRecord{mdp.states[s], e.action, e.reward,
                                mdp.states[e.next_state],
                                mdp.terminal[e.next_state] != 0});
      ret += e.reward;
      if (res.data.action_dim < 0) {
        res.data.action_dim = static_cast<int>(e.action.size());
      }
      s = e.next_state;
    }
    res.start_returns.push_back(ret);
    const bool keep = ret >= return_threshold;
    res.kept.push_back(keep ? 1 : 0);
    if (keep && !traj.empty()) res.data.trajectories.push_back(std::move(traj));
  }
  if (res.data.trajectories.empty()) {
    throw ConfigError("harvest_trajectories: every trajectory fell below the return threshold");
  }
  res.data.compute_normalization();
  return res;
}

Vec ClonedPolicy::mean_action(const Vec& state) const {
  Eigen::MatrixXd x(1, state_dim);
  for (int d = 0; d < state_dim; ++d) x(0, d) = state[d];
  const Eigen::MatrixXd out = net.forward(state_norm.normalize(x));
  Vec a(action_dim);
  for (int d = 0; d < action_dim; ++d) {
    a[d] = std::min(action_hi[d], std::max(action_lo[d], out(0, d)));
  }
  return a;
}

ClonedPolicy behavior_clone(const TrajectoryDataset& harvest,
                            const CloneConfig& config, const Vec& action_lo,
                            const Vec& action_hi, uint64_t seed) {
  const std::size_t N = harvest.num_records();
  if (N == 0) throw ConfigError("behavior_clone: empty harvest");

  Eigen::MatrixXd X(N, harvest.state_dim);
  Eigen::MatrixXd A(N, harvest.action_dim);
  std::size_t row = 0;
  for (const auto& traj : harvest.trajectories) {
    for (const DataRecord& rec : traj) {
      for (int d = 0; d < harvest.state_dim; ++d) X(row, d) = rec.s[d];
      for (int d = 0; d < harvest.action_dim; ++d) A(row, d) = rec.a[d];
      ++row;
    }
  }

  ClonedPolicy pol;
  pol.state_dim = harvest.state_dim;
  pol.action_dim = harvest.action_dim;
  pol.action_lo = action_lo;
  pol.action_hi = action_hi;
  pol.state_norm.fit(X);
  const Eigen::MatrixXd Xn = pol.state_norm.normalize(X);

  std::vector<int> dims{harvest.state_dim};
  for (int h : config.hidden) dims.push_back(h);
  dims.push_back(2 * harvest.action_dim);  // mean + log std

  std::mt19937_64 init_rng(derive_seed(seed, 1));
  pol.net = nn::Mlp::make(dims, init_rng);
  nn::SgdMomentum opt{config.lr, config.momentum};
  opt.init(pol.net);

  std::mt19937_64 batch_rng(derive_seed(seed, 2));
  std::uniform_int_distribution<std::size_t> pick(0, N - 1);
  const int B = std::min<std::size_t>(config.batch_size, N);
  const int ad = harvest.action_dim;
  double initial_loss = -1.0;

  for (int update = 0; update < config.batch_updates; ++update) {
    Eigen::MatrixXd xb(B, Xn.cols()), ab(B, ad);
    for (int i = 0; i < B; ++i) {
      const std::size_t j = pick(batch_rng);
      xb.row(i) = Xn.row(j);
      ab.row(i) = A.row(j);
    }
    nn::Mlp::Cache cache;
    const Eigen::MatrixXd out = pol.net.forward(xb, cache);

    // Negative Gaussian log likelihood, constants dropped.
    Eigen::MatrixXd dY = Eigen::MatrixXd::Zero(B, 2 * ad);
    double loss = 0.0;
    for (int i = 0; i < B; ++i) {
      for (int d = 0; d < ad; ++d) {
        double lstd, lgrad;
        nn::soft_clamp(out(i, ad + d), config.logstd_min, config.logstd_max,
                       lstd, lgrad);
        const double e = ab(i, d) - out(i, d);
        const double inv_var = std::exp(-2.0 * lstd);
        loss += 0.5 * e * e * inv_var + lstd;
        dY(i, d) = -e * inv_var / B;
        dY(i, ad + d) = (1.0 - e * e * inv_var) * lgrad / B;
      }
    }
    loss /= B;
    if (!std::isfinite(loss)) throw NumericalError("behavior_clone: non-finite loss");
    if (initial_loss < 0.0) initial_loss = std::abs(loss) + 1e-9;
    if (loss > 10.0 * initial_loss) {
      throw NumericalError("behavior_clone: loss diverged");
    }
    pol.loss_history.push_back(loss);
    opt.step(pol.net, pol.net.backward(cache, dY));
  }
  return pol;
}

EvalStats evaluate_policy(const ClonedPolicy& policy, const Env& env,
                          int n_episodes, uint64_t seed, int max_steps) {
  if (env.state_dim() != policy.state_dim ||
      env.action_dim() != policy.action_dim) {
    throw ConfigError("evaluate_policy: env and policy dimensions disagree");
  }
  EvalStats stats;
  if (n_episodes <= 0) return stats;

  const int cap = max_steps > 0 ? max_steps : env.episode_cap();
  const auto* maze = dynamic_cast<const PointMazeEnv*>(&env);
  double occupancy_sum = 0.0;

  for (int ep = 0; ep < n_episodes; ++ep) {
    std::mt19937_64 rng(derive_seed(seed, ep));
    Vec s = env.reset(rng);
    double ret = 0.0;
    std::vector<uint8_t> in_goal;
    for (int step = 0; step < cap; ++step) {
      const StepResult res = env.step(s, policy.mean_action(s));
      ret += res.reward;
      if (maze) {
        in_goal.push_back(maze->in_goal(res.next_state[0], res.next_state[1]) ? 1 : 0);
      }
      s = res.next_state;
      if (res.terminal) break;
    }
    stats.episode_returns.push_back(ret);
    if (maze && !in_goal.empty()) {
      const std::size_t window = std::min<std::size_t>(50, in_goal.size());
      double hits = 0.0;
      for (std::size_t i = in_goal.size() - window; i < in_goal.size(); ++i) {
        hits += in_goal[i];
      }
      occupancy_sum += hits / static_cast<double>(window);
    }
  }

  double mean = 0.0;
  for (double r : stats.episode_returns) mean += r;
  mean /= n_episodes;
  double var = 0.0;
  for (double r : stats.episode_returns) var += (r - mean) * (r - mean);
  stats.mean = mean;
  stats.stddev = std::sqrt(var / n_episodes);
  if (maze) stats.goal_occupancy = occupancy_sum / n_episodes;
  return stats;
}

double rollout_return(const ClonedPolicy& policy, const Env& env,
                      const Vec& start, int max_steps) {
  Vec s = start;
  double ret = 0.0;
  for (int step = 0; step < max_steps; ++step) {
    const StepResult res = env.step(s, policy.mean_action(s));
    ret += res.reward;
    s = res.next_state;
    if (res.terminal) break;
  }
  return ret;
}

namespace {
constexpr const char* kPolicyFormat = "bats-policy";
constexpr int kPolicyVersion = 1;
}  // namespace

void save_policy(const ClonedPolicy& pol, const std::string& path) {
  json j;
  j["format"] = kPolicyFormat;
  j["version"] = kPolicyVersion;
  j["state_dim"] = pol.state_dim;
  j["action_dim"] = pol.action_dim;
  j["action_lo"] = pol.action_lo;
  j["action_hi"] = pol.action_hi;
  j["net"] = json::parse(nn::mlp_to_json(pol.net));
  j["state_norm"] = json::parse(nn::normalizer_to_json(pol.state_norm));
  std::ofstream out(path);
  if (!out) throw MissingArtifactError("policy: cannot open " + path + " for writing");
  out << j.dump() << "\n";
}

ClonedPolicy load_policy(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifactError("policy: cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  json j;
  try {
    j = json::parse(ss.str());
  } catch (const json::exception& e) {
    throw ConfigError(std::string("policy: parse failure: ") + e.what());
  }
  if (j.value("format", "") != kPolicyFormat || j.value("version", -1) != kPolicyVersion) {
    throw ConfigError("policy: unknown checkpoint format or version");
  }
  ClonedPolicy pol;
  pol.state_dim = j.at("state_dim").get<int>();
  pol.action_dim = j.at("action_dim").get<int>();
  pol.action_lo = j.at("action_lo").get<Vec>();
  pol.action_hi = j.at("action_hi").get<Vec>();
  pol.net = nn::mlp_from_json(j.at("net").dump());
  pol.state_norm = nn::normalizer_from_json(j.at("state_norm").dump());
  return pol;
}

}  // namespace bats
