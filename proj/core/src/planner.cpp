#include "bats/planner.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace bats {

void CemConfig::validate() const {
  if (population < 2) throw ConfigError("cem: population must be >= 2");
  if (!(elite_fraction > 0.0 && elite_fraction < 1.0)) {
    throw ConfigError("cem: elite_fraction must be in (0,1)");
  }
  if (population * elite_fraction < 2.0) {
    throw ConfigError("cem: population * elite_fraction must be >= 2");
  }
  if (iterations < 1 || restarts < 1) {
    throw ConfigError("cem: iterations and restarts must be >= 1");
  }
  if (action_lo.size() != action_hi.size() || action_lo.empty()) {
    throw ConfigError("cem: action bounds are malformed");
  }
  for (std::size_t d = 0; d < action_lo.size(); ++d) {
    if (!(action_lo[d] < action_hi[d]) || !std::isfinite(action_lo[d]) ||
        !std::isfinite(action_hi[d])) {
      throw ConfigError("cem: action bounds must be finite with lo < hi");
    }
  }
}

namespace {

struct Flat {
  // Population of flattened action sequences, one row per candidate.
  Eigen::MatrixXd pop;
};

std::vector<Vec> unflatten(const Eigen::VectorXd& row, int k, int ad) {
  std::vector<Vec> actions(k, Vec(ad));
  for (int t = 0; t < k; ++t) {
    for (int d = 0; d < ad; ++d) actions[t][d] = row(t * ad + d);
  }
  return actions;
}

}  // namespace

PlanResult plan_stitch(const DynamicsEnsemble& ensemble, const Vec& source,
                       const Vec& target, int k, double delta,
                       const Metric& metric, const CemConfig& config,
                       uint64_t rng_seed, std::vector<double>* best_history) {
  config.validate();
  if (k < 1) throw ConfigError("plan_stitch: k must be >= 1");
  if (!(delta > 0.0)) throw ConfigError("plan_stitch: delta must be > 0");
  const int ad = static_cast<int>(config.action_lo.size());
  if (ad != ensemble.action_dim) {
    throw ConfigError("plan_stitch: action bounds do not match the ensemble");
  }
  const int dim = k * ad;
  const int pop = config.population;
  const int n_elite =
      std::max(2, static_cast<int>(std::round(pop * config.elite_fraction)));

  Eigen::VectorXd lo(dim), hi(dim), init_std(dim);
  for (int t = 0; t < k; ++t) {
    for (int d = 0; d < ad; ++d) {
      lo(t * ad + d) = config.action_lo[d];
      hi(t * ad + d) = config.action_hi[d];
      init_std(t * ad + d) = config.init_std.empty()
                                 ? (config.action_hi[d] - config.action_lo[d]) / 4.0
                                 : config.init_std[d];
    }
  }
  const Eigen::VectorXd std_floor = 1e-3 * (hi - lo);

  Eigen::MatrixXd starts(pop, ensemble.state_dim);
  for (int i = 0; i < pop; ++i) {
    for (int d = 0; d < ensemble.state_dim; ++d) starts(i, d) = source[d];
  }

  Eigen::VectorXd best_row;
  double best_score = std::numeric_limits<double>::infinity();

  for (int restart = 0; restart < config.restarts; ++restart) {
    std::mt19937_64 rng(derive_seed(rng_seed, restart));
    std::normal_distribution<double> gauss(0.0, 1.0);
    Eigen::VectorXd mean = 0.5 * (lo + hi);
    Eigen::VectorXd stddev = init_std;

    for (int iter = 0; iter < config.iterations; ++iter) {
      Eigen::MatrixXd samples(pop, dim);
      for (int i = 0; i < pop; ++i) {
        for (int d = 0; d < dim; ++d) {
          const double x = mean(d) + stddev(d) * gauss(rng);
          samples(i, d) = std::min(hi(d), std::max(lo(d), x));
        }
      }

      std::vector<Eigen::MatrixXd> actions_per_step(k);
      for (int t = 0; t < k; ++t) {
        actions_per_step[t] = samples.middleCols(t * ad, ad);
      }
      const auto terminals = rollout_member_batch(ensemble, starts, actions_per_step);

      Eigen::VectorXd scores(pop);
      std::vector<double> dists(terminals.size());
      for (int i = 0; i < pop; ++i) {
        for (std::size_t m = 0; m < terminals.size(); ++m) {
          Vec term(ensemble.state_dim);
          for (int d = 0; d < ensemble.state_dim; ++d) term[d] = terminals[m](i, d);
          dists[m] = metric(term, target);
        }
        scores(i) = quantile_nearest_rank(dists, config.score_quantile);
      }

      std::vector<int> order(pop);
      std::iota(order.begin(), order.end(), 0);
      std::sort(order.begin(), order.end(), [&](int a, int b) {
        return std::tie(scores(a), a) < std::tie(scores(b), b);
      });

      if (scores(order[0]) < best_score) {
        best_score = scores(order[0]);
        best_row = samples.row(order[0]);
      }
      if (best_history) best_history->push_back(best_score);

      Eigen::VectorXd new_mean = Eigen::VectorXd::Zero(dim);
      for (int e = 0; e < n_elite; ++e) new_mean += samples.row(order[e]);
      new_mean /= n_elite;
      Eigen::VectorXd var = Eigen::VectorXd::Zero(dim);
      for (int e = 0; e < n_elite; ++e) {
        const Eigen::VectorXd diff = samples.row(order[e]).transpose() - new_mean;
        var += diff.cwiseProduct(diff);
      }
      mean = new_mean;
      stddev = (var / n_elite).cwiseSqrt().cwiseMax(std_floor);
    }
  }

  PlanResult res;
  res.actions = unflatten(best_row, k, ad);
  res.achieved_distance = best_score;
  res.accepted = best_score < delta;
  // Aggregate per-step model states for the winning sequence.
  const auto trajs = rollout_member_trajectories(ensemble, source, res.actions);
  res.predicted_states.assign(k, Vec(ensemble.state_dim, 0.0));
  for (const auto& traj : trajs) {
    for (int t = 0; t < k; ++t) {
      for (int d = 0; d < ensemble.state_dim; ++d) {
        res.predicted_states[t][d] += traj[t][d];
      }
    }
  }
  for (auto& s : res.predicted_states) {
    for (double& v : s) v /= static_cast<double>(trajs.size());
  }
  return res;
}

PlanResult multi_start_test_edge(const DynamicsEnsemble& ensemble,
                                 const Vec& source, const Vec& target, int k,
                                 double delta, const Metric& metric,
                                 const CemConfig& config, int attempts,
                                 uint64_t rng_seed) {
  if (attempts < 1) throw ConfigError("multi_start_test_edge: attempts must be >= 1");
  PlanResult best;
  best.achieved_distance = std::numeric_limits<double>::infinity();
  for (int j = 0; j < attempts; ++j) {
    PlanResult r = plan_stitch(ensemble, source, target, k, delta, metric,
                               config, derive_seed(rng_seed, 0xa77e, j));
    if (r.achieved_distance < best.achieved_distance) best = std::move(r);
  }
  return best;
}

}  // namespace bats
