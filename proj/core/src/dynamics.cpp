#include "bats/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

namespace bats {

using nlohmann::json;

namespace {

struct Matrices {
  Eigen::MatrixXd X;       // [s, a], normalized after fit
  Eigen::MatrixXd delta;   // s' - s, normalized after fit
  Eigen::VectorXd reward;  // normalized after fit
};

Matrices flatten(const TrajectoryDataset& data) {
  const std::size_t n = data.num_records();
  Matrices m;
  m.X.resize(n, data.state_dim + data.action_dim);
  m.delta.resize(n, data.state_dim);
  m.reward.resize(n);
  std::size_t row = 0;
  for (const auto& traj : data.trajectories) {
    for (const DataRecord& rec : traj) {
      for (int d = 0; d < data.state_dim; ++d) {
        m.X(row, d) = rec.s[d];
        m.delta(row, d) = rec.s2[d] - rec.s[d];
      }
      for (int d = 0; d < data.action_dim; ++d) {
        m.X(row, data.state_dim + d) = rec.a[d];
      }
      m.reward(row) = rec.r;
      ++row;
    }
  }
  return m;
}

/// Gaussian negative log likelihood over normalized deltas; fills dY when
/// grads is not null. Constant terms are dropped.
double nll_loss(const Eigen::MatrixXd& out, const Eigen::MatrixXd& target,
                double lv_min, double lv_max, Eigen::MatrixXd* dY) {
  const Eigen::Index B = out.rows();
  const Eigen::Index D = target.cols();
  double loss = 0.0;
  if (dY) dY->setZero(out.rows(), out.cols());
  for (Eigen::Index i = 0; i < B; ++i) {
    for (Eigen::Index d = 0; d < D; ++d) {
      const double mu = out(i, d);
      double lv, lv_grad;
      nn::soft_clamp(out(i, D + d), lv_min, lv_max, lv, lv_grad);
      const double e = target(i, d) - mu;
      const double inv_var = std::exp(-lv);
      loss += 0.5 * (e * e * inv_var + lv);
      if (dY) {
        (*dY)(i, d) = -e * inv_var / B;
        (*dY)(i, D + d) = 0.5 * (1.0 - e * e * inv_var) * lv_grad / B;
      }
    }
  }
  return loss / B;
}

struct TrainOutcome {
  nn::Mlp net;
  double best_val = 0.0;
};

TrainOutcome train_net(const std::vector<int>& dims, const Eigen::MatrixXd& Xtr,
                       const Eigen::MatrixXd& Ytr, const Eigen::MatrixXd& Xval,
                       const Eigen::MatrixXd& Yval, const DynamicsConfig& cfg,
                       bool gaussian, uint64_t seed, int member_index) {
  std::mt19937_64 init_rng(derive_seed(seed, 1));
  nn::Mlp net = nn::Mlp::make(dims, init_rng);
  nn::SgdMomentum opt{cfg.lr, cfg.momentum};
  opt.init(net);

  std::mt19937_64 shuffle_rng(derive_seed(seed, 2));
  std::vector<Eigen::Index> order(Xtr.rows());
  std::iota(order.begin(), order.end(), 0);

  auto eval = [&](const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y) {
    const Eigen::MatrixXd out = net.forward(X);
    if (gaussian) return nll_loss(out, Y, cfg.logvar_min, cfg.logvar_max, nullptr);
    return 0.5 * (out - Y).array().square().sum() / X.rows();
  };

  nn::Mlp best = net;
  double best_val = eval(Xval, Yval);
  int patience = 0;

  const Eigen::Index B = cfg.batch_size;
  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    for (Eigen::Index at = 0; at + B <= static_cast<Eigen::Index>(order.size());
         at += B) {
      Eigen::MatrixXd xb(B, Xtr.cols());
      Eigen::MatrixXd yb(B, Ytr.cols());
      for (Eigen::Index i = 0; i < B; ++i) {
        xb.row(i) = Xtr.row(order[at + i]);
        yb.row(i) = Ytr.row(order[at + i]);
      }
      nn::Mlp::Cache cache;
      const Eigen::MatrixXd out = net.forward(xb, cache);
      Eigen::MatrixXd dY;
      double loss;
      if (gaussian) {
        loss = nll_loss(out, yb, cfg.logvar_min, cfg.logvar_max, &dY);
      } else {
        dY = (out - yb) / B;
        loss = 0.5 * (out - yb).array().square().sum() / B;
      }
      if (!std::isfinite(loss)) {
        throw NumericalError("dynamics: non-finite loss in member " +
                             std::to_string(member_index));
      }
      nn::Mlp::Grads g = net.backward(cache, dY);
      if (cfg.grad_clip > 0.0) {
        double sq = 0.0;
        for (std::size_t l = 0; l < g.dW.size(); ++l) {
          sq += g.dW[l].squaredNorm() + g.db[l].squaredNorm();
        }
        const double norm = std::sqrt(sq);
        if (norm > cfg.grad_clip) {
          const double scale = cfg.grad_clip / norm;
          for (std::size_t l = 0; l < g.dW.size(); ++l) {
            g.dW[l] *= scale;
            g.db[l] *= scale;
          }
        }
      }
      opt.step(net, g);
    }
    const double val = eval(Xval, Yval);
    if (val < best_val - 1e-9) {
      best_val = val;
      best = net;
      patience = 0;
    } else if (++patience >= cfg.plateau_patience) {
      break;
    }
  }
  return {std::move(best), best_val};
}

}  // namespace

double DynamicsEnsemble::predict_reward(const Vec& s, const Vec& a) const {
  Eigen::MatrixXd x(1, state_dim + action_dim);
  for (int d = 0; d < state_dim; ++d) x(0, d) = s[d];
  for (int d = 0; d < action_dim; ++d) x(0, state_dim + d) = a[d];
  const double rn = reward_net.forward(in_norm.normalize(x))(0, 0);
  return rn * reward_std + reward_mean;
}

DynamicsEnsemble train_ensemble(const TrajectoryDataset& data,
                                const DynamicsConfig& config, uint64_t seed) {
  if (config.n_kept > config.n_trained || config.n_trained < 1) {
    throw ConfigError("dynamics: need 1 <= n_kept <= n_trained");
  }
  const Matrices all = flatten(data);
  const Eigen::Index N = all.X.rows();
  const Eigen::Index val_n = std::min<Eigen::Index>(
      config.validation_size, std::max<Eigen::Index>(1, N / 10));
  if (N < val_n + config.batch_size) {
    throw ConfigError("dynamics: dataset too small for validation + one batch");
  }

  // One shared validation split; members differ by bootstrap and init.
  std::vector<Eigen::Index> perm(N);
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 split_rng(derive_seed(seed, 0xda7a));
  std::shuffle(perm.begin(), perm.end(), split_rng);

  const Eigen::Index train_n = N - val_n;
  Eigen::MatrixXd Xtr(train_n, all.X.cols()), Xval(val_n, all.X.cols());
  Eigen::MatrixXd Dtr(train_n, all.delta.cols()), Dval(val_n, all.delta.cols());
  Eigen::VectorXd Rtr(train_n), Rval(val_n);
  for (Eigen::Index i = 0; i < val_n; ++i) {
    Xval.row(i) = all.X.row(perm[i]);
    Dval.row(i) = all.delta.row(perm[i]);
    Rval(i) = all.reward(perm[i]);
  }
  for (Eigen::Index i = 0; i < train_n; ++i) {
    Xtr.row(i) = all.X.row(perm[val_n + i]);
    Dtr.row(i) = all.delta.row(perm[val_n + i]);
    Rtr(i) = all.reward(perm[val_n + i]);
  }

  DynamicsEnsemble ens;
  ens.state_dim = data.state_dim;
  ens.action_dim = data.action_dim;
  ens.n_trained = config.n_trained;
  ens.n_kept = config.n_kept;
  ens.logvar_min = config.logvar_min;
  ens.logvar_max = config.logvar_max;
  ens.in_norm.fit(Xtr);
  ens.delta_norm.fit(Dtr);
  ens.reward_mean = Rtr.mean();
  ens.reward_std =
      std::max(1e-8, std::sqrt((Rtr.array() - ens.reward_mean).square().mean()));

  const Eigen::MatrixXd Xtr_n = ens.in_norm.normalize(Xtr);
  const Eigen::MatrixXd Xval_n = ens.in_norm.normalize(Xval);
  const Eigen::MatrixXd Dtr_n = ens.delta_norm.normalize(Dtr);
  const Eigen::MatrixXd Dval_n = ens.delta_norm.normalize(Dval);

  std::vector<int> dims;
  dims.push_back(data.state_dim + data.action_dim);
  for (int h : config.hidden) dims.push_back(h);
  dims.push_back(2 * data.state_dim);  // mean + log-variance heads

  std::vector<DynamicsMember> trained(config.n_trained);
  parallel_for(config.n_trained, [&](std::size_t m) {
    // Bootstrap resample of the training split.
    std::mt19937_64 boot_rng(derive_seed(seed, m, 3));
    std::uniform_int_distribution<Eigen::Index> pick(0, train_n - 1);
    Eigen::MatrixXd Xb(train_n, Xtr_n.cols());
    Eigen::MatrixXd Db(train_n, Dtr_n.cols());
    for (Eigen::Index i = 0; i < train_n; ++i) {
      const Eigen::Index j = pick(boot_rng);
      Xb.row(i) = Xtr_n.row(j);
      Db.row(i) = Dtr_n.row(j);
    }
    TrainOutcome out =
        train_net(dims, Xb, Db, Xval_n, Dval_n, config, /*gaussian=*/true,
                  derive_seed(seed, m, 7), static_cast<int>(m));
    trained[m] = DynamicsMember{std::move(out.net), out.best_val,
                                static_cast<int>(m)};
  });

  ens.validation_losses.resize(config.n_trained);
  for (const auto& m : trained) ens.validation_losses[m.index] = m.validation_loss;

  std::sort(trained.begin(), trained.end(), [](const auto& a, const auto& b) {
    return std::tie(a.validation_loss, a.index) < std::tie(b.validation_loss, b.index);
  });
  trained.resize(config.n_kept);
  ens.members = std::move(trained);

  // Reward head, squared error on normalized rewards.
  std::vector<int> rdims;
  rdims.push_back(data.state_dim + data.action_dim);
  for (int h : config.hidden) rdims.push_back(h);
  rdims.push_back(1);
  const Eigen::MatrixXd Rtr_n =
      ((Rtr.array() - ens.reward_mean) / ens.reward_std).matrix();
  const Eigen::MatrixXd Rval_n =
      ((Rval.array() - ens.reward_mean) / ens.reward_std).matrix();
  TrainOutcome rout = train_net(rdims, Xtr_n, Rtr_n, Xval_n, Rval_n, config,
                                /*gaussian=*/false, derive_seed(seed, 0xbeef),
                                -1);
  ens.reward_net = std::move(rout.net);
  return ens;
}

namespace {

Eigen::MatrixXd member_mean_step(const DynamicsEnsemble& ens,
                                 const nn::Mlp& net, const Eigen::MatrixXd& S,
                                 const Eigen::MatrixXd& A) {
  Eigen::MatrixXd X(S.rows(), S.cols() + A.cols());
  X << S, A;
  const Eigen::MatrixXd out = net.forward(ens.in_norm.normalize(X));
  const Eigen::MatrixXd mu_n = out.leftCols(ens.state_dim);
  return S + ens.delta_norm.denormalize(mu_n);
}

void check_dims(const DynamicsEnsemble& ens, const Vec& s, const Vec& a) {
  if (static_cast<int>(s.size()) != ens.state_dim ||
      static_cast<int>(a.size()) != ens.action_dim) {
    throw ConfigError("dynamics: state or action dimension mismatch");
  }
}

}  // namespace

Prediction predict(const DynamicsEnsemble& ensemble, const Vec& state,
                   const Vec& action) {
  if (ensemble.members.empty()) throw ConfigError("dynamics: ensemble is empty");
  check_dims(ensemble, state, action);
  Eigen::MatrixXd S(1, ensemble.state_dim);
  Eigen::MatrixXd A(1, ensemble.action_dim);
  for (int d = 0; d < ensemble.state_dim; ++d) S(0, d) = state[d];
  for (int d = 0; d < ensemble.action_dim; ++d) A(0, d) = action[d];

  Prediction pred;
  Vec agg(ensemble.state_dim, 0.0);
  for (const auto& m : ensemble.members) {
    const Eigen::MatrixXd next = member_mean_step(ensemble, m.net, S, A);
    Vec row(ensemble.state_dim);
    for (int d = 0; d < ensemble.state_dim; ++d) {
      row[d] = next(0, d);
      agg[d] += next(0, d);
    }
    pred.member_means.push_back(std::move(row));
  }
  for (double& v : agg) v /= static_cast<double>(ensemble.members.size());
  pred.aggregate = std::move(agg);
  return pred;
}

std::vector<Eigen::MatrixXd> rollout_member_batch(
    const DynamicsEnsemble& ensemble, const Eigen::MatrixXd& starts,
    const std::vector<Eigen::MatrixXd>& actions_per_step) {
  std::vector<Eigen::MatrixXd> states(ensemble.members.size(), starts);
  for (const Eigen::MatrixXd& A : actions_per_step) {
    for (std::size_t m = 0; m < ensemble.members.size(); ++m) {
      states[m] = member_mean_step(ensemble, ensemble.members[m].net, states[m], A);
    }
  }
  return states;
}

std::vector<std::vector<Vec>> rollout_member_trajectories(
    const DynamicsEnsemble& ensemble, const Vec& start,
    const std::vector<Vec>& actions) {
  std::vector<std::vector<Vec>> out(ensemble.members.size());
  Eigen::MatrixXd S(1, ensemble.state_dim);
  for (std::size_t m = 0; m < ensemble.members.size(); ++m) {
    for (int d = 0; d < ensemble.state_dim; ++d) S(0, d) = start[d];
    Eigen::MatrixXd cur = S;
    for (const Vec& a : actions) {
      Eigen::MatrixXd A(1, ensemble.action_dim);
      for (int d = 0; d < ensemble.action_dim; ++d) A(0, d) = a[d];
      cur = member_mean_step(ensemble, ensemble.members[m].net, cur, A);
      Vec row(ensemble.state_dim);
      for (int d = 0; d < ensemble.state_dim; ++d) row[d] = cur(0, d);
      out[m].push_back(std::move(row));
    }
  }
  return out;
}

double quantile_nearest_rank(std::vector<double> values, double q) {
  if (values.empty()) throw ConfigError("quantile: empty sample");
  if (!(q > 0.0 && q <= 1.0)) throw ConfigError("quantile: q must be in (0,1]");
  std::sort(values.begin(), values.end());
  const std::size_t rank = static_cast<std::size_t>(
      std::ceil(q * static_cast<double>(values.size())));
  return values[std::max<std::size_t>(rank, 1) - 1];
}

double member_quantile_distance(const DynamicsEnsemble& ensemble,
                                const Vec& state,
                                const std::vector<Vec>& actions,
                                const Vec& target, double q,
                                const Metric& metric) {
  if (actions.empty()) {
    throw ConfigError("member_quantile_distance: empty action sequence");
  }
  check_dims(ensemble, state, actions[0]);
  const auto trajs = rollout_member_trajectories(ensemble, state, actions);
  std::vector<double> dists;
  dists.reserve(trajs.size());
  for (const auto& traj : trajs) dists.push_back(metric(traj.back(), target));
  return quantile_nearest_rank(std::move(dists), q);
}

namespace {
constexpr const char* kDynFormat = "bats-dynamics";
constexpr int kDynVersion = 1;
}  // namespace

void save_ensemble(const DynamicsEnsemble& ens, const std::string& path) {
  json j;
  j["format"] = kDynFormat;
  j["version"] = kDynVersion;
  j["state_dim"] = ens.state_dim;
  j["action_dim"] = ens.action_dim;
  j["n_trained"] = ens.n_trained;
  j["n_kept"] = ens.n_kept;
  j["logvar_min"] = ens.logvar_min;
  j["logvar_max"] = ens.logvar_max;
  j["reward_mean"] = ens.reward_mean;
  j["reward_std"] = ens.reward_std;
  j["validation_losses"] = ens.validation_losses;
  j["in_norm"] = json::parse(nn::normalizer_to_json(ens.in_norm));
  j["delta_norm"] = json::parse(nn::normalizer_to_json(ens.delta_norm));
  j["reward_net"] = json::parse(nn::mlp_to_json(ens.reward_net));
  j["members"] = json::array();
  for (const auto& m : ens.members) {
    j["members"].push_back({{"index", m.index},
                            {"validation_loss", m.validation_loss},
                            {"net", json::parse(nn::mlp_to_json(m.net))}});
  }
  std::ofstream out(path);
  if (!out) throw MissingArtifactError("dynamics: cannot open " + path + " for writing");
  out << j.dump() << "\n";
}

DynamicsEnsemble load_ensemble(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifactError("dynamics: cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  json j;
  try {
    j = json::parse(ss.str());
  } catch (const json::exception& e) {
    throw ConfigError(std::string("dynamics: parse failure: ") + e.what());
  }
  if (j.value("format", "") != kDynFormat || j.value("version", -1) != kDynVersion) {
    throw ConfigError("dynamics: unknown checkpoint format or version");
  }
  DynamicsEnsemble ens;
  ens.state_dim = j.at("state_dim").get<int>();
  ens.action_dim = j.at("action_dim").get<int>();
  ens.n_trained = j.at("n_trained").get<int>();
  ens.n_kept = j.at("n_kept").get<int>();
  ens.logvar_min = j.at("logvar_min").get<double>();
  ens.logvar_max = j.at("logvar_max").get<double>();
  ens.reward_mean = j.at("reward_mean").get<double>();
  ens.reward_std = j.at("reward_std").get<double>();
  ens.validation_losses = j.at("validation_losses").get<std::vector<double>>();
  ens.in_norm = nn::normalizer_from_json(j.at("in_norm").dump());
  ens.delta_norm = nn::normalizer_from_json(j.at("delta_norm").dump());
  ens.reward_net = nn::mlp_from_json(j.at("reward_net").dump());
  for (const auto& jm : j.at("members")) {
    DynamicsMember m;
    m.index = jm.at("index").get<int>();
    m.validation_loss = jm.at("validation_loss").get<double>();
    m.net = nn::mlp_from_json(jm.at("net").dump());
    ens.members.push_back(std::move(m));
  }
  return ens;
}

}  // namespace bats
