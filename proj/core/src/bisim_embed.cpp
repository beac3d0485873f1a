#include "bats/bisim_embed.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace bats {

using nlohmann::json;

Vec BisimEmbedding::encode(const Vec& state) const {
  Eigen::MatrixXd x(1, state_dim);
  for (int d = 0; d < state_dim; ++d) x(0, d) = state[d];
  const Eigen::MatrixXd z = encoder.forward(state_norm.normalize(x));
  return nn::to_vec(z.row(0).transpose());
}

BisimEmbedding train_bisim(const TrajectoryDataset& data,
                           const BisimEmbedConfig& config, uint64_t seed) {
  const std::size_t N = data.num_records();
  if (N == 0) throw ConfigError("train_bisim: empty dataset");

  Eigen::MatrixXd S(N, data.state_dim), S2(N, data.state_dim);
  Eigen::MatrixXd A(N, data.action_dim);
  Eigen::VectorXd R(N);
  std::size_t row = 0;
  for (const auto& traj : data.trajectories) {
    for (const DataRecord& rec : traj) {
      for (int d = 0; d < data.state_dim; ++d) {
        S(row, d) = rec.s[d];
        S2(row, d) = rec.s2[d];
      }
      for (int d = 0; d < data.action_dim; ++d) A(row, d) = rec.a[d];
      R(row) = rec.r;
      ++row;
    }
  }

  BisimEmbedding emb;
  emb.state_dim = data.state_dim;
  emb.action_dim = data.action_dim;
  emb.latent_dim = config.latent_dim;
  emb.state_norm.fit(S);
  const Eigen::MatrixXd Sn = emb.state_norm.normalize(S);
  const Eigen::MatrixXd S2n = emb.state_norm.normalize(S2);

  std::vector<int> enc_dims{data.state_dim};
  for (int h : config.encoder_hidden) enc_dims.push_back(h);
  enc_dims.push_back(config.latent_dim);
  std::vector<int> model_dims{config.latent_dim + data.action_dim};
  for (int h : config.model_hidden) model_dims.push_back(h);
  model_dims.push_back(config.latent_dim + 1);  // next latent + reward

  std::mt19937_64 enc_rng(derive_seed(seed, 1));
  std::mt19937_64 model_rng(derive_seed(seed, 2));
  emb.encoder = nn::Mlp::make(enc_dims, enc_rng);
  emb.latent_model = nn::Mlp::make(model_dims, model_rng);

  nn::SgdMomentum enc_opt{config.lr, config.momentum};
  nn::SgdMomentum model_opt{config.lr, config.momentum};
  enc_opt.init(emb.encoder);
  model_opt.init(emb.latent_model);

  std::mt19937_64 batch_rng(derive_seed(seed, 3));
  std::uniform_int_distribution<std::size_t> pick(0, N - 1);
  const int B = config.batch_size;
  const int L = config.latent_dim;
  const double gamma = config.gamma;
  double initial_loss = -1.0;

  for (int update = 0; update < config.updates; ++update) {
    std::vector<std::size_t> idx(2 * B);
    for (auto& v : idx) v = pick(batch_rng);

    // Rows: [s_i | s_j | s2_i | s2_j]; only the first 2B rows get gradients.
    Eigen::MatrixXd X(4 * B, data.state_dim);
    Eigen::MatrixXd Abat(2 * B, data.action_dim);
    Eigen::VectorXd Rbat(2 * B);
    for (int i = 0; i < 2 * B; ++i) {
      X.row(i) = Sn.row(idx[i]);
      X.row(2 * B + i) = S2n.row(idx[i]);
      Abat.row(i) = A.row(idx[i]);
      Rbat(i) = R(idx[i]);
    }

    nn::Mlp::Cache enc_cache;
    const Eigen::MatrixXd Z = emb.encoder.forward(X, enc_cache);

    Eigen::MatrixXd Min(2 * B, L + data.action_dim);
    Min << Z.topRows(2 * B), Abat;  // values only; no gradient into the encoder
    nn::Mlp::Cache model_cache;
    const Eigen::MatrixXd Mout = emb.latent_model.forward(Min, model_cache);

    // Pair loss on latent distances against the stop-gradient target
    // |r_i - r_j| + gamma * ||zhat'_i - zhat'_j||.
    Eigen::MatrixXd dZ = Eigen::MatrixXd::Zero(4 * B, L);
    double enc_loss = 0.0;
    for (int p = 0; p < B; ++p) {
      const int i = p, j = B + p;
      const Eigen::VectorXd diff = Z.row(i) - Z.row(j);
      const double u = std::sqrt(diff.squaredNorm() + 1e-12);
      const double rhat_i = Mout(i, L), rhat_j = Mout(j, L);
      const Eigen::VectorXd zdiff =
          Mout.row(i).head(L) - Mout.row(j).head(L);
      const double target =
          std::abs(rhat_i - rhat_j) + gamma * std::sqrt(zdiff.squaredNorm());
      const double err = u - target;
      enc_loss += err * err;
      const Eigen::VectorXd g = (2.0 * err / (B * u)) * diff;
      dZ.row(i) += g.transpose();
      dZ.row(j) -= g.transpose();
    }
    enc_loss /= B;

    // Model fit: predicted next latents against stop-gradient encodings of
    // the actual next states, and predicted rewards against logged rewards.
    Eigen::MatrixXd dM = Eigen::MatrixXd::Zero(2 * B, L + 1);
    double model_loss = 0.0;
    for (int i = 0; i < 2 * B; ++i) {
      const Eigen::VectorXd zerr =
          Mout.row(i).head(L).transpose() - Z.row(2 * B + i).head(L).transpose();
      const double rerr = Mout(i, L) - Rbat(i);
      model_loss += zerr.squaredNorm() + rerr * rerr;
      dM.row(i).head(L) = (2.0 / (2 * B)) * zerr.transpose();
      dM(i, L) = (2.0 / (2 * B)) * rerr;
    }
    model_loss /= 2 * B;

    const double total = enc_loss + model_loss;
    if (!std::isfinite(total)) throw NumericalError("train_bisim: non-finite loss");
    if (initial_loss < 0.0) initial_loss = total;
    if (total > 10.0 * initial_loss + 1e-9) {
      throw NumericalError("train_bisim: loss diverged");
    }
    emb.loss_history.push_back(total);

    enc_opt.step(emb.encoder, emb.encoder.backward(enc_cache, dZ));
    model_opt.step(emb.latent_model, emb.latent_model.backward(model_cache, dM));
  }
  return emb;
}

double embed_distance(const BisimEmbedding& embedding, const Vec& a,
                      const Vec& b) {
  if (static_cast<int>(a.size()) != embedding.state_dim ||
      static_cast<int>(b.size()) != embedding.state_dim) {
    throw ConfigError("embed_distance: state dimension mismatch");
  }
  return l2_distance(embedding.encode(a), embedding.encode(b));
}

Metric bisim_metric(std::shared_ptr<const BisimEmbedding> embedding) {
  Metric m;
  m.name = "bisim";
  m.embed = [embedding](const Vec& x) { return embedding->encode(x); };
  return m;
}

namespace {
constexpr const char* kBisimFormat = "bats-bisim";
constexpr int kBisimVersion = 1;
}  // namespace

void save_bisim(const BisimEmbedding& emb, const std::string& path) {
  json j;
  j["format"] = kBisimFormat;
  j["version"] = kBisimVersion;
  j["state_dim"] = emb.state_dim;
  j["action_dim"] = emb.action_dim;
  j["latent_dim"] = emb.latent_dim;
  j["encoder"] = json::parse(nn::mlp_to_json(emb.encoder));
  j["latent_model"] = json::parse(nn::mlp_to_json(emb.latent_model));
  j["state_norm"] = json::parse(nn::normalizer_to_json(emb.state_norm));
  std::ofstream out(path);
  if (!out) throw MissingArtifactError("bisim: cannot open " + path + " for writing");
  out << j.dump() << "\n";
}

BisimEmbedding load_bisim(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifactError("bisim: cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  json j;
  try {
    j = json::parse(ss.str());
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bisim: parse failure: ") + e.what());
  }
  if (j.value("format", "") != kBisimFormat || j.value("version", -1) != kBisimVersion) {
    throw ConfigError("bisim: unknown checkpoint format or version");
  }
  BisimEmbedding emb;
  emb.state_dim = j.at("state_dim").get<int>();
  emb.action_dim = j.at("action_dim").get<int>();
  emb.latent_dim = j.at("latent_dim").get<int>();
  emb.encoder = nn::mlp_from_json(j.at("encoder").dump());
  emb.latent_model = nn::mlp_from_json(j.at("latent_model").dump());
  emb.state_norm = nn::normalizer_from_json(j.at("state_norm").dump());
  return emb;
}

}  // namespace bats
