#include "bats/nn.hpp"

#include <cmath>

#include <json.hpp>

namespace bats::nn {

using nlohmann::json;

Mlp Mlp::make(const std::vector<int>& dims, std::mt19937_64& rng) {
  if (dims.size() < 2) throw ConfigError("mlp: need at least input and output dims");
  Mlp net;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const int in = dims[l];
    const int out = dims[l + 1];
    if (in <= 0 || out <= 0) throw ConfigError("mlp: layer dims must be positive");
    // He-uniform keeps ReLU activations in range at init.
    const double bound = std::sqrt(6.0 / in);
    std::uniform_real_distribution<double> u(-bound, bound);
    Eigen::MatrixXd w(out, in);
    for (int r = 0; r < out; ++r) {
      for (int c = 0; c < in; ++c) w(r, c) = u(rng);
    }
    net.W.push_back(std::move(w));
    net.b.push_back(Eigen::VectorXd::Zero(out));
  }
  return net;
}

Eigen::MatrixXd Mlp::forward(const Eigen::MatrixXd& X) const {
  Eigen::MatrixXd h = X;
  for (std::size_t l = 0; l < W.size(); ++l) {
    Eigen::MatrixXd z = h * W[l].transpose();
    z.rowwise() += b[l].transpose();
    if (l + 1 < W.size()) z = z.cwiseMax(0.0);
    h = std::move(z);
  }
  return h;
}

Eigen::MatrixXd Mlp::forward(const Eigen::MatrixXd& X, Cache& cache) const {
  cache.acts.clear();
  cache.acts.reserve(W.size() + 1);
  cache.acts.push_back(X);
  for (std::size_t l = 0; l < W.size(); ++l) {
    Eigen::MatrixXd z = cache.acts.back() * W[l].transpose();
    z.rowwise() += b[l].transpose();
    if (l + 1 < W.size()) z = z.cwiseMax(0.0);
    cache.acts.push_back(std::move(z));
  }
  return cache.acts.back();
}

Mlp::Grads Mlp::backward(const Cache& cache, const Eigen::MatrixXd& dY) const {
  Grads g;
  g.dW.resize(W.size());
  g.db.resize(W.size());
  Eigen::MatrixXd delta = dY;
  for (int l = static_cast<int>(W.size()) - 1; l >= 0; --l) {
    g.dW[l].noalias() = delta.transpose() * cache.acts[l];
    g.db[l] = delta.colwise().sum();
    if (l > 0) {
      Eigen::MatrixXd prev = delta * W[l];
      // ReLU mask: the stored activation is already post-ReLU.
      delta = prev.cwiseProduct(
          (cache.acts[l].array() > 0.0).cast<double>().matrix());
    }
  }
  return g;
}

void SgdMomentum::init(const Mlp& net) {
  vW.clear();
  vb.clear();
  for (std::size_t l = 0; l < net.W.size(); ++l) {
    vW.push_back(Eigen::MatrixXd::Zero(net.W[l].rows(), net.W[l].cols()));
    vb.push_back(Eigen::VectorXd::Zero(net.b[l].size()));
  }
}

void SgdMomentum::step(Mlp& net, const Mlp::Grads& g) {
  for (std::size_t l = 0; l < net.W.size(); ++l) {
    vW[l] = momentum * vW[l] - lr * g.dW[l];
    vb[l] = momentum * vb[l] - lr * g.db[l];
    net.W[l] += vW[l];
    net.b[l] += vb[l];
  }
}

namespace {

double softplus(double x) {
  if (x > 30.0) return x;
  if (x < -30.0) return std::exp(x);
  return std::log1p(std::exp(x));
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double z = std::exp(x);
  return z / (1.0 + z);
}

}  // namespace

void soft_clamp(double raw, double lo, double hi, double& value, double& grad) {
  const double u = hi - raw;
  const double mid = hi - softplus(u);
  const double w = mid - lo;
  // The softplus pair can overshoot the interval by ~exp(lo - hi); pin the
  // value, the gradient there is already negligible.
  value = std::min(hi, std::max(lo, lo + softplus(w)));
  grad = sigmoid(u) * sigmoid(w);
}

void Normalizer::fit(const Eigen::MatrixXd& X) {
  mean = X.colwise().mean();
  Eigen::MatrixXd centered = X.rowwise() - mean.transpose();
  stddev = (centered.array().square().colwise().mean()).sqrt();
  stddev = stddev.cwiseMax(1e-8);
}

Eigen::MatrixXd Normalizer::normalize(const Eigen::MatrixXd& X) const {
  return (X.rowwise() - mean.transpose()).array().rowwise() /
         stddev.transpose().array();
}

Eigen::MatrixXd Normalizer::denormalize(const Eigen::MatrixXd& Xn) const {
  return (Xn.array().rowwise() * stddev.transpose().array()).matrix().rowwise() +
         mean.transpose();
}

Eigen::VectorXd Normalizer::normalize_row(const Eigen::VectorXd& x) const {
  return (x - mean).cwiseQuotient(stddev);
}

Eigen::VectorXd Normalizer::denormalize_row(const Eigen::VectorXd& xn) const {
  return xn.cwiseProduct(stddev) + mean;
}

namespace {

json matrix_to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

Eigen::MatrixXd matrix_from_json(const json& j) {
  const std::size_t rows = j.size();
  const std::size_t cols = rows == 0 ? 0 : j[0].size();
  Eigen::MatrixXd m(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) m(r, c) = j[r][c].get<double>();
  }
  return m;
}

json vector_to_json(const Eigen::VectorXd& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

Eigen::VectorXd vector_from_json(const json& j) {
  Eigen::VectorXd v(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) v(i) = j[i].get<double>();
  return v;
}

}  // namespace

std::string mlp_to_json(const Mlp& net) {
  json j;
  j["W"] = json::array();
  j["b"] = json::array();
  for (std::size_t l = 0; l < net.W.size(); ++l) {
    j["W"].push_back(matrix_to_json(net.W[l]));
    j["b"].push_back(vector_to_json(net.b[l]));
  }
  return j.dump();
}

Mlp mlp_from_json(const std::string& text) {
  const json j = json::parse(text);
  Mlp net;
  for (std::size_t l = 0; l < j.at("W").size(); ++l) {
    net.W.push_back(matrix_from_json(j["W"][l]));
    net.b.push_back(vector_from_json(j["b"][l]));
  }
  return net;
}

std::string normalizer_to_json(const Normalizer& n) {
  json j;
  j["mean"] = vector_to_json(n.mean);
  j["stddev"] = vector_to_json(n.stddev);
  return j.dump();
}

Normalizer normalizer_from_json(const std::string& text) {
  const json j = json::parse(text);
  Normalizer n;
  n.mean = vector_from_json(j.at("mean"));
  n.stddev = vector_from_json(j.at("stddev"));
  return n;
}

Eigen::VectorXd to_eigen(const Vec& v) {
  Eigen::VectorXd out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out(i) = v[i];
  return out;
}

Vec to_vec(const Eigen::VectorXd& v) {
  Vec out(v.size());
  for (Eigen::Index i = 0; i < v.size(); ++i) out[i] = v(i);
  return out;
}

}  // namespace bats::nn
