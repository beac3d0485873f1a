#pragma once

#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bats/common.hpp"

namespace bats::nn {

/// Fully connected net with ReLU hidden activations and a linear output
/// layer. Rows of the input matrix are samples.
struct Mlp {
  std::vector<Eigen::MatrixXd> W;  // (out, in) per layer
  std::vector<Eigen::VectorXd> b;

  static Mlp make(const std::vector<int>& dims, std::mt19937_64& rng);

  int input_dim() const { return W.empty() ? 0 : static_cast<int>(W.front().cols()); }
  int output_dim() const { return W.empty() ? 0 : static_cast<int>(W.back().rows()); }
  std::size_t layer_count() const { return W.size(); }

  Eigen::MatrixXd forward(const Eigen::MatrixXd& X) const;

  struct Cache {
    std::vector<Eigen::MatrixXd> acts;  // acts[0] = X, acts[l] = layer l output
  };
  Eigen::MatrixXd forward(const Eigen::MatrixXd& X, Cache& cache) const;

  struct Grads {
    std::vector<Eigen::MatrixXd> dW;
    std::vector<Eigen::VectorXd> db;
  };
  /// dY is dLoss/dOutput, same shape as the forward result.
  Grads backward(const Cache& cache, const Eigen::MatrixXd& dY) const;
};

struct SgdMomentum {
  double lr = 1e-2;
  double momentum = 0.9;
  std::vector<Eigen::MatrixXd> vW;
  std::vector<Eigen::VectorXd> vb;

  void init(const Mlp& net);
  void step(Mlp& net, const Mlp::Grads& g);
};

/// Per-column standardization fit on training data.
struct Normalizer {
  Eigen::VectorXd mean;
  Eigen::VectorXd stddev;  // floored at 1e-8

  void fit(const Eigen::MatrixXd& X);
  Eigen::MatrixXd normalize(const Eigen::MatrixXd& X) const;
  Eigen::MatrixXd denormalize(const Eigen::MatrixXd& Xn) const;
  Eigen::VectorXd normalize_row(const Eigen::VectorXd& x) const;
  Eigen::VectorXd denormalize_row(const Eigen::VectorXd& xn) const;
};

/// Differentiable clamp of `raw` into [lo, hi] via softplus on both sides;
/// `grad` is d(value)/d(raw).
void soft_clamp(double raw, double lo, double hi, double& value, double& grad);

// JSON fragments for checkpoint files.
std::string mlp_to_json(const Mlp& net);
Mlp mlp_from_json(const std::string& text);
std::string normalizer_to_json(const Normalizer& n);
Normalizer normalizer_from_json(const std::string& text);

Eigen::VectorXd to_eigen(const Vec& v);
Vec to_vec(const Eigen::VectorXd& v);

}  // namespace bats::nn
