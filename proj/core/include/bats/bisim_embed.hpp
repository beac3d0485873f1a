#pragma once

#include <memory>
#include <string>
#include <vector>

#include "bats/dataset.hpp"
#include "bats/metric.hpp"
#include "bats/nn.hpp"

namespace bats {

struct BisimEmbedConfig {
  int latent_dim = 6;
  std::vector<int> encoder_hidden{256, 128, 64};
  std::vector<int> model_hidden{64, 64};
  double gamma = 0.99;
  int batch_size = 128;
  int updates = 3000;
  double lr = 0.01;
  double momentum = 0.9;
};

/// Encoder whose latent L2 distances approximate the on-policy bisimulation
/// metric of the logged behavior. The latent model predicts next latents and
/// rewards deterministically, so the Wasserstein term of the pair loss
/// collapses to a latent point distance.
struct BisimEmbedding {
  nn::Mlp encoder;       // normalized state -> latent
  nn::Mlp latent_model;  // (latent, action) -> (next latent, reward)
  nn::Normalizer state_norm;
  int latent_dim = 0;
  int state_dim = 0;
  int action_dim = 0;
  std::vector<double> loss_history;

  Vec encode(const Vec& state) const;
};

BisimEmbedding train_bisim(const TrajectoryDataset& data,
                           const BisimEmbedConfig& config, uint64_t seed);

double embed_distance(const BisimEmbedding& embedding, const Vec& a,
                      const Vec& b);

/// Metric adapter for neighbor graphs and planning.
Metric bisim_metric(std::shared_ptr<const BisimEmbedding> embedding);

void save_bisim(const BisimEmbedding& embedding, const std::string& path);
BisimEmbedding load_bisim(const std::string& path);

}  // namespace bats
