#pragma once

#include <functional>
#include <string>

#include "bats/common.hpp"

namespace bats {

struct Normalization {
  Vec mean;
  Vec scale;  // per-dimension; entries floored away from zero
};

/// Distance over states. All supported metrics are an L2 norm in some
/// embedding space: identity (euclidean), per-dimension standardization
/// (normalized), or a learned encoder (bisim).
struct Metric {
  std::string name = "euclidean";
  /// Empty means identity.
  std::function<Vec(const Vec&)> embed;

  Vec embedded(const Vec& x) const { return embed ? embed(x) : x; }
  double operator()(const Vec& a, const Vec& b) const {
    if (!embed) return l2_distance(a, b);
    return l2_distance(embed(a), embed(b));
  }
};

Metric euclidean_metric();
Metric normalized_metric(const Normalization& norm);

}  // namespace bats
