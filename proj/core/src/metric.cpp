#include "bats/metric.hpp"

namespace bats {

Metric euclidean_metric() { return Metric{"euclidean", {}}; }

Metric normalized_metric(const Normalization& norm) {
  Metric m;
  m.name = "normalized";
  m.embed = [norm](const Vec& x) {
    Vec out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      out[i] = (x[i] - norm.mean[i]) / norm.scale[i];
    }
    return out;
  };
  return m;
}

}  // namespace bats
