#include "bats/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>

#include <json.hpp>

namespace bats {

using nlohmann::json;

std::size_t TrajectoryDataset::num_records() const {
  std::size_t n = 0;
  for (const auto& t : trajectories) n += t.size();
  return n;
}

void TrajectoryDataset::validate() const {
  for (std::size_t j = 0; j < trajectories.size(); ++j) {
    const auto& traj = trajectories[j];
    if (traj.empty()) {
      throw ConfigError("dataset: trajectory " + std::to_string(j) + " is empty");
    }
    for (std::size_t i = 0; i < traj.size(); ++i) {
      const DataRecord& rec = traj[i];
      const std::string where =
          " at (traj " + std::to_string(j) + ", record " + std::to_string(i) + ")";
      if (static_cast<int>(rec.s.size()) != state_dim ||
          static_cast<int>(rec.s2.size()) != state_dim) {
        throw ConfigError("dataset: state dimension mismatch" + where);
      }
      if (static_cast<int>(rec.a.size()) != action_dim) {
        throw ConfigError("dataset: action dimension mismatch" + where);
      }
      if (!all_finite(rec.s) || !all_finite(rec.a) || !all_finite(rec.s2) ||
          !std::isfinite(rec.r)) {
        throw ConfigError("dataset: non-finite value" + where);
      }
      if (i + 1 < traj.size() && bit_key(rec.s2) != bit_key(traj[i + 1].s)) {
        throw ConfigError("dataset: broken chaining" + where);
      }
    }
  }
}

void TrajectoryDataset::compute_normalization() {
  const StateIndex idx = collect_states(*this);
  const std::size_t n = idx.states.size();
  normalization.mean.assign(state_dim, 0.0);
  normalization.scale.assign(state_dim, 1.0);
  if (n == 0) return;
  for (const Vec& s : idx.states) {
    for (int d = 0; d < state_dim; ++d) normalization.mean[d] += s[d];
  }
  for (double& m : normalization.mean) m /= static_cast<double>(n);
  Vec var(state_dim, 0.0);
  for (const Vec& s : idx.states) {
    for (int d = 0; d < state_dim; ++d) {
      const double c = s[d] - normalization.mean[d];
      var[d] += c * c;
    }
  }
  for (int d = 0; d < state_dim; ++d) {
    const double sd = std::sqrt(var[d] / static_cast<double>(n));
    normalization.scale[d] = sd > 1e-12 ? sd : 1.0;
  }
}

TrajectoryDataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifactError("dataset: cannot open " + path);

  std::string line;
  if (!std::getline(in, line)) throw ConfigError("dataset: empty file " + path);
  json header;
  try {
    header = json::parse(line);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("dataset: bad header line: ") + e.what());
  }

  TrajectoryDataset data;
  data.state_dim = header.value("state_dim", -1);
  data.action_dim = header.value("action_dim", -1);
  if (data.state_dim <= 0 || data.action_dim <= 0) {
    throw ConfigError("dataset: header must declare positive state_dim and action_dim");
  }

  long prev_traj = -1;
  long prev_t = -1;
  std::size_t n_records = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ConfigError("dataset: bad record after (traj " + std::to_string(prev_traj) +
                        ", t " + std::to_string(prev_t) + "): " + e.what());
    }
    const long traj = j.value("traj", -1L);
    const long t = j.value("t", -1L);
    if (traj < prev_traj || (traj == prev_traj && t <= prev_t)) {
      throw ConfigError("dataset: records not sorted by (traj, t) near traj " +
                        std::to_string(traj));
    }
    if (traj != prev_traj) data.trajectories.emplace_back();
    prev_traj = traj;
    prev_t = t;

    DataRecord rec;
    try {
      rec.s = j.at("s").get<Vec>();
      rec.a = j.at("a").get<Vec>();
      rec.r = j.at("r").get<double>();
      rec.s2 = j.at("s2").get<Vec>();
      rec.terminal = j.at("terminal").get<bool>();
    } catch (const json::exception& e) {
      throw ConfigError("dataset: malformed record (traj " + std::to_string(traj) +
                        ", t " + std::to_string(t) + "): " + e.what());
    }
    data.trajectories.back().push_back(std::move(rec));
    ++n_records;
  }
  if (data.trajectories.empty()) throw ConfigError("dataset: no records in " + path);
  if (n_records > 1000000) {
    std::cerr << "dataset: warning: " << n_records
              << " records exceeds the 1e6 size cap; expect slow graph builds\n";
  }
  data.validate();
  data.compute_normalization();
  return data;
}

void save_dataset(const TrajectoryDataset& data, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw MissingArtifactError("dataset: cannot open " + path + " for writing");
  out << json{{"state_dim", data.state_dim}, {"action_dim", data.action_dim}}.dump()
      << "\n";
  for (std::size_t j = 0; j < data.trajectories.size(); ++j) {
    for (std::size_t t = 0; t < data.trajectories[j].size(); ++t) {
      const DataRecord& rec = data.trajectories[j][t];
      out << json{{"traj", j}, {"t", t},     {"s", rec.s},
                  {"a", rec.a}, {"r", rec.r}, {"s2", rec.s2},
                  {"terminal", rec.terminal}}
                 .dump()
          << "\n";
    }
  }
}

StateIndex collect_states(const TrajectoryDataset& data) {
  StateIndex idx;
  auto add = [&idx](const Vec& s) {
    const std::string key = bit_key(s);
    if (idx.index.emplace(key, static_cast<int>(idx.states.size())).second) {
      idx.states.push_back(s);
    }
  };
  for (const auto& traj : data.trajectories) {
    for (const DataRecord& rec : traj) {
      add(rec.s);
      add(rec.s2);
    }
  }
  return idx;
}

TabularMdp build_m0(const TrajectoryDataset& data, double discount) {
  data.validate();
  const StateIndex idx = collect_states(data);
  if (idx.states.empty()) throw ConfigError("build_m0: dataset has no states");

  TabularMdp mdp;
  mdp.discount = discount;
  mdp.states = idx.states;
  mdp.actions.resize(idx.states.size());
  mdp.terminal.assign(idx.states.size(), 0);
  mdp.imagined.assign(idx.states.size(), 0);

  // Per-state dedup of identical (s, a); conflicting outcomes for the same
  // pair violate the deterministic-environment assumption.
  std::vector<std::unordered_map<std::string, std::size_t>> seen(idx.states.size());
  for (std::size_t j = 0; j < data.trajectories.size(); ++j) {
    for (std::size_t i = 0; i < data.trajectories[j].size(); ++i) {
      const DataRecord& rec = data.trajectories[j][i];
      const int si = idx.lookup(rec.s);
      const int ti = idx.lookup(rec.s2);
      const std::string akey = bit_key(rec.a);
      auto [it, inserted] = seen[si].emplace(akey, mdp.actions[si].size());
      if (!inserted) {
        const Edge& prev = mdp.actions[si][it->second];
        if (prev.next_state != ti || prev.reward != rec.r) {
          throw ConfigError("build_m0: duplicate (s,a) with conflicting outcome at (traj " +
                            std::to_string(j) + ", record " + std::to_string(i) + ")");
        }
        continue;
      }
      mdp.actions[si].push_back(Edge{rec.a, ti, rec.r});
    }
  }

  // Uniform start distribution over trajectory-initial states.
  std::unordered_map<int, bool> start_seen;
  for (const auto& traj : data.trajectories) {
    const int s0 = idx.lookup(traj.front().s);
    if (start_seen.emplace(s0, true).second) mdp.start_states.push_back(s0);
  }

  // States with no outgoing logged actions become absorbing.
  for (int s = 0; s < mdp.num_states(); ++s) {
    if (mdp.actions[s].empty()) {
      mdp.terminal[s] = 1;
      mdp.actions[s].push_back(Edge{Vec(data.action_dim, 0.0), s, 0.0});
    }
  }

  mdp.validate();
  return mdp;
}

namespace {

struct CellKey {
  std::vector<int64_t> c;
  bool operator==(const CellKey& o) const { return c == o.c; }
};

struct CellHash {
  std::size_t operator()(const CellKey& k) const {
    uint64_t h = 0x9e3779b97f4a7c15ull;
    for (int64_t v : k.c) h = splitmix64(h ^ static_cast<uint64_t>(v));
    return static_cast<std::size_t>(h);
  }
};

CellKey cell_of(const Vec& p, double cell) {
  CellKey k;
  k.c.resize(p.size());
  for (std::size_t d = 0; d < p.size(); ++d) {
    k.c[d] = static_cast<int64_t>(std::floor(p[d] / cell));
  }
  return k;
}

std::vector<std::vector<int>> radius_graph(const std::vector<Vec>& pts,
                                           double radius) {
  const std::size_t n = pts.size();
  std::vector<std::vector<int>> adj(n);
  const std::size_t dim = pts.empty() ? 0 : pts[0].size();

  if (dim == 0 || dim > 8) {
    // Grid cells explode combinatorially in high dimension; scan instead.
    parallel_for(n, [&](std::size_t i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (j != i && l2_distance(pts[i], pts[j]) <= radius) {
          adj[i].push_back(static_cast<int>(j));
        }
      }
    });
    return adj;
  }

  std::unordered_map<CellKey, std::vector<int>, CellHash> grid;
  for (std::size_t i = 0; i < n; ++i) {
    grid[cell_of(pts[i], radius)].push_back(static_cast<int>(i));
  }
  parallel_for(n, [&](std::size_t i) {
    const CellKey base = cell_of(pts[i], radius);
    CellKey probe = base;
    // Enumerate the 3^dim neighborhood of the home cell.
    std::vector<int> offs(dim, -1);
    while (true) {
      for (std::size_t d = 0; d < dim; ++d) probe.c[d] = base.c[d] + offs[d];
      auto it = grid.find(probe);
      if (it != grid.end()) {
        for (int j : it->second) {
          if (j != static_cast<int>(i) &&
              l2_distance(pts[i], pts[j]) <= radius) {
            adj[i].push_back(j);
          }
        }
      }
      std::size_t d = 0;
      while (d < dim && offs[d] == 1) offs[d++] = -1;
      if (d == dim) break;
      ++offs[d];
    }
    std::sort(adj[i].begin(), adj[i].end());
  });
  return adj;
}

std::vector<std::vector<int>> knn_graph(const std::vector<Vec>& pts, int k) {
  const std::size_t n = pts.size();
  std::vector<std::vector<int>> adj(n);
  parallel_for(n, [&](std::size_t i) {
    std::vector<std::pair<double, int>> dist;
    dist.reserve(n - 1);
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) dist.emplace_back(l2_distance(pts[i], pts[j]), static_cast<int>(j));
    }
    std::partial_sort(dist.begin(), dist.begin() + k, dist.end());
    adj[i].reserve(k);
    for (int m = 0; m < k; ++m) adj[i].push_back(dist[m].second);
  });
  return adj;
}

}  // namespace

NeighborGraph build_neighbor_graph(const TrajectoryDataset& data,
                                   NeighborGraph::Mode mode, double param,
                                   const Metric& metric) {
  const StateIndex idx = collect_states(data);
  const std::size_t n = idx.states.size();

  NeighborGraph g;
  g.mode = mode;
  g.metric_name = metric.name;

  std::vector<Vec> pts(n);
  for (std::size_t i = 0; i < n; ++i) pts[i] = metric.embedded(idx.states[i]);

  if (mode == NeighborGraph::Mode::radius) {
    if (!(param > 0.0)) throw ConfigError("neighbor graph: radius must be > 0");
    g.radius = param;
    g.adjacency = radius_graph(pts, param);
  } else {
    const int k = static_cast<int>(param);
    if (k <= 0 || k >= static_cast<int>(n)) {
      throw ConfigError("neighbor graph: k must satisfy 0 < k < number of states");
    }
    g.k = k;
    g.adjacency = knn_graph(pts, k);
  }
  return g;
}

bool StartRegion::contains(const Vec& x) const {
  if (kind == Kind::box) {
    for (std::size_t d = 0; d < x.size(); ++d) {
      if (x[d] < lo[d] || x[d] > hi[d]) return false;
    }
    return true;
  }
  for (const Vec& p : points) {
    if (l2_distance(x, p) <= radius) return true;
  }
  return false;
}

int relabel_start_states(TabularMdp& mdp, const TrajectoryDataset& data,
                         const StartRegion& region) {
  if (region.kind == StartRegion::Kind::box &&
      (static_cast<int>(region.lo.size()) != data.state_dim ||
       static_cast<int>(region.hi.size()) != data.state_dim)) {
    throw ConfigError("relabel_start_states: region bounds must match state_dim");
  }
  std::vector<uint8_t> is_start(mdp.num_states(), 0);
  for (int s : mdp.start_states) is_start[s] = 1;
  int added = 0;
  for (int s = 0; s < mdp.num_states(); ++s) {
    if (is_start[s] || mdp.imagined[s]) continue;
    if (region.contains(mdp.states[s])) {
      mdp.start_states.push_back(s);
      is_start[s] = 1;
      ++added;
    }
  }
  return added;
}

}  // namespace bats
