#include "bats/envs.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

namespace bats {

using nlohmann::json;

namespace {

double clampd(double x, double lo, double hi) {
  return std::min(hi, std::max(lo, x));
}

}  // namespace

Vec MountainCarEnv::reset(std::mt19937_64& rng) const {
  std::uniform_real_distribution<double> start(-0.6, -0.4);
  return {start(rng), 0.0};
}

StepResult MountainCarEnv::step(const Vec& state, const Vec& action) const {
  const double a = clampd(action[0], -1.0, 1.0);
  double v = state[1] + a * kPower - kGravity * std::cos(3.0 * state[0]);
  v = clampd(v, -kMaxSpeed, kMaxSpeed);
  double x = clampd(state[0] + v, kMinPos, kMaxPos);
  if (x <= kMinPos && v < 0.0) v = 0.0;
  const bool done = x >= kGoalPos && v >= 0.0;
  double reward = -0.1 * a * a;
  if (done) reward += 100.0;
  return {{x, v}, reward, done};
}

namespace {

/// Energy-pumping bang-bang controller that coasts once the mechanical
/// energy suffices to reach the goal, to keep the squared-action cost low.
class MountainCarExpert : public Controller {
 public:
  Vec act(const Vec& state, std::mt19937_64&) override {
    const double x = state[0];
    const double v = state[1];
    const double energy = 0.5 * v * v + potential(x);
    const double needed = potential(MountainCarEnv::kGoalPos) + 1e-4;
    if (v >= 0.0 && energy >= needed) return {0.0};
    if (v > 0.0) return {1.0};
    if (v < 0.0) return {-1.0};
    // At rest: push downhill toward the valley to start the swing.
    return {x > -M_PI / 6.0 ? -1.0 : 1.0};
  }

 private:
  static double potential(double x) {
    return MountainCarEnv::kGravity / 3.0 * std::sin(3.0 * x);
  }
};

}  // namespace

std::unique_ptr<Controller> MountainCarEnv::make_expert_controller() const {
  return std::make_unique<MountainCarExpert>();
}

bool MazeLayout::wall(int row, int col) const {
  if (row < 0 || row >= rows() || col < 0 || col >= cols()) return true;
  return grid[row][col] == '#';
}

void MazeLayout::validate() const {
  if (grid.empty()) throw ConfigError("maze layout: empty grid");
  for (const auto& row : grid) {
    if (static_cast<int>(row.size()) != cols()) {
      throw ConfigError("maze layout: ragged rows");
    }
  }
  bool has_goal = false, has_start = false;
  for (int r = 0; r < rows(); ++r) {
    for (int c = 0; c < cols(); ++c) {
      const char ch = grid[r][c];
      if (ch == 'G') has_goal = true;
      if (ch == 'S') has_start = true;
      const bool border = r == 0 || c == 0 || r == rows() - 1 || c == cols() - 1;
      if (border && ch != '#') {
        throw ConfigError("maze layout: border must be walls");
      }
    }
  }
  if (!has_goal) throw ConfigError("maze layout: no goal cell 'G'");
  if (!has_start) throw ConfigError("maze layout: no start cell 'S'");
}

MazeLayout umaze_layout() {
  MazeLayout m;
  m.grid = {
      "#####",
      "#GOO#",
      "###O#",
      "#SOO#",
      "#####",
  };
  return m;
}

MazeLayout load_maze_layout(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifactError("maze layout: cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("maze layout: parse failure: ") + e.what());
  }
  MazeLayout m;
  m.grid = j.at("grid").get<std::vector<std::string>>();
  m.validate();
  return m;
}

PointMazeEnv::PointMazeEnv(MazeLayout layout) : layout_(std::move(layout)) {
  layout_.validate();
  for (int r = 0; r < layout_.rows(); ++r) {
    for (int c = 0; c < layout_.cols(); ++c) {
      const char ch = layout_.grid[r][c];
      if (ch == '#') continue;
      open_cells_.emplace_back(r, c);
      if (ch == 'G') { goal_row_ = r; goal_col_ = c; }
      if (ch == 'S') { start_row_ = r; start_col_ = c; }
    }
  }
}

bool PointMazeEnv::in_goal(double x, double y) const {
  return static_cast<int>(std::floor(y)) == goal_row_ &&
         static_cast<int>(std::floor(x)) == goal_col_;
}

Vec PointMazeEnv::reset(std::mt19937_64& rng) const {
  std::uniform_real_distribution<double> jitter(-0.25, 0.25);
  const double x = start_col_ + 0.5 + jitter(rng);
  const double y = start_row_ + 0.5 + jitter(rng);
  return {x, y, 0.0, 0.0};
}

StepResult PointMazeEnv::step(const Vec& state, const Vec& action) const {
  const double ax = clampd(action[0], -1.0, 1.0);
  const double ay = clampd(action[1], -1.0, 1.0);
  double x = state[0], y = state[1];
  double vx = clampd(state[2] + ax * kAccel * kDt, -kMaxSpeed, kMaxSpeed);
  double vy = clampd(state[3] + ay * kAccel * kDt, -kMaxSpeed, kMaxSpeed);

  // Axis-by-axis move; a blocked axis zeroes its velocity component.
  double nx = x + vx * kDt;
  if (vx > 0.0 && layout_.wall(static_cast<int>(std::floor(y)),
                               static_cast<int>(std::floor(nx + kMargin)))) {
    nx = std::floor(nx + kMargin) - kMargin;
    vx = 0.0;
  } else if (vx < 0.0 && layout_.wall(static_cast<int>(std::floor(y)),
                                      static_cast<int>(std::floor(nx - kMargin)))) {
    nx = std::floor(nx - kMargin) + 1.0 + kMargin;
    vx = 0.0;
  }
  double ny = y + vy * kDt;
  if (vy > 0.0 && layout_.wall(static_cast<int>(std::floor(ny + kMargin)),
                               static_cast<int>(std::floor(nx)))) {
    ny = std::floor(ny + kMargin) - kMargin;
    vy = 0.0;
  } else if (vy < 0.0 && layout_.wall(static_cast<int>(std::floor(ny - kMargin)),
                                      static_cast<int>(std::floor(nx)))) {
    ny = std::floor(ny - kMargin) + 1.0 + kMargin;
    vy = 0.0;
  }

  const double reward = in_goal(nx, ny) ? 1.0 : 0.0;
  return {{nx, ny, vx, vy}, reward, false};
}

namespace {

/// PD controller chasing randomly chosen open-cell waypoints.
class MazeWanderController : public Controller {
 public:
  explicit MazeWanderController(const PointMazeEnv& env) : env_(env) {}

  void begin_episode(const Vec&, std::mt19937_64& rng) override {
    pick_waypoint(rng);
  }

  Vec act(const Vec& state, std::mt19937_64& rng) override {
    const double dx = wx_ - state[0];
    const double dy = wy_ - state[1];
    if (std::sqrt(dx * dx + dy * dy) < 0.4) pick_waypoint(rng);
    const double ax = clampd(1.5 * (wx_ - state[0]) - 1.2 * state[2], -1.0, 1.0);
    const double ay = clampd(1.5 * (wy_ - state[1]) - 1.2 * state[3], -1.0, 1.0);
    return {ax, ay};
  }

 private:
  void pick_waypoint(std::mt19937_64& rng) {
    const auto& cells = env_.open_cells();
    std::uniform_int_distribution<std::size_t> pick(0, cells.size() - 1);
    const auto [r, c] = cells[pick(rng)];
    wx_ = c + 0.5;
    wy_ = r + 0.5;
  }

  const PointMazeEnv& env_;
  double wx_ = 0.0, wy_ = 0.0;
};

}  // namespace

std::unique_ptr<Controller> PointMazeEnv::make_expert_controller() const {
  return std::make_unique<MazeWanderController>(*this);
}

TrajectoryDataset generate_dataset(const Env& env, const GenSpec& spec) {
  if (spec.max_steps < 1) throw ConfigError("generate_dataset: max_steps must be >= 1");
  TrajectoryDataset data;
  data.state_dim = env.state_dim();
  data.action_dim = env.action_dim();
  const auto [lo, hi] = env.action_bounds();

  const int total = spec.n_expert + spec.n_random;
  for (int traj = 0; traj < total; ++traj) {
    std::mt19937_64 rng(derive_seed(spec.seed, static_cast<uint64_t>(traj)));
    const bool expert = traj < spec.n_expert;
    Vec s = env.reset(rng);
    std::unique_ptr<Controller> ctrl;
    if (expert) {
      ctrl = env.make_expert_controller();
      ctrl->begin_episode(s, rng);
    }
    data.trajectories.emplace_back();
    for (int step = 0; step < spec.max_steps; ++step) {
      Vec a(env.action_dim());
      if (expert) {
        a = ctrl->act(s, rng);
      } else {
        for (int d = 0; d < env.action_dim(); ++d) {
          std::uniform_real_distribution<double> u(lo[d], hi[d]);
          a[d] = u(rng);
        }
      }
      const StepResult res = env.step(s, a);
      data.trajectories.back().push_back(DataRecord{s, a, res.reward, res.next_state, res.terminal});
      s = res.next_state;
      if (res.terminal) break;
    }
  }
  data.compute_normalization();
  return data;
}

std::unique_ptr<Env> make_env(const std::string& name,
                              const std::string& layout_path) {
  if (name == "mountain_car") return std::make_unique<MountainCarEnv>();
  if (name == "point_maze") {
    MazeLayout layout =
        layout_path.empty() ? umaze_layout() : load_maze_layout(layout_path);
    return std::make_unique<PointMazeEnv>(std::move(layout));
  }
  throw ConfigError("unknown environment: " + name);
}

}  // namespace bats
