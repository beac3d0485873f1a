#pragma once

#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "bats/common.hpp"
#include "bats/dataset.hpp"

namespace bats {

struct StepResult {
  Vec next_state;
  double reward = 0.0;
  bool terminal = false;
};

/// Stateful scripted controller used when generating expert data.
class Controller {
 public:
  virtual ~Controller() = default;
  virtual void begin_episode(const Vec& state, std::mt19937_64& rng) {}
  virtual Vec act(const Vec& state, std::mt19937_64& rng) = 0;
};

/// Deterministic environment: step() is a pure function of (state, action).
class Env {
 public:
  virtual ~Env() = default;
  virtual std::string name() const = 0;
  virtual int state_dim() const = 0;
  virtual int action_dim() const = 0;
  virtual std::pair<Vec, Vec> action_bounds() const = 0;
  virtual int episode_cap() const = 0;
  virtual Vec reset(std::mt19937_64& rng) const = 0;
  virtual StepResult step(const Vec& state, const Vec& action) const = 0;
  virtual std::unique_ptr<Controller> make_expert_controller() const = 0;
};

/// Continuous mountain car: state (position, velocity), 1-D force in [-1,1].
/// Reward is a 100 goal bonus minus 0.1*action^2 per step; mean return of 90
/// counts as solved. Constants follow the standard continuous formulation.
class MountainCarEnv : public Env {
 public:
  static constexpr double kMinPos = -1.2;
  static constexpr double kMaxPos = 0.6;
  static constexpr double kMaxSpeed = 0.07;
  static constexpr double kGoalPos = 0.45;
  static constexpr double kPower = 0.0015;
  static constexpr double kGravity = 0.0025;
  static constexpr double kSolvedReturn = 90.0;

  std::string name() const override { return "mountain_car"; }
  int state_dim() const override { return 2; }
  int action_dim() const override { return 1; }
  std::pair<Vec, Vec> action_bounds() const override { return {{-1.0}, {1.0}}; }
  int episode_cap() const override { return 999; }
  Vec reset(std::mt19937_64& rng) const override;
  StepResult step(const Vec& state, const Vec& action) const override;
  std::unique_ptr<Controller> make_expert_controller() const override;
};

/// Character grid: '#' wall, 'G' goal cell, 'S' start cell, anything else
/// open. Cells are unit squares; (x, y) has x growing with columns and y
/// with rows.
struct MazeLayout {
  std::vector<std::string> grid;
  int rows() const { return static_cast<int>(grid.size()); }
  int cols() const { return grid.empty() ? 0 : static_cast<int>(grid[0].size()); }
  bool wall(int row, int col) const;
  void validate() const;
};

MazeLayout umaze_layout();
MazeLayout load_maze_layout(const std::string& path);

/// Point mass in a walled grid: state (x, y, vx, vy), 2-D force in [-1,1].
/// Reward 1 whenever the next position is inside the goal cell, else 0;
/// episodes never terminate. Wall contact zeroes the offending velocity
/// component, resolved per axis.
class PointMazeEnv : public Env {
 public:
  explicit PointMazeEnv(MazeLayout layout);

  std::string name() const override { return "point_maze"; }
  int state_dim() const override { return 4; }
  int action_dim() const override { return 2; }
  std::pair<Vec, Vec> action_bounds() const override {
    return {{-1.0, -1.0}, {1.0, 1.0}};
  }
  int episode_cap() const override { return 300; }
  Vec reset(std::mt19937_64& rng) const override;
  StepResult step(const Vec& state, const Vec& action) const override;
  std::unique_ptr<Controller> make_expert_controller() const override;

  bool in_goal(double x, double y) const;
  const MazeLayout& layout() const { return layout_; }
  const std::vector<std::pair<int, int>>& open_cells() const { return open_cells_; }

  static constexpr double kDt = 0.1;
  static constexpr double kAccel = 5.0;
  static constexpr double kMaxSpeed = 2.0;
  static constexpr double kMargin = 0.05;  // wall standoff for the point mass

 private:
  MazeLayout layout_;
  int goal_row_ = -1, goal_col_ = -1;
  int start_row_ = -1, start_col_ = -1;
  std::vector<std::pair<int, int>> open_cells_;
};

struct GenSpec {
  int n_expert = 0;
  int n_random = 0;
  int max_steps = 200;
  uint64_t seed = 0;
};

/// Expert trajectories come from the env's scripted controller, random ones
/// from uniform actions in the action bounds. Trajectories end on terminal
/// or after max_steps.
TrajectoryDataset generate_dataset(const Env& env, const GenSpec& spec);

std::unique_ptr<Env> make_env(const std::string& name,
                              const std::string& layout_path = "");

}  // namespace bats
