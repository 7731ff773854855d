#pragma once
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "prwm/rng.hpp"

namespace prwm {

// Grayscale (or RGB) frame with pixels in [0,1], row-major [H, W, C].
struct Frame {
  int h = 0, w = 0, c = 0;
  std::vector<double> px;

  Frame() = default;
  Frame(int h, int w, int c) : h(h), w(w), c(c), px(size_t(h) * w * c, 0.0) {}
  double& at(int y, int x, int ch) { return px[(size_t(y) * w + x) * c + ch]; }
  double at(int y, int x, int ch) const { return px[(size_t(y) * w + x) * c + ch]; }
  void fill(double v) { std::fill(px.begin(), px.end(), v); }
};

// Discrete action set shared by every task.
inline constexpr int kActionCount = 6;
enum Action : int { kNoop = 0, kFire = 1, kUp = 2, kRight = 3, kLeft = 4, kDown = 5 };
const char* action_name(int action);

struct Observation {
  Frame frame;
  double reward = 0.0;  // in {-1, 0, 1}
  bool done = false;
};

struct EnvConfig {
  int frame_h = 32;
  int frame_w = 32;
  int channels = 1;
  int frame_skip = 4;
};

// A task provides tick-level dynamics and rendering; the Env wrapper owns
// frame skipping, reward clipping, and the per-task step cap.
class Task {
 public:
  virtual ~Task() = default;
  virtual void reset(uint64_t episode_seed) = 0;
  // Advances one tick under `action`; returns the raw (unclipped) reward.
  virtual double tick(int action) = 0;
  virtual bool finished() const = 0;
  virtual void render(Frame& out) const = 0;
  // Hard episode cap, counted in env steps (frame-skipped steps).
  virtual int max_env_steps() const = 0;
  virtual const char* name() const = 0;
};

class Env {
 public:
  Env(std::unique_ptr<Task> task, const EnvConfig& cfg);

  Observation reset(uint64_t episode_seed);
  // Repeats `action` for frame_skip ticks, accumulates raw reward, and
  // returns the rendered frame with the reward clipped to sign(raw).
  Observation step(int action);

  bool episode_active() const { return active_; }
  int64_t tick_count() const { return ticks_; }
  int64_t step_count() const { return steps_; }
  const Task& task() const { return *task_; }
  const EnvConfig& config() const { return cfg_; }

 private:
  std::unique_ptr<Task> task_;
  EnvConfig cfg_;
  bool active_ = false;
  int64_t ticks_ = 0, steps_ = 0;
};

// Task registry.
std::vector<std::string> registered_tasks();
std::unique_ptr<Env> make_env(const std::string& task_name, const EnvConfig& cfg);

// Sticky random policy: with probability 1/2 repeat the previous action,
// otherwise draw uniformly from all actions.
int random_policy_action(Rng& rng, int prev_action);

}  // namespace prwm
