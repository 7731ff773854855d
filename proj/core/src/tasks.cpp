#include <algorithm>
#include <stdexcept>

#include "prwm/env.hpp"

namespace prwm {

namespace {

// All sprites are axis-aligned rectangles on a constant background; each task
// uses a distinct background level so frames from different tasks are
// separable in pixel space.
void fill_rect(Frame& f, int y, int x, int h, int w, double v) {
  const int y0 = std::max(0, y), x0 = std::max(0, x);
  const int y1 = std::min(f.h, y + h), x1 = std::min(f.w, x + w);
  for (int yy = y0; yy < y1; ++yy)
    for (int xx = x0; xx < x1; ++xx)
      for (int ch = 0; ch < f.c; ++ch) f.at(yy, xx, ch) = v;
}

bool rects_overlap(int ay, int ax, int ah, int aw, int by, int bx, int bh, int bw) {
  return ay < by + bh && by < ay + ah && ax < bx + bw && bx < ax + aw;
}

// Ball-and-paddle game under a shrinking timer bar. The episode runs a fixed
// number of steps; reward +1 on every catch, -1 on every miss.
class PaddleTask final : public Task {
 public:
  PaddleTask(int h, int w, int frame_skip)
      : h_(h), w_(w), total_ticks_(int64_t(kSteps) * frame_skip), rng_(0) {}

  void reset(uint64_t seed) override {
    rng_ = Rng(seed);
    ticks_ = 0;
    pw_ = std::max(4, w_ / 4);
    px_ = (w_ - pw_) / 2;
    respawn_ball();
  }

  double tick(int action) override {
    ++ticks_;
    if (action == kLeft) px_ = std::max(0, px_ - 2);
    if (action == kRight) px_ = std::min(w_ - pw_, px_ + 2);
    by_ += vy_;
    bx_ += vx_;
    if (bx_ < 0) { bx_ = 0; vx_ = 1; }
    if (bx_ + 2 > w_) { bx_ = w_ - 2; vx_ = -1; }
    if (by_ < 2) { by_ = 2; vy_ = 1; }
    double reward = 0.0;
    if (vy_ > 0 && by_ + 2 >= h_ - 2) {
      if (rects_overlap(by_, bx_, 2, 2, h_ - 2, px_, 2, pw_)) {
        by_ = h_ - 4;
        vy_ = -1;
        reward = 1.0;
      } else if (by_ >= h_ - 2) {
        reward = -1.0;
        respawn_ball();
      }
    }
    return reward;
  }

  bool finished() const override { return false; }  // ends at the step cap (timer)
  int max_env_steps() const override { return kSteps; }
  const char* name() const override { return "paddle"; }

  void render(Frame& f) const override {
    f.fill(0.0);
    const int bar = int(double(w_) * double(std::max<int64_t>(0, total_ticks_ - ticks_)) /
                        double(total_ticks_));
    fill_rect(f, 0, 0, 2, bar, 0.85);
    fill_rect(f, h_ - 2, px_, 2, pw_, 0.7);
    fill_rect(f, by_, bx_, 2, 2, 1.0);
  }

 private:
  static constexpr int kSteps = 200;
  void respawn_ball() {
    by_ = 3;
    bx_ = int(rng_.uniform_int(1, w_ - 3));
    vy_ = 1;
    vx_ = rng_.uniform() < 0.5 ? -1 : 1;
  }
  int h_, w_;
  int64_t total_ticks_, ticks_ = 0;
  int pw_ = 0, px_ = 0, by_ = 0, bx_ = 0, vy_ = 1, vx_ = 1;
  Rng rng_;
};

// Collect five dots with a movable agent. No timer; the frame is static under
// NOOP. Ends when everything is collected (or at the step cap).
class GatherTask final : public Task {
 public:
  GatherTask(int h, int w) : h_(h), w_(w), rng_(0) {}

  void reset(uint64_t seed) override {
    rng_ = Rng(seed);
    ay_ = (h_ - 3) / 2;
    ax_ = (w_ - 3) / 2;
    dots_.clear();
    const int excl = std::min(h_, w_) / 5;
    int attempts = 0;
    while (int(dots_.size()) < kDots) {
      const int dy = int(rng_.uniform_int(0, h_ - 2));
      const int dx = int(rng_.uniform_int(0, w_ - 2));
      ++attempts;
      const bool near_agent = rects_overlap(dy - excl, dx - excl, 2 + 2 * excl, 2 + 2 * excl,
                                            ay_, ax_, 3, 3);
      if (near_agent && attempts < 200) continue;
      bool clash = false;
      for (auto& [oy, ox] : dots_)
        if (rects_overlap(dy, dx, 2, 2, oy, ox, 2, 2)) clash = true;
      if (!clash) dots_.emplace_back(dy, dx);
    }
  }

  double tick(int action) override {
    if (action == kUp) ay_ = std::max(0, ay_ - 1);
    if (action == kDown) ay_ = std::min(h_ - 3, ay_ + 1);
    if (action == kLeft) ax_ = std::max(0, ax_ - 1);
    if (action == kRight) ax_ = std::min(w_ - 3, ax_ + 1);
    double reward = 0.0;
    for (size_t i = 0; i < dots_.size();) {
      if (rects_overlap(ay_, ax_, 3, 3, dots_[i].first, dots_[i].second, 2, 2)) {
        reward += 1.0;
        dots_.erase(dots_.begin() + std::ptrdiff_t(i));
      } else {
        ++i;
      }
    }
    return reward;
  }

  bool finished() const override { return dots_.empty(); }
  int max_env_steps() const override { return 900; }
  const char* name() const override { return "gather"; }

  void render(Frame& f) const override {
    f.fill(0.15);
    for (auto& [dy, dx] : dots_) fill_rect(f, dy, dx, 2, 2, 0.6);
    fill_rect(f, ay_, ax_, 3, 3, 1.0);
  }

 private:
  static constexpr int kDots = 5;
  int h_, w_;
  int ay_ = 0, ax_ = 0;
  std::vector<std::pair<int, int>> dots_;
  Rng rng_;
};

// Dodge falling blocks; lives are shown as pips in the top-left corner.
// -1 when hit, +1 for every block that lands without contact.
class DodgeTask final : public Task {
 public:
  DodgeTask(int h, int w) : h_(h), w_(w), rng_(0) {}

  void reset(uint64_t seed) override {
    rng_ = Rng(seed);
    ticks_ = 0;
    lives_ = kLives;
    pw_ = std::max(3, w_ / 8);
    px_ = (w_ - pw_) / 2;
    fallers_.clear();
    next_spawn_ = int64_t(rng_.uniform_int(4, 12));
  }

  double tick(int action) override {
    ++ticks_;
    if (action == kLeft) px_ = std::max(0, px_ - 1);
    if (action == kRight) px_ = std::min(w_ - pw_, px_ + 1);
    if (ticks_ >= next_spawn_) {
      fallers_.emplace_back(2, int(rng_.uniform_int(0, w_ - 2)));
      next_spawn_ = ticks_ + rng_.uniform_int(28, 44);
    }
    double reward = 0.0;
    for (size_t i = 0; i < fallers_.size();) {
      auto& [fy, fx] = fallers_[i];
      ++fy;
      if (rects_overlap(fy, fx, 2, 2, h_ - 2, px_, 2, pw_)) {
        reward -= 1.0;
        --lives_;
        fallers_.erase(fallers_.begin() + std::ptrdiff_t(i));
      } else if (fy >= h_ - 2) {
        reward += 1.0;
        fallers_.erase(fallers_.begin() + std::ptrdiff_t(i));
      } else {
        ++i;
      }
    }
    return reward;
  }

  bool finished() const override { return lives_ <= 0; }
  int max_env_steps() const override { return 600; }
  const char* name() const override { return "dodge"; }

  void render(Frame& f) const override {
    f.fill(0.3);
    for (int i = 0; i < lives_; ++i) fill_rect(f, 0, i * 3, 2, 2, 0.9);
    for (auto& [fy, fx] : fallers_) fill_rect(f, fy, fx, 2, 2, 0.7);
    fill_rect(f, h_ - 2, px_, 2, pw_, 1.0);
  }

 private:
  static constexpr int kLives = 7;
  int h_, w_;
  int64_t ticks_ = 0, next_spawn_ = 0;
  int lives_ = 0, pw_ = 0, px_ = 0;
  std::vector<std::pair<int, int>> fallers_;
  Rng rng_;
};

// One-step contextual-free bandit on a constant frame: FIRE pays out, every
// other action does nothing. Used as the minimal control-learning testbed.
class BanditTask final : public Task {
 public:
  BanditTask(int h, int w) : h_(h), w_(w) {}
  void reset(uint64_t) override { done_ = false; }
  double tick(int action) override {
    done_ = true;
    return action == kFire ? 5.0 : 0.0;
  }
  bool finished() const override { return done_; }
  int max_env_steps() const override { return 1; }
  const char* name() const override { return "bandit"; }
  void render(Frame& f) const override {
    f.fill(0.5);
    fill_rect(f, h_ / 2 - 4, w_ / 2 - 4, 8, 8, 0.9);
  }

 private:
  int h_, w_;
  bool done_ = false;
};

}  // namespace

std::vector<std::string> registered_tasks() { return {"paddle", "gather", "dodge", "bandit"}; }

std::unique_ptr<Env> make_env(const std::string& task_name, const EnvConfig& cfg) {
  std::unique_ptr<Task> task;
  if (task_name == "paddle")
    task = std::make_unique<PaddleTask>(cfg.frame_h, cfg.frame_w, cfg.frame_skip);
  else if (task_name == "gather")
    task = std::make_unique<GatherTask>(cfg.frame_h, cfg.frame_w);
  else if (task_name == "dodge")
    task = std::make_unique<DodgeTask>(cfg.frame_h, cfg.frame_w);
  else if (task_name == "bandit")
    task = std::make_unique<BanditTask>(cfg.frame_h, cfg.frame_w);
  else
    throw std::invalid_argument("unknown task '" + task_name + "'");
  return std::make_unique<Env>(std::move(task), cfg);
}

}  // namespace prwm
