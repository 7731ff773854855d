#include "prwm/env.hpp"

#include <stdexcept>

namespace prwm {

const char* action_name(int action) {
  static const char* names[kActionCount] = {"NOOP", "FIRE", "UP", "RIGHT", "LEFT", "DOWN"};
  if (action < 0 || action >= kActionCount)
    throw std::out_of_range("action_name: index " + std::to_string(action));
  return names[action];
}

Env::Env(std::unique_ptr<Task> task, const EnvConfig& cfg) : task_(std::move(task)), cfg_(cfg) {
  if (cfg.frame_h < 16 || cfg.frame_w < 16)
    throw std::invalid_argument("env: frames must be at least 16x16");
  if (cfg.channels != 1 && cfg.channels != 3)
    throw std::invalid_argument("env: channels must be 1 or 3");
  if (cfg.frame_skip < 1) throw std::invalid_argument("env: frame_skip must be >= 1");
}

Observation Env::reset(uint64_t episode_seed) {
  task_->reset(episode_seed);
  active_ = true;
  ticks_ = 0;
  steps_ = 0;
  Observation obs;
  obs.frame = Frame(cfg_.frame_h, cfg_.frame_w, cfg_.channels);
  task_->render(obs.frame);
  obs.reward = 0.0;
  obs.done = false;
  return obs;
}

Observation Env::step(int action) {
  if (!active_) throw std::logic_error("env: step() on a finished or unreset episode");
  if (action < 0 || action >= kActionCount)
    throw std::out_of_range("env: action index " + std::to_string(action));
  double raw = 0.0;
  for (int i = 0; i < cfg_.frame_skip && !task_->finished(); ++i) {
    raw += task_->tick(action);
    ++ticks_;
  }
  ++steps_;
  Observation obs;
  obs.frame = Frame(cfg_.frame_h, cfg_.frame_w, cfg_.channels);
  task_->render(obs.frame);
  obs.reward = raw > 0.0 ? 1.0 : raw < 0.0 ? -1.0 : 0.0;
  obs.done = task_->finished() || steps_ >= task_->max_env_steps();
  if (obs.done) active_ = false;
  return obs;
}

int random_policy_action(Rng& rng, int prev_action) {
  if (prev_action >= 0 && prev_action < kActionCount && rng.uniform() < 0.5) return prev_action;
  return int(rng.uniform_int(0, kActionCount - 1));
}

}  // namespace prwm
