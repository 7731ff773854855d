#pragma once
#include <cstdint>
#include <span>
#include <vector>

#include "prwm/vae.hpp"
#include "prwm/world_model.hpp"

namespace prwm {

struct ControllerConfig {
  int hidden = 512;
  double lr = 1e-3;
  double tau = 0.01;    // distillation softmax temperature
  double gamma = 0.99;
  int horizon = 5;      // n-step return / update cadence
  int64_t n_steps_per_exposure = 20000;
  int64_t distill_window = 2000;  // real frames between distillation passes
  int distill_batch = 256;
  double value_coef = 0.5;
  double entropy_coef = 0.01;
  int action_count = kActionCount;
};

// Single-hidden-layer actor-critic over (z, h) inputs. The trunk is shared;
// actor and critic are separate linear heads.
class Controller {
 public:
  Controller(int input_dim, const ControllerConfig& cfg, uint64_t seed);

  int input_dim() const { return input_dim_; }
  const ControllerConfig& config() const { return cfg_; }
  nn::Params& params() { return params_; }
  const nn::Params& params() const { return params_; }

  // Raw single-input forward: fills logits [action_count] and value.
  void forward(std::span<const double> input, double* logits, double* value) const;

  // Graph forward on a batch [B, input_dim] -> (logits [B, A], value [B]).
  std::pair<ag::Var, ag::Var> forward_graph(const Tensor& input) const;
  // Actor-only graph (used by distillation; leaves the critic head untouched).
  ag::Var actor_graph(const Tensor& input) const;

 private:
  int input_dim_;
  ControllerConfig cfg_;
  nn::Dense fc_, actor_, critic_;
  nn::Params params_;
};

// One collected transition: the (z, h) input seen by the controller, the
// sampled action, the clipped reward that followed, and the critic value at
// collection time.
struct TrajStep {
  std::vector<double> input;
  int action = 0;
  double reward = 0.0;
  double value = 0.0;
};

struct A2cStats {
  double policy_loss = 0.0, value_loss = 0.0, entropy = 0.0, total = 0.0;
};

// One advantage actor-critic update over a short trajectory segment with
// n-step returns bootstrapped from `bootstrap_value` (0 at terminals).
A2cStats a2c_update(Controller& c, const std::vector<TrajStep>& traj, double bootstrap_value,
                    Adam& opt);

// One distillation step: tempered softmax cross entropy from constant teacher
// logits, summed over the batch. Returns the loss.
double distill_update(Controller& c, const Tensor& inputs, const Tensor& teacher_logits,
                      Adam& opt);

// Precomputed distillation rows from a simulated rollout set: inputs are
// (z_t, h_t) with h re-derived by running `m` over the stored latents, teacher
// logits are the stored actor outputs.
struct DistillData {
  Tensor inputs;   // [N, z+h]
  Tensor teacher;  // [N, action_count]
};
DistillData build_distill_data(const WorldModel& m, const RolloutSet& sim);

struct RewardEvent {
  int64_t end_frame = 0;       // real frames consumed when the episode ended
  double episode_return = 0.0;
};

struct CExposureStats {
  std::vector<RewardEvent> episodes;
  int64_t real_frames = 0;
  int64_t distill_frames = 0;
  int distill_updates = 0;
};

// Trains the controller on `task` for `n_steps` real frames: softmax action
// sampling, updates every `horizon` steps and at episode ends, and (when a
// simulated set is provided) one distillation pass over ~distill_window
// simulated frames after every distill_window real frames. The world model
// and VAE stay frozen; separate Adam instances keep the very different A2C
// and distillation gradient scales from polluting each other's moments.
CExposureStats train_c_exposure(const std::string& task, const EnvConfig& env_cfg,
                                const Vae& vae, const WorldModel& m, Controller& c,
                                const RolloutSet* sim, Adam& a2c_opt, Adam& distill_opt,
                                uint64_t seed, int64_t n_steps);

}  // namespace prwm
