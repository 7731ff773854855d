#pragma once
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "prwm/controller.hpp"
#include "prwm/env.hpp"
#include "prwm/rollout.hpp"
#include "prwm/schedule.hpp"
#include "prwm/vae.hpp"
#include "prwm/world_model.hpp"

namespace prwm {

// Malformed input, unknown keys, or missing required keys; a usage error at
// the command line rather than a runtime failure.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Rehearsal { kOff = 0, kOn = 1, kBoth = 2 };

std::string rehearsal_name(Rehearsal r);

// Fully resolved experiment configuration. Defaults <- config file <-
// command-line overrides, in that precedence.
struct ExperimentConfig {
  // Identity.
  std::vector<std::string> tasks;
  std::string outdir;
  uint64_t seed = 1;
  std::vector<uint64_t> seeds;  // per-replication; derived from `seed` when empty
  int n_reps = 10;
  Rehearsal rehearsal = Rehearsal::kBoth;
  double test_fraction = 0.1;

  // Environments.
  int frame_height = 32, frame_width = 32, channels = 1, frame_skip = 4;

  // V network.
  int latent_dim = 8;
  std::vector<int> conv_stack = {16, 32};
  double vae_lr = 1e-3;
  int vae_batch = 32;
  double vae_beta = 1.0;
  int vae_patience = 5;
  double vae_min_delta = 1e-4;
  int vae_max_epochs = 60;
  int vae_frames_per_task = 2000;

  // M network.
  int mdn_mixtures = 5;
  int lstm_hidden = 64;
  double m_lr = 1e-3;
  int m_batches_per_epoch = 100;
  int m_batch = 16;
  int m_seq_len = 32;

  // C network.
  int c_hidden = 512;
  double c_lr = 1e-3;
  double tau = 0.01;
  double gamma = 0.99;
  int horizon = 5;
  int64_t n_steps_per_exposure = 20000;
  int64_t distill_window = 2000;
  int distill_batch = 256;
  double value_coef = 0.5;
  double entropy_coef = 0.01;

  // Rollouts.
  int n_rollouts = 100;
  int t_max = 300;
  int t_min = 100;
  double sim_temperature = 1.0;

  // Schedule.
  int exposures_per_task = 3;
  int total_epochs_per_task = 30;
  int min_epochs = 3;

  // Module-config views.
  EnvConfig env_config() const;
  VaeConfig vae_config() const;
  ModelConfig model_config() const;
  ControllerConfig controller_config() const;
  RolloutConfig rollout_config() const;
  ScheduleConfig schedule_config() const;

  // Replication seeds: the explicit list when given, otherwise derived from
  // the family seed. Throws when an explicit list is shorter than n_reps.
  std::vector<uint64_t> replication_seeds() const;

  // Canonical text form; parsing it back yields an identical config and an
  // identical re-render.
  std::string render() const;
};

// Parses `key = value` lines ('#' starts a comment). Every key must belong to
// the documented schema; `tasks` and `outdir` are required. When no seed is
// given, the PRWM_SEED environment variable supplies the default.
ExperimentConfig parse_config_text(const std::string& text,
                                   const std::vector<std::string>& overrides = {});
ExperimentConfig parse_config(const std::string& path,
                              const std::vector<std::string>& overrides = {});

}  // namespace prwm
