#pragma once
#include <cstdint>
#include <string>
#include <vector>

#include "prwm/env.hpp"

namespace prwm {

// One stored observation. Record t holds the latent of observation t, the
// action chosen at t (0 on a terminal record), the clipped reward received
// with observation t (0 on the first record), and the terminal flag.
// Simulated records additionally carry the actor logits of the policy that
// produced them.
struct StepRecord {
  std::vector<double> z;
  uint8_t action = 0;
  int8_t reward = 0;  // in {-1, 0, 1}
  uint8_t done = 0;
  std::vector<double> policy_logits;  // present on simulated records only
};

struct Rollout {
  std::vector<StepRecord> records;
  // Number of transitions (records - 1).
  int steps() const { return int(records.size()) - 1; }
};

enum class RolloutKind : uint8_t { kReal = 0, kSimulated = 1 };

struct RolloutSet {
  RolloutKind kind = RolloutKind::kReal;
  int latent_dim = 0;
  int action_count = kActionCount;
  int source_task = -1;  // index into the experiment's task list; -1 if unknown
  std::vector<Rollout> rollouts;
};

struct RolloutConfig {
  int n_rollouts = 100;
  int t_max = 300;  // episodes are cut here
  int t_min = 100;  // shorter episodes are re-collected with a fresh seed
};

// Binary rollout archive: magic "PRRL", u16 version, header, length-prefixed
// records, FNV-1a checksum trailer. Little-endian throughout.
void save_rollouts(const RolloutSet& set, const std::string& path);
RolloutSet load_rollouts(const std::string& path);

// Deterministic order-preserving split: first (1 - test_fraction) of the
// rollouts train, the remainder test.
std::pair<RolloutSet, RolloutSet> split_train_test(const RolloutSet& set, double test_fraction);

class Vae;
class WorldModel;
class Controller;

// Plays `task` with the sticky random policy, encoding frames through `vae`.
RolloutSet collect_random_rollouts(const std::string& task, const EnvConfig& env_cfg,
                                   const Vae& vae, const RolloutConfig& cfg, uint64_t seed);

// Plays `task` with a frozen controller reading (z, h) where h is advanced by
// a frozen world model.
RolloutSet collect_policy_rollouts(const std::string& task, const EnvConfig& env_cfg,
                                   const Vae& vae, const WorldModel& m, const Controller& c,
                                   const RolloutConfig& cfg, uint64_t seed);

// Dreams rollouts entirely inside a frozen world model, starting from
// z ~ N(0, I) and a zeroed recurrent state, recording actor logits on every
// record. Rollouts that produce non-finite latents are dropped and re-seeded;
// `resample_events`, when non-null, counts such restarts.
RolloutSet generate_sim_rollouts(const WorldModel& m, const Controller& c,
                                 const RolloutConfig& cfg, uint64_t seed,
                                 double temperature = 1.0, int* resample_events = nullptr);

}  // namespace prwm
