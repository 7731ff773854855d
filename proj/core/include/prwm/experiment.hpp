#pragma once
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "prwm/config.hpp"
#include "prwm/metrics.hpp"
#include "prwm/schedule.hpp"
#include "prwm/vae.hpp"

namespace prwm {

// Held-out loss of the evaluated task after a global training epoch.
struct LossRow {
  int epoch = 0;        // 1-based global epoch index
  int entry = 0;        // schedule entry being trained
  int trained_task = 0;
  int eval_task = 0;
  double loss = 0.0;
};

// Median episode return inside one distill-window-sized slice of an exposure.
struct RewardRow {
  int entry = 0;
  int64_t window = 0;  // frame window within the exposure
  int task = 0;
  int episodes = 0;
  std::optional<double> median;
};

// KNN attribution of the simulated set generated at the end of an entry.
struct AttributionRow {
  int entry = 0;
  int task = 0;
  double proportion = 0.0;
};

struct MetricsLog {
  int rep = 0;
  bool rehearsal = false;
  std::vector<LossRow> rows;
  std::vector<RewardRow> rewards;
  std::vector<AttributionRow> attribution;
  int resample_events = 0;
};

// Family-level assets shared by every replication and condition: the frozen V
// network and one fixed random-policy evaluation RolloutSet per task.
struct FamilyAssets {
  Vae vae;
  std::vector<RolloutSet> eval_sets;  // indexed by task
};

// Directory layout inside cfg.outdir.
std::string family_dir(const ExperimentConfig& cfg);
std::string run_dir(const ExperimentConfig& cfg, int rep, bool rehearsal_on);

// Collects `n_frames` frames from `task` under the sticky random policy.
std::vector<Frame> collect_frames(const std::string& task, const EnvConfig& env_cfg, int n_frames,
                                  uint64_t seed);

// Trains (or reloads) the family V network and evaluation sets under
// outdir/family. Idempotent: finished artifacts are loaded, not recomputed.
FamilyAssets prepare_family(const ExperimentConfig& cfg, std::ostream* log = nullptr);

// One condition of one replication, resuming from the last completed exposure
// checkpoint when the run directory already holds a partial run.
MetricsLog run_continual_experiment(const ExperimentConfig& cfg, const FamilyAssets& family,
                                    int rep, uint64_t rep_seed, bool rehearsal_on,
                                    std::ostream* log = nullptr);

// Runs the conditions selected by cfg.rehearsal for replications [0, n_reps),
// preparing family assets first. n_reps <= 0 means cfg.n_reps.
std::vector<MetricsLog> run_replications(const ExperimentConfig& cfg, int n_reps = 0,
                                         std::ostream* log = nullptr);

// Reads every persisted run log under outdir (written as runstate.json by the
// runner); incomplete runs are rejected unless `allow_partial`.
std::vector<MetricsLog> load_logs(const ExperimentConfig& cfg, bool allow_partial = false);

// Emits the CSV suite (loss_curves, summary, decomposition, attribution,
// rewards) into outdir from the given logs.
void write_report(const ExperimentConfig& cfg, const std::vector<MetricsLog>& logs);

// True when outdir holds a finished experiment (all selected runs complete).
bool experiment_completed(const ExperimentConfig& cfg);

// Removes run state (family assets, run dirs, reports) from outdir.
void clear_experiment(const ExperimentConfig& cfg);

}  // namespace prwm
