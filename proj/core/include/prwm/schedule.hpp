#pragma once
#include <cstdint>
#include <vector>

#include "prwm/rng.hpp"

namespace prwm {

struct ExposureEntry {
  int task = 0;
  int epochs = 0;
};

// Randomized continual curriculum: every task appears `exposures_per_task`
// times and its durations sum to `total_epochs_per_task`. Entry 0 is pinned to
// task 0 with a duration drawn from the family seed, so paired replications of
// one experiment family always start identically.
struct ExposureSchedule {
  std::vector<ExposureEntry> entries;
  int exposures_per_task = 3;
  int total_epochs_per_task = 30;
  int task_count = 0;

  int total_epochs() const;
  // Number of epochs scheduled before the task's first / final entry begins.
  int first_exposure_epoch(int task) const;
  int final_exposure_epoch(int task) const;
  // Throws std::logic_error when an invariant is broken.
  void validate(int min_epochs) const;
};

struct ScheduleConfig {
  int exposures_per_task = 3;
  int total_epochs_per_task = 30;
  int min_epochs = 3;
};

// Draws per-task exposure durations sequentially — duration ~ uniform integer
// in [min_epochs, floor(remaining / exposures_left)], the final exposure takes
// the remainder — then shuffles all entries except the pinned first one.
// `family_seed` fixes entry 0; `rep_seed` drives everything else.
ExposureSchedule sample_exposure_schedule(int task_count, const ScheduleConfig& cfg,
                                          uint64_t family_seed, uint64_t rep_seed);

}  // namespace prwm
