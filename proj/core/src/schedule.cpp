#include "prwm/schedule.hpp"

#include <stdexcept>
#include <string>

namespace prwm {

int ExposureSchedule::total_epochs() const {
  int sum = 0;
  for (const auto& e : entries) sum += e.epochs;
  return sum;
}

int ExposureSchedule::first_exposure_epoch(int task) const {
  int at = 0;
  for (const auto& e : entries) {
    if (e.task == task) return at;
    at += e.epochs;
  }
  throw std::invalid_argument("schedule: task " + std::to_string(task) + " never exposed");
}

int ExposureSchedule::final_exposure_epoch(int task) const {
  int at = 0, found = -1;
  for (const auto& e : entries) {
    if (e.task == task) found = at;
    at += e.epochs;
  }
  if (found < 0)
    throw std::invalid_argument("schedule: task " + std::to_string(task) + " never exposed");
  return found;
}

void ExposureSchedule::validate(int min_epochs) const {
  if (int(entries.size()) != task_count * exposures_per_task)
    throw std::logic_error("schedule: entry count mismatch");
  if (!entries.empty() && entries.front().task != 0)
    throw std::logic_error("schedule: entry 0 must train task 0");
  std::vector<int> sums(size_t(task_count), 0);
  std::vector<int> counts(size_t(task_count), 0);
  for (const auto& e : entries) {
    if (e.task < 0 || e.task >= task_count) throw std::logic_error("schedule: task out of range");
    if (e.epochs < min_epochs) throw std::logic_error("schedule: entry below min_epochs");
    sums[size_t(e.task)] += e.epochs;
    counts[size_t(e.task)] += 1;
  }
  for (int t = 0; t < task_count; ++t) {
    if (sums[size_t(t)] != total_epochs_per_task)
      throw std::logic_error("schedule: per-task epoch sum mismatch");
    if (counts[size_t(t)] != exposures_per_task)
      throw std::logic_error("schedule: per-task exposure count mismatch");
  }
}

namespace {

// Sequential duration draw for one task. With one exposure left the remainder
// is taken outright, so the sum is exact and every entry stays >= min_epochs.
std::vector<int> draw_durations(int exposures, int total, int min_epochs, Rng& rng,
                                const int* pinned_first) {
  std::vector<int> out;
  out.reserve(size_t(exposures));
  int remaining = total;
  for (int k = 0; k < exposures; ++k) {
    const int left = exposures - k;
    int d;
    if (left == 1) {
      d = remaining;
    } else if (k == 0 && pinned_first) {
      d = *pinned_first;
    } else {
      d = int(rng.uniform_int(min_epochs, remaining / left));
    }
    out.push_back(d);
    remaining -= d;
  }
  return out;
}

}  // namespace

ExposureSchedule sample_exposure_schedule(int task_count, const ScheduleConfig& cfg,
                                          uint64_t family_seed, uint64_t rep_seed) {
  if (task_count < 1) throw std::invalid_argument("schedule: need at least one task");
  if (cfg.exposures_per_task < 1 || cfg.min_epochs < 1)
    throw std::invalid_argument("schedule: exposures and min_epochs must be positive");
  if (cfg.total_epochs_per_task < cfg.exposures_per_task * cfg.min_epochs)
    throw std::invalid_argument("schedule: total epochs below exposures * min_epochs");

  // Entry 0's duration comes from the family stream alone, so every
  // replication of the family opens with the same (task, duration) pair.
  int pinned = cfg.total_epochs_per_task;
  if (cfg.exposures_per_task > 1) {
    Rng family_rng(derive_seed(family_seed, "schedule-pin"));
    pinned = int(family_rng.uniform_int(cfg.min_epochs,
                                        cfg.total_epochs_per_task / cfg.exposures_per_task));
  }

  Rng rng(derive_seed(rep_seed, "schedule"));
  ExposureSchedule s;
  s.exposures_per_task = cfg.exposures_per_task;
  s.total_epochs_per_task = cfg.total_epochs_per_task;
  s.task_count = task_count;
  for (int t = 0; t < task_count; ++t) {
    const int* pin = (t == 0) ? &pinned : nullptr;
    std::vector<int> durations =
        draw_durations(cfg.exposures_per_task, cfg.total_epochs_per_task, cfg.min_epochs, rng, pin);
    for (int d : durations) s.entries.push_back({t, d});
  }
  // Fisher-Yates over entries[1..], leaving the pinned first entry in place.
  for (size_t i = s.entries.size() - 1; i > 1; --i) {
    const size_t j = 1 + size_t(rng.uniform_int(0, int64_t(i) - 1));
    std::swap(s.entries[i], s.entries[j]);
  }
  s.validate(cfg.min_epochs);
  return s;
}

}  // namespace prwm
