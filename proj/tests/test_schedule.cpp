#include <doctest.h>

#include <set>
#include <stdexcept>
#include <vector>

#include "prwm/rng.hpp"
#include "prwm/schedule.hpp"

using namespace prwm;

TEST_CASE("a thousand sampled curricula keep every invariant") {
  ScheduleConfig cfg;  // 3 exposures x 30 epochs, min 3
  const int task_count = 3;
  const uint64_t family_seed = 1234;

  // Entry 0's duration must come from the family stream alone.
  Rng family_rng(derive_seed(family_seed, "schedule-pin"));
  const int want_pin = int(family_rng.uniform_int(
      cfg.min_epochs, cfg.total_epochs_per_task / cfg.exposures_per_task));

  std::set<int> tasks_at_1;
  for (int rep = 0; rep < 1000; ++rep) {
    ExposureSchedule s = sample_exposure_schedule(task_count, cfg, family_seed, uint64_t(rep));
    REQUIRE(int(s.entries.size()) == task_count * cfg.exposures_per_task);
    CHECK(s.entries[0].task == 0);
    CHECK(s.entries[0].epochs == want_pin);
    CHECK(s.total_epochs() == task_count * cfg.total_epochs_per_task);

    std::vector<int> sums(task_count, 0), counts(task_count, 0);
    for (const auto& e : s.entries) {
      REQUIRE(e.task >= 0);
      REQUIRE(e.task < task_count);
      CHECK(e.epochs >= cfg.min_epochs);
      // No single exposure can exceed what the other mandatory ones leave.
      CHECK(e.epochs <=
            cfg.total_epochs_per_task - (cfg.exposures_per_task - 1) * cfg.min_epochs);
      sums[size_t(e.task)] += e.epochs;
      counts[size_t(e.task)] += 1;
    }
    for (int t = 0; t < task_count; ++t) {
      CHECK(sums[size_t(t)] == cfg.total_epochs_per_task);
      CHECK(counts[size_t(t)] == cfg.exposures_per_task);
    }
    s.validate(cfg.min_epochs);
    tasks_at_1.insert(s.entries[1].task);
  }
  // The shuffle reaches every task in the slot right after the pinned entry.
  CHECK(tasks_at_1.size() == size_t(task_count));
}

TEST_CASE("schedules hold up across task counts and stay deterministic") {
  ScheduleConfig cfg;
  for (int task_count : {3, 6, 13}) {
    for (uint64_t rep = 0; rep < 20; ++rep) {
      ExposureSchedule s = sample_exposure_schedule(task_count, cfg, 7, rep);
      s.validate(cfg.min_epochs);
      CHECK(s.task_count == task_count);
      CHECK(s.total_epochs() == task_count * cfg.total_epochs_per_task);
    }
  }

  ExposureSchedule a = sample_exposure_schedule(5, cfg, 11, 13);
  ExposureSchedule b = sample_exposure_schedule(5, cfg, 11, 13);
  REQUIRE(a.entries.size() == b.entries.size());
  for (size_t i = 0; i < a.entries.size(); ++i) {
    CHECK(a.entries[i].task == b.entries[i].task);
    CHECK(a.entries[i].epochs == b.entries[i].epochs);
  }

  // A different replication seed reorders, but keeps the pinned opener.
  ExposureSchedule c = sample_exposure_schedule(5, cfg, 11, 14);
  CHECK(c.entries[0].task == a.entries[0].task);
  CHECK(c.entries[0].epochs == a.entries[0].epochs);
  bool same = true;
  for (size_t i = 0; i < a.entries.size(); ++i)
    same = same && a.entries[i].task == c.entries[i].task &&
           a.entries[i].epochs == c.entries[i].epochs;
  CHECK(!same);

  // A different family changes the opening duration for some family pair.
  bool pin_varies = false;
  for (uint64_t fam = 0; fam < 20 && !pin_varies; ++fam)
    pin_varies = sample_exposure_schedule(3, cfg, fam, 0).entries[0].epochs !=
                 a.entries[0].epochs;
  CHECK(pin_varies);
}

TEST_CASE("single-exposure curricula degenerate to one full block per task") {
  ScheduleConfig cfg;
  cfg.exposures_per_task = 1;
  for (uint64_t rep = 0; rep < 5; ++rep) {
    ExposureSchedule s = sample_exposure_schedule(4, cfg, 3, rep);
    REQUIRE(s.entries.size() == 4);
    CHECK(s.entries[0].task == 0);
    for (const auto& e : s.entries) CHECK(e.epochs == cfg.total_epochs_per_task);
    s.validate(cfg.min_epochs);
  }
}

TEST_CASE("exposure positions are cumulative epoch offsets") {
  ExposureSchedule s;
  s.task_count = 2;
  s.exposures_per_task = 2;
  s.total_epochs_per_task = 30;
  s.entries = {{0, 5}, {1, 10}, {0, 25}, {1, 20}};
  s.validate(5);

  CHECK(s.total_epochs() == 60);
  CHECK(s.first_exposure_epoch(0) == 0);
  CHECK(s.first_exposure_epoch(1) == 5);
  CHECK(s.final_exposure_epoch(0) == 15);
  CHECK(s.final_exposure_epoch(1) == 40);
  CHECK_THROWS_AS(s.first_exposure_epoch(2), std::invalid_argument);
  CHECK_THROWS_AS(s.final_exposure_epoch(7), std::invalid_argument);
}

TEST_CASE("infeasible schedule configurations are rejected") {
  ScheduleConfig cfg;
  CHECK_THROWS_AS(sample_exposure_schedule(0, cfg, 1, 1), std::invalid_argument);

  ScheduleConfig tight;
  tight.exposures_per_task = 3;
  tight.min_epochs = 3;
  tight.total_epochs_per_task = 8;  // needs at least 9
  CHECK_THROWS_AS(sample_exposure_schedule(3, tight, 1, 1), std::invalid_argument);

  ScheduleConfig zero_exp;
  zero_exp.exposures_per_task = 0;
  CHECK_THROWS_AS(sample_exposure_schedule(3, zero_exp, 1, 1), std::invalid_argument);

  ScheduleConfig zero_min;
  zero_min.min_epochs = 0;
  CHECK_THROWS_AS(sample_exposure_schedule(3, zero_min, 1, 1), std::invalid_argument);

  // The exact boundary is allowed: every exposure gets min_epochs.
  ScheduleConfig exact;
  exact.exposures_per_task = 3;
  exact.min_epochs = 3;
  exact.total_epochs_per_task = 9;
  ExposureSchedule s = sample_exposure_schedule(2, exact, 1, 1);
  for (const auto& e : s.entries) CHECK(e.epochs == 3);
}

TEST_CASE("validate flags every kind of broken curriculum") {
  ExposureSchedule good;
  good.task_count = 2;
  good.exposures_per_task = 2;
  good.total_epochs_per_task = 30;
  good.entries = {{0, 10}, {1, 10}, {0, 20}, {1, 20}};
  good.validate(3);

  ExposureSchedule s = good;
  s.entries.pop_back();
  CHECK_THROWS_WITH_AS(s.validate(3), doctest::Contains("entry count"), std::logic_error);

  s = good;
  s.entries[0].task = 1;
  s.entries[1].task = 0;
  CHECK_THROWS_WITH_AS(s.validate(3), doctest::Contains("task 0"), std::logic_error);

  s = good;
  s.entries[1].epochs = 2;
  s.entries[3].epochs = 28;
  CHECK_THROWS_WITH_AS(s.validate(3), doctest::Contains("min_epochs"), std::logic_error);

  s = good;
  s.entries[2].epochs = 21;  // task 0 now sums to 31
  CHECK_THROWS_WITH_AS(s.validate(3), doctest::Contains("sum"), std::logic_error);

  s = good;
  s.entries = {{0, 30}, {1, 10}, {1, 10}, {1, 10}};  // sums right, counts 1 and 3
  CHECK_THROWS_WITH_AS(s.validate(3), doctest::Contains("count"), std::logic_error);

  s = good;
  s.entries[3].task = 5;
  CHECK_THROWS_WITH_AS(s.validate(3), doctest::Contains("out of range"), std::logic_error);
}
