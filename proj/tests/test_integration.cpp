#include <doctest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "prwm/experiment.hpp"
#include "prwm/rng.hpp"
#include "prwm/vae.hpp"

using namespace prwm;
namespace fs = std::filesystem;

namespace {

const std::string& scratch_root() {
  static const std::string root = [] {
    std::string r = "/tmp/prwm-itest-" + std::to_string(getpid());
    fs::remove_all(r);
    fs::create_directories(r);
    return r;
  }();
  return root;
}

// Small but structurally complete pipeline: two tasks, two exposures each of
// two epochs, six rollouts per collection, a 400-step controller exposure.
std::string micro_text(const std::string& outdir) {
  return "tasks = paddle,gather\n"
         "outdir = " +
         outdir +
         "\n"
         "seed = 11\n"
         "n_reps = 1\n"
         "rehearsal = both\n"
         "test_fraction = 0.2\n"
         "frame_height = 16\nframe_width = 16\nchannels = 1\nframe_skip = 4\n"
         "latent_dim = 2\nconv_stack = 4\n"
         "vae_lr = 0.002\nvae_batch = 16\nvae_beta = 1\nvae_patience = 1\n"
         "vae_min_delta = 0.0001\nvae_max_epochs = 2\nvae_frames_per_task = 60\n"
         "mdn_mixtures = 2\nlstm_hidden = 8\nm_lr = 0.002\n"
         "m_batches_per_epoch = 3\nm_batch = 4\nm_seq_len = 8\n"
         "c_hidden = 16\nc_lr = 0.001\ntau = 0.01\ngamma = 0.99\nhorizon = 5\n"
         "n_steps_per_exposure = 400\ndistill_window = 100\ndistill_batch = 32\n"
         "n_rollouts = 6\nt_max = 30\nt_min = 5\nsim_temperature = 1\n"
         "exposures_per_task = 2\ntotal_epochs_per_task = 4\nmin_epochs = 2\n";
}

ExperimentConfig micro_config(const std::string& outdir,
                              const std::vector<std::string>& extra = {}) {
  return parse_config_text(micro_text(outdir), extra);
}

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  REQUIRE_MESSAGE(bool(is), "cannot open " << path);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::vector<std::string> relative_files(const std::string& root) {
  std::vector<std::string> out;
  for (const auto& p : fs::recursive_directory_iterator(root))
    if (p.is_regular_file()) out.push_back(fs::relative(p.path(), root).string());
  std::sort(out.begin(), out.end());
  return out;
}

void check_logs_equal(const MetricsLog& a, const MetricsLog& b) {
  CHECK(a.rep == b.rep);
  CHECK(a.rehearsal == b.rehearsal);
  CHECK(a.resample_events == b.resample_events);
  REQUIRE(a.rows.size() == b.rows.size());
  for (size_t i = 0; i < a.rows.size(); ++i) {
    CHECK(a.rows[i].epoch == b.rows[i].epoch);
    CHECK(a.rows[i].entry == b.rows[i].entry);
    CHECK(a.rows[i].trained_task == b.rows[i].trained_task);
    CHECK(a.rows[i].eval_task == b.rows[i].eval_task);
    CHECK(a.rows[i].loss == b.rows[i].loss);
  }
  REQUIRE(a.rewards.size() == b.rewards.size());
  for (size_t i = 0; i < a.rewards.size(); ++i) {
    CHECK(a.rewards[i].entry == b.rewards[i].entry);
    CHECK(a.rewards[i].window == b.rewards[i].window);
    CHECK(a.rewards[i].task == b.rewards[i].task);
    CHECK(a.rewards[i].episodes == b.rewards[i].episodes);
    CHECK(a.rewards[i].median.has_value() == b.rewards[i].median.has_value());
    if (a.rewards[i].median && b.rewards[i].median)
      CHECK(*a.rewards[i].median == *b.rewards[i].median);
  }
  REQUIRE(a.attribution.size() == b.attribution.size());
  for (size_t i = 0; i < a.attribution.size(); ++i) {
    CHECK(a.attribution[i].entry == b.attribution[i].entry);
    CHECK(a.attribution[i].task == b.attribution[i].task);
    CHECK(a.attribution[i].proportion == b.attribution[i].proportion);
  }
}

struct Reference {
  ExperimentConfig cfg;
  std::vector<MetricsLog> logs;
};

// The shared uninterrupted run every case compares against; built once.
const Reference& ref() {
  static const Reference r = [] {
    ExperimentConfig cfg = micro_config(scratch_root() + "/A");
    std::vector<MetricsLog> logs = run_replications(cfg);
    write_report(cfg, logs);
    return Reference{std::move(cfg), std::move(logs)};
  }();
  return r;
}

int parse_completed_entries(const std::string& state_text) {
  const std::string key = "\"completed_entries\": ";
  const size_t pos = state_text.find(key);
  if (pos == std::string::npos) return -1;
  return std::atoi(state_text.c_str() + pos + key.size());
}

bool parse_done(const std::string& state_text) {
  return state_text.find("\"done\": true") != std::string::npos;
}

constexpr const char* kCsvNames[] = {"loss_curves.csv", "rewards.csv", "attribution.csv",
                                     "decomposition.csv", "summary.csv"};

}  // namespace

TEST_CASE("micro pipeline logs carry the documented shape") {
  const Reference& r = ref();
  REQUIRE(r.logs.size() == 2);
  CHECK(r.logs[0].rep == 0);
  CHECK(r.logs[1].rep == 0);
  CHECK(r.logs[0].rehearsal);
  CHECK_FALSE(r.logs[1].rehearsal);

  for (const MetricsLog& log : r.logs) {
    // 2 tasks x 2 exposures x 2 epochs = 8 global epochs, evaluated on both
    // tasks after every epoch.
    REQUIRE(log.rows.size() == 16);
    std::map<int, int> epoch_rows;
    std::map<int, std::set<int>> entry_tasks;
    for (const LossRow& row : log.rows) {
      CHECK(std::isfinite(row.loss));
      CHECK(row.epoch >= 1);
      CHECK(row.epoch <= 8);
      CHECK(row.entry >= 0);
      CHECK(row.entry < 4);
      CHECK((row.eval_task == 0 || row.eval_task == 1));
      ++epoch_rows[row.epoch];
      entry_tasks[row.entry].insert(row.trained_task);
    }
    for (int e = 1; e <= 8; ++e) CHECK(epoch_rows[e] == 2);
    REQUIRE(entry_tasks.size() == 4);
    for (const auto& [entry, tasks] : entry_tasks) CHECK(tasks.size() == 1);  // one task per entry
    CHECK(*entry_tasks[0].begin() == 0);  // the curriculum always opens with task 0
    std::set<int> all_trained;
    for (const auto& [entry, tasks] : entry_tasks) all_trained.insert(*tasks.begin());
    CHECK(all_trained == std::set<int>{0, 1});

    for (const RewardRow& row : log.rewards) {
      CHECK(row.entry >= 0);
      CHECK(row.entry < 4);
      CHECK(row.window >= 0);
      CHECK(row.window <= 4);  // 400-step exposure over 100-frame windows
      CHECK(row.episodes >= 0);
      CHECK(row.median.has_value() == (row.episodes > 0));
      if (row.median) CHECK(std::isfinite(*row.median));
    }

    // Attribution starts at the first entry that trains the second distinct
    // task and then covers every later entry, both tasks each time.
    int second_task_entry = -1;
    for (const LossRow& row : log.rows)
      if (row.trained_task == 1) {
        second_task_entry = row.entry;
        break;
      }
    REQUIRE(second_task_entry >= 1);
    std::map<int, double> entry_sum;
    std::map<int, int> entry_count;
    for (const AttributionRow& a : log.attribution) {
      CHECK(a.entry >= second_task_entry);
      CHECK(a.proportion >= 0.0);
      CHECK(a.proportion <= 1.0);
      entry_sum[a.entry] += a.proportion;
      ++entry_count[a.entry];
    }
    REQUIRE(int(entry_count.size()) == 4 - second_task_entry);
    for (int e = second_task_entry; e < 4; ++e) {
      CHECK(entry_count[e] == 2);
      CHECK(entry_sum[e] == doctest::Approx(1.0).epsilon(1e-9));
    }
    CHECK(log.resample_events >= 0);
  }

  // Before any pseudo-rehearsal data exists the two conditions are the same
  // computation, so entry 0 must match exactly; they must split afterwards.
  const MetricsLog& with = r.logs[0];
  const MetricsLog& without = r.logs[1];
  bool later_differs = false;
  for (size_t i = 0; i < with.rows.size(); ++i) {
    REQUIRE(with.rows[i].epoch == without.rows[i].epoch);
    REQUIRE(with.rows[i].eval_task == without.rows[i].eval_task);
    if (with.rows[i].entry == 0)
      CHECK(with.rows[i].loss == without.rows[i].loss);
    else if (with.rows[i].loss != without.rows[i].loss)
      later_differs = true;
  }
  CHECK(later_differs);
}

TEST_CASE("identical reruns leave byte-identical artifacts") {
  const Reference& r = ref();
  ExperimentConfig cfg_b = micro_config(scratch_root() + "/B");
  std::vector<MetricsLog> logs_b = run_replications(cfg_b);
  write_report(cfg_b, logs_b);

  REQUIRE(logs_b.size() == r.logs.size());
  for (size_t i = 0; i < logs_b.size(); ++i) check_logs_equal(logs_b[i], r.logs[i]);

  const std::vector<std::string> files_a = relative_files(r.cfg.outdir);
  const std::vector<std::string> files_b = relative_files(cfg_b.outdir);
  REQUIRE(files_a == files_b);
  REQUIRE(files_a.size() > 10);  // family, checkpoints, rollout data, reports
  for (const std::string& rel : files_a) {
    if (rel == "config.resolved.conf") continue;  // records the differing outdir
    const std::string a = slurp(r.cfg.outdir + "/" + rel);
    const std::string b = slurp(cfg_b.outdir + "/" + rel);
    CHECK_MESSAGE(a == b, "artifact differs between reruns: " << rel);
  }

  // The config echoes differ only in the outdir line.
  std::stringstream ea(slurp(r.cfg.outdir + "/config.resolved.conf"));
  std::stringstream eb(slurp(cfg_b.outdir + "/config.resolved.conf"));
  std::string la, lb;
  while (std::getline(ea, la) && std::getline(eb, lb)) {
    if (la.rfind("outdir = ", 0) == 0)
      CHECK(lb.rfind("outdir = ", 0) == 0);
    else
      CHECK(la == lb);
  }
}

TEST_CASE("a run killed between exposures resumes to the uninterrupted result") {
  const Reference& r = ref();
  ExperimentConfig cfg = micro_config(scratch_root() + "/C");
  FamilyAssets family = prepare_family(cfg);
  const uint64_t rep_seed = cfg.replication_seeds()[0];
  const std::string rdir = run_dir(cfg, 0, true);
  const std::string state_path = rdir + "/runstate.json";

  const pid_t pid = fork();
  REQUIRE(pid >= 0);
  if (pid == 0) {
    // Child: run the condition to completion; the parent pulls the plug.
    try {
      run_continual_experiment(cfg, family, 0, rep_seed, true, nullptr);
    } catch (...) {
    }
    _exit(0);
  }

  // Wait until at least one exposure is committed, then kill mid-flight.
  for (int i = 0; i < 4000000; ++i) {
    if (fs::exists(state_path) && parse_completed_entries(slurp(state_path)) >= 1) break;
    std::this_thread::sleep_for(std::chrono::microseconds(200));
  }
  kill(pid, SIGKILL);
  int status = 0;
  waitpid(pid, &status, 0);

  const std::string state = slurp(state_path);
  const int completed = parse_completed_entries(state);
  REQUIRE(completed >= 1);
  REQUIRE(completed <= 3);
  REQUIRE_FALSE(parse_done(state));

  // Partial state is refused by default and admitted with allow_partial.
  CHECK_THROWS_WITH_AS(load_logs(cfg), doctest::Contains("is incomplete"), std::runtime_error);
  const std::vector<MetricsLog> partial = load_logs(cfg, true);
  REQUIRE(partial.size() == 1);
  CHECK(partial[0].rows.size() == size_t(completed) * 4);  // 2 epochs x 2 eval tasks per entry
  CHECK_FALSE(experiment_completed(cfg));

  // Resume in-process and compare against the run that was never interrupted.
  const MetricsLog resumed = run_continual_experiment(cfg, family, 0, rep_seed, true, nullptr);
  check_logs_equal(resumed, r.logs[0]);
  CHECK(experiment_completed(cfg));

  const std::string ref_rdir = run_dir(r.cfg, 0, true);
  const std::vector<std::string> files_c = relative_files(rdir);
  REQUIRE(files_c == relative_files(ref_rdir));
  for (const std::string& rel : files_c)
    CHECK_MESSAGE(slurp(rdir + "/" + rel) == slurp(ref_rdir + "/" + rel),
                  "resumed artifact differs: " << rel);
}

TEST_CASE("persisted logs round-trip and reports are reproducible from disk") {
  const Reference& r = ref();
  const std::vector<MetricsLog> loaded = load_logs(r.cfg);
  REQUIRE(loaded.size() == r.logs.size());
  for (size_t i = 0; i < loaded.size(); ++i) check_logs_equal(loaded[i], r.logs[i]);

  std::map<std::string, std::string> before;
  for (const char* name : kCsvNames) before[name] = slurp(r.cfg.outdir + "/" + name);
  write_report(r.cfg, loaded);
  for (const char* name : kCsvNames)
    CHECK_MESSAGE(slurp(r.cfg.outdir + "/" + name) == before[name],
                  "report not reproducible from persisted logs: " << name);

  // The CSV suite is non-trivial: every file carries its header plus data.
  CHECK(before["loss_curves.csv"].rfind("epoch,trained_task,eval_task,loss,condition,rep\n", 0) ==
        0);
  CHECK(std::count(before["loss_curves.csv"].begin(), before["loss_curves.csv"].end(), '\n') ==
        1 + 2 * 16);
  CHECK(before["summary.csv"].rfind("task,pct_with,pct_without,diff,ci_lo,ci_hi\n", 0) == 0);
  CHECK(std::count(before["summary.csv"].begin(), before["summary.csv"].end(), '\n') == 3);
  CHECK(before["decomposition.csv"].rfind("rep,condition,task,transfer,preservation,", 0) == 0);
  CHECK(std::count(before["decomposition.csv"].begin(), before["decomposition.csv"].end(),
                   '\n') == 1 + 2 * 2);
}

TEST_CASE("config echo guards reruns and clear_experiment wipes the state") {
  const std::string outdir = scratch_root() + "/D";
  ExperimentConfig cfg = micro_config(outdir, {"rehearsal = off"});
  std::vector<MetricsLog> logs = run_replications(cfg);
  REQUIRE(logs.size() == 1);
  CHECK_FALSE(logs[0].rehearsal);
  CHECK(experiment_completed(cfg));

  // Re-running the identical config is a cheap reload of the finished state.
  std::vector<MetricsLog> again = run_replications(cfg);
  REQUIRE(again.size() == 1);
  check_logs_equal(again[0], logs[0]);

  // Any drift from the recorded configuration is refused up front.
  ExperimentConfig drifted = micro_config(outdir, {"rehearsal = off", "tau = 0.02"});
  CHECK_THROWS_WITH_AS(run_replications(drifted),
                       doctest::Contains("records a different configuration"),
                       std::runtime_error);

  // A single-condition run still reports; the lone condition holds the whole
  // integrated mass and the paired columns stay empty.
  write_report(cfg, logs);
  CHECK(slurp(outdir + "/summary.csv") ==
        "task,pct_with,pct_without,diff,ci_lo,ci_hi\n"
        "paddle,,1,,,\n"
        "gather,,1,,,\n");

  clear_experiment(cfg);
  CHECK(fs::exists(outdir));
  CHECK(fs::is_empty(outdir));
  CHECK_FALSE(experiment_completed(cfg));
  CHECK_THROWS_WITH_AS(load_logs(cfg), doctest::Contains("no run logs"), std::runtime_error);
}

TEST_CASE("a single-task family degenerates cleanly and its V beats an untrained V") {
  const std::string outdir = scratch_root() + "/E";
  const std::string text =
      "tasks = paddle\noutdir = " + outdir +
      "\n"
      "seed = 21\nn_reps = 1\nrehearsal = on\ntest_fraction = 0.2\n"
      "frame_height = 16\nframe_width = 16\nchannels = 1\nframe_skip = 4\n"
      "latent_dim = 2\nconv_stack = 4\n"
      "vae_lr = 0.002\nvae_batch = 16\nvae_beta = 1\nvae_patience = 2\n"
      "vae_min_delta = 0.0001\nvae_max_epochs = 8\nvae_frames_per_task = 80\n"
      "mdn_mixtures = 2\nlstm_hidden = 8\nm_lr = 0.002\n"
      "m_batches_per_epoch = 3\nm_batch = 4\nm_seq_len = 8\n"
      "c_hidden = 16\nc_lr = 0.001\nn_steps_per_exposure = 400\n"
      "distill_window = 100\ndistill_batch = 32\n"
      "n_rollouts = 6\nt_max = 30\nt_min = 5\n"
      "exposures_per_task = 2\ntotal_epochs_per_task = 4\nmin_epochs = 2\n";
  ExperimentConfig cfg = parse_config_text(text, {});
  std::vector<MetricsLog> logs = run_replications(cfg);
  REQUIRE(logs.size() == 1);
  const MetricsLog& log = logs[0];

  CHECK(log.attribution.empty());  // one task leaves nothing to attribute
  REQUIRE(log.rows.size() == 4);   // 2 entries x 2 epochs, single eval task
  for (size_t i = 0; i < log.rows.size(); ++i) {
    CHECK(log.rows[i].epoch == int(i) + 1);
    CHECK(log.rows[i].trained_task == 0);
    CHECK(log.rows[i].eval_task == 0);
    CHECK(std::isfinite(log.rows[i].loss));
  }

  write_report(cfg, logs);
  CHECK(slurp(outdir + "/summary.csv") ==
        "task,pct_with,pct_without,diff,ci_lo,ci_hi\n"
        "paddle,1,,,,\n");

  // The decomposition identity survives the CSV round trip exactly.
  std::stringstream dec(slurp(outdir + "/decomposition.csv"));
  std::string line;
  std::getline(dec, line);
  REQUIRE(line == "rep,condition,task,transfer,preservation,reconsolidation,total");
  int data_rows = 0;
  while (std::getline(dec, line)) {
    ++data_rows;
    std::stringstream row(line);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(row, field, ',')) fields.push_back(field);
    REQUIRE(fields.size() == 7);
    const double transfer = std::strtod(fields[3].c_str(), nullptr);
    const double preservation = std::strtod(fields[4].c_str(), nullptr);
    const double total = std::strtod(fields[6].c_str(), nullptr);
    CHECK(total == transfer + preservation);
  }
  CHECK(data_rows == 1);

  // The frozen family V reconstructs held-out frames better than a fresh V.
  FamilyAssets family = prepare_family(cfg);
  const std::vector<Frame> probe = collect_frames("paddle", cfg.env_config(), 40, 555);
  const Vae fresh(cfg.vae_config(), 999);
  const double trained_recon = family.vae.eval_loss(probe).recon;
  const double fresh_recon = fresh.eval_loss(probe).recon;
  CHECK(trained_recon < fresh_recon);
}
