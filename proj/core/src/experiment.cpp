#include "prwm/experiment.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>

#include "prwm/checkpoint.hpp"
#include "prwm/controller.hpp"
#include "prwm/world_model.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace prwm {

namespace {

constexpr const char* kStateFile = "runstate.json";

std::string cond_name(bool rehearsal_on) { return rehearsal_on ? "rehearsal" : "none"; }

void write_text_atomic(const std::string& path, const std::string& text) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write '" + tmp + "'");
    os << text;
  }
  fs::rename(tmp, path);
}

void save_checkpoint_atomic(const std::string& path,
                            const std::vector<std::pair<std::string, Tensor>>& tensors) {
  const std::string tmp = path + ".tmp";
  save_checkpoint(tmp, tensors);
  fs::rename(tmp, path);
}

void save_rollouts_atomic(const RolloutSet& set, const std::string& path) {
  const std::string tmp = path + ".tmp";
  save_rollouts(set, tmp);
  fs::rename(tmp, path);
}

json log_to_json(const MetricsLog& log, int completed_entries, bool done) {
  json j;
  j["rep"] = log.rep;
  j["rehearsal"] = log.rehearsal;
  j["completed_entries"] = completed_entries;
  j["done"] = done;
  j["resample_events"] = log.resample_events;
  json rows = json::array();
  for (const auto& r : log.rows)
    rows.push_back({r.epoch, r.entry, r.trained_task, r.eval_task, r.loss});
  j["rows"] = std::move(rows);
  json rewards = json::array();
  for (const auto& r : log.rewards) {
    json med;
    if (r.median) med = *r.median;
    rewards.push_back({r.entry, r.window, r.task, r.episodes, med});
  }
  j["rewards"] = std::move(rewards);
  json attr = json::array();
  for (const auto& a : log.attribution) attr.push_back({a.entry, a.task, a.proportion});
  j["attribution"] = std::move(attr);
  return j;
}

MetricsLog log_from_json(const json& j, int* completed_entries, bool* done) {
  MetricsLog log;
  log.rep = j.at("rep").get<int>();
  log.rehearsal = j.at("rehearsal").get<bool>();
  log.resample_events = j.at("resample_events").get<int>();
  *completed_entries = j.at("completed_entries").get<int>();
  *done = j.at("done").get<bool>();
  for (const auto& r : j.at("rows"))
    log.rows.push_back({r.at(0).get<int>(), r.at(1).get<int>(), r.at(2).get<int>(),
                        r.at(3).get<int>(), r.at(4).get<double>()});
  for (const auto& r : j.at("rewards")) {
    RewardRow row{r.at(0).get<int>(), r.at(1).get<int64_t>(), r.at(2).get<int>(),
                  r.at(3).get<int>(), std::nullopt};
    if (!r.at(4).is_null()) row.median = r.at(4).get<double>();
    log.rewards.push_back(std::move(row));
  }
  for (const auto& a : j.at("attribution"))
    log.attribution.push_back({a.at(0).get<int>(), a.at(1).get<int>(), a.at(2).get<double>()});
  return log;
}

void persist_state(const std::string& rdir, const MetricsLog& log, int completed_entries,
                   bool done) {
  write_text_atomic(rdir + "/" + kStateFile, log_to_json(log, completed_entries, done).dump(1));
}

Vae load_or_train_vae(const ExperimentConfig& cfg, const std::string& path, std::ostream* log) {
  const VaeConfig vcfg = cfg.vae_config();
  if (fs::exists(path)) {
    Vae vae(vcfg, derive_seed(cfg.seed, "vae"));
    restore_params(vae.params(), load_checkpoint(path));
    return vae;
  }
  std::vector<Frame> frames;
  frames.reserve(size_t(cfg.vae_frames_per_task) * cfg.tasks.size());
  for (size_t t = 0; t < cfg.tasks.size(); ++t) {
    auto task_frames = collect_frames(cfg.tasks[t], cfg.env_config(), cfg.vae_frames_per_task,
                                      derive_seed(cfg.seed, "vae-frames", uint64_t(t)));
    frames.insert(frames.end(), std::make_move_iterator(task_frames.begin()),
                  std::make_move_iterator(task_frames.end()));
  }
  Vae vae = train_vae(frames, vcfg, derive_seed(cfg.seed, "vae"), log);
  save_checkpoint_atomic(path, snapshot_params(vae.params()));
  return vae;
}

// Per-exposure checkpoint paths.
std::string chk_m(const std::string& rdir, int e) {
  return rdir + "/chk/m_" + std::to_string(e) + ".prwm";
}
std::string chk_c(const std::string& rdir, int e) {
  return rdir + "/chk/c_" + std::to_string(e) + ".prwm";
}
std::string chk_opt(const std::string& rdir, int e) {
  return rdir + "/chk/opt_" + std::to_string(e) + ".prwm";
}
std::string data_real(const std::string& rdir, int e) {
  return rdir + "/data/real_" + std::to_string(e) + ".prrl";
}
std::string data_sim(const std::string& rdir, int e) {
  return rdir + "/data/sim_" + std::to_string(e) + ".prrl";
}

std::vector<bool> selected_conditions(Rehearsal r) {
  switch (r) {
    case Rehearsal::kOn: return {true};
    case Rehearsal::kOff: return {false};
    case Rehearsal::kBoth: return {true, false};
  }
  return {true, false};
}

}  // namespace

std::string family_dir(const ExperimentConfig& cfg) { return cfg.outdir + "/family"; }

std::string run_dir(const ExperimentConfig& cfg, int rep, bool rehearsal_on) {
  return cfg.outdir + "/rep" + std::to_string(rep) + "/" + cond_name(rehearsal_on);
}

std::vector<Frame> collect_frames(const std::string& task, const EnvConfig& env_cfg, int n_frames,
                                  uint64_t seed) {
  auto env = make_env(task, env_cfg);
  std::vector<Frame> frames;
  frames.reserve(size_t(n_frames));
  uint64_t episode = 0;
  while (int(frames.size()) < n_frames) {
    Rng action_rng(derive_seed(seed, "actions", episode));
    Observation obs = env->reset(derive_seed(seed, "episode", episode));
    frames.push_back(obs.frame);
    int prev_action = -1;
    while (!obs.done && int(frames.size()) < n_frames) {
      const int action = random_policy_action(action_rng, prev_action);
      prev_action = action;
      obs = env->step(action);
      frames.push_back(obs.frame);
    }
    ++episode;
  }
  return frames;
}

FamilyAssets prepare_family(const ExperimentConfig& cfg, std::ostream* log) {
  fs::create_directories(family_dir(cfg));
  if (log) *log << "[family] preparing V and evaluation sets\n";
  Vae vae = load_or_train_vae(cfg, family_dir(cfg) + "/vae.prwm", log);

  const int n_eval =
      std::max<int>(2, int(std::llround(double(cfg.n_rollouts) * cfg.test_fraction)));
  RolloutConfig ecfg = cfg.rollout_config();
  ecfg.n_rollouts = n_eval;
  std::vector<RolloutSet> eval_sets;
  for (size_t t = 0; t < cfg.tasks.size(); ++t) {
    const std::string path = family_dir(cfg) + "/eval_" + cfg.tasks[t] + ".prrl";
    if (fs::exists(path)) {
      eval_sets.push_back(load_rollouts(path));
    } else {
      RolloutSet set = collect_random_rollouts(cfg.tasks[t], cfg.env_config(), vae, ecfg,
                                               derive_seed(cfg.seed, "eval", uint64_t(t)));
      set.source_task = int(t);
      save_rollouts_atomic(set, path);
      eval_sets.push_back(std::move(set));
    }
  }
  if (log) *log << "[family] ready\n";
  return FamilyAssets{std::move(vae), std::move(eval_sets)};
}

MetricsLog run_continual_experiment(const ExperimentConfig& cfg, const FamilyAssets& family,
                                    int rep, uint64_t rep_seed, bool rehearsal_on,
                                    std::ostream* log) {
  const std::string rdir = run_dir(cfg, rep, rehearsal_on);
  fs::create_directories(rdir + "/chk");
  fs::create_directories(rdir + "/data");

  const ExposureSchedule schedule = sample_exposure_schedule(
      int(cfg.tasks.size()), cfg.schedule_config(), cfg.seed, rep_seed);
  const int n_entries = int(schedule.entries.size());

  ModelConfig mcfg = cfg.model_config();
  ControllerConfig ccfg = cfg.controller_config();
  WorldModel m(mcfg, derive_seed(rep_seed, "m-init"));
  Controller c(cfg.latent_dim + cfg.lstm_hidden, ccfg, derive_seed(rep_seed, "c-init"));
  Adam m_opt(mcfg.lr), a2c_opt(ccfg.lr), distill_opt(ccfg.lr);

  MetricsLog out;
  out.rep = rep;
  out.rehearsal = rehearsal_on;
  int start_entry = 0;
  RolloutSet sim;
  bool have_sim = false;

  const std::string state_path = rdir + "/" + kStateFile;
  if (fs::exists(state_path)) {
    std::ifstream is(state_path);
    json j = json::parse(is);
    bool done = false;
    out = log_from_json(j, &start_entry, &done);
    if (done) {
      if (log) *log << "[rep " << rep << "/" << cond_name(rehearsal_on) << "] already complete\n";
      return out;
    }
    if (start_entry > 0) {
      const int last = start_entry - 1;
      restore_params(m.params(), load_checkpoint(chk_m(rdir, last)));
      restore_params(c.params(), load_checkpoint(chk_c(rdir, last)));
      const NamedTensors opt = load_checkpoint(chk_opt(rdir, last));
      m_opt.import_state(m.params(), "m_opt", opt.items);
      a2c_opt.import_state(c.params(), "a2c_opt", opt.items);
      distill_opt.import_state(c.params(), "distill_opt", opt.items);
      sim = load_rollouts(data_sim(rdir, last));
      have_sim = true;
    }
    if (log)
      *log << "[rep " << rep << "/" << cond_name(rehearsal_on) << "] resuming at entry "
           << start_entry << "\n";
  }

  int global_epoch = 0;
  for (int e = 0; e < start_entry; ++e) global_epoch += schedule.entries[size_t(e)].epochs;

  for (int e = start_entry; e < n_entries; ++e) {
    const ExposureEntry entry = schedule.entries[size_t(e)];
    const std::string& task = cfg.tasks[size_t(entry.task)];
    if (log)
      *log << "[rep " << rep << "/" << cond_name(rehearsal_on) << "] entry " << e << ": " << task
           << " x" << entry.epochs << " epochs\n";

    const uint64_t collect_seed = derive_seed(rep_seed, "collect", uint64_t(e));
    RolloutSet real =
        (e == 0) ? collect_random_rollouts(task, cfg.env_config(), family.vae,
                                           cfg.rollout_config(), collect_seed)
                 : collect_policy_rollouts(task, cfg.env_config(), family.vae, m, c,
                                           cfg.rollout_config(), collect_seed);
    real.source_task = entry.task;
    save_rollouts_atomic(real, data_real(rdir, e));
    auto [train_set, held_out] = split_train_test(real, cfg.test_fraction);
    (void)held_out;  // the fixed family sets are the evaluation basis

    const RolloutSet* sim_ptr = (rehearsal_on && have_sim) ? &sim : nullptr;
    for (int k = 0; k < entry.epochs; ++k) {
      Rng erng(derive_seed(rep_seed, "m-train", uint64_t(e), uint64_t(k)));
      train_m_epoch(m, train_set, sim_ptr, m_opt, erng);
      ++global_epoch;
      for (size_t t = 0; t < cfg.tasks.size(); ++t)
        out.rows.push_back({global_epoch, e, entry.task, int(t),
                            evaluate_m(m, family.eval_sets[t])});
    }

    CExposureStats cstats =
        train_c_exposure(task, cfg.env_config(), family.vae, m, c, sim_ptr, a2c_opt, distill_opt,
                         derive_seed(rep_seed, "c-train", uint64_t(e)),
                         ccfg.n_steps_per_exposure);
    for (const RewardWindow& w : median_reward(cstats.episodes, ccfg.distill_window))
      out.rewards.push_back({e, w.window, entry.task, w.episodes, w.median});

    save_checkpoint_atomic(chk_m(rdir, e), snapshot_params(m.params()));
    save_checkpoint_atomic(chk_c(rdir, e), snapshot_params(c.params()));
    std::vector<std::pair<std::string, Tensor>> opt_state;
    m_opt.export_state(m.params(), "m_opt", opt_state);
    a2c_opt.export_state(c.params(), "a2c_opt", opt_state);
    distill_opt.export_state(c.params(), "distill_opt", opt_state);
    save_checkpoint_atomic(chk_opt(rdir, e), opt_state);

    int resamples = 0;
    RolloutSet fresh = generate_sim_rollouts(m, c, cfg.rollout_config(),
                                             derive_seed(rep_seed, "sim", uint64_t(e)),
                                             cfg.sim_temperature, &resamples);
    out.resample_events += resamples;
    save_rollouts_atomic(fresh, data_sim(rdir, e));
    sim = std::move(fresh);
    have_sim = true;

    // Attribute the fresh pseudo-samples to the tasks trained so far.
    std::set<int> trained;
    for (int i = 0; i <= e; ++i) trained.insert(schedule.entries[size_t(i)].task);
    if (trained.size() >= 2) {
      std::vector<std::vector<double>> queries;
      for (const Rollout& ro : sim.rollouts) {
        for (const StepRecord& rec : ro.records) {
          if (int(queries.size()) >= 1000) break;
          queries.push_back(rec.z);
        }
        if (int(queries.size()) >= 1000) break;
      }
      std::vector<std::vector<double>> refs;
      std::vector<int> labels;
      for (int t : trained) {
        for (const Rollout& ro : family.eval_sets[size_t(t)].rollouts) {
          for (const StepRecord& rec : ro.records) {
            refs.push_back(rec.z);
            labels.push_back(t);
          }
        }
      }
      const std::vector<double> props =
          knn_task_attribution(queries, refs, labels, 5, int(cfg.tasks.size()));
      for (int t : trained) out.attribution.push_back({e, t, props[size_t(t)]});
    }

    persist_state(rdir, out, e + 1, e + 1 == n_entries);
  }
  if (log) *log << "[rep " << rep << "/" << cond_name(rehearsal_on) << "] done\n";
  return out;
}

std::vector<MetricsLog> run_replications(const ExperimentConfig& cfg, int n_reps,
                                         std::ostream* log) {
  if (n_reps <= 0) n_reps = cfg.n_reps;
  fs::create_directories(cfg.outdir);
  const std::string echo_path = cfg.outdir + "/config.resolved.conf";
  const std::string rendered = cfg.render();
  if (fs::exists(echo_path)) {
    std::ifstream is(echo_path);
    std::stringstream ss;
    ss << is.rdbuf();
    if (ss.str() != rendered)
      throw std::runtime_error(
          "experiment: '" + echo_path +
          "' records a different configuration; use --force to start fresh");
  } else {
    write_text_atomic(echo_path, rendered);
  }

  FamilyAssets family = prepare_family(cfg, log);
  const std::vector<uint64_t> seeds = cfg.replication_seeds();
  if (int(seeds.size()) < n_reps) throw ConfigError("config: seeds list shorter than n_reps");
  std::vector<MetricsLog> logs;
  for (int rep = 0; rep < n_reps; ++rep)
    for (bool on : selected_conditions(cfg.rehearsal))
      logs.push_back(
          run_continual_experiment(cfg, family, rep, seeds[size_t(rep)], on, log));
  return logs;
}

std::vector<MetricsLog> load_logs(const ExperimentConfig& cfg, bool allow_partial) {
  std::vector<MetricsLog> logs;
  for (int rep = 0;; ++rep) {
    bool any = false;
    for (bool on : {true, false}) {
      const std::string path = run_dir(cfg, rep, on) + "/" + kStateFile;
      if (!fs::exists(path)) continue;
      any = true;
      std::ifstream is(path);
      json j = json::parse(is);
      int completed = 0;
      bool done = false;
      MetricsLog log = log_from_json(j, &completed, &done);
      if (!done && !allow_partial)
        throw std::runtime_error("experiment: run '" + run_dir(cfg, rep, on) +
                                 "' is incomplete; resume it or report with --partial");
      logs.push_back(std::move(log));
    }
    if (!any) break;
  }
  if (logs.empty()) throw std::runtime_error("experiment: no run logs under '" + cfg.outdir + "'");
  return logs;
}

bool experiment_completed(const ExperimentConfig& cfg) {
  int n_runs = 0;
  for (int rep = 0;; ++rep) {
    bool any = false;
    for (bool on : {true, false}) {
      const std::string path = run_dir(cfg, rep, on) + "/" + kStateFile;
      if (!fs::exists(path)) continue;
      any = true;
      std::ifstream is(path);
      json j = json::parse(is);
      if (!j.value("done", false)) return false;
      ++n_runs;
    }
    if (!any) break;
  }
  return n_runs > 0;
}

void clear_experiment(const ExperimentConfig& cfg) {
  if (!fs::exists(cfg.outdir)) return;
  for (const auto& entry : fs::directory_iterator(cfg.outdir)) fs::remove_all(entry.path());
}

namespace {

// Held-out curve of one (log, eval task): losses ordered by epoch 1..N.
std::vector<double> curve_of(const MetricsLog& log, int eval_task) {
  std::vector<std::pair<int, double>> pts;
  for (const auto& r : log.rows)
    if (r.eval_task == eval_task) pts.emplace_back(r.epoch, r.loss);
  std::sort(pts.begin(), pts.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<double> c;
  c.reserve(pts.size());
  for (const auto& p : pts) c.push_back(p.second);
  return c;
}

}  // namespace

void write_report(const ExperimentConfig& cfg, const std::vector<MetricsLog>& logs) {
  fs::create_directories(cfg.outdir);
  const auto task_name = [&](int t) { return cfg.tasks[size_t(t)]; };
  const auto cond_of = [](const MetricsLog& l) { return l.rehearsal ? "rehearsal" : "none"; };

  // Stable output order: by replication, then condition name.
  std::vector<const MetricsLog*> ordered;
  for (const auto& l : logs) ordered.push_back(&l);
  std::sort(ordered.begin(), ordered.end(), [&](const MetricsLog* a, const MetricsLog* b) {
    if (a->rep != b->rep) return a->rep < b->rep;
    return cond_of(*a) < cond_of(*b);
  });

  {
    std::string csv = "epoch,trained_task,eval_task,loss,condition,rep\n";
    for (const MetricsLog* l : ordered)
      for (const auto& r : l->rows)
        csv += std::to_string(r.epoch) + "," + task_name(r.trained_task) + "," +
               task_name(r.eval_task) + "," + format_double(r.loss) + "," + cond_of(*l) + "," +
               std::to_string(l->rep) + "\n";
    write_text_atomic(cfg.outdir + "/loss_curves.csv", csv);
  }

  {
    std::string csv = "rep,condition,entry,task,frame_window,episodes,median\n";
    for (const MetricsLog* l : ordered)
      for (const auto& r : l->rewards)
        csv += std::to_string(l->rep) + "," + cond_of(*l) + "," + std::to_string(r.entry) + "," +
               task_name(r.task) + "," + std::to_string(r.window) + "," +
               std::to_string(r.episodes) + "," + (r.median ? format_double(*r.median) : "") +
               "\n";
    write_text_atomic(cfg.outdir + "/rewards.csv", csv);
  }

  {
    std::string csv = "rep,condition,entry,task,proportion\n";
    for (const MetricsLog* l : ordered)
      for (const auto& a : l->attribution)
        csv += std::to_string(l->rep) + "," + cond_of(*l) + "," + std::to_string(a.entry) + "," +
               task_name(a.task) + "," + format_double(a.proportion) + "\n";
    write_text_atomic(cfg.outdir + "/attribution.csv", csv);
  }

  // Decomposition per (rep, condition, task) with boundaries from the rep's
  // schedule; curve points sit at epochs 1..N.
  {
    std::string csv = "rep,condition,task,transfer,preservation,reconsolidation,total\n";
    const std::vector<uint64_t> seeds = cfg.replication_seeds();
    for (const MetricsLog* l : ordered) {
      if (l->rep >= int(seeds.size())) continue;
      const ExposureSchedule schedule = sample_exposure_schedule(
          int(cfg.tasks.size()), cfg.schedule_config(), cfg.seed, seeds[size_t(l->rep)]);
      for (size_t t = 0; t < cfg.tasks.size(); ++t) {
        const std::vector<double> curve = curve_of(*l, int(t));
        if (curve.size() < 2) continue;
        const LossDecomposition d =
            decompose_loss(curve, schedule.first_exposure_epoch(int(t)),
                           schedule.final_exposure_epoch(int(t)), 1);
        csv += std::to_string(l->rep) + "," + cond_of(*l) + "," + task_name(int(t)) + "," +
               format_double(d.transfer) + "," + format_double(d.preservation) + "," +
               format_double(d.reconsolidation) + "," + format_double(d.total) + "\n";
      }
    }
    write_text_atomic(cfg.outdir + "/decomposition.csv", csv);
  }

  // Summary: per task, mean percent integrated loss per condition over the
  // replications that ran both conditions, plus the paired 95% CI.
  {
    std::map<int, std::pair<const MetricsLog*, const MetricsLog*>> pairs;  // rep -> (with, wo)
    for (const MetricsLog* l : ordered) {
      auto& p = pairs[l->rep];
      (l->rehearsal ? p.first : p.second) = l;
    }
    std::string csv = "task,pct_with,pct_without,diff,ci_lo,ci_hi\n";
    for (size_t t = 0; t < cfg.tasks.size(); ++t) {
      std::vector<double> pw, pwo;
      for (const auto& [rep, p] : pairs) {
        if (!p.first || !p.second) continue;
        const auto with_curve = curve_of(*p.first, int(t));
        const auto wo_curve = curve_of(*p.second, int(t));
        if (with_curve.size() < 2 || with_curve.size() != wo_curve.size()) continue;
        const auto [a, b] = percent_integrated_loss(with_curve, wo_curve);
        pw.push_back(a);
        pwo.push_back(b);
      }
      if (pw.empty()) {
        // Single-condition pipelines still report: the lone condition holds
        // the whole integrated mass by definition.
        double with_sum = 0.0, wo_sum = 0.0;
        int with_n = 0, wo_n = 0;
        for (const auto& [rep, p] : pairs) {
          if (p.first && curve_of(*p.first, int(t)).size() >= 2) {
            with_sum += 1.0;
            ++with_n;
          }
          if (p.second && curve_of(*p.second, int(t)).size() >= 2) {
            wo_sum += 1.0;
            ++wo_n;
          }
        }
        csv += task_name(int(t)) + "," + (with_n ? format_double(with_sum / with_n) : "") + "," +
               (wo_n ? format_double(wo_sum / wo_n) : "") + ",,,\n";
        continue;
      }
      const double mean_w = std::accumulate(pw.begin(), pw.end(), 0.0) / double(pw.size());
      const double mean_wo = std::accumulate(pwo.begin(), pwo.end(), 0.0) / double(pwo.size());
      std::string diff_cols = ",,";
      if (pw.size() >= 2) {
        const PairedDifference d = pairwise_condition_difference(pw, pwo);
        diff_cols = format_double(d.mean) + "," + format_double(d.ci_lo) + "," +
                    format_double(d.ci_hi);
      } else {
        diff_cols = format_double(pw[0] - pwo[0]) + ",,";
      }
      csv += task_name(int(t)) + "," + format_double(mean_w) + "," + format_double(mean_wo) +
             "," + diff_cols + "\n";
    }
    write_text_atomic(cfg.outdir + "/summary.csv", csv);
  }
}

}  // namespace prwm
