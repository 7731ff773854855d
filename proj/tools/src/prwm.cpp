// prwm: continual world-model laboratory command line.
//
// Exit codes: 0 success, 1 usage/config error, 2 runtime failure.
#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "prwm/checkpoint.hpp"
#include "prwm/controller.hpp"
#include "prwm/experiment.hpp"
#include "prwm/world_model.hpp"

namespace fs = std::filesystem;
using namespace prwm;

namespace {

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "experiment config file")->required();
  cmd->add_option("--set", args.overrides, "override a config key, e.g. --set tau=0.5");
}

ExperimentConfig load_config(const CommonArgs& args) {
  return parse_config(args.config_path, args.overrides);
}

// Refuses to overwrite a finished experiment unless forced; wipes on --force.
void guard_outdir(const ExperimentConfig& cfg, bool force) {
  if (force) {
    clear_experiment(cfg);
    return;
  }
  if (experiment_completed(cfg))
    throw ConfigError("output directory '" + cfg.outdir +
                      "' already holds a completed experiment; pass --force to redo it");
}

int run_pair_and_report(const ExperimentConfig& cfg, int n_reps, bool force) {
  guard_outdir(cfg, force);
  const std::vector<MetricsLog> logs = run_replications(cfg, n_reps, &std::cerr);
  write_report(cfg, logs);
  std::cerr << "[prwm] report written under " << cfg.outdir << "\n";
  return 0;
}

uint64_t checkpoint_gen_seed(const ExperimentConfig& cfg) {
  return derive_seed(cfg.seed, "gen-rollouts");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pseudo-rehearsal continual world-model laboratory"};
  app.require_subcommand(1);

  CommonArgs train_vae_args;
  auto* cmd_train_vae =
      app.add_subcommand("train-vae", "train and freeze the V network for an experiment family");
  add_common(cmd_train_vae, train_vae_args);

  CommonArgs run_args;
  bool run_force = false;
  auto* cmd_run = app.add_subcommand("run", "run one replication pair and write the report");
  add_common(cmd_run, run_args);
  cmd_run->add_flag("--force", run_force, "discard a completed experiment and start fresh");

  CommonArgs rep_args;
  bool rep_force = false;
  int rep_count = 0;
  auto* cmd_rep = app.add_subcommand("replicate", "run n_reps replication pairs and report");
  add_common(cmd_rep, rep_args);
  cmd_rep->add_flag("--force", rep_force, "discard a completed experiment and start fresh");
  cmd_rep->add_option("--reps", rep_count, "override n_reps from the config");

  CommonArgs eval_args;
  std::string eval_checkpoint, eval_rollouts;
  auto* cmd_eval =
      app.add_subcommand("eval", "score an M checkpoint on a held-out rollout file");
  add_common(cmd_eval, eval_args);
  cmd_eval->add_option("--checkpoint", eval_checkpoint, "M checkpoint (.prwm)")->required();
  cmd_eval->add_option("--rollouts", eval_rollouts, "rollout file (.prrl)")->required();

  CommonArgs gen_args;
  std::string gen_task, gen_kind = "random", gen_out, gen_m, gen_c;
  int gen_count = 0;
  uint64_t gen_seed = 0;
  bool gen_seed_set = false;
  auto* cmd_gen = app.add_subcommand("gen-rollouts", "collect or dream a rollout file");
  add_common(cmd_gen, gen_args);
  cmd_gen->add_option("--task", gen_task, "task name (random/policy kinds)");
  cmd_gen->add_option("--kind", gen_kind, "random | policy | sim")
      ->check(CLI::IsMember({"random", "policy", "sim"}));
  cmd_gen->add_option("--out", gen_out, "output .prrl path")->required();
  cmd_gen->add_option("--m", gen_m, "M checkpoint (policy/sim kinds)");
  cmd_gen->add_option("--c", gen_c, "C checkpoint (policy/sim kinds)");
  cmd_gen->add_option("--count", gen_count, "rollouts to produce (default n_rollouts)");
  cmd_gen->add_option("--seed", gen_seed, "generation seed")
      ->each([&](const std::string&) { gen_seed_set = true; });

  CommonArgs report_args;
  bool report_partial = false;
  auto* cmd_report = app.add_subcommand("report", "write the CSV suite from persisted run logs");
  add_common(cmd_report, report_args);
  cmd_report->add_flag("--partial", report_partial, "include unfinished runs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (cmd_train_vae->parsed()) {
      const ExperimentConfig cfg = load_config(train_vae_args);
      prepare_family(cfg, &std::cerr);
      std::cerr << "[prwm] V frozen under " << family_dir(cfg) << "\n";
      return 0;
    }
    if (cmd_run->parsed()) {
      ExperimentConfig cfg = load_config(run_args);
      cfg.n_reps = 1;
      return run_pair_and_report(cfg, 1, run_force);
    }
    if (cmd_rep->parsed()) {
      const ExperimentConfig cfg = load_config(rep_args);
      return run_pair_and_report(cfg, rep_count, rep_force);
    }
    if (cmd_eval->parsed()) {
      const ExperimentConfig cfg = load_config(eval_args);
      WorldModel m(cfg.model_config(), derive_seed(cfg.seed, "eval-load"));
      restore_params(m.params(), load_checkpoint(eval_checkpoint));
      const RolloutSet set = load_rollouts(eval_rollouts);
      std::cout << format_double(evaluate_m(m, set)) << "\n";
      return 0;
    }
    if (cmd_gen->parsed()) {
      const ExperimentConfig cfg = load_config(gen_args);
      RolloutConfig rcfg = cfg.rollout_config();
      if (gen_count > 0) rcfg.n_rollouts = gen_count;
      const uint64_t seed = gen_seed_set ? gen_seed : checkpoint_gen_seed(cfg);
      RolloutSet set;
      if (gen_kind == "sim") {
        if (gen_m.empty() || gen_c.empty())
          throw ConfigError("gen-rollouts: --kind sim needs --m and --c checkpoints");
        WorldModel m(cfg.model_config(), derive_seed(cfg.seed, "gen-load-m"));
        restore_params(m.params(), load_checkpoint(gen_m));
        Controller c(cfg.latent_dim + cfg.lstm_hidden, cfg.controller_config(),
                     derive_seed(cfg.seed, "gen-load-c"));
        restore_params(c.params(), load_checkpoint(gen_c));
        set = generate_sim_rollouts(m, c, rcfg, seed, cfg.sim_temperature);
      } else {
        if (gen_task.empty())
          throw ConfigError("gen-rollouts: --task is required for real rollouts");
        const std::string vae_path = family_dir(cfg) + "/vae.prwm";
        if (!fs::exists(vae_path))
          throw std::runtime_error("gen-rollouts: no frozen V at '" + vae_path +
                                   "'; run train-vae first");
        Vae vae(cfg.vae_config(), derive_seed(cfg.seed, "vae"));
        restore_params(vae.params(), load_checkpoint(vae_path));
        if (gen_kind == "random") {
          set = collect_random_rollouts(gen_task, cfg.env_config(), vae, rcfg, seed);
        } else {
          if (gen_m.empty() || gen_c.empty())
            throw ConfigError("gen-rollouts: --kind policy needs --m and --c checkpoints");
          WorldModel m(cfg.model_config(), derive_seed(cfg.seed, "gen-load-m"));
          restore_params(m.params(), load_checkpoint(gen_m));
          Controller c(cfg.latent_dim + cfg.lstm_hidden, cfg.controller_config(),
                       derive_seed(cfg.seed, "gen-load-c"));
          restore_params(c.params(), load_checkpoint(gen_c));
          set = collect_policy_rollouts(gen_task, cfg.env_config(), vae, m, c, rcfg, seed);
        }
        for (size_t t = 0; t < cfg.tasks.size(); ++t)
          if (cfg.tasks[t] == gen_task) set.source_task = int(t);
      }
      save_rollouts(set, gen_out);
      std::cerr << "[prwm] wrote " << set.rollouts.size() << " rollouts to " << gen_out << "\n";
      return 0;
    }
    if (cmd_report->parsed()) {
      const ExperimentConfig cfg = load_config(report_args);
      write_report(cfg, load_logs(cfg, report_partial));
      std::cerr << "[prwm] report written under " << cfg.outdir << "\n";
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
