#include "prwm/controller.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace prwm {

Controller::Controller(int input_dim, const ControllerConfig& cfg, uint64_t seed)
    : input_dim_(input_dim), cfg_(cfg) {
  if (input_dim < 1) throw std::invalid_argument("controller: input_dim must be >= 1");
  if (cfg.hidden < 1) throw std::invalid_argument("controller: hidden must be >= 1");
  Rng rng(derive_seed(seed, "c-init"));
  fc_ = nn::Dense(input_dim, cfg.hidden, rng);
  actor_ = nn::Dense(cfg.hidden, cfg.action_count, rng);
  critic_ = nn::Dense(cfg.hidden, 1, rng);
  fc_.register_params(params_, "fc");
  actor_.register_params(params_, "actor");
  critic_.register_params(params_, "critic");
}

void Controller::forward(std::span<const double> input, double* logits, double* value) const {
  if (int(input.size()) != input_dim_)
    throw std::invalid_argument("controller: input size mismatch");
  thread_local std::vector<double> hidden;
  hidden.assign(size_t(cfg_.hidden), 0.0);
  fc_.forward(input.data(), hidden.data(), 1);
  for (auto& v : hidden) v = v > 0.0 ? v : 0.0;
  actor_.forward(hidden.data(), logits, 1);
  critic_.forward(hidden.data(), value, 1);
}

std::pair<ag::Var, ag::Var> Controller::forward_graph(const Tensor& input) const {
  using namespace ag;
  Var h = relu(fc_(Var::leaf(input)));
  Var logits = actor_(h);
  Var value = reshape(critic_(h), {input.dim(0)});
  return {logits, value};
}

ag::Var Controller::actor_graph(const Tensor& input) const {
  using namespace ag;
  return actor_(relu(fc_(Var::leaf(input))));
}

A2cStats a2c_update(Controller& c, const std::vector<TrajStep>& traj, double bootstrap_value,
                    Adam& opt) {
  using namespace ag;
  if (traj.empty()) throw std::invalid_argument("a2c_update: empty trajectory");
  const ControllerConfig& cfg = c.config();
  const int T = int(traj.size());

  Tensor inputs({T, c.input_dim()});
  Tensor returns({T});
  Tensor advantages({T});
  std::vector<int> actions(static_cast<size_t>(T));
  double run = bootstrap_value;
  for (int t = T - 1; t >= 0; --t) {
    run = traj[size_t(t)].reward + cfg.gamma * run;
    returns[t] = run;
    advantages[t] = run - traj[size_t(t)].value;
    actions[size_t(t)] = traj[size_t(t)].action;
    std::copy_n(traj[size_t(t)].input.data(), c.input_dim(), &inputs[int64_t(t) * c.input_dim()]);
  }

  auto [logits, value] = c.forward_graph(inputs);
  Var logp = log_softmax_rows(logits);
  Var picked = pick_cols(logp, actions);
  Var policy = scale(sum(mul(picked, Var::leaf(advantages))), -1.0);
  Var value_term = sum(mse_vs(value, returns));
  Var p = softmax_rows(logits);
  Var neg_entropy = sum(mul(p, logp));  // = -sum of per-row entropies
  Var total = add(add(policy, scale(value_term, cfg.value_coef)),
                  scale(neg_entropy, cfg.entropy_coef));

  c.params().zero_grad();
  backward(total);
  opt.step(c.params());

  A2cStats stats;
  stats.policy_loss = policy.value()[0];
  stats.value_loss = value_term.value()[0];
  stats.entropy = -neg_entropy.value()[0];
  stats.total = total.value()[0];
  return stats;
}

double distill_update(Controller& c, const Tensor& inputs, const Tensor& teacher_logits,
                      Adam& opt) {
  using namespace ag;
  Var logits = c.actor_graph(inputs);
  Var loss = sum(tempered_xent(logits, teacher_logits, c.config().tau));
  c.params().zero_grad();
  backward(loss);
  opt.step(c.params());
  return loss.value()[0];
}

DistillData build_distill_data(const WorldModel& m, const RolloutSet& sim) {
  const int L = m.config().latent_dim;
  const int H = m.config().hidden;
  const int A = m.config().action_count;
  if (sim.latent_dim != L) throw std::invalid_argument("distill: sim latent_dim mismatch");
  int64_t rows = 0;
  for (auto& ro : sim.rollouts) rows += int64_t(ro.records.size());
  if (rows == 0) throw std::invalid_argument("distill: empty sim set");

  DistillData dd;
  dd.inputs = Tensor({int(rows), L + H});
  dd.teacher = Tensor({int(rows), A});
  int64_t r = 0;
  for (auto& ro : sim.rollouts) {
    nn::LstmState state = nn::LstmState::zeros(1, H);
    for (auto& rec : ro.records) {
      if (int(rec.policy_logits.size()) != A)
        throw std::invalid_argument("distill: simulated record lacks policy logits");
      std::copy_n(rec.z.data(), L, &dd.inputs[r * (L + H)]);
      std::copy_n(state.h.data.data(), H, &dd.inputs[r * (L + H) + L]);
      std::copy_n(rec.policy_logits.data(), A, &dd.teacher[r * A]);
      ++r;
      Tensor zt = Tensor::from({1, L}, rec.z);
      m.advance(zt, state);
    }
  }
  return dd;
}

CExposureStats train_c_exposure(const std::string& task, const EnvConfig& env_cfg,
                                const Vae& vae, const WorldModel& m, Controller& c,
                                const RolloutSet* sim, Adam& a2c_opt, Adam& distill_opt,
                                uint64_t seed, int64_t n_steps) {
  const ControllerConfig& cfg = c.config();
  const int L = vae.latent_dim();
  const int H = m.config().hidden;
  if (c.input_dim() != L + H)
    throw std::invalid_argument("train_c_exposure: controller input_dim != latent+hidden");

  Rng episode_rng(derive_seed(seed, "c-episodes"));
  Rng action_rng(derive_seed(seed, "c-actions"));
  Rng distill_rng(derive_seed(seed, "c-distill"));

  // Distillation rows and a shuffled cursor over them.
  DistillData dd;
  std::vector<int64_t> perm;
  size_t cursor = 0;
  const bool distilling = sim != nullptr && !sim->rollouts.empty();
  if (distilling) {
    dd = build_distill_data(m, *sim);
    perm.resize(size_t(dd.inputs.dim(0)));
    std::iota(perm.begin(), perm.end(), int64_t(0));
  }
  auto reshuffle = [&]() {
    for (size_t i = perm.size(); i > 1; --i)
      std::swap(perm[i - 1], perm[size_t(distill_rng.uniform_int(0, int64_t(i) - 1))]);
    cursor = 0;
  };
  if (distilling) reshuffle();

  auto run_distill_window = [&](CExposureStats& stats) {
    int64_t consumed = 0;
    while (consumed < cfg.distill_window) {
      const int B = int(std::min<int64_t>(cfg.distill_batch, int64_t(perm.size())));
      Tensor inputs({B, L + H});
      Tensor teacher({B, cfg.action_count});
      for (int b = 0; b < B; ++b) {
        if (cursor >= perm.size()) reshuffle();
        const int64_t row = perm[cursor++];
        std::copy_n(&dd.inputs[row * (L + H)], L + H, &inputs[int64_t(b) * (L + H)]);
        std::copy_n(&dd.teacher[row * cfg.action_count], cfg.action_count,
                    &teacher[int64_t(b) * cfg.action_count]);
      }
      distill_update(c, inputs, teacher, distill_opt);
      consumed += B;
      ++stats.distill_updates;
    }
    stats.distill_frames += consumed;
  };

  CExposureStats stats;
  auto env = make_env(task, env_cfg);
  std::vector<TrajStep> traj;
  std::vector<double> logits(size_t(cfg.action_count));
  std::vector<double> probs(size_t(cfg.action_count));
  double value = 0.0;
  int64_t next_distill = cfg.distill_window;

  std::vector<double> z;
  nn::LstmState state = nn::LstmState::zeros(1, H);
  double ep_return = 0.0;
  bool episode_open = false;

  auto begin_episode = [&]() {
    Observation obs = env->reset(episode_rng.next_u64());
    z = vae.encode_mean(obs.frame);
    state = nn::LstmState::zeros(1, H);
    ep_return = 0.0;
    traj.clear();
    episode_open = true;
  };

  auto controller_input = [&](const std::vector<double>& zv, const nn::LstmState& st) {
    std::vector<double> input(size_t(L + H));
    std::copy_n(zv.data(), L, input.data());
    std::copy_n(st.h.data.data(), H, input.data() + L);
    return input;
  };

  begin_episode();
  while (stats.real_frames < n_steps) {
    std::vector<double> input = controller_input(z, state);
    c.forward(input, logits.data(), &value);
    double mx = logits[0];
    for (int a = 1; a < cfg.action_count; ++a) mx = std::max(mx, logits[size_t(a)]);
    for (int a = 0; a < cfg.action_count; ++a) probs[size_t(a)] = std::exp(logits[size_t(a)] - mx);
    const int action = action_rng.categorical(probs.data(), cfg.action_count);

    Observation obs = env->step(action);
    ++stats.real_frames;
    ep_return += obs.reward;
    traj.push_back({std::move(input), action, obs.reward, value});

    // Advance the frozen world model past the latent that produced `input`.
    Tensor zt = Tensor::from({1, L}, z);
    m.advance(zt, state);
    z = vae.encode_mean(obs.frame);

    if (obs.done) {
      a2c_update(c, traj, 0.0, a2c_opt);
      traj.clear();
      stats.episodes.push_back({stats.real_frames, ep_return});
      episode_open = false;
    } else if (int(traj.size()) >= cfg.horizon) {
      double boot = 0.0;
      std::vector<double> next_input = controller_input(z, state);
      c.forward(next_input, logits.data(), &boot);
      a2c_update(c, traj, boot, a2c_opt);
      traj.clear();
    }

    if (distilling && stats.real_frames >= next_distill) {
      run_distill_window(stats);
      next_distill += cfg.distill_window;
    }
    if (!episode_open && stats.real_frames < n_steps) begin_episode();
  }
  if (!traj.empty()) {
    // Budget exhausted mid-episode: close out with a bootstrapped update.
    double boot = 0.0;
    std::vector<double> next_input = controller_input(z, state);
    c.forward(next_input, logits.data(), &boot);
    a2c_update(c, traj, boot, a2c_opt);
  }
  return stats;
}

}  // namespace prwm
