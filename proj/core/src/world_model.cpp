#include "prwm/world_model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace prwm {

namespace {

// Batched window data: per time step, inputs and successor targets.
struct SeqBatch {
  int B = 0, T = 0;
  std::vector<Tensor> z_in, a_onehot, z_next, r, d;

  SeqBatch(int B, int T, int L, int A) : B(B), T(T) {
    for (int t = 0; t < T; ++t) {
      z_in.emplace_back(Tensor({B, L}));
      a_onehot.emplace_back(Tensor({B, A}));
      z_next.emplace_back(Tensor({B, L}));
      r.emplace_back(Tensor({B}));
      d.emplace_back(Tensor({B}));
    }
  }

  void fill_window(const Rollout& ro, int start, int bi, int L) {
    for (int t = 0; t < T; ++t) {
      const StepRecord& rec = ro.records[size_t(start + t)];
      const StepRecord& nxt = ro.records[size_t(start + t + 1)];
      std::copy_n(rec.z.data(), L, &z_in[size_t(t)][int64_t(bi) * L]);
      a_onehot[size_t(t)][int64_t(bi) * a_onehot[size_t(t)].dim(1) + rec.action] = 1.0;
      std::copy_n(nxt.z.data(), L, &z_next[size_t(t)][int64_t(bi) * L]);
      r[size_t(t)][bi] = double(nxt.reward);
      d[size_t(t)][bi] = nxt.done ? 1.0 : 0.0;
    }
  }
};

// All (rollout, start) pairs that begin a full window of seq_len transitions.
std::vector<std::pair<int, int>> window_index(const RolloutSet& set, int T) {
  std::vector<std::pair<int, int>> idx;
  for (int r = 0; r < int(set.rollouts.size()); ++r) {
    const int steps = set.rollouts[size_t(r)].steps();
    for (int s = 0; s + T <= steps; ++s) idx.emplace_back(r, s);
  }
  return idx;
}

// Scalar sequence loss: (1/3) * mean over B*T transitions of
// (mixture NLL + reward MSE + done BCE).
ag::Var build_sequence_loss(const WorldModel& m, const SeqBatch& sb) {
  using namespace ag;
  const ModelConfig& cfg = m.config();
  Var h = Var::leaf(Tensor({sb.B, cfg.hidden}));
  Var c = Var::leaf(Tensor({sb.B, cfg.hidden}));
  Var acc;
  for (int t = 0; t < sb.T; ++t) {
    std::tie(h, c) = m.advance_graph(Var::leaf(sb.z_in[size_t(t)]), h, c);
    WorldModel::HeadGraph out = m.head_graph(h, sb.a_onehot[size_t(t)]);
    Var gmm = sum(mdn_nll(out.pi_logits, out.mu, out.log_sigma, sb.z_next[size_t(t)],
                          cfg.mixtures, cfg.latent_dim));
    Var mse = sum(mse_vs(out.reward, sb.r[size_t(t)]));
    Var bce = sum(bce_with_logits(out.done_logit, sb.d[size_t(t)]));
    Var step = add(gmm, add(mse, bce));
    acc = t == 0 ? step : add(acc, step);
  }
  return scale(acc, 1.0 / (3.0 * sb.B * sb.T));
}

}  // namespace

WorldModel::WorldModel(const ModelConfig& cfg, uint64_t seed) : cfg_(cfg) {
  if (cfg.latent_dim < 1 || cfg.mixtures < 1 || cfg.hidden < 1)
    throw std::invalid_argument("world_model: latent_dim, mixtures, hidden must be >= 1");
  Rng rng(derive_seed(seed, "m-init"));
  lstm_ = nn::LstmCell(cfg.latent_dim, cfg.hidden, rng);
  head_ = nn::Dense(cfg.hidden + cfg.action_count, output_units(cfg), rng);
  lstm_.register_params(params_, "lstm");
  head_.register_params(params_, "head");
}

void WorldModel::advance(const Tensor& z, nn::LstmState& state) const {
  const int B = z.dim(0);
  if (z.dim(1) != cfg_.latent_dim)
    throw std::invalid_argument("world_model: latent width mismatch");
  if (state.h.dim(0) != B || state.h.dim(1) != cfg_.hidden)
    throw std::invalid_argument("world_model: state shape mismatch");
  lstm_.step(z.data.data(), state.h.data.data(), state.c.data.data(), B);
}

MdnOutput WorldModel::head(const Tensor& h, const Tensor& action_onehot) const {
  const int B = h.dim(0);
  const int A = cfg_.action_count;
  if (action_onehot.dim(0) != B || action_onehot.dim(1) != A)
    throw std::invalid_argument("world_model: action one-hot shape mismatch");
  Tensor input({B, cfg_.hidden + A});
  for (int b = 0; b < B; ++b) {
    std::copy_n(&h[int64_t(b) * cfg_.hidden], cfg_.hidden,
                &input[int64_t(b) * (cfg_.hidden + A)]);
    std::copy_n(&action_onehot[int64_t(b) * A], A,
                &input[int64_t(b) * (cfg_.hidden + A) + cfg_.hidden]);
  }
  const int U = output_units(cfg_);
  Tensor full({B, U});
  head_.forward(input.data.data(), full.data.data(), B);

  const int GL = cfg_.mixtures * cfg_.latent_dim;
  MdnOutput out;
  out.pi_logits = Tensor({B, GL});
  out.mu = Tensor({B, GL});
  out.log_sigma = Tensor({B, GL});
  out.reward = Tensor({B});
  out.done_logit = Tensor({B});
  for (int b = 0; b < B; ++b) {
    const double* row = &full[int64_t(b) * U];
    std::copy_n(row, GL, &out.pi_logits[int64_t(b) * GL]);
    std::copy_n(row + GL, GL, &out.mu[int64_t(b) * GL]);
    std::copy_n(row + 2 * GL, GL, &out.log_sigma[int64_t(b) * GL]);
    out.reward[b] = row[3 * GL];
    out.done_logit[b] = row[3 * GL + 1];
  }
  return out;
}

std::pair<ag::Var, ag::Var> WorldModel::advance_graph(const ag::Var& z, const ag::Var& h,
                                                      const ag::Var& c) const {
  return lstm_(z, h, c);
}

WorldModel::HeadGraph WorldModel::head_graph(const ag::Var& h, const Tensor& action_onehot) const {
  using namespace ag;
  const int B = h.value().dim(0);
  const int GL = cfg_.mixtures * cfg_.latent_dim;
  Var full = head_(concat_cols(h, Var::leaf(action_onehot)));
  HeadGraph out;
  out.pi_logits = slice_cols(full, 0, GL);
  out.mu = slice_cols(full, GL, GL);
  out.log_sigma = slice_cols(full, 2 * GL, GL);
  out.reward = reshape(slice_cols(full, 3 * GL, 1), {B});
  out.done_logit = reshape(slice_cols(full, 3 * GL + 1, 1), {B});
  return out;
}

MdnSingle m_forward(const WorldModel& m, std::span<const double> z, int action,
                    nn::LstmState& state) {
  const ModelConfig& cfg = m.config();
  if (int(z.size()) != cfg.latent_dim)
    throw std::invalid_argument("m_forward: latent size mismatch");
  if (action < 0 || action >= cfg.action_count)
    throw std::out_of_range("m_forward: action index out of range");
  Tensor zt = Tensor::from({1, cfg.latent_dim}, {z.begin(), z.end()});
  m.advance(zt, state);
  Tensor onehot({1, cfg.action_count});
  onehot[action] = 1.0;
  MdnOutput out = m.head(state.h, onehot);
  MdnSingle s;
  s.pi_logits = out.pi_logits.data;
  s.mu = out.mu.data;
  s.log_sigma = out.log_sigma.data;
  s.reward = out.reward[0];
  s.done_logit = out.done_logit[0];
  s.mixtures = cfg.mixtures;
  s.latent_dim = cfg.latent_dim;
  return s;
}

double mdn_loss(const MdnSingle& out, std::span<const double> z_next, int mixtures,
                int latent_dim) {
  const int GL = mixtures * latent_dim;
  if (int(out.pi_logits.size()) != GL || int(out.mu.size()) != GL ||
      int(out.log_sigma.size()) != GL)
    throw std::invalid_argument("mdn_loss: head width does not match mixtures*latent_dim");
  if (int(z_next.size()) != latent_dim)
    throw std::invalid_argument("mdn_loss: target size mismatch");
  using namespace ag;
  Var pi = Var::leaf(Tensor::from({1, GL}, out.pi_logits));
  Var mu = Var::leaf(Tensor::from({1, GL}, out.mu));
  Var ls = Var::leaf(Tensor::from({1, GL}, out.log_sigma));
  const Tensor target = Tensor::from({1, latent_dim}, {z_next.begin(), z_next.end()});
  return mdn_nll(pi, mu, ls, target, mixtures, latent_dim).value()[0];
}

MLossParts m_total_loss(const MdnSingle& out, std::span<const double> z_next, double reward,
                        bool done, int mixtures, int latent_dim) {
  MLossParts parts;
  parts.gmm = mdn_loss(out, z_next, mixtures, latent_dim);
  const double dr = out.reward - reward;
  parts.reward_mse = dr * dr;
  const double x = out.done_logit, t = done ? 1.0 : 0.0;
  parts.done_bce = std::max(x, 0.0) - x * t + std::log1p(std::exp(-std::abs(x)));
  parts.total = (parts.gmm + parts.reward_mse + parts.done_bce) / 3.0;
  return parts;
}

NextSample sample_next(const MdnSingle& out, Rng& rng, double temperature) {
  if (!(temperature > 0.0)) throw std::invalid_argument("sample_next: temperature must be > 0");
  const int G = out.mixtures, L = out.latent_dim;
  if (G < 1 || L < 1) throw std::invalid_argument("sample_next: output lacks mixture metadata");
  NextSample s;
  s.z.resize(size_t(L));
  std::vector<double> w(static_cast<size_t>(G));
  for (int i = 0; i < L; ++i) {
    double mx = -1e300;
    for (int g = 0; g < G; ++g) mx = std::max(mx, out.pi_logits[size_t(g * L + i)]);
    for (int g = 0; g < G; ++g) w[size_t(g)] = std::exp(out.pi_logits[size_t(g * L + i)] - mx);
    const int g = rng.categorical(w.data(), G);
    const double sigma = std::exp(out.log_sigma[size_t(g * L + i)]);
    s.z[size_t(i)] = rng.normal(out.mu[size_t(g * L + i)], temperature * sigma);
  }
  s.reward = out.reward > 0.5 ? 1.0 : out.reward < -0.5 ? -1.0 : 0.0;
  s.done = out.done_logit > 0.0;
  return s;
}

EpochStats train_m_epoch(WorldModel& m, const RolloutSet& real, const RolloutSet* sim,
                         Adam& opt, Rng& rng) {
  const ModelConfig& cfg = m.config();
  const int T = cfg.seq_len, B = cfg.batch;
  const auto real_idx = window_index(real, T);
  if (real_idx.empty())
    throw std::invalid_argument("train_m_epoch: real set has no window of seq_len+1 records");
  if (real.latent_dim != cfg.latent_dim)
    throw std::invalid_argument("train_m_epoch: rollout latent_dim mismatch");
  std::vector<std::pair<int, int>> sim_idx;
  if (sim) {
    if (sim->latent_dim != cfg.latent_dim)
      throw std::invalid_argument("train_m_epoch: sim latent_dim mismatch");
    sim_idx = window_index(*sim, T);
  }
  const bool use_sim = !sim_idx.empty();

  EpochStats stats;
  double total = 0.0;
  for (int bi = 0; bi < cfg.batches_per_epoch; ++bi) {
    const bool sim_batch = use_sim && (bi % 2 == 1);
    const RolloutSet& src = sim_batch ? *sim : real;
    const auto& idx = sim_batch ? sim_idx : real_idx;
    SeqBatch sb(B, T, cfg.latent_dim, cfg.action_count);
    for (int b = 0; b < B; ++b) {
      const auto [ri, start] = idx[size_t(rng.uniform_int(0, int64_t(idx.size()) - 1))];
      sb.fill_window(src.rollouts[size_t(ri)], start, b, cfg.latent_dim);
    }
    ag::Var loss = build_sequence_loss(m, sb);
    m.params().zero_grad();
    ag::backward(loss);
    opt.step(m.params());
    total += loss.value()[0];
    (sim_batch ? stats.sim_batches : stats.real_batches)++;
  }
  stats.mean_loss = total / double(std::max(1, cfg.batches_per_epoch));
  return stats;
}

double evaluate_m(const WorldModel& m, const RolloutSet& test) {
  const ModelConfig& cfg = m.config();
  const int T = cfg.seq_len;
  if (test.latent_dim != cfg.latent_dim)
    throw std::invalid_argument("evaluate_m: rollout latent_dim mismatch");
  std::vector<std::pair<int, int>> windows;
  for (int r = 0; r < int(test.rollouts.size()); ++r) {
    const int steps = test.rollouts[size_t(r)].steps();
    for (int s = 0; s + T <= steps; s += T) windows.emplace_back(r, s);
  }
  if (windows.empty())
    throw std::invalid_argument("evaluate_m: test set has no full windows");

  const size_t chunk = 64;
  double weighted = 0.0;
  for (size_t base = 0; base < windows.size(); base += chunk) {
    const int Bc = int(std::min(chunk, windows.size() - base));
    SeqBatch sb(Bc, T, cfg.latent_dim, cfg.action_count);
    for (int b = 0; b < Bc; ++b) {
      const auto [ri, start] = windows[base + size_t(b)];
      sb.fill_window(test.rollouts[size_t(ri)], start, b, cfg.latent_dim);
    }
    weighted += build_sequence_loss(m, sb).value()[0] * Bc;
  }
  return weighted / double(windows.size()) / double(output_units(cfg));
}

}  // namespace prwm
