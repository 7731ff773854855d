#pragma once
#include <span>

#include "prwm/layers.hpp"
#include "prwm/optim.hpp"
#include "prwm/rollout.hpp"

namespace prwm {

struct ModelConfig {
  int latent_dim = 8;
  int mixtures = 5;
  int hidden = 64;
  int action_count = kActionCount;
  double lr = 1e-3;
  int batches_per_epoch = 100;
  int batch = 16;
  int seq_len = 32;
};

// Width of the prediction head: mixture logits, means and log-sigmas for every
// (component, latent dim) pair, plus reward and done.
inline int output_units(const ModelConfig& cfg) {
  return 3 * cfg.mixtures * cfg.latent_dim + 2;
}

// Batched head output; mixture tensors are [B, G*L] laid out component-major.
struct MdnOutput {
  Tensor pi_logits, mu, log_sigma;  // [B, G*L]
  Tensor reward, done_logit;        // [B]
};

// Single-transition head output used by sequential (dream) generation.
struct MdnSingle {
  std::vector<double> pi_logits, mu, log_sigma;
  double reward = 0.0, done_logit = 0.0;
  int mixtures = 0, latent_dim = 0;
};

struct NextSample {
  std::vector<double> z;
  double reward = 0.0;  // in {-1, 0, 1}
  bool done = false;
};

// Recurrent latent dynamics model: an LSTM consumes latents; a linear head on
// (hidden state, one-hot action) predicts a Gaussian mixture over the next
// latent plus reward and done.
class WorldModel {
 public:
  WorldModel(const ModelConfig& cfg, uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  nn::Params& params() { return params_; }
  const nn::Params& params() const { return params_; }

  // Raw paths (no tape). advance() consumes a latent batch [B, L] in place.
  void advance(const Tensor& z, nn::LstmState& state) const;
  MdnOutput head(const Tensor& h, const Tensor& action_onehot) const;

  // Graph paths for training.
  std::pair<ag::Var, ag::Var> advance_graph(const ag::Var& z, const ag::Var& h,
                                            const ag::Var& c) const;
  struct HeadGraph {
    ag::Var pi_logits, mu, log_sigma, reward, done_logit;
  };
  HeadGraph head_graph(const ag::Var& h, const Tensor& action_onehot) const;

 private:
  ModelConfig cfg_;
  nn::LstmCell lstm_;
  nn::Dense head_;
  nn::Params params_;
};

// Convenience single-transition forward: advances `state` past z and applies
// the head under `action`.
MdnSingle m_forward(const WorldModel& m, std::span<const double> z, int action,
                    nn::LstmState& state);

// Average negative log likelihood per latent dimension of `z_next` under the
// predicted mixture.
double mdn_loss(const MdnSingle& out, std::span<const double> z_next, int mixtures,
                int latent_dim);

struct MLossParts {
  double total = 0.0, gmm = 0.0, reward_mse = 0.0, done_bce = 0.0;
};

// Total model loss on one transition: the equally weighted average of the
// mixture NLL, reward MSE, and done BCE.
MLossParts m_total_loss(const MdnSingle& out, std::span<const double> z_next, double reward,
                        bool done, int mixtures, int latent_dim);

// Draws the next latent (componentwise mixture sampling, sigma scaled by
// `temperature`), a reward snapped to {-1, 0, 1}, and a thresholded done flag.
NextSample sample_next(const MdnSingle& out, Rng& rng, double temperature = 1.0);

// One training epoch: batches_per_epoch batches of batch x seq_len windows
// sampled uniformly from `real` (and, when non-null, alternating 1:1 with
// `sim`), one Adam step per batch with the recurrent state zeroed at every
// window start. Returns the mean total loss over the epoch's batches.
struct EpochStats {
  double mean_loss = 0.0;
  int real_batches = 0, sim_batches = 0;
};
EpochStats train_m_epoch(WorldModel& m, const RolloutSet& real, const RolloutSet* sim,
                         Adam& opt, Rng& rng);

// Held-out loss: mean over non-overlapping seq_len windows of the per-window
// total loss, divided by the number of output units.
double evaluate_m(const WorldModel& m, const RolloutSet& test);

}  // namespace prwm
