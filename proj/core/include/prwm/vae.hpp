#pragma once
#include <iosfwd>
#include <span>
#include <vector>

#include "prwm/env.hpp"
#include "prwm/layers.hpp"
#include "prwm/optim.hpp"

namespace prwm {

struct VaeConfig {
  int frame_h = 32, frame_w = 32, channels = 1;
  int latent_dim = 8;
  std::vector<int> conv_filters = {16, 32};
  int kernel = 4, stride = 2;
  double lr = 1e-3;
  double beta = 1.0;      // weight on the KL term
  int batch = 32;
  int patience = 5;       // epochs without test-loss improvement before stopping
  double min_delta = 1e-4;
  int max_epochs = 60;
};

// Diagonal Gaussian over the latent space.
struct Latent {
  std::vector<double> mu, sigma;
};

std::vector<double> sample_latent(const Latent& dist, Rng& rng);

struct VaeLossParts {
  double total = 0.0, recon = 0.0, kl = 0.0;
};

// Convolutional VAE: conv encoder to (mu, log_sigma), mirrored transposed-conv
// decoder with a sigmoid output. Trained once per experiment, then frozen.
class Vae {
 public:
  Vae(const VaeConfig& cfg, uint64_t seed);

  const VaeConfig& config() const { return cfg_; }
  int latent_dim() const { return cfg_.latent_dim; }
  nn::Params& params() { return params_; }
  const nn::Params& params() const { return params_; }

  // Frozen, tape-free paths.
  Latent encode(const Frame& frame) const;
  std::vector<double> encode_mean(const Frame& frame) const;
  Frame decode(std::span<const double> z) const;

  // Deterministic loss on a batch of frames using the posterior mean
  // (no sampling); used for held-out evaluation.
  VaeLossParts eval_loss(const std::vector<Frame>& frames) const;

  // One Adam step on a minibatch with sampled latents; returns the loss parts.
  VaeLossParts train_batch(const std::vector<const Frame*>& batch, Adam& opt, Rng& rng);

 private:
  Tensor pack(const std::vector<const Frame*>& batch) const;
  struct Encoded {
    ag::Var mu, log_sigma;
  };
  Encoded encode_graph(const ag::Var& x) const;
  ag::Var decode_graph(const ag::Var& z) const;
  Tensor encode_raw(const Tensor& x) const;  // [B,C,H,W] -> [B, 2L]

  VaeConfig cfg_;
  std::vector<nn::Conv2d> enc_;
  nn::Dense enc_fc_;
  nn::Dense dec_fc_;
  std::vector<nn::ConvTranspose2d> dec_;
  std::vector<std::pair<int, int>> spatial_;  // (h, w) per encoder stage, index 0 = input
  nn::Params params_;
};

// Trains a VAE on `frames` with early stopping on a held-out split.
Vae train_vae(const std::vector<Frame>& frames, const VaeConfig& cfg, uint64_t seed,
              std::ostream* log = nullptr);

}  // namespace prwm
