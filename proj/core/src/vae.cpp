#include "prwm/vae.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <stdexcept>

namespace prwm {

namespace {

void relu_inplace(Tensor& t) {
  for (auto& v : t.data) v = v > 0.0 ? v : 0.0;
}

void sigmoid_inplace(Tensor& t) {
  for (auto& v : t.data)
    v = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
}

}  // namespace

std::vector<double> sample_latent(const Latent& dist, Rng& rng) {
  if (dist.mu.size() != dist.sigma.size())
    throw std::invalid_argument("sample_latent: mu/sigma size mismatch");
  std::vector<double> z(dist.mu.size());
  for (size_t i = 0; i < z.size(); ++i) z[i] = dist.mu[i] + dist.sigma[i] * rng.normal();
  return z;
}

Vae::Vae(const VaeConfig& cfg, uint64_t seed) : cfg_(cfg) {
  if (cfg.latent_dim < 1) throw std::invalid_argument("vae: latent_dim must be >= 1");
  if (cfg.conv_filters.empty()) throw std::invalid_argument("vae: conv_filters must be non-empty");
  Rng rng(derive_seed(seed, "vae-init"));

  int h = cfg.frame_h, w = cfg.frame_w, ch = cfg.channels;
  spatial_.emplace_back(h, w);
  for (int f : cfg.conv_filters) {
    enc_.emplace_back(ch, f, cfg.kernel, cfg.stride, rng);
    auto [oh, ow] = nn::Conv2d::out_hw(h, w, cfg.kernel, cfg.stride);
    h = oh;
    w = ow;
    ch = f;
    spatial_.emplace_back(h, w);
    if (h < 1 || w < 1) throw std::invalid_argument("vae: conv stack shrinks frame below 1x1");
  }
  const int flat = h * w * ch;
  enc_fc_ = nn::Dense(flat, 2 * cfg.latent_dim, rng);
  dec_fc_ = nn::Dense(cfg.latent_dim, flat, rng);
  for (size_t i = cfg.conv_filters.size(); i-- > 0;) {
    const int in_ch = cfg.conv_filters[i];
    const int out_ch = i == 0 ? cfg.channels : cfg.conv_filters[i - 1];
    auto [sh, sw] = spatial_[i + 1];
    auto [th, tw] = spatial_[i];
    const int oph = th - ((sh - 1) * cfg.stride + cfg.kernel);
    const int opw = tw - ((sw - 1) * cfg.stride + cfg.kernel);
    dec_.emplace_back(in_ch, out_ch, cfg.kernel, cfg.stride, oph, opw, rng);
  }

  for (size_t i = 0; i < enc_.size(); ++i)
    enc_[i].register_params(params_, "enc.conv" + std::to_string(i));
  enc_fc_.register_params(params_, "enc.fc");
  dec_fc_.register_params(params_, "dec.fc");
  for (size_t i = 0; i < dec_.size(); ++i)
    dec_[i].register_params(params_, "dec.conv" + std::to_string(i));
}

Tensor Vae::pack(const std::vector<const Frame*>& batch) const {
  const int B = int(batch.size());
  Tensor x({B, cfg_.channels, cfg_.frame_h, cfg_.frame_w});
  for (int b = 0; b < B; ++b) {
    const Frame& f = *batch[size_t(b)];
    if (f.h != cfg_.frame_h || f.w != cfg_.frame_w || f.c != cfg_.channels)
      throw std::invalid_argument("vae: frame shape does not match config");
    for (int c = 0; c < cfg_.channels; ++c)
      for (int y = 0; y < cfg_.frame_h; ++y)
        for (int xx = 0; xx < cfg_.frame_w; ++xx)
          x[((int64_t(b) * cfg_.channels + c) * cfg_.frame_h + y) * cfg_.frame_w + xx] =
              f.at(y, xx, c);
  }
  return x;
}

Tensor Vae::encode_raw(const Tensor& x) const {
  Tensor t = x;
  for (auto& conv : enc_) {
    t = conv.forward(t);
    relu_inplace(t);
  }
  const int B = t.dim(0);
  const int flat = int(t.numel() / B);
  Tensor flat_t;
  flat_t.shape = {B, flat};
  flat_t.data = std::move(t.data);
  Tensor out({B, 2 * cfg_.latent_dim});
  enc_fc_.forward(flat_t.data.data(), out.data.data(), B);
  return out;
}

Latent Vae::encode(const Frame& frame) const {
  Tensor enc = encode_raw(pack({&frame}));
  const int L = cfg_.latent_dim;
  Latent d;
  d.mu.assign(enc.data.begin(), enc.data.begin() + L);
  d.sigma.resize(size_t(L));
  for (int i = 0; i < L; ++i) d.sigma[size_t(i)] = std::exp(enc[L + i]);
  return d;
}

std::vector<double> Vae::encode_mean(const Frame& frame) const {
  Tensor enc = encode_raw(pack({&frame}));
  return {enc.data.begin(), enc.data.begin() + cfg_.latent_dim};
}

Frame Vae::decode(std::span<const double> z) const {
  if (int(z.size()) != cfg_.latent_dim)
    throw std::invalid_argument("vae: latent size does not match config");
  const auto [h0, w0] = spatial_.back();
  const int ch0 = cfg_.conv_filters.back();
  Tensor t({1, ch0, h0, w0});
  dec_fc_.forward(z.data(), t.data.data(), 1);
  for (size_t i = 0; i < dec_.size(); ++i) {
    t = dec_[i].forward(t);
    if (i + 1 < dec_.size())
      relu_inplace(t);
    else
      sigmoid_inplace(t);
  }
  Frame f(cfg_.frame_h, cfg_.frame_w, cfg_.channels);
  for (int c = 0; c < cfg_.channels; ++c)
    for (int y = 0; y < cfg_.frame_h; ++y)
      for (int x = 0; x < cfg_.frame_w; ++x)
        f.at(y, x, c) = t[(int64_t(c) * cfg_.frame_h + y) * cfg_.frame_w + x];
  return f;
}

Vae::Encoded Vae::encode_graph(const ag::Var& x) const {
  using namespace ag;
  Var t = x;
  for (auto& conv : enc_) t = relu(conv(t));
  const int B = t.value().dim(0);
  t = reshape(t, {B, int(t.value().numel() / B)});
  Var enc = enc_fc_(t);
  return {slice_cols(enc, 0, cfg_.latent_dim), slice_cols(enc, cfg_.latent_dim, cfg_.latent_dim)};
}

ag::Var Vae::decode_graph(const ag::Var& z) const {
  using namespace ag;
  const auto [h0, w0] = spatial_.back();
  const int B = z.value().dim(0);
  Var t = dec_fc_(z);
  t = reshape(t, {B, cfg_.conv_filters.back(), h0, w0});
  for (size_t i = 0; i < dec_.size(); ++i) {
    t = dec_[i](t);
    t = i + 1 < dec_.size() ? relu(t) : sigmoid(t);
  }
  return t;
}

VaeLossParts Vae::eval_loss(const std::vector<Frame>& frames) const {
  if (frames.empty()) throw std::invalid_argument("vae: eval on empty set");
  VaeLossParts parts;
  const int L = cfg_.latent_dim;
  // Stream in modest chunks to bound memory.
  const size_t chunk = 64;
  int64_t pixel_count = 0;
  for (size_t base = 0; base < frames.size(); base += chunk) {
    std::vector<const Frame*> ptrs;
    for (size_t i = base; i < std::min(frames.size(), base + chunk); ++i)
      ptrs.push_back(&frames[i]);
    const Tensor x = pack(ptrs);
    const Tensor enc = encode_raw(x);
    const int B = int(ptrs.size());
    for (int b = 0; b < B; ++b) {
      std::vector<double> mu(enc.data.begin() + int64_t(b) * 2 * L,
                             enc.data.begin() + int64_t(b) * 2 * L + L);
      Frame rec = decode(mu);
      const Frame& orig = *ptrs[size_t(b)];
      for (size_t i = 0; i < rec.px.size(); ++i) {
        const double d = rec.px[i] - orig.px[i];
        parts.recon += d * d;
      }
      pixel_count += int64_t(rec.px.size());
      for (int i = 0; i < L; ++i) {
        const double m = enc[int64_t(b) * 2 * L + i];
        const double ls = enc[int64_t(b) * 2 * L + L + i];
        parts.kl += 0.5 * (m * m + std::exp(2.0 * ls) - 1.0 - 2.0 * ls);
      }
    }
  }
  parts.recon /= double(pixel_count);
  parts.kl /= double(frames.size());
  parts.total = parts.recon + cfg_.beta * parts.kl;
  return parts;
}

VaeLossParts Vae::train_batch(const std::vector<const Frame*>& batch, Adam& opt, Rng& rng) {
  using namespace ag;
  const int B = int(batch.size());
  const int L = cfg_.latent_dim;
  Var x = Var::leaf(pack(batch));
  auto [mu, log_sigma] = encode_graph(x);
  Tensor eps({B, L});
  for (auto& v : eps.data) v = rng.normal();
  Var sigma = exp_op(log_sigma);
  Var z = add(mu, mul(sigma, Var::leaf(eps)));
  Var xhat = decode_graph(z);

  Var recon = mean(mse_vs(xhat, x.value()));
  // KL(q || N(0, I)) summed over latent dims, averaged over the batch.
  Var kl_terms = sub(add(square(mu), square(sigma)), add_const(scale(log_sigma, 2.0), 1.0));
  Var kl = scale(sum(kl_terms), 0.5 / double(B));
  Var total = add(recon, scale(kl, cfg_.beta));

  params_.zero_grad();
  backward(total);
  opt.step(params_);
  return {total.value()[0], recon.value()[0], kl.value()[0]};
}

Vae train_vae(const std::vector<Frame>& frames, const VaeConfig& cfg, uint64_t seed,
              std::ostream* log) {
  if (int(frames.size()) < std::max(cfg.batch, 10))
    throw std::invalid_argument("train_vae: need at least max(batch, 10) frames");
  Vae vae(cfg, seed);
  Adam opt(cfg.lr);
  Rng order_rng(derive_seed(seed, "vae-order"));
  Rng noise_rng(derive_seed(seed, "vae-noise"));

  // Deterministic shuffled 90/10 train/test split.
  std::vector<size_t> idx(frames.size());
  std::iota(idx.begin(), idx.end(), size_t(0));
  Rng split_rng(derive_seed(seed, "vae-split"));
  for (size_t i = idx.size(); i > 1; --i)
    std::swap(idx[i - 1], idx[size_t(split_rng.uniform_int(0, int64_t(i) - 1))]);
  const size_t n_test = std::max<size_t>(1, frames.size() / 10);
  std::vector<size_t> train_idx(idx.begin(), idx.end() - std::ptrdiff_t(n_test));
  std::vector<Frame> test;
  for (size_t i = idx.size() - n_test; i < idx.size(); ++i) test.push_back(frames[idx[i]]);

  double best = 1e300;
  int best_epoch = -1;
  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    for (size_t i = train_idx.size(); i > 1; --i)
      std::swap(train_idx[i - 1], train_idx[size_t(order_rng.uniform_int(0, int64_t(i) - 1))]);
    double train_loss = 0.0;
    int batches = 0;
    for (size_t base = 0; base + size_t(cfg.batch) <= train_idx.size(); base += size_t(cfg.batch)) {
      std::vector<const Frame*> batch;
      for (int i = 0; i < cfg.batch; ++i) batch.push_back(&frames[train_idx[base + size_t(i)]]);
      train_loss += vae.train_batch(batch, opt, noise_rng).total;
      ++batches;
    }
    const VaeLossParts test_parts = vae.eval_loss(test);
    if (log)
      *log << "vae epoch " << epoch << " train " << train_loss / std::max(1, batches)
           << " test " << test_parts.total << " (recon " << test_parts.recon << " kl "
           << test_parts.kl << ")\n";
    if (test_parts.total < best - cfg.min_delta) {
      best = test_parts.total;
      best_epoch = epoch;
    } else if (epoch - best_epoch >= cfg.patience) {
      break;
    }
  }
  return vae;
}

}  // namespace prwm
