#include "prwm/rollout.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "prwm/controller.hpp"
#include "prwm/vae.hpp"
#include "prwm/world_model.hpp"

namespace prwm {

namespace {

constexpr char kMagic[4] = {'P', 'R', 'R', 'L'};
constexpr uint16_t kVersion = 1;

uint64_t fnv1a(const char* data, size_t n, uint64_t h = 0xcbf29ce484222325ull) {
  for (size_t i = 0; i < n; ++i) {
    h ^= uint8_t(data[i]);
    h *= 0x100000001b3ull;
  }
  return h;
}

template <class T>
void put(std::string& buf, T v) {
  char tmp[sizeof(T)];
  std::memcpy(tmp, &v, sizeof(T));
  buf.append(tmp, sizeof(T));
}

class Reader {
 public:
  Reader(const std::string& buf, const std::string& path) : buf_(buf), path_(path) {}
  template <class T>
  T get() {
    if (pos_ + sizeof(T) > buf_.size())
      throw std::runtime_error("rollouts: '" + path_ + "' is truncated");
    T v;
    std::memcpy(&v, buf_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  void get_doubles(double* out, size_t n) {
    if (pos_ + n * sizeof(double) > buf_.size())
      throw std::runtime_error("rollouts: '" + path_ + "' is truncated");
    std::memcpy(out, buf_.data() + pos_, n * sizeof(double));
    pos_ += n * sizeof(double);
  }
  size_t pos() const { return pos_; }

 private:
  const std::string& buf_;
  std::string path_;
  size_t pos_ = 0;
};

int softmax_sample(const std::vector<double>& logits, Rng& rng) {
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  std::vector<double> w(logits.size());
  for (size_t i = 0; i < logits.size(); ++i) w[i] = std::exp(logits[i] - mx);
  return rng.categorical(w.data(), int(w.size()));
}

}  // namespace

void save_rollouts(const RolloutSet& set, const std::string& path) {
  std::string buf;
  buf.append(kMagic, 4);
  put(buf, kVersion);
  put(buf, uint8_t(set.kind));
  put(buf, int32_t(set.source_task));
  put(buf, uint32_t(set.latent_dim));
  put(buf, uint32_t(set.action_count));
  put(buf, uint32_t(set.rollouts.size()));
  const bool sim = set.kind == RolloutKind::kSimulated;
  for (const Rollout& ro : set.rollouts) {
    put(buf, uint32_t(ro.records.size()));
    for (const StepRecord& rec : ro.records) {
      if (int(rec.z.size()) != set.latent_dim)
        throw std::invalid_argument("save_rollouts: record latent size mismatch");
      buf.append(reinterpret_cast<const char*>(rec.z.data()), rec.z.size() * sizeof(double));
      put(buf, rec.action);
      put(buf, rec.reward);
      put(buf, rec.done);
      if (sim) {
        if (int(rec.policy_logits.size()) != set.action_count)
          throw std::invalid_argument("save_rollouts: simulated record lacks policy logits");
        buf.append(reinterpret_cast<const char*>(rec.policy_logits.data()),
                   rec.policy_logits.size() * sizeof(double));
      }
    }
  }
  put(buf, fnv1a(buf.data(), buf.size()));
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("rollouts: cannot open '" + path + "' for writing");
  os.write(buf.data(), std::streamsize(buf.size()));
  if (!os) throw std::runtime_error("rollouts: write to '" + path + "' failed");
}

RolloutSet load_rollouts(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("rollouts: cannot open '" + path + "'");
  std::string buf((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (buf.size() < 4 + sizeof(uint16_t) + sizeof(uint64_t) ||
      std::memcmp(buf.data(), kMagic, 4) != 0)
    throw std::runtime_error("rollouts: '" + path + "' has wrong magic");
  const size_t body = buf.size() - sizeof(uint64_t);
  uint64_t stored;
  std::memcpy(&stored, buf.data() + body, sizeof(stored));
  if (fnv1a(buf.data(), body) != stored)
    throw std::runtime_error("rollouts: '" + path + "' failed checksum verification");

  Reader r(buf, path);
  r.get<uint32_t>();  // skip magic (4 bytes)
  const auto version = r.get<uint16_t>();
  if (version != kVersion)
    throw std::runtime_error("rollouts: unsupported version " + std::to_string(version));
  RolloutSet set;
  set.kind = RolloutKind(r.get<uint8_t>());
  set.source_task = r.get<int32_t>();
  set.latent_dim = int(r.get<uint32_t>());
  set.action_count = int(r.get<uint32_t>());
  if (set.latent_dim < 1 || set.latent_dim > (1 << 16) || set.action_count < 1 ||
      set.action_count > (1 << 10))
    throw std::runtime_error("rollouts: '" + path + "' has implausible header");
  const auto count = r.get<uint32_t>();
  const bool sim = set.kind == RolloutKind::kSimulated;
  set.rollouts.resize(count);
  for (auto& ro : set.rollouts) {
    const auto records = r.get<uint32_t>();
    ro.records.resize(records);
    for (auto& rec : ro.records) {
      rec.z.resize(size_t(set.latent_dim));
      r.get_doubles(rec.z.data(), rec.z.size());
      rec.action = r.get<uint8_t>();
      rec.reward = r.get<int8_t>();
      rec.done = r.get<uint8_t>();
      if (sim) {
        rec.policy_logits.resize(size_t(set.action_count));
        r.get_doubles(rec.policy_logits.data(), rec.policy_logits.size());
      }
    }
  }
  if (r.pos() != body) throw std::runtime_error("rollouts: '" + path + "' has trailing bytes");
  return set;
}

std::pair<RolloutSet, RolloutSet> split_train_test(const RolloutSet& set, double test_fraction) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0))
    throw std::invalid_argument("split_train_test: fraction must be in (0, 1)");
  const size_t n = set.rollouts.size();
  size_t n_test = size_t(std::llround(double(n) * test_fraction));
  n_test = std::max<size_t>(1, std::min(n_test, n - 1));
  RolloutSet train = set, test = set;
  train.rollouts.assign(set.rollouts.begin(), set.rollouts.end() - std::ptrdiff_t(n_test));
  test.rollouts.assign(set.rollouts.end() - std::ptrdiff_t(n_test), set.rollouts.end());
  return {std::move(train), std::move(test)};
}

RolloutSet collect_random_rollouts(const std::string& task, const EnvConfig& env_cfg,
                                   const Vae& vae, const RolloutConfig& cfg, uint64_t seed) {
  RolloutSet set;
  set.kind = RolloutKind::kReal;
  set.latent_dim = vae.latent_dim();
  auto env = make_env(task, env_cfg);
  for (int i = 0; i < cfg.n_rollouts; ++i) {
    for (int attempt = 0;; ++attempt) {
      if (attempt > 1000)
        throw std::runtime_error("collect_random_rollouts: task '" + task +
                                 "' cannot reach t_min episodes");
      const uint64_t ep_seed = derive_seed(seed, "episode", uint64_t(i), uint64_t(attempt));
      Rng action_rng(derive_seed(ep_seed, "actions"));
      Rollout ro;
      Observation obs = env->reset(ep_seed);
      StepRecord rec;
      rec.z = vae.encode_mean(obs.frame);
      ro.records.push_back(std::move(rec));
      int prev_action = -1;
      while (!obs.done && ro.steps() < cfg.t_max) {
        const int action = random_policy_action(action_rng, prev_action);
        prev_action = action;
        ro.records.back().action = uint8_t(action);
        obs = env->step(action);
        StepRecord nxt;
        nxt.z = vae.encode_mean(obs.frame);
        nxt.reward = int8_t(obs.reward);
        nxt.done = obs.done ? 1 : 0;
        ro.records.push_back(std::move(nxt));
      }
      if (ro.steps() >= cfg.t_min) {
        set.rollouts.push_back(std::move(ro));
        break;
      }
    }
  }
  return set;
}

RolloutSet collect_policy_rollouts(const std::string& task, const EnvConfig& env_cfg,
                                   const Vae& vae, const WorldModel& m, const Controller& c,
                                   const RolloutConfig& cfg, uint64_t seed) {
  RolloutSet set;
  set.kind = RolloutKind::kReal;
  set.latent_dim = vae.latent_dim();
  const int L = vae.latent_dim();
  const int H = m.config().hidden;
  const int A = c.config().action_count;
  auto env = make_env(task, env_cfg);
  std::vector<double> logits(static_cast<size_t>(A));
  double value = 0.0;
  for (int i = 0; i < cfg.n_rollouts; ++i) {
    for (int attempt = 0;; ++attempt) {
      if (attempt > 1000)
        throw std::runtime_error("collect_policy_rollouts: task '" + task +
                                 "' cannot reach t_min episodes");
      const uint64_t ep_seed = derive_seed(seed, "episode", uint64_t(i), uint64_t(attempt));
      Rng action_rng(derive_seed(ep_seed, "actions"));
      Rollout ro;
      Observation obs = env->reset(ep_seed);
      nn::LstmState state = nn::LstmState::zeros(1, H);
      StepRecord rec;
      rec.z = vae.encode_mean(obs.frame);
      ro.records.push_back(std::move(rec));
      std::vector<double> input(size_t(L + H));
      while (!obs.done && ro.steps() < cfg.t_max) {
        const StepRecord& cur = ro.records.back();
        std::copy_n(cur.z.data(), L, input.data());
        std::copy_n(state.h.data.data(), H, input.data() + L);
        c.forward(input, logits.data(), &value);
        const int action = softmax_sample(logits, action_rng);
        ro.records.back().action = uint8_t(action);
        Tensor zt = Tensor::from({1, L}, cur.z);
        m.advance(zt, state);
        obs = env->step(action);
        StepRecord nxt;
        nxt.z = vae.encode_mean(obs.frame);
        nxt.reward = int8_t(obs.reward);
        nxt.done = obs.done ? 1 : 0;
        ro.records.push_back(std::move(nxt));
      }
      if (ro.steps() >= cfg.t_min) {
        set.rollouts.push_back(std::move(ro));
        break;
      }
    }
  }
  return set;
}

RolloutSet generate_sim_rollouts(const WorldModel& m, const Controller& c,
                                 const RolloutConfig& cfg, uint64_t seed,
                                 double temperature, int* resample_events) {
  const int L = m.config().latent_dim;
  const int H = m.config().hidden;
  const int A = c.config().action_count;
  if (c.input_dim() != L + H)
    throw std::invalid_argument("generate_sim_rollouts: controller input_dim != latent+hidden");
  if (resample_events) *resample_events = 0;
  RolloutSet set;
  set.kind = RolloutKind::kSimulated;
  set.latent_dim = L;
  std::vector<double> logits(static_cast<size_t>(A));
  double value = 0.0;
  std::vector<double> input(size_t(L + H));
  auto policy_at = [&](const std::vector<double>& z, const nn::LstmState& state) {
    std::copy_n(z.data(), L, input.data());
    std::copy_n(state.h.data.data(), H, input.data() + L);
    c.forward(input, logits.data(), &value);
    return logits;
  };

  for (int i = 0; i < cfg.n_rollouts; ++i) {
    for (int attempt = 0;; ++attempt) {
      if (attempt > 100)
        throw std::runtime_error("generate_sim_rollouts: persistent non-finite dream latents");
      Rng rng(derive_seed(seed, "sim-episode", uint64_t(i), uint64_t(attempt)));
      Rollout ro;
      nn::LstmState state = nn::LstmState::zeros(1, H);
      StepRecord rec0;
      rec0.z.resize(size_t(L));
      for (auto& v : rec0.z) v = rng.normal();
      rec0.policy_logits = policy_at(rec0.z, state);
      rec0.action = uint8_t(rng.uniform_int(0, A - 1));
      ro.records.push_back(std::move(rec0));
      bool ok = true;
      while (ro.steps() < cfg.t_max) {
        const StepRecord& cur = ro.records.back();
        MdnSingle out = m_forward(m, cur.z, cur.action, state);
        NextSample ns = sample_next(out, rng, temperature);
        bool finite = std::isfinite(ns.reward);
        for (double v : ns.z) finite = finite && std::isfinite(v);
        if (!finite) {
          ok = false;
          break;
        }
        StepRecord nxt;
        nxt.z = std::move(ns.z);
        nxt.reward = int8_t(ns.reward);
        nxt.done = ns.done ? 1 : 0;
        nxt.policy_logits = policy_at(nxt.z, state);
        if (!ns.done) nxt.action = uint8_t(softmax_sample(nxt.policy_logits, rng));
        ro.records.push_back(std::move(nxt));
        if (ns.done) break;
      }
      if (ok) {
        set.rollouts.push_back(std::move(ro));
        break;
      }
      if (resample_events) ++(*resample_events);
    }
  }
  return set;
}

}  // namespace prwm
