#include "prwm/config.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

namespace prwm {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  std::stringstream ss(s);
  while (std::getline(ss, cur, ',')) {
    cur = trim(cur);
    if (!cur.empty()) out.push_back(cur);
  }
  return out;
}

template <class T>
T parse_number(const std::string& key, const std::string& value) {
  const std::string v = trim(value);
  T out{};
  const char* first = v.data();
  const char* last = v.data() + v.size();
  std::from_chars_result r;
  if constexpr (std::is_floating_point_v<T>)
    r = std::from_chars(first, last, out, std::chars_format::general);
  else
    r = std::from_chars(first, last, out);
  if (r.ec != std::errc() || r.ptr != last)
    throw ConfigError("config: key '" + key + "' expects a number, got '" + value + "'");
  return out;
}

std::string fmt_double(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

std::string join_u64(const std::vector<uint64_t>& v) {
  std::string s;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(v[i]);
  }
  return s;
}

std::string join_int(const std::vector<int>& v) {
  std::string s;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(v[i]);
  }
  return s;
}

std::string join_str(const std::vector<std::string>& v) {
  std::string s;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) s += ",";
    s += v[i];
  }
  return s;
}

struct KeyHandler {
  std::string name;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

// Schema and canonical rendering order.
const std::vector<KeyHandler>& schema() {
  static const std::vector<KeyHandler> keys = [] {
    std::vector<KeyHandler> k;
    auto add = [&](std::string name, auto setter, auto getter) {
      k.push_back({std::move(name), setter, getter});
    };
    add(
        "tasks", [](ExperimentConfig& c, const std::string& v) { c.tasks = split_commas(v); },
        [](const ExperimentConfig& c) { return join_str(c.tasks); });
    add(
        "outdir", [](ExperimentConfig& c, const std::string& v) { c.outdir = trim(v); },
        [](const ExperimentConfig& c) { return c.outdir; });
    add(
        "seed",
        [](ExperimentConfig& c, const std::string& v) {
          c.seed = parse_number<uint64_t>("seed", v);
        },
        [](const ExperimentConfig& c) { return std::to_string(c.seed); });
    add(
        "seeds",
        [](ExperimentConfig& c, const std::string& v) {
          c.seeds.clear();
          for (const auto& tok : split_commas(v))
            c.seeds.push_back(parse_number<uint64_t>("seeds", tok));
        },
        [](const ExperimentConfig& c) { return join_u64(c.seeds); });
    add(
        "rehearsal",
        [](ExperimentConfig& c, const std::string& v) {
          const std::string t = trim(v);
          if (t == "on")
            c.rehearsal = Rehearsal::kOn;
          else if (t == "off")
            c.rehearsal = Rehearsal::kOff;
          else if (t == "both")
            c.rehearsal = Rehearsal::kBoth;
          else
            throw ConfigError("config: rehearsal must be on|off|both, got '" + t + "'");
        },
        [](const ExperimentConfig& c) { return rehearsal_name(c.rehearsal); });

    auto add_int = [&](std::string name, int ExperimentConfig::* field) {
      add(
          name,
          [name, field](ExperimentConfig& c, const std::string& v) {
            c.*field = parse_number<int>(name, v);
          },
          [field](const ExperimentConfig& c) { return std::to_string(c.*field); });
    };
    auto add_i64 = [&](std::string name, int64_t ExperimentConfig::* field) {
      add(
          name,
          [name, field](ExperimentConfig& c, const std::string& v) {
            c.*field = parse_number<int64_t>(name, v);
          },
          [field](const ExperimentConfig& c) { return std::to_string(c.*field); });
    };
    auto add_dbl = [&](std::string name, double ExperimentConfig::* field) {
      add(
          name,
          [name, field](ExperimentConfig& c, const std::string& v) {
            c.*field = parse_number<double>(name, v);
          },
          [field](const ExperimentConfig& c) { return fmt_double(c.*field); });
    };

    add_int("n_reps", &ExperimentConfig::n_reps);
    add_dbl("test_fraction", &ExperimentConfig::test_fraction);
    add_int("frame_height", &ExperimentConfig::frame_height);
    add_int("frame_width", &ExperimentConfig::frame_width);
    add_int("channels", &ExperimentConfig::channels);
    add_int("frame_skip", &ExperimentConfig::frame_skip);
    add_int("latent_dim", &ExperimentConfig::latent_dim);
    add(
        "conv_stack",
        [](ExperimentConfig& c, const std::string& v) {
          c.conv_stack.clear();
          for (const auto& tok : split_commas(v))
            c.conv_stack.push_back(parse_number<int>("conv_stack", tok));
          if (c.conv_stack.empty())
            throw ConfigError("config: conv_stack needs at least one filter count");
        },
        [](const ExperimentConfig& c) { return join_int(c.conv_stack); });
    add_dbl("vae_lr", &ExperimentConfig::vae_lr);
    add_int("vae_batch", &ExperimentConfig::vae_batch);
    add_dbl("vae_beta", &ExperimentConfig::vae_beta);
    add_int("vae_patience", &ExperimentConfig::vae_patience);
    add_dbl("vae_min_delta", &ExperimentConfig::vae_min_delta);
    add_int("vae_max_epochs", &ExperimentConfig::vae_max_epochs);
    add_int("vae_frames_per_task", &ExperimentConfig::vae_frames_per_task);
    add_int("mdn_mixtures", &ExperimentConfig::mdn_mixtures);
    add_int("lstm_hidden", &ExperimentConfig::lstm_hidden);
    add_dbl("m_lr", &ExperimentConfig::m_lr);
    add_int("m_batches_per_epoch", &ExperimentConfig::m_batches_per_epoch);
    add_int("m_batch", &ExperimentConfig::m_batch);
    add_int("m_seq_len", &ExperimentConfig::m_seq_len);
    add_int("c_hidden", &ExperimentConfig::c_hidden);
    add_dbl("c_lr", &ExperimentConfig::c_lr);
    add_dbl("tau", &ExperimentConfig::tau);
    add_dbl("gamma", &ExperimentConfig::gamma);
    add_int("horizon", &ExperimentConfig::horizon);
    add_i64("n_steps_per_exposure", &ExperimentConfig::n_steps_per_exposure);
    add_i64("distill_window", &ExperimentConfig::distill_window);
    add_int("distill_batch", &ExperimentConfig::distill_batch);
    add_dbl("value_coef", &ExperimentConfig::value_coef);
    add_dbl("entropy_coef", &ExperimentConfig::entropy_coef);
    add_int("n_rollouts", &ExperimentConfig::n_rollouts);
    add_int("t_max", &ExperimentConfig::t_max);
    add_int("t_min", &ExperimentConfig::t_min);
    add_dbl("sim_temperature", &ExperimentConfig::sim_temperature);
    add_int("exposures_per_task", &ExperimentConfig::exposures_per_task);
    add_int("total_epochs_per_task", &ExperimentConfig::total_epochs_per_task);
    add_int("min_epochs", &ExperimentConfig::min_epochs);
    return k;
  }();
  return keys;
}

const KeyHandler& find_key(const std::string& name) {
  for (const auto& h : schema())
    if (h.name == name) return h;
  throw ConfigError("config: unknown key '" + name + "'");
}

void apply_line(ExperimentConfig& cfg, const std::string& line, bool* saw_seed) {
  std::string s = line;
  if (size_t hash = s.find('#'); hash != std::string::npos) s = s.substr(0, hash);
  s = trim(s);
  if (s.empty()) return;
  const size_t eq = s.find('=');
  if (eq == std::string::npos)
    throw ConfigError("config: expected 'key = value', got '" + trim(line) + "'");
  const std::string key = trim(s.substr(0, eq));
  const std::string value = trim(s.substr(eq + 1));
  if (key.empty()) throw ConfigError("config: empty key in '" + trim(line) + "'");
  find_key(key).set(cfg, value);
  if (key == "seed") *saw_seed = true;
}

void validate(const ExperimentConfig& c) {
  if (c.tasks.empty()) throw ConfigError("config: required key 'tasks' is missing or empty");
  if (c.outdir.empty()) throw ConfigError("config: required key 'outdir' is missing or empty");
  if (c.n_reps < 1) throw ConfigError("config: n_reps must be >= 1");
  if (!(c.test_fraction > 0.0 && c.test_fraction < 1.0))
    throw ConfigError("config: test_fraction must be in (0, 1)");
  if (c.t_min > c.t_max) throw ConfigError("config: t_min must not exceed t_max");
  if (c.n_rollouts < 2) throw ConfigError("config: n_rollouts must be >= 2");
  if (c.latent_dim < 1) throw ConfigError("config: latent_dim must be >= 1");
  if (c.total_epochs_per_task < c.exposures_per_task * c.min_epochs)
    throw ConfigError("config: total_epochs_per_task below exposures_per_task * min_epochs");
}

}  // namespace

std::string rehearsal_name(Rehearsal r) {
  switch (r) {
    case Rehearsal::kOn: return "on";
    case Rehearsal::kOff: return "off";
    case Rehearsal::kBoth: return "both";
  }
  return "both";
}

EnvConfig ExperimentConfig::env_config() const {
  return {frame_height, frame_width, channels, frame_skip};
}

VaeConfig ExperimentConfig::vae_config() const {
  VaeConfig v;
  v.frame_h = frame_height;
  v.frame_w = frame_width;
  v.channels = channels;
  v.latent_dim = latent_dim;
  v.conv_filters = conv_stack;
  v.lr = vae_lr;
  v.beta = vae_beta;
  v.batch = vae_batch;
  v.patience = vae_patience;
  v.min_delta = vae_min_delta;
  v.max_epochs = vae_max_epochs;
  return v;
}

ModelConfig ExperimentConfig::model_config() const {
  ModelConfig m;
  m.latent_dim = latent_dim;
  m.mixtures = mdn_mixtures;
  m.hidden = lstm_hidden;
  m.lr = m_lr;
  m.batches_per_epoch = m_batches_per_epoch;
  m.batch = m_batch;
  m.seq_len = m_seq_len;
  return m;
}

ControllerConfig ExperimentConfig::controller_config() const {
  ControllerConfig c;
  c.hidden = c_hidden;
  c.lr = c_lr;
  c.tau = tau;
  c.gamma = gamma;
  c.horizon = horizon;
  c.n_steps_per_exposure = n_steps_per_exposure;
  c.distill_window = distill_window;
  c.distill_batch = distill_batch;
  c.value_coef = value_coef;
  c.entropy_coef = entropy_coef;
  return c;
}

RolloutConfig ExperimentConfig::rollout_config() const { return {n_rollouts, t_max, t_min}; }

ScheduleConfig ExperimentConfig::schedule_config() const {
  return {exposures_per_task, total_epochs_per_task, min_epochs};
}

std::vector<uint64_t> ExperimentConfig::replication_seeds() const {
  if (!seeds.empty()) {
    if (int(seeds.size()) < n_reps)
      throw ConfigError("config: seeds list shorter than n_reps");
    return {seeds.begin(), seeds.begin() + n_reps};
  }
  std::vector<uint64_t> out;
  out.reserve(size_t(n_reps));
  for (int i = 0; i < n_reps; ++i) out.push_back(derive_seed(seed, "rep", uint64_t(i)));
  return out;
}

std::string ExperimentConfig::render() const {
  std::string out;
  for (const auto& h : schema()) {
    out += h.name;
    out += " = ";
    out += h.get(*this);
    out += "\n";
  }
  return out;
}

ExperimentConfig parse_config_text(const std::string& text,
                                   const std::vector<std::string>& overrides) {
  ExperimentConfig cfg;
  bool saw_seed = false;
  std::stringstream ss(text);
  std::string line;
  while (std::getline(ss, line)) apply_line(cfg, line, &saw_seed);
  for (const auto& o : overrides) apply_line(cfg, o, &saw_seed);
  if (!saw_seed) {
    if (const char* env = std::getenv("PRWM_SEED"))
      cfg.seed = parse_number<uint64_t>("PRWM_SEED", env);
  }
  validate(cfg);
  return cfg;
}

ExperimentConfig parse_config(const std::string& path, const std::vector<std::string>& overrides) {
  std::ifstream is(path);
  if (!is) throw ConfigError("config: cannot read '" + path + "'");
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config_text(ss.str(), overrides);
}

}  // namespace prwm
