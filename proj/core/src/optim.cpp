#include "prwm/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace prwm {

void Adam::step(nn::Params& params) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1, double(t_));
  const double bc2 = 1.0 - std::pow(beta2, double(t_));
  for (auto& [name, var] : params.items) {
    Tensor& g = var.grad();
    auto& [m, v] = moments_[name];
    if (m.data.empty()) {
      m = Tensor(var.value().shape);
      v = Tensor(var.value().shape);
    }
    Tensor& p = var.value();
    for (int64_t i = 0; i < p.numel(); ++i) {
      m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

void Adam::export_state(const nn::Params& params, const std::string& prefix,
                        std::vector<std::pair<std::string, Tensor>>& out) const {
  out.emplace_back(prefix + ".t", Tensor::scalar(double(t_)));
  for (auto& [name, var] : params.items) {
    auto it = moments_.find(name);
    const Tensor zero(var.value().shape);
    const Tensor& m = it == moments_.end() ? zero : it->second.first;
    const Tensor& v = it == moments_.end() ? zero : it->second.second;
    out.emplace_back(prefix + ".m." + name, m);
    out.emplace_back(prefix + ".v." + name, v);
  }
}

void Adam::import_state(const nn::Params& params, const std::string& prefix,
                        const std::vector<std::pair<std::string, Tensor>>& in) {
  auto find = [&](const std::string& name) -> const Tensor* {
    for (auto& [n, t] : in)
      if (n == name) return &t;
    return nullptr;
  };
  const Tensor* t = find(prefix + ".t");
  if (!t) throw std::runtime_error("adam: missing step counter '" + prefix + ".t'");
  t_ = int64_t(t->data[0]);
  moments_.clear();
  for (auto& [name, var] : params.items) {
    const Tensor* m = find(prefix + ".m." + name);
    const Tensor* v = find(prefix + ".v." + name);
    if (!m || !v) throw std::runtime_error("adam: missing moments for '" + name + "'");
    if (!m->same_shape(var.value()) || !v->same_shape(var.value()))
      throw std::runtime_error("adam: moment shape mismatch for '" + name + "'");
    moments_[name] = {*m, *v};
  }
}

}  // namespace prwm
