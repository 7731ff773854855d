#include "prwm/gradcheck.hpp"

#include <cmath>
#include <stdexcept>

namespace prwm {

GradCheckReport grad_check(const std::function<ag::Var()>& build_loss,
                           nn::Params& params, double eps) {
  if (!(eps >= 1e-7 && eps <= 1e-3))
    throw std::invalid_argument("grad_check: eps must lie in [1e-7, 1e-3]");

  params.zero_grad();
  ag::Var loss = build_loss();
  if (loss.value().numel() != 1)
    throw std::invalid_argument("grad_check: loss must be scalar");
  if (!std::isfinite(loss.value()[0]))
    throw std::runtime_error("grad_check: loss is not finite");
  ag::backward(loss);

  std::vector<Tensor> analytic;
  analytic.reserve(params.items.size());
  for (auto& [name, var] : params.items) analytic.push_back(var.grad());

  auto eval = [&]() {
    const double v = build_loss().value()[0];
    if (!std::isfinite(v)) throw std::runtime_error("grad_check: perturbed loss is not finite");
    return v;
  };

  GradCheckReport report;
  for (size_t pi = 0; pi < params.items.size(); ++pi) {
    auto& [name, var] = params.items[pi];
    Tensor& value = var.value();
    for (int64_t i = 0; i < value.numel(); ++i) {
      const double orig = value[i];
      value[i] = orig + eps;
      const double up = eval();
      value[i] = orig - eps;
      const double down = eval();
      value[i] = orig;
      const double gn = (up - down) / (2.0 * eps);
      const double ga = analytic[pi][i];
      const double denom = std::max(std::abs(ga), std::abs(gn));
      const double rel = denom >= 1e-6 ? std::abs(ga - gn) / denom : 0.0;
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_param = name;
        report.worst_index = i;
      }
    }
  }
  return report;
}

}  // namespace prwm
