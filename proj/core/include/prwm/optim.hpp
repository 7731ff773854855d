#pragma once
#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>

#include "prwm/layers.hpp"

namespace prwm {

// Adam with bias correction. Moments are keyed by parameter name so optimizer
// state survives checkpointing; update order follows Params insertion order.
class Adam {
 public:
  explicit Adam(double lr) : lr(lr) {}
  Adam(double lr, double beta1, double beta2, double eps)
      : lr(lr), beta1(beta1), beta2(beta2), eps(eps) {}

  // Applies one update from the gradients accumulated on `params`.
  // Does not zero the gradients.
  void step(nn::Params& params);

  int64_t steps_taken() const { return t_; }

  // Flattens moments (and the step counter) into named tensors for checkpoints.
  void export_state(const nn::Params& params, const std::string& prefix,
                    std::vector<std::pair<std::string, Tensor>>& out) const;
  void import_state(const nn::Params& params, const std::string& prefix,
                    const std::vector<std::pair<std::string, Tensor>>& in);

  double lr;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

 private:
  int64_t t_ = 0;
  std::unordered_map<std::string, std::pair<Tensor, Tensor>> moments_;  // name -> (m, v)
};

}  // namespace prwm
