#pragma once
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "prwm/controller.hpp"
#include "prwm/schedule.hpp"

namespace prwm {

// Shortest decimal form that parses back to the identical double; used for
// every number we persist so logs and reports are byte-stable.
std::string format_double(double v);

// Trapezoidal area under uniformly spaced samples, accumulated left to right.
double trapz(std::span<const double> y, double dx = 1.0);

// Normalized areas under two equal-length loss curves: each curve's area
// divided by the sum of both. The pair sums to 1.
std::pair<double, double> percent_integrated_loss(std::span<const double> with_curve,
                                                  std::span<const double> without_curve);

// Integrated-loss areas split at a task's exposure boundaries. `total` is
// assembled as transfer + preservation, so the partition identity is exact by
// construction; it equals the whole-curve trapezoid up to summation order.
struct LossDecomposition {
  double transfer = 0.0;
  double preservation = 0.0;
  double reconsolidation = 0.0;
  double total = 0.0;
};

// `curve[i]` is the loss at epoch x0 + i. `first_exposure` / `final_exposure`
// are the epochs at which the task's first / last training entry begins;
// boundaries are clamped to the curve's domain.
LossDecomposition decompose_loss(std::span<const double> curve, int first_exposure,
                                 int final_exposure, int x0 = 0);

// Mean paired difference with a normal-approximation 95% confidence interval.
struct PairedDifference {
  double mean = 0.0;
  double se = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  int n = 0;
};
PairedDifference pairwise_condition_difference(std::span<const double> with_values,
                                               std::span<const double> without_values);

// Labels each query latent by majority vote of its k nearest reference
// latents (Euclidean); vote ties break by smaller summed distance, then lower
// task id. Returns per-task proportions over the queries, summing to 1.
std::vector<double> knn_task_attribution(const std::vector<std::vector<double>>& queries,
                                         const std::vector<std::vector<double>>& ref_latents,
                                         const std::vector<int>& ref_tasks, int k,
                                         int task_count);

// Median return of episodes ending inside each window of `window_frames`
// frames. Windows without a completed episode carry no value.
struct RewardWindow {
  int64_t window = 0;  // episodes with end_frame in [window*K, (window+1)*K)
  std::optional<double> median;
  int episodes = 0;
};
std::vector<RewardWindow> median_reward(const std::vector<RewardEvent>& events,
                                        int64_t window_frames);

// Spearman rank correlation (average ranks on ties) with a two-sided p-value
// from the t approximation.
struct RankCorrelation {
  double rho = 0.0;
  double p = 1.0;
};
RankCorrelation rank_correlation(std::span<const double> x, std::span<const double> y);

}  // namespace prwm
