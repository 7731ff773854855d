#include "prwm/metrics.hpp"

#include <algorithm>
#include <boost/math/distributions/students_t.hpp>
#include <charconv>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <stdexcept>

namespace prwm {

std::string format_double(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

double trapz(std::span<const double> y, double dx) {
  double area = 0.0;
  for (size_t i = 0; i + 1 < y.size(); ++i) area += 0.5 * dx * (y[i] + y[i + 1]);
  return area;
}

std::pair<double, double> percent_integrated_loss(std::span<const double> with_curve,
                                                  std::span<const double> without_curve) {
  if (with_curve.size() != without_curve.size())
    throw std::invalid_argument("percent_integrated_loss: curve lengths differ");
  if (with_curve.size() < 2)
    throw std::invalid_argument("percent_integrated_loss: need at least two points");
  const double a_w = trapz(with_curve);
  const double a_wo = trapz(without_curve);
  const double total = a_w + a_wo;
  if (!(total > 0.0)) throw std::domain_error("percent_integrated_loss: zero total area");
  return {a_w / total, a_wo / total};
}

LossDecomposition decompose_loss(std::span<const double> curve, int first_exposure,
                                 int final_exposure, int x0) {
  if (curve.size() < 2) throw std::invalid_argument("decompose_loss: need at least two points");
  const int last = x0 + int(curve.size()) - 1;
  const auto clamp_idx = [&](int epoch) { return size_t(std::clamp(epoch, x0, last) - x0); };
  const size_t fi = clamp_idx(first_exposure);
  const size_t li = clamp_idx(final_exposure);
  LossDecomposition d;
  d.transfer = trapz(curve.subspan(0, fi + 1));
  d.preservation = trapz(curve.subspan(fi));
  d.reconsolidation = trapz(curve.subspan(li));
  d.total = d.transfer + d.preservation;
  return d;
}

PairedDifference pairwise_condition_difference(std::span<const double> with_values,
                                               std::span<const double> without_values) {
  if (with_values.size() != without_values.size())
    throw std::invalid_argument("pairwise_condition_difference: unpaired inputs");
  const size_t n = with_values.size();
  if (n < 2) throw std::invalid_argument("pairwise_condition_difference: need >= 2 replications");
  std::vector<double> diff(n);
  for (size_t i = 0; i < n; ++i) diff[i] = with_values[i] - without_values[i];
  PairedDifference out;
  out.n = int(n);
  out.mean = std::accumulate(diff.begin(), diff.end(), 0.0) / double(n);
  double ss = 0.0;
  for (double d : diff) ss += (d - out.mean) * (d - out.mean);
  out.se = std::sqrt(ss / double(n - 1)) / std::sqrt(double(n));
  out.ci_lo = out.mean - 1.96 * out.se;
  out.ci_hi = out.mean + 1.96 * out.se;
  return out;
}

std::vector<double> knn_task_attribution(const std::vector<std::vector<double>>& queries,
                                         const std::vector<std::vector<double>>& ref_latents,
                                         const std::vector<int>& ref_tasks, int k,
                                         int task_count) {
  if (queries.empty()) throw std::invalid_argument("knn_task_attribution: empty query set");
  if (ref_latents.empty() || ref_latents.size() != ref_tasks.size())
    throw std::invalid_argument("knn_task_attribution: bad reference set");
  if (k < 1 || task_count < 1)
    throw std::invalid_argument("knn_task_attribution: k and task_count must be positive");
  for (int t : ref_tasks)
    if (t < 0 || t >= task_count)
      throw std::invalid_argument("knn_task_attribution: reference task id out of range");
  const size_t m = ref_latents.size();
  const size_t kk = std::min(size_t(k), m);

  std::vector<double> counts(size_t(task_count), 0.0);
  std::vector<std::pair<double, size_t>> dist(m);  // (squared distance, ref index)
  for (const auto& q : queries) {
    for (size_t j = 0; j < m; ++j) {
      const auto& r = ref_latents[j];
      if (r.size() != q.size())
        throw std::invalid_argument("knn_task_attribution: latent dimension mismatch");
      double d2 = 0.0;
      for (size_t i = 0; i < q.size(); ++i) {
        const double d = q[i] - r[i];
        d2 += d * d;
      }
      dist[j] = {d2, j};
    }
    std::partial_sort(dist.begin(), dist.begin() + std::ptrdiff_t(kk), dist.end());
    // Majority vote; ties by smaller summed distance, then lower task id.
    std::vector<int> votes(size_t(task_count), 0);
    std::vector<double> sums(size_t(task_count), 0.0);
    for (size_t j = 0; j < kk; ++j) {
      const int t = ref_tasks[dist[j].second];
      votes[size_t(t)] += 1;
      sums[size_t(t)] += std::sqrt(dist[j].first);
    }
    int best = -1;
    for (int t = 0; t < task_count; ++t) {
      if (votes[size_t(t)] == 0) continue;
      if (best < 0 || votes[size_t(t)] > votes[size_t(best)] ||
          (votes[size_t(t)] == votes[size_t(best)] && sums[size_t(t)] < sums[size_t(best)]))
        best = t;
    }
    counts[size_t(best)] += 1.0;
  }
  for (double& c : counts) c /= double(queries.size());
  return counts;
}

std::vector<RewardWindow> median_reward(const std::vector<RewardEvent>& events,
                                        int64_t window_frames) {
  if (window_frames <= 0) throw std::invalid_argument("median_reward: window must be positive");
  std::map<int64_t, std::vector<double>> buckets;
  int64_t max_window = -1;
  for (const auto& e : events) {
    const int64_t w = e.end_frame / window_frames;
    buckets[w].push_back(e.episode_return);
    max_window = std::max(max_window, w);
  }
  std::vector<RewardWindow> out;
  for (int64_t w = 0; w <= max_window; ++w) {
    RewardWindow row;
    row.window = w;
    auto it = buckets.find(w);
    if (it != buckets.end() && !it->second.empty()) {
      auto& v = it->second;
      std::sort(v.begin(), v.end());
      const size_t n = v.size();
      row.median = (n % 2 == 1) ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
      row.episodes = int(n);
    }
    out.push_back(row);
  }
  return out;
}

namespace {

// Fractional ranks with ties averaged, 1-based.
std::vector<double> average_ranks(std::span<const double> x) {
  const size_t n = x.size();
  std::vector<size_t> idx(n);
  std::iota(idx.begin(), idx.end(), size_t(0));
  std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(n, 0.0);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && x[idx[j + 1]] == x[idx[i]]) ++j;
    const double r = 0.5 * (double(i + 1) + double(j + 1));
    for (size_t t = i; t <= j; ++t) ranks[idx[t]] = r;
    i = j + 1;
  }
  return ranks;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const size_t n = a.size();
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / double(n);
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / double(n);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (!(saa > 0.0) || !(sbb > 0.0))
    throw std::domain_error("rank_correlation: constant input has undefined ranks");
  return sab / std::sqrt(saa * sbb);
}

}  // namespace

RankCorrelation rank_correlation(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw std::invalid_argument("rank_correlation: lengths differ");
  if (x.size() < 3) throw std::invalid_argument("rank_correlation: need at least 3 points");
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  RankCorrelation out;
  out.rho = pearson(rx, ry);
  const double n = double(x.size());
  const double denom = 1.0 - out.rho * out.rho;
  if (denom <= 0.0) {
    out.p = 0.0;
    return out;
  }
  const double t = out.rho * std::sqrt((n - 2.0) / denom);
  boost::math::students_t dist(n - 2.0);
  out.p = 2.0 * boost::math::cdf(boost::math::complement(dist, std::fabs(t)));
  return out;
}

}  // namespace prwm
