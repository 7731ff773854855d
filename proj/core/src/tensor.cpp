#include "prwm/tensor.hpp"

#include <cmath>
#include <stdexcept>

namespace prwm {

int64_t shape_numel(std::span<const int> s) {
  int64_t n = 1;
  for (int d : s) {
    if (d < 0) throw std::invalid_argument("tensor: negative dimension");
    n *= d;
  }
  return n;
}

Tensor::Tensor(std::vector<int> s, double fill)
    : shape(std::move(s)), data(size_t(shape_numel(shape)), fill) {}

Tensor Tensor::scalar(double v) {
  Tensor t({1});
  t.data[0] = v;
  return t;
}

Tensor Tensor::row(std::vector<double> v) {
  Tensor t;
  t.shape = {int(v.size())};
  t.data = std::move(v);
  return t;
}

Tensor Tensor::from(std::vector<int> s, std::vector<double> d) {
  if (shape_numel(s) != int64_t(d.size()))
    throw std::invalid_argument("tensor: data size does not match shape");
  Tensor t;
  t.shape = std::move(s);
  t.data = std::move(d);
  return t;
}

bool Tensor::all_finite() const {
  for (double v : data)
    if (!std::isfinite(v)) return false;
  return true;
}

std::string Tensor::shape_str() const {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

void gemm_nn(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate) {
  for (int i = 0; i < m; ++i) {
    double* crow = c + int64_t(i) * n;
    if (!accumulate)
      for (int j = 0; j < n; ++j) crow[j] = 0.0;
    const double* arow = a + int64_t(i) * k;
    for (int p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* brow = b + int64_t(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void gemm_tn(const double* a, const double* b, double* c, int bdim, int m, int n, bool accumulate) {
  if (!accumulate)
    for (int64_t i = 0; i < int64_t(m) * n; ++i) c[i] = 0.0;
  for (int p = 0; p < bdim; ++p) {
    const double* arow = a + int64_t(p) * m;
    const double* brow = b + int64_t(p) * n;
    for (int i = 0; i < m; ++i) {
      const double av = arow[i];
      double* crow = c + int64_t(i) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void gemm_nt(const double* a, const double* b, double* c, int m, int n, int k, bool accumulate) {
  for (int i = 0; i < m; ++i) {
    const double* arow = a + int64_t(i) * n;
    double* crow = c + int64_t(i) * k;
    for (int j = 0; j < k; ++j) {
      const double* brow = b + int64_t(j) * n;
      double acc = 0.0;
      for (int p = 0; p < n; ++p) acc += arow[p] * brow[p];
      crow[j] = accumulate ? crow[j] + acc : acc;
    }
  }
}

}  // namespace prwm
