#pragma once
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace prwm {

// Dense row-major f64 tensor. All arithmetic in the project is double
// precision; shapes are small enough that the simplicity is worth it.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s, double fill = 0.0);
  static Tensor scalar(double v);
  static Tensor row(std::vector<double> v);
  static Tensor from(std::vector<int> s, std::vector<double> d);
  static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape); }

  int rank() const { return int(shape.size()); }
  int dim(int i) const { return shape[size_t(i)]; }
  int64_t numel() const { return int64_t(data.size()); }
  double& operator[](int64_t i) { return data[size_t(i)]; }
  const double& operator[](int64_t i) const { return data[size_t(i)]; }
  bool same_shape(const Tensor& o) const { return shape == o.shape; }
  bool all_finite() const;
  std::string shape_str() const;
};

int64_t shape_numel(std::span<const int> s);

// GEMM kernels on row-major buffers. Naming after operand transposition:
//   gemm_nn: C[m,n] (+)= A[m,k] * B[k,n]
//   gemm_tn: C[m,n] (+)= A[b,m]^T * B[b,n]   (A and B share leading dim b)
//   gemm_nt: C[m,k] (+)= A[m,n] * B[k,n]^T
void gemm_nn(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate);
void gemm_tn(const double* a, const double* b, double* c, int bdim, int m, int n, bool accumulate);
void gemm_nt(const double* a, const double* b, double* c, int m, int n, int k, bool accumulate);

}  // namespace prwm
