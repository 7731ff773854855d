#include "prwm/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <utility>

namespace prwm::ag {

namespace {

Var make(Tensor value, std::vector<NodePtr> inputs, std::function<void(Node&)> backprop) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->inputs = std::move(inputs);
  for (auto& in : n->inputs)
    if (in->requires_grad) {
      n->requires_grad = true;
      break;
    }
  if (n->requires_grad) n->backprop = std::move(backprop);
  return Var(std::move(n));
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (!a.value().same_shape(b.value()))
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                a.value().shape_str() + " vs " + b.value().shape_str());
}

void check_matrix(const Var& a, const char* op) {
  if (a.value().rank() != 2)
    throw std::invalid_argument(std::string(op) + ": expected rank-2 tensor, got " +
                                a.value().shape_str());
}

constexpr double kHalfLog2Pi = 0.9189385332046727;  // 0.5*ln(2*pi)

}  // namespace

Var Var::leaf(Tensor value, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  return Var(std::move(n));
}

void backward(const Var& loss) {
  if (!loss.defined()) throw std::invalid_argument("backward: undefined variable");
  Node* root = loss.node().get();
  if (root->value.numel() != 1)
    throw std::invalid_argument("backward: loss must be a scalar, got " + root->value.shape_str());
  if (!root->requires_grad) return;

  // Iterative post-order DFS over the requires_grad subgraph.
  std::vector<Node*> order;
  std::vector<std::pair<Node*, size_t>> stack;
  root->in_topo = true;
  stack.emplace_back(root, 0);
  while (!stack.empty()) {
    auto& [n, idx] = stack.back();
    if (idx < n->inputs.size()) {
      Node* child = n->inputs[idx++].get();
      if (child->requires_grad && !child->in_topo) {
        child->in_topo = true;
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  root->ensure_grad().data[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backprop && !n->grad.data.empty()) n->backprop(*n);
  }
  for (Node* n : order) n->in_topo = false;
}

// --- elementwise -------------------------------------------------------------

Var add(const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  Tensor out = a.value();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] += b.value()[i];
  return make(std::move(out), {a.node(), b.node()}, [](Node& self) {
    for (int s = 0; s < 2; ++s) {
      Node* in = self.inputs[size_t(s)].get();
      if (!in->requires_grad) continue;
      Tensor& g = in->ensure_grad();
      for (int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
    }
  });
}

Var sub(const Var& a, const Var& b) {
  check_same_shape(a, b, "sub");
  Tensor out = a.value();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] -= b.value()[i];
  return make(std::move(out), {a.node(), b.node()}, [](Node& self) {
    Node* ia = self.inputs[0].get();
    Node* ib = self.inputs[1].get();
    if (ia->requires_grad) {
      Tensor& g = ia->ensure_grad();
      for (int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
    }
    if (ib->requires_grad) {
      Tensor& g = ib->ensure_grad();
      for (int64_t i = 0; i < g.numel(); ++i) g[i] -= self.grad[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  check_same_shape(a, b, "mul");
  Tensor out = a.value();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] *= b.value()[i];
  return make(std::move(out), {a.node(), b.node()}, [](Node& self) {
    Node* ia = self.inputs[0].get();
    Node* ib = self.inputs[1].get();
    if (ia->requires_grad) {
      Tensor& g = ia->ensure_grad();
      for (int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * ib->value[i];
    }
    if (ib->requires_grad) {
      Tensor& g = ib->ensure_grad();
      for (int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * ia->value[i];
    }
  });
}

Var add_rowvec(const Var& x, const Var& b) {
  check_matrix(x, "add_rowvec");
  if (b.value().rank() != 1 || b.value().dim(0) != x.value().dim(1))
    throw std::invalid_argument("add_rowvec: bias shape " + b.value().shape_str() +
                                " does not match " + x.value().shape_str());
  const int rows = x.value().dim(0), cols = x.value().dim(1);
  Tensor out = x.value();
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) out[int64_t(r) * cols + c] += b.value()[c];
  return make(std::move(out), {x.node(), b.node()}, [rows, cols](Node& self) {
    Node* ix = self.inputs[0].get();
    Node* ib = self.inputs[1].get();
    if (ix->requires_grad) {
      Tensor& g = ix->ensure_grad();
      for (int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
    }
    if (ib->requires_grad) {
      Tensor& g = ib->ensure_grad();
      for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) g[c] += self.grad[int64_t(r) * cols + c];
    }
  });
}

Var scale(const Var& a, double s) {
  Tensor out = a.value();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] *= s;
  return make(std::move(out), {a.node()}, [s](Node& self) {
    Node* in = self.inputs[0].get();
    Tensor& g = in->ensure_grad();
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += s * self.grad[i];
  });
}

Var add_const(const Var& a, double s) {
  Tensor out = a.value();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] += s;
  return make(std::move(out), {a.node()}, [](Node& self) {
    Tensor& g = self.inputs[0]->ensure_grad();
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
  });
}

namespace {
template <class Fwd, class Bwd>
Var unary_op(const Var& a, Fwd fwd, Bwd bwd) {
  Tensor out = a.value();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = fwd(out[i]);
  return make(std::move(out), {a.node()}, [bwd](Node& self) {
    Node* in = self.inputs[0].get();
    Tensor& g = in->ensure_grad();
    for (int64_t i = 0; i < g.numel(); ++i)
      g[i] += self.grad[i] * bwd(in->value[i], self.value[i]);
  });
}
}  // namespace

Var relu(const Var& a) {
  return unary_op(
      a, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var sigmoid(const Var& a) {
  return unary_op(
      a,
      [](double v) { return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v))
                                     : std::exp(v) / (1.0 + std::exp(v)); },
      [](double, double y) { return y * (1.0 - y); });
}

Var tanh_op(const Var& a) {
  return unary_op(
      a, [](double v) { return std::tanh(v); },
      [](double, double y) { return 1.0 - y * y; });
}

Var exp_op(const Var& a) {
  return unary_op(
      a, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Var log_op(const Var& a) {
  return unary_op(
      a, [](double v) { return std::log(v); }, [](double x, double) { return 1.0 / x; });
}

Var square(const Var& a) {
  return unary_op(
      a, [](double v) { return v * v; }, [](double x, double) { return 2.0 * x; });
}

// --- linear algebra ------------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
  check_matrix(a, "matmul");
  check_matrix(b, "matmul");
  const int m = a.value().dim(0), k = a.value().dim(1);
  if (b.value().dim(0) != k)
    throw std::invalid_argument("matmul: inner dims disagree, " + a.value().shape_str() +
                                " x " + b.value().shape_str());
  const int n = b.value().dim(1);
  Tensor out({m, n});
  gemm_nn(a.value().data.data(), b.value().data.data(), out.data.data(), m, k, n, false);
  return make(std::move(out), {a.node(), b.node()}, [m, k, n](Node& self) {
    Node* ia = self.inputs[0].get();
    Node* ib = self.inputs[1].get();
    if (ia->requires_grad)  // dA = dY * B^T
      gemm_nt(self.grad.data.data(), ib->value.data.data(), ia->ensure_grad().data.data(),
              m, n, k, true);
    if (ib->requires_grad)  // dB = A^T * dY
      gemm_tn(ia->value.data.data(), self.grad.data.data(), ib->ensure_grad().data.data(),
              m, k, n, true);
  });
}

Var concat_cols(const Var& a, const Var& b) {
  check_matrix(a, "concat_cols");
  check_matrix(b, "concat_cols");
  const int rows = a.value().dim(0);
  if (b.value().dim(0) != rows) throw std::invalid_argument("concat_cols: row mismatch");
  const int na = a.value().dim(1), nb = b.value().dim(1);
  Tensor out({rows, na + nb});
  for (int r = 0; r < rows; ++r) {
    std::copy_n(&a.value()[int64_t(r) * na], na, &out[int64_t(r) * (na + nb)]);
    std::copy_n(&b.value()[int64_t(r) * nb], nb, &out[int64_t(r) * (na + nb) + na]);
  }
  return make(std::move(out), {a.node(), b.node()}, [rows, na, nb](Node& self) {
    Node* ia = self.inputs[0].get();
    Node* ib = self.inputs[1].get();
    for (int r = 0; r < rows; ++r) {
      const double* g = &self.grad[int64_t(r) * (na + nb)];
      if (ia->requires_grad) {
        Tensor& ga = ia->ensure_grad();
        for (int c = 0; c < na; ++c) ga[int64_t(r) * na + c] += g[c];
      }
      if (ib->requires_grad) {
        Tensor& gb = ib->ensure_grad();
        for (int c = 0; c < nb; ++c) gb[int64_t(r) * nb + c] += g[na + c];
      }
    }
  });
}

Var slice_cols(const Var& a, int begin, int len) {
  check_matrix(a, "slice_cols");
  const int rows = a.value().dim(0), cols = a.value().dim(1);
  if (begin < 0 || len <= 0 || begin + len > cols)
    throw std::invalid_argument("slice_cols: range out of bounds");
  Tensor out({rows, len});
  for (int r = 0; r < rows; ++r)
    std::copy_n(&a.value()[int64_t(r) * cols + begin], len, &out[int64_t(r) * len]);
  return make(std::move(out), {a.node()}, [rows, cols, begin, len](Node& self) {
    Tensor& g = self.inputs[0]->ensure_grad();
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < len; ++c)
        g[int64_t(r) * cols + begin + c] += self.grad[int64_t(r) * len + c];
  });
}

Var reshape(const Var& a, std::vector<int> shape) {
  if (shape_numel(shape) != a.value().numel())
    throw std::invalid_argument("reshape: element count mismatch");
  Tensor out;
  out.shape = std::move(shape);
  out.data = a.value().data;
  return make(std::move(out), {a.node()}, [](Node& self) {
    Tensor& g = self.inputs[0]->ensure_grad();
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
  });
}

Var sum(const Var& a) {
  double total = 0.0;
  for (double v : a.value().data) total += v;
  return make(Tensor::scalar(total), {a.node()}, [](Node& self) {
    Tensor& g = self.inputs[0]->ensure_grad();
    const double gs = self.grad[0];
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += gs;
  });
}

Var mean(const Var& a) {
  const int64_t n = a.value().numel();
  if (n == 0) throw std::invalid_argument("mean: empty tensor");
  return scale(sum(a), 1.0 / double(n));
}

// --- row-wise ops ---------------------------------------------------------------

Var softmax_rows(const Var& a) {
  check_matrix(a, "softmax_rows");
  const int rows = a.value().dim(0), cols = a.value().dim(1);
  Tensor out({rows, cols});
  for (int r = 0; r < rows; ++r) {
    const double* x = &a.value()[int64_t(r) * cols];
    double* y = &out[int64_t(r) * cols];
    double mx = x[0];
    for (int c = 1; c < cols; ++c) mx = std::max(mx, x[c]);
    double z = 0.0;
    for (int c = 0; c < cols; ++c) z += (y[c] = std::exp(x[c] - mx));
    for (int c = 0; c < cols; ++c) y[c] /= z;
  }
  return make(std::move(out), {a.node()}, [rows, cols](Node& self) {
    Tensor& g = self.inputs[0]->ensure_grad();
    for (int r = 0; r < rows; ++r) {
      const double* y = &self.value[int64_t(r) * cols];
      const double* gy = &self.grad[int64_t(r) * cols];
      double dot = 0.0;
      for (int c = 0; c < cols; ++c) dot += y[c] * gy[c];
      for (int c = 0; c < cols; ++c) g[int64_t(r) * cols + c] += y[c] * (gy[c] - dot);
    }
  });
}

Var log_softmax_rows(const Var& a) {
  check_matrix(a, "log_softmax_rows");
  const int rows = a.value().dim(0), cols = a.value().dim(1);
  Tensor out({rows, cols});
  for (int r = 0; r < rows; ++r) {
    const double* x = &a.value()[int64_t(r) * cols];
    double* y = &out[int64_t(r) * cols];
    double mx = x[0];
    for (int c = 1; c < cols; ++c) mx = std::max(mx, x[c]);
    double z = 0.0;
    for (int c = 0; c < cols; ++c) z += std::exp(x[c] - mx);
    const double lse = mx + std::log(z);
    for (int c = 0; c < cols; ++c) y[c] = x[c] - lse;
  }
  return make(std::move(out), {a.node()}, [rows, cols](Node& self) {
    Tensor& g = self.inputs[0]->ensure_grad();
    for (int r = 0; r < rows; ++r) {
      const double* y = &self.value[int64_t(r) * cols];
      const double* gy = &self.grad[int64_t(r) * cols];
      double gsum = 0.0;
      for (int c = 0; c < cols; ++c) gsum += gy[c];
      for (int c = 0; c < cols; ++c)
        g[int64_t(r) * cols + c] += gy[c] - std::exp(y[c]) * gsum;
    }
  });
}

Var pick_cols(const Var& m, const std::vector<int>& col_per_row) {
  check_matrix(m, "pick_cols");
  const int rows = m.value().dim(0), cols = m.value().dim(1);
  if (int(col_per_row.size()) != rows)
    throw std::invalid_argument("pick_cols: index count does not match rows");
  Tensor out({rows});
  for (int r = 0; r < rows; ++r) {
    const int c = col_per_row[size_t(r)];
    if (c < 0 || c >= cols) throw std::out_of_range("pick_cols: column index out of range");
    out[r] = m.value()[int64_t(r) * cols + c];
  }
  return make(std::move(out), {m.node()}, [cols, col_per_row](Node& self) {
    Tensor& g = self.inputs[0]->ensure_grad();
    for (size_t r = 0; r < col_per_row.size(); ++r)
      g[int64_t(r) * cols + col_per_row[r]] += self.grad[int64_t(r)];
  });
}

Var rows_dot(const Var& a, const Tensor& w) {
  check_matrix(a, "rows_dot");
  if (!a.value().same_shape(w)) throw std::invalid_argument("rows_dot: shape mismatch");
  const int rows = a.value().dim(0), cols = a.value().dim(1);
  Tensor out({rows});
  for (int r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (int c = 0; c < cols; ++c) acc += a.value()[int64_t(r) * cols + c] * w[int64_t(r) * cols + c];
    out[r] = acc;
  }
  return make(std::move(out), {a.node()}, [rows, cols, w](Node& self) {
    Tensor& g = self.inputs[0]->ensure_grad();
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c)
        g[int64_t(r) * cols + c] += self.grad[r] * w[int64_t(r) * cols + c];
  });
}

// --- losses ---------------------------------------------------------------------

Var mse_vs(const Var& pred, const Tensor& target) {
  if (!pred.value().same_shape(target)) throw std::invalid_argument("mse_vs: shape mismatch");
  Tensor out = pred.value();
  for (int64_t i = 0; i < out.numel(); ++i) {
    const double d = out[i] - target[i];
    out[i] = d * d;
  }
  return make(std::move(out), {pred.node()}, [target](Node& self) {
    Node* in = self.inputs[0].get();
    Tensor& g = in->ensure_grad();
    for (int64_t i = 0; i < g.numel(); ++i)
      g[i] += self.grad[i] * 2.0 * (in->value[i] - target[i]);
  });
}

Var bce_with_logits(const Var& logits, const Tensor& target) {
  if (!logits.value().same_shape(target))
    throw std::invalid_argument("bce_with_logits: shape mismatch");
  Tensor out = logits.value();
  for (int64_t i = 0; i < out.numel(); ++i) {
    const double x = out[i], t = target[i];
    out[i] = std::max(x, 0.0) - x * t + std::log1p(std::exp(-std::abs(x)));
  }
  return make(std::move(out), {logits.node()}, [target](Node& self) {
    Node* in = self.inputs[0].get();
    Tensor& g = in->ensure_grad();
    for (int64_t i = 0; i < g.numel(); ++i) {
      const double x = in->value[i];
      const double s = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
      g[i] += self.grad[i] * (s - target[i]);
    }
  });
}

// --- convolutions ----------------------------------------------------------------

namespace {

void check_conv_args(const Var& x, const Var& w, const Var& b, int stride, const char* op) {
  if (x.value().rank() != 4) throw std::invalid_argument(std::string(op) + ": input must be [B,C,H,W]");
  if (w.value().rank() != 4) throw std::invalid_argument(std::string(op) + ": weight must be rank 4");
  if (b.value().rank() != 1) throw std::invalid_argument(std::string(op) + ": bias must be rank 1");
  if (stride < 1) throw std::invalid_argument(std::string(op) + ": stride must be >= 1");
}

}  // namespace

namespace detail {

void conv2d_forward(const double* x, const double* w, const double* b, double* y,
                    int B, int C, int H, int W, int OC, int K, int stride, int OH, int OW) {
  for (int n = 0; n < B; ++n)
    for (int oc = 0; oc < OC; ++oc) {
      double* yb = y + ((int64_t(n) * OC + oc) * OH) * OW;
      for (int64_t i = 0; i < int64_t(OH) * OW; ++i) yb[i] = b[oc];
      for (int c = 0; c < C; ++c) {
        const double* wb = w + ((int64_t(oc) * C + c) * K) * K;
        const double* xb = x + ((int64_t(n) * C + c) * H) * W;
        for (int ky = 0; ky < K; ++ky)
          for (int kx = 0; kx < K; ++kx) {
            const double wv = wb[ky * K + kx];
            for (int oy = 0; oy < OH; ++oy) {
              const double* xr = xb + int64_t(oy * stride + ky) * W + kx;
              double* yr = yb + int64_t(oy) * OW;
              for (int ox = 0; ox < OW; ++ox) yr[ox] += wv * xr[int64_t(ox) * stride];
            }
          }
      }
    }
}

void conv2d_transpose_forward(const double* x, const double* w, const double* b, double* y,
                              int B, int C, int H, int W, int OC, int K, int stride,
                              int OH, int OW) {
  for (int n = 0; n < B; ++n) {
    for (int oc = 0; oc < OC; ++oc) {
      double* yb = y + ((int64_t(n) * OC + oc) * OH) * OW;
      for (int64_t i = 0; i < int64_t(OH) * OW; ++i) yb[i] = b[oc];
    }
    for (int c = 0; c < C; ++c) {
      const double* xb = x + ((int64_t(n) * C + c) * H) * W;
      for (int oc = 0; oc < OC; ++oc) {
        const double* wb = w + ((int64_t(c) * OC + oc) * K) * K;
        double* yb = y + ((int64_t(n) * OC + oc) * OH) * OW;
        for (int ky = 0; ky < K; ++ky)
          for (int kx = 0; kx < K; ++kx) {
            const double wv = wb[ky * K + kx];
            for (int iy = 0; iy < H; ++iy) {
              const double* xr = xb + int64_t(iy) * W;
              double* yr = yb + int64_t(iy * stride + ky) * OW + kx;
              for (int ix = 0; ix < W; ++ix) yr[int64_t(ix) * stride] += wv * xr[ix];
            }
          }
      }
    }
  }
}

}  // namespace detail

Var conv2d(const Var& x, const Var& w, const Var& b, int stride) {
  check_conv_args(x, w, b, stride, "conv2d");
  const int B = x.value().dim(0), C = x.value().dim(1), H = x.value().dim(2), W = x.value().dim(3);
  const int OC = w.value().dim(0), K = w.value().dim(2);
  if (w.value().dim(1) != C || w.value().dim(3) != K || b.value().dim(0) != OC)
    throw std::invalid_argument("conv2d: weight/bias shapes inconsistent with input");
  if (K > H || K > W)
    throw std::invalid_argument("conv2d: kernel " + std::to_string(K) + " larger than input " +
                                x.value().shape_str());
  const int OH = (H - K) / stride + 1, OW = (W - K) / stride + 1;
  Tensor out({B, OC, OH, OW});
  detail::conv2d_forward(x.value().data.data(), w.value().data.data(), b.value().data.data(),
                         out.data.data(), B, C, H, W, OC, K, stride, OH, OW);
  return make(std::move(out), {x.node(), w.node(), b.node()},
              [B, C, H, W, OC, K, stride, OH, OW](Node& self) {
    Node* ix = self.inputs[0].get();
    Node* iw = self.inputs[1].get();
    Node* ib = self.inputs[2].get();
    const double* g = self.grad.data.data();
    if (ib->requires_grad) {
      Tensor& gb = ib->ensure_grad();
      for (int n = 0; n < B; ++n)
        for (int oc = 0; oc < OC; ++oc) {
          const double* gr = g + ((int64_t(n) * OC + oc) * OH) * OW;
          double acc = 0.0;
          for (int64_t i = 0; i < int64_t(OH) * OW; ++i) acc += gr[i];
          gb[oc] += acc;
        }
    }
    if (iw->requires_grad) {
      Tensor& gw = iw->ensure_grad();
      for (int n = 0; n < B; ++n)
        for (int oc = 0; oc < OC; ++oc) {
          const double* gb_ = g + ((int64_t(n) * OC + oc) * OH) * OW;
          for (int c = 0; c < C; ++c) {
            const double* xb = ix->value.data.data() + ((int64_t(n) * C + c) * H) * W;
            for (int ky = 0; ky < K; ++ky)
              for (int kx = 0; kx < K; ++kx) {
                double acc = 0.0;
                for (int oy = 0; oy < OH; ++oy) {
                  const double* xr = xb + int64_t(oy * stride + ky) * W + kx;
                  const double* gr = gb_ + int64_t(oy) * OW;
                  for (int ox = 0; ox < OW; ++ox) acc += gr[ox] * xr[int64_t(ox) * stride];
                }
                gw[((int64_t(oc) * C + c) * K + ky) * K + kx] += acc;
              }
          }
        }
    }
    if (ix->requires_grad) {
      Tensor& gx = ix->ensure_grad();
      for (int n = 0; n < B; ++n)
        for (int oc = 0; oc < OC; ++oc) {
          const double* gb_ = g + ((int64_t(n) * OC + oc) * OH) * OW;
          for (int c = 0; c < C; ++c) {
            const double* wb = iw->value.data.data() + ((int64_t(oc) * C + c) * K) * K;
            double* gxb = gx.data.data() + ((int64_t(n) * C + c) * H) * W;
            for (int ky = 0; ky < K; ++ky)
              for (int kx = 0; kx < K; ++kx) {
                const double wv = wb[ky * K + kx];
                for (int oy = 0; oy < OH; ++oy) {
                  const double* gr = gb_ + int64_t(oy) * OW;
                  double* gxr = gxb + int64_t(oy * stride + ky) * W + kx;
                  for (int ox = 0; ox < OW; ++ox) gxr[int64_t(ox) * stride] += wv * gr[ox];
                }
              }
          }
        }
    }
  });
}

Var conv2d_transpose(const Var& x, const Var& w, const Var& b, int stride,
                     int out_pad_h, int out_pad_w) {
  check_conv_args(x, w, b, stride, "conv2d_transpose");
  const int B = x.value().dim(0), C = x.value().dim(1), H = x.value().dim(2), W = x.value().dim(3);
  const int OC = w.value().dim(1), K = w.value().dim(2);
  if (w.value().dim(0) != C || w.value().dim(3) != K || b.value().dim(0) != OC)
    throw std::invalid_argument("conv2d_transpose: weight/bias shapes inconsistent with input");
  if (out_pad_h < 0 || out_pad_w < 0 || out_pad_h >= stride || out_pad_w >= stride)
    throw std::invalid_argument("conv2d_transpose: output padding must be in [0, stride)");
  const int OH = (H - 1) * stride + K + out_pad_h;
  const int OW = (W - 1) * stride + K + out_pad_w;
  Tensor out({B, OC, OH, OW});
  detail::conv2d_transpose_forward(x.value().data.data(), w.value().data.data(),
                                   b.value().data.data(), out.data.data(),
                                   B, C, H, W, OC, K, stride, OH, OW);
  return make(std::move(out), {x.node(), w.node(), b.node()},
              [B, C, H, W, OC, K, stride, OH, OW](Node& self) {
    Node* ix = self.inputs[0].get();
    Node* iw = self.inputs[1].get();
    Node* ib = self.inputs[2].get();
    const double* g = self.grad.data.data();
    if (ib->requires_grad) {
      Tensor& gb = ib->ensure_grad();
      for (int n = 0; n < B; ++n)
        for (int oc = 0; oc < OC; ++oc) {
          const double* gr = g + ((int64_t(n) * OC + oc) * OH) * OW;
          double acc = 0.0;
          for (int64_t i = 0; i < int64_t(OH) * OW; ++i) acc += gr[i];
          gb[oc] += acc;
        }
    }
    for (int n = 0; n < B; ++n)
      for (int c = 0; c < C; ++c) {
        const double* xb = ix->value.data.data() + ((int64_t(n) * C + c) * H) * W;
        double* gxb = ix->requires_grad
                          ? ix->ensure_grad().data.data() + ((int64_t(n) * C + c) * H) * W
                          : nullptr;
        for (int oc = 0; oc < OC; ++oc) {
          const double* gb_ = g + ((int64_t(n) * OC + oc) * OH) * OW;
          const double* wb = iw->value.data.data() + ((int64_t(c) * OC + oc) * K) * K;
          double* gwb = iw->requires_grad
                            ? iw->ensure_grad().data.data() + ((int64_t(c) * OC + oc) * K) * K
                            : nullptr;
          for (int ky = 0; ky < K; ++ky)
            for (int kx = 0; kx < K; ++kx) {
              const double wv = wb[ky * K + kx];
              double wacc = 0.0;
              for (int iy = 0; iy < H; ++iy) {
                const double* xr = xb + int64_t(iy) * W;
                const double* gr = gb_ + int64_t(iy * stride + ky) * OW + kx;
                double* gxr = gxb ? gxb + int64_t(iy) * W : nullptr;
                for (int ix2 = 0; ix2 < W; ++ix2) {
                  const double gv = gr[int64_t(ix2) * stride];
                  wacc += gv * xr[ix2];
                  if (gxr) gxr[ix2] += wv * gv;
                }
              }
              if (gwb) gwb[ky * K + kx] += wacc;
            }
        }
      }
  });
}

namespace {
// Shared by tempered_xent for student and teacher rows; using the identical
// code path guarantees bitwise-equal results for bitwise-equal inputs.
void log_softmax_row_scaled(const double* x, double* y, int n, double inv_tau) {
  double mx = x[0] * inv_tau;
  for (int i = 1; i < n; ++i) mx = std::max(mx, x[i] * inv_tau);
  double z = 0.0;
  for (int i = 0; i < n; ++i) z += std::exp(x[i] * inv_tau - mx);
  const double lse = mx + std::log(z);
  for (int i = 0; i < n; ++i) y[i] = x[i] * inv_tau - lse;
}
}  // namespace

Var tempered_xent(const Var& student_logits, const Tensor& teacher_logits, double tau) {
  check_matrix(student_logits, "tempered_xent");
  if (!(tau > 0.0)) throw std::invalid_argument("tempered_xent: tau must be > 0");
  if (!student_logits.value().same_shape(teacher_logits))
    throw std::invalid_argument("tempered_xent: teacher shape mismatch");
  const int rows = student_logits.value().dim(0), cols = student_logits.value().dim(1);
  const double inv_tau = 1.0 / tau;
  Tensor out({rows});
  Tensor lt({rows, cols});  // teacher log-softmax, reused in backward
  std::vector<double> ls(static_cast<size_t>(cols));
  for (int r = 0; r < rows; ++r) {
    log_softmax_row_scaled(&teacher_logits[int64_t(r) * cols], &lt[int64_t(r) * cols], cols,
                           inv_tau);
    log_softmax_row_scaled(&student_logits.value()[int64_t(r) * cols], ls.data(), cols, inv_tau);
    double acc = 0.0;
    for (int c = 0; c < cols; ++c) acc -= std::exp(lt[int64_t(r) * cols + c]) * ls[size_t(c)];
    out[r] = acc;
  }
  return make(std::move(out), {student_logits.node()},
              [rows, cols, inv_tau, lt = std::move(lt)](Node& self) {
    Node* in = self.inputs[0].get();
    Tensor& g = in->ensure_grad();
    std::vector<double> ls(static_cast<size_t>(cols));
    for (int r = 0; r < rows; ++r) {
      const double gb = self.grad[r];
      if (gb == 0.0) continue;
      log_softmax_row_scaled(&in->value[int64_t(r) * cols], ls.data(), cols, inv_tau);
      for (int c = 0; c < cols; ++c)
        g[int64_t(r) * cols + c] +=
            gb * (std::exp(ls[size_t(c)]) - std::exp(lt[int64_t(r) * cols + c])) * inv_tau;
    }
  });
}

// --- mixture density NLL -----------------------------------------------------------

Var mdn_nll(const Var& pi_raw, const Var& mu, const Var& log_sigma,
            const Tensor& target, int mixtures, int latent_dim) {
  const int G = mixtures, L = latent_dim;
  if (G < 1 || L < 1) throw std::invalid_argument("mdn_nll: mixtures and latent_dim must be >= 1");
  check_matrix(pi_raw, "mdn_nll");
  const int B = pi_raw.value().dim(0);
  auto check = [&](const Var& v, const char* name) {
    if (v.value().rank() != 2 || v.value().dim(0) != B || v.value().dim(1) != G * L)
      throw std::invalid_argument(std::string("mdn_nll: ") + name + " must be [B, G*L]");
  };
  check(pi_raw, "pi_raw");
  check(mu, "mu");
  check(log_sigma, "log_sigma");
  if (target.rank() != 2 || target.dim(0) != B || target.dim(1) != L)
    throw std::invalid_argument("mdn_nll: target must be [B, L]");

  Tensor out({B});
  Tensor resp({B, G * L});   // posterior responsibilities p_g per (b, i)
  Tensor wsoft({B, G * L});  // softmax of pi_raw over g per (b, i)
  std::vector<double> lognorm(static_cast<size_t>(G));
  for (int bi = 0; bi < B; ++bi) {
    const double* pr = &pi_raw.value()[int64_t(bi) * G * L];
    const double* mr = &mu.value()[int64_t(bi) * G * L];
    const double* sr = &log_sigma.value()[int64_t(bi) * G * L];
    double total = 0.0;
    for (int i = 0; i < L; ++i) {
      double mx = -1e300;
      for (int g = 0; g < G; ++g) mx = std::max(mx, pr[g * L + i]);
      double z = 0.0;
      for (int g = 0; g < G; ++g) z += std::exp(pr[g * L + i] - mx);
      const double lse = mx + std::log(z);
      double mx2 = -1e300;
      for (int g = 0; g < G; ++g) {
        const int idx = g * L + i;
        wsoft[int64_t(bi) * G * L + idx] = std::exp(pr[idx] - lse);
        const double d = (target[int64_t(bi) * L + i] - mr[idx]) * std::exp(-sr[idx]);
        lognorm[size_t(g)] = (pr[idx] - lse) - sr[idx] - kHalfLog2Pi - 0.5 * d * d;
        mx2 = std::max(mx2, lognorm[size_t(g)]);
      }
      double z2 = 0.0;
      for (int g = 0; g < G; ++g) z2 += std::exp(lognorm[size_t(g)] - mx2);
      const double li = mx2 + std::log(z2);
      for (int g = 0; g < G; ++g)
        resp[int64_t(bi) * G * L + g * L + i] = std::exp(lognorm[size_t(g)] - mx2) / z2;
      total += -li;
    }
    out[bi] = total / double(L);
  }

  return make(std::move(out), {pi_raw.node(), mu.node(), log_sigma.node()},
              [B, G, L, target, resp = std::move(resp), wsoft = std::move(wsoft)](Node& self) {
    Node* ipi = self.inputs[0].get();
    Node* imu = self.inputs[1].get();
    Node* ils = self.inputs[2].get();
    for (int bi = 0; bi < B; ++bi) {
      const double gb = self.grad[bi] / double(L);
      if (gb == 0.0) continue;
      for (int i = 0; i < L; ++i)
        for (int g = 0; g < G; ++g) {
          const int64_t idx = int64_t(bi) * G * L + g * L + i;
          const double p = resp[idx];
          if (ipi->requires_grad)
            ipi->ensure_grad()[idx] += gb * (wsoft[idx] - p);
          if (imu->requires_grad || ils->requires_grad) {
            const double inv_s = std::exp(-ils->value[idx]);
            const double d = (target[int64_t(bi) * L + i] - imu->value[idx]) * inv_s;
            if (imu->requires_grad)
              imu->ensure_grad()[idx] += gb * (-p) * d * inv_s;
            if (ils->requires_grad)
              ils->ensure_grad()[idx] += gb * p * (1.0 - d * d);
          }
        }
    }
  });
}

}  // namespace prwm::ag
