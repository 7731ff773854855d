#pragma once
#include <functional>
#include <memory>
#include <vector>

#include "prwm/tensor.hpp"

namespace prwm::ag {

// One tape node: a value plus the closure that scatters its gradient into its
// inputs. Graphs are rebuilt per forward pass and freed when the last Var
// referencing them goes out of scope; parameters are long-lived leaves.
struct Node {
  Tensor value;
  Tensor grad;  // allocated lazily, same shape as value
  bool requires_grad = false;
  bool in_topo = false;  // scratch flag owned by backward()
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backprop;

  Tensor& ensure_grad() {
    if (grad.data.empty()) grad = Tensor(value.shape);
    return grad;
  }
};
using NodePtr = std::shared_ptr<Node>;

class Var {
 public:
  Var() = default;
  explicit Var(NodePtr n) : node_(std::move(n)) {}
  static Var leaf(Tensor value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  Tensor& value() { return node_->value; }
  Tensor& grad() const { return node_->ensure_grad(); }
  bool requires_grad() const { return node_->requires_grad; }
  const NodePtr& node() const { return node_; }

 private:
  NodePtr node_;
};

// Reverse-mode accumulation from a scalar loss (shape [1]). Gradients
// accumulate (+=) into leaves; callers zero parameter grads between steps.
void backward(const Var& loss);

// --- elementwise / shape ops -------------------------------------------------
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var add_rowvec(const Var& x, const Var& b);  // [B,N] + [N]
Var scale(const Var& a, double s);
Var add_const(const Var& a, double s);
Var relu(const Var& a);
Var sigmoid(const Var& a);
Var tanh_op(const Var& a);
Var exp_op(const Var& a);
Var log_op(const Var& a);
Var square(const Var& a);
Var matmul(const Var& a, const Var& b);           // [M,K]x[K,N]
Var concat_cols(const Var& a, const Var& b);      // [B,N1],[B,N2] -> [B,N1+N2]
Var slice_cols(const Var& a, int begin, int len); // [B,N] -> [B,len]
Var reshape(const Var& a, std::vector<int> shape);
Var sum(const Var& a);   // -> [1]
Var mean(const Var& a);  // -> [1]

// --- row-wise reductions over the last axis of a [B,N] matrix ----------------
Var softmax_rows(const Var& a);
Var log_softmax_rows(const Var& a);
Var pick_cols(const Var& m, const std::vector<int>& col_per_row);  // -> [B]
Var rows_dot(const Var& a, const Tensor& w);                       // Σ_j a⊙w -> [B]

// --- losses against constant targets ------------------------------------------
Var mse_vs(const Var& pred, const Tensor& target);         // elementwise (p-t)^2
Var bce_with_logits(const Var& logits, const Tensor& target);

// --- structured ops -----------------------------------------------------------
// Valid (no padding) convolution, x [B,C,H,W], w [OC,C,K,K], b [OC].
Var conv2d(const Var& x, const Var& w, const Var& b, int stride);
// Transposed convolution, x [B,C,H,W], w [C,OC,K,K], output H' = (H-1)*stride + K + out_pad.
Var conv2d_transpose(const Var& x, const Var& w, const Var& b, int stride,
                     int out_pad_h, int out_pad_w);
// Mixture-density negative log likelihood per batch row, averaged over latent
// dimensions. pi_raw/mu/log_sigma are [B, G*L] laid out component-major
// (index g*L + i); target is [B, L]. Returns [B].
Var mdn_nll(const Var& pi_raw, const Var& mu, const Var& log_sigma,
            const Tensor& target, int mixtures, int latent_dim);
// Temperature-softened cross entropy against constant teacher logits, per
// batch row: -sum_a softmax(teacher/tau)_a * log softmax(student/tau)_a.
// Backward evaluates (softmax(student/tau) - softmax(teacher/tau)) / tau with
// one shared routine, so the gradient is exactly zero (bitwise) whenever
// student and teacher logits are bit-identical. Returns [B].
Var tempered_xent(const Var& student_logits, const Tensor& teacher_logits, double tau);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }

}  // namespace prwm::ag
