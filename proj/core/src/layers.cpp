#include "prwm/layers.hpp"

#include <cmath>
#include <stdexcept>

namespace prwm::ag::detail {
// defined in autodiff.cpp, reused by the raw (tape-free) paths
void conv2d_forward(const double* x, const double* w, const double* b, double* y,
                    int B, int C, int H, int W, int OC, int K, int stride, int OH, int OW);
void conv2d_transpose_forward(const double* x, const double* w, const double* b, double* y,
                              int B, int C, int H, int W, int OC, int K, int stride,
                              int OH, int OW);
}  // namespace prwm::ag::detail

namespace prwm::nn {

void Params::add(std::string name, const Var& v) {
  if (find(name)) throw std::invalid_argument("params: duplicate name '" + name + "'");
  items.emplace_back(std::move(name), v);
}

Var* Params::find(std::string_view name) {
  for (auto& [n, v] : items)
    if (n == name) return &v;
  return nullptr;
}

const Var* Params::find(std::string_view name) const {
  for (auto& [n, v] : items)
    if (n == name) return &v;
  return nullptr;
}

void Params::zero_grad() {
  for (auto& [n, v] : items) {
    Tensor& g = v.grad();
    std::fill(g.data.begin(), g.data.end(), 0.0);
  }
}

int64_t Params::scalar_count() const {
  int64_t total = 0;
  for (auto& [n, v] : items) total += v.value().numel();
  return total;
}

Tensor uniform_init(std::vector<int> shape, int fan_in, Rng& rng) {
  if (fan_in < 1) throw std::invalid_argument("uniform_init: fan_in must be >= 1");
  Tensor t(std::move(shape));
  const double bound = 1.0 / std::sqrt(double(fan_in));
  for (auto& v : t.data) v = rng.uniform(-bound, bound);
  return t;
}

// --- Dense --------------------------------------------------------------------

Dense::Dense(int in_, int out_, Rng& rng) : in(in_), out(out_) {
  w = Var::leaf(uniform_init({in, out}, in, rng), true);
  b = Var::leaf(uniform_init({out}, in, rng), true);
}

Var Dense::operator()(const Var& x) const { return ag::add_rowvec(ag::matmul(x, w), b); }

void Dense::forward(const double* x, double* y, int batch) const {
  // Bias is added after the product accumulation, in the same order the graph
  // path (matmul then add_rowvec) rounds, so both paths agree bitwise. The
  // distillation no-op for an unchanged policy depends on that equality.
  gemm_nn(x, w.value().data.data(), y, batch, in, out, false);
  for (int r = 0; r < batch; ++r)
    for (int c = 0; c < out; ++c) y[int64_t(r) * out + c] += b.value()[c];
}

void Dense::register_params(Params& p, const std::string& prefix) {
  p.add(prefix + ".w", w);
  p.add(prefix + ".b", b);
}

// --- Conv2d -------------------------------------------------------------------

Conv2d::Conv2d(int in_ch_, int out_ch_, int k_, int stride_, Rng& rng)
    : in_ch(in_ch_), out_ch(out_ch_), k(k_), stride(stride_) {
  const int fan_in = in_ch * k * k;
  w = Var::leaf(uniform_init({out_ch, in_ch, k, k}, fan_in, rng), true);
  b = Var::leaf(uniform_init({out_ch}, fan_in, rng), true);
}

std::pair<int, int> Conv2d::out_hw(int h, int w, int k, int stride) {
  if (k > h || k > w)
    throw std::invalid_argument("conv2d: kernel " + std::to_string(k) + " larger than input " +
                                std::to_string(h) + "x" + std::to_string(w));
  return {(h - k) / stride + 1, (w - k) / stride + 1};
}

Var Conv2d::operator()(const Var& x) const { return ag::conv2d(x, w, b, stride); }

Tensor Conv2d::forward(const Tensor& x) const {
  const int B = x.dim(0), H = x.dim(2), W = x.dim(3);
  auto [oh, ow] = out_hw(H, W, k, stride);
  Tensor y({B, out_ch, oh, ow});
  ag::detail::conv2d_forward(x.data.data(), w.value().data.data(), b.value().data.data(),
                             y.data.data(), B, in_ch, H, W, out_ch, k, stride, oh, ow);
  return y;
}

void Conv2d::register_params(Params& p, const std::string& prefix) {
  p.add(prefix + ".w", w);
  p.add(prefix + ".b", b);
}

// --- ConvTranspose2d ------------------------------------------------------------

ConvTranspose2d::ConvTranspose2d(int in_ch_, int out_ch_, int k_, int stride_,
                                 int out_pad_h_, int out_pad_w_, Rng& rng)
    : in_ch(in_ch_), out_ch(out_ch_), k(k_), stride(stride_),
      out_pad_h(out_pad_h_), out_pad_w(out_pad_w_) {
  const int fan_in = in_ch * k * k;
  w = Var::leaf(uniform_init({in_ch, out_ch, k, k}, fan_in, rng), true);
  b = Var::leaf(uniform_init({out_ch}, fan_in, rng), true);
}

Var ConvTranspose2d::operator()(const Var& x) const {
  return ag::conv2d_transpose(x, w, b, stride, out_pad_h, out_pad_w);
}

Tensor ConvTranspose2d::forward(const Tensor& x) const {
  const int B = x.dim(0), H = x.dim(2), W = x.dim(3);
  const int oh = (H - 1) * stride + k + out_pad_h;
  const int ow = (W - 1) * stride + k + out_pad_w;
  Tensor y({B, out_ch, oh, ow});
  ag::detail::conv2d_transpose_forward(x.data.data(), w.value().data.data(),
                                       b.value().data.data(), y.data.data(),
                                       B, in_ch, H, W, out_ch, k, stride, oh, ow);
  return y;
}

void ConvTranspose2d::register_params(Params& p, const std::string& prefix) {
  p.add(prefix + ".w", w);
  p.add(prefix + ".b", b);
}

// --- LstmCell -------------------------------------------------------------------

LstmCell::LstmCell(int input_size_, int hidden_, Rng& rng)
    : input_size(input_size_), hidden(hidden_) {
  const int fan_in = input_size + hidden;
  w = Var::leaf(uniform_init({fan_in, 4 * hidden}, fan_in, rng), true);
  b = Var::leaf(uniform_init({4 * hidden}, fan_in, rng), true);
}

std::pair<Var, Var> LstmCell::operator()(const Var& x, const Var& h, const Var& c) const {
  using namespace ag;
  Var gates = add_rowvec(matmul(concat_cols(x, h), w), b);
  Var gi = sigmoid(slice_cols(gates, 0, hidden));
  Var gf = sigmoid(slice_cols(gates, hidden, hidden));
  Var gg = tanh_op(slice_cols(gates, 2 * hidden, hidden));
  Var go = sigmoid(slice_cols(gates, 3 * hidden, hidden));
  Var c2 = add(mul(gf, c), mul(gi, gg));
  Var h2 = mul(go, tanh_op(c2));
  return {h2, c2};
}

void LstmCell::step(const double* x, double* h, double* c, int batch) const {
  thread_local std::vector<double> gates;
  gates.assign(size_t(batch) * 4 * hidden, 0.0);
  const int H4 = 4 * hidden;
  for (int r = 0; r < batch; ++r)
    for (int j = 0; j < H4; ++j) gates[size_t(r) * H4 + j] = b.value()[j];
  // gates += x * W[:input] + h * W[input:]
  gemm_nn(x, w.value().data.data(), gates.data(), batch, input_size, H4, true);
  gemm_nn(h, w.value().data.data() + int64_t(input_size) * H4, gates.data(), batch, hidden, H4, true);
  auto sig = [](double v) {
    return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  };
  for (int r = 0; r < batch; ++r) {
    const double* g = &gates[size_t(r) * H4];
    double* hr = h + int64_t(r) * hidden;
    double* cr = c + int64_t(r) * hidden;
    for (int j = 0; j < hidden; ++j) {
      const double gi = sig(g[j]);
      const double gf = sig(g[hidden + j]);
      const double gg = std::tanh(g[2 * hidden + j]);
      const double go = sig(g[3 * hidden + j]);
      cr[j] = gf * cr[j] + gi * gg;
      hr[j] = go * std::tanh(cr[j]);
    }
  }
}

void LstmCell::register_params(Params& p, const std::string& prefix) {
  p.add(prefix + ".w", w);
  p.add(prefix + ".b", b);
}

}  // namespace prwm::nn
