#pragma once
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "prwm/autodiff.hpp"
#include "prwm/rng.hpp"
#include "prwm/tensor.hpp"

namespace prwm::nn {

using ag::Var;

// Ordered name -> parameter registry. Iteration order is insertion order, so
// optimizer updates and checkpoints are deterministic.
struct Params {
  std::vector<std::pair<std::string, Var>> items;

  void add(std::string name, const Var& v);
  Var* find(std::string_view name);
  const Var* find(std::string_view name) const;
  void zero_grad();
  int64_t scalar_count() const;
};

// U[-1/sqrt(fan_in), +1/sqrt(fan_in)] initialization used by every layer.
Tensor uniform_init(std::vector<int> shape, int fan_in, Rng& rng);

struct Dense {
  Var w;  // [in, out]
  Var b;  // [out]
  int in = 0, out = 0;

  Dense() = default;
  Dense(int in, int out, Rng& rng);
  Var operator()(const Var& x) const;                          // [B,in] -> [B,out]
  void forward(const double* x, double* y, int batch) const;   // raw, no tape
  void register_params(Params& p, const std::string& prefix);
};

struct Conv2d {
  Var w;  // [out_ch, in_ch, k, k]
  Var b;  // [out_ch]
  int in_ch = 0, out_ch = 0, k = 0, stride = 1;

  Conv2d() = default;
  Conv2d(int in_ch, int out_ch, int k, int stride, Rng& rng);
  Var operator()(const Var& x) const;      // [B,C,H,W]
  Tensor forward(const Tensor& x) const;   // raw
  static std::pair<int, int> out_hw(int h, int w, int k, int stride);
  void register_params(Params& p, const std::string& prefix);
};

struct ConvTranspose2d {
  Var w;  // [in_ch, out_ch, k, k]
  Var b;  // [out_ch]
  int in_ch = 0, out_ch = 0, k = 0, stride = 1, out_pad_h = 0, out_pad_w = 0;

  ConvTranspose2d() = default;
  ConvTranspose2d(int in_ch, int out_ch, int k, int stride, int out_pad_h, int out_pad_w, Rng& rng);
  Var operator()(const Var& x) const;
  Tensor forward(const Tensor& x) const;
  void register_params(Params& p, const std::string& prefix);
};

// Recurrent state threaded through sequence models.
struct LstmState {
  Tensor h;  // [B, hidden]
  Tensor c;  // [B, hidden]
  static LstmState zeros(int batch, int hidden) { return {Tensor({batch, hidden}), Tensor({batch, hidden})}; }
};

struct LstmCell {
  Var w;  // [input+hidden, 4*hidden], gate column order: input, forget, cell, output
  Var b;  // [4*hidden]
  int input_size = 0, hidden = 0;

  LstmCell() = default;
  LstmCell(int input_size, int hidden, Rng& rng);
  // Graph step: returns (h', c') for x [B,input], h/c [B,hidden].
  std::pair<Var, Var> operator()(const Var& x, const Var& h, const Var& c) const;
  // Raw step: updates h and c in place.
  void step(const double* x, double* h, double* c, int batch) const;
  void register_params(Params& p, const std::string& prefix);
};

}  // namespace prwm::nn
