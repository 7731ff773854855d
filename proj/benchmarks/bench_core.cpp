#include <benchmark/benchmark.h>

#include "prwm/autodiff.hpp"
#include "prwm/layers.hpp"
#include "prwm/rng.hpp"
#include "prwm/tensor.hpp"

using namespace prwm;

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.data) v = rng.normal();
  return t;
}

void BM_Gemm(benchmark::State& state) {
  const int n = int(state.range(0));
  Rng rng(7);
  Tensor a = random_tensor({n, n}, rng);
  Tensor b = random_tensor({n, n}, rng);
  Tensor c({n, n});
  for (auto _ : state) {
    gemm_nn(a.data.data(), b.data.data(), c.data.data(), n, n, n, false);
    benchmark::DoNotOptimize(c.data.data());
  }
  state.SetItemsProcessed(state.iterations() * int64_t(n) * n * n);
}
BENCHMARK(BM_Gemm)->Arg(32)->Arg(128)->Arg(256);

void BM_LstmStep(benchmark::State& state) {
  const int hidden = int(state.range(0));
  const int input = 8;
  Rng rng(11);
  nn::LstmCell cell(input, hidden, rng);
  nn::LstmState st = nn::LstmState::zeros(16, hidden);
  Tensor x = random_tensor({16, input}, rng);
  for (auto _ : state) {
    cell.step(x.data.data(), st.h.data.data(), st.c.data.data(), 16);
    benchmark::DoNotOptimize(st.h.data.data());
  }
  state.SetItemsProcessed(state.iterations() * 16);
}
BENCHMARK(BM_LstmStep)->Arg(64)->Arg(256);

void BM_ConvForward(benchmark::State& state) {
  Rng rng(13);
  nn::Conv2d conv(1, 16, 4, 2, rng);
  Tensor x = random_tensor({16, 1, 32, 32}, rng);
  for (auto _ : state) {
    Tensor y = conv.forward(x);
    benchmark::DoNotOptimize(y.data.data());
  }
}
BENCHMARK(BM_ConvForward);

void BM_ConvBackward(benchmark::State& state) {
  Rng rng(17);
  Tensor xt = random_tensor({8, 1, 32, 32}, rng);
  Tensor wt = random_tensor({16, 1, 4, 4}, rng);
  Tensor bt({16});
  for (auto _ : state) {
    ag::Var x = ag::Var::leaf(xt, true);
    ag::Var w = ag::Var::leaf(wt, true);
    ag::Var b = ag::Var::leaf(bt, true);
    ag::Var loss = ag::sum(ag::square(ag::conv2d(x, w, b, 2)));
    ag::backward(loss);
    benchmark::DoNotOptimize(w.grad().data.data());
  }
}
BENCHMARK(BM_ConvBackward);

void BM_MdnNll(benchmark::State& state) {
  const int B = 16, G = 5, L = 8;
  Rng rng(19);
  Tensor pi = random_tensor({B, G * L}, rng);
  Tensor mu = random_tensor({B, G * L}, rng);
  Tensor ls = random_tensor({B, G * L}, rng);
  Tensor z = random_tensor({B, L}, rng);
  for (auto _ : state) {
    ag::Var p = ag::Var::leaf(pi, true);
    ag::Var m = ag::Var::leaf(mu, true);
    ag::Var s = ag::Var::leaf(ls, true);
    ag::Var loss = ag::sum(ag::mdn_nll(p, m, s, z, G, L));
    ag::backward(loss);
    benchmark::DoNotOptimize(m.grad().data.data());
  }
  state.SetItemsProcessed(state.iterations() * B);
}
BENCHMARK(BM_MdnNll);

}  // namespace

BENCHMARK_MAIN();
