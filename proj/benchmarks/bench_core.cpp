#include <benchmark/benchmark.h>

#include "hquic/codec.hpp"
#include "hquic/nn.hpp"
#include "hquic/range_coder.hpp"
#include "hquic/rng.hpp"

using namespace hquic;

namespace {

Tensor random_map(std::vector<int> shape, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform() * 2.0 - 1.0;
  return t;
}

void BM_HaarDwt(benchmark::State& state) {
  Tensor f = random_map({1, 16, 64, 64}, 1);
  for (auto _ : state) {
    ad::Graph g;
    auto bands = ad::haar_dwt(g, g.input(f));
    benchmark::DoNotOptimize(g.tape.val(bands[0]).data());
  }
}
BENCHMARK(BM_HaarDwt);

void BM_Conv2dStride2(benchmark::State& state) {
  Tensor x = random_map({1, 8, 64, 64}, 2);
  Tensor w = random_map({8, 8, 3, 3}, 3);
  Tensor b = random_map({8}, 4);
  for (auto _ : state) {
    ad::Graph g;
    ad::VarId out = ad::conv2d(g, g.input(x), g.input(w), g.input(b), 2, 1);
    benchmark::DoNotOptimize(g.tape.val(out).data());
  }
}
BENCHMARK(BM_Conv2dStride2);

void BM_RangeCoderRoundTrip(benchmark::State& state) {
  Rng rng(5);
  std::vector<std::uint32_t> cum = {0, 20000, 45000, 60000, 65536};
  std::vector<int> symbols(4096);
  for (auto& s : symbols) s = static_cast<int>(rng.uniform_int(4));
  for (auto _ : state) {
    RangeEncoder enc;
    for (int s : symbols)
      enc.encode(cum[static_cast<std::size_t>(s)],
                 cum[static_cast<std::size_t>(s) + 1] -
                     cum[static_cast<std::size_t>(s)]);
    auto bytes = enc.finish();
    RangeDecoder dec(bytes);
    std::uint32_t acc = 0;
    for (std::size_t i = 0; i < symbols.size(); ++i) {
      std::uint32_t target = dec.decode_cum();
      std::size_t lo = 0;
      while (cum[lo + 1] <= target) ++lo;
      dec.decode_update(cum[lo], cum[lo + 1] - cum[lo]);
      acc += static_cast<std::uint32_t>(lo);
    }
    benchmark::DoNotOptimize(acc);
  }
}
BENCHMARK(BM_RangeCoderRoundTrip);

void BM_CompressSmall(benchmark::State& state) {
  ModelConfig cfg;
  cfg.n = 8;
  cfg.m = 12;
  cfg.seed = 6;
  Model model(cfg);
  Tensor img = random_map({3, 64, 64}, 7);
  for (std::size_t i = 0; i < img.numel(); ++i) img[i] = (img[i] + 1.0) / 2.0;
  model.frozen_tables();
  for (auto _ : state) {
    Bitstream bs = compress(img, model);
    benchmark::DoNotOptimize(bs.payload.data());
  }
}
BENCHMARK(BM_CompressSmall);

}  // namespace

BENCHMARK_MAIN();
