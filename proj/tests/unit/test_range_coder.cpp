#include <doctest.h>

#include <cstdint>
#include <vector>

#include "hquic/errors.hpp"
#include "hquic/range_coder.hpp"
#include "hquic/rng.hpp"

using namespace hquic;

namespace {

// random cumulative table over `n` symbols with total 1<<16, min freq 1
std::vector<std::uint32_t> random_table(int n, Rng& rng) {
  std::vector<std::uint32_t> freq(static_cast<std::size_t>(n), 1);
  std::uint32_t left = 65536 - static_cast<std::uint32_t>(n);
  for (int i = 0; i < n; ++i) {
    std::uint32_t take = (i == n - 1)
                             ? left
                             : static_cast<std::uint32_t>(rng.uniform() * left / 2);
    freq[static_cast<std::size_t>(i)] += take;
    left -= take;
  }
  std::vector<std::uint32_t> cum(static_cast<std::size_t>(n) + 1, 0);
  for (int i = 0; i < n; ++i)
    cum[static_cast<std::size_t>(i) + 1] = cum[static_cast<std::size_t>(i)] +
                                           freq[static_cast<std::size_t>(i)];
  REQUIRE(cum.back() == 65536u);
  return cum;
}

int lookup(const std::vector<std::uint32_t>& cum, std::uint32_t target) {
  int lo = 0, hi = static_cast<int>(cum.size()) - 2;
  while (lo < hi) {
    int mid = (lo + hi + 1) / 2;
    if (cum[static_cast<std::size_t>(mid)] <= target)
      lo = mid;
    else
      hi = mid - 1;
  }
  return lo;
}

}  // namespace

TEST_CASE("range coder round trip over random sequences") {
  Rng rng(100);
  for (int trial = 0; trial < 30; ++trial) {
    int n = 2 + static_cast<int>(rng.uniform_int(300));
    auto cum = random_table(n, rng);
    int len = 1 + static_cast<int>(rng.uniform_int(2000));
    std::vector<int> symbols(static_cast<std::size_t>(len));
    for (auto& s : symbols)
      s = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(n)));

    RangeEncoder enc;
    for (int s : symbols) {
      std::uint32_t c = cum[static_cast<std::size_t>(s)];
      std::uint32_t f = cum[static_cast<std::size_t>(s) + 1] - c;
      enc.encode(c, f);
    }
    auto bytes = enc.finish();

    RangeDecoder dec(bytes);
    for (int s : symbols) {
      std::uint32_t target = dec.decode_cum();
      int got = lookup(cum, target);
      REQUIRE(got == s);
      std::uint32_t c = cum[static_cast<std::size_t>(got)];
      dec.decode_update(c, cum[static_cast<std::size_t>(got) + 1] - c);
    }
  }
}

TEST_CASE("skewed distributions compress near entropy") {
  // 2 symbols, p = {65535/65536, 1/65536}; coding the likely one is cheap
  std::vector<std::uint32_t> cum = {0, 65535, 65536};
  RangeEncoder enc;
  for (int i = 0; i < 100000; ++i) enc.encode(0, 65535);
  auto bytes = enc.finish();
  CHECK(bytes.size() < 32);  // ~0.0000220 bits/symbol plus flush overhead
}

TEST_CASE("decoder rejects sustained reads past the end") {
  RangeEncoder enc;
  enc.encode(0, 32768);
  auto bytes = enc.finish();
  RangeDecoder dec(bytes);
  auto drain = [&]() {
    for (int i = 0; i < 100000; ++i) {
      (void)dec.decode_cum();
      dec.decode_update(0, 1);
    }
  };
  CHECK_THROWS_AS(drain(), DecodeError);
}

TEST_CASE("carry propagation survives long maximal-probability runs") {
  // stress the pending-0xFF path with a cum just below the top
  std::vector<std::uint32_t> cum = {0, 1, 65536};
  RangeEncoder enc;
  std::vector<int> symbols;
  Rng rng(7);
  for (int i = 0; i < 5000; ++i)
    symbols.push_back(rng.uniform() < 0.99 ? 1 : 0);
  for (int s : symbols) {
    std::uint32_t c = cum[static_cast<std::size_t>(s)];
    enc.encode(c, cum[static_cast<std::size_t>(s) + 1] - c);
  }
  auto bytes = enc.finish();
  RangeDecoder dec(bytes);
  for (int s : symbols) {
    std::uint32_t target = dec.decode_cum();
    int got = target >= 1 ? 1 : 0;
    REQUIRE(got == s);
    std::uint32_t c = cum[static_cast<std::size_t>(got)];
    dec.decode_update(c, cum[static_cast<std::size_t>(got) + 1] - c);
  }
}
