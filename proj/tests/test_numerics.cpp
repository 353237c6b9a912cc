// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <set>
#include <stdexcept>
#include <vector>

#include "quantdesk/numerics.hpp"

using namespace quantdesk;

namespace {

double decode_roundtrip_e2m1(double x) {
  return decode_e2m1(encode_e2m1(x, RoundingMode::nearest_even()));
}

double decode_roundtrip_e4m3(double x) {
  return decode_e4m3(encode_e4m3(x, RoundingMode::nearest_even()));
}

}  // namespace

TEST_CASE("philox4x32 matches the published rounds-10 reference vectors") {
  // Known-answer rows of the original counter-based RNG specification,
  // cross-checked against an independent implementation before freezing.
  const PhiloxBlock zero = philox4x32(PhiloxCounter{0, 0, 0, 0}, PhiloxKey{0, 0}, 10);
  CHECK(zero.w == std::array<uint32_t, 4>{0x6627e8d5u, 0xe169c58du, 0xbc57ac4cu, 0x9b00dbd8u});

  const PhiloxBlock ones = philox4x32(
      PhiloxCounter{0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu},
      PhiloxKey{0xffffffffu, 0xffffffffu}, 10);
  CHECK(ones.w == std::array<uint32_t, 4>{0x408f276du, 0x41c83b0eu, 0xa20bc7c6u, 0x6d5451fdu});

  const PhiloxBlock pi = philox4x32(
      PhiloxCounter{0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u},
      PhiloxKey{0xa4093822u, 0x299f31d0u}, 10);
  CHECK(pi.w == std::array<uint32_t, 4>{0xd16cfe09u, 0x94fdccebu, 0x5001e420u, 0x24126ea1u});
}

TEST_CASE("philox4x32 configurable rounds") {
  const PhiloxCounter ctr{1, 2, 3, 4};
  const PhiloxKey key{5, 6};
  const PhiloxBlock r5 = philox4x32(ctr, key, 5);
  CHECK(r5.w == std::array<uint32_t, 4>{0x1db64913u, 0x9551da7cu, 0xef2f5a6eu, 0xf9d35013u});
  const PhiloxBlock r7 = philox4x32(ctr, key, 7);
  CHECK(r7.w == std::array<uint32_t, 4>{0xcceb838bu, 0x94b8d4abu, 0x3b19758cu, 0x0e1a9304u});
  CHECK(r5.w != r7.w);
  CHECK_THROWS_AS(philox4x32(ctr, key, 0), std::invalid_argument);
}

TEST_CASE("philox determinism and counter advance") {
  PhiloxState a{PhiloxKey{7, 9}, PhiloxCounter{1, 2, 3, 4}, 5};
  PhiloxState b = a;
  CHECK(philox_next(a).w == philox_next(b).w);
  CHECK(a.counter.c0 == 2);

  // 128-bit carry
  PhiloxState carry{PhiloxKey{}, PhiloxCounter{0xffffffffu, 0xffffffffu, 0xffffffffu, 7}, 10};
  philox_next(carry);
  CHECK(carry.counter.c0 == 0);
  CHECK(carry.counter.c1 == 0);
  CHECK(carry.counter.c2 == 0);
  CHECK(carry.counter.c3 == 8);
}

TEST_CASE("philox consecutive counters differ in every word (avalanche spot-check)") {
  const PhiloxKey key{0xdeadbeefu, 0x12345678u};
  int weak = 0;
  for (uint64_t i = 0; i < 10000; ++i) {
    const PhiloxBlock a = philox4x32(PhiloxCounter::from_pair(0, i), key);
    const PhiloxBlock b = philox4x32(PhiloxCounter::from_pair(0, i + 1), key);
    for (int w = 0; w < 4; ++w)
      if (a.w[static_cast<size_t>(w)] == b.w[static_cast<size_t>(w)]) ++weak;
  }
  CHECK(weak == 0);
}

TEST_CASE("e2m1 decodes all 16 patterns onto the signed value set") {
  std::set<double> magnitudes;
  for (int bits = 0; bits < 16; ++bits) {
    const double v = decode_e2m1(CodeE2M1{static_cast<uint8_t>(bits)});
    CHECK(std::isfinite(v));
    CHECK(std::fabs(v) <= 6.0);
    magnitudes.insert(std::fabs(v));
  }
  CHECK(magnitudes == std::set<double>{0.0, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 6.0});
  // negative-zero pattern decodes equal to +0
  CHECK(decode_e2m1(CodeE2M1{0x8}) == 0.0);
}

TEST_CASE("e2m1 RTNE encoding: ties to even mantissa, saturation") {
  const RoundingMode rtne = RoundingMode::nearest_even();
  CHECK(decode_e2m1(encode_e2m1(0.0, rtne)) == 0.0);
  CHECK(encode_e2m1(0.0, rtne).bits == 0);
  CHECK(decode_roundtrip_e2m1(2.5) == 2.0);   // tie between 2 and 3
  CHECK(decode_roundtrip_e2m1(-2.5) == -2.0);
  CHECK(decode_roundtrip_e2m1(7.0) == 6.0);   // saturation
  CHECK(decode_roundtrip_e2m1(-100.0) == -6.0);
  CHECK(decode_roundtrip_e2m1(0.25) == 0.0);
  CHECK(decode_roundtrip_e2m1(0.75) == 1.0);
  CHECK(decode_roundtrip_e2m1(1.25) == 1.0);
  CHECK(decode_roundtrip_e2m1(1.75) == 2.0);
  CHECK(decode_roundtrip_e2m1(3.5) == 4.0);
  CHECK(decode_roundtrip_e2m1(5.0) == 4.0);
  CHECK(decode_roundtrip_e2m1(1.5) == 1.5);   // representable round-trip
  CHECK_THROWS_AS(encode_e2m1(std::nan(""), rtne), std::invalid_argument);
  CHECK_THROWS_AS(encode_e2m1(INFINITY, rtne), std::invalid_argument);
}

TEST_CASE("e2m1 stochastic rounding splits the 2.5 tie near 50/50") {
  const RoundingMode sr = RoundingMode::stochastic(PhiloxKey{11, 22}, /*call_id=*/1);
  int ups = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double v = decode_e2m1(encode_e2m1(2.5, sr.at(static_cast<uint64_t>(i))));
    CHECK((v == 2.0 || v == 3.0));
    if (v == 3.0) ++ups;
  }
  CHECK(std::fabs(static_cast<double>(ups) / n - 0.5) < 0.01);

  // same (key, counter) state -> same code
  CHECK(encode_e2m1(2.5, sr.at(42)) == encode_e2m1(2.5, sr.at(42)));
}

TEST_CASE("e4m3 saturation, NaN, exhaustive round-trip") {
  const RoundingMode rtne = RoundingMode::nearest_even();
  CHECK(decode_roundtrip_e4m3(448.0) == 448.0);
  CHECK(encode_e4m3(449.0, rtne) == encode_e4m3(448.0, rtne));
  CHECK(decode_roundtrip_e4m3(10000.0) == 448.0);
  CHECK(decode_roundtrip_e4m3(-10000.0) == -448.0);
  CHECK(encode_e4m3(0.0, rtne).bits == 0);

  CHECK(is_nan_e4m3(CodeE4M3{0x7F}));
  CHECK(is_nan_e4m3(CodeE4M3{0xFF}));
  CHECK(std::isnan(decode_e4m3(CodeE4M3{0x7F})));

  int finite = 0;
  for (int bits = 0; bits < 256; ++bits) {
    const CodeE4M3 code{static_cast<uint8_t>(bits)};
    if (is_nan_e4m3(code)) continue;
    ++finite;
    const double v = decode_e4m3(code);
    CHECK(std::isfinite(v));
    CHECK(std::fabs(v) <= 448.0);
    const CodeE4M3 back = encode_e4m3(v, rtne);
    // modulo signed zero: -0 re-encodes as +0
    if (v == 0.0)
      CHECK(decode_e4m3(back) == 0.0);
    else
      CHECK(back == code);
  }
  CHECK(finite == 254);
  CHECK_THROWS_AS(encode_e4m3(std::nan(""), rtne), std::invalid_argument);
}

TEST_CASE("e4m3 subnormals are representable") {
  const double min_subnormal = 0x1.0p-9;
  CHECK(decode_roundtrip_e4m3(min_subnormal) == min_subnormal);
  CHECK(decode_roundtrip_e4m3(3 * min_subnormal) == 3 * min_subnormal);
  // below half the smallest subnormal rounds to zero
  CHECK(decode_roundtrip_e4m3(0x1.0p-11) == 0.0);
}

TEST_CASE("binary16 RTNE basics and saturation") {
  const RoundingMode rtne = RoundingMode::nearest_even();
  CHECK(round_binary16(1.0, rtne) == 1.0);
  CHECK(round_binary16(-0.125, rtne) == -0.125);
  CHECK(round_binary16(65520.0, rtne) == 65504.0);
  CHECK(round_binary16(1e9, rtne) == 65504.0);
  CHECK(round_binary16(-1e9, rtne) == -65504.0);
  // ties to even: 1 + 2^-11 sits between steps 1024 and 1025, 1 + 3*2^-11
  // between 1025 and 1026
  CHECK(round_binary16(1.0 + 0x1.0p-11, rtne) == 1.0);
  CHECK(round_binary16(1.0 + 3 * 0x1.0p-11, rtne) == 1.0 + 0x1.0p-9);
  // subnormal grid
  CHECK(round_binary16(0x1.0p-24, rtne) == 0x1.0p-24);
  CHECK(round_binary16(0x1.8p-25, rtne) == 0x1.0p-24);
  CHECK_THROWS_AS(round_binary16(INFINITY, rtne), std::invalid_argument);
}

TEST_CASE("binary16 stochastic rounding is unbiased at 1 + 2^-12") {
  const double x = 1.0 + 0x1.0p-12;
  const RoundingMode sr = RoundingMode::stochastic(PhiloxKey{3, 4}, /*call_id=*/2);
  const int n = 1000000;
  double sum = 0.0;
  for (int i = 0; i < n; ++i) sum += round_binary16(x, sr.at(static_cast<uint64_t>(i)));
  const double mean = sum / n;
  const double interval = 0x1.0p-10;
  CHECK(std::fabs(mean - x) <= 3.0 * interval / (2.0 * std::sqrt(static_cast<double>(n))));
}

TEST_CASE("RTNE idempotence on representable values") {
  const RoundingMode rtne = RoundingMode::nearest_even();
  for (int bits = 0; bits < 16; ++bits) {
    const double v = decode_e2m1(CodeE2M1{static_cast<uint8_t>(bits)});
    CHECK(decode_roundtrip_e2m1(v) == v);
  }
  for (int bits = 0; bits < 256; ++bits) {
    const CodeE4M3 code{static_cast<uint8_t>(bits)};
    if (is_nan_e4m3(code)) continue;
    const double v = decode_e4m3(code);
    CHECK(decode_roundtrip_e4m3(v) == v);
  }
  for (double v : {0.0, 0x1.0p-24, 0.5, 1.0, 1.0 + 0x1.0p-10, 2048.0, 65504.0}) {
    CHECK(round_binary16(v, rtne) == v);
    CHECK(round_binary16(round_binary16(v + 1e-7, rtne), rtne) == round_binary16(v + 1e-7, rtne));
  }
}

TEST_CASE("encode monotonicity over a dense grid") {
  const RoundingMode rtne = RoundingMode::nearest_even();
  double prev2 = -7.0, prev4 = -500.0, prev16 = -70000.0;
  double last2 = decode_roundtrip_e2m1(prev2);
  double last4 = decode_roundtrip_e4m3(prev4);
  double last16 = round_binary16(prev16, rtne);
  for (int i = 1; i <= 20000; ++i) {
    const double x2 = -7.0 + 14.0 * i / 20000.0;
    const double x4 = -500.0 + 1000.0 * i / 20000.0;
    const double x16 = -70000.0 + 140000.0 * i / 20000.0;
    const double v2 = decode_roundtrip_e2m1(x2);
    const double v4 = decode_roundtrip_e4m3(x4);
    const double v16 = round_binary16(x16, rtne);
    CHECK(v2 >= last2);
    CHECK(v4 >= last4);
    CHECK(v16 >= last16);
    last2 = v2;
    last4 = v4;
    last16 = v16;
  }
}

TEST_CASE("stochastic rounding returns one of the two bracketing values") {
  const std::vector<double> grid = {0.0, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 6.0};
  const RoundingMode sr = RoundingMode::stochastic(PhiloxKey{77, 88}, 3);
  PhiloxStream rng(PhiloxKey{1, 2});
  for (int i = 0; i < 2000; ++i) {
    const double x = (rng.next_unit() - 0.5) * 13.0;
    const double a = std::min(std::fabs(x), 6.0);
    double lo = 0.0, hi = 6.0;
    for (size_t g = 0; g + 1 < grid.size(); ++g) {
      if (grid[g] <= a && a <= grid[g + 1]) {
        lo = grid[g];
        hi = grid[g + 1];
        break;
      }
    }
    const double v = decode_e2m1(encode_e2m1(x, sr.at(static_cast<uint64_t>(i))));
    const double mag = std::fabs(v);
    CHECK((mag == lo || mag == hi));
    if (x != 0.0) CHECK(std::signbit(v) == std::signbit(x));
  }
}
