// SPDX-License-Identifier: Apache-2.0
#include "quantdesk/numerics.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace quantdesk {

namespace {

constexpr uint32_t kPhiloxM0 = 0xD2511F53u;
constexpr uint32_t kPhiloxM1 = 0xCD9E8D57u;
constexpr uint32_t kPhiloxW0 = 0x9E3779B9u;
constexpr uint32_t kPhiloxW1 = 0xBB67AE85u;

}  // namespace

PhiloxBlock philox4x32(PhiloxCounter counter, PhiloxKey key, int rounds) {
  if (rounds < 1) throw std::invalid_argument("philox4x32: rounds must be >= 1");
  uint32_t x0 = counter.c0, x1 = counter.c1, x2 = counter.c2, x3 = counter.c3;
  uint32_t k0 = key.k0, k1 = key.k1;
  for (int r = 0; r < rounds; ++r) {
    if (r > 0) {
      k0 += kPhiloxW0;
      k1 += kPhiloxW1;
    }
    const uint64_t p0 = static_cast<uint64_t>(kPhiloxM0) * x0;
    const uint64_t p1 = static_cast<uint64_t>(kPhiloxM1) * x2;
    const uint32_t hi0 = static_cast<uint32_t>(p0 >> 32);
    const uint32_t lo0 = static_cast<uint32_t>(p0);
    const uint32_t hi1 = static_cast<uint32_t>(p1 >> 32);
    const uint32_t lo1 = static_cast<uint32_t>(p1);
    x0 = hi1 ^ x1 ^ k0;
    x1 = lo1;
    x2 = hi0 ^ x3 ^ k1;
    x3 = lo0;
  }
  return PhiloxBlock{{x0, x1, x2, x3}};
}

PhiloxBlock philox_next(PhiloxState& state) {
  const PhiloxBlock out = philox4x32(state.counter, state.key, state.rounds);
  if (++state.counter.c0 == 0)
    if (++state.counter.c1 == 0)
      if (++state.counter.c2 == 0) ++state.counter.c3;
  return out;
}

PhiloxStream::PhiloxStream(PhiloxKey key, uint64_t stream_id, int rounds) {
  state_.key = key;
  state_.counter = PhiloxCounter::from_pair(stream_id, 0);
  state_.rounds = rounds;
}

uint32_t PhiloxStream::next_u32() {
  if (pos_ == 4) {
    block_ = philox_next(state_);
    pos_ = 0;
  }
  return block_.w[static_cast<size_t>(pos_++)];
}

double PhiloxStream::next_unit() {
  const uint64_t hi = next_u32();
  const uint64_t lo = next_u32();
  const uint64_t bits53 = ((hi << 32) | lo) >> 11;
  return static_cast<double>(bits53) * 0x1.0p-53;
}

double PhiloxStream::next_normal() {
  if (have_spare_normal_) {
    have_spare_normal_ = false;
    return spare_normal_;
  }
  double u1 = next_unit();
  while (u1 == 0.0) u1 = next_unit();
  const double u2 = next_unit();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double a = 2.0 * M_PI * u2;
  spare_normal_ = r * std::sin(a);
  have_spare_normal_ = true;
  return r * std::cos(a);
}

// ---------------------------------------------------------------------------
// Table-backed codecs.
// ---------------------------------------------------------------------------

namespace {

struct GridEntry {
  double value;    // nonnegative representable value
  uint8_t code;    // code bits without the sign bit
};

// E2M1: exponent bias 1, 1 mantissa bit. code = e<<1 | m.
const std::vector<GridEntry>& e2m1_grid() {
  static const std::vector<GridEntry> grid = [] {
    std::vector<GridEntry> g;
    for (uint8_t code = 0; code < 8; ++code) {
      const int e = (code >> 1) & 3;
      const int m = code & 1;
      const double v = (e == 0) ? 0.5 * m : (1.0 + 0.5 * m) * std::ldexp(1.0, e - 1);
      g.push_back({v, code});
    }
    return g;
  }();
  return grid;
}

// E4M3: exponent bias 7, 3 mantissa bits, code 0x7F (and 0xFF) is NaN.
const std::vector<GridEntry>& e4m3_grid() {
  static const std::vector<GridEntry> grid = [] {
    std::vector<GridEntry> g;
    for (uint8_t code = 0; code < 0x7F; ++code) {  // excludes the NaN pattern
      const int e = (code >> 3) & 0xF;
      const int m = code & 7;
      const double v = (e == 0) ? std::ldexp(static_cast<double>(m), -9)
                                : std::ldexp(static_cast<double>(8 + m), e - 10);
      g.push_back({v, code});
    }
    return g;
  }();
  return grid;
}

uint32_t stochastic_draw(const RoundingMode& mode) {
  const PhiloxCounter ctr = PhiloxCounter::from_pair(mode.call_id, mode.element);
  return philox4x32(ctr, mode.key, mode.rounds).w[0];
}

// Rounds |x| onto a sorted grid of nonnegative representable values and
// returns the grid index. Ties under RTNE go to the code with an even
// mantissa; midpoints are exact in double because neighbouring grid values
// share short binary representations.
size_t round_to_grid(double magnitude, const std::vector<GridEntry>& grid,
                     const RoundingMode& mode) {
  const size_t last = grid.size() - 1;
  if (magnitude >= grid[last].value) return last;  // saturate
  size_t lo = 0, hi = last;
  while (hi - lo > 1) {
    const size_t mid = (lo + hi) / 2;
    if (grid[mid].value <= magnitude)
      lo = mid;
    else
      hi = mid;
  }
  if (grid[lo].value == magnitude) return lo;
  if (mode.kind == RoundingKind::NearestEven) {
    const double midpoint = 0.5 * (grid[lo].value + grid[hi].value);
    if (magnitude < midpoint) return lo;
    if (magnitude > midpoint) return hi;
    return (grid[lo].code & 1) == 0 ? lo : hi;
  }
  const double p_up = (magnitude - grid[lo].value) / (grid[hi].value - grid[lo].value);
  const uint32_t u = stochastic_draw(mode);
  return (static_cast<double>(u) < p_up * 4294967296.0) ? hi : lo;
}

void require_finite(double x, const char* op) {
  if (!std::isfinite(x)) throw std::invalid_argument(std::string(op) + ": non-finite input");
}

}  // namespace

CodeE2M1 encode_e2m1(double x, const RoundingMode& mode) {
  require_finite(x, "encode_e2m1");
  const uint8_t sign = std::signbit(x) ? 0x8 : 0x0;
  const size_t idx = round_to_grid(std::fabs(x), e2m1_grid(), mode);
  return CodeE2M1{static_cast<uint8_t>(sign | e2m1_grid()[idx].code)};
}

double decode_e2m1(CodeE2M1 code) {
  const uint8_t bits = code.bits & 0xF;
  const double v = e2m1_grid()[bits & 0x7].value;
  return (bits & 0x8) ? -v : v;
}

CodeE4M3 encode_e4m3(double x, const RoundingMode& mode) {
  require_finite(x, "encode_e4m3");
  const uint8_t sign = std::signbit(x) ? 0x80 : 0x00;
  const size_t idx = round_to_grid(std::fabs(x), e4m3_grid(), mode);
  return CodeE4M3{static_cast<uint8_t>(sign | e4m3_grid()[idx].code)};
}

bool is_nan_e4m3(CodeE4M3 code) { return (code.bits & 0x7F) == 0x7F; }

double decode_e4m3(CodeE4M3 code) {
  if (is_nan_e4m3(code)) return std::numeric_limits<double>::quiet_NaN();
  const double v = e4m3_grid()[code.bits & 0x7F].value;
  return (code.bits & 0x80) ? -v : v;
}

double round_binary16(double x, const RoundingMode& mode) {
  require_finite(x, "round_binary16");
  const double sign = std::signbit(x) ? -1.0 : 1.0;
  const double a = std::fabs(x);
  if (a >= kBinary16Max) return sign * kBinary16Max;
  if (a == 0.0) return x;

  // Grid spacing: 2^-24 in the subnormal range, 2^(e-11) in the binade
  // [2^(e-1), 2^e). All binary16 values and spacings are exact doubles, so
  // the bracketing below is exact.
  double ulp;
  if (a < 0x1.0p-14) {
    ulp = 0x1.0p-24;
  } else {
    int e = 0;
    std::frexp(a, &e);
    ulp = std::ldexp(1.0, e - 11);
  }
  const double steps = std::floor(a / ulp);
  const double lo = steps * ulp;
  if (lo == a) return sign * lo;
  const double hi = lo + ulp;

  if (mode.kind == RoundingKind::NearestEven) {
    const double midpoint = lo + 0.5 * ulp;
    if (a < midpoint) return sign * lo;
    if (a > midpoint) return sign * hi;
    const bool lo_even = std::fmod(steps, 2.0) == 0.0;
    return sign * (lo_even ? lo : hi);
  }
  const double p_up = (a - lo) / ulp;
  const uint32_t u = stochastic_draw(mode);
  return sign * ((static_cast<double>(u) < p_up * 4294967296.0) ? hi : lo);
}

}  // namespace quantdesk
