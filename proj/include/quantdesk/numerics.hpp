// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>

namespace quantdesk {

// ---------------------------------------------------------------------------
// Philox4x32 counter-based PRNG with a configurable round count.
// Output is a pure function of (key, counter, rounds); distinct counters give
// independent 128-bit blocks, which is what makes stochastic rounding
// reproducible under any traversal order or parallel partitioning.
// ---------------------------------------------------------------------------

inline constexpr int kPhiloxDefaultRounds = 10;

struct PhiloxKey {
  uint32_t k0 = 0;
  uint32_t k1 = 0;

  static PhiloxKey from_seed(uint64_t seed) {
    return PhiloxKey{static_cast<uint32_t>(seed), static_cast<uint32_t>(seed >> 32)};
  }
};

struct PhiloxCounter {
  uint32_t c0 = 0, c1 = 0, c2 = 0, c3 = 0;

  // (hi, lo) pair packing: lo occupies words 0-1, hi occupies words 2-3.
  static PhiloxCounter from_pair(uint64_t hi, uint64_t lo) {
    return PhiloxCounter{static_cast<uint32_t>(lo), static_cast<uint32_t>(lo >> 32),
                         static_cast<uint32_t>(hi), static_cast<uint32_t>(hi >> 32)};
  }
};

struct PhiloxBlock {
  std::array<uint32_t, 4> w{};
};

PhiloxBlock philox4x32(PhiloxCounter counter, PhiloxKey key, int rounds = kPhiloxDefaultRounds);

// Stateful view: key + counter + rounds, with a next() that returns the block
// for the current counter and then increments the counter (128-bit).
struct PhiloxState {
  PhiloxKey key{};
  PhiloxCounter counter{};
  int rounds = kPhiloxDefaultRounds;
};

PhiloxBlock philox_next(PhiloxState& state);

// Sequential uniform stream backed by philox_next. Used where a plain RNG is
// wanted (toy-LM sampling, synthetic data); all scalar rounding goes through
// the counter-scheduled path instead.
class PhiloxStream {
 public:
  explicit PhiloxStream(PhiloxKey key, uint64_t stream_id = 0, int rounds = kPhiloxDefaultRounds);

  uint32_t next_u32();
  // Uniform in [0, 1) with 53 random bits.
  double next_unit();
  // Standard normal via Box-Muller.
  double next_normal();

 private:
  PhiloxState state_;
  PhiloxBlock block_{};
  int pos_ = 4;
  bool have_spare_normal_ = false;
  double spare_normal_ = 0.0;
};

// ---------------------------------------------------------------------------
// Rounding modes. RTNE is deterministic. Stochastic rounding draws one 32-bit
// uniform per scalar from Philox at counter (call_id, element), so a tensor
// quantization is bit-identical no matter how the loop is scheduled.
// ---------------------------------------------------------------------------

enum class RoundingKind : uint8_t { NearestEven, Stochastic };

struct RoundingMode {
  RoundingKind kind = RoundingKind::NearestEven;
  PhiloxKey key{};
  uint64_t call_id = 0;
  uint64_t element = 0;
  int rounds = kPhiloxDefaultRounds;

  static RoundingMode nearest_even() { return RoundingMode{}; }
  static RoundingMode stochastic(PhiloxKey key, uint64_t call_id = 0,
                                 int rounds = kPhiloxDefaultRounds) {
    RoundingMode m;
    m.kind = RoundingKind::Stochastic;
    m.key = key;
    m.call_id = call_id;
    m.rounds = rounds;
    return m;
  }
  RoundingMode at(uint64_t element_index) const {
    RoundingMode m = *this;
    m.element = element_index;
    return m;
  }
  bool is_stochastic() const { return kind == RoundingKind::Stochastic; }
};

// ---------------------------------------------------------------------------
// Scalar codecs.
// E2M1: 4 bits (1 sign, 2 exponent, 1 mantissa), values +/-{0,.5,1,1.5,2,3,4,6},
//       no NaN/Inf encodings; every 4-bit pattern decodes to a finite value.
// E4M3: 8 bits (1 sign, 4 exponent, 3 mantissa), max finite 448, one NaN per
//       sign (S.1111.111), no infinities, subnormals representable.
// Out-of-range finite inputs saturate to the max magnitude in both formats.
// ---------------------------------------------------------------------------

struct CodeE2M1 {
  uint8_t bits = 0;  // low 4 bits used
  friend bool operator==(CodeE2M1 a, CodeE2M1 b) { return (a.bits & 0xF) == (b.bits & 0xF); }
};

struct CodeE4M3 {
  uint8_t bits = 0;
  friend bool operator==(CodeE4M3 a, CodeE4M3 b) { return a.bits == b.bits; }
};

CodeE2M1 encode_e2m1(double x, const RoundingMode& mode);
double decode_e2m1(CodeE2M1 code);

CodeE4M3 encode_e4m3(double x, const RoundingMode& mode);
// NaN patterns decode to a quiet NaN.
double decode_e4m3(CodeE4M3 code);
bool is_nan_e4m3(CodeE4M3 code);

inline constexpr double kE2M1Max = 6.0;
inline constexpr double kE4M3Max = 448.0;
inline constexpr double kBinary16Max = 65504.0;

// Rounds x to the binary16 grid under the given mode and returns the decoded
// value. Overflow saturates to +/-65504.
double round_binary16(double x, const RoundingMode& mode);

}  // namespace quantdesk
