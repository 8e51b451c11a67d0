#pragma once

#include <cmath>
#include <cstdint>

#include "canids/types.hpp"

namespace canids {

/// Uniform symmetric quantiser parameters: zero-point 0, per-tensor scale.
struct QuantSpec {
  int bits = 4;
  bool is_signed = true;
  double scale = 1.0;

  std::int64_t qmin() const {
    return is_signed ? -(std::int64_t{1} << (bits - 1)) : 0;
  }
  std::int64_t qmax() const {
    return is_signed ? (std::int64_t{1} << (bits - 1)) - 1
                     : (std::int64_t{1} << bits) - 1;
  }
  std::int64_t levels() const { return std::int64_t{1} << bits; }

  bool valid() const {
    return bits >= 2 && bits <= 48 && scale > 0.0 && std::isfinite(scale);
  }

  bool operator==(const QuantSpec&) const = default;
};

/// Round to nearest, ties to even. Independent of the FP environment so the
/// behaviour cannot change under a stray fesetround.
template <typename Scalar>
Scalar round_half_even(Scalar v) {
  const Scalar f = std::floor(v);
  const Scalar d = v - f;
  if (d > Scalar(0.5)) return f + Scalar(1);
  if (d < Scalar(0.5)) return f;
  return std::fmod(f, Scalar(2)) == Scalar(0) ? f : f + Scalar(1);
}

/// code = clamp(round_half_even(x / scale), qmin, qmax). Saturating.
template <typename Scalar>
std::int64_t quantize(Scalar x, const QuantSpec& spec) {
  if (std::isnan(x)) return 0;
  const Scalar q = round_half_even(x / Scalar(spec.scale));
  if (q <= Scalar(spec.qmin())) return spec.qmin();
  if (q >= Scalar(spec.qmax())) return spec.qmax();
  return static_cast<std::int64_t>(q);
}

template <typename Scalar>
Scalar dequantize(std::int64_t code, const QuantSpec& spec) {
  return static_cast<Scalar>(code) * Scalar(spec.scale);
}

/// dequantize(quantize(x)). Forward value of the straight-through estimator.
template <typename Scalar>
Scalar fake_quant(Scalar x, const QuantSpec& spec) {
  return dequantize<Scalar>(quantize(x, spec), spec);
}

/// STE backward contract: gradient passes iff x lies inside the representable
/// range [qmin*scale, qmax*scale]; clipped values get zero gradient.
template <typename Scalar>
bool ste_in_range(Scalar x, const QuantSpec& spec) {
  return x >= Scalar(spec.qmin()) * Scalar(spec.scale) &&
         x <= Scalar(spec.qmax()) * Scalar(spec.scale);
}

/// Shared input quantiser: 8-bit unsigned over already-normalised [0,1]
/// features, scale 1/255, zero-point 0.
inline QuantSpec input_quant_spec() {
  return QuantSpec{8, false, 1.0 / 255.0};
}

}  // namespace canids
