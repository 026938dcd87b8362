#ifndef TTLAB_CORRUPTIONS_HPP
#define TTLAB_CORRUPTIONS_HPP

#include <array>
#include <cstdint>
#include <string_view>
#include <vector>

#include "ttlab/tensor.hpp"

namespace ttlab {

/// Seven corruption generators spanning the noise, blur and digital
/// categories. Severity levels 1..5 map onto each kind's native parameter
/// through a schedule defined in severity_params.
enum class CorruptionKind {
  gaussian_noise,
  shot_noise,
  impulse_noise,
  defocus_blur,
  pixelate,
  contrast,
  brightness,
};

constexpr std::array<CorruptionKind, 7> kAllCorruptionKinds = {
    CorruptionKind::gaussian_noise, CorruptionKind::shot_noise,
    CorruptionKind::impulse_noise,  CorruptionKind::defocus_blur,
    CorruptionKind::pixelate,       CorruptionKind::contrast,
    CorruptionKind::brightness,
};

std::string_view corruption_kind_name(CorruptionKind kind);
CorruptionKind parse_corruption_kind(std::string_view name);

/// A fully specified test distribution: kind, native parameter and the
/// seed every random draw derives from.
struct CorruptionSpec {
  CorruptionKind kind = CorruptionKind::gaussian_noise;
  double param = 0.0;
  std::uint64_t seed = 0;
};

/// Native parameter for a severity level. The schedule is strictly
/// monotone in level for every kind; for shot_noise and contrast the
/// native parameter decreases as severity grows.
double severity_params(CorruptionKind kind, int level);

CorruptionSpec severity_spec(CorruptionKind kind, int level,
                             std::uint64_t seed);

/// Applies the corruption to a [C,H,W] image with values in [0,1]. Output
/// clamped to [0,1]; bit-identical for identical (image, spec). Randomness
/// comes from a counter-based generator, so results do not depend on the
/// platform's distribution implementations.
Tensor corrupt(const Tensor& image, const CorruptionSpec& spec);

/// Per-position corruption parameters for a gradually shifting stream of
/// length n: linear interpolation from the level-1 value at position 0 to
/// the level-5 value at position n-1.
struct ShiftSchedule {
  CorruptionKind kind = CorruptionKind::gaussian_noise;
  std::vector<double> params;
};

ShiftSchedule gradual_schedule(CorruptionKind kind, std::int64_t n);

}  // namespace ttlab

#endif  // TTLAB_CORRUPTIONS_HPP
