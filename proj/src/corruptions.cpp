#include "ttlab/corruptions.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "ttlab/common.hpp"
#include "ttlab/rng.hpp"
#include "ttlab/selfsup.hpp"

namespace ttlab {

namespace {

// Counter-based generator: every draw is mix64 of (seed, counter), so a
// (seed, image) pair reproduces bit-identically on any platform. The
// standard <random> distributions are implementation-defined and would
// break that promise.
class Prng {
 public:
  explicit Prng(std::uint64_t seed) : seed_(seed) {}

  std::uint64_t next_u64() { return mix64(seed_ ^ mix64(counter_++)); }

  // Uniform in [0,1) with 53 random bits.
  double next_unit() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double next_normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    const double u1 = 1.0 - next_unit();  // (0,1], keeps log finite
    const double u2 = next_unit();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    have_spare_ = true;
    return radius * std::cos(angle);
  }

  std::int64_t poisson(double lambda) {
    if (lambda <= 0.0) return 0;
    if (lambda <= 50.0) {
      // inversion by multiplication
      const double limit = std::exp(-lambda);
      std::int64_t k = 0;
      double p = 1.0;
      do {
        ++k;
        p *= next_unit();
      } while (p > limit);
      return k - 1;
    }
    const double approx = lambda + std::sqrt(lambda) * next_normal();
    return std::max<std::int64_t>(0, std::llround(approx));
  }

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

float clamp01(double v) {
  return static_cast<float>(std::clamp(v, 0.0, 1.0));
}

void check_image(const Tensor& image) {
  if (image.rank() != 3) {
    throw ShapeError("corrupt: expected [C,H,W], got " + image.shape_string());
  }
  for (std::int64_t i = 0; i < image.numel(); ++i) {
    if (!(image[i] >= 0.f && image[i] <= 1.f)) {
      throw InputError("corrupt: pixel value " + std::to_string(image[i]) +
                       " outside [0,1]");
    }
  }
}

Tensor gaussian_noise(const Tensor& x, double sigma, Prng& rng) {
  if (sigma < 0) throw ConfigError("gaussian_noise: sigma must be >= 0");
  if (sigma == 0.0) return x;
  Tensor out(x.shape());
  for (std::int64_t i = 0; i < x.numel(); ++i) {
    out[i] = clamp01(x[i] + sigma * rng.next_normal());
  }
  return out;
}

Tensor shot_noise(const Tensor& x, double lambda, Prng& rng) {
  if (lambda <= 0) throw ConfigError("shot_noise: lambda must be positive");
  Tensor out(x.shape());
  for (std::int64_t i = 0; i < x.numel(); ++i) {
    out[i] = clamp01(static_cast<double>(rng.poisson(x[i] * lambda)) / lambda);
  }
  return out;
}

Tensor impulse_noise(const Tensor& x, double p, Prng& rng) {
  if (p < 0 || p > 1) {
    throw ConfigError("impulse_noise: fraction must lie in [0,1]");
  }
  Tensor out(x.shape());
  for (std::int64_t i = 0; i < x.numel(); ++i) {
    if (rng.next_unit() < p) {
      out[i] = rng.next_unit() < 0.5 ? 0.f : 1.f;
    } else {
      out[i] = x[i];
    }
  }
  return out;
}

Tensor defocus_blur(const Tensor& x, double radius) {
  if (radius < 0) throw ConfigError("defocus_blur: radius must be >= 0");
  const std::int64_t extent = static_cast<std::int64_t>(radius);
  std::vector<std::pair<std::int64_t, std::int64_t>> taps;
  for (std::int64_t di = -extent; di <= extent; ++di) {
    for (std::int64_t dj = -extent; dj <= extent; ++dj) {
      if (static_cast<double>(di * di + dj * dj) <= radius * radius) {
        taps.emplace_back(di, dj);
      }
    }
  }
  if (taps.size() <= 1) return x;
  const double weight = 1.0 / static_cast<double>(taps.size());
  const std::int64_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  Tensor out(x.shape());
  for (std::int64_t c = 0; c < C; ++c) {
    for (std::int64_t r = 0; r < H; ++r) {
      for (std::int64_t q = 0; q < W; ++q) {
        double acc = 0.0;
        for (const auto& [di, dj] : taps) {
          acc += x.at(c, reflect_index(r + di, H), reflect_index(q + dj, W));
        }
        out.at(c, r, q) = clamp01(acc * weight);
      }
    }
  }
  return out;
}

Tensor pixelate(const Tensor& x, double factor) {
  if (factor < 1) throw ConfigError("pixelate: factor must be >= 1");
  const std::int64_t f = std::llround(factor);
  if (f <= 1) return x;
  const std::int64_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  Tensor out(x.shape());
  for (std::int64_t c = 0; c < C; ++c) {
    for (std::int64_t r0 = 0; r0 < H; r0 += f) {
      const std::int64_t r1 = std::min(H, r0 + f);
      for (std::int64_t q0 = 0; q0 < W; q0 += f) {
        const std::int64_t q1 = std::min(W, q0 + f);
        double acc = 0.0;
        for (std::int64_t r = r0; r < r1; ++r)
          for (std::int64_t q = q0; q < q1; ++q) acc += x.at(c, r, q);
        const float mean = clamp01(acc / ((r1 - r0) * (q1 - q0)));
        for (std::int64_t r = r0; r < r1; ++r)
          for (std::int64_t q = q0; q < q1; ++q) out.at(c, r, q) = mean;
      }
    }
  }
  return out;
}

Tensor contrast(const Tensor& x, double c) {
  if (c < 0) throw ConfigError("contrast: factor must be >= 0");
  if (c == 1.0) return x;
  const std::int64_t C = x.dim(0), hw = x.dim(1) * x.dim(2);
  Tensor out(x.shape());
  for (std::int64_t ch = 0; ch < C; ++ch) {
    const float* src = x.data() + ch * hw;
    float* dst = out.data() + ch * hw;
    double mean = 0.0;
    for (std::int64_t i = 0; i < hw; ++i) mean += src[i];
    mean /= static_cast<double>(hw);
    for (std::int64_t i = 0; i < hw; ++i) {
      dst[i] = clamp01((src[i] - mean) * c + mean);
    }
  }
  return out;
}

Tensor brightness(const Tensor& x, double b) {
  if (b == 0.0) return x;
  Tensor out(x.shape());
  for (std::int64_t i = 0; i < x.numel(); ++i) out[i] = clamp01(x[i] + b);
  return out;
}

// Native parameter schedules, level 1..5. The noise and digital families
// follow rough benchmark proportions; defocus radii start at 1.0 because
// anything below covers only the center tap and degenerates to identity.
constexpr double kGaussianSigma[5] = {0.10, 0.20, 0.32, 0.47, 0.65};
constexpr double kShotLambda[5] = {250.0, 100.0, 40.0, 15.0, 6.0};
constexpr double kImpulseFrac[5] = {0.02, 0.05, 0.09, 0.14, 0.20};
constexpr double kDefocusRadius[5] = {1.0, 1.5, 2.0, 2.5, 3.0};
constexpr double kPixelateFactor[5] = {2.0, 3.0, 4.0, 6.0, 8.0};
constexpr double kContrastFactor[5] = {0.75, 0.60, 0.45, 0.30, 0.18};
constexpr double kBrightnessShift[5] = {0.08, 0.16, 0.24, 0.33, 0.42};

const double* schedule_for(CorruptionKind kind) {
  switch (kind) {
    case CorruptionKind::gaussian_noise:
      return kGaussianSigma;
    case CorruptionKind::shot_noise:
      return kShotLambda;
    case CorruptionKind::impulse_noise:
      return kImpulseFrac;
    case CorruptionKind::defocus_blur:
      return kDefocusRadius;
    case CorruptionKind::pixelate:
      return kPixelateFactor;
    case CorruptionKind::contrast:
      return kContrastFactor;
    case CorruptionKind::brightness:
      return kBrightnessShift;
  }
  throw ConfigError("unknown corruption kind");
}

}  // namespace

std::string_view corruption_kind_name(CorruptionKind kind) {
  switch (kind) {
    case CorruptionKind::gaussian_noise:
      return "gaussian_noise";
    case CorruptionKind::shot_noise:
      return "shot_noise";
    case CorruptionKind::impulse_noise:
      return "impulse_noise";
    case CorruptionKind::defocus_blur:
      return "defocus_blur";
    case CorruptionKind::pixelate:
      return "pixelate";
    case CorruptionKind::contrast:
      return "contrast";
    case CorruptionKind::brightness:
      return "brightness";
  }
  throw ConfigError("unknown corruption kind");
}

CorruptionKind parse_corruption_kind(std::string_view name) {
  for (CorruptionKind kind : kAllCorruptionKinds) {
    if (corruption_kind_name(kind) == name) return kind;
  }
  std::string valid;
  for (CorruptionKind kind : kAllCorruptionKinds) {
    valid += valid.empty() ? "" : ", ";
    valid += corruption_kind_name(kind);
  }
  throw ConfigError("unknown corruption kind '" + std::string(name) +
                    "'; expected one of: " + valid);
}

double severity_params(CorruptionKind kind, int level) {
  if (level < 1 || level > 5) {
    throw InputError("severity level " + std::to_string(level) +
                     " outside 1..5");
  }
  return schedule_for(kind)[level - 1];
}

CorruptionSpec severity_spec(CorruptionKind kind, int level,
                             std::uint64_t seed) {
  return CorruptionSpec{kind, severity_params(kind, level), seed};
}

Tensor corrupt(const Tensor& image, const CorruptionSpec& spec) {
  check_image(image);
  Prng rng(spec.seed);
  switch (spec.kind) {
    case CorruptionKind::gaussian_noise:
      return gaussian_noise(image, spec.param, rng);
    case CorruptionKind::shot_noise:
      return shot_noise(image, spec.param, rng);
    case CorruptionKind::impulse_noise:
      return impulse_noise(image, spec.param, rng);
    case CorruptionKind::defocus_blur:
      return defocus_blur(image, spec.param);
    case CorruptionKind::pixelate:
      return pixelate(image, spec.param);
    case CorruptionKind::contrast:
      return contrast(image, spec.param);
    case CorruptionKind::brightness:
      return brightness(image, spec.param);
  }
  throw ConfigError("unknown corruption kind");
}

ShiftSchedule gradual_schedule(CorruptionKind kind, std::int64_t n) {
  if (n < 2) {
    throw InputError("gradual_schedule: need a stream of at least 2 samples");
  }
  const double lo = severity_params(kind, 1);
  const double hi = severity_params(kind, 5);
  ShiftSchedule schedule;
  schedule.kind = kind;
  schedule.params.resize(n);
  for (std::int64_t t = 0; t < n; ++t) {
    const double frac = static_cast<double>(t) / static_cast<double>(n - 1);
    schedule.params[t] = lo + (hi - lo) * frac;
  }
  return schedule;
}

}  // namespace ttlab
