#include "ttlab/selfsup.hpp"

#include <cstring>

#include "ttlab/common.hpp"

namespace ttlab {

std::int64_t reflect_index(std::int64_t i, std::int64_t n) {
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * n - 2 - i;
  }
  return i;
}

Tensor rotate90(const Tensor& image, int k) {
  if (image.rank() != 3) {
    throw ShapeError("rotate90: expected [C,H,W], got " +
                     image.shape_string());
  }
  if (k < 0 || k > 3) {
    throw InputError("rotate90: k must be in {0,1,2,3}, got " +
                     std::to_string(k));
  }
  const std::int64_t C = image.dim(0), H = image.dim(1), W = image.dim(2);
  if (k == 0) return image;
  if (k == 2) {
    Tensor out({C, H, W});
    for (std::int64_t c = 0; c < C; ++c)
      for (std::int64_t r = 0; r < H; ++r)
        for (std::int64_t q = 0; q < W; ++q)
          out.at(c, r, q) = image.at(c, H - 1 - r, W - 1 - q);
    return out;
  }
  Tensor out({C, W, H});
  if (k == 1) {
    for (std::int64_t c = 0; c < C; ++c)
      for (std::int64_t r = 0; r < W; ++r)
        for (std::int64_t q = 0; q < H; ++q)
          out.at(c, r, q) = image.at(c, q, W - 1 - r);
  } else {  // k == 3
    for (std::int64_t c = 0; c < C; ++c)
      for (std::int64_t r = 0; r < W; ++r)
        for (std::int64_t q = 0; q < H; ++q)
          out.at(c, r, q) = image.at(c, H - 1 - q, r);
  }
  return out;
}

Tensor augment_with(const Tensor& image, int pad, int row_off, int col_off,
                    bool flip) {
  if (image.rank() != 3) {
    throw ShapeError("augment: expected [C,H,W], got " + image.shape_string());
  }
  const std::int64_t C = image.dim(0), H = image.dim(1), W = image.dim(2);
  if (H != W) {
    throw ShapeError("augment: expected a square image, got " +
                     image.shape_string());
  }
  if (pad < 0) throw ConfigError("augment: pad must be >= 0");
  if (row_off < 0 || row_off > 2 * pad || col_off < 0 || col_off > 2 * pad) {
    throw InputError("augment: crop offset outside [0, 2*pad]");
  }
  Tensor out({C, H, W});
  for (std::int64_t c = 0; c < C; ++c) {
    for (std::int64_t r = 0; r < H; ++r) {
      const std::int64_t sr = reflect_index(r + row_off - pad, H);
      for (std::int64_t q = 0; q < W; ++q) {
        const std::int64_t qq = flip ? W - 1 - q : q;
        const std::int64_t sc = reflect_index(q + col_off - pad, W);
        out.at(c, r, qq) = image.at(c, sr, sc);
      }
    }
  }
  return out;
}

Tensor augment(const Tensor& image, std::mt19937& rng, int pad) {
  std::uniform_int_distribution<int> off(0, 2 * pad);
  const int row_off = off(rng);
  const int col_off = off(rng);
  const bool flip = std::uniform_int_distribution<int>(0, 1)(rng) == 1;
  return augment_with(image, pad, row_off, col_off, flip);
}

RotationBatch make_test_batch(const Tensor& image, int copies,
                              std::mt19937& rng, bool augment_copies,
                              int pad) {
  if (copies < 1) throw ConfigError("make_test_batch: copies must be >= 1");
  if (image.rank() != 3) {
    throw ShapeError("make_test_batch: expected [C,H,W], got " +
                     image.shape_string());
  }
  const std::int64_t C = image.dim(0), H = image.dim(1), W = image.dim(2);
  const std::int64_t M = 4 * static_cast<std::int64_t>(copies);
  RotationBatch batch;
  batch.images = Tensor({M, C, H, W});
  batch.rotation_labels.resize(M);
  const std::int64_t stride = C * H * W;
  // Crops only, no flip: the rotation branch never trains on mirrored
  // views, so flipped copies would dilute the adaptation signal.
  std::uniform_int_distribution<int> off(0, 2 * pad);
  for (int i = 0; i < copies; ++i) {
    const Tensor base =
        augment_copies
            ? augment_with(image, pad, off(rng), off(rng), false)
            : image;
    for (int k = 0; k < 4; ++k) {
      const Tensor rot = rotate90(base, k);
      const std::int64_t m = static_cast<std::int64_t>(i) * 4 + k;
      std::memcpy(batch.images.data() + m * stride, rot.data(),
                  sizeof(float) * stride);
      batch.rotation_labels[m] = k;
    }
  }
  return batch;
}

}  // namespace ttlab
