#ifndef TTLAB_SELFSUP_HPP
#define TTLAB_SELFSUP_HPP

#include <cstdint>
#include <random>
#include <vector>

#include "ttlab/tensor.hpp"

namespace ttlab {

/// A stack of images carrying rotation labels instead of class labels.
/// Label k means the stored image is its source rotated by k*90 degrees
/// counter-clockwise. Built in all-rotations mode every source appears
/// once per rotation, so the label histogram is uniform by construction.
struct RotationBatch {
  Tensor images;                             // [M,C,H,W]
  std::vector<std::int64_t> rotation_labels;  // M entries in {0,1,2,3}
};

/// Rotates a [C,H,W] image by k*90 degrees counter-clockwise as an exact
/// pixel permutation: pixel (r,c) of the 90-degree rotation reads source
/// (c, W-1-r). Odd k swaps the spatial dimensions.
Tensor rotate90(const Tensor& image, int k);

/// Mirrors an out-of-range coordinate back into [0,n) without repeating
/// the edge pixel (reflect-101). Shared by padded crops and blur kernels;
/// flat padded bands would hand the rotation task a trivial cue.
std::int64_t reflect_index(std::int64_t i, std::int64_t n);

/// Training-style augmentation applied with explicit parameters: reflect-pad
/// by `pad`, crop back to the original size at (row_off, col_off) in the
/// padded frame, then optionally flip horizontally. Offsets of exactly
/// `pad` with no flip reproduce the input.
Tensor augment_with(const Tensor& image, int pad, int row_off, int col_off,
                    bool flip);

/// Random crop plus random horizontal flip, drawing offsets and the flip
/// coin from rng. Deterministic given the rng state.
Tensor augment(const Tensor& image, std::mt19937& rng, int pad = 4);

/// Builds the single-image test batch: `copies` random crops of the
/// image, each expanded into all four rotations with labels, M = 4*copies.
/// Copies are never flipped; the rotation branch only ever trains on
/// unmirrored views. Class labels never enter here; the task is
/// label-free by construction.
RotationBatch make_test_batch(const Tensor& image, int copies,
                              std::mt19937& rng, bool augment_copies = true,
                              int pad = 4);

}  // namespace ttlab

#endif  // TTLAB_SELFSUP_HPP
