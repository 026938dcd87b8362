#ifndef TTLAB_YMODEL_HPP
#define TTLAB_YMODEL_HPP

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "ttlab/graph.hpp"
#include "ttlab/tape.hpp"
#include "ttlab/tensor.hpp"

namespace ttlab {

/// Architecture description for the Y-structured model: a stack of
/// conv3x3 + GroupNorm + ReLU blocks shared up to split_index, then the
/// remaining blocks duplicated per branch, each branch closing with global
/// average pooling and a linear head. The two branches are architecturally
/// identical except for the width of that final layer.
struct YModelConfig {
  struct Block {
    std::int64_t channels;
    int stride;
    int groups;
  };

  std::int64_t in_channels = 3;
  std::int64_t in_height = 32;
  std::int64_t in_width = 32;
  std::vector<Block> blocks = {{16, 1, 4}, {32, 2, 4}, {64, 2, 4}};
  int split_index = 2;  // blocks 1..split_index belong to the extractor
  std::int64_t main_classes = 10;
  std::int64_t ssl_classes = 4;  // rotation task, fixed

  void validate() const;
  // Spatial side length entering a branch head, after all conv strides.
  std::int64_t head_spatial() const;
};

/// The shared extractor plus two branches, with every parameter name
/// prefixed by exactly one of extractor/, main/, ssl/. Those prefixes are
/// what optimizer masks key on.
struct YModel {
  YModelConfig config;
  ParamTape tape;
};

enum class Branch { main, ssl };

/// Deterministic fan-in-scaled uniform initialization from the seed.
YModel build_model(const YModelConfig& cfg, std::uint64_t seed);

/// Graph builders, shared by prediction, joint training and the test-time
/// adaptation loop. `trainable` controls whether gradients will flow into
/// the parameters bound here.
Value forward_extractor(Graph& g, YModel& model, Value x, bool trainable);
Value forward_branch(Graph& g, YModel& model, Value features, Branch branch,
                     bool trainable);

/// Forward-only logits for a [N,C,H,W] batch.
Tensor main_logits(YModel& model, const Tensor& images);
Tensor ssl_logits(YModel& model, const Tensor& images);

struct Prediction {
  std::int64_t label = -1;
  std::vector<float> probs;
};

/// Single-image class prediction; probs lie on the simplex and ties break
/// toward the lowest index.
Prediction predict(YModel& model, const Tensor& image);

struct JointLossValue {
  float main_loss = 0.f;
  float ssl_loss = 0.f;
};

/// Joint objective on one batch: the main loss on (images, labels) plus
/// the rotation loss on one randomly rotated copy of each image. With
/// with_grads set, backpropagates main_loss + ssl_loss into the tape,
/// the shared extractor receiving both contributions.
JointLossValue joint_loss(YModel& model, const Tensor& images,
                          const std::vector<std::int64_t>& labels,
                          std::mt19937& rng, bool with_grads = false);

}  // namespace ttlab

#endif  // TTLAB_YMODEL_HPP
