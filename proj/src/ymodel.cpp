#include "ttlab/ymodel.hpp"

#include <cmath>

#include "ttlab/rng.hpp"
#include "ttlab/selfsup.hpp"

namespace ttlab {

void YModelConfig::validate() const {
  if (in_channels < 1 || in_height < 1 || in_width < 1) {
    throw ConfigError("model input shape must be positive");
  }
  if (in_height != in_width) {
    throw ConfigError("model input must be square for the rotation task");
  }
  if (blocks.empty()) throw ConfigError("model needs at least one block");
  for (const Block& b : blocks) {
    if (b.channels < 1) throw ConfigError("block channels must be positive");
    if (b.stride < 1) throw ConfigError("block stride must be >= 1");
    if (b.groups < 1 || b.channels % b.groups != 0) {
      throw ConfigError("block channels " + std::to_string(b.channels) +
                        " not divisible by norm groups " +
                        std::to_string(b.groups));
    }
  }
  if (split_index < 1 || split_index > static_cast<int>(blocks.size())) {
    throw ConfigError("split_index " + std::to_string(split_index) +
                      " outside [1," + std::to_string(blocks.size()) + "]");
  }
  if (main_classes < 2) throw ConfigError("main_classes must be >= 2");
  if (ssl_classes != 4) {
    throw ConfigError("ssl_classes is fixed at 4 by the rotation task");
  }
  if (head_spatial() < 1) {
    throw ConfigError("block strides collapse the spatial extent to nothing");
  }
}

std::int64_t YModelConfig::head_spatial() const {
  std::int64_t s = in_height;
  for (const Block& b : blocks) {
    // conv3x3 with padding 1
    s = (s - 1) / b.stride + 1;
    if (s < 1) return 0;
  }
  return s;
}

namespace {

Tensor uniform_tensor(std::vector<std::int64_t> shape, float bound,
                      std::mt19937& rng) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<float> dist(-bound, bound);
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = dist(rng);
  return t;
}

void add_block(ParamTape& tape, const std::string& prefix, std::int64_t cin,
               std::int64_t cout, std::mt19937& rng) {
  const float bound = std::sqrt(6.0f / static_cast<float>(cin * 9));
  tape.add(prefix + "conv/w", uniform_tensor({cout, cin, 3, 3}, bound, rng));
  tape.add(prefix + "gn/gamma", Tensor({cout}, 1.f));
  tape.add(prefix + "gn/beta", Tensor({cout}, 0.f));
}

void add_head(ParamTape& tape, const std::string& prefix, std::int64_t dim,
              std::int64_t classes, std::mt19937& rng) {
  const float bound = 1.0f / std::sqrt(static_cast<float>(dim));
  tape.add(prefix + "head/w", uniform_tensor({classes, dim}, bound, rng));
  tape.add(prefix + "head/b", Tensor({classes}, 0.f));
}

std::string block_prefix(const char* owner, std::size_t index) {
  return std::string(owner) + "block" + std::to_string(index + 1) + "/";
}

std::vector<float> softmax_row(const float* row, std::int64_t n) {
  float mx = row[0];
  for (std::int64_t i = 1; i < n; ++i) mx = std::max(mx, row[i]);
  std::vector<float> out(n);
  float denom = 0.f;
  for (std::int64_t i = 0; i < n; ++i) {
    out[i] = std::exp(row[i] - mx);
    denom += out[i];
  }
  for (std::int64_t i = 0; i < n; ++i) out[i] /= denom;
  return out;
}

void check_batch_shape(const YModelConfig& cfg, const Tensor& images,
                       const char* who) {
  if (images.rank() != 4 || images.dim(1) != cfg.in_channels ||
      images.dim(2) != cfg.in_height || images.dim(3) != cfg.in_width) {
    throw InputError(std::string(who) + ": batch " + images.shape_string() +
                     " does not match model input [N," +
                     std::to_string(cfg.in_channels) + "," +
                     std::to_string(cfg.in_height) + "," +
                     std::to_string(cfg.in_width) + "]");
  }
}

}  // namespace

YModel build_model(const YModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  YModel model;
  model.config = cfg;
  auto rng = make_rng(seed);
  const std::size_t nblocks = cfg.blocks.size();
  const std::size_t split = static_cast<std::size_t>(cfg.split_index);

  std::int64_t cin = cfg.in_channels;
  std::vector<std::int64_t> widths(nblocks + 1);
  widths[0] = cin;
  for (std::size_t i = 0; i < nblocks; ++i) widths[i + 1] = cfg.blocks[i].channels;

  for (std::size_t i = 0; i < split; ++i) {
    add_block(model.tape, block_prefix("extractor/", i), widths[i],
              widths[i + 1], rng);
  }
  for (const char* owner : {"main/", "ssl/"}) {
    for (std::size_t i = split; i < nblocks; ++i) {
      add_block(model.tape, block_prefix(owner, i), widths[i], widths[i + 1],
                rng);
    }
    const std::int64_t classes =
        owner[0] == 'm' ? cfg.main_classes : cfg.ssl_classes;
    add_head(model.tape, owner, widths[nblocks], classes, rng);
  }
  return model;
}

Value forward_extractor(Graph& g, YModel& model, Value x, bool trainable) {
  Value h = x;
  const std::size_t split = static_cast<std::size_t>(model.config.split_index);
  for (std::size_t i = 0; i < split; ++i) {
    const auto& b = model.config.blocks[i];
    const std::string p = block_prefix("extractor/", i);
    h = g.conv2d(h, g.param(model.tape, p + "conv/w", trainable), b.stride, 1);
    h = g.group_norm(h, b.groups, g.param(model.tape, p + "gn/gamma", trainable),
                     g.param(model.tape, p + "gn/beta", trainable));
    h = g.relu(h);
  }
  return h;
}

Value forward_branch(Graph& g, YModel& model, Value features, Branch branch,
                     bool trainable) {
  const char* owner = branch == Branch::main ? "main/" : "ssl/";
  Value h = features;
  const std::size_t split = static_cast<std::size_t>(model.config.split_index);
  for (std::size_t i = split; i < model.config.blocks.size(); ++i) {
    const auto& b = model.config.blocks[i];
    const std::string p = block_prefix(owner, i);
    h = g.conv2d(h, g.param(model.tape, p + "conv/w", trainable), b.stride, 1);
    h = g.group_norm(h, b.groups, g.param(model.tape, p + "gn/gamma", trainable),
                     g.param(model.tape, p + "gn/beta", trainable));
    h = g.relu(h);
  }
  const std::int64_t side = g.value(h).dim(2);
  h = g.avg_pool2d(h, static_cast<int>(side), static_cast<int>(side));
  const std::int64_t n = g.value(h).dim(0);
  const std::int64_t width = g.value(h).dim(1);
  h = g.reshape(h, {n, width});
  const std::string owner_str(owner);
  return g.linear(h, g.param(model.tape, owner_str + "head/w", trainable),
                  g.param(model.tape, owner_str + "head/b", trainable));
}

namespace {

Tensor branch_logits(YModel& model, const Tensor& images, Branch branch) {
  check_batch_shape(model.config, images, "logits");
  Graph g;
  Value x = g.input(images);
  Value h = forward_extractor(g, model, x, false);
  Value logits = forward_branch(g, model, h, branch, false);
  return g.value(logits);
}

}  // namespace

Tensor main_logits(YModel& model, const Tensor& images) {
  return branch_logits(model, images, Branch::main);
}

Tensor ssl_logits(YModel& model, const Tensor& images) {
  return branch_logits(model, images, Branch::ssl);
}

Prediction predict(YModel& model, const Tensor& image) {
  if (image.rank() != 3) {
    throw InputError("predict: expected a [C,H,W] image, got " +
                     image.shape_string());
  }
  Tensor batch = image.reshaped({1, image.dim(0), image.dim(1), image.dim(2)});
  Tensor logits = main_logits(model, batch);
  Prediction out;
  out.probs = softmax_row(logits.data(), logits.dim(1));
  out.label = argmax_rows(logits)[0];
  return out;
}

JointLossValue joint_loss(YModel& model, const Tensor& images,
                          const std::vector<std::int64_t>& labels,
                          std::mt19937& rng, bool with_grads) {
  check_batch_shape(model.config, images, "joint_loss");
  const std::int64_t n = images.dim(0);
  if (static_cast<std::int64_t>(labels.size()) != n) {
    throw InputError("joint_loss: " + std::to_string(labels.size()) +
                     " labels for a batch of " + std::to_string(n));
  }

  // One random rotation per image gives the SSL branch its four-way
  // classification problem on transforms of the very same batch.
  Tensor rotated(images.shape());
  std::vector<std::int64_t> rot_labels(n);
  std::uniform_int_distribution<int> pick(0, 3);
  for (std::int64_t i = 0; i < n; ++i) {
    const int k = pick(rng);
    rot_labels[i] = k;
    set_outer(rotated, i, rotate90(slice_outer(images, i), k));
  }

  Graph g;
  Value feat_main = forward_extractor(g, model, g.input(images), with_grads);
  Value logits_main =
      forward_branch(g, model, feat_main, Branch::main, with_grads);
  Value l_m = g.softmax_cross_entropy(logits_main, labels);

  Value feat_ssl =
      forward_extractor(g, model, g.input(std::move(rotated)), with_grads);
  Value logits_ssl =
      forward_branch(g, model, feat_ssl, Branch::ssl, with_grads);
  Value l_s = g.softmax_cross_entropy(logits_ssl, rot_labels);

  JointLossValue out;
  out.main_loss = g.value(l_m)[0];
  out.ssl_loss = g.value(l_s)[0];
  if (with_grads) g.backward(g.add(l_m, l_s));
  return out;
}

}  // namespace ttlab
