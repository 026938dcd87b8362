#include "ttlab/ttt.hpp"

#include <cmath>
#include <utility>

#include "ttlab/common.hpp"
#include "ttlab/graph.hpp"
#include "ttlab/selfsup.hpp"

namespace ttlab {
namespace {

void check_image(const YModel& model, const Tensor& image) {
  const YModelConfig& c = model.config;
  if (image.rank() != 3 || image.dim(0) != c.in_channels ||
      image.dim(1) != c.in_height || image.dim(2) != c.in_width) {
    throw ShapeError("test image " + image.shape_string() +
                     " does not match the model input [" +
                     std::to_string(c.in_channels) + "," +
                     std::to_string(c.in_height) + "," +
                     std::to_string(c.in_width) + "]");
  }
}

// One adaptation episode, in place. Fills the diagnostics and leaves the
// model ready for prediction.
TTTDiagnostics run_episode(YModel& model, const Tensor& image,
                           const TTTConfig& cfg, std::mt19937& rng) {
  TTTDiagnostics diag;
  diag.pre_ssl_loss = ssl_sample_loss(model, image);
  if (cfg.threshold.has_value() &&
      !(diag.pre_ssl_loss > *cfg.threshold)) {
    diag.post_ssl_loss = diag.pre_ssl_loss;
    diag.adapted = false;
    return diag;
  }

  const SgdConfig opt = cfg.sgd();
  const ParamMask mask = cfg.scope_mask();
  const bool ssl_trainable = cfg.update_scope == UpdateScope::extractor_and_ssl;
  // Every episode starts from standstill, whatever the tape held before.
  model.tape.reset_momentum();

  const int steps = cfg.effective_steps();
  for (int step = 0; step < steps; ++step) {
    // A fresh augmented batch per step, like a fresh minibatch draw.
    RotationBatch batch = make_test_batch(image, cfg.copies, rng);
    Graph g;
    Value x = g.input(std::move(batch.images));
    Value feat = forward_extractor(g, model, x, true);
    Value logits = forward_branch(g, model, feat, Branch::ssl, ssl_trainable);
    Value loss = g.softmax_cross_entropy(logits, batch.rotation_labels);
    g.backward(loss);
    sgd_step(model.tape, opt, mask);
  }

  diag.post_ssl_loss = ssl_sample_loss(model, image);
  diag.adapted = true;
  return diag;
}

}  // namespace

// Measured on the fixed, augmentation-free 4-rotation batch so gate
// decisions and pre/post diagnostics reflect the objective itself rather
// than augmentation noise.
float ssl_sample_loss(YModel& model, const Tensor& image) {
  check_image(model, image);
  std::mt19937 unused(0);
  RotationBatch batch = make_test_batch(image, 1, unused, false);
  Graph g;
  Value x = g.input(std::move(batch.images));
  Value feat = forward_extractor(g, model, x, false);
  Value logits = forward_branch(g, model, feat, Branch::ssl, false);
  Value loss = g.softmax_cross_entropy(logits, batch.rotation_labels);
  return g.value(loss)[0];
}

int TTTConfig::effective_steps() const {
  if (steps.has_value()) return *steps;
  return mode == TTTMode::standard ? 10 : 1;
}

void TTTConfig::validate() const {
  if (steps.has_value() && *steps < 0) {
    throw ConfigError("ttt steps must be >= 0, got " + std::to_string(*steps));
  }
  if (!(learning_rate > 0.f) || !std::isfinite(learning_rate)) {
    throw ConfigError("ttt learning rate must be a positive real, got " +
                      std::to_string(learning_rate));
  }
  if (copies < 1) {
    throw ConfigError("ttt copies must be >= 1, got " +
                      std::to_string(copies));
  }
  if (threshold.has_value() && std::isnan(*threshold)) {
    throw ConfigError("ttt threshold must not be NaN");
  }
}

SgdConfig TTTConfig::sgd() const {
  return SgdConfig{learning_rate, 0.f, 0.f};
}

ParamMask TTTConfig::scope_mask() const {
  if (update_scope == UpdateScope::extractor_and_ssl) {
    return mask_any({"extractor/", "ssl/"});
  }
  return mask_prefix("extractor/");
}

bool ssl_gate(YModel& model, const Tensor& image, float threshold) {
  return ssl_sample_loss(model, image) > threshold;
}

TTTResult ttt_predict_standard(const YModel& model, const Tensor& image,
                               const TTTConfig& cfg, std::mt19937& rng) {
  cfg.validate();
  if (cfg.mode != TTTMode::standard) {
    throw ConfigError("ttt_predict_standard requires standard mode");
  }
  check_image(model, image);

  YModel episode{model.config, model.tape.clone()};
  TTTResult result;
  result.diagnostics = run_episode(episode, image, cfg, rng);
  result.prediction = predict(episode, image);
  return result;
}

OnlineState make_online_state(const YModel& model) {
  return OnlineState{YModel{model.config, model.tape.clone()}, 0};
}

TTTResult ttt_predict_online(OnlineState& state, const Tensor& image,
                             const TTTConfig& cfg, std::mt19937& rng) {
  cfg.validate();
  if (cfg.mode != TTTMode::online) {
    throw ConfigError("ttt_predict_online requires online mode");
  }
  check_image(state.model, image);

  TTTResult result;
  result.diagnostics = run_episode(state.model, image, cfg, rng);
  result.prediction = predict(state.model, image);
  state.samples_seen += 1;
  return result;
}

}  // namespace ttlab
