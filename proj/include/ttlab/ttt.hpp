#ifndef TTLAB_TTT_HPP
#define TTLAB_TTT_HPP

#include <cstdint>
#include <optional>
#include <random>

#include "ttlab/tape.hpp"
#include "ttlab/tensor.hpp"
#include "ttlab/ymodel.hpp"

namespace ttlab {

enum class TTTMode { standard, online };
enum class UpdateScope { extractor_only, extractor_and_ssl };

/// Controls the per-sample adaptation episode: take `steps` plain SGD
/// steps on the rotation loss of batches built from the one test image,
/// touching only the parameters the scope admits, then predict.
struct TTTConfig {
  TTTMode mode = TTTMode::standard;
  // Unset means the mode default: 10 steps standard, 1 step online.
  std::optional<int> steps;
  float learning_rate = 1e-3f;
  int copies = 8;  // batch is 4 * copies images, one per rotation
  UpdateScope update_scope = UpdateScope::extractor_only;
  // Adapt only when the sample's rotation loss exceeds this. Unset
  // means always adapt; +inf never fires, -inf always does.
  std::optional<float> threshold;

  int effective_steps() const;
  void validate() const;
  // The adaptation optimizer: plain SGD, no momentum, no weight decay.
  SgdConfig sgd() const;
  ParamMask scope_mask() const;
};

struct TTTDiagnostics {
  float pre_ssl_loss = 0.f;
  float post_ssl_loss = 0.f;
  bool adapted = false;  // false when a threshold gate skipped the episode
};

struct TTTResult {
  Prediction prediction;
  TTTDiagnostics diagnostics;
};

/// Rotation loss of the deterministic, augmentation-free 4-rotation
/// batch of `image`. This is the number the gate thresholds on and what
/// episode diagnostics report as pre/post loss.
float ssl_sample_loss(YModel& model, const Tensor& image);

/// True iff ssl_sample_loss exceeds the threshold, i.e. the sample looks
/// unfamiliar enough to be worth adapting on.
bool ssl_gate(YModel& model, const Tensor& image, float threshold);

/// Standard-mode episode: clone the parameters, adapt the clone on this
/// one image, predict, discard. The caller's model is never touched, so
/// repeated evaluation of the same image is bit-identical.
TTTResult ttt_predict_standard(const YModel& model, const Tensor& image,
                               const TTTConfig& cfg, std::mt19937& rng);

/// Rolling state for the online variant, seeded from a trained model.
/// main/ parameters never change after this point; only extractor/ (and
/// optionally ssl/) drift with the stream.
struct OnlineState {
  YModel model;
  std::int64_t samples_seen = 0;
};

OnlineState make_online_state(const YModel& model);

/// Online-mode episode: adapt the persistent state on this image first,
/// then predict with the updated parameters. Momentum buffers do not
/// carry over between samples.
TTTResult ttt_predict_online(OnlineState& state, const Tensor& image,
                             const TTTConfig& cfg, std::mt19937& rng);

}  // namespace ttlab

#endif  // TTLAB_TTT_HPP
