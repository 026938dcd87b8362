#ifndef TTLAB_HARNESS_HPP
#define TTLAB_HARNESS_HPP

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ttlab/corruptions.hpp"
#include "ttlab/data.hpp"
#include "ttlab/tape.hpp"
#include "ttlab/ttt.hpp"
#include "ttlab/ymodel.hpp"

namespace ttlab {

/// What the training loop minimizes. The joint objective is the sum of
/// the main and rotation losses; main_only realizes the plain baseline
/// system, leaving the ssl branch at its initialization.
enum class TrainObjective { joint, main_only };

struct TrainHistoryRow {
  int epoch = 0;
  float main_loss = 0.f;   // epoch mean over minibatches
  float ssl_loss = 0.f;    // epoch mean; forward-only under main_only
  float train_accuracy = 0.f;
};

struct TrainResult {
  std::vector<TrainHistoryRow> history;
  float final_lr = 0.f;    // learning rate of the last epoch run
  bool diverged = false;   // loss went non-finite; model restored
  int completed_epochs = 0;
};

/// Minibatch SGD on the joint objective with random-crop augmentation.
/// Crops only: the glyph classes are not mirror-invariant, so flips
/// would give the main task contradictory supervision.
/// The learning rate decays by 5x at 60% and again at 85% of the epoch
/// budget. A non-finite batch loss aborts the run and restores the
/// parameters from the end of the last finished epoch.
TrainResult train_joint(YModel& model, const Dataset& train, int epochs,
                        const SgdConfig& sgd, std::uint64_t seed,
                        TrainObjective objective = TrainObjective::joint);

enum class EvalMode { baseline, joint_fixed, ttt, ttt_online };

std::string_view eval_mode_name(EvalMode mode);
// Accepts both internal names and the CLI spellings joint / ttt-online.
EvalMode parse_eval_mode(std::string_view name);

struct EvalRecord {
  std::int64_t index = 0;  // position of the sample in the dataset
  EvalMode mode = EvalMode::baseline;
  std::int64_t prediction = -1;
  std::int64_t label = -1;
  float pre_ssl_loss = 0.f;
  float post_ssl_loss = 0.f;
  std::optional<double> inner_product;
  double seconds = 0.0;
};

/// Runs one evaluation pass. baseline and joint_fixed predict as-is (they
/// differ only in which checkpoint the caller loaded); ttt adapts a clone
/// per sample; ttt_online shuffles the stream first and carries adapted
/// state across it, records emitted in post-shuffle order. Each sample
/// draws its randomness from (seed, dataset index). with_inner_product
/// additionally fills each record with the extractor-gradient inner
/// product measured on the unadapted input model.
std::vector<EvalRecord> evaluate(const YModel& model, const Dataset& test,
                                 EvalMode mode, const TTTConfig& cfg,
                                 std::uint64_t seed,
                                 bool with_inner_product = false);

/// Fraction of records whose prediction misses the label.
double error_rate(const std::vector<EvalRecord>& records);

/// Mean correctness over sliding windows [t, t+window). Streams shorter
/// than the window yield one window over the whole stream; output length
/// is max(1, N - window + 1).
std::vector<double> sliding_window_accuracy(
    const std::vector<EvalRecord>& records, int window = 100);

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r = 0.0;
};

/// Least-squares line plus Pearson r for (x, y) points. Needs at least
/// three points; all-equal x leaves the fit undefined and throws.
LinearFit correlate(const std::vector<std::pair<double, double>>& points);

/// Applies one corruption spec across a dataset, seeding each image from
/// (seed, index) so single images can be re-derived independently.
Dataset corrupt_dataset(const Dataset& ds, CorruptionKind kind, double param,
                        std::uint64_t seed);
Dataset corrupt_dataset_level(const Dataset& ds, CorruptionKind kind,
                              int level, std::uint64_t seed);

/// First n samples corrupted with the kind's gradual schedule: position t
/// gets the t-th interpolated parameter, so severity ramps from level-1
/// to level-5 strength along the stream. Dataset order is preserved;
/// shuffle beforehand if the stream should be i.i.d. apart from the ramp.
Dataset gradual_stream(const Dataset& ds, CorruptionKind kind, std::int64_t n,
                       std::uint64_t seed);

/// Shuffled copy (images, labels in unison) and a leading subset view.
Dataset shuffled(const Dataset& ds, std::uint64_t seed);
Dataset head_subset(const Dataset& ds, std::int64_t n);

/// Evaluates a gradually shifting stream: shuffles the clean set, takes
/// the first n, applies the gradual ramp, then runs the mode over that
/// stream in ramp order (the shuffle already happened, so online mode
/// must not reshuffle). Identical seed gives joint_fixed and ttt_online
/// the exact same stream for decile-by-decile comparison.
std::vector<EvalRecord> evaluate_gradual(const YModel& model,
                                         const Dataset& test,
                                         CorruptionKind kind, std::int64_t n,
                                         EvalMode mode, const TTTConfig& cfg,
                                         std::uint64_t seed);

/// One corruption setting of the inner-product study: the mean
/// extractor-gradient inner product over the corrupted set, and the
/// error improvement error(joint_fixed) - error(ttt) on it.
struct CorrelationSetting {
  CorruptionKind kind = CorruptionKind::gaussian_noise;
  int level = 1;
  double mean_inner_product = 0.0;
  double error_joint = 0.0;
  double error_ttt = 0.0;
  double improvement = 0.0;
};

std::vector<CorrelationSetting> correlation_study(
    const YModel& model, const Dataset& test,
    const std::vector<std::pair<CorruptionKind, int>>& settings,
    const TTTConfig& cfg, std::uint64_t seed);

std::vector<std::pair<double, double>> study_points(
    const std::vector<CorrelationSetting>& settings);

// CSV emitters. Every writer puts the documented header row first.
void write_eval_csv(std::ostream& out, const std::vector<EvalRecord>& records);
void write_history_csv(std::ostream& out,
                       const std::vector<TrainHistoryRow>& history);
void write_points_csv(std::ostream& out,
                      const std::vector<CorrelationSetting>& settings);
std::vector<std::pair<double, double>> read_points_csv(std::istream& in);

}  // namespace ttlab

#endif  // TTLAB_HARNESS_HPP
