#include "ttlab/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>
#include <string>

#include "ttlab/common.hpp"
#include "ttlab/graph.hpp"
#include "ttlab/rng.hpp"
#include "ttlab/selfsup.hpp"
#include "ttlab/theory.hpp"

namespace ttlab {
namespace {

constexpr int kBatchSize = 64;
// Clean-train subsample used for the per-epoch accuracy and, under
// main_only, the monitored rotation loss.
constexpr std::int64_t kProbeSamples = 2000;
constexpr std::int64_t kForwardChunk = 256;

// Tags for deriving independent seed streams. Far above any sample
// index, so they never collide with per-sample substreams.
constexpr std::uint64_t kShuffleTag = 0x74746c2d73687566ULL;
constexpr std::uint64_t kGradualTag = 0x74746c2d67726164ULL;

void check_dataset_model(const YModel& model, const Dataset& ds) {
  const YModelConfig& c = model.config;
  if (ds.images.dim(1) != c.in_channels || ds.images.dim(2) != c.in_height ||
      ds.images.dim(3) != c.in_width) {
    throw ShapeError("dataset images " + ds.images.shape_string() +
                     " do not match the model input [" +
                     std::to_string(c.in_channels) + "," +
                     std::to_string(c.in_height) + "," +
                     std::to_string(c.in_width) + "]");
  }
  if (ds.num_classes() != c.main_classes) {
    throw ConfigError("dataset has " + std::to_string(ds.num_classes()) +
                      " classes, model expects " +
                      std::to_string(c.main_classes));
  }
}

// Learning rate for one epoch: base until 60% of the budget, then 5x
// smaller, then 5x smaller again from 85%. Runs too short for a
// schedule keep the base rate throughout.
float epoch_lr(float base, int epoch, int total_epochs) {
  if (total_epochs < 5) return base;
  const auto total = static_cast<std::int64_t>(total_epochs);
  const int first_drop = static_cast<int>((total * 6) / 10);
  const int second_drop =
      std::max(first_drop + 1, static_cast<int>((total * 85) / 100));
  float lr = base;
  if (epoch >= first_drop) lr *= 0.2f;
  if (epoch >= second_drop) lr *= 0.2f;
  return lr;
}

// Top-1 accuracy of the main head over the first few thousand clean
// training images, evaluated in forward chunks.
float probe_accuracy(YModel& model, const Dataset& ds) {
  const std::int64_t n = std::min<std::int64_t>(kProbeSamples, ds.size());
  std::int64_t hits = 0;
  for (std::int64_t start = 0; start < n; start += kForwardChunk) {
    const std::int64_t m = std::min<std::int64_t>(kForwardChunk, n - start);
    Tensor chunk({m, ds.images.dim(1), ds.images.dim(2), ds.images.dim(3)});
    for (std::int64_t i = 0; i < m; ++i) {
      set_outer(chunk, i, slice_outer(ds.images, start + i));
    }
    const std::vector<std::int64_t> pred = argmax_rows(main_logits(model, chunk));
    for (std::int64_t i = 0; i < m; ++i) {
      hits += pred[i] == ds.labels[start + i];
    }
  }
  return static_cast<float>(hits) / static_cast<float>(n);
}

// Rotation loss over a deterministic probe batch: image i rotated by
// i mod 4. Cheap monitor for the ssl branch when training main_only.
float probe_ssl_loss(YModel& model, const Dataset& ds) {
  const std::int64_t n = std::min<std::int64_t>(kForwardChunk, ds.size());
  Tensor batch({n, ds.images.dim(1), ds.images.dim(2), ds.images.dim(3)});
  std::vector<std::int64_t> labels(n);
  for (std::int64_t i = 0; i < n; ++i) {
    labels[i] = i % 4;
    set_outer(batch, i, rotate90(slice_outer(ds.images, i), static_cast<int>(labels[i])));
  }
  const std::vector<float> losses =
      softmax_ce_per_sample(ssl_logits(model, batch), labels);
  return std::accumulate(losses.begin(), losses.end(), 0.f) /
         static_cast<float>(n);
}

// One main-only SGD step on an already-augmented batch.
JointLossValue main_only_step(YModel& model, const Tensor& batch,
                              const std::vector<std::int64_t>& labels,
                              const SgdConfig& opt) {
  Graph g;
  Value x = g.input(batch);
  Value feat = forward_extractor(g, model, x, true);
  Value logits = forward_branch(g, model, feat, Branch::main, true);
  Value loss = g.softmax_cross_entropy(logits, labels);
  g.backward(loss);
  const float lm = g.value(loss)[0];
  sgd_step(model.tape, opt);
  return JointLossValue{lm, 0.f};
}

}  // namespace

TrainResult train_joint(YModel& model, const Dataset& train, int epochs,
                        const SgdConfig& sgd, std::uint64_t seed,
                        TrainObjective objective) {
  if (epochs < 0) {
    throw ConfigError("epochs must be >= 0, got " + std::to_string(epochs));
  }
  sgd.validate();
  train.validate();
  check_dataset_model(model, train);

  TrainResult result;
  result.final_lr = sgd.learning_rate;
  if (epochs == 0) return result;

  const std::int64_t n = train.size();
  const std::int64_t channels = train.images.dim(1);
  const std::int64_t height = train.images.dim(2);
  const std::int64_t width = train.images.dim(3);

  // Last state known to be finite; restored if a batch loss blows up.
  ParamTape last_good = model.tape.clone();

  std::vector<std::int64_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < epochs; ++epoch) {
    SgdConfig opt = sgd;
    opt.learning_rate = epoch_lr(sgd.learning_rate, epoch, epochs);
    result.final_lr = opt.learning_rate;

    std::mt19937 rng = make_rng(seed, static_cast<std::uint64_t>(epoch));
    std::shuffle(order.begin(), order.end(), rng);

    double main_sum = 0.0;
    double ssl_sum = 0.0;
    std::int64_t seen = 0;
    for (std::int64_t start = 0; start < n; start += kBatchSize) {
      const std::int64_t m = std::min<std::int64_t>(kBatchSize, n - start);
      Tensor batch({m, channels, height, width});
      std::vector<std::int64_t> labels(m);
      // Random crops only. The glyph classes are not mirror-invariant
      // (a flipped hook reads as an ell), so horizontal flips feed the
      // main task contradictory supervision and stall it.
      std::uniform_int_distribution<int> off(0, 8);
      for (std::int64_t i = 0; i < m; ++i) {
        const std::int64_t idx = order[start + i];
        set_outer(batch, i,
                  augment_with(slice_outer(train.images, idx), 4, off(rng),
                               off(rng), false));
        labels[i] = train.labels[idx];
      }

      JointLossValue losses;
      if (objective == TrainObjective::joint) {
        losses = joint_loss(model, batch, labels, rng, true);
        sgd_step(model.tape, opt);
      } else {
        losses = main_only_step(model, batch, labels, opt);
      }

      if (!std::isfinite(losses.main_loss) || !std::isfinite(losses.ssl_loss)) {
        model.tape = last_good.clone();
        result.diverged = true;
        return result;
      }
      main_sum += static_cast<double>(losses.main_loss) * m;
      ssl_sum += static_cast<double>(losses.ssl_loss) * m;
      seen += m;
    }

    TrainHistoryRow row;
    row.epoch = epoch;
    row.main_loss = static_cast<float>(main_sum / seen);
    row.ssl_loss = objective == TrainObjective::joint
                       ? static_cast<float>(ssl_sum / seen)
                       : probe_ssl_loss(model, train);
    row.train_accuracy = probe_accuracy(model, train);
    result.history.push_back(row);
    result.completed_epochs = epoch + 1;
    last_good = model.tape.clone();
  }
  return result;
}

std::string_view eval_mode_name(EvalMode mode) {
  switch (mode) {
    case EvalMode::baseline: return "baseline";
    case EvalMode::joint_fixed: return "joint_fixed";
    case EvalMode::ttt: return "ttt";
    case EvalMode::ttt_online: return "ttt_online";
  }
  throw ConfigError("unknown eval mode");
}

EvalMode parse_eval_mode(std::string_view name) {
  if (name == "baseline") return EvalMode::baseline;
  if (name == "joint" || name == "joint_fixed") return EvalMode::joint_fixed;
  if (name == "ttt") return EvalMode::ttt;
  if (name == "ttt-online" || name == "ttt_online") return EvalMode::ttt_online;
  throw ConfigError("unknown eval mode '" + std::string(name) +
                    "' (expected baseline, joint, ttt or ttt-online)");
}

namespace {

std::vector<EvalRecord> evaluate_impl(const YModel& model, const Dataset& test,
                                      EvalMode mode, const TTTConfig& cfg,
                                      std::uint64_t seed,
                                      bool with_inner_product,
                                      bool shuffle_online) {
  test.validate();
  check_dataset_model(model, test);

  TTTConfig episode_cfg = cfg;
  episode_cfg.mode =
      mode == EvalMode::ttt_online ? TTTMode::online : TTTMode::standard;
  if (mode == EvalMode::ttt || mode == EvalMode::ttt_online) {
    episode_cfg.validate();
  }

  // Never adapted; serves fixed-mode prediction and the inner-product
  // measurement, which is defined at the trained parameters.
  YModel probe{model.config, model.tape.clone()};

  const std::int64_t n = test.size();
  std::vector<std::int64_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  if (mode == EvalMode::ttt_online && shuffle_online) {
    std::mt19937 shuffle_rng = make_rng(seed, kShuffleTag);
    std::shuffle(order.begin(), order.end(), shuffle_rng);
  }

  OnlineState state;
  if (mode == EvalMode::ttt_online) state = make_online_state(model);

  std::vector<EvalRecord> records;
  records.reserve(n);
  for (std::int64_t t = 0; t < n; ++t) {
    const std::int64_t idx = order[t];
    const Tensor image = slice_outer(test.images, idx);

    EvalRecord rec;
    rec.index = idx;
    rec.mode = mode;
    rec.label = test.labels[idx];

    const auto started = std::chrono::steady_clock::now();
    std::mt19937 rng = make_rng(seed, static_cast<std::uint64_t>(idx));
    switch (mode) {
      case EvalMode::baseline:
      case EvalMode::joint_fixed: {
        rec.prediction = predict(probe, image).label;
        const float ls = ssl_sample_loss(probe, image);
        rec.pre_ssl_loss = ls;
        rec.post_ssl_loss = ls;
        break;
      }
      case EvalMode::ttt: {
        const TTTResult r = ttt_predict_standard(model, image, episode_cfg, rng);
        rec.prediction = r.prediction.label;
        rec.pre_ssl_loss = r.diagnostics.pre_ssl_loss;
        rec.post_ssl_loss = r.diagnostics.post_ssl_loss;
        break;
      }
      case EvalMode::ttt_online: {
        const TTTResult r = ttt_predict_online(state, image, episode_cfg, rng);
        rec.prediction = r.prediction.label;
        rec.pre_ssl_loss = r.diagnostics.pre_ssl_loss;
        rec.post_ssl_loss = r.diagnostics.post_ssl_loss;
        break;
      }
    }
    if (with_inner_product) {
      rec.inner_product = grad_inner_product(probe, image, rec.label);
    }
    rec.seconds = std::chrono::duration<double>(
                      std::chrono::steady_clock::now() - started)
                      .count();
    records.push_back(std::move(rec));
  }
  return records;
}

}  // namespace

std::vector<EvalRecord> evaluate(const YModel& model, const Dataset& test,
                                 EvalMode mode, const TTTConfig& cfg,
                                 std::uint64_t seed, bool with_inner_product) {
  return evaluate_impl(model, test, mode, cfg, seed, with_inner_product, true);
}

double error_rate(const std::vector<EvalRecord>& records) {
  if (records.empty()) {
    throw InputError("error_rate: no records");
  }
  std::int64_t wrong = 0;
  for (const EvalRecord& r : records) wrong += r.prediction != r.label;
  return static_cast<double>(wrong) / static_cast<double>(records.size());
}

std::vector<double> sliding_window_accuracy(
    const std::vector<EvalRecord>& records, int window) {
  if (window < 1) {
    throw ConfigError("window must be >= 1, got " + std::to_string(window));
  }
  if (records.empty()) {
    throw InputError("sliding_window_accuracy: no records");
  }
  const std::int64_t n = static_cast<std::int64_t>(records.size());
  const std::int64_t w = std::min<std::int64_t>(window, n);
  const std::int64_t count = std::max<std::int64_t>(1, n - window + 1);

  // Prefix sums of correctness, so each window is O(1).
  std::vector<std::int64_t> prefix(n + 1, 0);
  for (std::int64_t i = 0; i < n; ++i) {
    prefix[i + 1] = prefix[i] + (records[i].prediction == records[i].label);
  }
  std::vector<double> out(count);
  for (std::int64_t t = 0; t < count; ++t) {
    out[t] = static_cast<double>(prefix[t + w] - prefix[t]) /
             static_cast<double>(w);
  }
  return out;
}

LinearFit correlate(const std::vector<std::pair<double, double>>& points) {
  if (points.size() < 3) {
    throw InputError("correlate: need at least 3 points, got " +
                     std::to_string(points.size()));
  }
  const double n = static_cast<double>(points.size());
  double mx = 0, my = 0;
  for (const auto& [x, y] : points) {
    mx += x;
    my += y;
  }
  mx /= n;
  my /= n;
  double sxx = 0, syy = 0, sxy = 0;
  for (const auto& [x, y] : points) {
    sxx += (x - mx) * (x - mx);
    syy += (y - my) * (y - my);
    sxy += (x - mx) * (y - my);
  }
  if (sxx == 0.0) {
    throw InputError("correlate: all x values are equal, fit is undefined");
  }
  LinearFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  // Constant y carries no linear association; report r = 0 rather than 0/0.
  fit.r = syy > 0.0 ? sxy / std::sqrt(sxx * syy) : 0.0;
  return fit;
}

Dataset corrupt_dataset(const Dataset& ds, CorruptionKind kind, double param,
                        std::uint64_t seed) {
  ds.validate();
  Dataset out = ds;
  for (std::int64_t i = 0; i < ds.size(); ++i) {
    const CorruptionSpec spec{kind, param,
                              derive_seed(seed, static_cast<std::uint64_t>(i))};
    set_outer(out.images, i, corrupt(slice_outer(ds.images, i), spec));
  }
  return out;
}

Dataset corrupt_dataset_level(const Dataset& ds, CorruptionKind kind,
                              int level, std::uint64_t seed) {
  return corrupt_dataset(ds, kind, severity_params(kind, level), seed);
}

Dataset gradual_stream(const Dataset& ds, CorruptionKind kind, std::int64_t n,
                       std::uint64_t seed) {
  ds.validate();
  if (n > ds.size()) {
    throw InputError("gradual stream of " + std::to_string(n) +
                     " samples exceeds the dataset of " +
                     std::to_string(ds.size()));
  }
  const ShiftSchedule schedule = gradual_schedule(kind, n);
  Dataset out = head_subset(ds, n);
  for (std::int64_t t = 0; t < n; ++t) {
    const CorruptionSpec spec{kind, schedule.params[t],
                              derive_seed(seed, static_cast<std::uint64_t>(t))};
    set_outer(out.images, t, corrupt(slice_outer(out.images, t), spec));
  }
  return out;
}

Dataset shuffled(const Dataset& ds, std::uint64_t seed) {
  ds.validate();
  std::vector<std::int64_t> order(ds.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937 rng = make_rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  Dataset out = ds;
  for (std::int64_t i = 0; i < ds.size(); ++i) {
    set_outer(out.images, i, slice_outer(ds.images, order[i]));
    out.labels[i] = ds.labels[order[i]];
  }
  return out;
}

Dataset head_subset(const Dataset& ds, std::int64_t n) {
  ds.validate();
  if (n < 1 || n > ds.size()) {
    throw InputError("subset of " + std::to_string(n) +
                     " samples out of range for dataset of " +
                     std::to_string(ds.size()));
  }
  Dataset out;
  out.images = Tensor({n, ds.images.dim(1), ds.images.dim(2), ds.images.dim(3)});
  for (std::int64_t i = 0; i < n; ++i) {
    set_outer(out.images, i, slice_outer(ds.images, i));
  }
  out.labels.assign(ds.labels.begin(), ds.labels.begin() + n);
  out.class_names = ds.class_names;
  out.provenance = ds.provenance;
  out.seed = ds.seed;
  return out;
}

std::vector<EvalRecord> evaluate_gradual(const YModel& model,
                                         const Dataset& test,
                                         CorruptionKind kind, std::int64_t n,
                                         EvalMode mode, const TTTConfig& cfg,
                                         std::uint64_t seed) {
  // The stream is shuffled here, before the severity ramp is applied, so
  // the ramp stays intact; the evaluation below must keep this order.
  const Dataset stream = gradual_stream(shuffled(test, derive_seed(seed, kShuffleTag)),
                                        kind, n, derive_seed(seed, kGradualTag));
  return evaluate_impl(model, stream, mode, cfg, seed, false, false);
}

std::vector<CorrelationSetting> correlation_study(
    const YModel& model, const Dataset& test,
    const std::vector<std::pair<CorruptionKind, int>>& settings,
    const TTTConfig& cfg, std::uint64_t seed) {
  if (settings.empty()) {
    throw InputError("correlation study needs at least one setting");
  }
  std::vector<CorrelationSetting> out;
  out.reserve(settings.size());
  for (const auto& [kind, level] : settings) {
    const std::uint64_t tag =
        (static_cast<std::uint64_t>(kind) << 8) |
        static_cast<std::uint64_t>(level);
    const Dataset corrupted =
        corrupt_dataset_level(test, kind, level, derive_seed(seed, 0x10000 + tag));
    const std::vector<EvalRecord> fixed =
        evaluate(model, corrupted, EvalMode::joint_fixed, cfg,
                 derive_seed(seed, 0x20000 + tag), true);
    const std::vector<EvalRecord> adapted =
        evaluate(model, corrupted, EvalMode::ttt, cfg,
                 derive_seed(seed, 0x30000 + tag), false);

    CorrelationSetting s;
    s.kind = kind;
    s.level = level;
    double ip_sum = 0.0;
    for (const EvalRecord& r : fixed) ip_sum += r.inner_product.value();
    s.mean_inner_product = ip_sum / static_cast<double>(fixed.size());
    s.error_joint = error_rate(fixed);
    s.error_ttt = error_rate(adapted);
    s.improvement = s.error_joint - s.error_ttt;
    out.push_back(s);
  }
  return out;
}

std::vector<std::pair<double, double>> study_points(
    const std::vector<CorrelationSetting>& settings) {
  std::vector<std::pair<double, double>> points;
  points.reserve(settings.size());
  for (const CorrelationSetting& s : settings) {
    points.emplace_back(s.mean_inner_product, s.improvement);
  }
  return points;
}

void write_eval_csv(std::ostream& out,
                    const std::vector<EvalRecord>& records) {
  out << "index,mode,prediction,label,pre_ssl_loss,post_ssl_loss,"
         "inner_product,seconds\n";
  out << std::setprecision(17);
  for (const EvalRecord& r : records) {
    out << r.index << ',' << eval_mode_name(r.mode) << ',' << r.prediction
        << ',' << r.label << ',' << r.pre_ssl_loss << ',' << r.post_ssl_loss
        << ',';
    if (r.inner_product.has_value()) out << *r.inner_product;
    out << ',' << r.seconds << '\n';
  }
}

void write_history_csv(std::ostream& out,
                       const std::vector<TrainHistoryRow>& history) {
  out << "epoch,main_loss,ssl_loss,train_accuracy\n";
  out << std::setprecision(17);
  for (const TrainHistoryRow& row : history) {
    out << row.epoch << ',' << row.main_loss << ',' << row.ssl_loss << ','
        << row.train_accuracy << '\n';
  }
}

void write_points_csv(std::ostream& out,
                      const std::vector<CorrelationSetting>& settings) {
  out << "kind,level,mean_inner_product,error_joint,error_ttt,improvement\n";
  out << std::setprecision(17);
  for (const CorrelationSetting& s : settings) {
    out << corruption_kind_name(s.kind) << ',' << s.level << ','
        << s.mean_inner_product << ',' << s.error_joint << ',' << s.error_ttt
        << ',' << s.improvement << '\n';
  }
}

std::vector<std::pair<double, double>> read_points_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) {
    throw IoError("points csv: missing header row");
  }
  std::vector<std::string> columns;
  {
    std::stringstream header(line);
    std::string cell;
    while (std::getline(header, cell, ',')) columns.push_back(cell);
  }
  const auto find_column = [&](const std::string& name) {
    const auto it = std::find(columns.begin(), columns.end(), name);
    if (it == columns.end()) {
      throw IoError("points csv: header lacks column '" + name + "'");
    }
    return static_cast<std::size_t>(it - columns.begin());
  };
  const std::size_t x_col = find_column("mean_inner_product");
  const std::size_t y_col = find_column("improvement");

  std::vector<std::pair<double, double>> points;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream row(line);
    std::string cell;
    while (std::getline(row, cell, ',')) cells.push_back(cell);
    if (cells.size() != columns.size()) {
      throw IoError("points csv: line " + std::to_string(line_no) + " has " +
                    std::to_string(cells.size()) + " cells, header has " +
                    std::to_string(columns.size()));
    }
    try {
      points.emplace_back(std::stod(cells[x_col]), std::stod(cells[y_col]));
    } catch (const std::exception&) {
      throw IoError("points csv: line " + std::to_string(line_no) +
                    " is not numeric");
    }
  }
  return points;
}

}  // namespace ttlab
