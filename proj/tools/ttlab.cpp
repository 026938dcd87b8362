// Command-line front end: data generation, joint training, the four
// evaluation modes, corruption materialization, and the theory verifiers.
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "ttlab/checkpoint.hpp"
#include "ttlab/common.hpp"
#include "ttlab/corruptions.hpp"
#include "ttlab/data.hpp"
#include "ttlab/harness.hpp"
#include "ttlab/rng.hpp"
#include "ttlab/theory.hpp"
#include "ttlab/ttt.hpp"
#include "ttlab/ymodel.hpp"

namespace fs = std::filesystem;
using namespace ttlab;

namespace {

constexpr const char* kDataDirEnv = "TTLAB_DATA_DIR";

struct GlobalOpts {
  std::uint64_t seed = 0;
  std::string data_dir;
  std::string checkpoint;
  std::string out_csv;
};

fs::path resolve_data_dir(const GlobalOpts& g) {
  if (!g.data_dir.empty()) return g.data_dir;
  if (const char* env = std::getenv(kDataDirEnv)) return env;
  return ".";
}

fs::path require_checkpoint(const GlobalOpts& g) {
  if (g.checkpoint.empty()) {
    throw CLI::ValidationError("--checkpoint is required for this command");
  }
  return g.checkpoint;
}

std::vector<std::string> synthetic_names(int classes) {
  const auto& all = synthetic_class_names();
  return {all.begin(), all.begin() + classes};
}

Dataset load_split(const GlobalOpts& g, const std::string& dataset,
                   bool train_split, int classes) {
  const fs::path dir = resolve_data_dir(g);
  if (dataset == "cifar10") {
    auto [train, test] = load_cifar10(dir);
    return train_split ? std::move(train) : std::move(test);
  }
  const fs::path file =
      dir / (train_split ? "synthetic_train.bin" : "synthetic_test.bin");
  return load_dataset_binary(file, 3, 32, 32, synthetic_names(classes));
}

std::ofstream open_csv(const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  return out;
}

void print_eval_summary(const std::vector<EvalRecord>& records) {
  double pre = 0, post = 0, secs = 0;
  std::int64_t adapted_down = 0;
  for (const auto& r : records) {
    pre += r.pre_ssl_loss;
    post += r.post_ssl_loss;
    secs += r.seconds;
    if (r.post_ssl_loss <= r.pre_ssl_loss) ++adapted_down;
  }
  const double n = static_cast<double>(records.size());
  std::cout << "samples:            " << records.size() << '\n'
            << "error rate:         " << error_rate(records) << '\n'
            << "mean ssl loss:      " << pre / n << " -> " << post / n << '\n'
            << "ssl non-increase:   " << static_cast<double>(adapted_down) / n
            << '\n'
            << "total eval seconds: " << secs << '\n';
}

int run_gen_data(const GlobalOpts& g, std::int64_t train_n,
                 std::int64_t test_n, int classes) {
  const fs::path dir = resolve_data_dir(g);
  fs::create_directories(dir);
  const Dataset train = gen_synthetic(g.seed, train_n, classes);
  const Dataset test = gen_synthetic(g.seed + 1, test_n, classes);
  save_dataset_binary(train, dir / "synthetic_train.bin");
  save_dataset_binary(test, dir / "synthetic_test.bin");
  std::cout << "wrote " << train.size() << " train / " << test.size()
            << " test samples (" << classes << " classes) to " << dir
            << '\n';
  return 0;
}

int run_train(const GlobalOpts& g, const std::string& dataset, int classes,
              int epochs, float lr, float momentum, float weight_decay,
              const std::string& objective) {
  const fs::path ckpt = require_checkpoint(g);
  const Dataset train = load_split(g, dataset, true, classes);

  YModelConfig cfg;
  cfg.main_classes = train.num_classes();
  YModel model = build_model(cfg, g.seed);

  const SgdConfig sgd{lr, momentum, weight_decay};
  const TrainObjective obj = objective == "main-only"
                                 ? TrainObjective::main_only
                                 : TrainObjective::joint;
  const TrainResult result = train_joint(model, train, epochs, sgd, g.seed,
                                         obj);

  for (const TrainHistoryRow& row : result.history) {
    std::cout << "epoch " << row.epoch << "  main " << row.main_loss
              << "  ssl " << row.ssl_loss << "  acc " << row.train_accuracy
              << '\n';
  }
  if (!g.out_csv.empty()) {
    auto out = open_csv(g.out_csv);
    write_history_csv(out, result.history);
  }

  const TrainMeta meta{result.completed_epochs, result.final_lr, g.seed};
  save_checkpoint(model, meta, ckpt);
  std::cout << "checkpoint: " << ckpt << "  (epochs " << meta.epochs
            << ", final lr " << meta.final_lr << ")\n";
  if (result.diverged) {
    std::cout << "training diverged; checkpoint holds the last finished "
                 "epoch\n";
    return 2;
  }
  return 0;
}

int run_eval(const GlobalOpts& g, const std::string& mode_name,
             const std::string& dataset, int classes,
             const std::string& kind_name, int level, bool gradual,
             std::int64_t subset, const TTTConfig& cli_cfg,
             std::optional<int> steps_flag, double threshold,
             bool with_threshold, const std::string& scope) {
  const Checkpoint ckpt = load_checkpoint(require_checkpoint(g));
  YModel model = ckpt.model;

  Dataset test = load_split(g, dataset, false, classes);
  if (subset > 0) test = head_subset(test, subset);

  const EvalMode mode = parse_eval_mode(mode_name);
  TTTConfig cfg = cli_cfg;
  cfg.mode = mode == EvalMode::ttt_online ? TTTMode::online
                                          : TTTMode::standard;
  cfg.steps = steps_flag;
  if (with_threshold) cfg.threshold = static_cast<float>(threshold);
  cfg.update_scope = scope == "extractor+ssl" ? UpdateScope::extractor_and_ssl
                                              : UpdateScope::extractor_only;

  std::vector<EvalRecord> records;
  if (gradual) {
    const CorruptionKind kind = parse_corruption_kind(kind_name);
    records = evaluate_gradual(model, test, kind, test.size(), mode, cfg,
                               g.seed);
  } else if (!kind_name.empty()) {
    const CorruptionKind kind = parse_corruption_kind(kind_name);
    const Dataset corrupted = corrupt_dataset_level(test, kind, level,
                                                    derive_seed(g.seed, 1));
    records = evaluate(model, corrupted, mode, cfg, g.seed);
  } else {
    records = evaluate(model, test, mode, cfg, g.seed);
  }

  std::cout << "mode: " << eval_mode_name(mode) << '\n';
  print_eval_summary(records);
  if (!g.out_csv.empty()) {
    auto out = open_csv(g.out_csv);
    write_eval_csv(out, records);
  }
  return 0;
}

int run_corrupt(const GlobalOpts& g, const std::string& dataset, int classes,
                const std::string& kind_name, int level, bool gradual,
                std::string out_path) {
  const CorruptionKind kind = parse_corruption_kind(kind_name);
  const Dataset test = load_split(g, dataset, false, classes);

  Dataset result;
  std::string suffix;
  if (gradual) {
    result = gradual_stream(test, kind, test.size(), derive_seed(g.seed, 1));
    suffix = "_gradual";
  } else {
    result = corrupt_dataset_level(test, kind, level, derive_seed(g.seed, 1));
    suffix = "_l" + std::to_string(level);
  }

  if (out_path.empty()) {
    const fs::path dir = resolve_data_dir(g);
    out_path = (dir / ("synthetic_test_" + std::string(kind_name) + suffix +
                       ".bin"))
                   .string();
  }
  save_dataset_binary(result, out_path);
  std::cout << "wrote " << result.size() << " corrupted samples to "
            << out_path << '\n';
  return 0;
}

int run_theory_toy(const GlobalOpts& g, std::int64_t trials) {
  std::mt19937 rng = make_rng(g.seed);
  const ToyFamilyConfig family;
  std::int64_t undefined = 0, violations = 0;
  double worst_ratio = 0.0;
  for (std::int64_t t = 0; t < trials; ++t) {
    const ToyInstance inst = random_toy_instance(family, rng);
    double eta;
    try {
      eta = eta_star(inst);
    } catch (const InputError&) {
      ++undefined;
      continue;
    }
    const double before = toy_losses(inst).main_loss;
    const double after = toy_losses(toy_step(inst, eta)).main_loss;
    const double ratio = after / std::max(1.0, before);
    worst_ratio = std::max(worst_ratio, ratio);
    if (ratio >= 1e-10) ++violations;
  }
  std::cout << "trials:           " << trials << '\n'
            << "eta* undefined:   " << undefined << '\n'
            << "violations:       " << violations << '\n'
            << "worst l_m ratio:  " << worst_ratio << '\n';
  return violations == 0 ? 0 : 1;
}

int run_theory_lemma1(const GlobalOpts& g, std::int64_t instances, double eps,
                      int grid) {
  std::mt19937 rng = make_rng(g.seed);
  const ToyFamilyConfig family;
  std::int64_t checked = 0, inconclusive = 0, failures = 0;
  std::int64_t drawn = 0;
  const std::int64_t cap = instances * 50;
  while (checked < instances && drawn < cap) {
    ++drawn;
    const ToyInstance inst = random_toy_instance(family, rng);
    const std::optional<bool> ok = check_lemma1(inst, eps, grid);
    if (!ok.has_value()) {
      ++inconclusive;
      continue;
    }
    ++checked;
    if (!*ok) ++failures;
  }
  std::cout << "checked:       " << checked << '\n'
            << "inconclusive:  " << inconclusive << '\n'
            << "failures:      " << failures << '\n';
  if (checked < instances) {
    std::cout << "warning: only " << checked << " of " << instances
              << " instances qualified within the draw cap\n";
  }
  return failures == 0 ? 0 : 1;
}

int run_theory_lemma2(const GlobalOpts& g, std::int64_t trials) {
  std::mt19937 rng = make_rng(g.seed);
  const ToyFamilyConfig family;
  std::int64_t conclusive = 0, inconclusive = 0, disagreements = 0;
  for (std::int64_t t = 0; t < trials; ++t) {
    const ToyInstance inst = random_toy_instance(family, rng);
    const std::optional<bool> agree = check_sign_lemma(inst);
    if (!agree.has_value()) {
      ++inconclusive;
      continue;
    }
    ++conclusive;
    if (!*agree) ++disagreements;
  }
  std::cout << "conclusive:     " << conclusive << '\n'
            << "inconclusive:   " << inconclusive << '\n'
            << "disagreements:  " << disagreements << '\n';
  return disagreements == 0 ? 0 : 1;
}

int run_theory_theorem1(const GlobalOpts& g, std::int64_t trials, double eps) {
  const TheoremReport report =
      certify_theorem1(quadratic_family(), trials, eps, g.seed);
  std::cout << format_report(report);
  if (!g.out_csv.empty()) {
    auto out = open_csv(g.out_csv);
    write_report_csv(report, out);
  }
  return report.certified() ? 0 : 1;
}

int run_theory_correlate(const GlobalOpts& g, const std::string& points_file,
                         const std::string& dataset, int classes,
                         std::int64_t subset, const std::string& levels_csv,
                         const TTTConfig& cli_cfg) {
  if (!points_file.empty()) {
    std::ifstream in(points_file);
    if (!in) throw IoError("cannot open '" + points_file + "'");
    const auto points = read_points_csv(in);
    const LinearFit fit = correlate(points);
    std::cout << "points:    " << points.size() << '\n'
              << "slope:     " << fit.slope << '\n'
              << "intercept: " << fit.intercept << '\n'
              << "r:         " << fit.r << '\n';
    return 0;
  }

  const Checkpoint ckpt = load_checkpoint(require_checkpoint(g));
  Dataset test = load_split(g, dataset, false, classes);
  if (subset > 0) test = head_subset(test, subset);

  std::vector<int> levels;
  for (std::size_t pos = 0; pos < levels_csv.size();) {
    const std::size_t comma = levels_csv.find(',', pos);
    const std::string tok = levels_csv.substr(
        pos, comma == std::string::npos ? std::string::npos : comma - pos);
    levels.push_back(std::stoi(tok));
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  std::vector<std::pair<CorruptionKind, int>> settings;
  for (const CorruptionKind kind : kAllCorruptionKinds) {
    for (const int level : levels) settings.emplace_back(kind, level);
  }

  const auto study =
      correlation_study(ckpt.model, test, settings, cli_cfg, g.seed);
  for (const CorrelationSetting& s : study) {
    std::cout << corruption_kind_name(s.kind) << " l" << s.level
              << "  ip " << s.mean_inner_product << "  err_joint "
              << s.error_joint << "  err_ttt " << s.error_ttt
              << "  improvement " << s.improvement << '\n';
  }
  const LinearFit fit = correlate(study_points(study));
  std::cout << "settings: " << study.size() << "  slope " << fit.slope
            << "  r " << fit.r << '\n';
  if (!g.out_csv.empty()) {
    auto out = open_csv(g.out_csv);
    write_points_csv(out, study);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"test-time training laboratory"};
  app.require_subcommand(1);

  GlobalOpts g;
  app.add_option("--seed", g.seed, "global seed for every derived stream");
  app.add_option("--data-dir", g.data_dir,
                 "dataset directory (overrides $" + std::string(kDataDirEnv) +
                     ")");
  app.add_option("--checkpoint", g.checkpoint, "model checkpoint path");
  app.add_option("--out-csv", g.out_csv, "write results as CSV here");

  // gen-data
  auto* gen = app.add_subcommand("gen-data",
                                 "generate the synthetic train/test splits");
  std::int64_t train_n = 5000, test_n = 2000;
  int classes = 10;
  gen->add_option("--train-n", train_n, "training samples")
      ->check(CLI::PositiveNumber);
  gen->add_option("--test-n", test_n, "test samples")
      ->check(CLI::PositiveNumber);
  gen->add_option("--classes", classes, "glyph classes (2..10)")
      ->check(CLI::Range(2, 10));

  // train
  auto* train_cmd = app.add_subcommand("train", "joint or main-only training");
  std::string dataset = "synthetic";
  int epochs = 12;
  float lr = 0.1f, momentum = 0.9f, weight_decay = 0.f;
  std::string objective = "joint";
  train_cmd->add_option("--dataset", dataset, "synthetic | cifar10")
      ->check(CLI::IsMember({"synthetic", "cifar10"}));
  train_cmd->add_option("--classes", classes, "classes in the synthetic set")
      ->check(CLI::Range(2, 10));
  train_cmd->add_option("--epochs", epochs)->check(CLI::NonNegativeNumber);
  train_cmd->add_option("--lr", lr, "base learning rate");
  train_cmd->add_option("--momentum", momentum);
  train_cmd->add_option("--weight-decay", weight_decay);
  train_cmd->add_option("--objective", objective, "joint | main-only")
      ->check(CLI::IsMember({"joint", "main-only"}));

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "run one evaluation mode");
  std::string mode = "joint";
  std::string kind;
  int level = 5;
  bool gradual = false;
  std::int64_t subset = 0;
  TTTConfig ttt_cfg;
  int steps = -1;
  double threshold = 0.0;
  std::string scope = "extractor";
  eval_cmd
      ->add_option("--mode", mode, "baseline | joint | ttt | ttt-online")
      ->required()
      ->check(CLI::IsMember({"baseline", "joint", "joint_fixed", "ttt",
                             "ttt-online", "ttt_online"}));
  eval_cmd->add_option("--dataset", dataset, "synthetic | cifar10")
      ->check(CLI::IsMember({"synthetic", "cifar10"}));
  eval_cmd->add_option("--classes", classes)->check(CLI::Range(2, 10));
  auto* kind_opt = eval_cmd->add_option("--kind", kind,
                                        "corruption kind (omit for clean)");
  auto* level_opt =
      eval_cmd->add_option("--level", level, "corruption severity 1..5")
          ->check(CLI::Range(1, 5));
  auto* gradual_flag = eval_cmd->add_flag(
      "--gradual", gradual, "severity ramps level-1 to level-5 over the "
                            "shuffled stream");
  gradual_flag->excludes(level_opt);
  gradual_flag->needs(kind_opt);
  eval_cmd->add_option("--n", subset, "evaluate only the first n samples");
  auto* steps_opt = eval_cmd->add_option(
      "--steps", steps, "adaptation steps (default 10 standard, 1 online)");
  eval_cmd->add_option("--ttt-lr", ttt_cfg.learning_rate,
                       "adaptation learning rate");
  eval_cmd->add_option("--copies", ttt_cfg.copies,
                       "augmented copies per adaptation batch");
  auto* thr_opt = eval_cmd->add_option(
      "--threshold", threshold, "adapt only when rotation loss exceeds this");
  eval_cmd->add_option("--scope", scope, "extractor | extractor+ssl")
      ->check(CLI::IsMember({"extractor", "extractor+ssl"}));

  // corrupt
  auto* corrupt_cmd =
      app.add_subcommand("corrupt", "materialize a corrupted test set");
  std::string corrupt_out;
  corrupt_cmd->add_option("--dataset", dataset, "synthetic | cifar10")
      ->check(CLI::IsMember({"synthetic", "cifar10"}));
  corrupt_cmd->add_option("--classes", classes)->check(CLI::Range(2, 10));
  corrupt_cmd->add_option("--kind", kind, "corruption kind")->required();
  auto* c_level =
      corrupt_cmd->add_option("--level", level, "severity 1..5")
          ->check(CLI::Range(1, 5));
  corrupt_cmd->add_flag("--gradual", gradual, "interpolated severity ramp")
      ->excludes(c_level);
  corrupt_cmd->add_option("--out", corrupt_out,
                          "output file (default under --data-dir)");

  // theory
  auto* theory_cmd = app.add_subcommand("theory", "numerical verifiers");
  theory_cmd->require_subcommand(1);
  std::int64_t trials = 10000;
  double eps = 0.05;
  int grid = 10;
  auto* toy = theory_cmd->add_subcommand(
      "toy", "one ssl step at eta* zeroes the toy main loss");
  toy->add_option("--trials", trials)->check(CLI::PositiveNumber);
  auto* lemma1 = theory_cmd->add_subcommand(
      "lemma1", "strict descent over the (0, eps] grid");
  std::int64_t instances = 1000;
  lemma1->add_option("--instances", instances)->check(CLI::PositiveNumber);
  lemma1->add_option("--eps", eps);
  lemma1->add_option("--grid", grid)->check(CLI::PositiveNumber);
  auto* lemma2 = theory_cmd->add_subcommand(
      "lemma2", "sign of eta* matches the gradient inner product");
  lemma2->add_option("--trials", trials)->check(CLI::PositiveNumber);
  auto* theorem1 = theory_cmd->add_subcommand(
      "theorem1", "descent certification at eta = eps/(beta G^2)");
  theorem1->add_option("--trials", trials)->check(CLI::PositiveNumber);
  theorem1->add_option("--eps", eps);
  auto* correlate_cmd = theory_cmd->add_subcommand(
      "correlate", "gradient inner product vs TTT improvement");
  std::string points_file;
  std::string levels_csv = "1,3,5";
  correlate_cmd->add_option("--points", points_file,
                            "fit an existing points CSV instead of running "
                            "the study");
  correlate_cmd->add_option("--dataset", dataset, "synthetic | cifar10")
      ->check(CLI::IsMember({"synthetic", "cifar10"}));
  correlate_cmd->add_option("--classes", classes)->check(CLI::Range(2, 10));
  correlate_cmd->add_option("--n", subset, "test subset per setting");
  correlate_cmd->add_option("--levels", levels_csv,
                            "severity levels, comma separated");
  correlate_cmd->add_option("--steps", steps,
                            "adaptation steps (default 10)");
  correlate_cmd->add_option("--ttt-lr", ttt_cfg.learning_rate);
  correlate_cmd->add_option("--copies", ttt_cfg.copies);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) return run_gen_data(g, train_n, test_n, classes);
    if (*train_cmd) {
      return run_train(g, dataset, classes, epochs, lr, momentum,
                       weight_decay, objective);
    }
    if (*eval_cmd) {
      const std::optional<int> steps_flag =
          steps_opt->count() > 0 ? std::optional<int>(steps) : std::nullopt;
      return run_eval(g, mode, dataset, classes, kind, level, gradual, subset,
                      ttt_cfg, steps_flag, threshold, thr_opt->count() > 0,
                      scope);
    }
    if (*corrupt_cmd) {
      if (!gradual && c_level->count() == 0) {
        throw CLI::ValidationError("corrupt needs --level or --gradual");
      }
      return run_corrupt(g, dataset, classes, kind, level, gradual,
                         corrupt_out);
    }
    if (*toy) return run_theory_toy(g, trials);
    if (*lemma1) return run_theory_lemma1(g, instances, eps, grid);
    if (*lemma2) return run_theory_lemma2(g, trials);
    if (*theorem1) return run_theory_theorem1(g, trials, eps);
    if (*correlate_cmd) {
      TTTConfig cfg = ttt_cfg;
      if (steps >= 0) cfg.steps = steps;
      return run_theory_correlate(g, points_file, dataset, classes, subset,
                                  levels_csv, cfg);
    }
  } catch (const CLI::Error& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
