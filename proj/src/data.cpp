#include "ttlab/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <random>

#include "ttlab/common.hpp"
#include "ttlab/rng.hpp"

namespace ttlab {

void Dataset::validate() const {
  if (images.rank() != 4) {
    throw ShapeError("dataset images must be [N,C,H,W], got " +
                     images.shape_string());
  }
  if (size() < 1) throw ShapeError("dataset is empty");
  if (static_cast<std::int64_t>(labels.size()) != size()) {
    throw ShapeError("dataset holds " + std::to_string(size()) +
                     " images but " + std::to_string(labels.size()) +
                     " labels");
  }
  const auto classes = num_classes();
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= classes) {
      throw InputError("label " + std::to_string(labels[i]) + " at index " +
                       std::to_string(i) + " outside [0, " +
                       std::to_string(classes) + ")");
    }
  }
}

namespace {

constexpr std::int64_t kCifarSide = 32;
constexpr std::int64_t kCifarChannels = 3;
constexpr std::int64_t kCifarPixels = kCifarChannels * kCifarSide * kCifarSide;
constexpr std::int64_t kCifarRecordsPerFile = 10000;

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::int64_t>(in.tellg());
  in.seekg(0);
  std::vector<unsigned char> bytes(static_cast<std::size_t>(size));
  if (!in.read(reinterpret_cast<char*>(bytes.data()), size)) {
    throw IoError("short read on " + path.string());
  }
  return bytes;
}

// Unpacks label+pixel records into the dataset at image offset `at`.
// max_label guards the label byte; record_bytes = 1 + pixel count.
void unpack_records(const std::vector<unsigned char>& bytes,
                    const std::filesystem::path& path, std::int64_t pixels,
                    std::int64_t max_label, Dataset& ds, std::int64_t at) {
  const std::int64_t record_bytes = 1 + pixels;
  const auto total = static_cast<std::int64_t>(bytes.size());
  const std::int64_t records = total / record_bytes;
  for (std::int64_t n = 0; n < records; ++n) {
    const unsigned char* rec = bytes.data() + n * record_bytes;
    if (rec[0] >= max_label) {
      throw IoError(path.string() + ": record " + std::to_string(n) +
                    " has label byte " + std::to_string(int(rec[0])) +
                    ", expected < " + std::to_string(max_label));
    }
    ds.labels[static_cast<std::size_t>(at + n)] = rec[0];
    float* out = ds.images.data() + (at + n) * pixels;
    for (std::int64_t i = 0; i < pixels; ++i) {
      out[i] = static_cast<float>(rec[1 + i]) / 255.f;
    }
  }
}

void check_whole_records(const std::vector<unsigned char>& bytes,
                         const std::filesystem::path& path,
                         std::int64_t record_bytes) {
  const auto total = static_cast<std::int64_t>(bytes.size());
  if (total == 0) throw IoError(path.string() + " is empty");
  if (total % record_bytes != 0) {
    const std::int64_t whole = total / record_bytes;
    throw IoError(path.string() + ": truncated mid-record: record " +
                  std::to_string(whole) + " is incomplete at byte offset " +
                  std::to_string(whole * record_bytes));
  }
}

}  // namespace

std::pair<Dataset, Dataset> load_cifar10(const std::filesystem::path& dir) {
  const std::vector<std::string> names = {
      "airplane", "automobile", "bird", "cat",  "deer",
      "dog",      "frog",       "horse", "ship", "truck"};
  const std::int64_t record_bytes = 1 + kCifarPixels;

  auto load_into = [&](Dataset& ds, const std::filesystem::path& path,
                       std::int64_t at) {
    const auto bytes = read_file(path);
    check_whole_records(bytes, path, record_bytes);
    const auto records = static_cast<std::int64_t>(bytes.size()) / record_bytes;
    if (records != kCifarRecordsPerFile) {
      throw IoError(path.string() + ": expected " +
                    std::to_string(kCifarRecordsPerFile) +
                    " records, found " + std::to_string(records));
    }
    unpack_records(bytes, path, kCifarPixels, 10, ds, at);
  };

  Dataset train;
  train.provenance = Provenance::cifar10;
  train.class_names = names;
  train.images =
      Tensor({5 * kCifarRecordsPerFile, kCifarChannels, kCifarSide, kCifarSide});
  train.labels.resize(static_cast<std::size_t>(5 * kCifarRecordsPerFile));
  for (int b = 0; b < 5; ++b) {
    load_into(train, dir / ("data_batch_" + std::to_string(b + 1) + ".bin"),
              b * kCifarRecordsPerFile);
  }

  Dataset test;
  test.provenance = Provenance::cifar10;
  test.class_names = names;
  test.images =
      Tensor({kCifarRecordsPerFile, kCifarChannels, kCifarSide, kCifarSide});
  test.labels.resize(static_cast<std::size_t>(kCifarRecordsPerFile));
  load_into(test, dir / "test_batch.bin", 0);

  train.validate();
  test.validate();
  return {std::move(train), std::move(test)};
}

void save_dataset_binary(const Dataset& ds,
                         const std::filesystem::path& path) {
  ds.validate();
  if (ds.num_classes() > 256) {
    throw ConfigError("binary container stores labels as one byte; got " +
                      std::to_string(ds.num_classes()) + " classes");
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  const std::int64_t pixels = ds.images.numel() / ds.size();
  std::vector<unsigned char> record(static_cast<std::size_t>(1 + pixels));
  for (std::int64_t n = 0; n < ds.size(); ++n) {
    record[0] = static_cast<unsigned char>(ds.labels[n]);
    const float* src = ds.images.data() + n * pixels;
    for (std::int64_t i = 0; i < pixels; ++i) {
      const float v = std::clamp(src[i], 0.f, 1.f);
      record[1 + i] = static_cast<unsigned char>(std::lround(v * 255.f));
    }
    out.write(reinterpret_cast<const char*>(record.data()),
              static_cast<std::streamsize>(record.size()));
  }
  if (!out) throw IoError("write failed on " + path.string());
}

Dataset load_dataset_binary(const std::filesystem::path& path,
                            std::int64_t channels, std::int64_t height,
                            std::int64_t width,
                            std::vector<std::string> class_names) {
  if (channels < 1 || height < 1 || width < 1) {
    throw ConfigError("pixel geometry must be positive");
  }
  if (class_names.empty()) {
    throw ConfigError("load_dataset_binary needs at least one class name");
  }
  const std::int64_t pixels = channels * height * width;
  const auto bytes = read_file(path);
  check_whole_records(bytes, path, 1 + pixels);
  const auto records = static_cast<std::int64_t>(bytes.size()) / (1 + pixels);
  Dataset ds;
  ds.class_names = std::move(class_names);
  ds.images = Tensor({records, channels, height, width});
  ds.labels.resize(static_cast<std::size_t>(records));
  unpack_records(bytes, path, pixels, ds.num_classes(), ds, 0);
  ds.validate();
  return ds;
}

namespace {

// Paint weight of class `cls` at glyph-local coordinates (u, v), both
// roughly in [-1, 1]; v grows downward. 0 means background; positive
// values blend toward the glyph color. Every shape here changes under
// any 90-degree rotation.
float glyph_paint(int cls, float u, float v) {
  auto in = [](float a, float lo, float hi) { return a >= lo && a <= hi; };
  switch (cls) {
    case 0:  // arrow pointing up
      if (in(v, -1.f, -0.2f) && std::abs(u) <= 0.75f * (v + 1.f)) return 1.f;
      return (std::abs(u) <= 0.18f && in(v, -0.2f, 1.f)) ? 1.f : 0.f;
    case 1:  // L
      if (in(u, -0.55f, -0.15f) && in(v, -1.f, 1.f)) return 1.f;
      return (in(u, -0.55f, 0.7f) && in(v, 0.6f, 1.f)) ? 1.f : 0.f;
    case 2:  // T
      if (in(v, -1.f, -0.6f) && std::abs(u) <= 0.8f) return 1.f;
      return (std::abs(u) <= 0.18f && in(v, -0.6f, 1.f)) ? 1.f : 0.f;
    case 3:  // J hook
      if (in(u, 0.15f, 0.55f) && in(v, -1.f, 0.6f)) return 1.f;
      if (in(v, 0.6f, 1.f) && in(u, -0.6f, 0.55f)) return 1.f;
      return (in(u, -0.6f, -0.2f) && in(v, 0.1f, 1.f)) ? 1.f : 0.f;
    case 4:  // flag on a pole
      if (in(u, -0.45f, -0.2f) && in(v, -1.f, 1.f)) return 1.f;
      return (in(u, -0.2f, 0.75f) && in(v, -1.f, -0.3f)) ? 1.f : 0.f;
    case 5:  // stairs rising to the right
      if (in(u, -1.f, -0.33f) && in(v, 0.33f, 1.f)) return 1.f;
      if (in(u, -0.33f, 0.33f) && in(v, -0.33f, 1.f)) return 1.f;
      return (in(u, 0.33f, 1.f) && in(v, -1.f, 1.f)) ? 1.f : 0.f;
    case 6:  // half disk, flat edge up
      return (u * u + v * v <= 0.85f * 0.85f && v >= 0.f) ? 1.f : 0.f;
    case 7:  // square with a satellite dot on the opposite diagonal
      if (in(u, -0.85f, -0.05f) && in(v, -0.85f, -0.05f)) return 1.f;
      {
        const float du = u - 0.55f;
        const float dv = v - 0.55f;
        return (du * du + dv * dv <= 0.25f * 0.25f) ? 1.f : 0.f;
      }
    case 8:  // vertical bar shaded from dim (top) to bright (bottom)
      if (in(u, -0.35f, 0.35f) && in(v, -0.9f, 0.9f)) {
        return 0.35f + 0.65f * (v + 0.9f) / 1.8f;
      }
      return 0.f;
    case 9:  // F
      if (in(u, -0.6f, -0.25f) && in(v, -1.f, 1.f)) return 1.f;
      if (in(v, -1.f, -0.65f) && in(u, -0.6f, 0.7f)) return 1.f;
      return (in(v, -0.25f, 0.1f) && in(u, -0.6f, 0.45f)) ? 1.f : 0.f;
    default:
      return 0.f;
  }
}

constexpr float kTwoPi = 6.2831853f;

}  // namespace

const std::vector<std::string>& synthetic_class_names() {
  static const std::vector<std::string> names = {
      "arrow",  "ell",       "tee",        "hook",     "flag",
      "stairs", "half_disk", "square_dot", "ramp_bar", "eff"};
  return names;
}

Dataset gen_synthetic(std::uint64_t seed, std::int64_t n, int classes) {
  const auto& family = synthetic_class_names();
  if (classes < 2 || classes > static_cast<int>(family.size())) {
    throw ConfigError("gen_synthetic supports 2 to " +
                      std::to_string(family.size()) + " classes, got " +
                      std::to_string(classes));
  }
  if (n < 1) throw ConfigError("gen_synthetic needs n >= 1");

  const std::int64_t side = 32;
  Dataset ds;
  ds.provenance = Provenance::synthetic;
  ds.seed = seed;
  ds.class_names.assign(family.begin(), family.begin() + classes);
  ds.images = Tensor({n, 3, side, side});
  ds.labels.resize(static_cast<std::size_t>(n));

  for (std::int64_t i = 0; i < n; ++i) {
    // every sample gets its own substream so the dataset is identical no
    // matter how it is sliced or extended
    auto rng = make_rng(seed, static_cast<std::uint64_t>(i));
    std::uniform_real_distribution<float> unit(0.f, 1.f);
    const int label = static_cast<int>(i % classes);
    ds.labels[static_cast<std::size_t>(i)] = label;

    float base[3];
    for (float& b : base) b = 0.18f + 0.3f * unit(rng);
    const float freq_r = 0.25f + 0.55f * unit(rng);
    const float freq_c = 0.25f + 0.55f * unit(rng);
    const float phase_r = kTwoPi * unit(rng);
    const float phase_c = kTwoPi * unit(rng);

    const float dx = -3.f + 6.f * unit(rng);
    const float dy = -3.f + 6.f * unit(rng);
    const float scale = 0.8f + 0.35f * unit(rng);

    // glyph color contrasts with the background in brightness; the hue is
    // sample noise, never class information, so shape is the only cue
    const float bg_mean = (base[0] + base[1] + base[2]) / 3.f;
    const float push = (bg_mean > 0.45f ? -1.f : 1.f) * (0.35f + 0.2f * unit(rng));
    float fg[3];
    for (float& f : fg) {
      f = std::clamp(bg_mean + push + (-0.12f + 0.24f * unit(rng)), 0.f, 1.f);
    }

    float* img = ds.images.data() + i * 3 * side * side;
    for (std::int64_t r = 0; r < side; ++r) {
      for (std::int64_t c = 0; c < side; ++c) {
        const float texture =
            0.05f * std::sin(freq_r * static_cast<float>(r) + phase_r) *
            std::sin(freq_c * static_cast<float>(c) + phase_c);
        const float grain = -0.02f + 0.04f * unit(rng);
        const float u = (static_cast<float>(c) - 15.5f - dx) / (10.f * scale);
        const float v = (static_cast<float>(r) - 15.5f - dy) / (10.f * scale);
        const float paint = glyph_paint(label, u, v);
        for (std::int64_t ch = 0; ch < 3; ++ch) {
          float val = base[ch] + texture + grain;
          if (paint > 0.f) val += paint * (fg[ch] - val);
          img[ch * side * side + r * side + c] = std::clamp(val, 0.f, 1.f);
        }
      }
    }
  }
  ds.validate();
  return ds;
}

}  // namespace ttlab
