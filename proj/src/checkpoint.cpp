#include "ttlab/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ttlab/common.hpp"

namespace ttlab {
namespace {

// Raw 32-bit little-endian values go straight to disk, so the build is
// pinned to a little-endian host.
static_assert(std::endian::native == std::endian::little,
              "checkpoint i/o assumes a little-endian host");

constexpr char kMagic[8] = {'T', 'T', 'L', 'A', 'B', 'C', 'K', 'P'};
constexpr std::uint32_t kVersion = 1;

// Caps that keep a corrupt length field from turning into a huge alloc.
constexpr std::uint32_t kMaxConfigBytes = 1u << 24;
constexpr std::uint32_t kMaxNameBytes = 4096;
constexpr std::uint32_t kMaxRank = 8;

std::string loc(const std::filesystem::path& path) { return path.string(); }

void write_bytes(std::ofstream& out, const void* data, std::size_t n) {
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
}

void write_u32(std::ofstream& out, std::uint32_t v) {
  write_bytes(out, &v, sizeof(v));
}

void read_bytes(std::ifstream& in, void* data, std::size_t n,
                const std::filesystem::path& path, const char* what) {
  in.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n) {
    throw IoError(loc(path) + ": truncated while reading " + what);
  }
}

std::uint32_t read_u32(std::ifstream& in, const std::filesystem::path& path,
                       const char* what) {
  std::uint32_t v = 0;
  read_bytes(in, &v, sizeof(v), path, what);
  return v;
}

nlohmann::json config_json(const YModelConfig& cfg, const TrainMeta& meta) {
  nlohmann::json blocks = nlohmann::json::array();
  for (const YModelConfig::Block& b : cfg.blocks) {
    blocks.push_back({{"channels", b.channels},
                      {"stride", b.stride},
                      {"groups", b.groups}});
  }
  return nlohmann::json{
      {"architecture",
       {{"in_channels", cfg.in_channels},
        {"in_height", cfg.in_height},
        {"in_width", cfg.in_width},
        {"blocks", std::move(blocks)},
        {"split_index", cfg.split_index},
        {"main_classes", cfg.main_classes},
        {"ssl_classes", cfg.ssl_classes}}},
      {"training",
       {{"epochs", meta.epochs},
        {"final_lr", static_cast<double>(meta.final_lr)},
        {"seed", meta.seed}}}};
}

void parse_config_json(const std::string& blob,
                       const std::filesystem::path& path, YModelConfig& cfg,
                       TrainMeta& meta) {
  try {
    const nlohmann::json j = nlohmann::json::parse(blob);
    const nlohmann::json& arch = j.at("architecture");
    cfg.in_channels = arch.at("in_channels").get<std::int64_t>();
    cfg.in_height = arch.at("in_height").get<std::int64_t>();
    cfg.in_width = arch.at("in_width").get<std::int64_t>();
    cfg.blocks.clear();
    for (const nlohmann::json& b : arch.at("blocks")) {
      cfg.blocks.push_back(
          YModelConfig::Block{b.at("channels").get<std::int64_t>(),
                              b.at("stride").get<int>(),
                              b.at("groups").get<int>()});
    }
    cfg.split_index = arch.at("split_index").get<std::int64_t>();
    cfg.main_classes = arch.at("main_classes").get<std::int64_t>();
    cfg.ssl_classes = arch.at("ssl_classes").get<std::int64_t>();
    const nlohmann::json& training = j.at("training");
    meta.epochs = training.at("epochs").get<std::int64_t>();
    meta.final_lr =
        static_cast<float>(training.at("final_lr").get<double>());
    meta.seed = training.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError(loc(path) + ": config block is not usable: " + e.what());
  }
}

// A checkpoint must describe exactly the parameter set its architecture
// block implies, in canonical order, or prediction-time binding would
// silently mix tensors up.
void check_against_architecture(const YModelConfig& cfg, const ParamTape& tape,
                                const std::filesystem::path& path) {
  const YModel reference = build_model(cfg, 0);
  if (reference.tape.size() != tape.size()) {
    throw IoError(loc(path) + ": parameter count " +
                  std::to_string(tape.size()) + " does not match the " +
                  std::to_string(reference.tape.size()) +
                  " tensors the architecture defines");
  }
  for (std::size_t i = 0; i < tape.size(); ++i) {
    const ParamEntry<float>& got = tape.entry(i);
    const ParamEntry<float>& want = reference.tape.entry(i);
    if (got.name != want.name) {
      throw IoError(loc(path) + ": parameter " + std::to_string(i) +
                    " is named '" + got.name + "', architecture expects '" +
                    want.name + "'");
    }
    if (!got.value.same_shape(want.value)) {
      throw IoError(loc(path) + ": parameter '" + got.name + "' has shape " +
                    got.value.shape_string() + ", architecture expects " +
                    want.value.shape_string());
    }
  }
}

}  // namespace

void save_checkpoint(const YModel& model, const TrainMeta& meta,
                     const std::filesystem::path& path) {
  model.config.validate();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw IoError(loc(path) + ": cannot open for writing");
  }
  write_bytes(out, kMagic, sizeof(kMagic));
  write_u32(out, kVersion);

  const std::string blob = config_json(model.config, meta).dump();
  write_u32(out, static_cast<std::uint32_t>(blob.size()));
  write_bytes(out, blob.data(), blob.size());

  for (std::size_t i = 0; i < model.tape.size(); ++i) {
    const ParamEntry<float>& p = model.tape.entry(i);
    write_u32(out, static_cast<std::uint32_t>(p.name.size()));
    write_bytes(out, p.name.data(), p.name.size());
    write_u32(out, static_cast<std::uint32_t>(p.value.rank()));
    for (std::int64_t d : p.value.shape()) {
      write_u32(out, static_cast<std::uint32_t>(d));
    }
    write_bytes(out, p.value.data(), sizeof(float) * p.value.numel());
  }
  out.flush();
  if (!out) {
    throw IoError(loc(path) + ": write failed");
  }
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError(loc(path) + ": cannot open");
  }

  char magic[sizeof(kMagic)] = {};
  read_bytes(in, magic, sizeof(magic), path, "magic");
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw IoError(loc(path) + ": not a checkpoint (bad magic)");
  }
  const std::uint32_t version = read_u32(in, path, "format version");
  if (version != kVersion) {
    throw IoError(loc(path) + ": unsupported checkpoint version " +
                  std::to_string(version));
  }

  const std::uint32_t config_len = read_u32(in, path, "config block length");
  if (config_len == 0 || config_len > kMaxConfigBytes) {
    throw IoError(loc(path) + ": implausible config block length " +
                  std::to_string(config_len));
  }
  std::string blob(config_len, '\0');
  read_bytes(in, blob.data(), blob.size(), path, "config block");

  YModelConfig cfg;
  TrainMeta meta;
  parse_config_json(blob, path, cfg, meta);
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    throw IoError(loc(path) + ": stored architecture is invalid: " + e.what());
  }

  ParamTape tape;
  while (true) {
    // A record boundary is the only place the stream may end.
    if (in.peek() == std::ifstream::traits_type::eof()) break;
    const std::uint32_t name_len = read_u32(in, path, "parameter name length");
    if (name_len == 0 || name_len > kMaxNameBytes) {
      throw IoError(loc(path) + ": implausible parameter name length " +
                    std::to_string(name_len));
    }
    std::string name(name_len, '\0');
    read_bytes(in, name.data(), name.size(), path, "parameter name");
    const std::uint32_t rank = read_u32(in, path, "parameter rank");
    if (rank == 0 || rank > kMaxRank) {
      throw IoError(loc(path) + ": implausible rank " + std::to_string(rank) +
                    " for parameter '" + name + "'");
    }
    std::vector<std::int64_t> shape(rank);
    std::int64_t numel = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const std::uint32_t dim = read_u32(in, path, "parameter dimension");
      if (dim == 0) {
        throw IoError(loc(path) + ": zero dimension in parameter '" + name +
                      "'");
      }
      shape[d] = static_cast<std::int64_t>(dim);
      numel *= shape[d];
    }
    Tensor value(std::move(shape));
    read_bytes(in, value.data(), sizeof(float) * numel, path,
               ("values of parameter '" + name + "'").c_str());
    if (tape.has(name)) {
      throw IoError(loc(path) + ": duplicate parameter '" + name + "'");
    }
    tape.add(name, std::move(value));
  }

  check_against_architecture(cfg, tape, path);
  return Checkpoint{YModel{cfg, std::move(tape)}, meta};
}

}  // namespace ttlab
