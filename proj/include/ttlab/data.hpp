#ifndef TTLAB_DATA_HPP
#define TTLAB_DATA_HPP

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "ttlab/tensor.hpp"

namespace ttlab {

enum class Provenance { cifar10, synthetic };

/// A labeled image collection with pixels in [0,1], stored [N,C,H,W].
struct Dataset {
  Tensor images;
  std::vector<std::int64_t> labels;
  std::vector<std::string> class_names;
  Provenance provenance = Provenance::synthetic;
  std::uint64_t seed = 0;  // generator seed for synthetic provenance

  std::int64_t size() const { return images.rank() > 0 ? images.dim(0) : 0; }
  std::int64_t num_classes() const {
    return static_cast<std::int64_t>(class_names.size());
  }
  // Shape/label-range invariants; throws on violation.
  void validate() const;
};

/// Loads the six standard binary batch files (data_batch_1..5.bin,
/// test_batch.bin) from dir. Each record is one label byte followed by
/// 3072 pixel bytes (R plane, G plane, B plane, row-major); each file
/// holds exactly 10,000 records. Pixels are scaled to [0,1].
std::pair<Dataset, Dataset> load_cifar10(const std::filesystem::path& dir);

/// Writes a dataset in the same record container: label byte + C*H*W
/// pixel bytes per record, pixels quantized to the nearest 1/255 step.
void save_dataset_binary(const Dataset& ds, const std::filesystem::path& path);

/// Reads records written by save_dataset_binary. The pixel geometry is
/// not stored in the container, so the caller supplies it; the record
/// count comes from the file size.
Dataset load_dataset_binary(const std::filesystem::path& path,
                            std::int64_t channels, std::int64_t height,
                            std::int64_t width,
                            std::vector<std::string> class_names);

/// Procedurally generated 32x32x3 images: textured backgrounds with one
/// solid glyph per class, drawn with position/scale/color jitter. Every
/// glyph is asymmetric under 90-degree rotation, so the rotation task is
/// well posed on every sample. classes picks a prefix of the built-in
/// family (2 to 10). Bit-identical for identical (seed, n, classes).
Dataset gen_synthetic(std::uint64_t seed, std::int64_t n, int classes);

/// Names of the built-in glyph family, in class order.
const std::vector<std::string>& synthetic_class_names();

}  // namespace ttlab

#endif  // TTLAB_DATA_HPP
