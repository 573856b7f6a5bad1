#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "prunelab/tensor.hpp"

namespace prunelab {

struct Batch {
  Tensor x;                 // [batch x ...per-example shape]
  std::vector<int> labels;  // length batch
  int64_t size() const { return x.dim(0); }
};

struct NormStats {
  std::vector<float> mean;  // per channel
  std::vector<float> stdev;
};

struct Dataset {
  Tensor inputs;            // [n x ...], already normalized
  std::vector<int> labels;  // in [0, classes)
  int classes = 0;
  std::string split = "train";
  NormStats stats;

  int64_t count() const { return inputs.rank() == 0 ? 0 : inputs.dim(0); }
  Shape example_shape() const;  // shape without the leading count
  Batch gather(const std::vector<int64_t>& indices) const;
};

// Raw IDX container: big-endian magic, big-endian dimension sizes, then an
// unsigned-byte payload in row-major order. Kept verbatim so a parsed file
// can be re-serialized byte for byte.
struct IdxFile {
  uint32_t magic = 0;
  std::vector<uint32_t> dims;
  std::vector<uint8_t> payload;

  static IdxFile read(const std::string& path);
  void write(const std::string& path) const;

  int64_t count() const { return dims.empty() ? 0 : dims[0]; }
};

constexpr uint32_t kIdxImagesMagic = 0x00000803;
constexpr uint32_t kIdxLabelsMagic = 0x00000801;

// Loads an images/labels pair. Pixels are scaled to [0,1] and normalized to
// mean 0 / std 1; when `train_stats` is given those statistics are reused
// (for test splits), otherwise they are computed from this file.
Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                 const std::optional<NormStats>& train_stats = std::nullopt,
                 std::string split = "train");

// Writes a dataset's label vector and raw byte images (both given explicitly
// so quantization stays under caller control).
void write_idx_images(const std::string& path, int64_t count, int64_t rows,
                      int64_t cols, const std::vector<uint8_t>& pixels);
void write_idx_labels(const std::string& path, const std::vector<uint8_t>& labels);

// K seeded Gaussian clusters with pairwise mean distance >= separation,
// balanced labels, unit within-class deviation. Inputs come out normalized
// like every other dataset.
Dataset synth_gaussians(int classes, int64_t dim, int64_t per_class,
                        uint64_t seed, double separation);

// Train/test pair drawn from the same clusters: one generation stream split
// in two, with the test side normalized by the train statistics.
std::pair<Dataset, Dataset> synth_gaussians_split(int classes, int64_t dim,
                                                  int64_t train_per_class,
                                                  int64_t test_per_class,
                                                  uint64_t seed,
                                                  double separation);

// Deterministic epoch iterator: seeded shuffle per epoch, every index visited
// exactly once, final short batch kept.
class BatchIterator {
 public:
  BatchIterator(const Dataset& dataset, int64_t batch_size, uint64_t seed);

  // nullopt at end of epoch
  std::optional<Batch> next();
  void next_epoch();

  int64_t batches_per_epoch() const;
  int epoch() const { return epoch_; }

 private:
  void reshuffle();

  const Dataset* dataset_;
  int64_t batch_size_;
  uint64_t seed_;
  int epoch_ = 0;
  int64_t cursor_ = 0;
  std::vector<int64_t> order_;
};

BatchIterator batches(const Dataset& dataset, int64_t batch_size, uint64_t seed);

}  // namespace prunelab
