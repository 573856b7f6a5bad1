#include "prunelab/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "prunelab/errors.hpp"
#include "prunelab/rng.hpp"

namespace prunelab {

Shape Dataset::example_shape() const {
  Shape s(inputs.shape().begin() + 1, inputs.shape().end());
  return s;
}

Batch Dataset::gather(const std::vector<int64_t>& indices) const {
  const int64_t stride = inputs.size() / inputs.dim(0);
  Shape shape = inputs.shape();
  shape[0] = static_cast<int64_t>(indices.size());
  Batch b{Tensor(shape), {}};
  b.labels.reserve(indices.size());
  float* dst = b.x.data();
  for (size_t i = 0; i < indices.size(); ++i) {
    const float* src = inputs.data() + indices[i] * stride;
    std::copy(src, src + stride, dst + static_cast<int64_t>(i) * stride);
    b.labels.push_back(labels[static_cast<size_t>(indices[i])]);
  }
  return b;
}

namespace {

uint32_t read_be32(std::istream& in, const std::string& path) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in)
    throw TruncatedFile(path + ": unexpected end of file in header");
  return (uint32_t(b[0]) << 24) | (uint32_t(b[1]) << 16) |
         (uint32_t(b[2]) << 8) | uint32_t(b[3]);
}

void write_be32(std::ostream& out, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace

IdxFile IdxFile::read(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  IdxFile f;
  f.magic = read_be32(in, path);
  if (f.magic != kIdxImagesMagic && f.magic != kIdxLabelsMagic)
    throw BadMagic(path + ": magic 0x" + std::to_string(f.magic) +
                   " is neither an images nor a labels file");
  const size_t ndims = f.magic == kIdxImagesMagic ? 3 : 1;
  int64_t total = 1;
  for (size_t i = 0; i < ndims; ++i) {
    f.dims.push_back(read_be32(in, path));
    total *= f.dims.back();
  }
  f.payload.resize(static_cast<size_t>(total));
  in.read(reinterpret_cast<char*>(f.payload.data()), total);
  if (in.gcount() != total)
    throw TruncatedFile(path + ": payload has " + std::to_string(in.gcount()) +
                        " bytes, header promises " + std::to_string(total));
  return f;
}

void IdxFile::write(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  write_be32(out, magic);
  for (uint32_t d : dims) write_be32(out, d);
  out.write(reinterpret_cast<const char*>(payload.data()),
            static_cast<std::streamsize>(payload.size()));
  if (!out) throw IoError("failed writing " + path);
}

void write_idx_images(const std::string& path, int64_t count, int64_t rows,
                      int64_t cols, const std::vector<uint8_t>& pixels) {
  if (static_cast<int64_t>(pixels.size()) != count * rows * cols)
    throw DimensionMismatch("write_idx_images: pixel count does not match dims");
  IdxFile f;
  f.magic = kIdxImagesMagic;
  f.dims = {static_cast<uint32_t>(count), static_cast<uint32_t>(rows),
            static_cast<uint32_t>(cols)};
  f.payload = pixels;
  f.write(path);
}

void write_idx_labels(const std::string& path,
                      const std::vector<uint8_t>& labels) {
  IdxFile f;
  f.magic = kIdxLabelsMagic;
  f.dims = {static_cast<uint32_t>(labels.size())};
  f.payload = labels;
  f.write(path);
}

namespace {

// Single-channel normalization over a flat [0,1] pixel buffer.
NormStats compute_stats(const std::vector<float>& values) {
  double sum = 0.0, sq = 0.0;
  for (float v : values) {
    sum += v;
    sq += static_cast<double>(v) * v;
  }
  const double n = static_cast<double>(values.size());
  const double mean = sum / n;
  double var = sq / n - mean * mean;
  if (var < 1e-12) var = 1e-12;
  return {{static_cast<float>(mean)}, {static_cast<float>(std::sqrt(var))}};
}

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                 const std::optional<NormStats>& train_stats,
                 std::string split) {
  IdxFile images = IdxFile::read(images_path);
  if (images.magic != kIdxImagesMagic)
    throw BadMagic(images_path + ": expected an images file");
  IdxFile labels = IdxFile::read(labels_path);
  if (labels.magic != kIdxLabelsMagic)
    throw BadMagic(labels_path + ": expected a labels file");
  if (images.count() != labels.count())
    throw CountMismatch(std::to_string(images.count()) + " images but " +
                        std::to_string(labels.count()) + " labels");

  const int64_t n = images.count();
  const int64_t rows = images.dims[1], cols = images.dims[2];
  std::vector<float> scaled(images.payload.size());
  for (size_t i = 0; i < images.payload.size(); ++i)
    scaled[i] = static_cast<float>(images.payload[i]) / 255.0f;

  Dataset d;
  d.split = std::move(split);
  d.stats = train_stats ? *train_stats : compute_stats(scaled);
  const float mean = d.stats.mean.at(0);
  const float inv_std = 1.0f / d.stats.stdev.at(0);
  Tensor inputs({n, 1, rows, cols});  // single channel
  for (size_t i = 0; i < scaled.size(); ++i)
    inputs[static_cast<int64_t>(i)] = (scaled[i] - mean) * inv_std;
  d.inputs = std::move(inputs);

  d.labels.reserve(static_cast<size_t>(n));
  int max_label = 0;
  for (uint8_t y : labels.payload) {
    d.labels.push_back(static_cast<int>(y));
    max_label = std::max(max_label, static_cast<int>(y));
  }
  d.classes = max_label + 1;
  return d;
}

namespace {

// unnormalized clusters; class of example i is i % classes
Dataset synth_raw(int classes, int64_t dim, int64_t per_class, uint64_t seed,
                  double separation) {
  if (classes < 2) throw InvalidArg("synth_gaussians: need at least 2 classes");
  if (dim < 1 || per_class < 1)
    throw InvalidArg("synth_gaussians: dim and per_class must be positive");
  if (!(separation > 0.0))
    throw InvalidArg("synth_gaussians: separation must be positive");

  Rng rng(substream_seed(seed, "synth"));
  std::vector<std::vector<double>> means(static_cast<size_t>(classes),
                                         std::vector<double>(dim));
  for (auto& m : means)
    for (auto& v : m) v = rng.next_gaussian();

  // scale the mean cloud so every pair is at least `separation` apart, and
  // no larger than needed, so the task difficulty tracks the knob
  double min_dist = std::numeric_limits<double>::infinity();
  for (int a = 0; a < classes; ++a)
    for (int b = a + 1; b < classes; ++b) {
      double d2 = 0.0;
      for (int64_t j = 0; j < dim; ++j) {
        const double diff = means[a][j] - means[b][j];
        d2 += diff * diff;
      }
      min_dist = std::min(min_dist, std::sqrt(d2));
    }
  if (min_dist < 1e-9) min_dist = 1e-9;
  const double rescale = separation / min_dist;
  for (auto& m : means)
    for (auto& v : m) v *= rescale;

  const int64_t n = classes * per_class;
  Tensor inputs({n, dim});
  std::vector<int> labels(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    const int cls = static_cast<int>(i % classes);
    labels[static_cast<size_t>(i)] = cls;
    float* row = inputs.data() + i * dim;
    for (int64_t j = 0; j < dim; ++j)
      row[j] = static_cast<float>(means[static_cast<size_t>(cls)][j] +
                                  rng.next_gaussian());
  }

  Dataset d;
  d.inputs = std::move(inputs);
  d.labels = std::move(labels);
  d.classes = classes;
  return d;
}

NormStats stats_of(const Tensor& inputs) {
  double sum = 0.0, sq = 0.0;
  for (int64_t i = 0; i < inputs.size(); ++i) {
    sum += inputs[i];
    sq += static_cast<double>(inputs[i]) * inputs[i];
  }
  const double count = static_cast<double>(inputs.size());
  const double mean = sum / count;
  double var = sq / count - mean * mean;
  if (var < 1e-12) var = 1e-12;
  return {{static_cast<float>(mean)}, {static_cast<float>(std::sqrt(var))}};
}

void normalize_with(Dataset& d, const NormStats& stats) {
  const float mean = stats.mean.at(0);
  const float inv_std = 1.0f / stats.stdev.at(0);
  for (int64_t i = 0; i < d.inputs.size(); ++i)
    d.inputs[i] = (d.inputs[i] - mean) * inv_std;
  d.stats = stats;
}

}  // namespace

Dataset synth_gaussians(int classes, int64_t dim, int64_t per_class,
                        uint64_t seed, double separation) {
  Dataset d = synth_raw(classes, dim, per_class, seed, separation);
  normalize_with(d, stats_of(d.inputs));
  return d;
}

std::pair<Dataset, Dataset> synth_gaussians_split(int classes, int64_t dim,
                                                  int64_t train_per_class,
                                                  int64_t test_per_class,
                                                  uint64_t seed,
                                                  double separation) {
  Dataset all = synth_raw(classes, dim, train_per_class + test_per_class, seed,
                          separation);
  const int64_t n_train = static_cast<int64_t>(classes) * train_per_class;
  const int64_t n_test = static_cast<int64_t>(classes) * test_per_class;
  const int64_t dim_stride = all.inputs.size() / all.count();

  auto take = [&](int64_t start, int64_t count, const char* split) {
    Dataset d;
    d.classes = classes;
    d.split = split;
    d.inputs = Tensor({count, dim_stride},
                      std::vector<float>(all.inputs.data() + start * dim_stride,
                                         all.inputs.data() +
                                             (start + count) * dim_stride));
    d.labels.assign(all.labels.begin() + start,
                    all.labels.begin() + start + count);
    return d;
  };
  Dataset train = take(0, n_train, "train");
  Dataset test = take(n_train, n_test, "test");
  const NormStats stats = stats_of(train.inputs);
  normalize_with(train, stats);
  normalize_with(test, stats);
  return {std::move(train), std::move(test)};
}

BatchIterator::BatchIterator(const Dataset& dataset, int64_t batch_size,
                             uint64_t seed)
    : dataset_(&dataset), batch_size_(batch_size), seed_(seed) {
  if (batch_size < 1) throw InvalidArg("batch size must be at least 1");
  if (dataset.count() < 1) throw EmptyDataset("cannot iterate an empty dataset");
  order_.resize(static_cast<size_t>(dataset.count()));
  reshuffle();
}

void BatchIterator::reshuffle() {
  for (size_t i = 0; i < order_.size(); ++i)
    order_[i] = static_cast<int64_t>(i);
  Rng rng(substream_seed(seed_, "epoch" + std::to_string(epoch_)));
  // Fisher-Yates with the portable stream
  for (size_t i = order_.size(); i > 1; --i) {
    const size_t j = static_cast<size_t>(rng.next_below(i));
    std::swap(order_[i - 1], order_[j]);
  }
  cursor_ = 0;
}

std::optional<Batch> BatchIterator::next() {
  const int64_t n = static_cast<int64_t>(order_.size());
  if (cursor_ >= n) return std::nullopt;
  const int64_t take = std::min(batch_size_, n - cursor_);
  std::vector<int64_t> idx(order_.begin() + cursor_,
                           order_.begin() + cursor_ + take);
  cursor_ += take;
  return dataset_->gather(idx);
}

void BatchIterator::next_epoch() {
  ++epoch_;
  reshuffle();
}

int64_t BatchIterator::batches_per_epoch() const {
  const int64_t n = static_cast<int64_t>(order_.size());
  return (n + batch_size_ - 1) / batch_size_;
}

BatchIterator batches(const Dataset& dataset, int64_t batch_size,
                      uint64_t seed) {
  return BatchIterator(dataset, batch_size, seed);
}

}  // namespace prunelab
