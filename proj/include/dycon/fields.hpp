#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace dycon {

struct Dims3 {
  std::size_t h = 0;
  std::size_t w = 0;
  std::size_t d = 0;

  [[nodiscard]] std::size_t count() const { return h * w * d; }
  [[nodiscard]] std::size_t index(std::size_t i, std::size_t j, std::size_t k) const {
    return (i * w + j) * d + k;
  }
  bool operator==(const Dims3&) const = default;
};

// (batch, channels, H, W, D), row-major with D fastest.
struct Shape {
  std::size_t batch = 0;
  std::size_t channels = 0;
  Dims3 spatial;

  [[nodiscard]] std::size_t voxels_per_item() const { return spatial.count(); }
  [[nodiscard]] std::size_t voxel_count() const { return batch * spatial.count(); }
  [[nodiscard]] std::size_t size() const { return batch * channels * spatial.count(); }
  [[nodiscard]] std::size_t index(std::size_t b, std::size_t c, std::size_t i, std::size_t j,
                                  std::size_t k) const {
    return ((b * channels + c) * spatial.count()) + spatial.index(i, j, k);
  }
  bool operator==(const Shape&) const = default;
};

std::string to_string(const Shape& s);

// Image intensities (or any other 32-bit float tensor). Immutable after construction.
class VolumeBatch {
 public:
  VolumeBatch() = default;
  VolumeBatch(Shape shape, std::vector<float> data);

  static VolumeBatch zeros(Shape shape);

  [[nodiscard]] const Shape& shape() const { return shape_; }
  [[nodiscard]] std::span<const float> data() const { return data_; }
  [[nodiscard]] float at(std::size_t b, std::size_t c, std::size_t i, std::size_t j,
                         std::size_t k) const {
    return data_[shape_.index(b, c, i, j, k)];
  }

 private:
  Shape shape_;
  std::vector<float> data_;
};

// Per-voxel class probabilities. Values are held in double because every
// loss and gradient on top of them is evaluated in double precision.
class ProbabilityField {
 public:
  static constexpr double kSumTolerance = 1e-5;

  ProbabilityField() = default;
  ProbabilityField(Shape shape, std::vector<double> data);

  static ProbabilityField uniform(Shape shape);

  [[nodiscard]] const Shape& shape() const { return shape_; }
  [[nodiscard]] std::size_t num_classes() const { return shape_.channels; }
  [[nodiscard]] std::span<const double> data() const { return data_; }
  [[nodiscard]] double at(std::size_t b, std::size_t c, std::size_t i, std::size_t j,
                          std::size_t k) const {
    return data_[shape_.index(b, c, i, j, k)];
  }

 private:
  Shape shape_;
  std::vector<double> data_;
};

// Integer class per voxel, shape (B, H, W, D).
class LabelField {
 public:
  LabelField() = default;
  LabelField(std::size_t batch, Dims3 spatial, std::vector<std::int32_t> data,
             int num_classes = 2);

  [[nodiscard]] std::size_t batch() const { return batch_; }
  [[nodiscard]] const Dims3& spatial() const { return spatial_; }
  [[nodiscard]] int num_classes() const { return num_classes_; }
  [[nodiscard]] std::span<const std::int32_t> data() const { return data_; }
  [[nodiscard]] std::span<const std::int32_t> item(std::size_t b) const {
    return std::span<const std::int32_t>(data_).subspan(b * spatial_.count(), spatial_.count());
  }
  [[nodiscard]] std::int32_t at(std::size_t b, std::size_t i, std::size_t j, std::size_t k) const {
    return data_[b * spatial_.count() + spatial_.index(i, j, k)];
  }

 private:
  std::size_t batch_ = 0;
  Dims3 spatial_;
  int num_classes_ = 2;
  std::vector<std::int32_t> data_;
};

enum class EmbeddingSource { student, teacher };

// k^3 patch vectors of dimension E, one class per patch.
struct PatchEmbeddings {
  static constexpr double kNormTolerance = 1e-5;

  int k = 0;
  std::size_t dim = 0;
  std::vector<double> vectors;  // P x E, row-major
  std::vector<int> patch_class;
  EmbeddingSource source = EmbeddingSource::student;
  bool normalized = false;

  [[nodiscard]] std::size_t count() const { return dim == 0 ? 0 : vectors.size() / dim; }
  [[nodiscard]] std::span<const double> row(std::size_t p) const {
    return std::span<const double>(vectors).subspan(p * dim, dim);
  }
  // Throws ContractError when an invariant does not hold.
  void validate() const;
};

// --- binary volume I/O ------------------------------------------------------
//
// `<stem>.json` holds {shape, dtype, order, endian}; `<stem>.bin` the raw
// little-endian payload. `path` may name either file or the bare stem.

void write_volume(const VolumeBatch& v, const std::filesystem::path& path);
void write_volume(const LabelField& v, const std::filesystem::path& path);

std::variant<VolumeBatch, LabelField> read_volume(const std::filesystem::path& path);
VolumeBatch read_volume_batch(const std::filesystem::path& path);
LabelField read_label_field(const std::filesystem::path& path);

std::filesystem::path sidecar_path(const std::filesystem::path& path);
std::filesystem::path payload_path(const std::filesystem::path& path);

}  // namespace dycon
