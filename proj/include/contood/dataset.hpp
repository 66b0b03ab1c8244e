#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

namespace contood {

enum class Split { train, test };
enum class Source { mnist, fmnist, cifar10, synthetic };

std::string_view to_string(Source source);
Source parse_source(std::string_view name);

// Fixed-dimension feature vectors with integer labels in [0, n_classes).
// Samples are stored row-major in one contiguous float buffer.
class LabeledDataset {
 public:
  LabeledDataset() = default;
  LabeledDataset(std::size_t dim, int n_classes, Split split, Source source);

  // Appends one sample; throws ShapeError on a dimension mismatch and
  // ValueError on a label outside [0, n_classes).
  void add(std::span<const float> x, int label);
  void reserve(std::size_t n);

  std::size_t size() const noexcept { return labels_.size(); }
  bool empty() const noexcept { return labels_.empty(); }
  std::size_t dim() const noexcept { return dim_; }
  int n_classes() const noexcept { return n_classes_; }
  Split split() const noexcept { return split_; }
  Source source() const noexcept { return source_; }

  std::span<const float> sample(std::size_t i) const {
    return {data_.data() + i * dim_, dim_};
  }
  int label(std::size_t i) const { return labels_[i]; }
  const std::vector<int>& labels() const noexcept { return labels_; }
  const std::vector<float>& data() const noexcept { return data_; }

  std::size_t count(int label) const;
  // Sorted distinct labels that have at least one sample.
  std::vector<int> present_classes() const;

  friend bool operator==(const LabeledDataset&, const LabeledDataset&) = default;

 private:
  std::size_t dim_ = 0;
  int n_classes_ = 0;
  Split split_ = Split::train;
  Source source_ = Source::synthetic;
  std::vector<float> data_;
  std::vector<int> labels_;
};

// ---------------------------------------------------------------------------
// IDX (MNIST / Fashion-MNIST)
//
// images: [0x00000803][n][rows][cols] then n*rows*cols unsigned bytes
// labels: [0x00000801][n] then n unsigned bytes
// All header integers are big-endian. Pixels are scaled by 1/255.

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

LabeledDataset parse_idx_pair(std::span<const std::uint8_t> images,
                              std::span<const std::uint8_t> labels,
                              Split split = Split::train,
                              Source source = Source::mnist);

LabeledDataset load_idx_pair(const std::filesystem::path& images_path,
                             const std::filesystem::path& labels_path,
                             Split split = Split::train,
                             Source source = Source::mnist);

// Loads {train,t10k}-{images-idx3,labels-idx1}-ubyte from a directory.
// Accepts the "train-images.idx3-ubyte" spelling as well.
LabeledDataset load_mnist_dir(const std::filesystem::path& dir, Split split,
                              Source source = Source::mnist);

std::vector<std::uint8_t> encode_idx_images(const LabeledDataset& ds,
                                            std::uint32_t rows,
                                            std::uint32_t cols);
std::vector<std::uint8_t> encode_idx_labels(const LabeledDataset& ds);

// ---------------------------------------------------------------------------
// CIFAR-10 binary batches: 3073-byte records, 1 label byte then 3072 pixel
// bytes (1024 R, 1024 G, 1024 B; each plane row-major 32x32).

inline constexpr std::size_t kCifarPixels = 3072;
inline constexpr std::size_t kCifarRecord = kCifarPixels + 1;

LabeledDataset parse_cifar10(std::span<const std::uint8_t> bytes,
                             Split split = Split::train);
LabeledDataset load_cifar10(std::span<const std::filesystem::path> batch_paths,
                            Split split = Split::train);
// data_batch_1..5.bin for train, test_batch.bin for test.
LabeledDataset load_cifar10_dir(const std::filesystem::path& dir, Split split);
std::vector<std::uint8_t> encode_cifar10(const LabeledDataset& ds);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path,
                      std::span<const std::uint8_t> bytes);

// ---------------------------------------------------------------------------
// Synthetic Gaussian clusters

struct SyntheticSpec {
  int n_classes = 0;
  int dim = 0;
  std::vector<std::vector<double>> cluster_means;
  double cluster_std = 1.0;
  int samples_per_class = 0;
  std::uint64_t seed = 0;
};

// Class means on scaled coordinate axes, so every pair of means is exactly
// `separation` apart. Requires dim >= n_classes.
std::vector<std::vector<double>> axis_cluster_means(int n_classes, int dim,
                                                    double separation);

// Returns (train, test) with an 80/20 split per class (test gets
// samples_per_class / 5, train gets the rest).
std::pair<LabeledDataset, LabeledDataset> make_synthetic(const SyntheticSpec& spec);

// ---------------------------------------------------------------------------
// Views

// Keeps only samples whose label is in `classes`, in their original order.
// With relabel, class classes[i] becomes label i and n_classes becomes
// classes.size(). Unknown or absent ids throw ValueError.
LabeledDataset subset_classes(const LabeledDataset& ds,
                              std::span<const int> classes, bool relabel);

// Same samples with every label replaced by `label` (n_classes widened to
// fit). Used to hand a novel class its next free id.
LabeledDataset relabel_all(const LabeledDataset& ds, int label, int n_classes);

LabeledDataset concat(std::span<const LabeledDataset> parts);

// First `n` samples (or all, if fewer).
LabeledDataset take_first(const LabeledDataset& ds, std::size_t n);

// Seeded shuffle then at most `per_class` samples of each class.
LabeledDataset subsample_per_class(const LabeledDataset& ds,
                                   std::size_t per_class, std::uint64_t seed);

// Seeded permutation of [0, n_classes); the first n_id are ID, the rest form
// the novel-class stream in order.
std::pair<std::vector<int>, std::vector<int>> choose_class_split(
    int n_classes, int n_id, std::uint64_t seed);

}  // namespace contood
