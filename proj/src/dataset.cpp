#include "contood/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <random>
#include <string>

#include "contood/error.hpp"
#include "contood/rng.hpp"

namespace contood {

namespace {

constexpr int kMnistClasses = 10;
constexpr int kCifarClasses = 10;

std::uint32_t read_be32(std::span<const std::uint8_t> bytes, std::size_t offset) {
  return (std::uint32_t{bytes[offset]} << 24) |
         (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

void append_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

std::uint8_t quantize(float x) {
  const float scaled = std::round(std::clamp(x, 0.0f, 1.0f) * 255.0f);
  return static_cast<std::uint8_t>(scaled);
}

std::string hex32(std::uint32_t v) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string s = "0x";
  for (int shift = 28; shift >= 0; shift -= 4) s.push_back(digits[(v >> shift) & 0xf]);
  return s;
}

}  // namespace

std::string_view to_string(Source source) {
  switch (source) {
    case Source::mnist: return "mnist";
    case Source::fmnist: return "fmnist";
    case Source::cifar10: return "cifar10";
    case Source::synthetic: return "synthetic";
  }
  return "unknown";
}

Source parse_source(std::string_view name) {
  if (name == "mnist") return Source::mnist;
  if (name == "fmnist") return Source::fmnist;
  if (name == "cifar10") return Source::cifar10;
  if (name == "synthetic") return Source::synthetic;
  throw ValueError("unknown dataset '" + std::string(name) + "'");
}

LabeledDataset::LabeledDataset(std::size_t dim, int n_classes, Split split,
                               Source source)
    : dim_(dim), n_classes_(n_classes), split_(split), source_(source) {
  if (n_classes < 1) throw ValueError("dataset needs at least one class");
}

void LabeledDataset::add(std::span<const float> x, int label) {
  if (x.size() != dim_) {
    throw ShapeError("sample has dimension " + std::to_string(x.size()) +
                     ", dataset expects " + std::to_string(dim_));
  }
  if (label < 0 || label >= n_classes_) {
    throw ValueError("label " + std::to_string(label) + " outside [0, " +
                     std::to_string(n_classes_) + ")");
  }
  data_.insert(data_.end(), x.begin(), x.end());
  labels_.push_back(label);
}

void LabeledDataset::reserve(std::size_t n) {
  data_.reserve(n * dim_);
  labels_.reserve(n);
}

std::size_t LabeledDataset::count(int label) const {
  return static_cast<std::size_t>(std::count(labels_.begin(), labels_.end(), label));
}

std::vector<int> LabeledDataset::present_classes() const {
  std::vector<int> classes(labels_);
  std::sort(classes.begin(), classes.end());
  classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
  return classes;
}

// ---------------------------------------------------------------------------

LabeledDataset parse_idx_pair(std::span<const std::uint8_t> images,
                              std::span<const std::uint8_t> labels, Split split,
                              Source source) {
  if (images.size() < 16) {
    throw LengthError("IDX image file too short for its header (" +
                      std::to_string(images.size()) + " bytes)");
  }
  if (labels.size() < 8) {
    throw LengthError("IDX label file too short for its header (" +
                      std::to_string(labels.size()) + " bytes)");
  }
  if (const auto magic = read_be32(images, 0); magic != kIdxImageMagic) {
    throw FormatError("IDX image magic " + hex32(magic) + ", expected " +
                      hex32(kIdxImageMagic));
  }
  if (const auto magic = read_be32(labels, 0); magic != kIdxLabelMagic) {
    throw FormatError("IDX label magic " + hex32(magic) + ", expected " +
                      hex32(kIdxLabelMagic));
  }

  const std::size_t n_images = read_be32(images, 4);
  const std::size_t rows = read_be32(images, 8);
  const std::size_t cols = read_be32(images, 12);
  const std::size_t n_labels = read_be32(labels, 4);
  const std::size_t dim = rows * cols;

  if (images.size() != 16 + n_images * dim) {
    throw LengthError("IDX image file has " + std::to_string(images.size() - 16) +
                      " payload bytes, header declares " +
                      std::to_string(n_images * dim));
  }
  if (labels.size() != 8 + n_labels) {
    throw LengthError("IDX label file has " + std::to_string(labels.size() - 8) +
                      " payload bytes, header declares " + std::to_string(n_labels));
  }
  if (n_images != n_labels) {
    throw ConsistencyError(std::to_string(n_images) + " images but " +
                           std::to_string(n_labels) + " labels");
  }

  LabeledDataset ds(dim, kMnistClasses, split, source);
  ds.reserve(n_images);
  std::vector<float> pixels(dim);
  for (std::size_t i = 0; i < n_images; ++i) {
    const auto* src = images.data() + 16 + i * dim;
    std::transform(src, src + dim, pixels.begin(),
                   [](std::uint8_t b) { return static_cast<float>(b) / 255.0f; });
    ds.add(pixels, labels[8 + i]);
  }
  return ds;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path,
                      std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

LabeledDataset load_idx_pair(const std::filesystem::path& images_path,
                             const std::filesystem::path& labels_path, Split split,
                             Source source) {
  const auto images = read_file_bytes(images_path);
  const auto labels = read_file_bytes(labels_path);
  try {
    return parse_idx_pair(images, labels, split, source);
  } catch (Error& e) {
    e.add_context(images_path.filename().string() + " / " +
                  labels_path.filename().string());
    throw;
  }
}

LabeledDataset load_mnist_dir(const std::filesystem::path& dir, Split split,
                              Source source) {
  const std::string prefix = split == Split::train ? "train" : "t10k";
  auto pick = [&](const std::string& a, const std::string& b) {
    return std::filesystem::exists(dir / a) ? dir / a : dir / b;
  };
  return load_idx_pair(
      pick(prefix + "-images-idx3-ubyte", prefix + "-images.idx3-ubyte"),
      pick(prefix + "-labels-idx1-ubyte", prefix + "-labels.idx1-ubyte"), split,
      source);
}

std::vector<std::uint8_t> encode_idx_images(const LabeledDataset& ds,
                                            std::uint32_t rows, std::uint32_t cols) {
  if (std::size_t{rows} * cols != ds.dim()) {
    throw ShapeError("rows*cols does not match dataset dimension");
  }
  std::vector<std::uint8_t> out;
  out.reserve(16 + ds.data().size());
  append_be32(out, kIdxImageMagic);
  append_be32(out, static_cast<std::uint32_t>(ds.size()));
  append_be32(out, rows);
  append_be32(out, cols);
  for (float x : ds.data()) out.push_back(quantize(x));
  return out;
}

std::vector<std::uint8_t> encode_idx_labels(const LabeledDataset& ds) {
  std::vector<std::uint8_t> out;
  out.reserve(8 + ds.size());
  append_be32(out, kIdxLabelMagic);
  append_be32(out, static_cast<std::uint32_t>(ds.size()));
  for (int label : ds.labels()) out.push_back(static_cast<std::uint8_t>(label));
  return out;
}

// ---------------------------------------------------------------------------

LabeledDataset parse_cifar10(std::span<const std::uint8_t> bytes, Split split) {
  if (bytes.size() % kCifarRecord != 0) {
    throw FormatError("CIFAR-10 batch size " + std::to_string(bytes.size()) +
                      " is not a multiple of " + std::to_string(kCifarRecord));
  }
  const std::size_t n = bytes.size() / kCifarRecord;
  LabeledDataset ds(kCifarPixels, kCifarClasses, split, Source::cifar10);
  ds.reserve(n);
  std::vector<float> pixels(kCifarPixels);
  for (std::size_t i = 0; i < n; ++i) {
    const auto* record = bytes.data() + i * kCifarRecord;
    if (record[0] >= kCifarClasses) {
      throw ValueError("CIFAR-10 record " + std::to_string(i) + " has label " +
                       std::to_string(record[0]));
    }
    std::transform(record + 1, record + kCifarRecord, pixels.begin(),
                   [](std::uint8_t b) { return static_cast<float>(b) / 255.0f; });
    ds.add(pixels, record[0]);
  }
  return ds;
}

LabeledDataset load_cifar10(std::span<const std::filesystem::path> batch_paths,
                            Split split) {
  LabeledDataset ds(kCifarPixels, kCifarClasses, split, Source::cifar10);
  std::vector<LabeledDataset> parts;
  parts.push_back(ds);
  for (const auto& path : batch_paths) {
    try {
      parts.push_back(parse_cifar10(read_file_bytes(path), split));
    } catch (Error& e) {
      e.add_context(path.filename().string());
      throw;
    }
  }
  return concat(parts);
}

LabeledDataset load_cifar10_dir(const std::filesystem::path& dir, Split split) {
  std::vector<std::filesystem::path> paths;
  if (split == Split::train) {
    for (int i = 1; i <= 5; ++i) paths.push_back(dir / ("data_batch_" + std::to_string(i) + ".bin"));
  } else {
    paths.push_back(dir / "test_batch.bin");
  }
  return load_cifar10(paths, split);
}

std::vector<std::uint8_t> encode_cifar10(const LabeledDataset& ds) {
  if (ds.dim() != kCifarPixels) throw ShapeError("CIFAR-10 records need 3072 values");
  std::vector<std::uint8_t> out;
  out.reserve(ds.size() * kCifarRecord);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    out.push_back(static_cast<std::uint8_t>(ds.label(i)));
    for (float x : ds.sample(i)) out.push_back(quantize(x));
  }
  return out;
}

// ---------------------------------------------------------------------------

std::vector<std::vector<double>> axis_cluster_means(int n_classes, int dim,
                                                    double separation) {
  if (dim < n_classes) throw ValueError("axis means need dim >= n_classes");
  std::vector<std::vector<double>> means(n_classes, std::vector<double>(dim, 0.0));
  for (int c = 0; c < n_classes; ++c) means[c][c] = separation / std::sqrt(2.0);
  return means;
}

std::pair<LabeledDataset, LabeledDataset> make_synthetic(const SyntheticSpec& spec) {
  if (spec.n_classes < 2) throw ValueError("synthetic data needs n_classes >= 2");
  if (spec.dim < 1) throw ValueError("synthetic data needs dim >= 1");
  if (!(spec.cluster_std > 0.0)) throw ValueError("cluster_std must be > 0");
  if (spec.samples_per_class < 1) throw ValueError("samples_per_class must be >= 1");
  if (spec.cluster_means.size() != static_cast<std::size_t>(spec.n_classes)) {
    throw ValueError("need one cluster mean per class");
  }
  for (const auto& mean : spec.cluster_means) {
    if (mean.size() != static_cast<std::size_t>(spec.dim)) {
      throw ValueError("cluster mean dimension differs from dim");
    }
  }

  const auto dim = static_cast<std::size_t>(spec.dim);
  const int n_test = spec.samples_per_class / 5;
  const int n_train = spec.samples_per_class - n_test;

  LabeledDataset train(dim, spec.n_classes, Split::train, Source::synthetic);
  LabeledDataset test(dim, spec.n_classes, Split::test, Source::synthetic);
  train.reserve(static_cast<std::size_t>(n_train) * spec.n_classes);
  test.reserve(static_cast<std::size_t>(n_test) * spec.n_classes);

  Rng rng(derive_seed(spec.seed, SeedStream::synthetic));
  std::normal_distribution<double> noise(0.0, spec.cluster_std);
  std::vector<float> x(dim);
  for (int c = 0; c < spec.n_classes; ++c) {
    for (int j = 0; j < spec.samples_per_class; ++j) {
      for (std::size_t k = 0; k < dim; ++k) {
        x[k] = static_cast<float>(spec.cluster_means[c][k] + noise(rng));
      }
      (j < n_train ? train : test).add(x, c);
    }
  }
  return {std::move(train), std::move(test)};
}

// ---------------------------------------------------------------------------

LabeledDataset subset_classes(const LabeledDataset& ds, std::span<const int> classes,
                              bool relabel) {
  if (classes.empty()) throw ValueError("subset needs at least one class");
  std::vector<int> remap(static_cast<std::size_t>(ds.n_classes()), -1);
  for (std::size_t i = 0; i < classes.size(); ++i) {
    const int c = classes[i];
    if (c < 0 || c >= ds.n_classes() || ds.count(c) == 0) {
      throw ValueError("class " + std::to_string(c) + " not present in dataset");
    }
    if (remap[c] != -1) throw ValueError("class " + std::to_string(c) + " requested twice");
    remap[c] = relabel ? static_cast<int>(i) : c;
  }

  const int n_classes = relabel ? static_cast<int>(classes.size()) : ds.n_classes();
  LabeledDataset out(ds.dim(), n_classes, ds.split(), ds.source());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (const int to = remap[ds.label(i)]; to != -1) out.add(ds.sample(i), to);
  }
  return out;
}

LabeledDataset relabel_all(const LabeledDataset& ds, int label, int n_classes) {
  LabeledDataset out(ds.dim(), std::max(n_classes, label + 1), ds.split(), ds.source());
  out.reserve(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) out.add(ds.sample(i), label);
  return out;
}

LabeledDataset concat(std::span<const LabeledDataset> parts) {
  if (parts.empty()) throw ValueError("concat of zero datasets");
  int n_classes = 0;
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.dim() != parts.front().dim()) throw ShapeError("concat of mismatched dimensions");
    n_classes = std::max(n_classes, p.n_classes());
    total += p.size();
  }
  LabeledDataset out(parts.front().dim(), n_classes, parts.front().split(),
                     parts.front().source());
  out.reserve(total);
  for (const auto& p : parts) {
    for (std::size_t i = 0; i < p.size(); ++i) out.add(p.sample(i), p.label(i));
  }
  return out;
}

LabeledDataset take_first(const LabeledDataset& ds, std::size_t n) {
  LabeledDataset out(ds.dim(), ds.n_classes(), ds.split(), ds.source());
  n = std::min(n, ds.size());
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.add(ds.sample(i), ds.label(i));
  return out;
}

LabeledDataset subsample_per_class(const LabeledDataset& ds, std::size_t per_class,
                                   std::uint64_t seed) {
  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(seed, SeedStream::subsample));
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<std::size_t> taken(static_cast<std::size_t>(ds.n_classes()), 0);
  std::vector<char> keep(ds.size(), 0);
  for (std::size_t i : order) {
    if (taken[ds.label(i)] < per_class) {
      ++taken[ds.label(i)];
      keep[i] = 1;
    }
  }
  LabeledDataset out(ds.dim(), ds.n_classes(), ds.split(), ds.source());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (keep[i]) out.add(ds.sample(i), ds.label(i));
  }
  return out;
}

std::pair<std::vector<int>, std::vector<int>> choose_class_split(int n_classes, int n_id,
                                                                 std::uint64_t seed) {
  if (n_id < 1 || n_id > n_classes) throw ValueError("n_id must be in [1, n_classes]");
  std::vector<int> order(static_cast<std::size_t>(n_classes));
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, SeedStream::class_split));
  std::shuffle(order.begin(), order.end(), rng);
  return {std::vector<int>(order.begin(), order.begin() + n_id),
          std::vector<int>(order.begin() + n_id, order.end())};
}

}  // namespace contood
