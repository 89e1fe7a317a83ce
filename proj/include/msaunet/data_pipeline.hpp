#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "msaunet/image_io.hpp"
#include "msaunet/tensor.hpp"
#include "msaunet/types.hpp"

namespace msaunet {

enum class MaskEncoding { IndexedPalette, AdeRgChannels, RawClassIndex };

MaskEncoding parse_mask_encoding(const std::string& name);
std::string to_string(MaskEncoding encoding);

struct DatasetLayout {
  std::filesystem::path root;
  std::string image_dir = "JPEGImages";
  std::string mask_dir = "SegmentationClass";
  std::string split_list;  // file of stems relative to root; empty lists image_dir
  MaskEncoding mask_encoding = MaskEncoding::IndexedPalette;
  std::size_t num_classes = 21;
  std::optional<std::int32_t> void_label = 255;

  // Label stored for pixels outside [0, num_classes).
  std::int32_t void_value() const { return void_label.value_or(-1); }
};

struct Normalization {
  std::array<double, 3> mean{0.485, 0.456, 0.406};
  std::array<double, 3> std{0.229, 0.224, 0.225};

  static Normalization imagenet() { return {}; }
  static Normalization half() { return {{0.5, 0.5, 0.5}, {0.5, 0.5, 0.5}}; }
};

struct Sample {
  Tensor image;  // [1, 3, H, W], normalized
  ClassMask mask;
  std::string id;
};

// Out-of-range labels become void_value (or -1 when there is no void label).
ClassMask decode_mask(const RasterImage& raw, MaskEncoding encoding, std::size_t num_classes,
                      std::optional<std::int32_t> void_label = 255);

// Bilinear (corner-aligned) resize to target, scaled to [0, 1] and
// normalized per channel. Grayscale inputs are replicated to three
// channels. Target sides must be multiples of 32.
Tensor preprocess(const RasterImage& image, std::size_t target_h, std::size_t target_w,
                  const Normalization& norm = Normalization::imagenet());

// Nearest-neighbour resize using pixel centres.
ClassMask resize_mask(const ClassMask& mask, std::size_t target_h, std::size_t target_w);

// Coloured axis-aligned rectangles on a noisy grey background; each
// rectangle's class sets its colour. Deterministic in the seed.
std::vector<Sample> synthetic_shapes(std::size_t num_samples, std::size_t size, std::size_t num_classes,
                                     std::uint64_t seed, const Normalization& norm = Normalization::half());

// Stems listed in layout.split_list, or every image stem in image_dir.
std::vector<std::string> dataset_stems(const DatasetLayout& layout);

// Loads and preprocesses every listed sample.
std::vector<Sample> load_dataset(const DatasetLayout& layout, std::size_t target_h, std::size_t target_w,
                                 const Normalization& norm);

struct Batch {
  Tensor images;  // [n, 3, H, W]
  std::vector<ClassMask> masks;
  std::vector<std::string> ids;
};

// Fixed-size batches over a dataset, the last one possibly short. With a
// shuffle seed the order is a fresh permutation each epoch, determined by
// the seed and the epoch number.
class BatchIterator {
 public:
  BatchIterator(const std::vector<Sample>& dataset, std::size_t batch_size,
                std::optional<std::uint64_t> shuffle_seed = std::nullopt);

  void start_epoch(std::size_t epoch);
  bool next(Batch& out);
  std::size_t batches_per_epoch() const;

 private:
  const std::vector<Sample>* dataset_;
  std::size_t batch_size_;
  std::optional<std::uint64_t> seed_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

}  // namespace msaunet
