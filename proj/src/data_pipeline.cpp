#include "msaunet/data_pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>

#include "msaunet/errors.hpp"
#include "msaunet/kernels.hpp"

namespace msaunet {
namespace {

std::int32_t keep_or_void(std::int64_t label, std::size_t num_classes, std::optional<std::int32_t> void_label) {
  if (label >= 0 && static_cast<std::size_t>(label) < num_classes) return static_cast<std::int32_t>(label);
  return void_label.value_or(-1);
}

// Draws in [0, 1) from the top 53 bits, independent of <random>'s
// distribution implementations.
double unit(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

std::size_t pick(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return lo + static_cast<std::size_t>(unit(rng) * static_cast<double>(hi - lo + 1));
}

std::array<double, 3> class_colour(std::size_t c) {
  static constexpr std::array<std::array<double, 3>, 8> kColours = {{{0.5, 0.5, 0.5},
                                                                      {0.9, 0.1, 0.1},
                                                                      {0.1, 0.2, 0.9},
                                                                      {0.1, 0.8, 0.2},
                                                                      {0.95, 0.85, 0.1},
                                                                      {0.8, 0.2, 0.9},
                                                                      {0.1, 0.85, 0.85},
                                                                      {0.95, 0.55, 0.1}}};
  if (c < kColours.size()) return kColours[c];
  const Rgb p = voc_palette(c + 1)[c];
  return {p[0] / 255.0, p[1] / 255.0, p[2] / 255.0};
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::filesystem::path unique_file(const std::filesystem::path& dir, const std::string& stem,
                                  std::initializer_list<const char*> extensions, const char* what) {
  std::vector<std::filesystem::path> found;
  for (const char* ext : extensions) {
    auto p = dir / (stem + ext);
    if (std::filesystem::is_regular_file(p)) found.push_back(std::move(p));
  }
  if (found.empty()) throw DatasetError("no " + std::string(what) + " file for '" + stem + "' in " + dir.string());
  if (found.size() > 1) {
    throw DatasetError("ambiguous " + std::string(what) + " for '" + stem + "': " + found[0].filename().string() +
                       " and " + found[1].filename().string());
  }
  return found.front();
}

}  // namespace

MaskEncoding parse_mask_encoding(const std::string& name) {
  if (name == "indexed-palette") return MaskEncoding::IndexedPalette;
  if (name == "ade-rg-channels") return MaskEncoding::AdeRgChannels;
  if (name == "raw-class-index") return MaskEncoding::RawClassIndex;
  throw UnsupportedError("unsupported mask encoding '" + name +
                         "' (expected indexed-palette, ade-rg-channels or raw-class-index)");
}

std::string to_string(MaskEncoding encoding) {
  switch (encoding) {
    case MaskEncoding::IndexedPalette:
      return "indexed-palette";
    case MaskEncoding::AdeRgChannels:
      return "ade-rg-channels";
    case MaskEncoding::RawClassIndex:
      return "raw-class-index";
  }
  return "?";
}

ClassMask decode_mask(const RasterImage& raw, MaskEncoding encoding, std::size_t num_classes,
                      std::optional<std::int32_t> void_label) {
  if (raw.pixels.size() != raw.width * raw.height * raw.channels || raw.channels == 0) {
    throw ImageError("decode_mask: malformed raster");
  }
  ClassMask mask(raw.height, raw.width, num_classes);
  const std::size_t plane = raw.width * raw.height;
  switch (encoding) {
    case MaskEncoding::IndexedPalette: {
      if (raw.channels == 1) {
        for (std::size_t i = 0; i < plane; ++i) mask.labels[i] = keep_or_void(raw.pixels[i], num_classes, void_label);
        break;
      }
      // Colour-rendered palette masks: map each colour back to its index.
      const auto palette = raw.palette.empty() ? voc_palette() : raw.palette;
      for (std::size_t i = 0; i < plane; ++i) {
        const Rgb c{raw.pixels[3 * i], raw.pixels[3 * i + 1], raw.pixels[3 * i + 2]};
        const auto it = std::find(palette.begin(), palette.end(), c);
        const std::int64_t index = it == palette.end() ? -1 : it - palette.begin();
        mask.labels[i] = keep_or_void(index, num_classes, void_label);
      }
      break;
    }
    case MaskEncoding::AdeRgChannels:
      if (raw.channels != 3) throw ImageError("decode_mask: ade-rg-channels needs an RGB mask");
      for (std::size_t i = 0; i < plane; ++i) {
        const std::int64_t label = (raw.pixels[3 * i] / 10) * 256 + raw.pixels[3 * i + 1];
        mask.labels[i] = keep_or_void(label, num_classes, void_label);
      }
      break;
    case MaskEncoding::RawClassIndex:
      if (raw.channels != 1) throw ImageError("decode_mask: raw-class-index needs a single-channel mask");
      for (std::size_t i = 0; i < plane; ++i) mask.labels[i] = keep_or_void(raw.pixels[i], num_classes, void_label);
      break;
  }
  return mask;
}

Tensor preprocess(const RasterImage& image, std::size_t target_h, std::size_t target_w, const Normalization& norm) {
  if (target_h == 0 || target_w == 0 || target_h % 32 != 0 || target_w % 32 != 0) {
    throw DimensionError("preprocess: target " + std::to_string(target_h) + "x" + std::to_string(target_w) +
                         " is not a multiple of 32");
  }
  if (image.width == 0 || image.height == 0 || (image.channels != 1 && image.channels != 3) ||
      image.pixels.size() != image.width * image.height * image.channels) {
    throw ImageError("preprocess: unreadable image");
  }
  if (image.indexed) throw ImageError("preprocess: palette indices are not colour data");
  const std::size_t plane = image.width * image.height;
  std::vector<double> planes(3 * plane);
  for (std::size_t c = 0; c < 3; ++c) {
    const std::size_t src = image.channels == 1 ? 0 : c;
    for (std::size_t i = 0; i < plane; ++i) planes[c * plane + i] = image.pixels[i * image.channels + src] / 255.0;
  }
  Tensor out = Tensor::nchw(1, 3, target_h, target_w);
  kernels::resize_bilinear_forward(3, image.height, image.width, target_h, target_w, planes, out.span());
  const std::size_t out_plane = target_h * target_w;
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < out_plane; ++i) {
      out[c * out_plane + i] = (out[c * out_plane + i] - norm.mean[c]) / norm.std[c];
    }
  }
  return out;
}

ClassMask resize_mask(const ClassMask& mask, std::size_t target_h, std::size_t target_w) {
  ClassMask out(target_h, target_w, mask.num_classes);
  for (std::size_t y = 0; y < target_h; ++y) {
    const std::size_t sy = std::min(mask.height - 1, (2 * y + 1) * mask.height / (2 * target_h));
    for (std::size_t x = 0; x < target_w; ++x) {
      const std::size_t sx = std::min(mask.width - 1, (2 * x + 1) * mask.width / (2 * target_w));
      out.at(y, x) = mask.at(sy, sx);
    }
  }
  return out;
}

std::vector<Sample> synthetic_shapes(std::size_t num_samples, std::size_t size, std::size_t num_classes,
                                     std::uint64_t seed, const Normalization& norm) {
  if (num_classes < 2) throw InvalidSpecError("synthetic_shapes: num_classes must be >= 2");
  if (size < 8) throw InvalidSpecError("synthetic_shapes: size must be >= 8");
  std::mt19937_64 rng(seed);
  std::vector<Sample> out;
  out.reserve(num_samples);
  const std::size_t plane = size * size;
  for (std::size_t s = 0; s < num_samples; ++s) {
    Sample sample;
    sample.id = "synthetic_" + std::to_string(s);
    sample.mask = ClassMask(size, size, num_classes, 0);
    // Up to three rectangles, each at most a quarter of the canvas, so
    // background always survives.
    const std::size_t rects = pick(rng, 1, 3);
    for (std::size_t r = 0; r < rects; ++r) {
      const auto label = static_cast<std::int32_t>(pick(rng, 1, num_classes - 1));
      const std::size_t h = pick(rng, size / 8, size / 2), w = pick(rng, size / 8, size / 2);
      const std::size_t y0 = pick(rng, 0, size - h), x0 = pick(rng, 0, size - w);
      for (std::size_t y = y0; y < y0 + h; ++y) {
        for (std::size_t x = x0; x < x0 + w; ++x) sample.mask.at(y, x) = label;
      }
    }
    sample.image = Tensor::nchw(1, 3, size, size);
    for (std::size_t i = 0; i < plane; ++i) {
      const auto colour = class_colour(static_cast<std::size_t>(sample.mask.labels[i]));
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = std::clamp(colour[c] + 0.08 * (unit(rng) - 0.5), 0.0, 1.0);
        sample.image[c * plane + i] = (v - norm.mean[c]) / norm.std[c];
      }
    }
    out.push_back(std::move(sample));
  }
  return out;
}

std::vector<std::string> dataset_stems(const DatasetLayout& layout) {
  std::vector<std::string> stems;
  if (!layout.split_list.empty()) {
    const auto list = layout.root / layout.split_list;
    std::ifstream in(list);
    if (!in) throw DatasetError("cannot read split list " + list.string());
    std::string line;
    while (std::getline(in, line)) {
      line = trim(line);
      if (!line.empty()) stems.push_back(line);
    }
  } else {
    const auto dir = layout.root / layout.image_dir;
    if (!std::filesystem::is_directory(dir)) throw DatasetError("image directory not found: " + dir.string());
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
      if (!entry.is_regular_file()) continue;
      auto ext = entry.path().extension().string();
      std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
      if (ext == ".jpg" || ext == ".jpeg" || ext == ".png") stems.push_back(entry.path().stem().string());
    }
    std::sort(stems.begin(), stems.end());
    stems.erase(std::unique(stems.begin(), stems.end()), stems.end());
  }
  if (stems.empty()) throw DatasetError("dataset under " + layout.root.string() + " lists no samples");
  return stems;
}

std::vector<Sample> load_dataset(const DatasetLayout& layout, std::size_t target_h, std::size_t target_w,
                                 const Normalization& norm) {
  std::vector<Sample> samples;
  for (const auto& stem : dataset_stems(layout)) {
    const auto image_path = unique_file(layout.root / layout.image_dir, stem, {".jpg", ".jpeg", ".png"}, "image");
    const auto mask_path = unique_file(layout.root / layout.mask_dir, stem, {".png"}, "mask");
    const RasterImage image = read_image(image_path);
    const RasterImage raw_mask = read_image(mask_path, true);
    if (image.width != raw_mask.width || image.height != raw_mask.height) {
      throw DatasetError("image and mask sizes differ for '" + stem + "'");
    }
    Sample s;
    s.id = stem;
    s.image = preprocess(image, target_h, target_w, norm);
    s.mask = resize_mask(decode_mask(raw_mask, layout.mask_encoding, layout.num_classes, layout.void_label),
                         target_h, target_w);
    samples.push_back(std::move(s));
  }
  return samples;
}

BatchIterator::BatchIterator(const std::vector<Sample>& dataset, std::size_t batch_size,
                             std::optional<std::uint64_t> shuffle_seed)
    : dataset_(&dataset), batch_size_(batch_size), seed_(shuffle_seed) {
  if (dataset.empty()) throw DatasetError("batches: empty dataset");
  if (batch_size < 1) throw InvalidSpecError("batches: batch_size must be >= 1");
  start_epoch(0);
}

void BatchIterator::start_epoch(std::size_t epoch) {
  order_.resize(dataset_->size());
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  if (seed_) {
    std::mt19937_64 rng(*seed_ + 0x9e3779b97f4a7c15ULL * (epoch + 1));
    std::shuffle(order_.begin(), order_.end(), rng);
  }
  cursor_ = 0;
}

bool BatchIterator::next(Batch& out) {
  if (cursor_ >= order_.size()) return false;
  const std::size_t end = std::min(order_.size(), cursor_ + batch_size_);
  std::vector<Tensor> images;
  out.masks.clear();
  out.ids.clear();
  for (std::size_t i = cursor_; i < end; ++i) {
    const Sample& s = (*dataset_)[order_[i]];
    images.push_back(s.image);
    out.masks.push_back(s.mask);
    out.ids.push_back(s.id);
  }
  out.images = stack_batch(images);
  cursor_ = end;
  return true;
}

std::size_t BatchIterator::batches_per_epoch() const { return (order_.size() + batch_size_ - 1) / batch_size_; }

}  // namespace msaunet
