#include <cstdio>
#include <fstream>
#include <random>
#include <set>

#include <jpeglib.h>

#include "doctest.h"
#include "msaunet/data_pipeline.hpp"
#include "msaunet/errors.hpp"
#include "msaunet/image_io.hpp"
#include "support.hpp"

using namespace msaunet;

namespace {

RasterImage rgb(std::size_t w, std::size_t h, Rgb fill) {
  RasterImage img{w, h, 3, false, {}, {}};
  img.pixels.resize(w * h * 3);
  for (std::size_t i = 0; i < w * h; ++i) {
    for (std::size_t c = 0; c < 3; ++c) img.pixels[i * 3 + c] = fill[c];
  }
  return img;
}

RasterImage gray(std::size_t w, std::size_t h, std::uint8_t v) {
  return RasterImage{w, h, 1, false, std::vector<std::uint8_t>(w * h, v), {}};
}

void write_jpeg(const std::filesystem::path& path, const RasterImage& img) {
  jpeg_compress_struct cinfo{};
  jpeg_error_mgr jerr{};
  cinfo.err = jpeg_std_error(&jerr);
  jpeg_create_compress(&cinfo);
  FILE* f = std::fopen(path.c_str(), "wb");
  REQUIRE(f != nullptr);
  jpeg_stdio_dest(&cinfo, f);
  cinfo.image_width = static_cast<JDIMENSION>(img.width);
  cinfo.image_height = static_cast<JDIMENSION>(img.height);
  cinfo.input_components = 3;
  cinfo.in_color_space = JCS_RGB;
  jpeg_set_defaults(&cinfo);
  jpeg_set_quality(&cinfo, 100, TRUE);
  jpeg_start_compress(&cinfo, TRUE);
  while (cinfo.next_scanline < cinfo.image_height) {
    auto* row = const_cast<JSAMPLE*>(img.pixels.data() + cinfo.next_scanline * img.width * 3);
    jpeg_write_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_compress(&cinfo);
  jpeg_destroy_compress(&cinfo);
  std::fclose(f);
}

std::vector<Sample> numbered(std::size_t n) {
  std::vector<Sample> s(n);
  for (std::size_t i = 0; i < n; ++i) {
    s[i].image = Tensor::nchw(1, 3, 2, 2, static_cast<double>(i));
    s[i].mask = ClassMask(2, 2, 2);
    s[i].id = "s" + std::to_string(i);
  }
  return s;
}

}  // namespace

TEST_SUITE("data_pipeline") {
  TEST_CASE("mask encodings") {
    CHECK(parse_mask_encoding("indexed-palette") == MaskEncoding::IndexedPalette);
    CHECK(parse_mask_encoding("ade-rg-channels") == MaskEncoding::AdeRgChannels);
    CHECK(to_string(MaskEncoding::RawClassIndex) == "raw-class-index");
    CHECK_THROWS_AS(parse_mask_encoding("bogus"), UnsupportedError);

    const ClassMask three = decode_mask(gray(5, 4, 3), MaskEncoding::RawClassIndex, 5);
    CHECK(three.height == 4);
    for (auto l : three.labels) CHECK(l == 3);

    const ClassMask ade = decode_mask(rgb(2, 2, {10, 5, 77}), MaskEncoding::AdeRgChannels, 3000);
    for (auto l : ade.labels) CHECK(l == 261);
    // Labels past num_classes become void, or -1 without a void label.
    const ClassMask small = decode_mask(rgb(1, 1, {30, 0, 0}), MaskEncoding::AdeRgChannels, 150, std::nullopt);
    CHECK(small.labels[0] == -1);

    RasterImage indexed = gray(2, 1, 255);
    indexed.indexed = true;
    indexed.palette = voc_palette();
    indexed.pixels[0] = 1;
    const ClassMask voc = decode_mask(indexed, MaskEncoding::IndexedPalette, 21);
    CHECK(voc.labels == std::vector<std::int32_t>{1, 255});
    CHECK(voc.is_void(1));
    // RGB-expanded palette masks go back through the colour map.
    const auto pal = voc_palette();
    CHECK(decode_mask(rgb(1, 1, pal[15]), MaskEncoding::IndexedPalette, 21).labels[0] == 15);

    CHECK_THROWS_AS(decode_mask(rgb(1, 1, {0, 0, 0}), MaskEncoding::RawClassIndex, 3), ImageError);
  }

  TEST_CASE("raw-class-index round trip through PNG") {
    testing::TempDir dir("mask_png");
    std::mt19937_64 rng(1);
    RasterImage raw = gray(7, 5, 0);
    for (auto& p : raw.pixels) p = static_cast<std::uint8_t>(rng() % 6);
    write_png(dir.path() / "m.png", raw);
    const ClassMask m = decode_mask(read_image(dir.path() / "m.png"), MaskEncoding::RawClassIndex, 6);
    for (std::size_t i = 0; i < raw.pixels.size(); ++i) CHECK(m.labels[i] == raw.pixels[i]);
  }

  TEST_CASE("preprocess sizes and normalization") {
    const Tensor t = preprocess(rgb(500, 375, {10, 200, 90}), 224, 224);
    CHECK(t.shape() == Tensor::Shape{1, 3, 224, 224});
    CHECK(t.at(0, 1, 100, 100) == doctest::Approx((200.0 / 255.0 - 0.456) / 0.224).epsilon(1e-12));

    // 0.5 gray is not representable in 8 bits; build the expected value from the stored byte.
    const Tensor g = preprocess(gray(40, 30, 128), 64, 96);
    const auto norm = Normalization::imagenet();
    for (std::size_t c = 0; c < 3; ++c) {
      const double expect = (128.0 / 255.0 - norm.mean[c]) / norm.std[c];
      CHECK(g.at(0, c, 0, 0) == doctest::Approx(expect).epsilon(1e-12));
      CHECK(g.at(0, c, 63, 95) == doctest::Approx(expect).epsilon(1e-12));
    }
    CHECK_THROWS_AS(preprocess(gray(4, 4, 0), 48, 64), DimensionError);
  }

  TEST_CASE("nearest mask resize keeps only existing labels") {
    std::mt19937_64 rng(2);
    ClassMask m(13, 9, 21);
    for (auto& l : m.labels) l = static_cast<std::int32_t>(rng() % 3) * 7;
    m.labels[0] = 255;
    const std::set<std::int32_t> before(m.labels.begin(), m.labels.end());
    const ClassMask r = resize_mask(m, 32, 64);
    CHECK(r.height == 32);
    CHECK(r.width == 64);
    for (auto l : r.labels) CHECK(before.count(l) == 1);
    CHECK(resize_mask(m, 13, 9).labels == m.labels);
  }

  TEST_CASE("synthetic shapes") {
    const auto a = synthetic_shapes(4, 64, 3, 7);
    const auto b = synthetic_shapes(4, 64, 3, 7);
    const auto c = synthetic_shapes(4, 64, 3, 8);
    REQUIRE(a.size() == 4);
    bool differs = false;
    for (std::size_t i = 0; i < 4; ++i) {
      CHECK(a[i].image == b[i].image);
      CHECK(a[i].mask.labels == b[i].mask.labels);
      differs |= a[i].mask.labels != c[i].mask.labels;
      CHECK(a[i].image.shape() == Tensor::Shape{1, 3, 64, 64});
      std::size_t background = 0;
      for (auto l : a[i].mask.labels) {
        CHECK(l >= 0);
        CHECK(l < 3);
        background += l == 0;
      }
      CHECK(background > 0);
      CHECK(background < 64 * 64);
    }
    CHECK(differs);
    CHECK_THROWS_AS(synthetic_shapes(1, 64, 1, 0), InvalidSpecError);
  }

  TEST_CASE("batching: sizes, determinism and partition") {
    const auto data = numbered(10);
    BatchIterator plain(data, 4);
    CHECK(plain.batches_per_epoch() == 3);
    plain.start_epoch(0);
    Batch batch;
    std::vector<std::size_t> sizes;
    while (plain.next(batch)) {
      sizes.push_back(batch.ids.size());
      CHECK(batch.images.batch() == batch.ids.size());
      CHECK(batch.masks.size() == batch.ids.size());
    }
    CHECK(sizes == std::vector<std::size_t>{4, 4, 2});

    auto epoch_ids = [&](std::uint64_t seed, std::size_t epoch) {
      BatchIterator it(data, 3, seed);
      it.start_epoch(epoch);
      std::vector<std::string> ids;
      Batch b;
      while (it.next(b)) {
        for (std::size_t i = 0; i < b.ids.size(); ++i) {
          ids.push_back(b.ids[i]);
          // Images follow their ids through the shuffle.
          CHECK(b.images.at(i, 0, 0, 0) == std::stod(b.ids[i].substr(1)));
        }
      }
      return ids;
    };
    const auto first = epoch_ids(5, 0);
    CHECK(first == epoch_ids(5, 0));
    CHECK(first != epoch_ids(5, 1));
    CHECK(std::set<std::string>(first.begin(), first.end()).size() == 10);
    CHECK(first.size() == 10);

    const std::vector<Sample> none;
    CHECK_THROWS_AS(BatchIterator(none, 2), DatasetError);
  }

  TEST_CASE("PNG and JPEG readers") {
    testing::TempDir dir("image_io");
    RasterImage img = rgb(6, 4, {0, 0, 0});
    for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = static_cast<std::uint8_t>(i * 7);
    write_png(dir.path() / "a.png", img);
    const RasterImage back = read_image(dir.path() / "a.png");
    CHECK(back.width == 6);
    CHECK(back.channels == 3);
    CHECK(back.pixels == img.pixels);

    write_jpeg(dir.path() / "flat.jpg", rgb(16, 16, {120, 60, 200}));
    const RasterImage j = read_image(dir.path() / "flat.jpg");
    CHECK(j.width == 16);
    CHECK(j.channels == 3);
    for (std::size_t c = 0; c < 3; ++c) CHECK(std::abs(int(j.pixels[c]) - int(rgb(1, 1, {120, 60, 200}).pixels[c])) <= 2);

    RasterImage pal = gray(3, 1, 0);
    pal.indexed = true;
    pal.palette = voc_palette(21);
    pal.pixels = {0, 1, 20};
    write_png(dir.path() / "p.png", pal);
    const RasterImage idx = read_image(dir.path() / "p.png", true);
    CHECK(idx.indexed);
    CHECK(idx.pixels == pal.pixels);
    const RasterImage expanded = read_image(dir.path() / "p.png");
    CHECK(expanded.channels == 3);
    CHECK(expanded.pixels[3] == 128);  // VOC class 1 is (128, 0, 0)

    std::ofstream(dir.path() / "junk.png") << "not an image";
    CHECK_THROWS_AS(read_image(dir.path() / "junk.png"), ImageError);
    CHECK_THROWS(read_image(dir.path() / "missing.png"));
  }

  TEST_CASE("dataset loading from a directory layout") {
    testing::TempDir dir("layout");
    std::filesystem::create_directories(dir.path() / "JPEGImages");
    std::filesystem::create_directories(dir.path() / "SegmentationClass");
    for (const char* stem : {"b", "a"}) {
      write_jpeg(dir.path() / "JPEGImages" / (std::string(stem) + ".jpg"), rgb(40, 30, {90, 90, 90}));
      RasterImage mask = gray(40, 30, 0);
      mask.indexed = true;
      mask.palette = voc_palette();
      mask.pixels[5] = 2;
      mask.pixels[6] = 255;
      write_png(dir.path() / "SegmentationClass" / (std::string(stem) + ".png"), mask);
    }
    DatasetLayout layout;
    layout.root = dir.path();
    CHECK(dataset_stems(layout) == std::vector<std::string>{"a", "b"});
    const auto samples = load_dataset(layout, 32, 64, Normalization::imagenet());
    REQUIRE(samples.size() == 2);
    CHECK(samples[0].id == "a");
    CHECK(samples[0].image.shape() == Tensor::Shape{1, 3, 32, 64});
    CHECK(samples[0].mask.width == 64);
    for (auto l : samples[0].mask.labels) CHECK((l == 0 || l == 2 || l == 255));

    std::ofstream(dir.path() / "split.txt") << "b\n\nc\n";
    layout.split_list = "split.txt";
    CHECK_THROWS_AS(load_dataset(layout, 32, 64, Normalization::imagenet()), DatasetError);
  }
}
