#include "msaunet/image_io.hpp"

#include <cerrno>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <memory>
#include <string>

#include <jpeglib.h>
#include <png.h>

#include "msaunet/errors.hpp"

namespace msaunet {
namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw ImageError("cannot open " + path.string() + ": " + std::strerror(errno));
  return f;
}

struct PngError {
  std::jmp_buf jump;
  char message[256] = "";
};

void png_error_handler(png_structp png, png_const_charp msg) {
  auto* err = static_cast<PngError*>(png_get_error_ptr(png));
  std::snprintf(err->message, sizeof err->message, "%s", msg);
  std::longjmp(err->jump, 1);
}

void png_warning_handler(png_structp, png_const_charp) {}

RasterImage read_png(std::FILE* file, const std::filesystem::path& path, bool keep_indices) {
  PngError err;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, png_error_handler, png_warning_handler);
  if (!png) throw ImageError("libpng: out of memory");
  png_infop info = png_create_info_struct(png);
  RasterImage img;
  std::vector<png_bytep> rows;
  if (setjmp(err.jump)) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ImageError("malformed PNG " + path.string() + ": " + err.message);
  }
  png_init_io(png, file);
  png_read_info(png, info);
  const png_byte color = png_get_color_type(png, info);
  const png_byte depth = png_get_bit_depth(png, info);
  const bool palette = color == PNG_COLOR_TYPE_PALETTE;

  if (palette && keep_indices) {
    png_colorp entries = nullptr;
    int count = 0;
    if (png_get_PLTE(png, info, &entries, &count) != 0) {
      for (int i = 0; i < count; ++i) img.palette.push_back({entries[i].red, entries[i].green, entries[i].blue});
    }
    if (depth < 8) png_set_packing(png);
    img.indexed = true;
  } else {
    if (palette) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (depth == 16) png_set_strip_16(png);
    const bool trns = png_get_valid(png, info, PNG_INFO_tRNS) != 0;
    if (trns) png_set_tRNS_to_alpha(png);
    if ((color & PNG_COLOR_MASK_ALPHA) || trns) png_set_strip_alpha(png);
  }
  png_read_update_info(png, info);
  img.width = png_get_image_width(png, info);
  img.height = png_get_image_height(png, info);
  img.channels = png_get_channels(png, info);
  if (img.channels != 1 && img.channels != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ImageError("unsupported PNG channel layout in " + path.string());
  }
  img.pixels.resize(img.width * img.height * img.channels);
  rows.resize(img.height);
  for (std::size_t y = 0; y < img.height; ++y) rows[y] = img.pixels.data() + y * img.width * img.channels;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

struct JpegError {
  jpeg_error_mgr mgr;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX] = "";
};

void jpeg_error_handler(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegError*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

RasterImage read_jpeg(std::FILE* file, const std::filesystem::path& path) {
  jpeg_decompress_struct cinfo;
  JpegError err;
  cinfo.err = jpeg_std_error(&err.mgr);
  err.mgr.error_exit = jpeg_error_handler;
  RasterImage img;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw ImageError("malformed JPEG " + path.string() + ": " + err.message);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_stdio_src(&cinfo, file);
  jpeg_read_header(&cinfo, TRUE);
  if (cinfo.num_components != 1) cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  img.width = cinfo.output_width;
  img.height = cinfo.output_height;
  img.channels = static_cast<std::size_t>(cinfo.output_components);
  img.pixels.resize(img.width * img.height * img.channels);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = img.pixels.data() + cinfo.output_scanline * img.width * img.channels;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return img;
}

}  // namespace

RasterImage read_image(const std::filesystem::path& path, bool keep_indices) {
  FilePtr file = open_file(path, "rb");
  unsigned char magic[8] = {};
  const std::size_t got = std::fread(magic, 1, sizeof magic, file.get());
  std::rewind(file.get());
  if (got == 8 && png_sig_cmp(magic, 0, 8) == 0) return read_png(file.get(), path, keep_indices);
  if (got >= 3 && magic[0] == 0xFF && magic[1] == 0xD8 && magic[2] == 0xFF) return read_jpeg(file.get(), path);
  throw ImageError("not a PNG or JPEG image: " + path.string());
}

void write_png(const std::filesystem::path& path, const RasterImage& image) {
  if (image.channels != 1 && image.channels != 3) throw ImageError("write_png: channels must be 1 or 3");
  if (image.indexed && (image.channels != 1 || image.palette.empty() || image.palette.size() > 256)) {
    throw ImageError("write_png: indexed images need one channel and 1-256 palette entries");
  }
  if (image.pixels.size() != image.width * image.height * image.channels || image.width == 0 || image.height == 0) {
    throw ImageError("write_png: pixel buffer does not match the image size");
  }
  FilePtr file = open_file(path, "wb");
  PngError err;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, png_error_handler, png_warning_handler);
  if (!png) throw ImageError("libpng: out of memory");
  png_infop info = png_create_info_struct(png);
  std::vector<png_color> entries;
  std::vector<png_bytep> rows(image.height);
  if (setjmp(err.jump)) {
    png_destroy_write_struct(&png, &info);
    throw ImageError("cannot write PNG " + path.string() + ": " + err.message);
  }
  png_init_io(png, file.get());
  const int color = image.indexed ? PNG_COLOR_TYPE_PALETTE : image.channels == 1 ? PNG_COLOR_TYPE_GRAY
                                                                                 : PNG_COLOR_TYPE_RGB;
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height), 8, color,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  if (image.indexed) {
    for (const auto& c : image.palette) entries.push_back({c[0], c[1], c[2]});
    png_set_PLTE(png, info, entries.data(), static_cast<int>(entries.size()));
  }
  png_write_info(png, info);
  for (std::size_t y = 0; y < image.height; ++y) {
    rows[y] = const_cast<png_bytep>(image.pixels.data() + y * image.width * image.channels);
  }
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  if (std::fflush(file.get()) != 0) throw ImageError("cannot write PNG " + path.string());
}

std::vector<Rgb> voc_palette(std::size_t entries) {
  std::vector<Rgb> palette(entries);
  for (std::size_t i = 0; i < entries; ++i) {
    std::size_t label = i;
    Rgb c{0, 0, 0};
    for (int shift = 7; label != 0 && shift >= 0; --shift) {
      for (std::size_t ch = 0; ch < 3; ++ch) c[ch] = static_cast<std::uint8_t>(c[ch] | (((label >> ch) & 1) << shift));
      label >>= 3;
    }
    palette[i] = c;
  }
  return palette;
}

}  // namespace msaunet
