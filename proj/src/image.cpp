// Copyright Contributors to the sdfsplat Project
// SPDX-License-Identifier: Apache-2.0

#include "sdfsplat/image.hpp"

#include <png.h>

#include <cstdio>
#include <cstring>
#include <memory>

#include "sdfsplat/common.hpp"

namespace sdfsplat {

namespace {

struct FileCloser {
  void operator()(FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

FilePtr open_or_throw(const std::string& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw IoError("cannot open file: " + path);
  return f;
}

struct PngWriter {
  png_structp png = nullptr;
  png_infop info = nullptr;
  PngWriter() {
    png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr,
                                  nullptr);
    if (png) info = png_create_info_struct(png);
  }
  ~PngWriter() { png_destroy_write_struct(&png, &info); }
};

struct PngReader {
  png_structp png = nullptr;
  png_infop info = nullptr;
  PngReader() {
    png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr,
                                 nullptr);
    if (png) info = png_create_info_struct(png);
  }
  ~PngReader() { png_destroy_read_struct(&png, &info, nullptr); }
};

void write_png(const std::string& path, int height, int width, int bit_depth,
               int color_type, const std::vector<png_bytep>& rows,
               bool pack_bits, bool swap16) {
  FilePtr f = open_or_throw(path, "wb");
  PngWriter w;
  if (!w.png || !w.info) throw IoError("libpng allocation failed");
  if (setjmp(png_jmpbuf(w.png))) throw IoError("PNG write failed: " + path);
  png_init_io(w.png, f.get());
  png_set_IHDR(w.png, w.info, width, height, bit_depth, color_type,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(w.png, w.info);
  if (pack_bits) png_set_packing(w.png);
  if (swap16) png_set_swap(w.png);
  png_write_image(w.png, const_cast<png_bytepp>(rows.data()));
  png_write_end(w.png, nullptr);
}

void read_png_header(PngReader& r, FILE* f, const std::string& path,
                     png_uint_32* width, png_uint_32* height, int* bit_depth,
                     int* color_type) {
  if (!r.png || !r.info) throw IoError("libpng allocation failed");
  if (setjmp(png_jmpbuf(r.png))) throw IoError("PNG read failed: " + path);
  png_init_io(r.png, f);
  png_read_info(r.png, r.info);
  png_get_IHDR(r.png, r.info, width, height, bit_depth, color_type, nullptr,
               nullptr, nullptr);
}

}  // namespace

void save_png_rgb8(const std::string& path, const Image<uint8_t>& img) {
  if (img.channels != 3) throw IoError("save_png_rgb8 expects 3 channels");
  std::vector<png_bytep> rows(img.height);
  for (int y = 0; y < img.height; ++y)
    rows[y] = const_cast<png_bytep>(&img.at(y, 0, 0));
  write_png(path, img.height, img.width, 8, PNG_COLOR_TYPE_RGB, rows, false,
            false);
}

Image<uint8_t> load_png_rgb8(const std::string& path) {
  FilePtr f = open_or_throw(path, "rb");
  PngReader r;
  png_uint_32 w = 0, h = 0;
  int bit_depth = 0, color_type = 0;
  read_png_header(r, f.get(), path, &w, &h, &bit_depth, &color_type);
  if (bit_depth != 8 || color_type != PNG_COLOR_TYPE_RGB)
    throw IoError("expected 8-bit RGB PNG: " + path);
  Image<uint8_t> img(static_cast<int>(h), static_cast<int>(w), 3);
  std::vector<png_bytep> rows(h);
  for (png_uint_32 y = 0; y < h; ++y) rows[y] = &img.at(static_cast<int>(y), 0);
  if (setjmp(png_jmpbuf(r.png))) throw IoError("PNG read failed: " + path);
  png_read_image(r.png, rows.data());
  return img;
}

void save_png_mask1(const std::string& path, const Image<uint8_t>& mask) {
  if (mask.channels != 1) throw IoError("save_png_mask1 expects 1 channel");
  std::vector<png_bytep> rows(mask.height);
  for (int y = 0; y < mask.height; ++y)
    rows[y] = const_cast<png_bytep>(&mask.at(y, 0));
  // Values must be 0/1; libpng packs them to one bit per pixel.
  write_png(path, mask.height, mask.width, 1, PNG_COLOR_TYPE_GRAY, rows, true,
            false);
}

Image<uint8_t> load_png_mask1(const std::string& path) {
  FilePtr f = open_or_throw(path, "rb");
  PngReader r;
  png_uint_32 w = 0, h = 0;
  int bit_depth = 0, color_type = 0;
  read_png_header(r, f.get(), path, &w, &h, &bit_depth, &color_type);
  if (bit_depth != 1 || color_type != PNG_COLOR_TYPE_GRAY)
    throw IoError("expected 1-bit grayscale PNG: " + path);
  png_set_packing(r.png);
  Image<uint8_t> img(static_cast<int>(h), static_cast<int>(w), 1);
  std::vector<png_bytep> rows(h);
  for (png_uint_32 y = 0; y < h; ++y) rows[y] = &img.at(static_cast<int>(y), 0);
  if (setjmp(png_jmpbuf(r.png))) throw IoError("PNG read failed: " + path);
  png_read_image(r.png, rows.data());
  return img;
}

void save_png_gray16(const std::string& path, const Image<uint16_t>& img) {
  if (img.channels != 1) throw IoError("save_png_gray16 expects 1 channel");
  std::vector<png_bytep> rows(img.height);
  for (int y = 0; y < img.height; ++y)
    rows[y] = const_cast<png_bytep>(
        reinterpret_cast<const png_byte*>(&img.at(y, 0)));
  write_png(path, img.height, img.width, 16, PNG_COLOR_TYPE_GRAY, rows, false,
            true);
}

Image<uint16_t> load_png_gray16(const std::string& path) {
  FilePtr f = open_or_throw(path, "rb");
  PngReader r;
  png_uint_32 w = 0, h = 0;
  int bit_depth = 0, color_type = 0;
  read_png_header(r, f.get(), path, &w, &h, &bit_depth, &color_type);
  if (bit_depth != 16 || color_type != PNG_COLOR_TYPE_GRAY)
    throw IoError("expected 16-bit grayscale PNG: " + path);
  png_set_swap(r.png);
  Image<uint16_t> img(static_cast<int>(h), static_cast<int>(w), 1);
  std::vector<png_bytep> rows(h);
  for (png_uint_32 y = 0; y < h; ++y)
    rows[y] = reinterpret_cast<png_bytep>(&img.at(static_cast<int>(y), 0));
  if (setjmp(png_jmpbuf(r.png))) throw IoError("PNG read failed: " + path);
  png_read_image(r.png, rows.data());
  return img;
}

void save_f32(const std::string& path, const char magic[9],
              const Image<float>& img) {
  static_assert(sizeof(float) == 4);
  if (img.channels != 1) throw IoError("save_f32 expects 1 channel");
  FilePtr f = open_or_throw(path, "wb");
  uint32_t rows = static_cast<uint32_t>(img.height);
  uint32_t cols = static_cast<uint32_t>(img.width);
  if (std::fwrite(magic, 1, 8, f.get()) != 8 ||
      std::fwrite(&rows, 4, 1, f.get()) != 1 ||
      std::fwrite(&cols, 4, 1, f.get()) != 1 ||
      std::fwrite(img.data.data(), 4, img.size(), f.get()) != img.size())
    throw IoError("short write: " + path);
}

Image<float> load_f32(const std::string& path, const char magic[9]) {
  FilePtr f = open_or_throw(path, "rb");
  char got[8];
  uint32_t rows = 0, cols = 0;
  if (std::fread(got, 1, 8, f.get()) != 8 ||
      std::fread(&rows, 4, 1, f.get()) != 1 ||
      std::fread(&cols, 4, 1, f.get()) != 1)
    throw IoError("truncated header: " + path);
  if (std::memcmp(got, magic, 8) != 0)
    throw IoError("bad magic in " + path + " (expected " +
                  std::string(magic, 8) + ")");
  Image<float> img(static_cast<int>(rows), static_cast<int>(cols), 1);
  if (std::fread(img.data.data(), 4, img.size(), f.get()) != img.size())
    throw IoError("truncated payload: " + path);
  return img;
}

Image<float> to_float(const Image<uint8_t>& img) {
  Image<float> out(img.height, img.width, img.channels);
  for (size_t i = 0; i < img.size(); ++i)
    out.data[i] = static_cast<float>(img.data[i]) / 255.0f;
  return out;
}

Image<uint8_t> quantize_u8(const Image<float>& img) {
  Image<uint8_t> out(img.height, img.width, img.channels);
  for (size_t i = 0; i < img.size(); ++i) {
    float v = img.data[i];
    v = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
    out.data[i] = static_cast<uint8_t>(v * 255.0f + 0.5f);
  }
  return out;
}

}  // namespace sdfsplat
