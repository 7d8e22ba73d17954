// Copyright Contributors to the sdfsplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace sdfsplat {

/// Row-major interleaved image buffer.
template <class T> struct Image {
  int height = 0;
  int width = 0;
  int channels = 1;
  std::vector<T> data;

  Image() = default;
  Image(int h, int w, int c, T fill = T(0))
      : height(h), width(w), channels(c),
        data(static_cast<size_t>(h) * w * c, fill) {}

  T& at(int y, int x, int c = 0) {
    return data[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  const T& at(int y, int x, int c = 0) const {
    return data[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }
  bool same_shape(const Image& o) const {
    return height == o.height && width == o.width && channels == o.channels;
  }
};

// PNG I/O. Images are 8-bit RGB, masks 1-bit grayscale, rendered depth
// 16-bit grayscale.
void save_png_rgb8(const std::string& path, const Image<uint8_t>& img);
Image<uint8_t> load_png_rgb8(const std::string& path);
void save_png_mask1(const std::string& path, const Image<uint8_t>& mask);
Image<uint8_t> load_png_mask1(const std::string& path);
void save_png_gray16(const std::string& path, const Image<uint16_t>& img);
Image<uint16_t> load_png_gray16(const std::string& path);

// Raw float32 container: 8-byte magic, uint32 rows, uint32 cols header
// (16 bytes), then rows*cols little-endian floats.
inline constexpr char kDepthMagic[9] = "SPLATDPT";
inline constexpr char kLidarMagic[9] = "SPLATLDR";
void save_f32(const std::string& path, const char magic[9],
              const Image<float>& img);
Image<float> load_f32(const std::string& path, const char magic[9]);

/// u8 [0,255] -> float [0,1].
Image<float> to_float(const Image<uint8_t>& img);

/// Element-wise numeric conversion preserving shape.
template <class T, class U> Image<T> image_cast(const Image<U>& src) {
  Image<T> out(src.height, src.width, src.channels);
  for (size_t i = 0; i < src.data.size(); ++i)
    out.data[i] = static_cast<T>(src.data[i]);
  return out;
}
/// float [0,1] -> u8 with round-to-nearest and clamping.
Image<uint8_t> quantize_u8(const Image<float>& img);

}  // namespace sdfsplat
