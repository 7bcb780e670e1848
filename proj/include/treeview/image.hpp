#ifndef TREEVIEW_IMAGE_HPP
#define TREEVIEW_IMAGE_HPP

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "treeview/text.hpp"
#include "treeview/types.hpp"

namespace treeview {

/// Interleaved 8-bit RGB raster, row 0 at the top.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;

  Image() = default;
  Image(int w, int h) : width(w), height(h), rgb(static_cast<std::size_t>(w) * h * 3, 0) {}

  std::uint8_t& at(int x, int y, int c) { return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  std::uint8_t at(int x, int y, int c) const {
    return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
  bool occupied(int x, int y) const { return at(x, y, 0) | at(x, y, 1) | at(x, y, 2); }

  bool operator==(const Image&) const = default;
};

/// Round half up to a byte, clamped to [0, 255].
inline std::uint8_t to_byte(double v) {
  const double r = std::floor(v + 0.5);
  return static_cast<std::uint8_t>(std::clamp(r, 0.0, 255.0));
}

/// Normalised 3x3 Gaussian weights, row-major.
inline std::array<double, 9> gaussian_kernel3(double sigma = 0.85) {
  std::array<double, 9> k{};
  double sum = 0.0;
  for (int dy = -1; dy <= 1; ++dy)
    for (int dx = -1; dx <= 1; ++dx) {
      const double w = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
      k[(dy + 1) * 3 + (dx + 1)] = w;
      sum += w;
    }
  for (double& w : k) w /= sum;
  return k;
}

/// 3x3 convolution of one channel with zero padding.
inline std::vector<double> convolve3(const std::vector<double>& channel, int width, int height,
                                     const std::array<double, 9>& kernel) {
  std::vector<double> out(channel.size(), 0.0);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      double acc = 0.0;
      for (int dy = -1; dy <= 1; ++dy) {
        const int yy = y + dy;
        if (yy < 0 || yy >= height) continue;
        for (int dx = -1; dx <= 1; ++dx) {
          const int xx = x + dx;
          if (xx < 0 || xx >= width) continue;
          acc += kernel[(dy + 1) * 3 + (dx + 1)] * channel[static_cast<std::size_t>(yy) * width + xx];
        }
      }
      out[static_cast<std::size_t>(y) * width + x] = acc;
    }
  return out;
}

/// Gaussian smoothing of every channel, re-quantised half-up.
inline Image gaussian_smooth(const Image& img, double sigma = 0.85) {
  const auto kernel = gaussian_kernel3(sigma);
  Image out(img.width, img.height);
  std::vector<double> channel(static_cast<std::size_t>(img.width) * img.height);
  for (int c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < channel.size(); ++i) channel[i] = img.rgb[i * 3 + c];
    const auto smoothed = convolve3(channel, img.width, img.height, kernel);
    for (std::size_t i = 0; i < smoothed.size(); ++i) out.rgb[i * 3 + c] = to_byte(smoothed[i]);
  }
  return out;
}

/// Bilinear resampling with pixel centres aligned at half-integer
/// coordinates (the OpenCV INTER_LINEAR convention).
inline Image resize_bilinear(const Image& img, int target_width, int target_height) {
  if (target_width < 1 || target_height < 1) throw Error("resize target must be positive");
  if (target_width == img.width && target_height == img.height) return img;
  Image out(target_width, target_height);
  const double sx = static_cast<double>(img.width) / target_width;
  const double sy = static_cast<double>(img.height) / target_height;
  auto source = [](int dst, double scale, int limit, int& i0, int& i1, double& frac) {
    double s = (dst + 0.5) * scale - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(limit - 1));
    i0 = static_cast<int>(std::floor(s));
    i1 = std::min(i0 + 1, limit - 1);
    frac = s - i0;
  };
  for (int y = 0; y < target_height; ++y) {
    int y0, y1;
    double fy;
    source(y, sy, img.height, y0, y1, fy);
    for (int x = 0; x < target_width; ++x) {
      int x0, x1;
      double fx;
      source(x, sx, img.width, x0, x1, fx);
      for (int c = 0; c < 3; ++c) {
        const double top = img.at(x0, y0, c) * (1.0 - fx) + img.at(x1, y0, c) * fx;
        const double bottom = img.at(x0, y1, c) * (1.0 - fx) + img.at(x1, y1, c) * fx;
        out.at(x, y, c) = to_byte(top * (1.0 - fy) + bottom * fy);
      }
    }
  }
  return out;
}

inline Image resize_bilinear(const Image& img, int target) {
  if (target < 8) throw Error("resize target must be at least 8 pixels");
  return resize_bilinear(img, target, target);
}

/// Share of pixels with every channel zero.
inline double empty_pixel_ratio(const Image& img) {
  const std::size_t total = static_cast<std::size_t>(img.width) * img.height;
  if (total == 0) return 1.0;
  std::size_t empty = 0;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) empty += !img.occupied(x, y);
  return static_cast<double>(empty) / static_cast<double>(total);
}

inline std::size_t occupied_pixels(const Image& img) {
  std::size_t n = 0;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) n += img.occupied(x, y);
  return n;
}

// ---------------------------------------------------------------------- PNG

/// PNG bytes of an 8-bit RGB image. Output is a pure function of the pixels.
inline std::string encode_png(const Image& img) {
  png_image info{};
  info.version = PNG_IMAGE_VERSION;
  info.width = static_cast<png_uint_32>(img.width);
  info.height = static_cast<png_uint_32>(img.height);
  info.format = PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&info, nullptr, &size, 0, img.rgb.data(), 0, nullptr))
    throw Error(std::string("PNG encoding failed: ") + info.message);
  std::string out(size, '\0');
  if (!png_image_write_to_memory(&info, out.data(), &size, 0, img.rgb.data(), 0, nullptr))
    throw Error(std::string("PNG encoding failed: ") + info.message);
  out.resize(size);
  return out;
}

inline void write_png(const Image& img, const std::filesystem::path& path) {
  text::write_file(path, encode_png(img));
}

/// Decodes any PNG to 8-bit RGB.
inline Image decode_png(std::string_view data, const std::string& name) {
  png_image info{};
  info.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&info, data.data(), data.size()))
    throw Error(name + ": " + info.message);
  info.format = PNG_FORMAT_RGB;
  Image img(static_cast<int>(info.width), static_cast<int>(info.height));
  if (!png_image_finish_read(&info, nullptr, img.rgb.data(), 0, nullptr)) {
    png_image_free(&info);
    throw Error(name + ": " + info.message);
  }
  return img;
}

inline Image read_png(const std::filesystem::path& path) {
  return decode_png(text::read_file(path), path.string());
}

}  // namespace treeview

#endif  // TREEVIEW_IMAGE_HPP
