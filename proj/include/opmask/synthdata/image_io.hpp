#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "opmask/core/error.hpp"
#include "opmask/core/geometry.hpp"

namespace opmask::synth {

// Binary PPM (P6), 8-bit RGB.
inline void write_ppm(const std::filesystem::path& path, const Image& img) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os << "P6\n" << img.width << ' ' << img.height << "\n255\n";
  std::string buf(img.rgb.size(), '\0');
  for (std::size_t i = 0; i < img.rgb.size(); ++i) {
    const long v = std::lround(std::clamp(img.rgb[i], 0.0f, 1.0f) * 255.0f);
    buf[i] = static_cast<char>(static_cast<unsigned char>(v));
  }
  os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!os) throw IoError("write failed: " + path.string());
}

inline Image read_ppm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  is >> magic >> w >> h >> maxval;
  if (magic != "P6" || w <= 0 || h <= 0 || maxval != 255)
    throw FormatError("not an 8-bit binary PPM: " + path.string());
  is.get();
  Image img(h, w);
  std::string buf(img.rgb.size(), '\0');
  is.read(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (is.gcount() != static_cast<std::streamsize>(buf.size()))
    throw FormatError("truncated PPM: " + path.string());
  for (std::size_t i = 0; i < buf.size(); ++i)
    img.rgb[i] = static_cast<float>(static_cast<unsigned char>(buf[i])) / 255.0f;
  return img;
}

}  // namespace opmask::synth
