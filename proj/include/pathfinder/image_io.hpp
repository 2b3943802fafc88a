#pragma once
// Binary PGM (P5) and PPM (P6) images with 8-bit samples.

#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace pathfinder::io {

struct Image {
  std::size_t width = 0, height = 0, channels = 1;  // 1 = gray, 3 = RGB (interleaved)
  std::vector<std::uint8_t> pixels;

  std::uint8_t& at(std::size_t y, std::size_t x, std::size_t c = 0) { return pixels[(y * width + x) * channels + c]; }
  std::uint8_t at(std::size_t y, std::size_t x, std::size_t c = 0) const {
    return pixels[(y * width + x) * channels + c];
  }
};

inline Image make_image(std::size_t width, std::size_t height, std::size_t channels, std::uint8_t fill = 0) {
  return {width, height, channels, std::vector<std::uint8_t>(width * height * channels, fill)};
}

inline void write_image(const std::string& path, const Image& img) {
  if (img.channels != 1 && img.channels != 3) throw std::invalid_argument("write_image: 1 or 3 channels only");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << (img.channels == 1 ? "P5" : "P6") << '\n' << img.width << ' ' << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (!out) throw std::runtime_error("short write to " + path);
}

namespace detail {
inline std::size_t read_header_value(std::istream& in, const std::string& path) {
  in >> std::ws;
  while (in.peek() == '#') {
    std::string comment;
    std::getline(in, comment);
    in >> std::ws;
  }
  std::size_t v = 0;
  if (!(in >> v)) throw std::runtime_error(path + ": malformed image header");
  return v;
}
}  // namespace detail

inline Image read_image(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string magic;
  in >> magic;
  Image img;
  if (magic == "P5") {
    img.channels = 1;
  } else if (magic == "P6") {
    img.channels = 3;
  } else {
    throw std::runtime_error(path + ": not a binary PGM/PPM file");
  }
  img.width = detail::read_header_value(in, path);
  img.height = detail::read_header_value(in, path);
  if (detail::read_header_value(in, path) != 255) throw std::runtime_error(path + ": only 8-bit images supported");
  in.get();
  img.pixels.resize(img.width * img.height * img.channels);
  in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.pixels.size())) throw std::runtime_error(path + ": truncated pixel data");
  return img;
}

/// Writes a 0/1 mask as a PGM with 0 → 0 and nonzero → 255.
inline void write_mask(const std::string& path, const std::vector<std::uint8_t>& mask, std::size_t width,
                       std::size_t height) {
  auto img = make_image(width, height, 1);
  for (std::size_t i = 0; i < mask.size(); ++i) img.pixels[i] = mask[i] ? 255 : 0;
  write_image(path, img);
}

/// Reads a gray image as a 0/1 mask (pixel ≥ 128 → 1).
inline std::vector<std::uint8_t> read_mask(const std::string& path, std::size_t& width, std::size_t& height) {
  const auto img = read_image(path);
  if (img.channels != 1) throw std::runtime_error(path + ": mask must be a gray PGM");
  width = img.width;
  height = img.height;
  std::vector<std::uint8_t> mask(img.pixels.size());
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = img.pixels[i] >= 128 ? 1 : 0;
  return mask;
}

}  // namespace pathfinder::io
