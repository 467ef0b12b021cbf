#include "protoseg/synthdata/sample.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

namespace protoseg::data {

void SegSample::validate(int num_classes) const {
  if (image.size() != height * width * 3 || labels.size() != height * width) {
    throw std::invalid_argument("SegSample: buffers do not match " + std::to_string(height) + "x" +
                                std::to_string(width));
  }
  for (const auto l : labels) {
    if (l != kIgnore && static_cast<int>(l) >= num_classes) {
      throw std::invalid_argument("SegSample: label " + std::to_string(l) + " is not a class id");
    }
  }
}

num::Tensor to_chw(const SegSample& s) {
  const std::size_t plane = s.height * s.width;
  std::vector<double> chw(3 * plane);
  for (std::size_t i = 0; i < plane; ++i)
    for (std::size_t c = 0; c < 3; ++c) chw[c * plane + i] = s.image[i * 3 + c];
  return num::Tensor({3, s.height, s.width}, std::move(chw));
}

std::vector<std::int32_t> labels_i32(std::span<const std::uint8_t> labels) {
  return {labels.begin(), labels.end()};
}

std::vector<std::uint8_t> downsample_labels(std::span<const std::uint8_t> labels, std::size_t h,
                                            std::size_t w, std::size_t out_h, std::size_t out_w) {
  if (out_h == 0 || out_w == 0) throw std::invalid_argument("downsample_labels: zero target size");
  if (out_h > h || out_w > w) throw std::invalid_argument("downsample_labels: target exceeds source");
  if (labels.size() != h * w) throw std::invalid_argument("downsample_labels: size mismatch");
  std::vector<std::uint8_t> out(out_h * out_w);
  for (std::size_t i = 0; i < out_h; ++i) {
    // Integer form of floor((i + 0.5) * h / out_h).
    const std::size_t sy = ((2 * i + 1) * h) / (2 * out_h);
    for (std::size_t j = 0; j < out_w; ++j) {
      const std::size_t sx = ((2 * j + 1) * w) / (2 * out_w);
      out[i * out_w + j] = labels[sy * w + sx];
    }
  }
  return out;
}

namespace {

void write_raster(const std::filesystem::path& path, const char* magic, std::size_t h,
                  std::size_t w, std::span<const std::uint8_t> px) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw NetpbmError("cannot open " + path.string() + " for writing");
  os << magic << '\n' << w << ' ' << h << '\n' << 255 << '\n';
  os.write(reinterpret_cast<const char*>(px.data()), static_cast<std::streamsize>(px.size()));
  if (!os) throw NetpbmError("short write to " + path.string());
}

// Reads the next header token, skipping whitespace and '#' comments.
std::string header_token(std::istream& is, const std::string& name) {
  std::string tok;
  int ch;
  while ((ch = is.get()) != EOF) {
    if (ch == '#') {
      while ((ch = is.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    if (std::isspace(ch)) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok.push_back(static_cast<char>(ch));
  }
  throw NetpbmError(name + ": truncated header");
}

std::size_t header_number(std::istream& is, const std::string& name) {
  const auto tok = header_token(is, name);
  if (tok.empty() || !std::all_of(tok.begin(), tok.end(), ::isdigit)) {
    throw NetpbmError(name + ": malformed header field '" + tok + "'");
  }
  return std::stoul(tok);
}

std::uint8_t quantize(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace

void write_ppm(const std::filesystem::path& path, std::size_t h, std::size_t w,
               std::span<const std::uint8_t> rgb) {
  if (rgb.size() != h * w * 3) throw NetpbmError("write_ppm: raster size mismatch");
  write_raster(path, "P6", h, w, rgb);
}

void write_pgm(const std::filesystem::path& path, std::size_t h, std::size_t w,
               std::span<const std::uint8_t> gray) {
  if (gray.size() != h * w) throw NetpbmError("write_pgm: raster size mismatch");
  write_raster(path, "P5", h, w, gray);
}

RasterImage read_netpbm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw NetpbmError("cannot open " + path.string());
  const std::string name = path.string();
  char magic[2] = {0, 0};
  is.read(magic, 2);
  RasterImage img;
  if (is.gcount() == 2 && magic[0] == 'P' && magic[1] == '6') {
    img.channels = 3;
  } else if (is.gcount() == 2 && magic[0] == 'P' && magic[1] == '5') {
    img.channels = 1;
  } else {
    throw NetpbmError(name + ": bad magic, expected P5 or P6");
  }
  const int sep = is.peek();
  if (sep == EOF || !std::isspace(sep)) throw NetpbmError(name + ": bad magic");
  img.width = header_number(is, name);
  img.height = header_number(is, name);
  const auto maxval = header_number(is, name);
  if (maxval != 255) throw NetpbmError(name + ": only maxval 255 is supported");
  // header_token consumed exactly one whitespace byte after maxval.
  img.pixels.resize(img.height * img.width * img.channels);
  is.read(reinterpret_cast<char*>(img.pixels.data()),
          static_cast<std::streamsize>(img.pixels.size()));
  if (static_cast<std::size_t>(is.gcount()) != img.pixels.size()) {
    throw NetpbmError(name + ": truncated raster");
  }
  return img;
}

void save_sample(const SegSample& s, const std::filesystem::path& image_path,
                 const std::filesystem::path& label_path) {
  std::vector<std::uint8_t> rgb(s.image.size());
  std::transform(s.image.begin(), s.image.end(), rgb.begin(), quantize);
  write_ppm(image_path, s.height, s.width, rgb);
  write_pgm(label_path, s.height, s.width, s.labels);
}

SegSample load_sample(const std::filesystem::path& image_path,
                      const std::filesystem::path& label_path) {
  const auto img = read_netpbm(image_path);
  const auto lbl = read_netpbm(label_path);
  if (img.channels != 3) throw NetpbmError(image_path.string() + ": expected a P6 image");
  if (lbl.channels != 1) throw NetpbmError(label_path.string() + ": expected a P5 label map");
  if (img.height != lbl.height || img.width != lbl.width) {
    throw NetpbmError("label map " + label_path.string() + " is " + std::to_string(lbl.width) +
                      "x" + std::to_string(lbl.height) + " but image is " +
                      std::to_string(img.width) + "x" + std::to_string(img.height));
  }
  SegSample s(img.height, img.width);
  for (std::size_t i = 0; i < s.image.size(); ++i) s.image[i] = img.pixels[i] / 255.0;
  s.labels = lbl.pixels;
  return s;
}

}  // namespace protoseg::data
