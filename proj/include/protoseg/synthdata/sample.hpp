#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "protoseg/numcore/tensor.hpp"

namespace protoseg::data {

inline constexpr std::uint8_t kIgnore = 255;

/// RGB image (row-major, interleaved, values in [0,1]) with a label map of
/// the same spatial size.
struct SegSample {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> image;         // height * width * 3
  std::vector<std::uint8_t> labels;  // height * width, class id or kIgnore

  SegSample() = default;
  SegSample(std::size_t h, std::size_t w)
      : height(h), width(w), image(h * w * 3, 0.0), labels(h * w, 0) {}

  double& rgb(std::size_t y, std::size_t x, std::size_t c) { return image[(y * width + x) * 3 + c]; }
  double rgb(std::size_t y, std::size_t x, std::size_t c) const {
    return image[(y * width + x) * 3 + c];
  }
  std::uint8_t& label(std::size_t y, std::size_t x) { return labels[y * width + x]; }
  std::uint8_t label(std::size_t y, std::size_t x) const { return labels[y * width + x]; }

  /// Throws if the buffers disagree with the dimensions or a label is
  /// neither a class below `num_classes` nor kIgnore.
  void validate(int num_classes) const;
};

/// 3 x H x W tensor view of the image for the model.
num::Tensor to_chw(const SegSample& s);

/// Labels widened to int32 for loss routines.
std::vector<std::int32_t> labels_i32(std::span<const std::uint8_t> labels);

/// Nearest-neighbour sampling at cell centres; kIgnore is carried through.
std::vector<std::uint8_t> downsample_labels(std::span<const std::uint8_t> labels, std::size_t h,
                                            std::size_t w, std::size_t out_h, std::size_t out_w);

class NetpbmError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Binary PPM (P6) for the image and PGM (P5) for labels, maxval 255.
void write_ppm(const std::filesystem::path& path, std::size_t h, std::size_t w,
               std::span<const std::uint8_t> rgb);
void write_pgm(const std::filesystem::path& path, std::size_t h, std::size_t w,
               std::span<const std::uint8_t> gray);

struct RasterImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::vector<std::uint8_t> pixels;
};
RasterImage read_netpbm(const std::filesystem::path& path);

void save_sample(const SegSample& s, const std::filesystem::path& image_path,
                 const std::filesystem::path& label_path);
SegSample load_sample(const std::filesystem::path& image_path,
                      const std::filesystem::path& label_path);

}  // namespace protoseg::data
