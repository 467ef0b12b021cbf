#include "protoseg/synthdata/augment.hpp"

#include <algorithm>
#include <cmath>

namespace protoseg::data {

namespace {

std::size_t scaled_extent(std::size_t n, double scale) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(static_cast<double>(n) * scale)));
}

long random_offset(std::size_t scaled, std::size_t crop, Rng& rng) {
  if (scaled >= crop) return static_cast<long>(rng.below(scaled - crop + 1));
  // Window larger than the image: place the image at a random position
  // inside it.
  return -static_cast<long>(rng.below(crop - scaled + 1));
}

}  // namespace

AugmentParams sample_augment(const SegSample& s, std::size_t crop_h, std::size_t crop_w, Rng& rng) {
  AugmentParams p;
  p.scale = rng.uniform(kMinAugmentScale, kMaxAugmentScale);
  p.flip = rng.bernoulli(0.5);
  p.offset_y = random_offset(scaled_extent(s.height, p.scale), crop_h, rng);
  p.offset_x = random_offset(scaled_extent(s.width, p.scale), crop_w, rng);
  return p;
}

SegSample apply_augment(const SegSample& s, const AugmentParams& params, std::size_t crop_h,
                        std::size_t crop_w) {
  const double scale = std::clamp(params.scale, kMinAugmentScale, kMaxAugmentScale);
  const std::size_t sh = scaled_extent(s.height, scale);
  const std::size_t sw = scaled_extent(s.width, scale);
  const double ry = static_cast<double>(s.height) / static_cast<double>(sh);
  const double rx = static_cast<double>(s.width) / static_cast<double>(sw);
  SegSample out(crop_h, crop_w);
  for (std::size_t y = 0; y < crop_h; ++y) {
    const long ys = static_cast<long>(y) + params.offset_y;
    for (std::size_t x = 0; x < crop_w; ++x) {
      long xs = static_cast<long>(x) + params.offset_x;
      if (ys < 0 || ys >= static_cast<long>(sh) || xs < 0 || xs >= static_cast<long>(sw)) {
        out.label(y, x) = kIgnore;
        continue;  // image stays 0
      }
      if (params.flip) xs = static_cast<long>(sw) - 1 - xs;
      // Pixel-centre correspondence between scaled and source grids.
      const double fy = std::clamp((static_cast<double>(ys) + 0.5) * ry - 0.5, 0.0,
                                   static_cast<double>(s.height - 1));
      const double fx = std::clamp((static_cast<double>(xs) + 0.5) * rx - 0.5, 0.0,
                                   static_cast<double>(s.width - 1));
      const auto y0 = static_cast<std::size_t>(std::floor(fy));
      const auto x0 = static_cast<std::size_t>(std::floor(fx));
      const std::size_t y1 = std::min(y0 + 1, s.height - 1);
      const std::size_t x1 = std::min(x0 + 1, s.width - 1);
      const double wy = fy - static_cast<double>(y0);
      const double wx = fx - static_cast<double>(x0);
      for (std::size_t c = 0; c < 3; ++c) {
        const double top = s.rgb(y0, x0, c) * (1 - wx) + s.rgb(y0, x1, c) * wx;
        const double bot = s.rgb(y1, x0, c) * (1 - wx) + s.rgb(y1, x1, c) * wx;
        out.rgb(y, x, c) = top * (1 - wy) + bot * wy;
      }
      const auto ny = std::min(s.height - 1, static_cast<std::size_t>(std::lround(fy)));
      const auto nx = std::min(s.width - 1, static_cast<std::size_t>(std::lround(fx)));
      out.label(y, x) = s.label(ny, nx);
    }
  }
  return out;
}

}  // namespace protoseg::data
