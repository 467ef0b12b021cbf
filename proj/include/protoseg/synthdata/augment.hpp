#pragma once

#include "protoseg/synthdata/rng.hpp"
#include "protoseg/synthdata/sample.hpp"

namespace protoseg::data {

struct AugmentParams {
  double scale = 1.0;
  bool flip = false;
  // Top-left corner of the crop in the scaled (and flipped) image. May be
  // negative or run past the edge; uncovered pixels become kIgnore.
  long offset_y = 0;
  long offset_x = 0;
};

inline constexpr double kMinAugmentScale = 0.5;
inline constexpr double kMaxAugmentScale = 1.5;

/// Draws scale in [0.5, 1.5], a fair horizontal flip and a random crop
/// position for a `crop_h` x `crop_w` window.
AugmentParams sample_augment(const SegSample& s, std::size_t crop_h, std::size_t crop_w, Rng& rng);

/// Applies the geometric transform: bilinear for the image, nearest for
/// labels. Scales outside [0.5, 1.5] are clamped.
SegSample apply_augment(const SegSample& s, const AugmentParams& params, std::size_t crop_h,
                        std::size_t crop_w);

inline SegSample augment(const SegSample& s, std::size_t crop_h, std::size_t crop_w, Rng& rng) {
  return apply_augment(s, sample_augment(s, crop_h, crop_w, rng), crop_h, crop_w);
}

}  // namespace protoseg::data
