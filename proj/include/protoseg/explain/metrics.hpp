#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace protoseg::explain {

/// C x C counts of (ground truth, prediction) over non-ignored pixels.
class ConfusionAccumulator {
 public:
  explicit ConfusionAccumulator(int num_classes);

  void add(std::span<const std::uint8_t> gt, std::span<const std::uint8_t> pred);
  void merge(const ConfusionAccumulator& other);

  int num_classes() const { return classes_; }
  std::uint64_t at(int gt, int pred) const { return counts_[static_cast<std::size_t>(gt * classes_ + pred)]; }
  std::uint64_t total() const;
  std::uint64_t trace() const;

 private:
  int classes_;
  std::vector<std::uint64_t> counts_;
};

struct MiouResult {
  double miou = 0;
  // IoU per class; negative for classes with zero union (excluded).
  std::vector<double> per_class;
};

/// IoU_c = TP / (TP + FP + FN); classes with empty union are skipped.
MiouResult miou(const ConfusionAccumulator& acc);

struct PixelError {
  double value = 0;
  bool empty = false;  // no scored pixels; value is 0
};

/// Fraction of non-ignored pixels where prediction and ground truth differ.
PixelError pixel_error(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt);
PixelError pixel_error(const ConfusionAccumulator& acc);

/// Linear-interpolation percentile (numpy default) of `values`, p in [0, 100].
double percentile(std::span<const double> values, double p);

/// values >= the p-th percentile.
std::vector<bool> binarize_top(std::span<const double> values, double p);

/// |A and B| / |A or B|; 0 when both are empty.
double mask_iou(const std::vector<bool>& a, const std::vector<bool>& b);

/// Shannon entropy of a count histogram divided by log(bins); 0 for one bin.
double normalized_entropy(std::span<const std::uint64_t> counts);

}  // namespace protoseg::explain
