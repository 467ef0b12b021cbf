#include "protoseg/explain/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "protoseg/synthdata/sample.hpp"

namespace protoseg::explain {

ConfusionAccumulator::ConfusionAccumulator(int num_classes)
    : classes_(num_classes), counts_(static_cast<std::size_t>(num_classes * num_classes), 0) {
  if (num_classes < 1) throw std::invalid_argument("ConfusionAccumulator: need at least one class");
}

void ConfusionAccumulator::add(std::span<const std::uint8_t> gt, std::span<const std::uint8_t> pred) {
  if (gt.size() != pred.size()) throw std::invalid_argument("ConfusionAccumulator: shape mismatch");
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (gt[i] == data::kIgnore) continue;
    if (gt[i] >= classes_ || pred[i] >= classes_) {
      throw std::out_of_range("ConfusionAccumulator: class id out of range");
    }
    ++counts_[static_cast<std::size_t>(gt[i]) * static_cast<std::size_t>(classes_) + pred[i]];
  }
}

void ConfusionAccumulator::merge(const ConfusionAccumulator& other) {
  if (other.classes_ != classes_) throw std::invalid_argument("ConfusionAccumulator: class count mismatch");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

std::uint64_t ConfusionAccumulator::total() const {
  std::uint64_t t = 0;
  for (auto c : counts_) t += c;
  return t;
}

std::uint64_t ConfusionAccumulator::trace() const {
  std::uint64_t t = 0;
  for (int c = 0; c < classes_; ++c) t += at(c, c);
  return t;
}

MiouResult miou(const ConfusionAccumulator& acc) {
  if (acc.total() == 0) throw std::invalid_argument("miou: no scored pixels");
  const int n = acc.num_classes();
  MiouResult r;
  r.per_class.assign(static_cast<std::size_t>(n), -1.0);
  double sum = 0;
  int counted = 0;
  for (int c = 0; c < n; ++c) {
    std::uint64_t row = 0, col = 0;
    for (int k = 0; k < n; ++k) {
      row += acc.at(c, k);
      col += acc.at(k, c);
    }
    const std::uint64_t tp = acc.at(c, c);
    const std::uint64_t uni = row + col - tp;
    if (uni == 0) continue;
    const double iou = static_cast<double>(tp) / static_cast<double>(uni);
    r.per_class[static_cast<std::size_t>(c)] = iou;
    sum += iou;
    ++counted;
  }
  r.miou = sum / counted;
  return r;
}

PixelError pixel_error(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt) {
  if (pred.size() != gt.size()) throw std::invalid_argument("pixel_error: shape mismatch");
  std::size_t scored = 0, wrong = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (gt[i] == data::kIgnore) continue;
    ++scored;
    wrong += pred[i] != gt[i];
  }
  if (scored == 0) return {0.0, true};
  return {static_cast<double>(wrong) / static_cast<double>(scored), false};
}

PixelError pixel_error(const ConfusionAccumulator& acc) {
  const auto total = acc.total();
  if (total == 0) return {0.0, true};
  return {1.0 - static_cast<double>(acc.trace()) / static_cast<double>(total), false};
}

double percentile(std::span<const double> values, double p) {
  if (values.empty()) throw std::invalid_argument("percentile: empty input");
  if (p < 0 || p > 100) throw std::invalid_argument("percentile: p must lie in [0, 100]");
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  const double pos = p / 100.0 * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return v[lo] + (v[hi] - v[lo]) * frac;
}

std::vector<bool> binarize_top(std::span<const double> values, double p) {
  const double t = percentile(values, p);
  std::vector<bool> mask(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) mask[i] = values[i] >= t;
  return mask;
}

double mask_iou(const std::vector<bool>& a, const std::vector<bool>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("mask_iou: size mismatch");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    inter += a[i] && b[i];
    uni += a[i] || b[i];
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

double normalized_entropy(std::span<const std::uint64_t> counts) {
  if (counts.size() < 2) return 0.0;
  std::uint64_t total = 0;
  for (auto c : counts) total += c;
  if (total == 0) return 0.0;
  double h = 0;
  for (auto c : counts) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / static_cast<double>(total);
    h -= p * std::log(p);
  }
  return h / std::log(static_cast<double>(counts.size()));
}

}  // namespace protoseg::explain
