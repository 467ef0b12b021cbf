#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "protoseg/numcore/tensor.hpp"

namespace protoseg::num {

/// Central-difference gradient of a scalar function at `x`.
/// `f` receives a fresh leaf tensor for every probe point.
template <typename T>
std::vector<T> finite_diff_grad(const std::function<T(const BasicTensor<T>&)>& f,
                                const BasicTensor<T>& x, T h) {
  std::vector<T> probe(x.data().begin(), x.data().end());
  std::vector<T> out(probe.size());
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const T saved = probe[i];
    probe[i] = saved + h;
    const T up = f(BasicTensor<T>(x.shape(), probe));
    probe[i] = saved - h;
    const T down = f(BasicTensor<T>(x.shape(), probe));
    probe[i] = saved;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw DomainError("finite_diff_grad: non-finite function value");
    }
    out[i] = (up - down) / (T(2) * h);
  }
  return out;
}

/// max_i |a_i - b_i| / max(|a_i|, |b_i|, floor)
template <typename T>
T max_relative_error(std::span<const T> a, std::span<const T> b, T floor = T(1e-6)) {
  if (a.size() != b.size()) throw ShapeError("max_relative_error: size mismatch");
  T worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const T scale = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    worst = std::max(worst, std::abs(a[i] - b[i]) / scale);
  }
  return worst;
}

}  // namespace protoseg::num
