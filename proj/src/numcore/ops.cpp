#include "protoseg/numcore/ops.hpp"

#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <limits>
#include <string>

namespace protoseg::num {

namespace {

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

template <typename T>
BasicTensor<T> make_result(const char* op, Shape shape, std::vector<T> data,
                           std::initializer_list<const BasicTensor<T>*> inputs,
                           std::function<void(Node<T>&)> backward_fn) {
  for (const T v : data) {
    if (!std::isfinite(v)) {
      throw DomainError(std::string(op) + ": produced a non-finite value");
    }
  }
  BasicTensor<T> out(std::move(shape), std::move(data));
  if (!grad_enabled()) return out;
  bool needs_grad = false;
  for (const auto* in : inputs) needs_grad = needs_grad || in->requires_grad();
  if (needs_grad) {
    auto& node = *out.node();
    node.requires_grad = true;
    for (const auto* in : inputs) node.parents.push_back(in->node());
    node.backward_fn = std::move(backward_fn);
  }
  return out;
}

template <typename T>
void check_defined(const BasicTensor<T>& a, const char* op) {
  if (!a.defined()) throw std::invalid_argument(std::string(op) + ": undefined tensor");
}

template <typename T>
T unary_value(OpKind kind, T x, T factor) {
  switch (kind) {
    case OpKind::relu: return x > T(0) ? x : T(0);
    case OpKind::log:
      if (!(x > T(0))) throw DomainError("log: argument must be strictly positive");
      return std::log(x);
    case OpKind::exp: return std::exp(x);
    case OpKind::neg: return -x;
    case OpKind::scale: return factor * x;
    default: throw std::invalid_argument("elementwise: not a unary kind");
  }
}

// d(out)/d(x) given input x and output y.
template <typename T>
T unary_derivative(OpKind kind, T x, T y, T factor) {
  switch (kind) {
    case OpKind::relu: return x > T(0) ? T(1) : T(0);
    case OpKind::log: return T(1) / x;
    case OpKind::exp: return y;
    case OpKind::neg: return T(-1);
    case OpKind::scale: return factor;
    default: return T(0);
  }
}

template <typename T>
BasicTensor<T> unary(OpKind kind, const BasicTensor<T>& a, T factor) {
  check_defined(a, "elementwise");
  std::vector<T> out(a.size());
  const auto in = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = unary_value(kind, in[i], factor);
  return make_result<T>("elementwise", a.shape(), std::move(out), {&a},
                        [kind, factor](Node<T>& self) {
                          auto& src = *self.parents[0];
                          if (!src.requires_grad) return;
                          src.ensure_grad();
                          for (std::size_t i = 0; i < self.data.size(); ++i) {
                            src.grad[i] += self.grad[i] *
                                           unary_derivative(kind, src.data[i], self.data[i], factor);
                          }
                        });
}

template <typename T>
BasicTensor<T> binary(OpKind kind, const BasicTensor<T>& a, const BasicTensor<T>& b) {
  check_defined(a, "elementwise");
  check_defined(b, "elementwise");
  const bool same = a.shape() == b.shape();
  const bool a_scalar = a.size() == 1;
  const bool b_scalar = b.size() == 1;
  if (!same && !a_scalar && !b_scalar) {
    throw ShapeError("elementwise: shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()) + " are not broadcast-compatible");
  }
  // Output takes the shape of the non-scalar operand.
  const Shape& shape = (same || b_scalar) ? a.shape() : b.shape();
  const std::size_t n = numel(shape);
  const auto ad = a.data();
  const auto bd = b.data();
  const std::size_t sa = a.size() == 1 && n != 1 ? 0 : 1;
  const std::size_t sb = b.size() == 1 && n != 1 ? 0 : 1;
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const T x = ad[i * sa];
    const T y = bd[i * sb];
    switch (kind) {
      case OpKind::add: out[i] = x + y; break;
      case OpKind::sub: out[i] = x - y; break;
      case OpKind::mul: out[i] = x * y; break;
      case OpKind::div:
        if (y == T(0)) throw DomainError("div: division by zero");
        out[i] = x / y;
        break;
      default: throw std::invalid_argument("elementwise: not a binary kind");
    }
  }
  return make_result<T>("elementwise", shape, std::move(out), {&a, &b},
                        [kind, sa, sb](Node<T>& self) {
                          auto& na = *self.parents[0];
                          auto& nb = *self.parents[1];
                          if (na.requires_grad) na.ensure_grad();
                          if (nb.requires_grad) nb.ensure_grad();
                          for (std::size_t i = 0; i < self.data.size(); ++i) {
                            const T g = self.grad[i];
                            const T x = na.data[i * sa];
                            const T y = nb.data[i * sb];
                            T ga = 0, gb = 0;
                            switch (kind) {
                              case OpKind::add: ga = g; gb = g; break;
                              case OpKind::sub: ga = g; gb = -g; break;
                              case OpKind::mul: ga = g * y; gb = g * x; break;
                              case OpKind::div: ga = g / y; gb = -g * x / (y * y); break;
                              default: break;
                            }
                            if (na.requires_grad) na.grad[i * sa] += ga;
                            if (nb.requires_grad) nb.grad[i * sb] += gb;
                          }
                        });
}

}  // namespace

template <typename T>
BasicTensor<T> elementwise(OpKind kind, const BasicTensor<T>& a, const BasicTensor<T>* b,
                           T factor) {
  switch (kind) {
    case OpKind::add:
    case OpKind::sub:
    case OpKind::mul:
    case OpKind::div:
      if (b == nullptr) throw std::invalid_argument("elementwise: binary op needs two operands");
      return binary(kind, a, *b);
    default:
      return unary(kind, a, factor);
  }
}

template <typename T> BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) { return binary(OpKind::add, a, b); }
template <typename T> BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) { return binary(OpKind::sub, a, b); }
template <typename T> BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) { return binary(OpKind::mul, a, b); }
template <typename T> BasicTensor<T> div(const BasicTensor<T>& a, const BasicTensor<T>& b) { return binary(OpKind::div, a, b); }
template <typename T> BasicTensor<T> relu(const BasicTensor<T>& a) { return unary(OpKind::relu, a, T(1)); }
template <typename T> BasicTensor<T> log(const BasicTensor<T>& a) { return unary(OpKind::log, a, T(1)); }
template <typename T> BasicTensor<T> exp(const BasicTensor<T>& a) { return unary(OpKind::exp, a, T(1)); }
template <typename T> BasicTensor<T> neg(const BasicTensor<T>& a) { return unary(OpKind::neg, a, T(1)); }
template <typename T> BasicTensor<T> scale(const BasicTensor<T>& a, T factor) { return unary(OpKind::scale, a, factor); }

template <typename T>
BasicTensor<T> shift(const BasicTensor<T>& a, T c) {
  return binary(OpKind::add, a, BasicTensor<T>::scalar(c));
}

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& a) {
  check_defined(a, "sum");
  T total = 0;
  for (const T v : a.data()) total += v;
  return make_result<T>("sum", Shape{}, {total}, {&a}, [](Node<T>& self) {
    auto& src = *self.parents[0];
    if (!src.requires_grad) return;
    src.ensure_grad();
    for (auto& g : src.grad) g += self.grad[0];
  });
}

template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& a) {
  check_defined(a, "mean");
  if (a.size() == 0) throw ShapeError("mean: empty tensor");
  return scale(sum(a), T(1) / static_cast<T>(a.size()));
}

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  check_defined(a, "matmul");
  check_defined(b, "matmul");
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: cannot multiply " + shape_str(a.shape()) + " by " +
                     shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  const auto ad = a.data();
  const auto bd = b.data();
  std::vector<T> out(m * n, T(0));
  for (std::size_t i = 0; i < m; ++i) {
    T* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = ad[i * k + p];
      const T* brow = bd.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
    }
  }
  return make_result<T>("matmul", Shape{m, n}, std::move(out), {&a, &b},
                        [m, k, n](Node<T>& self) {
                          auto& na = *self.parents[0];
                          auto& nb = *self.parents[1];
                          const T* g = self.grad.data();
                          if (na.requires_grad) {
                            na.ensure_grad();
                            for (std::size_t i = 0; i < m; ++i) {
                              for (std::size_t p = 0; p < k; ++p) {
                                const T* brow = nb.data.data() + p * n;
                                const T* grow = g + i * n;
                                T acc = 0;
                                for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                                na.grad[i * k + p] += acc;
                              }
                            }
                          }
                          if (nb.requires_grad) {
                            nb.ensure_grad();
                            for (std::size_t i = 0; i < m; ++i) {
                              const T* grow = g + i * n;
                              for (std::size_t p = 0; p < k; ++p) {
                                const T av = na.data[i * k + p];
                                T* dst = nb.grad.data() + p * n;
                                for (std::size_t j = 0; j < n; ++j) dst[j] += av * grow[j];
                              }
                            }
                          }
                        });
}

template <typename T>
BasicTensor<T> transpose(const BasicTensor<T>& a) {
  check_defined(a, "transpose");
  if (a.rank() != 2) throw ShapeError("transpose: expected a matrix, got " + shape_str(a.shape()));
  const std::size_t r = a.dim(0), c = a.dim(1);
  const auto ad = a.data();
  std::vector<T> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = ad[i * c + j];
  return make_result<T>("transpose", Shape{c, r}, std::move(out), {&a}, [r, c](Node<T>& self) {
    auto& src = *self.parents[0];
    if (!src.requires_grad) return;
    src.ensure_grad();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) src.grad[i * c + j] += self.grad[j * r + i];
  });
}

template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& a, Shape shape) {
  check_defined(a, "reshape");
  if (numel(shape) != a.size()) {
    throw ShapeError("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
  }
  std::vector<T> out(a.data().begin(), a.data().end());
  return make_result<T>("reshape", std::move(shape), std::move(out), {&a}, [](Node<T>& self) {
    auto& src = *self.parents[0];
    if (!src.requires_grad) return;
    src.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) src.grad[i] += self.grad[i];
  });
}

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& kernel,
                      std::size_t stride, std::size_t pad, const BasicTensor<T>* bias) {
  check_defined(input, "conv2d");
  check_defined(kernel, "conv2d");
  if (input.rank() != 3 || kernel.rank() != 4 || kernel.dim(1) != input.dim(0) ||
      kernel.dim(2) != kernel.dim(3)) {
    throw ShapeError("conv2d: input " + shape_str(input.shape()) + " incompatible with kernel " +
                     shape_str(kernel.shape()));
  }
  if (stride == 0) throw std::invalid_argument("conv2d: stride must be >= 1");
  const std::size_t cin = input.dim(0), h = input.dim(1), w = input.dim(2);
  const std::size_t cout = kernel.dim(0), k = kernel.dim(2);
  if (k > h + 2 * pad || k > w + 2 * pad) {
    throw ShapeError("conv2d: kernel larger than padded input");
  }
  if (bias != nullptr && bias->size() != cout) {
    throw ShapeError("conv2d: bias must have one entry per output channel");
  }
  const std::size_t oh = (h + 2 * pad - k) / stride + 1;
  const std::size_t ow = (w + 2 * pad - k) / stride + 1;
  const std::size_t plane = oh * ow;
  const std::size_t rows = cin * k * k;

  // im2col: rows index (channel, ki, kj), columns index output positions.
  auto cols = std::make_shared<std::vector<T>>(rows * plane, T(0));
  const auto in = input.data();
  for (std::size_t c = 0; c < cin; ++c) {
    for (std::size_t ki = 0; ki < k; ++ki) {
      for (std::size_t kj = 0; kj < k; ++kj) {
        T* dst = cols->data() + ((c * k + ki) * k + kj) * plane;
        for (std::size_t y = 0; y < oh; ++y) {
          const long iy = static_cast<long>(y * stride + ki) - static_cast<long>(pad);
          if (iy < 0 || iy >= static_cast<long>(h)) continue;
          const T* src = in.data() + (c * h + static_cast<std::size_t>(iy)) * w;
          for (std::size_t x = 0; x < ow; ++x) {
            const long ix = static_cast<long>(x * stride + kj) - static_cast<long>(pad);
            if (ix >= 0 && ix < static_cast<long>(w)) dst[y * ow + x] = src[ix];
          }
        }
      }
    }
  }

  const auto kd = kernel.data();
  std::vector<T> out(cout * plane, T(0));
  for (std::size_t o = 0; o < cout; ++o) {
    T* orow = out.data() + o * plane;
    if (bias != nullptr) std::fill(orow, orow + plane, bias->data()[o]);
    for (std::size_t r = 0; r < rows; ++r) {
      const T kv = kd[o * rows + r];
      if (kv == T(0)) continue;
      const T* crow = cols->data() + r * plane;
      for (std::size_t p = 0; p < plane; ++p) orow[p] += kv * crow[p];
    }
  }

  const BasicTensor<T> no_bias;
  const BasicTensor<T>& b = bias != nullptr ? *bias : no_bias;
  auto fn = [=](Node<T>& self) {
    auto& nin = *self.parents[0];
    auto& nk = *self.parents[1];
    const T* g = self.grad.data();
    if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
      auto& nb = *self.parents[2];
      nb.ensure_grad();
      for (std::size_t o = 0; o < cout; ++o) {
        T acc = 0;
        for (std::size_t p = 0; p < plane; ++p) acc += g[o * plane + p];
        nb.grad[o] += acc;
      }
    }
    if (nk.requires_grad) {
      nk.ensure_grad();
      for (std::size_t o = 0; o < cout; ++o) {
        const T* grow = g + o * plane;
        for (std::size_t r = 0; r < rows; ++r) {
          const T* crow = cols->data() + r * plane;
          T acc = 0;
          for (std::size_t p = 0; p < plane; ++p) acc += grow[p] * crow[p];
          nk.grad[o * rows + r] += acc;
        }
      }
    }
    if (nin.requires_grad) {
      std::vector<T> dcols(rows * plane, T(0));
      for (std::size_t o = 0; o < cout; ++o) {
        const T* grow = g + o * plane;
        for (std::size_t r = 0; r < rows; ++r) {
          const T kv = nk.data[o * rows + r];
          T* drow = dcols.data() + r * plane;
          for (std::size_t p = 0; p < plane; ++p) drow[p] += kv * grow[p];
        }
      }
      nin.ensure_grad();
      for (std::size_t c = 0; c < cin; ++c) {
        for (std::size_t ki = 0; ki < k; ++ki) {
          for (std::size_t kj = 0; kj < k; ++kj) {
            const T* src = dcols.data() + ((c * k + ki) * k + kj) * plane;
            for (std::size_t y = 0; y < oh; ++y) {
              const long iy = static_cast<long>(y * stride + ki) - static_cast<long>(pad);
              if (iy < 0 || iy >= static_cast<long>(h)) continue;
              T* dst = nin.grad.data() + (c * h + static_cast<std::size_t>(iy)) * w;
              for (std::size_t x = 0; x < ow; ++x) {
                const long ix = static_cast<long>(x * stride + kj) - static_cast<long>(pad);
                if (ix >= 0 && ix < static_cast<long>(w)) dst[ix] += src[y * ow + x];
              }
            }
          }
        }
      }
    }
  };
  if (bias != nullptr) {
    return make_result<T>("conv2d", Shape{cout, oh, ow}, std::move(out), {&input, &kernel, &b},
                          fn);
  }
  return make_result<T>("conv2d", Shape{cout, oh, ow}, std::move(out), {&input, &kernel}, fn);
}

template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& v) {
  check_defined(v, "softmax");
  if (v.size() == 0) throw ShapeError("softmax: empty vector");
  const auto d = v.data();
  const T mx = *std::max_element(d.begin(), d.end());
  std::vector<T> out(d.size());
  T total = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    out[i] = std::exp(d[i] - mx);
    total += out[i];
  }
  for (auto& x : out) x /= total;
  return make_result<T>("softmax", v.shape(), std::move(out), {&v}, [](Node<T>& self) {
    auto& src = *self.parents[0];
    if (!src.requires_grad) return;
    src.ensure_grad();
    T dot = 0;
    for (std::size_t i = 0; i < self.data.size(); ++i) dot += self.grad[i] * self.data[i];
    for (std::size_t i = 0; i < self.data.size(); ++i)
      src.grad[i] += self.data[i] * (self.grad[i] - dot);
  });
}

namespace {

template <typename T>
void log_softmax_row(const T* in, T* out, std::size_t n) {
  const T mx = *std::max_element(in, in + n);
  T total = 0;
  for (std::size_t i = 0; i < n; ++i) total += std::exp(in[i] - mx);
  const T lse = mx + std::log(total);
  for (std::size_t i = 0; i < n; ++i) out[i] = in[i] - lse;
}

template <typename T>
void log_softmax_row_backward(const T* out, const T* g, T* dst, std::size_t n) {
  T gsum = 0;
  for (std::size_t i = 0; i < n; ++i) gsum += g[i];
  for (std::size_t i = 0; i < n; ++i) dst[i] += g[i] - std::exp(out[i]) * gsum;
}

}  // namespace

template <typename T>
BasicTensor<T> log_softmax(const BasicTensor<T>& v) {
  check_defined(v, "log_softmax");
  if (v.size() == 0) throw ShapeError("log_softmax: empty vector");
  std::vector<T> out(v.size());
  log_softmax_row(v.data().data(), out.data(), v.size());
  return make_result<T>("log_softmax", v.shape(), std::move(out), {&v}, [](Node<T>& self) {
    auto& src = *self.parents[0];
    if (!src.requires_grad) return;
    src.ensure_grad();
    log_softmax_row_backward(self.data.data(), self.grad.data(), src.grad.data(),
                             self.data.size());
  });
}

template <typename T>
BasicTensor<T> log_softmax_rows(const BasicTensor<T>& a) {
  check_defined(a, "log_softmax_rows");
  if (a.rank() != 2 || a.dim(1) == 0) {
    throw ShapeError("log_softmax_rows: expected N x C with C >= 1, got " + shape_str(a.shape()));
  }
  const std::size_t n = a.dim(0), c = a.dim(1);
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < n; ++i) log_softmax_row(a.data().data() + i * c, out.data() + i * c, c);
  return make_result<T>("log_softmax_rows", a.shape(), std::move(out), {&a},
                        [n, c](Node<T>& self) {
                          auto& src = *self.parents[0];
                          if (!src.requires_grad) return;
                          src.ensure_grad();
                          for (std::size_t i = 0; i < n; ++i) {
                            log_softmax_row_backward(self.data.data() + i * c,
                                                     self.grad.data() + i * c,
                                                     src.grad.data() + i * c, c);
                          }
                        });
}

template <typename T>
BasicTensor<T> nll_mean(const BasicTensor<T>& logp, std::span<const std::int32_t> target,
                        std::int32_t ignore) {
  check_defined(logp, "nll_mean");
  if (logp.rank() != 2 || logp.dim(0) != target.size()) {
    throw ShapeError("nll_mean: " + shape_str(logp.shape()) + " vs " +
                     std::to_string(target.size()) + " targets");
  }
  const std::size_t c = logp.dim(1);
  std::vector<std::size_t> picks;
  for (std::size_t i = 0; i < target.size(); ++i) {
    const auto t = target[i];
    if (t == ignore) continue;
    if (t < 0 || static_cast<std::size_t>(t) >= c) {
      throw std::out_of_range("nll_mean: label " + std::to_string(t) + " outside [0, " +
                              std::to_string(c) + ")");
    }
    picks.push_back(i * c + static_cast<std::size_t>(t));
  }
  T total = 0;
  for (auto idx : picks) total -= logp.data()[idx];
  const T denom = picks.empty() ? T(1) : static_cast<T>(picks.size());
  return make_result<T>("nll_mean", Shape{}, {total / denom}, {&logp},
                        [picks = std::move(picks), denom](Node<T>& self) {
                          auto& src = *self.parents[0];
                          if (!src.requires_grad) return;
                          src.ensure_grad();
                          for (auto idx : picks) src.grad[idx] -= self.grad[0] / denom;
                        });
}

namespace {

struct Lerp {
  std::size_t lo, hi;
  double frac;
};

std::vector<Lerp> align_corners_axis(std::size_t in, std::size_t out) {
  std::vector<Lerp> axis(out);
  for (std::size_t i = 0; i < out; ++i) {
    const double src = out > 1 ? static_cast<double>(i) * static_cast<double>(in - 1) /
                                     static_cast<double>(out - 1)
                               : 0.0;
    auto lo = static_cast<std::size_t>(std::floor(src));
    lo = std::min(lo, in - 1);
    const std::size_t hi = std::min(lo + 1, in - 1);
    axis[i] = {lo, hi, src - static_cast<double>(lo)};
  }
  return axis;
}

}  // namespace

template <typename T>
BasicTensor<T> bilinear_upsample(const BasicTensor<T>& map, std::size_t out_h, std::size_t out_w) {
  check_defined(map, "bilinear_upsample");
  if (map.rank() != 3) throw ShapeError("bilinear_upsample: expected C x h x w");
  const std::size_t ch = map.dim(0), h = map.dim(1), w = map.dim(2);
  if (out_h < h || out_w < w) {
    throw ShapeError("bilinear_upsample: target " + std::to_string(out_h) + "x" +
                     std::to_string(out_w) + " smaller than source " + shape_str(map.shape()));
  }
  if (h == 0 || w == 0) throw ShapeError("bilinear_upsample: empty source map");
  const auto ys = align_corners_axis(h, out_h);
  const auto xs = align_corners_axis(w, out_w);
  const auto in = map.data();
  std::vector<T> out(ch * out_h * out_w);
  for (std::size_t c = 0; c < ch; ++c) {
    const T* src = in.data() + c * h * w;
    T* dst = out.data() + c * out_h * out_w;
    for (std::size_t y = 0; y < out_h; ++y) {
      const auto& ly = ys[y];
      const T fy = static_cast<T>(ly.frac);
      for (std::size_t x = 0; x < out_w; ++x) {
        const auto& lx = xs[x];
        const T fx = static_cast<T>(lx.frac);
        const T top = src[ly.lo * w + lx.lo] * (T(1) - fx) + src[ly.lo * w + lx.hi] * fx;
        const T bot = src[ly.hi * w + lx.lo] * (T(1) - fx) + src[ly.hi * w + lx.hi] * fx;
        dst[y * out_w + x] = top * (T(1) - fy) + bot * fy;
      }
    }
  }
  return make_result<T>(
      "bilinear_upsample", Shape{ch, out_h, out_w}, std::move(out), {&map},
      [=](Node<T>& self) {
        auto& src = *self.parents[0];
        if (!src.requires_grad) return;
        src.ensure_grad();
        for (std::size_t c = 0; c < ch; ++c) {
          T* dst = src.grad.data() + c * h * w;
          const T* g = self.grad.data() + c * out_h * out_w;
          for (std::size_t y = 0; y < out_h; ++y) {
            const T fy = static_cast<T>(ys[y].frac);
            for (std::size_t x = 0; x < out_w; ++x) {
              const T fx = static_cast<T>(xs[x].frac);
              const T gv = g[y * out_w + x];
              dst[ys[y].lo * w + xs[x].lo] += gv * (T(1) - fy) * (T(1) - fx);
              dst[ys[y].lo * w + xs[x].hi] += gv * (T(1) - fy) * fx;
              dst[ys[y].hi * w + xs[x].lo] += gv * fy * (T(1) - fx);
              dst[ys[y].hi * w + xs[x].hi] += gv * fy * fx;
            }
          }
        }
      });
}

template <typename T>
BasicTensor<T> pairwise_sq_dist(const BasicTensor<T>& z, const BasicTensor<T>& p) {
  check_defined(z, "pairwise_sq_dist");
  check_defined(p, "pairwise_sq_dist");
  if (z.rank() != 2 || p.rank() != 2 || z.dim(1) != p.dim(1)) {
    throw ShapeError("pairwise_sq_dist: " + shape_str(z.shape()) + " vs " + shape_str(p.shape()));
  }
  const std::size_t n = z.dim(0), m = p.dim(0), d = z.dim(1);
  const auto zd = z.data();
  const auto pd = p.data();
  std::vector<T> out(n * m);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      T acc = 0;
      for (std::size_t k = 0; k < d; ++k) {
        const T diff = zd[i * d + k] - pd[j * d + k];
        acc += diff * diff;
      }
      out[i * m + j] = acc;
    }
  }
  return make_result<T>("pairwise_sq_dist", Shape{n, m}, std::move(out), {&z, &p},
                        [n, m, d](Node<T>& self) {
                          auto& nz = *self.parents[0];
                          auto& np = *self.parents[1];
                          if (nz.requires_grad) nz.ensure_grad();
                          if (np.requires_grad) np.ensure_grad();
                          for (std::size_t i = 0; i < n; ++i) {
                            for (std::size_t j = 0; j < m; ++j) {
                              const T g = self.grad[i * m + j];
                              if (g == T(0)) continue;
                              for (std::size_t k = 0; k < d; ++k) {
                                const T diff = T(2) * g * (nz.data[i * d + k] - np.data[j * d + k]);
                                if (nz.requires_grad) nz.grad[i * d + k] += diff;
                                if (np.requires_grad) np.grad[j * d + k] -= diff;
                              }
                            }
                          }
                        });
}

template <typename T>
BasicTensor<T> gather(const BasicTensor<T>& a, std::span<const std::size_t> flat_index) {
  check_defined(a, "gather");
  std::vector<T> out(flat_index.size());
  for (std::size_t i = 0; i < flat_index.size(); ++i) {
    if (flat_index[i] >= a.size()) throw std::out_of_range("gather: index out of range");
    out[i] = a.data()[flat_index[i]];
  }
  std::vector<std::size_t> idx(flat_index.begin(), flat_index.end());
  return make_result<T>("gather", Shape{flat_index.size()}, std::move(out), {&a},
                        [idx = std::move(idx)](Node<T>& self) {
                          auto& src = *self.parents[0];
                          if (!src.requires_grad) return;
                          src.ensure_grad();
                          for (std::size_t i = 0; i < idx.size(); ++i) src.grad[idx[i]] += self.grad[i];
                        });
}

#define PROTOSEG_INSTANTIATE(T)                                                              \
  template BasicTensor<T> elementwise(OpKind, const BasicTensor<T>&, const BasicTensor<T>*, T); \
  template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);                 \
  template BasicTensor<T> sub(const BasicTensor<T>&, const BasicTensor<T>&);                 \
  template BasicTensor<T> mul(const BasicTensor<T>&, const BasicTensor<T>&);                 \
  template BasicTensor<T> div(const BasicTensor<T>&, const BasicTensor<T>&);                 \
  template BasicTensor<T> relu(const BasicTensor<T>&);                                       \
  template BasicTensor<T> log(const BasicTensor<T>&);                                        \
  template BasicTensor<T> exp(const BasicTensor<T>&);                                        \
  template BasicTensor<T> neg(const BasicTensor<T>&);                                        \
  template BasicTensor<T> scale(const BasicTensor<T>&, T);                                   \
  template BasicTensor<T> shift(const BasicTensor<T>&, T);                                   \
  template BasicTensor<T> sum(const BasicTensor<T>&);                                        \
  template BasicTensor<T> mean(const BasicTensor<T>&);                                       \
  template BasicTensor<T> matmul(const BasicTensor<T>&, const BasicTensor<T>&);              \
  template BasicTensor<T> transpose(const BasicTensor<T>&);                                  \
  template BasicTensor<T> reshape(const BasicTensor<T>&, Shape);                             \
  template BasicTensor<T> conv2d(const BasicTensor<T>&, const BasicTensor<T>&, std::size_t,  \
                                 std::size_t, const BasicTensor<T>*);                        \
  template BasicTensor<T> softmax(const BasicTensor<T>&);                                    \
  template BasicTensor<T> log_softmax(const BasicTensor<T>&);                                \
  template BasicTensor<T> log_softmax_rows(const BasicTensor<T>&);                           \
  template BasicTensor<T> nll_mean(const BasicTensor<T>&, std::span<const std::int32_t>,     \
                                   std::int32_t);                                            \
  template BasicTensor<T> bilinear_upsample(const BasicTensor<T>&, std::size_t, std::size_t); \
  template BasicTensor<T> pairwise_sq_dist(const BasicTensor<T>&, const BasicTensor<T>&);    \
  template BasicTensor<T> gather(const BasicTensor<T>&, std::span<const std::size_t>);

PROTOSEG_INSTANTIATE(float)
PROTOSEG_INSTANTIATE(double)

#undef PROTOSEG_INSTANTIATE

}  // namespace protoseg::num
