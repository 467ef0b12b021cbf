#pragma once

#include <cstdint>
#include <optional>
#include <span>

#include "protoseg/numcore/tensor.hpp"

namespace protoseg::num {

enum class OpKind { add, sub, mul, div, relu, log, exp, neg, scale };

/// Generic elementwise entry point. Binary kinds take `b`; `scale` takes
/// the factor in `factor`. Broadcasting is limited to equal shapes or a
/// single-element operand.
template <typename T>
BasicTensor<T> elementwise(OpKind kind, const BasicTensor<T>& a,
                           const BasicTensor<T>* b = nullptr, T factor = T(1));

template <typename T> BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> div(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> relu(const BasicTensor<T>& a);
template <typename T> BasicTensor<T> log(const BasicTensor<T>& a);
template <typename T> BasicTensor<T> exp(const BasicTensor<T>& a);
template <typename T> BasicTensor<T> neg(const BasicTensor<T>& a);
template <typename T> BasicTensor<T> scale(const BasicTensor<T>& a, T factor);
/// a + c for a constant c.
template <typename T> BasicTensor<T> shift(const BasicTensor<T>& a, T c);

template <typename T> BasicTensor<T> sum(const BasicTensor<T>& a);
template <typename T> BasicTensor<T> mean(const BasicTensor<T>& a);

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T>
BasicTensor<T> transpose(const BasicTensor<T>& a);
template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& a, Shape shape);

/// Zero-padded 2-D cross-correlation of a single C_in x H x W image.
/// `bias`, when given, has C_out entries added per output channel.
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& kernel,
                      std::size_t stride, std::size_t pad,
                      const BasicTensor<T>* bias = nullptr);

/// Softmax of a 1-D tensor, computed after subtracting the maximum.
template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& v);
template <typename T>
BasicTensor<T> log_softmax(const BasicTensor<T>& v);
/// Row-wise log-softmax of an N x C matrix.
template <typename T>
BasicTensor<T> log_softmax_rows(const BasicTensor<T>& a);

/// Mean of -logp[i, target[i]] over rows whose target differs from
/// `ignore`. Returns 0 when no row is scored.
template <typename T>
BasicTensor<T> nll_mean(const BasicTensor<T>& logp, std::span<const std::int32_t> target,
                        std::int32_t ignore);

/// Align-corners bilinear resize of a C x h x w map to C x H x W.
template <typename T>
BasicTensor<T> bilinear_upsample(const BasicTensor<T>& map, std::size_t out_h,
                                 std::size_t out_w);

/// ||z_i - p_j||^2 for rows of Z (N x D) and P (M x D), as N x M.
template <typename T>
BasicTensor<T> pairwise_sq_dist(const BasicTensor<T>& z, const BasicTensor<T>& p);

/// 1-D tensor of the entries of `a` at the given flat offsets.
template <typename T>
BasicTensor<T> gather(const BasicTensor<T>& a, std::span<const std::size_t> flat_index);

}  // namespace protoseg::num
