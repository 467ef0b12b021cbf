#include "protoseg/protoloss/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "protoseg/numcore/ops.hpp"

namespace protoseg::loss {

void LossConfig::validate() const {
  if (lambda_j < 0) throw std::invalid_argument("loss: lambda_j must be >= 0");
  if (lambda_l1 < 0) throw std::invalid_argument("loss: lambda_l1 must be >= 0");
  if (!(epsilon > 0)) throw std::invalid_argument("loss: epsilon must be > 0");
}

void check_prob_vector(std::span<const double> p) {
  if (p.empty()) throw std::invalid_argument("probability vector is empty");
  double total = 0;
  for (const double x : p) {
    if (!(x > 0)) throw std::invalid_argument("probability vector has a non-positive entry");
    total += x;
  }
  if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("probability vector does not sum to 1");
}

double kl_divergence(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) throw num::ShapeError("kl_divergence: length mismatch");
  double d = 0;
  for (std::size_t i = 0; i < u.size(); ++i) d += u[i] * std::log(u[i] / v[i]);
  return d;
}

double jeffrey_divergence(std::span<const double> u, std::span<const double> v) {
  return 0.5 * kl_divergence(u, v) + 0.5 * kl_divergence(v, u);
}

double jeffrey_similarity(const std::vector<std::vector<double>>& dists) {
  if (dists.size() < 2) throw std::invalid_argument("jeffrey_similarity: need at least two distributions");
  double total = 0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < dists.size(); ++i) {
    for (std::size_t j = i + 1; j < dists.size(); ++j) {
      total += std::exp(-jeffrey_divergence(dists[i], dists[j]));
      ++pairs;
    }
  }
  return total / static_cast<double>(pairs);
}

std::vector<double> distance_vector(std::span<const double> features, std::size_t dim,
                                    std::span<const std::uint8_t> labels_d, int cls,
                                    std::span<const double> p, bool negate) {
  if (p.size() != dim || features.size() != labels_d.size() * dim) {
    throw num::ShapeError("distance_vector: inconsistent feature/prototype sizes");
  }
  std::vector<double> d;
  for (std::size_t i = 0; i < labels_d.size(); ++i) {
    if (labels_d[i] != cls) continue;
    double acc = 0;
    for (std::size_t k = 0; k < dim; ++k) {
      const double diff = features[i * dim + k] - p[k];
      acc += diff * diff;
    }
    d.push_back(negate ? -acc : acc);
  }
  if (d.empty()) throw std::invalid_argument("distance_vector: no points of class " + std::to_string(cls));
  const double mx = *std::max_element(d.begin(), d.end());
  double total = 0;
  for (auto& x : d) total += (x = std::exp(x - mx));
  for (auto& x : d) x /= total;
  return d;
}

Tensor cross_entropy_map(const Tensor& logits, std::span<const std::uint8_t> labels_d) {
  const auto target = data::labels_i32(labels_d);
  return num::nll_mean(num::log_softmax_rows(logits), std::span<const std::int32_t>(target),
                       static_cast<std::int32_t>(data::kIgnore));
}

Tensor jeffrey_divergence(const Tensor& log_u, const Tensor& log_v) {
  // 0.5 * sum((u - v) * (log u - log v)) equals the symmetrised KL.
  const Tensor diff_p = num::sub(num::exp(log_u), num::exp(log_v));
  const Tensor diff_log = num::sub(log_u, log_v);
  return num::scale(num::sum(num::mul(diff_p, diff_log)), 0.5);
}

Tensor diversity_loss_class(const Tensor& sq_dist, std::span<const std::uint8_t> labels_d, int cls,
                            std::span<const std::size_t> prototypes, bool negate) {
  if (sq_dist.rank() != 2 || sq_dist.dim(0) != labels_d.size()) {
    throw num::ShapeError("diversity_loss_class: distance matrix does not match labels");
  }
  if (prototypes.size() < 2) return Tensor::scalar(0.0);
  const std::size_t m = sq_dist.dim(1);
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < labels_d.size(); ++i)
    if (labels_d[i] == cls) rows.push_back(i);
  if (rows.empty()) throw std::invalid_argument("diversity_loss_class: class " + std::to_string(cls) + " absent");

  std::vector<Tensor> log_dists;
  std::vector<std::size_t> flat(rows.size());
  for (const auto j : prototypes) {
    if (j >= m) throw std::out_of_range("diversity_loss_class: prototype index out of range");
    for (std::size_t r = 0; r < rows.size(); ++r) flat[r] = rows[r] * m + j;
    Tensor v = num::gather(sq_dist, std::span<const std::size_t>(flat));
    if (negate) v = num::neg(v);
    log_dists.push_back(num::log_softmax(v));
  }
  Tensor total;
  std::size_t pairs = 0;
  for (std::size_t a = 0; a < log_dists.size(); ++a) {
    for (std::size_t b = a + 1; b < log_dists.size(); ++b) {
      Tensor s = num::exp(num::neg(jeffrey_divergence(log_dists[a], log_dists[b])));
      total = total.defined() ? num::add(total, s) : s;
      ++pairs;
    }
  }
  return num::scale(total, 1.0 / static_cast<double>(pairs));
}

Tensor total_diversity_loss(const Tensor& sq_dist, std::span<const std::uint8_t> labels_d,
                            const model::PrototypeSet& protos, bool negate) {
  std::vector<bool> present;
  for (const auto l : labels_d) {
    if (l == data::kIgnore) continue;
    if (l >= present.size()) present.resize(l + 1u, false);
    present[l] = true;
  }
  Tensor total;
  std::size_t classes = 0;
  for (std::size_t c = 0; c < present.size(); ++c) {
    if (!present[c]) continue;
    const auto members = protos.of_class(static_cast<int>(c));
    Tensor lc = diversity_loss_class(sq_dist, labels_d, static_cast<int>(c), members, negate);
    total = total.defined() ? num::add(total, lc) : lc;
    ++classes;
  }
  if (classes == 0) return Tensor::scalar(0.0);
  return num::scale(total, 1.0 / static_cast<double>(classes));
}

LossParts joint_loss(const model::HeadOutput& head, std::span<const std::uint8_t> labels_d,
                     const model::PrototypeSet& protos, const LossConfig& cfg) {
  LossParts parts;
  Tensor ce = cross_entropy_map(head.logits, labels_d);
  parts.cross_entropy = ce.item();
  parts.total = ce;
  if (cfg.lambda_j > 0) {
    Tensor lj = total_diversity_loss(head.sq_dist, labels_d, protos, cfg.negate_distances);
    parts.diversity = lj.item();
    parts.total = num::add(ce, num::scale(lj, cfg.lambda_j));
  }
  return parts;
}

Tensor off_class_l1(const model::LastLayer& layer, const model::PrototypeSet& protos) {
  const Tensor& w = layer.weights;
  const std::size_t m = w.dim(0), c = w.dim(1);
  if (m != protos.count()) throw num::ShapeError("off_class_l1: last layer does not match prototypes");
  std::vector<double> mask(m * c);
  for (std::size_t j = 0; j < m; ++j)
    for (std::size_t k = 0; k < c; ++k) mask[j * c + k] = protos.class_of[j] == static_cast<int>(k) ? 0.0 : 1.0;
  const Tensor abs_w = num::add(num::relu(w), num::relu(num::neg(w)));
  return num::sum(num::mul(abs_w, Tensor({m, c}, std::move(mask))));
}

LossParts finetune_loss(const LossParts& joint, const model::LastLayer& layer,
                        const model::PrototypeSet& protos, const LossConfig& cfg) {
  LossParts parts = joint;
  if (cfg.lambda_l1 > 0) {
    Tensor l1 = off_class_l1(layer, protos);
    parts.l1 = l1.item();
    parts.total = num::add(joint.total, num::scale(l1, cfg.lambda_l1));
  }
  return parts;
}

}  // namespace protoseg::loss
