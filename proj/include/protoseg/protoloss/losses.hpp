#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "protoseg/numcore/tensor.hpp"
#include "protoseg/segmodel/model.hpp"

namespace protoseg::loss {

using num::Tensor;

struct LossConfig {
  double lambda_j = 0.25;
  double lambda_l1 = 1e-4;
  double epsilon = 1e-4;
  // Softmax over negated squared distances instead of the raw ones.
  bool negate_distances = false;

  void validate() const;
};

// ---- probability-vector helpers (plain values) ----

/// Throws unless `p` is non-empty, strictly positive and sums to 1 (1e-9).
void check_prob_vector(std::span<const double> p);

double kl_divergence(std::span<const double> u, std::span<const double> v);
/// 0.5 * KL(U||V) + 0.5 * KL(V||U)
double jeffrey_divergence(std::span<const double> u, std::span<const double> v);
/// Mean of exp(-D_J) over all unordered pairs; needs at least two inputs.
double jeffrey_similarity(const std::vector<std::vector<double>>& dists);

/// Softmax over squared distances from `p` to every feature row labelled
/// `cls`, in row-major point order. `features` is N x D.
std::vector<double> distance_vector(std::span<const double> features, std::size_t dim,
                                    std::span<const std::uint8_t> labels_d, int cls,
                                    std::span<const double> p, bool negate = false);

// ---- differentiable losses ----

/// Mean pointwise cross-entropy over non-ignored points; 0 if none.
Tensor cross_entropy_map(const Tensor& logits, std::span<const std::uint8_t> labels_d);

/// Jeffrey divergence of two distributions given as log-probabilities.
Tensor jeffrey_divergence(const Tensor& log_u, const Tensor& log_v);

/// Jeffrey similarity between the distance vectors of the listed
/// prototypes on the points of class `cls`. Zero for fewer than two.
/// `sq_dist` is the N x M matrix of squared point-to-prototype distances.
Tensor diversity_loss_class(const Tensor& sq_dist, std::span<const std::uint8_t> labels_d, int cls,
                            std::span<const std::size_t> prototypes, bool negate = false);

/// Mean of the class losses over classes present in `labels_d`.
Tensor total_diversity_loss(const Tensor& sq_dist, std::span<const std::uint8_t> labels_d,
                            const model::PrototypeSet& protos, bool negate = false);

struct LossParts {
  Tensor total;
  double cross_entropy = 0;
  double diversity = 0;
  double l1 = 0;
};

/// L_CE + lambda_J * L_J
LossParts joint_loss(const model::HeadOutput& head, std::span<const std::uint8_t> labels_d,
                     const model::PrototypeSet& protos, const LossConfig& cfg);

/// Sum of |w[j][c]| over entries whose prototype does not belong to c.
Tensor off_class_l1(const model::LastLayer& layer, const model::PrototypeSet& protos);

/// joint + lambda_L1 * off_class_l1
LossParts finetune_loss(const LossParts& joint, const model::LastLayer& layer,
                        const model::PrototypeSet& protos, const LossConfig& cfg);

}  // namespace protoseg::loss
