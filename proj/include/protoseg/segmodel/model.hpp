#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "protoseg/numcore/tensor.hpp"
#include "protoseg/synthdata/sample.hpp"

namespace protoseg::model {

using num::Tensor;

enum class BackboneVariant { plain_conv, skip_connection };

const char* variant_name(BackboneVariant v);
BackboneVariant parse_variant(const std::string& name);

/// Toy backbone: a stride-1 3x3 stage followed by stride-2 3x3 stages, one
/// per factor of two in `stride`, then a 1x1 projection to `out_dim`. The
/// projection plays the role of the task-specific head that is trained
/// during warmup. The skip-connection variant adds a strided 1x1 shortcut
/// around every downsampling stage.
struct BackboneConfig {
  BackboneVariant variant = BackboneVariant::plain_conv;
  std::vector<std::size_t> widths{12, 24, 32};
  std::size_t stride = 4;
  std::size_t out_dim = 16;

  void validate() const;
};

struct NamedParam {
  std::string name;
  Tensor value;
};

class Backbone {
 public:
  Backbone() = default;
  Backbone(BackboneConfig cfg, std::uint64_t seed);

  /// 3 x H x W image to out_dim x H/s x W/s features.
  Tensor forward(const Tensor& image) const;

  const BackboneConfig& config() const { return cfg_; }
  /// Convolution stages (frozen during warmup).
  std::vector<NamedParam>& core() { return core_; }
  const std::vector<NamedParam>& core() const { return core_; }
  /// Final 1x1 projection.
  std::vector<NamedParam>& projection() { return proj_; }
  const std::vector<NamedParam>& projection() const { return proj_; }
  Backbone clone() const;

 private:
  BackboneConfig cfg_;
  std::vector<NamedParam> core_;
  std::vector<NamedParam> proj_;
};

/// M prototype vectors with a fixed class assignment and an activity mask.
struct PrototypeSet {
  Tensor vectors;  // M x D, requires_grad
  std::vector<int> class_of;
  std::vector<bool> active;

  std::size_t count() const { return class_of.size(); }
  std::size_t dim() const { return vectors.dim(1); }
  std::size_t active_count() const;
  /// Active prototypes of class c in index order.
  std::vector<std::size_t> of_class(int c) const;
};

PrototypeSet init_prototypes(int num_classes, std::size_t per_class, std::size_t dim,
                             std::uint64_t seed);

struct LastLayer {
  Tensor weights;  // M x C
};

/// w[j][c] = 1 when prototype j belongs to class c, -0.5 otherwise.
LastLayer init_last_layer(const PrototypeSet& protos, int num_classes);

/// log((d + 1) / (d + eps)) for d = ||z - p||^2.
double similarity(std::span<const double> z, std::span<const double> p, double eps);

struct HeadOutput {
  Tensor sq_dist;      // N x M
  Tensor activations;  // N x M, columns of inactive prototypes are zero
  Tensor logits;       // N x C
};

/// Prototype and last layer applied independently at every feature point.
/// `features` holds one row per point in row-major spatial order (N x D).
HeadOutput head_forward(const Tensor& features, const PrototypeSet& protos,
                        const LastLayer& layer, double eps);

struct ForwardResult {
  std::size_t feat_h = 0;
  std::size_t feat_w = 0;
  Tensor features;  // N x D
  HeadOutput head;
};

struct ProtoSegModel {
  int num_classes = 0;
  double epsilon = 1e-4;
  Backbone backbone;
  PrototypeSet prototypes;
  LastLayer last_layer;
  // Projection provenance per prototype: (image, row, col) or empty.
  std::vector<std::optional<std::array<std::int32_t, 3>>> provenance;

  static ProtoSegModel create(const BackboneConfig& bb, int num_classes, std::size_t per_class,
                              double epsilon, std::uint64_t seed);

  /// Deep copy; plain copies share parameter storage.
  ProtoSegModel clone() const;

  ForwardResult forward(const Tensor& image) const;
  ForwardResult forward(const data::SegSample& s) const;

  /// Marks prototype j inactive and zeroes its last-layer row.
  void deactivate(std::size_t j);
  bool projected() const;
};

/// Per-pixel class map at image resolution: bilinear upsampling of the
/// logits followed by argmax, ties toward the lower class id.
std::vector<std::uint8_t> predict_segmentation(const ProtoSegModel& model, const data::SegSample& s);
std::vector<std::uint8_t> argmax_upsampled(const Tensor& logits, std::size_t feat_h,
                                           std::size_t feat_w, std::size_t out_h,
                                           std::size_t out_w);

/// Activation of prototype j upsampled to image resolution (H*W values).
std::vector<double> prototype_activation_map(const ProtoSegModel& model, const data::SegSample& s,
                                             std::size_t j);

inline constexpr std::int32_t kNoPrototype = -1;

/// Highest-activated active prototype of each point's ground-truth class;
/// kNoPrototype where that class has no active prototype or the point is
/// ignored.
std::vector<std::int32_t> assign_prototypes(const Tensor& activations,
                                            std::span<const std::uint8_t> labels_d,
                                            const PrototypeSet& protos);

}  // namespace protoseg::model
