#include "protoseg/segmodel/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "protoseg/numcore/ops.hpp"
#include "protoseg/synthdata/rng.hpp"

namespace protoseg::model {

namespace {

bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

std::size_t log2_exact(std::size_t n) {
  std::size_t k = 0;
  while ((std::size_t{1} << k) < n) ++k;
  return k;
}

Tensor he_uniform(num::Shape shape, std::size_t fan_in, data::Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::vector<double> v(num::numel(shape));
  for (auto& x : v) x = rng.uniform(-bound, bound);
  return Tensor(std::move(shape), std::move(v), true);
}

Tensor zeros_param(std::size_t n) { return Tensor::zeros({n}, true); }

const Tensor& find(const std::vector<NamedParam>& params, const std::string& name) {
  for (const auto& p : params)
    if (p.name == name) return p.value;
  throw std::logic_error("backbone: missing parameter " + name);
}

}  // namespace

const char* variant_name(BackboneVariant v) {
  return v == BackboneVariant::plain_conv ? "plain-conv" : "skip-connection";
}

BackboneVariant parse_variant(const std::string& name) {
  if (name == "plain-conv") return BackboneVariant::plain_conv;
  if (name == "skip-connection") return BackboneVariant::skip_connection;
  throw std::invalid_argument("unknown backbone variant '" + name +
                              "' (expected plain-conv or skip-connection)");
}

void BackboneConfig::validate() const {
  if (!is_power_of_two(stride)) throw std::invalid_argument("backbone: stride must be a power of two");
  if (widths.size() != log2_exact(stride) + 1) {
    throw std::invalid_argument("backbone: need log2(stride) + 1 stage widths, got " +
                                std::to_string(widths.size()));
  }
  for (auto w : widths)
    if (w == 0) throw std::invalid_argument("backbone: stage widths must be positive");
  if (out_dim < 2) throw std::invalid_argument("backbone: output dimension must be >= 2");
}

Backbone::Backbone(BackboneConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  data::Rng rng(seed);
  std::size_t in = 3;
  for (std::size_t i = 0; i < cfg_.widths.size(); ++i) {
    const std::size_t out = cfg_.widths[i];
    const std::string prefix = "backbone.stage" + std::to_string(i);
    core_.push_back({prefix + ".weight", he_uniform({out, in, 3, 3}, in * 9, rng)});
    core_.push_back({prefix + ".bias", zeros_param(out)});
    if (i > 0 && cfg_.variant == BackboneVariant::skip_connection) {
      core_.push_back({prefix + ".shortcut.weight", he_uniform({out, in, 1, 1}, in, rng)});
      core_.push_back({prefix + ".shortcut.bias", zeros_param(out)});
    }
    in = out;
  }
  proj_.push_back({"backbone.proj.weight", he_uniform({cfg_.out_dim, in, 1, 1}, in, rng)});
  proj_.push_back({"backbone.proj.bias", zeros_param(cfg_.out_dim)});
}

Backbone Backbone::clone() const {
  Backbone b;
  b.cfg_ = cfg_;
  auto copy = [](const NamedParam& p) {
    return NamedParam{p.name, Tensor(p.value.shape(), {p.value.data().begin(), p.value.data().end()},
                                     p.value.requires_grad())};
  };
  for (const auto& p : core_) b.core_.push_back(copy(p));
  for (const auto& p : proj_) b.proj_.push_back(copy(p));
  return b;
}

Tensor Backbone::forward(const Tensor& image) const {
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw num::ShapeError("backbone: expected a 3 x H x W image, got " + num::shape_str(image.shape()));
  }
  if (image.dim(1) % cfg_.stride != 0 || image.dim(2) % cfg_.stride != 0) {
    throw num::ShapeError("backbone: image " + std::to_string(image.dim(1)) + "x" +
                          std::to_string(image.dim(2)) + " not divisible by stride " +
                          std::to_string(cfg_.stride));
  }
  Tensor x = image;
  for (std::size_t i = 0; i < cfg_.widths.size(); ++i) {
    const std::string prefix = "backbone.stage" + std::to_string(i);
    const Tensor& b = find(core_, prefix + ".bias");
    Tensor y = num::conv2d(x, find(core_, prefix + ".weight"), i == 0 ? 1 : 2, 1, &b);
    if (i > 0 && cfg_.variant == BackboneVariant::skip_connection) {
      const Tensor& sb = find(core_, prefix + ".shortcut.bias");
      y = num::add(y, num::conv2d(x, find(core_, prefix + ".shortcut.weight"), 2, 0, &sb));
    }
    x = num::relu(y);
  }
  return num::conv2d(x, proj_[0].value, 1, 0, &proj_[1].value);
}

std::size_t PrototypeSet::active_count() const {
  return static_cast<std::size_t>(std::count(active.begin(), active.end(), true));
}

std::vector<std::size_t> PrototypeSet::of_class(int c) const {
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < class_of.size(); ++j)
    if (active[j] && class_of[j] == c) out.push_back(j);
  return out;
}

PrototypeSet init_prototypes(int num_classes, std::size_t per_class, std::size_t dim,
                             std::uint64_t seed) {
  if (per_class < 1) throw std::invalid_argument("init_prototypes: per_class must be >= 1");
  if (num_classes < 1) throw std::invalid_argument("init_prototypes: need at least one class");
  const std::size_t m = static_cast<std::size_t>(num_classes) * per_class;
  data::Rng rng(seed);
  std::vector<double> v(m * dim);
  for (auto& x : v) x = rng.uniform();
  PrototypeSet p;
  p.vectors = Tensor({m, dim}, std::move(v), true);
  p.class_of.resize(m);
  for (std::size_t j = 0; j < m; ++j) p.class_of[j] = static_cast<int>(j / per_class);
  p.active.assign(m, true);
  return p;
}

LastLayer init_last_layer(const PrototypeSet& protos, int num_classes) {
  const std::size_t m = protos.count();
  const auto c = static_cast<std::size_t>(num_classes);
  std::vector<double> w(m * c);
  for (std::size_t j = 0; j < m; ++j)
    for (std::size_t k = 0; k < c; ++k)
      w[j * c + k] = protos.class_of[j] == static_cast<int>(k) ? 1.0 : -0.5;
  return {Tensor({m, c}, std::move(w), true)};
}

double similarity(std::span<const double> z, std::span<const double> p, double eps) {
  if (z.size() != p.size()) throw num::ShapeError("similarity: dimension mismatch");
  double d = 0;
  for (std::size_t i = 0; i < z.size(); ++i) d += (z[i] - p[i]) * (z[i] - p[i]);
  return std::log((d + 1.0) / (d + eps));
}

HeadOutput head_forward(const Tensor& features, const PrototypeSet& protos, const LastLayer& layer,
                        double eps) {
  if (features.rank() != 2 || features.dim(1) != protos.dim()) {
    throw num::ShapeError("head_forward: features " + num::shape_str(features.shape()) +
                          " do not match prototype dimension " + std::to_string(protos.dim()));
  }
  if (protos.active_count() == 0) throw std::logic_error("head_forward: no active prototypes");
  HeadOutput out;
  out.sq_dist = num::pairwise_sq_dist(features, protos.vectors);
  Tensor act = num::sub(num::log(num::shift(out.sq_dist, 1.0)), num::log(num::shift(out.sq_dist, eps)));
  if (protos.active_count() != protos.count()) {
    const std::size_t n = features.dim(0), m = protos.count();
    std::vector<double> mask(n * m);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) mask[i * m + j] = protos.active[j] ? 1.0 : 0.0;
    act = num::mul(act, Tensor({n, m}, std::move(mask)));
  }
  out.activations = act;
  out.logits = num::matmul(act, layer.weights);
  return out;
}

ProtoSegModel ProtoSegModel::create(const BackboneConfig& bb, int num_classes,
                                    std::size_t per_class, double epsilon, std::uint64_t seed) {
  if (!(epsilon > 0)) throw std::invalid_argument("model: epsilon must be positive");
  ProtoSegModel m;
  m.num_classes = num_classes;
  m.epsilon = epsilon;
  m.backbone = Backbone(bb, data::derive_seed(seed, {1}));
  m.prototypes = init_prototypes(num_classes, per_class, bb.out_dim, data::derive_seed(seed, {2}));
  m.last_layer = init_last_layer(m.prototypes, num_classes);
  m.provenance.assign(m.prototypes.count(), std::nullopt);
  return m;
}

ProtoSegModel ProtoSegModel::clone() const {
  auto copy_leaf = [](const Tensor& t) {
    return Tensor(t.shape(), {t.data().begin(), t.data().end()}, t.requires_grad());
  };
  ProtoSegModel m = *this;
  m.backbone = backbone.clone();
  m.prototypes.vectors = copy_leaf(prototypes.vectors);
  m.last_layer.weights = copy_leaf(last_layer.weights);
  return m;
}

ForwardResult ProtoSegModel::forward(const Tensor& image) const {
  const Tensor fmap = backbone.forward(image);
  ForwardResult r;
  r.feat_h = fmap.dim(1);
  r.feat_w = fmap.dim(2);
  const std::size_t d = fmap.dim(0);
  r.features = num::transpose(num::reshape(fmap, {d, r.feat_h * r.feat_w}));
  r.head = head_forward(r.features, prototypes, last_layer, epsilon);
  return r;
}

ForwardResult ProtoSegModel::forward(const data::SegSample& s) const { return forward(data::to_chw(s)); }

void ProtoSegModel::deactivate(std::size_t j) {
  prototypes.active.at(j) = false;
  const auto c = last_layer.weights.dim(1);
  auto w = last_layer.weights.mutable_data();
  std::fill(w.begin() + static_cast<std::ptrdiff_t>(j * c),
            w.begin() + static_cast<std::ptrdiff_t>((j + 1) * c), 0.0);
}

bool ProtoSegModel::projected() const {
  return std::any_of(provenance.begin(), provenance.end(), [](const auto& p) { return p.has_value(); });
}

std::vector<std::uint8_t> argmax_upsampled(const Tensor& logits, std::size_t feat_h,
                                           std::size_t feat_w, std::size_t out_h,
                                           std::size_t out_w) {
  num::NoGradGuard no_grad;
  const std::size_t c = logits.dim(1);
  const Tensor maps = num::reshape(num::transpose(logits), {c, feat_h, feat_w});
  const Tensor up = num::bilinear_upsample(maps, out_h, out_w);
  const std::size_t plane = out_h * out_w;
  std::vector<std::uint8_t> out(plane);
  const auto v = up.data();
  for (std::size_t p = 0; p < plane; ++p) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < c; ++k)
      if (v[k * plane + p] > v[best * plane + p]) best = k;
    out[p] = static_cast<std::uint8_t>(best);
  }
  return out;
}

std::vector<std::uint8_t> predict_segmentation(const ProtoSegModel& model, const data::SegSample& s) {
  num::NoGradGuard no_grad;
  const auto r = model.forward(s);
  return argmax_upsampled(r.head.logits, r.feat_h, r.feat_w, s.height, s.width);
}

std::vector<double> prototype_activation_map(const ProtoSegModel& model, const data::SegSample& s,
                                             std::size_t j) {
  if (j >= model.prototypes.count() || !model.prototypes.active[j]) {
    throw std::out_of_range("prototype " + std::to_string(j) + " is not an active prototype");
  }
  num::NoGradGuard no_grad;
  const auto r = model.forward(s);
  const std::size_t n = r.feat_h * r.feat_w, m = model.prototypes.count();
  std::vector<double> col(n);
  for (std::size_t i = 0; i < n; ++i) col[i] = r.head.activations[i * m + j];
  const Tensor up = num::bilinear_upsample(Tensor({1, r.feat_h, r.feat_w}, std::move(col)), s.height,
                                           s.width);
  return {up.data().begin(), up.data().end()};
}

std::vector<std::int32_t> assign_prototypes(const Tensor& activations,
                                            std::span<const std::uint8_t> labels_d,
                                            const PrototypeSet& protos) {
  const std::size_t m = protos.count();
  if (activations.rank() != 2 || activations.dim(1) != m || activations.dim(0) != labels_d.size()) {
    throw num::ShapeError("assign_prototypes: activations " + num::shape_str(activations.shape()) +
                          " do not match labels/prototypes");
  }
  std::vector<std::vector<std::size_t>> by_class;
  std::vector<std::int32_t> out(labels_d.size(), kNoPrototype);
  const auto act = activations.data();
  for (std::size_t i = 0; i < labels_d.size(); ++i) {
    const auto l = labels_d[i];
    if (l == data::kIgnore) continue;
    if (l >= by_class.size()) by_class.resize(l + 1u);
    auto& cands = by_class[l];
    if (cands.empty()) cands = protos.of_class(l);
    if (cands.empty()) continue;  // class lost all its prototypes
    std::size_t best = cands[0];
    for (auto j : cands)
      if (act[i * m + j] > act[i * m + best]) best = j;
    out[i] = static_cast<std::int32_t>(best);
  }
  return out;
}

}  // namespace protoseg::model
