#include "protoseg/explain/explain.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <stdexcept>

#include "protoseg/explain/metrics.hpp"
#include "protoseg/numcore/ops.hpp"
#include "protoseg/parallel.hpp"

namespace protoseg::explain {

namespace {

// Forward pass without graph; activations N x M plus feature dims.
model::ForwardResult infer(const model::ProtoSegModel& m, const data::SegSample& s) {
  num::NoGradGuard no_grad;
  return m.forward(s);
}

ImageMaps maps_of(const model::ProtoSegModel& m, const model::ForwardResult& r) {
  const std::size_t n = r.feat_h * r.feat_w, count = m.prototypes.count();
  const auto act = r.head.activations.data();
  ImageMaps maps(count);
  for (std::size_t j = 0; j < count; ++j) {
    if (!m.prototypes.active[j]) continue;
    maps[j].resize(n);
    for (std::size_t i = 0; i < n; ++i) maps[j][i] = act[i * count + j];
  }
  return maps;
}

std::string num_str(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace

OverlapReport overlap_from_maps(const std::vector<ImageMaps>& images, const model::PrototypeSet& protos,
                                int num_classes, double percentile) {
  OverlapReport rep;
  rep.percentile = percentile;
  rep.class_iou.assign(static_cast<std::size_t>(num_classes), -1.0);
  rep.class_pairs.assign(static_cast<std::size_t>(num_classes), 0);
  std::vector<double> class_sum(static_cast<std::size_t>(num_classes), 0.0);
  std::vector<std::size_t> class_n(static_cast<std::size_t>(num_classes), 0);
  for (int c = 0; c < num_classes; ++c) {
    const auto ids = protos.of_class(c);
    rep.class_pairs[static_cast<std::size_t>(c)] = ids.size() * (ids.size() - (ids.empty() ? 0 : 1)) / 2;
    rep.pairs += rep.class_pairs[static_cast<std::size_t>(c)];
  }
  // Per image binarization is independent; reduce in image order.
  std::vector<std::vector<double>> per_image(images.size(), std::vector<double>(static_cast<std::size_t>(num_classes), 0.0));
  parallel_for(images.size(), [&](std::size_t i) {
    const auto& maps = images[i];
    std::vector<std::vector<bool>> masks(maps.size());
    for (std::size_t j = 0; j < maps.size(); ++j)
      if (j < protos.count() && protos.active[j]) masks[j] = binarize_top(maps[j], percentile);
    for (int c = 0; c < num_classes; ++c) {
      const auto ids = protos.of_class(c);
      for (std::size_t a = 0; a < ids.size(); ++a)
        for (std::size_t b = a + 1; b < ids.size(); ++b)
          per_image[i][static_cast<std::size_t>(c)] += mask_iou(masks[ids[a]], masks[ids[b]]);
    }
  });
  double total = 0;
  std::size_t total_n = 0;
  for (int c = 0; c < num_classes; ++c) {
    const auto k = static_cast<std::size_t>(c);
    for (const auto& img : per_image) class_sum[k] += img[k];
    class_n[k] = rep.class_pairs[k] * images.size();
    if (class_n[k] > 0) rep.class_iou[k] = class_sum[k] / static_cast<double>(class_n[k]);
    total += class_sum[k];
    total_n += class_n[k];
  }
  if (total_n == 0) throw std::invalid_argument("prototype_overlap: no class has two active prototypes");
  rep.mean_iou = total / static_cast<double>(total_n);
  return rep;
}

OverlapReport prototype_overlap(const model::ProtoSegModel& model, const data::Dataset& data,
                                double percentile) {
  std::vector<ImageMaps> images(data.samples.size());
  parallel_for(data.samples.size(), [&](std::size_t i) {
    images[i] = maps_of(model, infer(model, data.samples[i]));
  });
  return overlap_from_maps(images, model.prototypes, model.num_classes, percentile);
}

Utilization utilization_histogram(const model::ProtoSegModel& model, const data::Dataset& data) {
  const std::size_t count = model.prototypes.count();
  std::vector<std::vector<std::uint64_t>> per_image(data.samples.size());
  parallel_for(data.samples.size(), [&](std::size_t i) {
    const auto& s = data.samples[i];
    const auto r = infer(model, s);
    const auto labels_d = data::downsample_labels(s.labels, s.height, s.width, r.feat_h, r.feat_w);
    per_image[i].assign(count, 0);
    for (const auto j : model::assign_prototypes(r.head.activations, labels_d, model.prototypes))
      if (j != model::kNoPrototype) ++per_image[i][static_cast<std::size_t>(j)];
  });
  std::vector<std::uint64_t> counts(count, 0);
  for (const auto& img : per_image)
    for (std::size_t j = 0; j < count; ++j) counts[j] += img[j];

  Utilization u;
  double sum = 0;
  std::size_t used = 0;
  for (int c = 0; c < model.num_classes; ++c) {
    ClassUtilization cu;
    cu.prototypes = model.prototypes.of_class(c);
    std::uint64_t points = 0;
    for (const auto j : cu.prototypes) {
      cu.counts.push_back(counts[j]);
      points += counts[j];
    }
    cu.entropy = normalized_entropy(cu.counts);
    if (points > 0) {
      sum += cu.entropy;
      ++used;
    }
    u.classes.push_back(std::move(cu));
  }
  u.mean_entropy = used ? sum / static_cast<double>(used) : 0.0;
  return u;
}

const std::array<std::array<std::uint8_t, 3>, 20>& assignment_palette() {
  // Kelly-style high-contrast colours.
  static const std::array<std::array<std::uint8_t, 3>, 20> table = {{
      {230, 25, 75},   {60, 180, 75},   {255, 225, 25}, {0, 130, 200},   {245, 130, 48},
      {145, 30, 180},  {70, 240, 240},  {240, 50, 230}, {210, 245, 60},  {250, 190, 212},
      {0, 128, 128},   {220, 190, 255}, {170, 110, 40}, {255, 250, 200}, {128, 0, 0},
      {170, 255, 195}, {128, 128, 0},   {255, 215, 180}, {0, 0, 128},    {128, 128, 128},
  }};
  return table;
}

std::array<std::uint8_t, 3> class_color(int c) {
  if (c < 0 || c == data::kIgnore) return {0, 0, 0};
  return assignment_palette()[static_cast<std::size_t>(c) % 20];
}

ExportResult export_explanations(const model::ProtoSegModel& model, const data::SegSample& sample,
                                 const std::filesystem::path& out_dir, const std::string& id,
                                 std::optional<std::size_t> only) {
  const std::size_t count = model.prototypes.count();
  if (only && (*only >= count || !model.prototypes.active[*only])) {
    std::string valid;
    for (std::size_t j = 0; j < count; ++j)
      if (model.prototypes.active[j]) valid += (valid.empty() ? "" : ", ") + std::to_string(j);
    throw std::out_of_range("prototype " + std::to_string(*only) + " is not active; valid ids: " + valid);
  }
  std::filesystem::create_directories(out_dir);
  const std::size_t h = sample.height, w = sample.width;
  const auto r = infer(model, sample);
  const std::size_t fh = r.feat_h, fw = r.feat_w;
  ExportResult res;

  // (a) prediction
  const auto pred = model::argmax_upsampled(r.head.logits, fh, fw, h, w);
  std::vector<std::uint8_t> rgb(h * w * 3);
  for (std::size_t i = 0; i < h * w; ++i) {
    const auto col = class_color(pred[i]);
    std::copy(col.begin(), col.end(), rgb.begin() + static_cast<std::ptrdiff_t>(i * 3));
  }
  res.files.push_back(out_dir / (id + "_prediction.ppm"));
  data::write_ppm(res.files.back(), h, w, rgb);

  // (b) activation maps, min-max normalized per map
  const auto maps = maps_of(model, r);
  for (std::size_t j = 0; j < count; ++j) {
    if (!model.prototypes.active[j] || (only && *only != j)) continue;
    const num::Tensor up = num::bilinear_upsample(num::Tensor({1, fh, fw}, maps[j]), h, w);
    const auto v = up.data();
    const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    const double range = *hi - *lo;
    std::vector<std::uint8_t> gray(v.size(), 0);
    if (range > 0)
      for (std::size_t i = 0; i < v.size(); ++i)
        gray[i] = static_cast<std::uint8_t>(std::lround((v[i] - *lo) / range * 255.0));
    res.files.push_back(out_dir / (id + "_proto" + std::to_string(j) + ".pgm"));
    data::write_pgm(res.files.back(), h, w, gray);
  }

  // (c) assignment: most activated prototype of the class predicted at each
  // feature point, shown at image resolution by nearest cell.
  const auto act = r.head.activations.data();
  const auto logits = r.head.logits.data();
  const auto c_count = static_cast<std::size_t>(model.num_classes);
  std::vector<std::int32_t> assign(fh * fw, model::kNoPrototype);
  std::vector<std::vector<std::size_t>> by_class(c_count);
  for (std::size_t c = 0; c < c_count; ++c) by_class[c] = model.prototypes.of_class(static_cast<int>(c));
  for (std::size_t i = 0; i < fh * fw; ++i) {
    std::size_t cls = 0;
    for (std::size_t c = 1; c < c_count; ++c)
      if (logits[i * c_count + c] > logits[i * c_count + cls]) cls = c;
    const auto& cands = by_class[cls];
    if (cands.empty()) continue;
    std::size_t best = cands[0];
    for (auto j : cands)
      if (act[i * count + j] > act[i * count + best]) best = j;
    assign[i] = static_cast<std::int32_t>(best);
  }
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const auto j = assign[(y * fh / h) * fw + x * fw / w];
      std::array<std::uint8_t, 3> col{0, 0, 0};
      if (j != model::kNoPrototype) col = assignment_palette()[static_cast<std::size_t>(j) % 20];
      std::copy(col.begin(), col.end(), rgb.begin() + static_cast<std::ptrdiff_t>((y * w + x) * 3));
    }
  }
  res.files.push_back(out_dir / (id + "_assignment.ppm"));
  data::write_ppm(res.files.back(), h, w, rgb);

  // (d) manifest
  res.files.push_back(out_dir / (id + "_manifest.txt"));
  std::ofstream os(res.files.back());
  if (!os) throw std::runtime_error("cannot write " + res.files.back().string());
  os << "image " << id << "\n";
  res.provenance_written = model.projected();
  if (!res.provenance_written) os << "warning: model is not projected; provenance omitted\n";
  os << "# prototype class color_r color_g color_b [train_image row col]\n";
  for (std::size_t j = 0; j < count; ++j) {
    if (!model.prototypes.active[j]) continue;
    const auto col = assignment_palette()[j % 20];
    os << "prototype " << j << ' ' << model.prototypes.class_of[j] << ' ' << int(col[0]) << ' '
       << int(col[1]) << ' ' << int(col[2]);
    if (res.provenance_written && model.provenance[j]) {
      const auto& p = *model.provenance[j];
      os << ' ' << data::sample_id(static_cast<std::size_t>(p[0])) << ' ' << p[1] << ' ' << p[2];
    }
    os << '\n';
  }
  if (!os) throw std::runtime_error("failed writing " + res.files.back().string());
  return res;
}

std::vector<MetricRow> evaluate_metrics(const model::ProtoSegModel& model, const data::Dataset& data,
                                        double percentile) {
  std::vector<ConfusionAccumulator> parts(data.samples.size(), ConfusionAccumulator(model.num_classes));
  parallel_for(data.samples.size(), [&](std::size_t i) {
    parts[i].add(data.samples[i].labels, model::predict_segmentation(model, data.samples[i]));
  });
  ConfusionAccumulator acc(model.num_classes);
  for (const auto& p : parts) acc.merge(p);

  std::vector<MetricRow> rows;
  const auto m = miou(acc);
  rows.push_back({"miou", "all", m.miou});
  for (std::size_t c = 0; c < m.per_class.size(); ++c)
    if (m.per_class[c] >= 0) rows.push_back({"iou", std::to_string(c), m.per_class[c]});
  rows.push_back({"pixel_error", "all", pixel_error(acc).value});

  bool has_pair = false;
  for (int c = 0; c < model.num_classes; ++c) has_pair |= model.prototypes.of_class(c).size() >= 2;
  if (has_pair) {
    const auto ov = prototype_overlap(model, data, percentile);
    rows.push_back({"overlap", "all", ov.mean_iou});
    for (std::size_t c = 0; c < ov.class_iou.size(); ++c)
      if (ov.class_iou[c] >= 0) rows.push_back({"overlap", std::to_string(c), ov.class_iou[c]});
  }
  const auto u = utilization_histogram(model, data);
  rows.push_back({"utilization_entropy", "all", u.mean_entropy});
  for (std::size_t c = 0; c < u.classes.size(); ++c)
    rows.push_back({"utilization_entropy", std::to_string(c), u.classes[c].entropy});
  rows.push_back({"active_prototypes", "all", static_cast<double>(model.prototypes.active_count())});
  return rows;
}

void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricRow>& rows) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "metric,class,value\n";
  for (const auto& r : rows) os << r.metric << ',' << r.cls << ',' << num_str(r.value) << '\n';
  if (!os) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace protoseg::explain
