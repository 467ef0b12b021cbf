#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "protoseg/segmodel/model.hpp"
#include "protoseg/synthdata/dataset.hpp"

namespace protoseg::explain {

struct OverlapReport {
  double percentile = 95;
  double mean_iou = 0;               // pooled over every (pair, image)
  std::size_t pairs = 0;             // same-class active prototype pairs
  std::vector<double> class_iou;     // per class; negative when the class has no pair
  std::vector<std::size_t> class_pairs;
};

/// Activation maps of one image: maps[j] holds prototype j's values at
/// feature resolution (empty for inactive prototypes).
using ImageMaps = std::vector<std::vector<double>>;

/// Overlap from precomputed maps. Each map is binarized at its own
/// percentile; IoUs of every same-class pair on every image are averaged.
OverlapReport overlap_from_maps(const std::vector<ImageMaps>& images, const model::PrototypeSet& protos,
                                int num_classes, double percentile = 95);

/// Overlap of the model's prototypes on `data`, measured at feature
/// resolution.
OverlapReport prototype_overlap(const model::ProtoSegModel& model, const data::Dataset& data,
                                double percentile = 95);

struct ClassUtilization {
  std::vector<std::size_t> prototypes;  // active prototype ids of the class
  std::vector<std::uint64_t> counts;    // aligned with `prototypes`
  double entropy = 0;                   // normalized to [0, 1]
};

struct Utilization {
  std::vector<ClassUtilization> classes;
  double mean_entropy = 0;  // over classes with at least one point
};

/// Counts feature points assigned to each prototype (highest activation
/// among the point's ground-truth class).
Utilization utilization_histogram(const model::ProtoSegModel& model, const data::Dataset& data);

/// Fixed 20-colour table for prototype assignment maps (index mod 20).
const std::array<std::array<std::uint8_t, 3>, 20>& assignment_palette();
/// Colour of class c in predicted segmentations; ignore is black.
std::array<std::uint8_t, 3> class_color(int c);

struct ExportResult {
  std::vector<std::filesystem::path> files;
  bool provenance_written = false;
};

/// Writes the explanation bundle of one image into `out_dir`:
///   <id>_prediction.ppm, <id>_proto<j>.pgm per prototype, <id>_assignment.ppm
///   and <id>_manifest.txt. `only` restricts the activation maps to one
///   prototype. Provenance is omitted (with a manifest warning) when the
///   model was never projected.
ExportResult export_explanations(const model::ProtoSegModel& model, const data::SegSample& sample,
                                 const std::filesystem::path& out_dir, const std::string& id,
                                 std::optional<std::size_t> only = std::nullopt);

struct MetricRow {
  std::string metric;
  std::string cls;  // class id or "all"
  double value = 0;
};

/// Full evaluation of a model on a split as CSV rows `metric,class,value`.
std::vector<MetricRow> evaluate_metrics(const model::ProtoSegModel& model, const data::Dataset& data,
                                        double percentile = 95);
void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricRow>& rows);

}  // namespace protoseg::explain
