#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "protoseg/synthdata/rng.hpp"
#include "protoseg/synthdata/sample.hpp"

namespace protoseg::data {

struct DatasetSpec {
  int num_classes = 4;  // including background class 0
  std::size_t train_samples = 300;
  std::size_t val_samples = 60;
  std::size_t height = 64;
  std::size_t width = 64;
  int min_figures = 1;
  int max_figures = 3;
  // Half-height of a figure in pixels.
  double min_figure_scale = 9.0;
  double max_figure_scale = 15.0;
  std::uint64_t seed = 1;

  void validate() const;
};

enum class Split { train, val };
const char* split_name(Split split);

struct Dataset {
  std::vector<SegSample> samples;
};

/// One sample as a pure function of (spec, split, index).
///
/// Every foreground class is drawn as a three-part figure (head, body,
/// base) whose parts carry different colours and textures, placed at a
/// random position, scale and rotation over a textured class-0 background.
SegSample generate_sample(const DatasetSpec& spec, Split split, std::size_t index);

Dataset generate_split(const DatasetSpec& spec, Split split);

/// Writes `<root>/<split>/img_<id>.ppm`, `lbl_<id>.pgm` and `index.txt`.
void save_split(const Dataset& data, const std::filesystem::path& root, Split split);
Dataset load_split(const std::filesystem::path& root, Split split);

std::string sample_id(std::size_t index);

}  // namespace protoseg::data
