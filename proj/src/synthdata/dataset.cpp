#include "protoseg/synthdata/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace protoseg::data {

namespace {

constexpr double kPi = 3.14159265358979323846;
// Radius of the figure's bounding circle in units of its half-height.
constexpr double kFigureRadius = 1.02;

using Rgb = std::array<double, 3>;

Rgb hsv(double hue_deg, double s, double v) {
  hue_deg = std::fmod(std::fmod(hue_deg, 360.0) + 360.0, 360.0);
  const double c = v * s;
  const double hp = hue_deg / 60.0;
  const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  Rgb rgb{0, 0, 0};
  if (hp < 1) rgb = {c, x, 0};
  else if (hp < 2) rgb = {x, c, 0};
  else if (hp < 3) rgb = {0, c, x};
  else if (hp < 4) rgb = {0, x, c};
  else if (hp < 5) rgb = {x, 0, c};
  else rgb = {c, 0, x};
  const double m = v - c;
  return {rgb[0] + m, rgb[1] + m, rgb[2] + m};
}

struct Palette {
  Rgb head;
  Rgb stripe_light, stripe_dark;
  Rgb check_light, check_dark;
};

Palette class_palette(int cls, int num_classes) {
  const int fg = std::max(1, num_classes - 1);
  const double hue = 360.0 * static_cast<double>(cls - 1) / fg;
  return {hsv(hue, 0.9, 0.95), hsv(hue + 25, 0.8, 0.85), hsv(hue + 25, 0.8, 0.4),
          hsv(hue - 25, 0.55, 0.95), hsv(hue - 25, 0.9, 0.35)};
}

enum class Part { none, head, body, base };

// Canonical figure in local units: v points down, the figure spans about
// [-1, 1] vertically.
Part figure_part(double u, double v) {
  const double hv = v + 0.62;
  if (u * u + hv * hv <= 0.36 * 0.36) return Part::head;
  if (std::abs(u) <= 0.62 && v > 0.45 && v <= 0.8) return Part::base;
  if (std::abs(u) <= 0.32 && v >= -0.3 && v <= 0.45) return Part::body;
  return Part::none;
}

Rgb part_color(const Palette& pal, Part part, double u, double v) {
  switch (part) {
    case Part::head: return pal.head;
    case Part::body: {
      const bool light = static_cast<long>(std::floor((v + 1.0) / 0.15)) % 2 == 0;
      return light ? pal.stripe_light : pal.stripe_dark;
    }
    case Part::base: {
      const long a = static_cast<long>(std::floor((u + 2.0) / 0.2));
      const long b = static_cast<long>(std::floor((v + 2.0) / 0.2));
      return (a + b) % 2 == 0 ? pal.check_light : pal.check_dark;
    }
    default: return {0, 0, 0};
  }
}

std::uint64_t split_key(Split split) { return split == Split::train ? 0x7472u : 0x76616cu; }

}  // namespace

void DatasetSpec::validate() const {
  if (num_classes < 2) throw std::invalid_argument("DatasetSpec: num_classes must be >= 2");
  if (num_classes >= kIgnore) throw std::invalid_argument("DatasetSpec: too many classes");
  if (height < 32 || width < 32) throw std::invalid_argument("DatasetSpec: height and width must be >= 32");
  if (min_figures < 1 || max_figures < min_figures) {
    throw std::invalid_argument("DatasetSpec: need 1 <= min_figures <= max_figures");
  }
  if (!(min_figure_scale > 0) || max_figure_scale < min_figure_scale) {
    throw std::invalid_argument("DatasetSpec: need 0 < min_figure_scale <= max_figure_scale");
  }
  if (2.0 * kFigureRadius * min_figure_scale + 2.0 > static_cast<double>(std::min(height, width))) {
    throw std::invalid_argument("DatasetSpec: figure does not fit in the image at minimum scale");
  }
}

const char* split_name(Split split) { return split == Split::train ? "train" : "val"; }

SegSample generate_sample(const DatasetSpec& spec, Split split, std::size_t index) {
  spec.validate();
  Rng rng(derive_seed(spec.seed, {split_key(split), index}));
  const std::size_t h = spec.height, w = spec.width;
  SegSample s(h, w);

  // Background: desaturated base colour, two low-frequency waves, pixel noise.
  const Rgb base = hsv(rng.uniform(0, 360), rng.uniform(0.05, 0.2), rng.uniform(0.4, 0.7));
  std::array<double, 4> wave{};
  for (auto& p : wave) p = rng.uniform(0, 2 * kPi);
  const double fx = rng.uniform(0.05, 0.2), fy = rng.uniform(0.05, 0.2);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double shade = 0.08 * std::sin(fx * x + wave[0]) * std::cos(fy * y + wave[1]) +
                           0.05 * std::sin(0.35 * (x + y) + wave[2]);
      for (std::size_t c = 0; c < 3; ++c) s.rgb(y, x, c) = base[c] + shade;
      s.label(y, x) = 0;
    }
  }

  const auto n_fig = spec.min_figures + static_cast<int>(rng.below(
                                            static_cast<std::uint64_t>(spec.max_figures - spec.min_figures + 1)));
  for (int f = 0; f < n_fig; ++f) {
    const int cls = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.num_classes - 1)));
    const Palette pal = class_palette(cls, spec.num_classes);
    double scale = rng.uniform(spec.min_figure_scale, spec.max_figure_scale);
    const double limit = (static_cast<double>(std::min(h, w)) - 2.0) / (2.0 * kFigureRadius);
    scale = std::min(scale, limit);
    const double radius = kFigureRadius * scale;
    const double cx = rng.uniform(radius, static_cast<double>(w) - radius);
    const double cy = rng.uniform(radius, static_cast<double>(h) - radius);
    const double angle = rng.uniform(-kPi / 3, kPi / 3);
    const double ca = std::cos(angle), sa = std::sin(angle);
    const auto y0 = static_cast<std::size_t>(std::max(0.0, std::floor(cy - radius)));
    const auto y1 = std::min(h, static_cast<std::size_t>(std::ceil(cy + radius)) + 1);
    const auto x0 = static_cast<std::size_t>(std::max(0.0, std::floor(cx - radius)));
    const auto x1 = std::min(w, static_cast<std::size_t>(std::ceil(cx + radius)) + 1);
    for (std::size_t y = y0; y < y1; ++y) {
      for (std::size_t x = x0; x < x1; ++x) {
        const double dx = (static_cast<double>(x) + 0.5 - cx) / scale;
        const double dy = (static_cast<double>(y) + 0.5 - cy) / scale;
        // Inverse rotation into the figure frame.
        const double u = ca * dx + sa * dy;
        const double v = -sa * dx + ca * dy;
        const Part part = figure_part(u, v);
        if (part == Part::none) continue;
        const Rgb col = part_color(pal, part, u, v);
        for (std::size_t c = 0; c < 3; ++c) s.rgb(y, x, c) = col[c];
        s.label(y, x) = static_cast<std::uint8_t>(cls);
      }
    }
  }

  for (auto& v : s.image) v = std::clamp(v + 0.03 * rng.normal(), 0.0, 1.0);
  return s;
}

Dataset generate_split(const DatasetSpec& spec, Split split) {
  spec.validate();
  const std::size_t n = split == Split::train ? spec.train_samples : spec.val_samples;
  Dataset d;
  d.samples.reserve(n);
  for (std::size_t i = 0; i < n; ++i) d.samples.push_back(generate_sample(spec, split, i));
  return d;
}

std::string sample_id(std::size_t index) {
  std::ostringstream os;
  os << std::setw(5) << std::setfill('0') << index;
  return os.str();
}

void save_split(const Dataset& data, const std::filesystem::path& root, Split split) {
  const auto dir = root / split_name(split);
  std::filesystem::create_directories(dir);
  std::ofstream index(dir / "index.txt");
  if (!index) throw std::runtime_error("cannot write " + (dir / "index.txt").string());
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    const auto id = sample_id(i);
    save_sample(data.samples[i], dir / ("img_" + id + ".ppm"), dir / ("lbl_" + id + ".pgm"));
    index << id << '\n';
  }
}

Dataset load_split(const std::filesystem::path& root, Split split) {
  const auto dir = root / split_name(split);
  std::ifstream index(dir / "index.txt");
  if (!index) throw std::runtime_error("missing " + (dir / "index.txt").string());
  Dataset d;
  std::string id;
  while (index >> id) {
    d.samples.push_back(load_sample(dir / ("img_" + id + ".ppm"), dir / ("lbl_" + id + ".pgm")));
  }
  return d;
}

}  // namespace protoseg::data
