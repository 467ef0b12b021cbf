#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "protoseg/segmodel/model.hpp"
#include "protoseg/synthdata/dataset.hpp"
#include "protoseg/trainer/pipeline.hpp"

namespace protoseg::config {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Everything a run needs. `seed` drives model init and training; the
/// dataset has its own `data.seed` so runs can share one dataset.
struct RunConfig {
  data::DatasetSpec data;
  model::BackboneConfig backbone;
  train::TrainConfig train;
  std::size_t prototypes_per_class = 10;
  std::string out_dir = "protoseg_run";
  std::uint64_t seed = 7;
  double overlap_percentile = 95;

  void validate() const;
};

struct KeyDoc {
  std::string key;
  std::string default_value;
  std::string help;
};

/// Every accepted key with its default and a one-line description.
std::vector<KeyDoc> documented_keys();

/// Sets one key; throws ConfigError naming the key when unknown or malformed.
void set_value(RunConfig& cfg, const std::string& key, const std::string& value);
std::string get_value(const RunConfig& cfg, const std::string& key);

/// key = value lines, '#' starts a comment, blank lines ignored.
void apply_text(RunConfig& cfg, const std::string& text, const std::string& origin = "<config>");
RunConfig load_config(const std::filesystem::path& path);

/// Fully resolved config in the same format load_config accepts.
std::string render(const RunConfig& cfg);

}  // namespace protoseg::config
