#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "protoseg/protoloss/losses.hpp"
#include "protoseg/segmodel/checkpoint.hpp"
#include "protoseg/segmodel/model.hpp"
#include "protoseg/synthdata/dataset.hpp"
#include "protoseg/trainer/optimizer.hpp"

namespace protoseg::train {

enum class Stage { warmup = 0, joint, projection, tune1, pruning, tune2 };
inline constexpr int kStageCount = 6;

const char* stage_name(Stage s);
Stage parse_stage(const std::string& name);

struct TrainConfig {
  std::int64_t warmup_steps = 1500;
  std::int64_t joint_steps = 3000;
  std::int64_t tune1_steps = 500;
  std::int64_t tune2_steps = 500;
  double warmup_lr = 2.5e-3;
  double joint_backbone_lr = 1e-3;
  double joint_head_lr = 2.5e-3;
  double tune_lr = 1e-4;
  AdamConfig adam;
  double weight_decay = 5e-4;
  std::size_t batch_size = 4;
  double poly_power = 0.9;
  std::size_t prune_k_nn = 6;
  std::size_t prune_purity_threshold = 3;
  // Training images scored for the train_loss column of the stage report.
  std::size_t loss_eval_samples = 16;
  std::uint64_t seed = 7;
  loss::LossConfig loss;

  void validate() const;
};

struct TrainState {
  model::ProtoSegModel model;
  // Index of the last completed stage, -1 before warmup.
  int completed = -1;
  std::int64_t global_step = 0;
};

struct StageReport {
  std::string stage;
  std::size_t active_prototypes = 0;
  double val_miou = 0;
  double train_loss = 0;
};

/// Callback for progress lines; may be empty.
using LogFn = std::function<void(const std::string&)>;

/// Backbone features of every sample at feature resolution.
struct FeatureBank {
  std::size_t dim = 0;
  std::size_t feat_h = 0;
  std::size_t feat_w = 0;
  std::vector<std::vector<double>> features;       // per image, N x D row-major
  std::vector<std::vector<std::uint8_t>> labels;   // per image, N downsampled labels
};

FeatureBank compute_feature_bank(const model::ProtoSegModel& model, const data::Dataset& data);

/// Gradient-based stages (warmup, joint, tune1, tune2). Enforces pipeline
/// order and sets exactly the stage's trainable parameters.
void run_stage(Stage stage, const data::Dataset& train, TrainState& state, const TrainConfig& cfg,
               const LogFn& log = {});

struct ProjectionResult {
  std::size_t deactivated_duplicates = 0;
};

/// Replaces every active prototype with its nearest same-class training
/// feature point and deactivates prototypes landing on an already taken
/// point (the lower index keeps it).
ProjectionResult project_prototypes(const data::Dataset& train, TrainState& state);

struct PruneResult {
  std::vector<std::size_t> pruned;
};

/// Deactivates prototypes with fewer than `purity_threshold` same-class
/// labels among their `k_nn` nearest training feature points.
PruneResult prune_prototypes(const data::Dataset& train, TrainState& state, std::size_t k_nn,
                             std::size_t purity_threshold);

/// Mean IoU of predictions on `data`.
double evaluate_miou(const model::ProtoSegModel& model, const data::Dataset& data);

/// Stage objective (Eq. 7 style joint loss, plus the L1 term after tuning
/// has started) averaged over the first `samples` images, unaugmented.
double evaluate_loss(const model::ProtoSegModel& model, const data::Dataset& data, std::size_t samples,
                     const loss::LossConfig& cfg, bool with_l1);

struct PipelineOptions {
  // Checkpoints are written here after every stage when set.
  std::optional<std::filesystem::path> checkpoint_dir;
  LogFn log;
};

struct PipelineResult {
  TrainState state;
  std::vector<StageReport> report;
};

TrainState initial_state(const model::BackboneConfig& bb, int num_classes, std::size_t per_class,
                         const TrainConfig& cfg);

/// Runs the remaining stages after `state.completed`, evaluating and
/// checkpointing after each one.
PipelineResult run_pipeline(const data::Dataset& train, const data::Dataset& val, TrainState state,
                            const TrainConfig& cfg, const PipelineOptions& opts = {});

/// Executes exactly one stage (the next one in order) with evaluation and
/// checkpointing.
StageReport run_single_stage(Stage stage, const data::Dataset& train, const data::Dataset& val,
                             TrainState& state, const TrainConfig& cfg, const PipelineOptions& opts = {});

std::filesystem::path checkpoint_path(const std::filesystem::path& dir, Stage stage);
TrainState load_state(const std::filesystem::path& checkpoint);
void save_state(const std::filesystem::path& checkpoint, const TrainState& state);

void write_report_csv(const std::filesystem::path& path, const std::vector<StageReport>& report);
std::vector<StageReport> read_report_csv(const std::filesystem::path& path);

/// Shortest round-trip decimal form, used for every number written to CSV.
std::string format_number(double v);

}  // namespace protoseg::train
