#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <algorithm>
#include <fstream>

#include "protoseg/numcore/ops.hpp"
#include "protoseg/trainer/optimizer.hpp"
#include "protoseg/trainer/pipeline.hpp"

using namespace protoseg;
using namespace protoseg::train;
namespace fs = std::filesystem;

namespace {

struct Fixture {
  data::Dataset train;
  data::Dataset val;
  model::BackboneConfig bb;
  TrainConfig cfg;
};

Fixture tiny() {
  Fixture f;
  data::DatasetSpec spec;
  spec.height = 32;
  spec.width = 32;
  spec.min_figure_scale = 5;
  spec.max_figure_scale = 7;
  spec.train_samples = 6;
  spec.val_samples = 2;
  f.train = data::generate_split(spec, data::Split::train);
  f.val = data::generate_split(spec, data::Split::val);
  f.bb.widths = {4, 6, 8};
  f.bb.out_dim = 4;
  f.cfg.warmup_steps = 3;
  f.cfg.joint_steps = 3;
  f.cfg.tune1_steps = 2;
  f.cfg.tune2_steps = 2;
  f.cfg.batch_size = 2;
  f.cfg.loss_eval_samples = 2;
  return f;
}

std::vector<double> copy_of(const num::Tensor& t) { return {t.data().begin(), t.data().end()}; }

std::vector<std::vector<double>> snapshot(const std::vector<model::NamedParam>& ps) {
  std::vector<std::vector<double>> out;
  for (const auto& p : ps) out.push_back(copy_of(p.value));
  return out;
}

std::vector<char> bytes_of(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

}  // namespace

TEST(Adam, FirstStepMovesByLearningRate) {
  // bias-corrected first step is -lr * g / (|g| + eps')
  num::Tensor w({3}, {1.0, -2.0, 0.5}, true);
  num::backward(num::sum(num::mul(w, num::Tensor({3}, {3.0, -0.5, 2.0}))));
  AdamState st;
  std::vector<num::Tensor> params{w};
  adam_step(params, st, AdamConfig{}, 0.1, 0.0);
  EXPECT_NEAR(w[0], 1.0 - 0.1, 1e-7);
  EXPECT_NEAR(w[1], -2.0 + 0.1, 1e-7);
  EXPECT_NEAR(w[2], 0.5 - 0.1, 1e-7);
  EXPECT_EQ(st.t, 1);
}

TEST(Adam, WeightDecayAddsToGradient) {
  num::Tensor w({1}, {2.0}, true);  // no gradient: only decay acts
  AdamState st;
  std::vector<num::Tensor> params{w};
  adam_step(params, st, AdamConfig{}, 0.01, 0.5);
  EXPECT_NEAR(w[0], 2.0 - 0.01, 1e-9);
}

TEST(Adam, NonFiniteGradientLeavesParamsUntouched) {
  num::Tensor w({1}, {1.0}, true);
  w.node()->grad = {std::nan("")};
  AdamState st;
  std::vector<num::Tensor> params{w};
  EXPECT_THROW(adam_step(params, st, AdamConfig{}, 0.1, 0.0), NonFiniteGradient);
  EXPECT_EQ(w[0], 1.0);
  EXPECT_EQ(st.t, 0);
}

TEST(PolyLr, Oracles) {
  EXPECT_DOUBLE_EQ(poly_lr(1.0, 0, 10, 0.9), 1.0);
  EXPECT_NEAR(poly_lr(1.0, 5, 10, 0.9), std::pow(0.5, 0.9), 1e-15);  // 0.5359
  EXPECT_NEAR(poly_lr(1.0, 5, 10, 0.9), 0.5359, 1e-4);
  EXPECT_DOUBLE_EQ(poly_lr(1.0, 10, 10, 0.9), 0.0);
}

TEST(Stages, NamesRoundTrip) {
  for (int s = 0; s < kStageCount; ++s) EXPECT_EQ(parse_stage(stage_name(static_cast<Stage>(s))), static_cast<Stage>(s));
  EXPECT_THROW(parse_stage("finetune"), std::invalid_argument);
}

TEST(Stages, OutOfOrderRejected) {
  auto f = tiny();
  auto st = initial_state(f.bb, 4, 2, f.cfg);
  EXPECT_THROW(run_stage(Stage::joint, f.train, st, f.cfg), std::logic_error);
  EXPECT_THROW(project_prototypes(f.train, st), std::logic_error);
}

TEST(Stages, FreezingLeavesFrozenBuffersBitwise) {
  auto f = tiny();
  auto st = initial_state(f.bb, 4, 2, f.cfg);
  auto core0 = snapshot(st.model.backbone.core());
  auto proj0 = snapshot(st.model.backbone.projection());
  auto wh0 = copy_of(st.model.last_layer.weights);
  auto p0 = copy_of(st.model.prototypes.vectors);
  run_stage(Stage::warmup, f.train, st, f.cfg);
  EXPECT_EQ(snapshot(st.model.backbone.core()), core0);
  EXPECT_EQ(copy_of(st.model.last_layer.weights), wh0);
  EXPECT_NE(snapshot(st.model.backbone.projection()), proj0);
  EXPECT_NE(copy_of(st.model.prototypes.vectors), p0);

  run_stage(Stage::joint, f.train, st, f.cfg);
  EXPECT_EQ(copy_of(st.model.last_layer.weights), wh0);
  EXPECT_NE(snapshot(st.model.backbone.core()), core0);

  project_prototypes(f.train, st);
  auto core1 = snapshot(st.model.backbone.core());
  auto proj1 = snapshot(st.model.backbone.projection());
  auto p1 = copy_of(st.model.prototypes.vectors);
  run_stage(Stage::tune1, f.train, st, f.cfg);
  EXPECT_EQ(snapshot(st.model.backbone.core()), core1);
  EXPECT_EQ(snapshot(st.model.backbone.projection()), proj1);
  EXPECT_EQ(copy_of(st.model.prototypes.vectors), p1);
  EXPECT_NE(copy_of(st.model.last_layer.weights), wh0);
}

TEST(Projection, PrototypesBecomeTrainingPoints) {
  auto f = tiny();
  auto st = initial_state(f.bb, 4, 3, f.cfg);
  run_stage(Stage::warmup, f.train, st, f.cfg);
  run_stage(Stage::joint, f.train, st, f.cfg);
  const auto res = project_prototypes(f.train, st);
  const auto bank = compute_feature_bank(st.model, f.train);
  const auto& protos = st.model.prototypes;
  const std::size_t d = protos.dim();
  std::size_t active = 0;
  for (std::size_t j = 0; j < protos.count(); ++j) {
    ASSERT_TRUE(st.model.provenance[j].has_value());
    if (!protos.active[j]) continue;
    ++active;
    const auto [img, row, col] = *st.model.provenance[j];
    const std::size_t k = static_cast<std::size_t>(row) * bank.feat_w + static_cast<std::size_t>(col);
    EXPECT_EQ(bank.labels[static_cast<std::size_t>(img)][k], protos.class_of[j]);
    for (std::size_t t = 0; t < d; ++t)
      EXPECT_EQ(protos.vectors[j * d + t], bank.features[static_cast<std::size_t>(img)][k * d + t]);
  }
  EXPECT_EQ(active + res.deactivated_duplicates, protos.count());
  EXPECT_TRUE(st.model.projected());
}

TEST(Projection, DuplicatesKeepLowestIndex) {
  auto f = tiny();
  auto st = initial_state(f.bb, 4, 2, f.cfg);
  st.completed = static_cast<int>(Stage::joint);
  // make prototypes 0 and 1 (both class 0) identical so they project onto the same point
  auto v = st.model.prototypes.vectors.mutable_data();
  for (std::size_t t = 0; t < st.model.prototypes.dim(); ++t) v[st.model.prototypes.dim() + t] = v[t];
  const auto res = project_prototypes(f.train, st);
  EXPECT_GE(res.deactivated_duplicates, 1u);
  EXPECT_TRUE(st.model.prototypes.active[0]);
  EXPECT_FALSE(st.model.prototypes.active[1]);
  for (int c = 0; c < 4; ++c) EXPECT_EQ(st.model.last_layer.weights[1 * 4 + static_cast<std::size_t>(c)], 0.0);
}

TEST(Pruning, PurityRule) {
  auto f = tiny();
  auto st = initial_state(f.bb, 4, 2, f.cfg);
  st.completed = static_cast<int>(Stage::tune1);
  // place prototype 2 (class 1) exactly on a background point: its neighbours are background
  const auto bank = compute_feature_bank(st.model, f.train);
  std::size_t k = 0;
  while (bank.labels[0][k] != 0) ++k;
  const std::size_t d = st.model.prototypes.dim();
  auto v = st.model.prototypes.vectors.mutable_data();
  for (std::size_t t = 0; t < d; ++t) {
    v[2 * d + t] = bank.features[0][k * d + t];
    v[0 * d + t] = bank.features[0][k * d + t];  // class 0 twin survives
  }
  const auto res = prune_prototypes(f.train, st, 6, 3);
  EXPECT_FALSE(st.model.prototypes.active[2]);
  EXPECT_TRUE(st.model.prototypes.active[0]);
  EXPECT_NE(std::find(res.pruned.begin(), res.pruned.end(), 2u), res.pruned.end());
  auto st2 = initial_state(f.bb, 4, 2, f.cfg);
  st2.completed = static_cast<int>(Stage::tune1);
  EXPECT_THROW(prune_prototypes(f.train, st2, 1000000, 3), std::invalid_argument);
}

TEST(Pipeline, ReportAndCheckpointsAndResumeDeterminism) {
  auto f = tiny();
  const auto dir = fs::temp_directory_path() / "protoseg_pipeline_test";
  fs::remove_all(dir);
  PipelineOptions opts;
  opts.checkpoint_dir = dir / "full";
  const auto full = run_pipeline(f.train, f.val, initial_state(f.bb, 4, 2, f.cfg), f.cfg, opts);
  ASSERT_EQ(full.report.size(), 6u);
  for (std::size_t i = 1; i < full.report.size(); ++i)
    EXPECT_LE(full.report[i].active_prototypes, full.report[i - 1].active_prototypes);
  for (int s = 0; s < kStageCount; ++s) EXPECT_TRUE(fs::exists(checkpoint_path(dir / "full", static_cast<Stage>(s))));

  // interrupted after projection, resumed from its checkpoint
  auto resumed_state = load_state(checkpoint_path(dir / "full", Stage::projection));
  EXPECT_EQ(resumed_state.completed, static_cast<int>(Stage::projection));
  PipelineOptions opts2;
  opts2.checkpoint_dir = dir / "resumed";
  const auto resumed = run_pipeline(f.train, f.val, std::move(resumed_state), f.cfg, opts2);
  ASSERT_EQ(resumed.report.size(), 3u);
  EXPECT_EQ(bytes_of(checkpoint_path(dir / "full", Stage::tune2)),
            bytes_of(checkpoint_path(dir / "resumed", Stage::tune2)));

  write_report_csv(dir / "report.csv", full.report);
  const auto back = read_report_csv(dir / "report.csv");
  ASSERT_EQ(back.size(), 6u);
  EXPECT_EQ(back[2].stage, "projection");
  EXPECT_EQ(back[5].val_miou, full.report[5].val_miou);
  EXPECT_EQ(back[5].train_loss, full.report[5].train_loss);
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  c.joint_steps = -1;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = TrainConfig{};
  c.adam.beta1 = 1.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = TrainConfig{};
  c.tune_lr = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}
