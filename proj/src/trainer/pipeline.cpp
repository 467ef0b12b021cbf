#include "protoseg/trainer/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <queue>
#include <sstream>
#include <tuple>

#include "protoseg/explain/metrics.hpp"
#include "protoseg/numcore/ops.hpp"
#include "protoseg/parallel.hpp"
#include "protoseg/synthdata/augment.hpp"

namespace protoseg::train {

namespace {

constexpr const char* kStageNames[kStageCount] = {"warmup", "joint", "projection",
                                                  "tune1", "pruning", "tune2"};

struct Group {
  std::vector<Tensor> params;
  double base_lr;
  double weight_decay;
  bool poly;
  AdamState adam;
};

std::vector<Tensor> tensors_of(const std::vector<model::NamedParam>& params) {
  std::vector<Tensor> out;
  for (const auto& p : params) out.push_back(p.value);
  return out;
}

void set_trainable(model::ProtoSegModel& m, const std::vector<Group>& groups) {
  for (auto* list : {&m.backbone.core(), &m.backbone.projection()})
    for (auto& p : *list) p.value.set_requires_grad(false);
  m.prototypes.vectors.set_requires_grad(false);
  m.last_layer.weights.set_requires_grad(false);
  for (const auto& g : groups)
    for (auto t : g.params) t.set_requires_grad(true);
}

std::vector<Group> stage_groups(Stage stage, model::ProtoSegModel& m, const TrainConfig& cfg) {
  std::vector<Group> groups;
  switch (stage) {
    case Stage::warmup:
      groups.push_back({tensors_of(m.backbone.projection()), cfg.warmup_lr, cfg.weight_decay, false, {}});
      groups.push_back({{m.prototypes.vectors}, cfg.warmup_lr, 0.0, false, {}});
      break;
    case Stage::joint:
      groups.push_back({tensors_of(m.backbone.core()), cfg.joint_backbone_lr, cfg.weight_decay, true, {}});
      groups.push_back({tensors_of(m.backbone.projection()), cfg.joint_head_lr, cfg.weight_decay, true, {}});
      groups.push_back({{m.prototypes.vectors}, cfg.joint_head_lr, 0.0, true, {}});
      break;
    case Stage::tune1:
    case Stage::tune2:
      groups.push_back({{m.last_layer.weights}, cfg.tune_lr, cfg.weight_decay, false, {}});
      break;
    default:
      throw std::logic_error(std::string("stage ") + stage_name(stage) + " has no optimizer");
  }
  return groups;
}

std::int64_t stage_steps(Stage stage, const TrainConfig& cfg) {
  switch (stage) {
    case Stage::warmup: return cfg.warmup_steps;
    case Stage::joint: return cfg.joint_steps;
    case Stage::tune1: return cfg.tune1_steps;
    case Stage::tune2: return cfg.tune2_steps;
    default: return 0;
  }
}

void require_order(const TrainState& state, Stage stage) {
  const int idx = static_cast<int>(stage);
  if (state.completed != idx - 1) {
    const std::string done = state.completed < 0 ? "none" : kStageNames[state.completed];
    throw std::logic_error(std::string("stage ") + stage_name(stage) +
                           " cannot run now: last completed stage is " + done);
  }
}

bool uses_l1(Stage stage) { return static_cast<int>(stage) >= static_cast<int>(Stage::tune1); }

}  // namespace

const char* stage_name(Stage s) { return kStageNames[static_cast<int>(s)]; }

Stage parse_stage(const std::string& name) {
  for (int i = 0; i < kStageCount; ++i)
    if (name == kStageNames[i]) return static_cast<Stage>(i);
  throw std::invalid_argument("unknown stage '" + name +
                              "' (expected warmup, joint, projection, tune1, pruning or tune2)");
}

void TrainConfig::validate() const {
  if (warmup_steps < 0 || joint_steps < 0 || tune1_steps < 0 || tune2_steps < 0) {
    throw std::invalid_argument("train: step counts must be >= 0");
  }
  if (!(warmup_lr > 0 && joint_backbone_lr > 0 && joint_head_lr > 0 && tune_lr > 0)) {
    throw std::invalid_argument("train: learning rates must be > 0");
  }
  if (!(adam.beta1 > 0 && adam.beta1 < 1 && adam.beta2 > 0 && adam.beta2 < 1)) {
    throw std::invalid_argument("train: Adam betas must lie in (0, 1)");
  }
  if (weight_decay < 0) throw std::invalid_argument("train: weight decay must be >= 0");
  if (batch_size == 0) throw std::invalid_argument("train: batch size must be >= 1");
  if (prune_k_nn == 0) throw std::invalid_argument("train: prune_k_nn must be >= 1");
  loss.validate();
}

FeatureBank compute_feature_bank(const model::ProtoSegModel& model, const data::Dataset& data) {
  FeatureBank bank;
  bank.dim = model.backbone.config().out_dim;
  bank.features.resize(data.samples.size());
  bank.labels.resize(data.samples.size());
  std::vector<std::pair<std::size_t, std::size_t>> dims(data.samples.size());
  parallel_for(data.samples.size(), [&](std::size_t i) {
    num::NoGradGuard no_grad;
    const auto& s = data.samples[i];
    const Tensor fmap = model.backbone.forward(data::to_chw(s));
    const std::size_t d = fmap.dim(0), fh = fmap.dim(1), fw = fmap.dim(2);
    const Tensor rows = num::transpose(num::reshape(fmap, {d, fh * fw}));
    bank.features[i].assign(rows.data().begin(), rows.data().end());
    bank.labels[i] = data::downsample_labels(s.labels, s.height, s.width, fh, fw);
    dims[i] = {fh, fw};
  });
  if (!dims.empty()) std::tie(bank.feat_h, bank.feat_w) = dims.front();
  return bank;
}

void run_stage(Stage stage, const data::Dataset& train, TrainState& state, const TrainConfig& cfg,
               const LogFn& log) {
  require_order(state, stage);
  if (stage == Stage::projection || stage == Stage::pruning) {
    throw std::logic_error(std::string("run_stage: ") + stage_name(stage) + " is not a gradient stage");
  }
  if (train.samples.empty()) throw std::invalid_argument("run_stage: empty training set");
  auto& m = state.model;
  auto groups = stage_groups(stage, m, cfg);
  set_trainable(m, groups);
  const std::int64_t steps = stage_steps(stage, cfg);
  const bool l1 = uses_l1(stage);
  const double inv_batch = 1.0 / static_cast<double>(cfg.batch_size);
  double running = 0;
  std::int64_t running_n = 0;

  for (std::int64_t step = 0; step < steps; ++step) {
    data::Rng rng(data::derive_seed(cfg.seed, {static_cast<std::uint64_t>(stage) + 1,
                                               static_cast<std::uint64_t>(step)}));
    for (auto& g : groups)
      for (auto& t : g.params) t.zero_grad();
    double step_loss = 0;
    for (std::size_t b = 0; b < cfg.batch_size; ++b) {
      const auto& src = train.samples[rng.below(train.samples.size())];
      const auto aug = data::augment(src, src.height, src.width, rng);
      const auto fwd = m.forward(aug);
      const auto labels_d = data::downsample_labels(aug.labels, aug.height, aug.width, fwd.feat_h, fwd.feat_w);
      const auto parts = loss::joint_loss(fwd.head, labels_d, m.prototypes, cfg.loss);
      step_loss += parts.total.item() * inv_batch;
      if (parts.total.requires_grad()) num::backward(num::scale(parts.total, inv_batch));
    }
    if (l1 && cfg.loss.lambda_l1 > 0) {
      const Tensor reg = num::scale(loss::off_class_l1(m.last_layer, m.prototypes), cfg.loss.lambda_l1);
      step_loss += reg.item();
      num::backward(reg);
    }
    for (auto& g : groups) {
      const double lr = g.poly ? poly_lr(g.base_lr, step, steps, cfg.poly_power) : g.base_lr;
      adam_step(g.params, g.adam, cfg.adam, lr, g.weight_decay);
    }
    // Masked rows stay zero: their gradient is zero but weight decay and
    // Adam state must not revive them.
    if (l1) {
      for (std::size_t j = 0; j < m.prototypes.count(); ++j)
        if (!m.prototypes.active[j]) m.deactivate(j);
    }
    ++state.global_step;
    running += step_loss;
    ++running_n;
    if (log && ((step + 1) % 100 == 0 || step + 1 == steps)) {
      std::ostringstream os;
      os << stage_name(stage) << " step " << (step + 1) << "/" << steps << " loss "
         << running / static_cast<double>(running_n);
      log(os.str());
      running = 0;
      running_n = 0;
    }
  }
  for (auto& g : groups)
    for (auto& t : g.params) t.zero_grad();
  state.completed = static_cast<int>(stage);
}

ProjectionResult project_prototypes(const data::Dataset& train, TrainState& state) {
  require_order(state, Stage::projection);
  auto& m = state.model;
  const auto bank = compute_feature_bank(m, train);
  const std::size_t d = bank.dim;
  const std::size_t count = m.prototypes.count();
  auto vectors = m.prototypes.vectors.mutable_data();

  struct Best {
    double dist = std::numeric_limits<double>::infinity();
    std::int32_t image = -1, point = -1;
  };
  std::vector<Best> best(count);
  parallel_for(count, [&](std::size_t j) {
    if (!m.prototypes.active[j]) return;
    const auto cls = static_cast<std::uint8_t>(m.prototypes.class_of[j]);
    const double* p = vectors.data() + j * d;
    Best b;
    for (std::size_t i = 0; i < bank.features.size(); ++i) {
      const auto& f = bank.features[i];
      const auto& l = bank.labels[i];
      for (std::size_t k = 0; k < l.size(); ++k) {
        if (l[k] != cls) continue;
        double acc = 0;
        for (std::size_t t = 0; t < d; ++t) {
          const double diff = f[k * d + t] - p[t];
          acc += diff * diff;
        }
        if (acc < b.dist) b = {acc, static_cast<std::int32_t>(i), static_cast<std::int32_t>(k)};
      }
    }
    best[j] = b;
  });

  ProjectionResult result;
  std::map<std::pair<std::int32_t, std::int32_t>, std::size_t> taken;
  for (std::size_t j = 0; j < count; ++j) {
    if (!m.prototypes.active[j]) continue;
    const auto& b = best[j];
    if (b.image < 0) {
      throw std::runtime_error("project_prototypes: class " + std::to_string(m.prototypes.class_of[j]) +
                               " has no labelled feature points in the training set");
    }
    const auto& f = bank.features[static_cast<std::size_t>(b.image)];
    std::copy_n(f.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(b.point) * d), d,
                vectors.begin() + static_cast<std::ptrdiff_t>(j * d));
    const auto row = static_cast<std::int32_t>(static_cast<std::size_t>(b.point) / bank.feat_w);
    const auto col = static_cast<std::int32_t>(static_cast<std::size_t>(b.point) % bank.feat_w);
    m.provenance[j] = std::array<std::int32_t, 3>{b.image, row, col};
    if (!taken.emplace(std::make_pair(b.image, b.point), j).second) {
      m.deactivate(j);
      ++result.deactivated_duplicates;
    }
  }
  state.completed = static_cast<int>(Stage::projection);
  return result;
}

PruneResult prune_prototypes(const data::Dataset& train, TrainState& state, std::size_t k_nn,
                             std::size_t purity_threshold) {
  require_order(state, Stage::pruning);
  auto& m = state.model;
  const auto bank = compute_feature_bank(m, train);
  const std::size_t d = bank.dim;
  std::size_t available = 0;
  for (const auto& l : bank.labels)
    for (const auto v : l) available += v != data::kIgnore;
  if (k_nn > available) {
    throw std::invalid_argument("prune_prototypes: k_nn = " + std::to_string(k_nn) + " exceeds the " +
                                std::to_string(available) + " labelled training points");
  }
  const std::size_t count = m.prototypes.count();
  const auto vectors = m.prototypes.vectors.data();
  std::vector<char> keep(count, 1);
  parallel_for(count, [&](std::size_t j) {
    if (!m.prototypes.active[j]) return;
    using Cand = std::tuple<double, std::size_t, std::size_t>;  // dist, image, point
    std::priority_queue<Cand> heap;                            // largest on top
    const double* p = vectors.data() + j * d;
    for (std::size_t i = 0; i < bank.features.size(); ++i) {
      const auto& f = bank.features[i];
      const auto& l = bank.labels[i];
      for (std::size_t k = 0; k < l.size(); ++k) {
        if (l[k] == data::kIgnore) continue;
        double acc = 0;
        for (std::size_t t = 0; t < d; ++t) {
          const double diff = f[k * d + t] - p[t];
          acc += diff * diff;
        }
        Cand c{acc, i, k};
        if (heap.size() < k_nn) {
          heap.push(c);
        } else if (c < heap.top()) {
          heap.pop();
          heap.push(c);
        }
      }
    }
    std::size_t in_class = 0;
    while (!heap.empty()) {
      const auto [dist, i, k] = heap.top();
      heap.pop();
      in_class += bank.labels[i][k] == m.prototypes.class_of[j];
    }
    keep[j] = in_class >= purity_threshold;
  });
  PruneResult result;
  for (std::size_t j = 0; j < count; ++j) {
    if (m.prototypes.active[j] && !keep[j]) {
      m.deactivate(j);
      result.pruned.push_back(j);
    }
  }
  state.completed = static_cast<int>(Stage::pruning);
  return result;
}

double evaluate_miou(const model::ProtoSegModel& model, const data::Dataset& data) {
  std::vector<explain::ConfusionAccumulator> parts(data.samples.size(),
                                                   explain::ConfusionAccumulator(model.num_classes));
  parallel_for(data.samples.size(), [&](std::size_t i) {
    const auto& s = data.samples[i];
    parts[i].add(s.labels, model::predict_segmentation(model, s));
  });
  explain::ConfusionAccumulator acc(model.num_classes);
  for (const auto& p : parts) acc.merge(p);
  return explain::miou(acc).miou;
}

double evaluate_loss(const model::ProtoSegModel& model, const data::Dataset& data, std::size_t samples,
                     const loss::LossConfig& cfg, bool with_l1) {
  const std::size_t n = std::min(samples, data.samples.size());
  if (n == 0) return 0.0;
  std::vector<double> per(n);
  parallel_for(n, [&](std::size_t i) {
    num::NoGradGuard no_grad;
    const auto& s = data.samples[i];
    const auto fwd = model.forward(s);
    const auto labels_d = data::downsample_labels(s.labels, s.height, s.width, fwd.feat_h, fwd.feat_w);
    per[i] = loss::joint_loss(fwd.head, labels_d, model.prototypes, cfg).total.item();
  });
  double total = 0;
  for (const double v : per) total += v;
  total /= static_cast<double>(n);
  if (with_l1) {
    num::NoGradGuard no_grad;
    total += cfg.lambda_l1 * loss::off_class_l1(model.last_layer, model.prototypes).item();
  }
  return total;
}

TrainState initial_state(const model::BackboneConfig& bb, int num_classes, std::size_t per_class,
                         const TrainConfig& cfg) {
  cfg.validate();
  TrainState s;
  s.model = model::ProtoSegModel::create(bb, num_classes, per_class, cfg.loss.epsilon, cfg.seed);
  return s;
}

StageReport run_single_stage(Stage stage, const data::Dataset& train, const data::Dataset& val,
                             TrainState& state, const TrainConfig& cfg, const PipelineOptions& opts) {
  cfg.validate();
  const auto& log = opts.log;
  switch (stage) {
    case Stage::projection: {
      const auto r = project_prototypes(train, state);
      if (log) log("projection: " + std::to_string(r.deactivated_duplicates) + " duplicate prototypes removed");
      break;
    }
    case Stage::pruning: {
      const auto r = prune_prototypes(train, state, cfg.prune_k_nn, cfg.prune_purity_threshold);
      if (log) log("pruning: " + std::to_string(r.pruned.size()) + " prototypes removed");
      break;
    }
    default:
      run_stage(stage, train, state, cfg, log);
  }
  StageReport row;
  row.stage = stage_name(stage);
  row.active_prototypes = state.model.prototypes.active_count();
  row.val_miou = evaluate_miou(state.model, val);
  row.train_loss = evaluate_loss(state.model, train, cfg.loss_eval_samples, cfg.loss, uses_l1(stage));
  if (log) {
    std::ostringstream os;
    os << "after " << row.stage << ": active " << row.active_prototypes << ", val mIoU " << row.val_miou
       << ", train loss " << row.train_loss;
    log(os.str());
  }
  if (opts.checkpoint_dir) {
    std::filesystem::create_directories(*opts.checkpoint_dir);
    save_state(checkpoint_path(*opts.checkpoint_dir, stage), state);
  }
  return row;
}

PipelineResult run_pipeline(const data::Dataset& train, const data::Dataset& val, TrainState state,
                            const TrainConfig& cfg, const PipelineOptions& opts) {
  PipelineResult result;
  for (int s = state.completed + 1; s < kStageCount; ++s) {
    result.report.push_back(run_single_stage(static_cast<Stage>(s), train, val, state, cfg, opts));
  }
  result.state = std::move(state);
  return result;
}

std::filesystem::path checkpoint_path(const std::filesystem::path& dir, Stage stage) {
  return dir / ("ckpt_" + std::to_string(static_cast<int>(stage) + 1) + "_" + stage_name(stage) + ".pseg");
}

void save_state(const std::filesystem::path& checkpoint, const TrainState& state) {
  const std::string stage = state.completed < 0 ? "init" : kStageNames[state.completed];
  model::write_checkpoint(checkpoint, state.model, stage,
                          {{"train.global_step", std::to_string(state.global_step)}});
}

TrainState load_state(const std::filesystem::path& checkpoint) {
  auto ck = model::read_checkpoint(checkpoint);
  TrainState s;
  s.model = std::move(ck.model);
  s.completed = ck.stage == "init" ? -1 : static_cast<int>(parse_stage(ck.stage));
  if (auto it = ck.meta.find("train.global_step"); it != ck.meta.end()) s.global_step = std::stoll(it->second);
  return s;
}

std::string format_number(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

void write_report_csv(const std::filesystem::path& path, const std::vector<StageReport>& report) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "stage,active_prototypes,val_miou,train_loss\n";
  for (const auto& r : report) {
    os << r.stage << ',' << r.active_prototypes << ',' << format_number(r.val_miou) << ','
       << format_number(r.train_loss) << '\n';
  }
}

std::vector<StageReport> read_report_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read " + path.string());
  std::string line;
  std::getline(is, line);
  std::vector<StageReport> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    StageReport r;
    std::string field;
    std::getline(ss, r.stage, ',');
    std::getline(ss, field, ',');
    r.active_prototypes = std::stoul(field);
    std::getline(ss, field, ',');
    r.val_miou = std::stod(field);
    std::getline(ss, field, ',');
    r.train_loss = std::stod(field);
    out.push_back(r);
  }
  return out;
}

}  // namespace protoseg::train
