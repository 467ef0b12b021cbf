// protoseg command line: data generation, staged training, evaluation and
// explanation export driven by a key=value config.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "protoseg/config/run_config.hpp"
#include "protoseg/explain/explain.hpp"
#include "protoseg/trainer/pipeline.hpp"

namespace fs = std::filesystem;
using namespace protoseg;

namespace {

struct Flags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<double> lambda_j;
  std::optional<std::string> out;
  std::vector<std::string> set;  // raw key=value overrides
  bool force = false;
  // train
  std::string stage;
  std::string data_dir;
  // eval / explain
  std::string checkpoint;
  std::string split = "val";
  std::vector<std::string> images;
  std::optional<std::size_t> prototype;
};

config::RunConfig resolve(const Flags& f) {
  config::RunConfig cfg = f.config_path.empty() ? config::RunConfig{} : config::load_config(f.config_path);
  for (const auto& kv : f.set) config::apply_text(cfg, kv, "--set");
  if (f.seed) config::set_value(cfg, "seed", std::to_string(*f.seed));
  if (f.lambda_j) cfg.train.loss.lambda_j = *f.lambda_j;
  if (f.out) cfg.out_dir = *f.out;
  cfg.validate();
  std::cout << "# resolved config\n" << config::render(cfg) << std::flush;
  return cfg;
}

fs::path data_root(const config::RunConfig& cfg, const Flags& f) {
  return f.data_dir.empty() ? fs::path(cfg.out_dir) / "data" : fs::path(f.data_dir);
}
fs::path ckpt_dir(const config::RunConfig& cfg) { return fs::path(cfg.out_dir) / "checkpoints"; }

void log_line(const std::string& s) { std::cout << s << std::endl; }

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream os(p);
  os << text;
  if (!os) throw std::runtime_error("cannot write " + p.string());
}

void cmd_gen_data(const config::RunConfig& cfg, const Flags& f) {
  const auto root = data_root(cfg, f);
  if (fs::exists(root) && !fs::is_empty(root)) {
    if (!f.force) throw std::runtime_error(root.string() + " is not empty (use --force to overwrite)");
    fs::remove_all(root);
  }
  fs::create_directories(root);
  for (auto split : {data::Split::train, data::Split::val}) {
    data::save_split(data::generate_split(cfg.data, split), root, split);
  }
  write_text(root / "config.txt", config::render(cfg));
  std::cout << "dataset written to " << root.string() << "\n";
}

void check_compatible(const config::RunConfig& cfg, const model::ProtoSegModel& m) {
  if (m.num_classes != cfg.data.num_classes) {
    throw std::runtime_error("checkpoint has " + std::to_string(m.num_classes) + " classes, config has " +
                             std::to_string(cfg.data.num_classes));
  }
  if (m.backbone.config().out_dim != cfg.backbone.out_dim ||
      m.backbone.config().stride != cfg.backbone.stride ||
      m.backbone.config().variant != cfg.backbone.variant) {
    throw std::runtime_error("checkpoint backbone does not match the config");
  }
}

void check_dataset(const data::Dataset& d, const config::RunConfig& cfg, const std::string& what) {
  if (d.samples.empty()) throw std::runtime_error(what + " split is empty");
  for (const auto& s : d.samples) s.validate(cfg.data.num_classes);
}

// Latest checkpoint in pipeline order, if any.
std::optional<train::Stage> latest_stage(const fs::path& dir) {
  std::optional<train::Stage> last;
  for (int s = 0; s < train::kStageCount; ++s) {
    const auto st = static_cast<train::Stage>(s);
    if (fs::exists(train::checkpoint_path(dir, st))) last = st;
  }
  return last;
}

void merge_report(const fs::path& path, const std::vector<train::StageReport>& rows) {
  std::vector<train::StageReport> report;
  if (fs::exists(path)) report = train::read_report_csv(path);
  for (const auto& r : rows) {
    const auto order = static_cast<int>(train::parse_stage(r.stage));
    std::erase_if(report, [&](const train::StageReport& x) {
      return static_cast<int>(train::parse_stage(x.stage)) >= order;
    });
    report.push_back(r);
  }
  train::write_report_csv(path, report);
}

void cmd_train(const config::RunConfig& cfg, const Flags& f) {
  const auto root = data_root(cfg, f);
  if (!fs::exists(root / "train" / "index.txt")) {
    throw std::runtime_error("no dataset at " + root.string() + " (run gen-data first)");
  }
  const auto train_set = data::load_split(root, data::Split::train);
  const auto val_set = data::load_split(root, data::Split::val);
  check_dataset(train_set, cfg, "train");
  check_dataset(val_set, cfg, "val");
  const auto dir = ckpt_dir(cfg);
  const auto report_path = fs::path(cfg.out_dir) / "report.csv";
  fs::create_directories(cfg.out_dir);
  write_text(fs::path(cfg.out_dir) / "config.txt", config::render(cfg));
  train::PipelineOptions opts{dir, log_line};

  if (!f.stage.empty()) {
    const auto stage = train::parse_stage(f.stage);
    const int idx = static_cast<int>(stage);
    train::TrainState state;
    if (idx == 0) {
      state = train::initial_state(cfg.backbone, cfg.data.num_classes, cfg.prototypes_per_class, cfg.train);
    } else {
      const auto prev = train::checkpoint_path(dir, static_cast<train::Stage>(idx - 1));
      if (!fs::exists(prev)) {
        throw std::runtime_error("stage " + f.stage + " needs checkpoint " + prev.string() + ", which is missing");
      }
      state = train::load_state(prev);
      check_compatible(cfg, state.model);
    }
    const auto row = train::run_single_stage(stage, train_set, val_set, state, cfg.train, opts);
    merge_report(report_path, {row});
    return;
  }

  train::TrainState state;
  std::optional<train::Stage> last = f.force ? std::nullopt : latest_stage(dir);
  if (f.force && fs::exists(dir)) fs::remove_all(dir);
  if (last) {
    state = train::load_state(train::checkpoint_path(dir, *last));
    check_compatible(cfg, state.model);
    log_line(std::string("resuming after stage ") + train::stage_name(*last));
  } else {
    if (fs::exists(report_path)) fs::remove(report_path);
    state = train::initial_state(cfg.backbone, cfg.data.num_classes, cfg.prototypes_per_class, cfg.train);
  }
  const auto result = train::run_pipeline(train_set, val_set, std::move(state), cfg.train, opts);
  merge_report(report_path, result.report);
  std::cout << "report written to " << report_path.string() << "\n";
}

model::ProtoSegModel load_model(const config::RunConfig& cfg, const Flags& f) {
  fs::path path = f.checkpoint;
  if (path.empty()) {
    const auto last = latest_stage(ckpt_dir(cfg));
    if (!last) throw std::runtime_error("no checkpoint found in " + ckpt_dir(cfg).string());
    path = train::checkpoint_path(ckpt_dir(cfg), *last);
  }
  auto ck = model::read_checkpoint(path);
  check_compatible(cfg, ck.model);
  std::cout << "checkpoint " << path.string() << " (stage " << ck.stage << ")\n";
  return std::move(ck.model);
}

data::Split parse_split(const std::string& s) {
  if (s == "train") return data::Split::train;
  if (s == "val") return data::Split::val;
  throw std::runtime_error("unknown split '" + s + "' (expected train or val)");
}

void cmd_eval(const config::RunConfig& cfg, const Flags& f) {
  const auto m = load_model(cfg, f);
  const auto split = parse_split(f.split);
  const auto set = data::load_split(data_root(cfg, f), split);
  check_dataset(set, cfg, f.split);
  const auto rows = explain::evaluate_metrics(m, set, cfg.overlap_percentile);
  const auto path = fs::path(cfg.out_dir) / ("metrics_" + f.split + ".csv");
  fs::create_directories(cfg.out_dir);
  explain::write_metrics_csv(path, rows);
  for (const auto& r : rows) std::cout << r.metric << ' ' << r.cls << ' ' << r.value << "\n";
  std::cout << "metrics written to " << path.string() << "\n";
}

void cmd_explain(const config::RunConfig& cfg, const Flags& f) {
  const auto m = load_model(cfg, f);
  if (!m.projected()) std::cerr << "warning: checkpoint is not projected; provenance omitted\n";
  const auto root = data_root(cfg, f);
  const auto split = parse_split(f.split);
  const auto set = data::load_split(root, split);
  std::vector<std::string> ids = f.images;
  if (ids.empty()) ids.push_back(data::sample_id(0));
  const auto out = fs::path(cfg.out_dir) / "explain";
  for (const auto& id : ids) {
    std::size_t index = set.samples.size();
    for (std::size_t i = 0; i < set.samples.size(); ++i)
      if (data::sample_id(i) == id) index = i;
    if (index == set.samples.size()) {
      throw std::runtime_error("unknown image id '" + id + "' in split " + f.split);
    }
    const auto res = explain::export_explanations(m, set.samples[index], out, id, f.prototype);
    std::cout << id << ": " << res.files.size() << " files in " << out.string() << "\n";
  }
}

void add_common(CLI::App* sub, Flags& f) {
  sub->add_option("--config", f.config_path, "key = value config file")->check(CLI::ExistingFile);
  sub->add_option("--seed", f.seed, "model/training seed");
  sub->add_option("--lambda-j", f.lambda_j, "diversity loss weight");
  sub->add_option("--out", f.out, "output directory");
  sub->add_option("--set", f.set, "extra key=value override (repeatable)");
  sub->add_option("--data", f.data_dir, "dataset root (default <out>/data)");
  sub->add_flag("--force", f.force, "overwrite existing outputs / restart training");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Prototype-based segmentation with a diversity regularizer"};
  app.require_subcommand(1);
  Flags f;

  auto* gen = app.add_subcommand("gen-data", "generate the synthetic dataset");
  auto* tr = app.add_subcommand("train", "run the training pipeline (or one --stage)");
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a split");
  auto* ex = app.add_subcommand("explain", "export explanation images for some samples");
  auto* pl = app.add_subcommand("pipeline", "gen-data + train + eval");
  for (auto* sub : {gen, tr, ev, ex, pl}) add_common(sub, f);
  tr->add_option("--stage", f.stage, "run only this stage: warmup, joint, projection, tune1, pruning, tune2");
  for (auto* sub : {ev, ex}) {
    sub->add_option("--checkpoint", f.checkpoint, "checkpoint file (default: latest in <out>/checkpoints)");
    sub->add_option("--split", f.split, "train or val");
  }
  ex->add_option("--image", f.images, "sample id such as 00003 (repeatable)");
  ex->add_option("--prototype", f.prototype, "only export this prototype's activation map");

  CLI11_PARSE(app, argc, argv);

  try {
    const auto cfg = resolve(f);
    if (gen->parsed()) cmd_gen_data(cfg, f);
    if (tr->parsed()) cmd_train(cfg, f);
    if (ev->parsed()) cmd_eval(cfg, f);
    if (ex->parsed()) cmd_explain(cfg, f);
    if (pl->parsed()) {
      const auto root = data_root(cfg, f);
      if (f.force || !fs::exists(root / "train" / "index.txt")) cmd_gen_data(cfg, f);
      cmd_train(cfg, f);
      cmd_eval(cfg, f);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
