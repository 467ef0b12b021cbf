// Acceptance run: one PASS/FAIL line per criterion. Exit status is 0 only when
// the set of failing criteria equals the declared known failures (none by
// default), so a regression and an unexpected pass both fail the run.
// Usage: acceptance [--work DIR] [--only N[,N...]] [--known-failure N[,N...]]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "protoseg/explain/explain.hpp"
#include "protoseg/explain/metrics.hpp"
#include "protoseg/numcore/ops.hpp"
#include "protoseg/protoloss/losses.hpp"
#include "protoseg/trainer/pipeline.hpp"

namespace fs = std::filesystem;
using namespace protoseg;

namespace {

// ---- pinned tolerances ----
constexpr double kGradRelTol = 1e-5;
constexpr double kGradFloor = 1e-4;  // relative error denominator floor (|g| below this is compared absolutely)
constexpr double kGradStep = 1e-6;
constexpr int kGradInstances = 50;
constexpr double kGradBudgetSeconds = 120;
constexpr int kJeffreyCases = 1000;
constexpr double kJeffreyTol = 1e-12;
constexpr double kOverlapReduction = 0.25;
constexpr int kSeedsNeeded = 2;
constexpr double kCpuBudgetSeconds = 45 * 60;
constexpr double kMinValMiou = 0.70;
constexpr double kProjectionShift = 0.05;
constexpr double kPruningShift = 0.02;
constexpr double kMetricTol = 1e-12;

struct Outcome {
  bool pass;
  std::string detail;
};

std::string fmt(double v, int prec = 4) {
  std::ostringstream os;
  os.precision(prec);
  os << v;
  return os.str();
}

double cpu_seconds() { return static_cast<double>(std::clock()) / CLOCKS_PER_SEC; }

// ---------------------------------------------------------------- 1
Outcome gradient_correctness() {
  const double t0 = cpu_seconds();
  std::mt19937_64 rng(2024);
  double worst = 0;
  std::size_t checked = 0;
  std::string where;
  for (int inst = 0; inst < kGradInstances; ++inst) {
    std::uniform_int_distribution<int> pick_c(2, 3), pick_per(1, 2), pick_d(2, 8), pick_hw(2, 4);
    const int classes = pick_c(rng);
    const std::size_t per = static_cast<std::size_t>(std::min(pick_per(rng), 6 / classes));
    model::BackboneConfig bb;
    bb.variant = inst % 2 ? model::BackboneVariant::skip_connection : model::BackboneVariant::plain_conv;
    bb.widths = {3, 4, 5};
    bb.out_dim = static_cast<std::size_t>(pick_d(rng));
    auto m = model::ProtoSegModel::create(bb, classes, per, 1e-4, rng());
    const std::size_t hd = static_cast<std::size_t>(pick_hw(rng)), wd = static_cast<std::size_t>(pick_hw(rng));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> img(3 * hd * 4 * wd * 4);
    for (auto& v : img) v = u(rng);
    const num::Tensor image({3, hd * 4, wd * 4}, img);
    std::vector<std::uint8_t> labels(hd * wd);
    for (auto& l : labels) {
      l = u(rng) < 0.1 ? data::kIgnore : static_cast<std::uint8_t>(rng() % static_cast<unsigned>(classes));
    }
    // Zero biases put dead ReLU regions exactly on the kink and the init last
    // layer is symmetric; jitter both so the check runs at a generic point.
    for (auto& w : m.last_layer.weights.mutable_data()) w += 0.1 * (u(rng) - 0.5);
    for (auto* group : {&m.backbone.core(), &m.backbone.projection()})
      for (auto& p : *group)
        if (p.value.rank() == 1)
          for (auto& b : p.value.mutable_data()) b = 0.1 * (u(rng) - 0.5);
    loss::LossConfig cfg;
    cfg.lambda_j = 0.25;

    std::vector<num::Tensor> params;
    for (auto& p : m.backbone.core()) params.push_back(p.value);
    for (auto& p : m.backbone.projection()) params.push_back(p.value);
    params.push_back(m.prototypes.vectors);
    params.push_back(m.last_layer.weights);
    for (auto& p : params) {
      p.set_requires_grad(true);
      p.zero_grad();
    }
    auto objective = [&] {
      const auto r = m.forward(image);
      return loss::joint_loss(r.head, labels, m.prototypes, cfg).total;
    };
    num::backward(objective());
    for (auto& p : params) {
      const std::vector<double> ad = p.has_grad() ? std::vector<double>(p.grad().begin(), p.grad().end())
                                                  : std::vector<double>(p.size(), 0.0);
      auto data = p.mutable_data();
      for (std::size_t i = 0; i < data.size(); ++i) {
        const double saved = data[i];
        num::NoGradGuard g;
        data[i] = saved + kGradStep;
        const double up = objective().item();
        data[i] = saved - kGradStep;
        const double down = objective().item();
        data[i] = saved;
        const double fd = (up - down) / (2 * kGradStep);
        const double scale = std::max({std::abs(fd), std::abs(ad[i]), kGradFloor});
        const double e = std::abs(fd - ad[i]) / scale;
        if (e > worst) {
          worst = e;
          where = "model " + std::to_string(inst) + " tensor " + std::to_string(&p - params.data()) + " [" +
                  std::to_string(i) + "] fd " + fmt(fd, 6) + " vs " + fmt(ad[i], 6);
        }
        ++checked;
      }
    }
  }
  const double cpu = cpu_seconds() - t0;
  std::string detail = "worst relative error " + fmt(worst, 3) + " over " + std::to_string(checked) +
                       " parameters in " + std::to_string(kGradInstances) + " models (limit " + fmt(kGradRelTol, 2) +
                       "), cpu " + fmt(cpu, 3) + " s (limit 120)";
  if (worst > kGradRelTol) detail += "; worst at " + where;
  return {worst <= kGradRelTol && cpu < kGradBudgetSeconds, detail};
}

// ---------------------------------------------------------------- 2
Outcome jeffrey_properties() {
  std::mt19937_64 rng(77);
  std::normal_distribution<double> n(0.0, 1.5);
  auto random_dist = [&](std::size_t len) {
    std::vector<double> v(len);
    double z = 0;
    for (auto& x : v) z += x = std::exp(n(rng));
    for (auto& x : v) x /= z;
    return v;
  };
  int failures = 0;
  std::string first;
  auto fail = [&](const std::string& what) {
    if (failures++ == 0) first = what;
  };
  for (int k = 0; k < kJeffreyCases; ++k) {
    const std::size_t len = 2 + rng() % 12;
    const std::size_t l = 2 + rng() % 5;
    std::vector<std::vector<double>> set;
    for (std::size_t i = 0; i < l; ++i) set.push_back(random_dist(len));
    const auto& u = set[0];
    const auto& v = set[1];
    const double duv = loss::jeffrey_divergence(u, v), dvu = loss::jeffrey_divergence(v, u);
    if (std::abs(duv - dvu) > kJeffreyTol * std::max(1.0, duv)) fail("symmetry");
    if (duv < 0) fail("non-negativity");
    if (loss::jeffrey_divergence(u, u) != 0.0) fail("D_J(U,U)=0");
    const double s = loss::jeffrey_similarity(set);
    if (!(s >= 0.0 && s <= 1.0)) fail("S_J range");
    if (!(s < 1.0 - kJeffreyTol)) fail("S_J < 1 for distinct inputs");
    const std::vector<std::vector<double>> same(l, u);
    if (std::abs(loss::jeffrey_similarity(same) - 1.0) > kJeffreyTol) fail("S_J = 1 for equal inputs");
    auto perm = set;
    std::shuffle(perm.begin(), perm.end(), rng);
    if (std::abs(loss::jeffrey_similarity(perm) - s) > kJeffreyTol) fail("permutation invariance");
    // differentiable form agrees with the value form
    std::vector<double> lu, lv;
    for (double x : u) lu.push_back(std::log(x));
    for (double x : v) lv.push_back(std::log(x));
    const double t = loss::jeffrey_divergence(num::Tensor({len}, lu), num::Tensor({len}, lv)).item();
    if (std::abs(t - duv) > 1e-10 * std::max(1.0, duv)) fail("tensor form");
  }
  return {failures == 0, std::to_string(kJeffreyCases) + " randomized cases, " + std::to_string(failures) +
                             " failures" + (failures ? " (first: " + first + ")" : "")};
}

// ---------------------------------------------------------------- 3-6 share runs
struct RunResult {
  std::uint64_t seed;
  double lambda_j;
  fs::path ckpt_dir;
  std::vector<train::StageReport> report;
  double overlap = 0;
  double entropy = 0;
  double cpu = 0;
};

struct DeskScale {
  data::DatasetSpec spec;
  model::BackboneConfig bb;
  train::TrainConfig cfg;
  std::size_t per_class = 6;
  data::Dataset train_set, val_set;
};

DeskScale desk_scale() {
  DeskScale d;
  d.spec.num_classes = 4;
  d.spec.height = 64;
  d.spec.width = 64;
  d.spec.train_samples = 300;
  d.spec.val_samples = 60;
  d.spec.seed = 1;
  d.bb.out_dim = 16;
  d.train_set = data::generate_split(d.spec, data::Split::train);
  d.val_set = data::generate_split(d.spec, data::Split::val);
  return d;
}

RunResult train_run(const DeskScale& d, std::uint64_t seed, double lambda_j, const fs::path& dir) {
  RunResult r;
  r.seed = seed;
  r.lambda_j = lambda_j;
  r.ckpt_dir = dir;
  auto cfg = d.cfg;
  cfg.seed = seed;
  cfg.loss.lambda_j = lambda_j;
  const double t0 = cpu_seconds();
  train::PipelineOptions opts;
  opts.checkpoint_dir = dir;
  const auto res = train::run_pipeline(d.train_set, d.val_set, train::initial_state(d.bb, 4, d.per_class, cfg), cfg, opts);
  r.report = res.report;
  r.overlap = explain::prototype_overlap(res.state.model, d.val_set).mean_iou;
  r.entropy = explain::utilization_histogram(res.state.model, d.val_set).mean_entropy;
  r.cpu = cpu_seconds() - t0;
  train::write_report_csv(dir / "report.csv", r.report);
  std::cout << "  run seed=" << seed << " lambda_j=" << lambda_j << ": val mIoU " << fmt(r.report.back().val_miou)
            << ", overlap " << fmt(r.overlap) << ", utilization entropy " << fmt(r.entropy) << ", cpu "
            << fmt(r.cpu, 3) << " s" << std::endl;
  return r;
}

Outcome diversity_effect(const std::vector<RunResult>& with, const std::vector<RunResult>& without, double cpu) {
  int ok = 0;
  std::string detail;
  for (std::size_t i = 0; i < with.size(); ++i) {
    const double rel = 1.0 - with[i].overlap / without[i].overlap;
    const bool overlap_ok = rel >= kOverlapReduction;
    const bool entropy_ok = with[i].entropy > without[i].entropy;
    ok += overlap_ok && entropy_ok;
    detail += "seed " + std::to_string(with[i].seed) + ": overlap " + fmt(without[i].overlap) + " -> " +
              fmt(with[i].overlap) + " (" + fmt(100 * rel, 3) + "% lower), entropy " + fmt(without[i].entropy) +
              " -> " + fmt(with[i].entropy) + (overlap_ok && entropy_ok ? " ok" : " no") + "; ";
  }
  const bool budget = cpu < kCpuBudgetSeconds;
  detail += std::to_string(ok) + "/" + std::to_string(with.size()) + " seeds hold (need " +
            std::to_string(kSeedsNeeded) + "), cpu " + fmt(cpu / 60, 3) + " min (limit 45)";
  return {ok >= kSeedsNeeded && budget, detail};
}

Outcome training_sanity(const std::vector<RunResult>& with, double cpu) {
  double best = 0;
  std::string per;
  bool all = true;
  for (const auto& r : with) {
    const double m = r.report.back().val_miou;
    best = std::max(best, m);
    all &= m >= kMinValMiou;
    per += (per.empty() ? "" : ", ") + fmt(m);
  }
  return {all && cpu < kCpuBudgetSeconds,
          "final val mIoU per seed " + per + " (need >= " + fmt(kMinValMiou, 2) + " on every seed)"};
}

const train::StageReport& row(const std::vector<train::StageReport>& rep, const char* stage) {
  for (const auto& r : rep)
    if (r.stage == stage) return r;
  throw std::runtime_error(std::string("report lacks stage ") + stage);
}

Outcome stage_stability(const std::vector<RunResult>& with) {
  bool ok = true;
  bool pruned_somewhere = false;
  std::string detail;
  for (const auto& r : with) {
    const double proj = row(r.report, "projection").val_miou - row(r.report, "joint").val_miou;
    const double prune = row(r.report, "pruning").val_miou - row(r.report, "tune1").val_miou;
    const std::size_t removed = row(r.report, "tune1").active_prototypes - row(r.report, "pruning").active_prototypes;
    bool mono = true;
    for (std::size_t i = 1; i < r.report.size(); ++i)
      mono &= r.report[i].active_prototypes <= r.report[i - 1].active_prototypes;
    const bool run_ok = std::abs(proj) <= kProjectionShift && std::abs(prune) <= kPruningShift && mono;
    ok &= run_ok;
    pruned_somewhere |= removed >= 1;
    detail += "seed " + std::to_string(r.seed) + ": projection " + fmt(100 * proj, 3) + " pts, pruning " +
              fmt(100 * prune, 3) + " pts, " + std::to_string(removed) + " pruned" + (mono ? "" : ", count rose") +
              "; ";
  }
  detail += pruned_somewhere ? "pruning active on >=1 seed" : "pruning removed nothing on any seed";
  return {ok && pruned_somewhere, detail};
}

std::vector<double> tensor_values(const num::Tensor& t) { return {t.data().begin(), t.data().end()}; }
std::vector<std::vector<double>> param_values(const std::vector<model::NamedParam>& ps) {
  std::vector<std::vector<double>> out;
  for (const auto& p : ps) out.push_back(tensor_values(p.value));
  return out;
}

Outcome structural_rules(const DeskScale& d, const RunResult& run) {
  std::vector<std::string> broken;
  // last-layer rule on a fresh model
  const auto fresh = train::initial_state(d.bb, 4, d.per_class, [&] {
    auto c = d.cfg;
    c.seed = run.seed;
    return c;
  }());
  const auto& m0 = fresh.model;
  for (std::size_t j = 0; j < m0.prototypes.count(); ++j)
    for (std::size_t c = 0; c < 4; ++c) {
      const double expect = m0.prototypes.class_of[j] == static_cast<int>(c) ? 1.0 : -0.5;
      if (m0.last_layer.weights[j * 4 + c] != expect) broken.push_back("last-layer init");
    }

  auto load = [&](train::Stage s) { return train::load_state(train::checkpoint_path(run.ckpt_dir, s)).model; };
  const auto warm = load(train::Stage::warmup), joint = load(train::Stage::joint),
             proj = load(train::Stage::projection), tune1 = load(train::Stage::tune1),
             pruned = load(train::Stage::pruning), tune2 = load(train::Stage::tune2);
  // warmup: core and last layer frozen
  if (param_values(warm.backbone.core()) != param_values(m0.backbone.core())) broken.push_back("warmup core");
  if (tensor_values(warm.last_layer.weights) != tensor_values(m0.last_layer.weights)) broken.push_back("warmup w_h");
  // joint: last layer frozen
  if (tensor_values(joint.last_layer.weights) != tensor_values(warm.last_layer.weights)) broken.push_back("joint w_h");
  // tune stages: everything but the last layer frozen
  auto frozen_except_head = [&](const model::ProtoSegModel& a, const model::ProtoSegModel& b, const char* name) {
    if (param_values(a.backbone.core()) != param_values(b.backbone.core()) ||
        param_values(a.backbone.projection()) != param_values(b.backbone.projection()) ||
        tensor_values(a.prototypes.vectors) != tensor_values(b.prototypes.vectors)) {
      broken.push_back(name);
    }
  };
  frozen_except_head(tune1, proj, "tune1 frozen buffers");
  frozen_except_head(tune2, pruned, "tune2 frozen buffers");

  // projection: exhaustive scan for a verbatim match of each active prototype
  const auto bank = train::compute_feature_bank(proj, d.train_set);
  const std::size_t dim = bank.dim;
  std::size_t verified = 0;
  for (std::size_t j = 0; j < proj.prototypes.count(); ++j) {
    if (!proj.prototypes.active[j]) continue;
    const double* p = proj.prototypes.vectors.data().data() + j * dim;
    bool found = false;
    for (std::size_t i = 0; i < bank.features.size() && !found; ++i) {
      for (std::size_t k = 0; k < bank.labels[i].size() && !found; ++k) {
        if (bank.labels[i][k] != proj.prototypes.class_of[j]) continue;
        found = std::equal(p, p + dim, bank.features[i].begin() + static_cast<std::ptrdiff_t>(k * dim));
      }
    }
    if (found) ++verified;
    else broken.push_back("prototype " + std::to_string(j) + " not a training point");
  }
  std::string detail = "init rule, 4 freezing checks, " + std::to_string(verified) + " projected prototypes verified";
  if (!broken.empty()) detail += "; broken: " + broken.front() + (broken.size() > 1 ? " (+" + std::to_string(broken.size() - 1) + ")" : "");
  return {broken.empty(), detail};
}

// ---------------------------------------------------------------- 7
Outcome metric_oracles() {
  std::mt19937_64 rng(5);
  double worst = 0;
  for (int fx = 0; fx < 20; ++fx) {
    const int classes = 2 + fx % 4;
    std::vector<std::uint8_t> gt(64), pred(64);
    for (int i = 0; i < 64; ++i) {
      gt[static_cast<std::size_t>(i)] = rng() % 7 == 0 ? data::kIgnore : static_cast<std::uint8_t>(rng() % classes);
      pred[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(rng() % classes);
    }
    // brute force: per class sets of pixel indices
    double iou_sum = 0;
    int counted = 0;
    for (int c = 0; c < classes; ++c) {
      int inter = 0, uni = 0;
      for (int i = 0; i < 64; ++i) {
        const auto g = gt[static_cast<std::size_t>(i)], p = pred[static_cast<std::size_t>(i)];
        if (g == data::kIgnore) continue;
        inter += g == c && p == c;
        uni += g == c || p == c;
      }
      if (uni == 0) continue;
      iou_sum += static_cast<double>(inter) / uni;
      ++counted;
    }
    int scored = 0, wrong = 0;
    for (int i = 0; i < 64; ++i) {
      if (gt[static_cast<std::size_t>(i)] == data::kIgnore) continue;
      ++scored;
      wrong += gt[static_cast<std::size_t>(i)] != pred[static_cast<std::size_t>(i)];
    }
    explain::ConfusionAccumulator acc(classes);
    acc.add(gt, pred);
    worst = std::max(worst, std::abs(explain::miou(acc).miou - iou_sum / counted));
    worst = std::max(worst, std::abs(explain::pixel_error(pred, gt).value - static_cast<double>(wrong) / scored));

    // overlap: 3 prototypes per class over 2 "images" of 8x8 activations
    const int pc = 3;
    auto protos = model::init_prototypes(classes, pc, 1, 0);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<explain::ImageMaps> images(2, explain::ImageMaps(static_cast<std::size_t>(classes * pc)));
    for (auto& img : images)
      for (auto& mp : img) {
        mp.resize(64);
        for (auto& v : mp) v = std::floor(u(rng) * 10);  // ties on purpose
      }
    auto top = [](const std::vector<double>& vals) {
      std::vector<double> s = vals;
      std::sort(s.begin(), s.end());
      const double pos = 0.95 * 63;
      const int lo = static_cast<int>(pos);
      const double t = s[static_cast<std::size_t>(lo)] + (pos - lo) * (s[static_cast<std::size_t>(lo) + 1] - s[static_cast<std::size_t>(lo)]);
      std::vector<int> mask(64);
      for (int i = 0; i < 64; ++i) mask[static_cast<std::size_t>(i)] = vals[static_cast<std::size_t>(i)] >= t;
      return mask;
    };
    double ref = 0;
    int pairs = 0;
    for (const auto& img : images)
      for (int c = 0; c < classes; ++c)
        for (int a = 0; a < pc; ++a)
          for (int b = a + 1; b < pc; ++b) {
            const auto ma = top(img[static_cast<std::size_t>(c * pc + a)]), mb = top(img[static_cast<std::size_t>(c * pc + b)]);
            int inter = 0, uni = 0;
            for (int i = 0; i < 64; ++i) {
              inter += ma[static_cast<std::size_t>(i)] && mb[static_cast<std::size_t>(i)];
              uni += ma[static_cast<std::size_t>(i)] || mb[static_cast<std::size_t>(i)];
            }
            ref += uni ? static_cast<double>(inter) / uni : 0.0;
            ++pairs;
          }
    worst = std::max(worst, std::abs(explain::overlap_from_maps(images, protos, classes).mean_iou - ref / pairs));
  }
  return {worst <= kMetricTol, "20 fixtures, worst deviation " + fmt(worst, 3) + " (limit 1e-12)"};
}

// ---------------------------------------------------------------- 8
std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

Outcome determinism(const fs::path& work) {
  data::DatasetSpec spec;
  spec.train_samples = 40;
  spec.val_samples = 10;
  const auto tr = data::generate_split(spec, data::Split::train);
  const auto va = data::generate_split(spec, data::Split::val);
  model::BackboneConfig bb;
  train::TrainConfig cfg;
  cfg.warmup_steps = 40;
  cfg.joint_steps = 60;
  cfg.tune1_steps = 20;
  cfg.tune2_steps = 20;
  cfg.seed = 99;
  auto one = [&](const fs::path& dir, const char* threads) {
    ::setenv("PROTOSEG_THREADS", threads, 1);
    fs::remove_all(dir);
    train::PipelineOptions opts;
    opts.checkpoint_dir = dir;
    const auto res = train::run_pipeline(tr, va, train::initial_state(bb, 4, 3, cfg), cfg, opts);
    train::write_report_csv(dir / "report.csv", res.report);
    explain::write_metrics_csv(dir / "metrics.csv", explain::evaluate_metrics(res.state.model, va));
  };
  one(work / "det_a", "1");
  one(work / "det_b", "3");
  ::unsetenv("PROTOSEG_THREADS");
  std::size_t same = 0, total = 0;
  for (const auto& e : fs::directory_iterator(work / "det_a")) {
    ++total;
    same += slurp(e.path()) == slurp(work / "det_b" / e.path().filename());
  }
  return {same == total && total == 8, std::to_string(same) + "/" + std::to_string(total) +
                                           " artifacts bitwise identical (6 checkpoints, report, metrics; 1 vs 3 worker threads)"};
}

}  // namespace

int main(int argc, char** argv) {
  fs::path work = fs::temp_directory_path() / "protoseg_acceptance";
  std::set<int> only, known;
  auto parse_list = [](const char* text, std::set<int>& out) {
    std::stringstream ss(text);
    std::string part;
    while (std::getline(ss, part, ',')) out.insert(std::stoi(part));
  };
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--work" && i + 1 < argc) {
      work = argv[++i];
    } else if (a == "--only" && i + 1 < argc) {
      parse_list(argv[++i], only);
    } else if (a == "--known-failure" && i + 1 < argc) {
      parse_list(argv[++i], known);
    } else {
      std::cerr << "usage: acceptance [--work DIR] [--only N[,N...]] [--known-failure N[,N...]]\n";
      return 2;
    }
  }
  fs::create_directories(work);
  auto wanted = [&](int n) { return only.empty() || only.count(n); };

  std::map<int, std::pair<std::string, Outcome>> results;
  auto record = [&](int n, const std::string& name, const std::function<Outcome()>& fn) {
    if (!wanted(n)) return;
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    results[n] = {name, o};
    std::cout << (o.pass ? "[PASS] " : "[FAIL] ") << "criterion " << n << " " << name << ": " << o.detail << std::endl;
  };

  record(1, "gradient correctness", gradient_correctness);
  record(2, "Jeffrey property suite", jeffrey_properties);
  if (wanted(3) || wanted(4) || wanted(5) || wanted(6)) {
    std::vector<RunResult> with, without;
    double cpu = 0;
    std::string setup_error;
    DeskScale d;
    try {
      d = desk_scale();
      for (std::uint64_t seed : {1, 2, 3}) {
        without.push_back(train_run(d, seed, 0.0, work / ("runs/seed" + std::to_string(seed) + "_lj0")));
        with.push_back(train_run(d, seed, 0.25, work / ("runs/seed" + std::to_string(seed) + "_lj025")));
        cpu += without.back().cpu + with.back().cpu;
      }
    } catch (const std::exception& e) {
      setup_error = e.what();
    }
    auto guarded = [&](auto fn) {
      return [&, fn]() -> Outcome {
        if (!setup_error.empty()) return {false, "training runs failed: " + setup_error};
        return fn();
      };
    };
    record(3, "diversity effect", guarded([&] { return diversity_effect(with, without, cpu); }));
    record(4, "training sanity", guarded([&] { return training_sanity(with, cpu); }));
    record(5, "stage stability", guarded([&] { return stage_stability(with); }));
    record(6, "structural rules", guarded([&] { return structural_rules(d, with.front()); }));
  }
  record(7, "metric oracles", metric_oracles);
  record(8, "determinism", [&] { return determinism(work); });

  int passed = 0;
  std::set<int> failed, expected;
  for (const auto& [n, r] : results) {
    passed += r.second.pass;
    if (!r.second.pass) failed.insert(n);
    if (known.count(n)) expected.insert(n);
  }
  std::cout << "acceptance: " << passed << "/" << results.size() << " criteria passed";
  if (!expected.empty()) {
    std::cout << "; declared known failures:";
    for (int n : expected) std::cout << " " << n;
  }
  std::cout << std::endl;
  if (failed != expected) {
    for (int n : failed)
      if (!expected.count(n)) std::cout << "unexpected failure: criterion " << n << std::endl;
    for (int n : expected)
      if (!failed.count(n)) std::cout << "unexpected pass: criterion " << n << " (remove it from the known failures)" << std::endl;
    return 1;
  }
  return 0;
}
