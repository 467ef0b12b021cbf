#include "protoseg/config/run_config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

namespace protoseg::config {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const auto* end = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end || v.empty()) {
    throw ConfigError("config key '" + key + "': cannot parse '" + v + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config key '" + key + "': expected true/false, got '" + v + "'");
}

std::string fmt(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

template <typename T>
std::string fmt_int(T v) {
  return std::to_string(v);
}

struct Entry {
  std::string key;
  std::string help;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
};

#define PS_DOUBLE(KEY, FIELD, HELP)                                                             \
  Entry {                                                                                       \
    KEY, HELP, [](const RunConfig& c) { return fmt(c.FIELD); },                                 \
        [](RunConfig& c, const std::string& k, const std::string& v) {                          \
          c.FIELD = parse_number<double>(k, v);                                                 \
        }                                                                                       \
  }
#define PS_INT(KEY, FIELD, TYPE, HELP)                                                          \
  Entry {                                                                                       \
    KEY, HELP, [](const RunConfig& c) { return fmt_int(c.FIELD); },                             \
        [](RunConfig& c, const std::string& k, const std::string& v) {                          \
          c.FIELD = parse_number<TYPE>(k, v);                                                   \
        }                                                                                       \
  }

const std::vector<Entry>& entries() {
  static const std::vector<Entry> table = {
      PS_INT("data.num_classes", data.num_classes, int, "classes including background 0"),
      PS_INT("data.train_samples", data.train_samples, std::size_t, "training images"),
      PS_INT("data.val_samples", data.val_samples, std::size_t, "validation images"),
      PS_INT("data.height", data.height, std::size_t, "image height"),
      PS_INT("data.width", data.width, std::size_t, "image width"),
      PS_INT("data.min_figures", data.min_figures, int, "fewest figures per image"),
      PS_INT("data.max_figures", data.max_figures, int, "most figures per image"),
      PS_DOUBLE("data.min_figure_scale", data.min_figure_scale, "smallest figure size in pixels"),
      PS_DOUBLE("data.max_figure_scale", data.max_figure_scale, "largest figure size in pixels"),
      PS_INT("data.seed", data.seed, std::uint64_t, "dataset generation seed"),
      Entry{"model.backbone", "plain-conv or skip-connection",
            [](const RunConfig& c) { return std::string(model::variant_name(c.backbone.variant)); },
            [](RunConfig& c, const std::string& k, const std::string& v) {
              try {
                c.backbone.variant = model::parse_variant(v);
              } catch (const std::exception& e) {
                throw ConfigError("config key '" + k + "': " + e.what());
              }
            }},
      Entry{"model.widths", "comma separated conv widths, one per stride level",
            [](const RunConfig& c) {
              std::string s;
              for (auto w : c.backbone.widths) s += (s.empty() ? "" : ",") + std::to_string(w);
              return s;
            },
            [](RunConfig& c, const std::string& k, const std::string& v) {
              std::vector<std::size_t> widths;
              std::stringstream ss(v);
              std::string part;
              while (std::getline(ss, part, ',')) widths.push_back(parse_number<std::size_t>(k, trim(part)));
              c.backbone.widths = widths;
            }},
      PS_INT("model.stride", backbone.stride, std::size_t, "output stride (power of two)"),
      PS_INT("model.feature_dim", backbone.out_dim, std::size_t, "feature / prototype dimension D"),
      PS_INT("model.prototypes_per_class", prototypes_per_class, std::size_t, "prototypes per class"),
      PS_INT("train.warmup_steps", train.warmup_steps, std::int64_t, "warmup steps"),
      PS_INT("train.joint_steps", train.joint_steps, std::int64_t, "joint steps"),
      PS_INT("train.tune1_steps", train.tune1_steps, std::int64_t, "first fine-tune steps"),
      PS_INT("train.tune2_steps", train.tune2_steps, std::int64_t, "second fine-tune steps"),
      PS_DOUBLE("train.warmup_lr", train.warmup_lr, "warmup learning rate"),
      PS_DOUBLE("train.joint_backbone_lr", train.joint_backbone_lr, "joint LR of the backbone core"),
      PS_DOUBLE("train.joint_head_lr", train.joint_head_lr, "joint LR of projection and prototypes"),
      PS_DOUBLE("train.tune_lr", train.tune_lr, "fine-tune LR of the last layer"),
      PS_DOUBLE("train.adam_beta1", train.adam.beta1, "Adam beta1"),
      PS_DOUBLE("train.adam_beta2", train.adam.beta2, "Adam beta2"),
      PS_DOUBLE("train.adam_eps", train.adam.eps, "Adam epsilon"),
      PS_DOUBLE("train.weight_decay", train.weight_decay, "L2 weight decay (not on prototypes)"),
      PS_INT("train.batch_size", train.batch_size, std::size_t, "images per step"),
      PS_DOUBLE("train.poly_power", train.poly_power, "polynomial LR decay power"),
      PS_INT("train.prune_k_nn", train.prune_k_nn, std::size_t, "neighbours examined by pruning"),
      PS_INT("train.prune_purity_threshold", train.prune_purity_threshold, std::size_t,
             "same-class neighbours needed to survive pruning"),
      PS_INT("train.loss_eval_samples", train.loss_eval_samples, std::size_t,
             "training images scored for the report loss"),
      PS_DOUBLE("loss.lambda_j", train.loss.lambda_j, "diversity loss weight"),
      PS_DOUBLE("loss.lambda_l1", train.loss.lambda_l1, "off-class L1 weight during fine-tuning"),
      PS_DOUBLE("loss.epsilon", train.loss.epsilon, "similarity epsilon"),
      Entry{"loss.negate_distances", "softmax over negated distances in the diversity loss",
            [](const RunConfig& c) { return std::string(c.train.loss.negate_distances ? "true" : "false"); },
            [](RunConfig& c, const std::string& k, const std::string& v) {
              c.train.loss.negate_distances = parse_bool(k, v);
            }},
      PS_DOUBLE("eval.overlap_percentile", overlap_percentile, "activation percentile for overlap"),
      Entry{"out_dir", "output directory", [](const RunConfig& c) { return c.out_dir; },
            [](RunConfig& c, const std::string&, const std::string& v) { c.out_dir = v; }},
      Entry{"seed", "model init and training seed", [](const RunConfig& c) { return fmt_int(c.seed); },
            [](RunConfig& c, const std::string& k, const std::string& v) {
              c.seed = parse_number<std::uint64_t>(k, v);
              c.train.seed = c.seed;
            }},
  };
  return table;
}

#undef PS_DOUBLE
#undef PS_INT

const Entry& find(const std::string& key) {
  for (const auto& e : entries())
    if (e.key == key) return e;
  throw ConfigError("unknown config key '" + key + "'");
}

}  // namespace

void RunConfig::validate() const {
  data.validate();
  backbone.validate();
  train.validate();
  if (prototypes_per_class == 0) throw ConfigError("model.prototypes_per_class must be >= 1");
  if (train.seed != seed) throw ConfigError("seed and train seed disagree");
  if (!(overlap_percentile >= 0 && overlap_percentile <= 100)) {
    throw ConfigError("eval.overlap_percentile must lie in [0, 100]");
  }
  if (out_dir.empty()) throw ConfigError("out_dir must not be empty");
}

std::vector<KeyDoc> documented_keys() {
  const RunConfig defaults;
  std::vector<KeyDoc> out;
  for (const auto& e : entries()) out.push_back({e.key, e.get(defaults), e.help});
  return out;
}

void set_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  find(key).set(cfg, key, value);
}

std::string get_value(const RunConfig& cfg, const std::string& key) { return find(key).get(cfg); }

void apply_text(RunConfig& cfg, const std::string& text, const std::string& origin) {
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
    }
    set_value(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  RunConfig cfg;
  apply_text(cfg, ss.str(), path.string());
  return cfg;
}

std::string render(const RunConfig& cfg) {
  std::string out;
  for (const auto& e : entries()) out += e.key + " = " + e.get(cfg) + "\n";
  return out;
}

}  // namespace protoseg::config
