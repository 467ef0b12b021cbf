#include "protoseg/segmodel/checkpoint.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>
#include <vector>

namespace protoseg::model {

namespace {

struct Entry {
  std::string name;
  std::string dtype;
  num::Shape shape;
  std::vector<unsigned char> payload;
};

template <typename U>
void put_le(std::vector<unsigned char>& out, U bits) {
  for (std::size_t b = 0; b < sizeof(U); ++b) out.push_back(static_cast<unsigned char>(bits >> (8 * b)));
}

template <typename U>
U get_le(const unsigned char* p) {
  U v = 0;
  for (std::size_t b = 0; b < sizeof(U); ++b) v |= static_cast<U>(p[b]) << (8 * b);
  return v;
}

std::size_t dtype_size(const std::string& dtype) {
  if (dtype == "f64") return 8;
  if (dtype == "i32") return 4;
  if (dtype == "u8") return 1;
  throw CheckpointError("checkpoint: unknown dtype " + dtype);
}

Entry f64_entry(const std::string& name, const Tensor& t) {
  Entry e{name, "f64", t.shape(), {}};
  for (const double v : t.data()) put_le(e.payload, std::bit_cast<std::uint64_t>(v));
  return e;
}

Entry i32_entry(const std::string& name, num::Shape shape, const std::vector<std::int32_t>& v) {
  Entry e{name, "i32", std::move(shape), {}};
  for (const auto x : v) put_le(e.payload, static_cast<std::uint32_t>(x));
  return e;
}

std::string fmt_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& s) {
  double v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw CheckpointError("checkpoint: bad number '" + s + "'");
  }
  return v;
}

std::string join_widths(const std::vector<std::size_t>& w) {
  std::string out;
  for (std::size_t i = 0; i < w.size(); ++i) out += (i ? "," : "") + std::to_string(w[i]);
  return out;
}

std::vector<std::size_t> split_widths(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(std::stoul(tok));
  return out;
}

std::vector<double> read_f64(const Entry& e) {
  std::vector<double> v(e.payload.size() / 8);
  for (std::size_t i = 0; i < v.size(); ++i)
    v[i] = std::bit_cast<double>(get_le<std::uint64_t>(e.payload.data() + 8 * i));
  return v;
}

std::vector<std::int32_t> read_i32(const Entry& e) {
  std::vector<std::int32_t> v(e.payload.size() / 4);
  for (std::size_t i = 0; i < v.size(); ++i)
    v[i] = static_cast<std::int32_t>(get_le<std::uint32_t>(e.payload.data() + 4 * i));
  return v;
}

const Entry& require(const std::vector<Entry>& entries, const std::string& name,
                     const std::string& dtype, const num::Shape& shape) {
  for (const auto& e : entries) {
    if (e.name != name) continue;
    if (e.dtype != dtype || e.shape != shape) {
      throw CheckpointError("checkpoint: tensor " + name + " is " + e.dtype + num::shape_str(e.shape) +
                            ", expected " + dtype + num::shape_str(shape));
    }
    return e;
  }
  throw CheckpointError("checkpoint: missing tensor " + name);
}

void load_into(Tensor& dst, const Entry& e) {
  const auto v = read_f64(e);
  std::copy(v.begin(), v.end(), dst.mutable_data().begin());
}

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const ProtoSegModel& model,
                      const std::string& stage, const std::map<std::string, std::string>& meta) {
  const auto& bb = model.backbone.config();
  std::map<std::string, std::string> all = meta;
  all["model.num_classes"] = std::to_string(model.num_classes);
  all["model.epsilon"] = fmt_double(model.epsilon);
  all["backbone.variant"] = variant_name(bb.variant);
  all["backbone.widths"] = join_widths(bb.widths);
  all["backbone.stride"] = std::to_string(bb.stride);
  all["backbone.out_dim"] = std::to_string(bb.out_dim);

  std::vector<Entry> entries;
  for (const auto& p : model.backbone.core()) entries.push_back(f64_entry(p.name, p.value));
  for (const auto& p : model.backbone.projection()) entries.push_back(f64_entry(p.name, p.value));
  const auto& protos = model.prototypes;
  const std::size_t m = protos.count();
  entries.push_back(f64_entry("prototypes.vectors", protos.vectors));
  entries.push_back(i32_entry("prototypes.class_of", {m}, {protos.class_of.begin(), protos.class_of.end()}));
  Entry active{"prototypes.active", "u8", {m}, {}};
  for (const bool a : protos.active) active.payload.push_back(a ? 1 : 0);
  entries.push_back(std::move(active));
  std::vector<std::int32_t> prov(m * 3, -1);
  for (std::size_t j = 0; j < m && j < model.provenance.size(); ++j) {
    if (model.provenance[j]) std::copy(model.provenance[j]->begin(), model.provenance[j]->end(), prov.begin() + static_cast<std::ptrdiff_t>(3 * j));
  }
  entries.push_back(i32_entry("prototypes.provenance", {m, 3}, prov));
  entries.push_back(f64_entry("last_layer.weights", model.last_layer.weights));

  std::ofstream os(path, std::ios::binary);
  if (!os) throw CheckpointError("cannot open " + path.string() + " for writing");
  os << kCheckpointMagic << '\n' << "stage " << stage << '\n';
  for (const auto& [k, v] : all) {
    if (k.find_first_of(" \n") != std::string::npos || v.find('\n') != std::string::npos) {
      throw CheckpointError("checkpoint: meta entries must be single tokens/lines");
    }
    os << "meta " << k << ' ' << v << '\n';
  }
  for (const auto& e : entries) {
    os << "tensor " << e.name << ' ' << e.dtype;
    for (auto d : e.shape) os << ' ' << d;
    os << '\n';
  }
  os << "end\n";
  for (const auto& e : entries)
    os.write(reinterpret_cast<const char*>(e.payload.data()), static_cast<std::streamsize>(e.payload.size()));
  if (!os) throw CheckpointError("short write to " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint " + path.string());
  std::string line;
  if (!std::getline(is, line) || line != kCheckpointMagic) {
    throw CheckpointError(path.string() + ": not a PSEG1 checkpoint (bad magic)");
  }
  Checkpoint ck;
  std::vector<Entry> entries;
  bool ended = false;
  while (std::getline(is, line)) {
    std::istringstream ls(line);
    std::string kind;
    ls >> kind;
    if (kind == "end") {
      ended = true;
      break;
    } else if (kind == "stage") {
      ls >> ck.stage;
    } else if (kind == "meta") {
      std::string key, value;
      ls >> key;
      std::getline(ls >> std::ws, value);
      ck.meta[key] = value;
    } else if (kind == "tensor") {
      Entry e;
      ls >> e.name >> e.dtype;
      std::size_t d;
      while (ls >> d) e.shape.push_back(d);
      e.payload.resize(num::numel(e.shape) * dtype_size(e.dtype));
      entries.push_back(std::move(e));
    } else {
      throw CheckpointError(path.string() + ": malformed manifest line '" + line + "'");
    }
  }
  if (!ended) throw CheckpointError(path.string() + ": manifest not terminated");
  for (auto& e : entries) {
    is.read(reinterpret_cast<char*>(e.payload.data()), static_cast<std::streamsize>(e.payload.size()));
    if (static_cast<std::size_t>(is.gcount()) != e.payload.size()) {
      throw CheckpointError(path.string() + ": truncated payload for " + e.name);
    }
  }

  auto meta = [&](const std::string& key) {
    auto it = ck.meta.find(key);
    if (it == ck.meta.end()) throw CheckpointError(path.string() + ": missing meta " + key);
    return it->second;
  };
  BackboneConfig bb;
  bb.variant = parse_variant(meta("backbone.variant"));
  bb.widths = split_widths(meta("backbone.widths"));
  bb.stride = std::stoul(meta("backbone.stride"));
  bb.out_dim = std::stoul(meta("backbone.out_dim"));

  ProtoSegModel& m = ck.model;
  m.num_classes = std::stoi(meta("model.num_classes"));
  m.epsilon = parse_double(meta("model.epsilon"));
  m.backbone = Backbone(bb, 0);
  for (auto* group : {&m.backbone.core(), &m.backbone.projection()}) {
    for (auto& p : *group) load_into(p.value, require(entries, p.name, "f64", p.value.shape()));
  }
  const auto& cls = [&]() -> const Entry& {
    for (const auto& e : entries)
      if (e.name == "prototypes.class_of") return e;
    throw CheckpointError(path.string() + ": missing tensor prototypes.class_of");
  }();
  if (cls.shape.size() != 1) throw CheckpointError(path.string() + ": bad prototypes.class_of");
  const std::size_t count = cls.shape[0];
  const auto c = static_cast<std::size_t>(m.num_classes);
  const auto class_of = read_i32(cls);
  m.prototypes.class_of.assign(class_of.begin(), class_of.end());
  for (const int k : m.prototypes.class_of) {
    if (k < 0 || k >= m.num_classes) throw CheckpointError(path.string() + ": prototype class out of range");
  }
  m.prototypes.vectors = Tensor(
      {count, bb.out_dim}, read_f64(require(entries, "prototypes.vectors", "f64", {count, bb.out_dim})), true);
  const auto& active = require(entries, "prototypes.active", "u8", {count});
  m.prototypes.active.assign(active.payload.begin(), active.payload.end());
  const auto prov = read_i32(require(entries, "prototypes.provenance", "i32", {count, 3}));
  m.provenance.assign(count, std::nullopt);
  for (std::size_t j = 0; j < count; ++j) {
    if (prov[3 * j] >= 0) m.provenance[j] = std::array<std::int32_t, 3>{prov[3 * j], prov[3 * j + 1], prov[3 * j + 2]};
  }
  m.last_layer.weights =
      Tensor({count, c}, read_f64(require(entries, "last_layer.weights", "f64", {count, c})), true);
  return ck;
}

}  // namespace protoseg::model
