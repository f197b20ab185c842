#include "dckit/io.hpp"

#include <bit>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "dckit/rng.hpp"

namespace dckit::io {

using json = nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "artifact buffers are little-endian; big-endian hosts unsupported");

void write_f32(const std::string& path, const std::vector<double>& values) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorKind::data, path + ": cannot open for writing");
  std::vector<float> buf(values.begin(), values.end());
  out.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * 4));
  require(static_cast<bool>(out), ErrorKind::data, path + ": write failed");
}

void write_i32(const std::string& path, const std::vector<int>& values) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorKind::data, path + ": cannot open for writing");
  std::vector<int32_t> buf(values.begin(), values.end());
  out.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * 4));
  require(static_cast<bool>(out), ErrorKind::data, path + ": write failed");
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorKind::data, path + ": cannot open for writing");
  out << text;
  require(static_cast<bool>(out), ErrorKind::data, path + ": write failed");
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::data, path + ": cannot open");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

namespace {

std::vector<float> read_f32_exact(const std::string& path, size_t count) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::data, path + ": cannot open");
  in.seekg(0, std::ios::end);
  const auto bytes = static_cast<size_t>(in.tellg());
  require(bytes == count * 4, ErrorKind::data,
          path + ": buffer has " + std::to_string(bytes) + " bytes, manifest expects " +
              std::to_string(count * 4));
  in.seekg(0);
  std::vector<float> buf(count);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(bytes));
  require(in.gcount() == static_cast<std::streamsize>(bytes), ErrorKind::data,
          path + ": truncated buffer");
  return buf;
}

std::vector<aug::TransformKind> transforms_from_json(const json& arr) {
  std::vector<aug::TransformKind> out;
  for (const auto& t : arr) out.push_back(aug::transform_from(t.get<std::string>()));
  return out;
}

json transforms_to_json(const std::vector<aug::TransformKind>& ts) {
  json arr = json::array();
  for (auto t : ts) arr.push_back(aug::to_string(t));
  return arr;
}

json config_to_json_obj(const cond::CondenseConfig& c) {
  json j;
  j["matching_mode"] = cond::to_string(c.matching_mode);
  j["warmup"] = cond::to_string(c.warmup);
  j["warmup_combine"] = c.warmup_combine == cond::WarmupCombine::any ? "any" : "all";
  j["outer_loops"] = c.outer_loops;
  j["steps_per_stage"] = c.steps_per_stage;
  j["stages"] = c.stages;
  j["warmup_outer"] = c.warmup_outer;
  j["warmup_inner"] = c.warmup_inner;
  j["eta_s"] = c.eta_s;
  j["momentum_s"] = c.momentum_s;
  j["eta_theta"] = c.eta_theta;
  j["momentum_theta"] = c.momentum_theta;
  j["real_batch_per_class"] = c.real_batch_per_class;
  j["distance"] = cond::to_string(c.distance);
  j["augment"] = c.augment;
  j["transforms"] = transforms_to_json(c.transforms);
  j["init"] = cond::to_string(c.init);
  j["ipc"] = c.ipc;
  j["seed"] = c.seed;
  j["tau"] = c.tau;
  j["class_group_size"] = c.class_group_size;
  j["model_kind"] = nn::to_string(c.model_kind);
  j["model_width"] = c.model_width;
  j["model_depth"] = c.model_depth;
  j["model_hidden"] = c.model_hidden;
  j["loss"] = c.loss == nn::LossKind::cross_entropy ? "cross_entropy" : "hinge";
  j["gram_every"] = c.gram_every;
  j["gram_cap"] = c.gram_cap;
  return j;
}

cond::CondenseConfig config_from_json_obj(const json& j) {
  cond::CondenseConfig c;
  try {
    if (j.contains("matching_mode"))
      c.matching_mode = cond::match_mode_from(j["matching_mode"].get<std::string>());
    if (j.contains("warmup")) c.warmup = cond::warmup_from(j["warmup"].get<std::string>());
    if (j.contains("warmup_combine"))
      c.warmup_combine = j["warmup_combine"].get<std::string>() == "all"
                             ? cond::WarmupCombine::all
                             : cond::WarmupCombine::any;
    c.outer_loops = j.value("outer_loops", c.outer_loops);
    c.steps_per_stage = j.value("steps_per_stage", c.steps_per_stage);
    c.stages = j.value("stages", c.stages);
    c.warmup_outer = j.value("warmup_outer", c.warmup_outer);
    c.warmup_inner = j.value("warmup_inner", c.warmup_inner);
    c.eta_s = j.value("eta_s", c.eta_s);
    c.momentum_s = j.value("momentum_s", c.momentum_s);
    c.eta_theta = j.value("eta_theta", c.eta_theta);
    c.momentum_theta = j.value("momentum_theta", c.momentum_theta);
    c.real_batch_per_class = j.value("real_batch_per_class", c.real_batch_per_class);
    if (j.contains("distance")) c.distance = cond::distance_from(j["distance"].get<std::string>());
    c.augment = j.value("augment", c.augment);
    if (j.contains("transforms")) c.transforms = transforms_from_json(j["transforms"]);
    if (j.contains("init")) c.init = cond::init_strategy_from(j["init"].get<std::string>());
    c.ipc = j.value("ipc", c.ipc);
    c.seed = j.value("seed", c.seed);
    c.tau = j.value("tau", c.tau);
    c.class_group_size = j.value("class_group_size", c.class_group_size);
    if (j.contains("model_kind"))
      c.model_kind = nn::model_kind_from(j["model_kind"].get<std::string>());
    c.model_width = j.value("model_width", c.model_width);
    c.model_depth = j.value("model_depth", c.model_depth);
    if (j.contains("model_hidden"))
      c.model_hidden = j["model_hidden"].get<std::vector<int64_t>>();
    if (j.contains("loss"))
      c.loss = j["loss"].get<std::string>() == "hinge" ? nn::LossKind::hinge
                                                       : nn::LossKind::cross_entropy;
    c.gram_every = j.value("gram_every", c.gram_every);
    c.gram_cap = j.value("gram_cap", c.gram_cap);
  } catch (const json::exception& e) {
    fail(ErrorKind::config, std::string("condense config: ") + e.what());
  }
  return c;
}

}  // namespace

std::string condense_config_json(const cond::CondenseConfig& cfg) {
  return config_to_json_obj(cfg).dump(2);
}

cond::CondenseConfig condense_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorKind::config, std::string("config parse error: ") + e.what());
  }
  return config_from_json_obj(j);
}

std::string config_hash(const cond::CondenseConfig& cfg) {
  // FNV-1a over the canonical dump; any field change reaches the hash.
  const std::string dump = config_to_json_obj(cfg).dump();
  uint64_t h = hash_name(dump);
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

void save_condensed(const cond::SyntheticSet& set, const cond::CondenseConfig& cfg,
                    const std::string& stem) {
  json j;
  j["classes"] = set.classes;
  j["ipc"] = set.ipc;
  j["shape"] = {set.images.shape()[1], set.images.shape()[2], set.images.shape()[3]};
  j["labels"] = set.labels;
  j["seed"] = cfg.seed;
  j["config_hash"] = config_hash(cfg);
  j["config"] = config_to_json_obj(cfg);
  j["pixels"] = stem.substr(stem.find_last_of('/') + 1) + ".bin";
  write_text(stem + ".json", j.dump(2));
  write_f32(stem + ".bin", set.images.raw());
}

LoadedCondensed load_condensed(const std::string& stem) {
  json j;
  try {
    j = json::parse(read_text(stem + ".json"));
  } catch (const json::exception& e) {
    fail(ErrorKind::data, stem + ".json: " + e.what());
  }
  LoadedCondensed out;
  try {
    out.set.classes = j.at("classes").get<int64_t>();
    out.set.ipc = j.at("ipc").get<int64_t>();
    out.set.labels = j.at("labels").get<std::vector<int>>();
    const auto shape = j.at("shape").get<std::vector<int64_t>>();
    require(shape.size() == 3, ErrorKind::data, stem + ": manifest shape must have 3 dims");
    const int64_t n = out.set.classes * out.set.ipc;
    require(static_cast<int64_t>(out.set.labels.size()) == n, ErrorKind::data,
            stem + ": manifest labels inconsistent with classes*ipc");
    const size_t count = static_cast<size_t>(n * shape[0] * shape[1] * shape[2]);
    const auto buf = read_f32_exact(stem + ".bin", count);
    out.set.images = Tensor({n, shape[0], shape[1], shape[2]},
                            std::vector<double>(buf.begin(), buf.end()));
    out.cfg = config_from_json_obj(j.at("config"));
    out.config_hash = j.at("config_hash").get<std::string>();
  } catch (const json::exception& e) {
    fail(ErrorKind::data, stem + ": manifest error: " + e.what());
  }
  return out;
}

void write_runlog_csv(const cond::RunLog& log, const std::string& path) {
  std::ostringstream ss;
  ss << "outer,inner,mode,loss,wall_ms\n";
  for (const auto& r : log.rows)
    ss << r.outer << "," << r.inner << "," << cond::to_string(r.mode) << "," << r.loss << ","
       << r.wall_ms << "\n";
  write_text(path, ss.str());
}

void write_gram_series(const std::vector<std::pair<int64_t, Tensor>>& snapshots,
                       const std::string& stem) {
  json j;
  j["count"] = snapshots.size();
  json steps = json::array();
  std::vector<double> all;
  int64_t n = 0;
  for (const auto& [step, k] : snapshots) {
    steps.push_back(step);
    n = k.dim(0);
    all.insert(all.end(), k.raw().begin(), k.raw().end());
  }
  j["steps"] = steps;
  j["matrix_dim"] = n;
  j["pixels"] = stem.substr(stem.find_last_of('/') + 1) + ".bin";
  write_text(stem + ".json", j.dump(2));
  write_f32(stem + ".bin", all);
}

void save_model(const nn::Model& model, const std::string& stem) {
  json j;
  j["kind"] = nn::to_string(model.kind);
  j["classes"] = model.hyper.classes;
  j["in_c"] = model.hyper.in_c;
  j["in_h"] = model.hyper.in_h;
  j["in_w"] = model.hyper.in_w;
  j["width"] = model.hyper.width;
  j["depth"] = model.hyper.depth;
  j["hidden"] = model.hyper.hidden;
  j["norm_eps"] = model.hyper.norm_eps;
  json layers = json::array();
  std::vector<double> flat;
  for (const auto& l : model.layers) {
    layers.push_back({{"name", l.name}, {"shape", l.param.shape()}});
    flat.insert(flat.end(), l.param.raw().begin(), l.param.raw().end());
  }
  j["layers"] = layers;
  write_text(stem + ".json", j.dump(2));
  write_f32(stem + ".bin", flat);
}

nn::Model load_model(const std::string& stem) {
  json j;
  try {
    j = json::parse(read_text(stem + ".json"));
  } catch (const json::exception& e) {
    fail(ErrorKind::data, stem + ".json: " + e.what());
  }
  nn::Hyper h;
  nn::ModelKind kind;
  try {
    kind = nn::model_kind_from(j.at("kind").get<std::string>());
    h.classes = j.at("classes").get<int64_t>();
    h.in_c = j.at("in_c").get<int64_t>();
    h.in_h = j.at("in_h").get<int64_t>();
    h.in_w = j.at("in_w").get<int64_t>();
    h.width = j.at("width").get<int64_t>();
    h.depth = j.at("depth").get<int>();
    h.hidden = j.at("hidden").get<std::vector<int64_t>>();
    h.norm_eps = j.at("norm_eps").get<double>();
  } catch (const json::exception& e) {
    fail(ErrorKind::data, stem + ": manifest error: " + e.what());
  }
  nn::Model m = nn::build(kind, h, nn::InitSpec{0});
  size_t total = 0;
  for (const auto& l : m.layers) total += static_cast<size_t>(l.param.numel());
  const auto buf = read_f32_exact(stem + ".bin", total);
  size_t off = 0;
  for (auto& l : m.layers) {
    for (int64_t i = 0; i < l.param.numel(); ++i) l.param[i] = buf[off + static_cast<size_t>(i)];
    off += static_cast<size_t>(l.param.numel());
  }
  return m;
}

// ---- dataset specs ----

namespace dd = dckit::data;

dd::DatasetContainer load_dataset(const std::string& spec) {
  const auto colon = spec.find(':');
  require(colon != std::string::npos, ErrorKind::config,
          "dataset spec must be <format>:<path>, got " + spec);
  const std::string format = spec.substr(0, colon);
  const std::string rest = spec.substr(colon + 1);
  if (format == "idx") return dd::load_idx(rest);
  if (format == "rawf32") return dd::load_rawf32(rest);
  if (format == "builtin") {
    std::vector<std::string> parts;
    std::istringstream ss(rest);
    std::string tok;
    while (std::getline(ss, tok, ':')) parts.push_back(tok);
    require(!parts.empty(), ErrorKind::config, "builtin dataset spec is empty");
    if (parts[0] == "finegrained2") {
      const int variant = parts.size() > 1 ? std::stoi(parts[1]) : 0;
      const uint64_t seed = parts.size() > 2 ? std::stoull(parts[2]) : 0;
      return dd::make_finegrained2(seed, variant);
    }
    fail(ErrorKind::config, "unknown builtin dataset: " + parts[0]);
  }
  fail(ErrorKind::config, "unknown dataset format: " + format);
}

}  // namespace dckit::io

// Out-of-line definition for the raw-f32 manifest loader declared in data.hpp;
// lives here so the json dependency stays in one translation unit.
namespace dckit::data {

DatasetContainer load_rawf32_impl(const std::string& dir, const std::string& name, int64_t h,
                                  int64_t w, int64_t c, int64_t classes, bool unit_range,
                                  const std::string& train_images, const std::string& train_labels,
                                  const std::string& test_images, const std::string& test_labels);

DatasetContainer load_rawf32(const std::string& manifest_path) {
  using nlohmann::json;
  json j;
  try {
    j = json::parse(io::read_text(manifest_path));
  } catch (const json::exception& e) {
    fail(ErrorKind::data, manifest_path + ": " + e.what());
  }
  std::string dir = ".";
  if (const auto slash = manifest_path.find_last_of('/'); slash != std::string::npos)
    dir = manifest_path.substr(0, slash);
  try {
    DatasetContainer ds = load_rawf32_impl(
        dir, j.value("name", manifest_path), j.at("height").get<int64_t>(),
        j.at("width").get<int64_t>(), j.at("channels").get<int64_t>(),
        j.at("classes").get<int64_t>(), j.value("unit_range", false),
        j.at("train_images").get<std::string>(), j.at("train_labels").get<std::string>(),
        j.value("test_images", ""), j.value("test_labels", ""));
    return ds;
  } catch (const json::exception& e) {
    fail(ErrorKind::data, manifest_path + ": manifest error: " + e.what());
  }
}

}  // namespace dckit::data
