#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "dckit/data.hpp"
#include "dckit/io.hpp"

using namespace dckit;
namespace fs = std::filesystem;

namespace {
std::string tmpdir() {
  auto p = fs::temp_directory_path() / "dckit_io_test";
  fs::create_directories(p);
  return p.string();
}

std::string slurp(const std::string& path) { return io::read_text(path); }
}  // namespace

TEST_CASE("idx loader on the digits fixture") {
  auto ds = data::load_idx(std::string(DCKIT_DATA_DIR) + "/digits38");
  CHECK(ds.height == 8);
  CHECK(ds.width == 8);
  CHECK(ds.channels == 1);
  CHECK(ds.n_train() > 200);
  CHECK(ds.n_test() > 40);
  double lo = 1e9, hi = -1e9;
  for (double v : ds.train_images) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  CHECK(lo >= 0.0);
  CHECK(hi <= 1.0);
  for (int y : ds.train_labels) CHECK((y == 3 || y == 8));
}

TEST_CASE("idx magic mismatch and truncation raise data errors") {
  const std::string dir = tmpdir() + "/badidx";
  fs::create_directories(dir);
  {
    std::ofstream f(dir + "/train-images-idx3-ubyte", std::ios::binary);
    const unsigned char bad[] = {0, 0, 8, 4, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0, 2};
    f.write(reinterpret_cast<const char*>(bad), sizeof(bad));
  }
  CHECK_THROWS_AS(data::load_idx(dir), Error);
  {
    std::ofstream f(dir + "/train-images-idx3-ubyte", std::ios::binary);
    const unsigned char hdr[] = {0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2};
    f.write(reinterpret_cast<const char*>(hdr), sizeof(hdr));
    const char px[3] = {1, 2, 3};  // needs 8 bytes
    f.write(px, 3);
  }
  CHECK_THROWS_AS(data::load_idx(dir), Error);
}

TEST_CASE("raw-f32 manifest/buffer mismatch raises") {
  const std::string dir = tmpdir() + "/raw";
  fs::create_directories(dir);
  io::write_f32(dir + "/imgs.bin", std::vector<double>(2 * 4, 0.5));
  io::write_i32(dir + "/labs.bin", {0, 1});
  io::write_text(dir + "/ok.json",
                 R"({"name":"t","height":2,"width":2,"channels":1,"classes":2,
                     "train_images":"imgs.bin","train_labels":"labs.bin"})");
  auto ds = data::load_rawf32(dir + "/ok.json");
  CHECK(ds.n_train() == 2);

  io::write_text(dir + "/bad.json",
                 R"({"name":"t","height":3,"width":3,"channels":1,"classes":2,
                     "train_images":"imgs.bin","train_labels":"labs.bin"})");
  CHECK_THROWS_AS(data::load_rawf32(dir + "/bad.json"), Error);
}

TEST_CASE("finegrained2 generator geometry and determinism") {
  auto a = data::make_finegrained2(7, 0, 50, 20);
  auto b = data::make_finegrained2(7, 0, 50, 20);
  auto c = data::make_finegrained2(8, 0, 50, 20);
  CHECK(a.height == 16);
  CHECK(a.classes == 2);
  CHECK(a.n_train() == 100);
  CHECK(a.n_test() == 40);
  CHECK(a.train_images == b.train_images);
  CHECK(a.train_images != c.train_images);
  CHECK(a.train_index[0].size() == 50);
  CHECK(a.train_index[1].size() == 50);
  // common pattern dominates: mean image mass far exceeds class difference
  const int64_t e = a.img_elems();
  std::vector<double> m0(e, 0.0), m1(e, 0.0);
  for (int64_t i = 0; i < a.n_train(); ++i)
    for (int64_t p = 0; p < e; ++p)
      (a.train_labels[i] == 0 ? m0 : m1)[p] += a.train_images[i * e + p] / 50.0;
  double common = 0, diff = 0;
  for (int64_t p = 0; p < e; ++p) {
    common += std::abs(m0[p] + m1[p]) / 2;
    diff += std::abs(m0[p] - m1[p]) / 2;
  }
  CHECK(common > 2.0 * diff);
}

TEST_CASE("subset_by_class relabel and idempotence") {
  auto full = data::load_idx(std::string(DCKIT_DATA_DIR) + "/digits38");
  auto s1 = data::subset_by_class(full, {3, 8}, true);
  CHECK(s1.classes == 2);
  for (int y : s1.train_labels) CHECK((y == 0 || y == 1));

  auto pass = data::subset_by_class(full, {3, 8}, false);
  for (int y : pass.train_labels) CHECK((y == 3 || y == 8));

  auto s2 = data::subset_by_class(s1, {0, 1}, true);
  CHECK(s2.train_images == s1.train_images);
  CHECK(s2.train_labels == s1.train_labels);

  CHECK_THROWS_AS(data::subset_by_class(full, {4}, true), Error);
}

TEST_CASE("condensed artifact round trip is byte-identical") {
  const std::string dir = tmpdir() + "/artifact";
  fs::create_directories(dir);
  cond::SyntheticSet s;
  s.classes = 2;
  s.ipc = 3;
  s.images = Tensor({6, 1, 4, 4});
  for (int64_t i = 0; i < s.images.numel(); ++i) s.images[i] = 0.01 * double(i) - 0.3;
  s.labels = {0, 0, 0, 1, 1, 1};
  cond::CondenseConfig cfg;
  cfg.seed = 42;

  io::save_condensed(s, cfg, dir + "/set");
  auto loaded = io::load_condensed(dir + "/set");
  CHECK(loaded.set.labels == s.labels);
  CHECK(loaded.cfg.seed == 42);
  io::save_condensed(loaded.set, loaded.cfg, dir + "/set2");
  CHECK(slurp(dir + "/set.bin") == slurp(dir + "/set2.bin"));
  CHECK(slurp(dir + "/set.json") == slurp(dir + "/set2.json"));
}

TEST_CASE("config hash is sensitive to every field change") {
  cond::CondenseConfig base;
  const std::string h0 = io::config_hash(base);
  auto changed = [&](auto mutate) {
    cond::CondenseConfig c;
    mutate(c);
    return io::config_hash(c) != h0;
  };
  CHECK(changed([](auto& c) { c.ipc = 5; }));
  CHECK(changed([](auto& c) { c.eta_s = 0.2; }));
  CHECK(changed([](auto& c) { c.seed = 9; }));
  CHECK(changed([](auto& c) { c.matching_mode = cond::MatchMode::class_wise; }));
  CHECK(changed([](auto& c) { c.warmup_inner = 11; }));
  CHECK(changed([](auto& c) { c.augment = true; }));
  CHECK(changed([](auto& c) { c.tau = 0.2; }));
  CHECK(io::config_hash(base) == h0);
}

TEST_CASE("loading a truncated pixel buffer raises without partial data") {
  const std::string dir = tmpdir() + "/trunc";
  fs::create_directories(dir);
  cond::SyntheticSet s;
  s.classes = 1;
  s.ipc = 2;
  s.images = Tensor({2, 1, 2, 2});
  s.labels = {0, 0};
  cond::CondenseConfig cfg;
  io::save_condensed(s, cfg, dir + "/set");
  // truncate the pixel buffer
  auto bytes = slurp(dir + "/set.bin");
  io::write_text(dir + "/set.bin", bytes.substr(0, bytes.size() - 4));
  CHECK_THROWS_AS(io::load_condensed(dir + "/set"), Error);
}

TEST_CASE("model checkpoint round trip") {
  nn::Hyper h;
  h.in_c = 1;
  h.in_h = 8;
  h.in_w = 8;
  h.classes = 2;
  h.width = 4;
  nn::Model m = nn::build(nn::ModelKind::convnet, h, nn::InitSpec{11});
  const std::string dir = tmpdir() + "/ckpt";
  fs::create_directories(dir);
  io::save_model(m, dir + "/model");
  nn::Model l = io::load_model(dir + "/model");
  REQUIRE(l.layers.size() == m.layers.size());
  for (size_t i = 0; i < m.layers.size(); ++i) {
    CHECK(l.layers[i].name == m.layers[i].name);
    CHECK(l.layers[i].param.shape() == m.layers[i].param.shape());
    for (int64_t j = 0; j < m.layers[i].param.numel(); ++j)
      CHECK(l.layers[i].param[j] ==
            doctest::Approx(m.layers[i].param[j]).epsilon(1e-6));
  }
  io::save_model(l, dir + "/model2");
  CHECK(slurp(dir + "/model.bin") == slurp(dir + "/model2.bin"));
}

TEST_CASE("config json round trip preserves fields") {
  cond::CondenseConfig c;
  c.ipc = 7;
  c.matching_mode = cond::MatchMode::class_wise;
  c.warmup = cond::WarmupPolicy::simple;
  c.distance = cond::DistanceKind::l2;
  c.eta_s = 0.05;
  c.transforms = {aug::TransformKind::flip, aug::TransformKind::cutout};
  auto back = io::condense_config_from_json(io::condense_config_json(c));
  CHECK(io::config_hash(back) == io::config_hash(c));
}

TEST_CASE("dataset spec dispatch") {
  auto ds = io::load_dataset("builtin:finegrained2:1:5");
  CHECK(ds.classes == 2);
  CHECK_THROWS_AS(io::load_dataset("builtin:nosuch"), Error);
  CHECK_THROWS_AS(io::load_dataset("nocolon"), Error);
  CHECK_THROWS_AS(io::load_dataset("idx:/nonexistent_dir_xyz"), Error);
}
