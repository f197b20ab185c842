#include "dckit/data.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include "dckit/rng.hpp"

namespace dckit::data {

void DatasetContainer::rebuild_index() {
  train_index.assign(static_cast<size_t>(classes), {});
  for (size_t i = 0; i < train_labels.size(); ++i) {
    int y = train_labels[i];
    require(y >= 0 && y < classes, ErrorKind::data,
            name + ": train label " + std::to_string(y) + " out of range [0," +
                std::to_string(classes) + ")");
    train_index[static_cast<size_t>(y)].push_back(static_cast<int64_t>(i));
  }
}

void DatasetContainer::validate() const {
  require(height > 0 && width > 0 && channels > 0 && classes > 0, ErrorKind::data,
          name + ": empty geometry");
  require(static_cast<int64_t>(train_images.size()) == n_train() * img_elems(), ErrorKind::data,
          name + ": train buffer size does not match manifest shape");
  require(static_cast<int64_t>(test_images.size()) == n_test() * img_elems(), ErrorKind::data,
          name + ": test buffer size does not match manifest shape");
  for (int y : test_labels)
    require(y >= 0 && y < classes, ErrorKind::data, name + ": test label out of range");
  require(train_index.size() == static_cast<size_t>(classes), ErrorKind::data,
          name + ": per-class index not built");
}

namespace {
Tensor gather(const std::vector<double>& images, int64_t elems, const Shape& img_shape,
              const std::vector<int64_t>& idx) {
  Shape s = img_shape;
  s.insert(s.begin(), static_cast<int64_t>(idx.size()));
  Tensor out(s);
  for (size_t i = 0; i < idx.size(); ++i)
    std::copy(images.begin() + idx[i] * elems, images.begin() + (idx[i] + 1) * elems,
              out.data() + static_cast<int64_t>(i) * elems);
  return out;
}
}  // namespace

Tensor DatasetContainer::train_batch(const std::vector<int64_t>& idx) const {
  return gather(train_images, img_elems(), {channels, height, width}, idx);
}

Tensor DatasetContainer::test_batch(const std::vector<int64_t>& idx) const {
  return gather(test_images, img_elems(), {channels, height, width}, idx);
}

std::vector<int> DatasetContainer::train_label_batch(const std::vector<int64_t>& idx) const {
  std::vector<int> out(idx.size());
  for (size_t i = 0; i < idx.size(); ++i) out[i] = train_labels[static_cast<size_t>(idx[i])];
  return out;
}

Tensor DatasetContainer::all_test() const {
  std::vector<int64_t> idx(static_cast<size_t>(n_test()));
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int64_t>(i);
  return test_batch(idx);
}

// ---- idx format ----

namespace {

uint32_t read_be32(std::istream& in, const std::string& path) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  require(static_cast<bool>(in), ErrorKind::data, path + ": truncated idx header");
  return (uint32_t(b[0]) << 24) | (uint32_t(b[1]) << 16) | (uint32_t(b[2]) << 8) | uint32_t(b[3]);
}

void load_idx_images(const std::string& path, std::vector<double>& out, int64_t& n, int64_t& h,
                     int64_t& w) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::data, path + ": cannot open");
  const uint32_t magic = read_be32(in, path);
  require(magic == 0x00000803u, ErrorKind::data,
          path + ": idx image magic mismatch (got " + std::to_string(magic) + ")");
  n = read_be32(in, path);
  h = read_be32(in, path);
  w = read_be32(in, path);
  std::vector<unsigned char> buf(static_cast<size_t>(n * h * w));
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  require(in.gcount() == static_cast<std::streamsize>(buf.size()), ErrorKind::data,
          path + ": truncated idx image buffer");
  out.resize(buf.size());
  for (size_t i = 0; i < buf.size(); ++i) out[i] = buf[i] / 255.0;
}

void load_idx_labels(const std::string& path, std::vector<int>& out) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::data, path + ": cannot open");
  const uint32_t magic = read_be32(in, path);
  require(magic == 0x00000801u, ErrorKind::data,
          path + ": idx label magic mismatch (got " + std::to_string(magic) + ")");
  const uint32_t n = read_be32(in, path);
  std::vector<unsigned char> buf(n);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  require(in.gcount() == static_cast<std::streamsize>(buf.size()), ErrorKind::data,
          path + ": truncated idx label buffer");
  out.assign(buf.begin(), buf.end());
}

bool file_exists(const std::string& p) {
  std::ifstream f(p);
  return static_cast<bool>(f);
}

}  // namespace

DatasetContainer load_idx(const std::string& dir) {
  DatasetContainer ds;
  ds.name = dir;
  ds.source = "idx";
  ds.unit_range = true;
  ds.channels = 1;
  int64_t n = 0;
  load_idx_images(dir + "/train-images-idx3-ubyte", ds.train_images, n, ds.height, ds.width);
  load_idx_labels(dir + "/train-labels-idx1-ubyte", ds.train_labels);
  require(static_cast<int64_t>(ds.train_labels.size()) == n, ErrorKind::data,
          dir + ": image/label count mismatch");
  if (file_exists(dir + "/t10k-images-idx3-ubyte")) {
    int64_t nt = 0, h = 0, w = 0;
    load_idx_images(dir + "/t10k-images-idx3-ubyte", ds.test_images, nt, h, w);
    load_idx_labels(dir + "/t10k-labels-idx1-ubyte", ds.test_labels);
    require(h == ds.height && w == ds.width, ErrorKind::data, dir + ": split geometry mismatch");
    require(static_cast<int64_t>(ds.test_labels.size()) == nt, ErrorKind::data,
            dir + ": test image/label count mismatch");
  }
  int maxlab = 0;
  for (int y : ds.train_labels) maxlab = std::max(maxlab, y);
  for (int y : ds.test_labels) maxlab = std::max(maxlab, y);
  ds.classes = maxlab + 1;
  ds.rebuild_index();
  ds.validate();
  return ds;
}

// ---- raw f32 format (manifest handled in io.cpp, buffers here) ----

namespace {
void read_f32_file(const std::string& path, std::vector<double>& out) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::data, path + ": cannot open");
  in.seekg(0, std::ios::end);
  const auto bytes = static_cast<size_t>(in.tellg());
  in.seekg(0);
  require(bytes % 4 == 0, ErrorKind::data, path + ": f32 buffer has trailing bytes");
  std::vector<float> buf(bytes / 4);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(bytes));
  require(in.gcount() == static_cast<std::streamsize>(bytes), ErrorKind::data,
          path + ": truncated f32 buffer");
  out.assign(buf.begin(), buf.end());
}

void read_i32_file(const std::string& path, std::vector<int>& out) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::data, path + ": cannot open");
  in.seekg(0, std::ios::end);
  const auto bytes = static_cast<size_t>(in.tellg());
  in.seekg(0);
  require(bytes % 4 == 0, ErrorKind::data, path + ": i32 buffer has trailing bytes");
  std::vector<int32_t> buf(bytes / 4);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(bytes));
  require(in.gcount() == static_cast<std::streamsize>(bytes), ErrorKind::data,
          path + ": truncated i32 buffer");
  out.assign(buf.begin(), buf.end());
}
}  // namespace

// manifest is plain JSON; parsed with a minimal reader in io.cpp. Declared
// there to keep the json dependency out of this translation unit.
DatasetContainer load_rawf32_impl(const std::string& dir, const std::string& name, int64_t h,
                                  int64_t w, int64_t c, int64_t classes, bool unit_range,
                                  const std::string& train_images, const std::string& train_labels,
                                  const std::string& test_images, const std::string& test_labels) {
  DatasetContainer ds;
  ds.name = name;
  ds.source = "raw-f32";
  ds.height = h;
  ds.width = w;
  ds.channels = c;
  ds.classes = classes;
  ds.unit_range = unit_range;
  read_f32_file(dir + "/" + train_images, ds.train_images);
  read_i32_file(dir + "/" + train_labels, ds.train_labels);
  if (!test_images.empty()) {
    read_f32_file(dir + "/" + test_images, ds.test_images);
    read_i32_file(dir + "/" + test_labels, ds.test_labels);
  }
  ds.rebuild_index();
  ds.validate();
  return ds;
}

// ---- builtin generators ----

DatasetContainer make_finegrained2(uint64_t seed, int variant, int64_t train_per_class,
                                   int64_t test_per_class) {
  constexpr int64_t S = 16;
  constexpr double kCommonAmp = 4.0;  // shared low-frequency pattern
  constexpr double kDiscrAmp = 1.0;   // class-signed patch

  // Class-common pattern: smooth cosine ridge, orientation set by variant.
  std::vector<double> common(S * S), discr(S * S, 0.0);
  const double or_i[] = {0.5, 1.0, 0.0};
  const double or_j[] = {0.5, 0.0, 1.0};
  const int v = ((variant % 3) + 3) % 3;
  double cn = 0.0;
  for (int64_t i = 0; i < S; ++i)
    for (int64_t j = 0; j < S; ++j) {
      const double phase = 2.0 * M_PI * (or_i[v] * i + or_j[v] * j) / double(S);
      const double val = std::cos(phase) * std::cos(phase);
      common[i * S + j] = val;
      cn += val * val;
    }
  cn = std::sqrt(cn);
  for (auto& x : common) x /= cn;

  // Discriminative patch: 4x4 block, position set by variant, unit norm.
  const int pr[] = {3, 9, 3};
  const int pc[] = {3, 9, 9};
  for (int64_t i = pr[v]; i < pr[v] + 4; ++i)
    for (int64_t j = pc[v]; j < pc[v] + 4; ++j) discr[i * S + j] = 0.25;

  DatasetContainer ds;
  ds.name = "finegrained2.v" + std::to_string(v);
  ds.source = "builtin";
  ds.height = S;
  ds.width = S;
  ds.channels = 1;
  ds.classes = 2;
  std::mt19937_64 rng(mix64(seed ^ hash_name("finegrained2") ^ uint64_t(v) * 0x9e37ull));
  std::normal_distribution<double> noise(0.0, 1.0);

  auto emit = [&](std::vector<double>& images, std::vector<int>& labels, int64_t per_class) {
    for (int64_t k = 0; k < 2 * per_class; ++k) {
      const int y = static_cast<int>(k % 2);
      const double sgn = y == 1 ? 1.0 : -1.0;
      labels.push_back(y);
      for (int64_t p = 0; p < S * S; ++p)
        images.push_back(sgn * kDiscrAmp * discr[p] + kCommonAmp * common[p] + noise(rng));
    }
  };
  emit(ds.train_images, ds.train_labels, train_per_class);
  emit(ds.test_images, ds.test_labels, test_per_class);
  ds.rebuild_index();
  ds.validate();
  return ds;
}

DatasetContainer subset_by_class(const DatasetContainer& ds, const std::vector<int>& keep,
                                 bool relabel) {
  require(!keep.empty(), ErrorKind::data, "subset_by_class: empty class list");
  std::vector<int> map(static_cast<size_t>(ds.classes), -1);
  for (size_t i = 0; i < keep.size(); ++i) {
    require(keep[i] >= 0 && keep[i] < ds.classes, ErrorKind::data,
            "subset_by_class: class " + std::to_string(keep[i]) + " does not exist");
    map[static_cast<size_t>(keep[i])] = relabel ? static_cast<int>(i) : keep[i];
  }
  DatasetContainer out;
  out.name = ds.name + ".subset";
  out.source = ds.source;
  out.height = ds.height;
  out.width = ds.width;
  out.channels = ds.channels;
  out.unit_range = ds.unit_range;
  out.classes = relabel ? static_cast<int64_t>(keep.size()) : ds.classes;
  const int64_t elems = ds.img_elems();
  auto filter = [&](const std::vector<double>& imgs, const std::vector<int>& labs,
                    std::vector<double>& oimgs, std::vector<int>& olabs) {
    for (size_t i = 0; i < labs.size(); ++i) {
      const int m = map[static_cast<size_t>(labs[i])];
      if (m < 0) continue;
      olabs.push_back(m);
      oimgs.insert(oimgs.end(), imgs.begin() + static_cast<int64_t>(i) * elems,
                   imgs.begin() + static_cast<int64_t>(i + 1) * elems);
    }
  };
  filter(ds.train_images, ds.train_labels, out.train_images, out.train_labels);
  filter(ds.test_images, ds.test_labels, out.test_images, out.test_labels);
  require(!out.train_labels.empty(), ErrorKind::data, "subset_by_class: empty result");
  out.rebuild_index();
  out.validate();
  return out;
}

DatasetContainer shift_labels(const DatasetContainer& ds, int offset, int64_t total_classes) {
  require(offset >= 0 && offset + ds.classes <= total_classes, ErrorKind::data,
          "shift_labels: range does not fit in total_classes");
  DatasetContainer out = ds;
  out.classes = total_classes;
  for (auto& y : out.train_labels) y += offset;
  for (auto& y : out.test_labels) y += offset;
  out.rebuild_index();
  out.validate();
  return out;
}

void standardize(DatasetContainer& ds) {
  const int64_t elems = ds.img_elems();
  const int64_t hw = ds.height * ds.width;
  for (int64_t c = 0; c < ds.channels; ++c) {
    double sum = 0.0, sq = 0.0;
    int64_t count = 0;
    for (int64_t i = 0; i < ds.n_train(); ++i)
      for (int64_t p = 0; p < hw; ++p) {
        const double v = ds.train_images[static_cast<size_t>(i * elems + c * hw + p)];
        sum += v;
        sq += v * v;
        ++count;
      }
    const double mean = sum / double(count);
    const double sd = std::sqrt(std::max(sq / double(count) - mean * mean, 1e-12));
    auto apply = [&](std::vector<double>& imgs, int64_t n) {
      for (int64_t i = 0; i < n; ++i)
        for (int64_t p = 0; p < hw; ++p) {
          auto& v = imgs[static_cast<size_t>(i * elems + c * hw + p)];
          v = (v - mean) / sd;
        }
    };
    apply(ds.train_images, ds.n_train());
    apply(ds.test_images, ds.n_test());
  }
  ds.unit_range = false;
}

}  // namespace dckit::data
