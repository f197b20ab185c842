#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "dckit/condense.hpp"
#include "dckit/io.hpp"
#include "dckit/toy.hpp"
#include "testutil.hpp"

using namespace dckit;
using namespace dckit::cond;
using testutil::random_tensor;

namespace {

// Builds a small 2-class matching instance around a given model.
struct Instance {
  data::DatasetContainer ds;
  nn::Model model;
  SyntheticSet synth;
  CondenseConfig cfg;

  MatchInputs inputs(const nn::Binding& binding, const Var& synth_var,
                     std::vector<std::string>* warnings = nullptr) const {
    MatchInputs in;
    in.model = &model;
    in.binding = &binding;
    in.layout = &synth;
    in.synth_images = synth_var;
    in.distance = cfg.distance;
    in.loss = cfg.loss;
    in.warnings = warnings;
    for (int64_t c = 0; c < ds.classes; ++c) {
      in.real_batches.push_back(ds.train_batch(ds.train_index[size_t(c)]));
      in.real_labels.push_back(ds.train_label_batch(ds.train_index[size_t(c)]));
    }
    return in;
  }
};

Instance make_instance(uint64_t seed, nn::ModelKind kind, DistanceKind dist,
                       int64_t per_class = 6, int64_t ipc = 1) {
  Instance inst;
  inst.ds = data::make_finegrained2(seed, 0, per_class, 4);
  nn::Hyper h;
  h.in_c = 1;
  h.in_h = 16;
  h.in_w = 16;
  h.classes = 2;
  h.width = 4;
  h.depth = 2;
  h.hidden = {8};
  inst.model = nn::build(kind, h, nn::InitSpec{seed + 1});
  std::mt19937_64 rng(seed + 2);
  inst.synth = init_synthetic(inst.ds, ipc, InitStrategy::gaussian_noise, rng);
  inst.cfg.distance = dist;
  inst.cfg.ipc = ipc;
  return inst;
}

}  // namespace

TEST_CASE("select_mode single cases") {
  CondenseConfig cfg;
  cfg.warmup_outer = 250;
  cfg.warmup_inner = 10;

  cfg.warmup = WarmupPolicy::bilevel;
  CHECK(select_mode(0, 0, cfg) == MatchMode::class_wise);
  CHECK(select_mode(300, 15, cfg) == MatchMode::class_collective);
  CHECK(select_mode(300, 5, cfg) == MatchMode::class_wise);
  CHECK(select_mode(100, 400, cfg) == MatchMode::class_wise);

  cfg.warmup = WarmupPolicy::simple;
  CHECK(select_mode(0, 15, cfg) == MatchMode::class_collective);
  CHECK(select_mode(999, 9, cfg) == MatchMode::class_wise);

  cfg.warmup = WarmupPolicy::none;
  cfg.matching_mode = MatchMode::class_wise;
  CHECK(select_mode(500, 500, cfg) == MatchMode::class_wise);
  cfg.matching_mode = MatchMode::class_collective;
  CHECK(select_mode(0, 0, cfg) == MatchMode::class_collective);

  cfg.warmup = WarmupPolicy::bilevel;
  cfg.warmup_combine = WarmupCombine::all;
  CHECK(select_mode(100, 400, cfg) == MatchMode::class_collective);
  CHECK(select_mode(100, 5, cfg) == MatchMode::class_wise);
}

TEST_CASE("mode schedule matches its closed-form predicate on a grid") {
  CondenseConfig cfg;
  cfg.warmup_outer = 25;
  cfg.warmup_inner = 10;
  for (auto policy : {WarmupPolicy::none, WarmupPolicy::simple, WarmupPolicy::bilevel}) {
    cfg.warmup = policy;
    for (int64_t o = 0; o <= 60; ++o)
      for (int64_t i = 0; i <= 40; ++i) {
        MatchMode want;
        if (policy == WarmupPolicy::none)
          want = cfg.matching_mode;
        else if (policy == WarmupPolicy::simple)
          want = i < 10 ? MatchMode::class_wise : MatchMode::class_collective;
        else
          want = (o < 25 || i < 10) ? MatchMode::class_wise : MatchMode::class_collective;
        REQUIRE(select_mode(o, i, cfg) == want);
      }
  }
}

TEST_CASE("gradient distance identities") {
  auto inst = make_instance(31, nn::ModelKind::mlp, DistanceKind::l2);
  nn::Binding bd = nn::bind(inst.model, true);
  std::mt19937_64 rng(5);
  auto batch = random_tensor({3, 1, 16, 16}, rng);
  Var loss = nn::batch_loss(nn::LossKind::cross_entropy,
                            nn::forward(inst.model, bd, Var::constant(batch)), {0, 1, 0});
  auto g = nn::per_layer_grads(inst.model, bd, loss, false);

  for (auto kind : {DistanceKind::l2, DistanceKind::layerwise_cosine}) {
    Var d = gradient_distance(g, g, kind);
    CHECK(d.value().item() == doctest::Approx(0.0).epsilon(1e-9));
  }

  // single slice, antiparallel -> cosine distance 2
  std::vector<std::pair<std::string, Var>> a{{"b", Var::constant(Tensor({1, 3}, {1, 2, 3}))}};
  std::vector<std::pair<std::string, Var>> b{{"b", Var::constant(Tensor({1, 3}, {-1, -2, -3}))}};
  CHECK(gradient_distance(a, b, DistanceKind::layerwise_cosine).value().item() ==
        doctest::Approx(2.0));

  // l2 equals the brute-force flattened norm, summed per layer
  double want = 0.0;
  std::vector<std::pair<std::string, Var>> shifted;
  std::mt19937_64 rng2(9);
  for (auto& [name, gv] : g) {
    Tensor noise = random_tensor(gv.value().shape(), rng2, -0.1, 0.1);
    Tensor other(gv.value().shape());
    double sq = 0.0;
    for (int64_t i = 0; i < noise.numel(); ++i) {
      other[i] = gv.value()[i] + noise[i];
      sq += noise[i] * noise[i];
    }
    want += std::sqrt(sq);
    shifted.emplace_back(name, Var::constant(other));
  }
  CHECK(gradient_distance(g, shifted, DistanceKind::l2).value().item() ==
        doctest::Approx(want).epsilon(1e-9));

  // zero-norm slice counts as orthogonal (distance 1) and warns
  std::vector<std::string> warnings;
  std::vector<std::pair<std::string, Var>> z{{"b", Var::constant(Tensor({1, 3}))}};
  CHECK(gradient_distance(a, z, DistanceKind::layerwise_cosine, &warnings).value().item() ==
        doctest::Approx(1.0));
  CHECK(warnings.size() == 1);
}

TEST_CASE("perfect match gives zero loss; additivity over classes") {
  // synthetic == the real batch itself (ipc = per-class count)
  auto inst = make_instance(17, nn::ModelKind::mlp, DistanceKind::l2, 4, 4);
  for (int64_t c = 0; c < 2; ++c) {
    Tensor b = inst.ds.train_batch(inst.ds.train_index[size_t(c)]);
    std::copy(b.data(), b.data() + b.numel(),
              inst.synth.images.data() + c * 4 * inst.ds.img_elems());
  }
  nn::Binding bd = nn::bind(inst.model, true);
  Var sv(inst.synth.images, true);
  auto in = inst.inputs(bd, sv);
  CHECK(classwise_loss(in).value().item() == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(collective_loss(in).value().item() == doctest::Approx(0.0).epsilon(1e-9));

  // additivity: class-wise total equals the sum of per-class distances
  auto inst2 = make_instance(18, nn::ModelKind::mlp, DistanceKind::l2);
  nn::Binding bd2 = nn::bind(inst2.model, true);
  Var sv2(inst2.synth.images, true);
  auto in2 = inst2.inputs(bd2, sv2);
  const double total = classwise_loss(in2).value().item();

  double parts = 0.0;
  for (int64_t c = 0; c < 2; ++c) {
    Instance single = inst2;
    single.ds = data::subset_by_class(inst2.ds, {int(c)}, true);
    SyntheticSet ss;
    ss.classes = 1;
    ss.ipc = 1;
    ss.labels = {0};
    ss.images = Tensor({1, 1, 16, 16});
    std::copy(inst2.synth.images.data() + c * 256, inst2.synth.images.data() + (c + 1) * 256,
              ss.images.data());
    single.synth = ss;
    nn::Binding sbd = nn::bind(single.model, true);
    Var ssv(ss.images, true);
    auto sin = single.inputs(sbd, ssv);
    parts += classwise_loss(sin).value().item();
  }
  CHECK(total == doctest::Approx(parts).epsilon(1e-9));
}

TEST_CASE("with one class the two losses agree bit-for-bit") {
  auto inst = make_instance(23, nn::ModelKind::mlp, DistanceKind::layerwise_cosine);
  inst.ds = data::subset_by_class(inst.ds, {0}, true);
  std::mt19937_64 rng(3);
  inst.synth = init_synthetic(inst.ds, 2, InitStrategy::gaussian_noise, rng);

  nn::Binding bd = nn::bind(inst.model, true);
  Var sv(inst.synth.images, true);
  auto in = inst.inputs(bd, sv);
  const double a = classwise_loss(in).value().item();
  const double b = collective_loss(in).value().item();
  CHECK(a == b);  // bitwise

  Tensor ga = grad(classwise_loss(in), {sv}, false)[0].value();
  Tensor gb = grad(collective_loss(in), {sv}, false)[0].value();
  CHECK(ga.raw() == gb.raw());
}

TEST_CASE("matching-loss gradients never reach the real side") {
  auto inst = make_instance(29, nn::ModelKind::mlp, DistanceKind::layerwise_cosine);
  nn::Binding bd = nn::bind(inst.model, true);
  Var sv(inst.synth.images, true);

  // hand-build inputs with tracked real batches
  MatchInputs in;
  in.model = &inst.model;
  in.binding = &bd;
  in.layout = &inst.synth;
  in.synth_images = sv;
  in.distance = inst.cfg.distance;
  in.loss = inst.cfg.loss;
  std::vector<Var> tracked_real;
  for (int64_t c = 0; c < 2; ++c) {
    in.real_batches.push_back(inst.ds.train_batch(inst.ds.train_index[size_t(c)]));
    in.real_labels.push_back(inst.ds.train_label_batch(inst.ds.train_index[size_t(c)]));
    tracked_real.emplace_back(in.real_batches.back(), true);
  }
  for (auto mode : {MatchMode::class_wise, MatchMode::class_collective}) {
    Var loss = matching_loss(mode, in);
    auto gs = grad(loss, tracked_real, false);
    for (auto& g : gs)
      for (int64_t i = 0; i < g.value().numel(); ++i) CHECK(g.value()[i] == 0.0);
    // but it does reach the synthetic pixels
    Tensor gsy = grad(loss, {sv}, false)[0].value();
    double nrm = 0;
    for (int64_t i = 0; i < gsy.numel(); ++i) nrm += gsy[i] * gsy[i];
    CHECK(nrm > 0.0);
  }
}

TEST_CASE("meta-gradient matches finite differences (small instance)") {
  for (auto kind : {nn::ModelKind::mlp}) {
    auto inst = make_instance(41, kind, DistanceKind::layerwise_cosine, 4, 1);
    auto eval_loss = [&](const Tensor& pixels, MatchMode mode) {
      nn::Binding bd = nn::bind(inst.model, true);
      Var sv(pixels, true);
      auto in = inst.inputs(bd, sv);
      return matching_loss(mode, in).value().item();
    };
    for (auto mode : {MatchMode::class_wise, MatchMode::class_collective}) {
      nn::Binding bd = nn::bind(inst.model, true);
      Var sv(inst.synth.images, true);
      auto in = inst.inputs(bd, sv);
      Tensor meta = grad(matching_loss(mode, in), {sv}, false)[0].value();

      std::mt19937_64 rng(77);
      std::uniform_int_distribution<int64_t> pick(0, inst.synth.images.numel() - 1);
      double max_rel = 0;
      for (int k = 0; k < 24; ++k) {
        const int64_t c = pick(rng);
        Tensor up = inst.synth.images, dn = inst.synth.images;
        up[c] += 1e-4;
        dn[c] -= 1e-4;
        const double fd = (eval_loss(up, mode) - eval_loss(dn, mode)) / 2e-4;
        const double ad = meta[c];
        max_rel = std::max(max_rel,
                           std::abs(fd - ad) / std::max({std::abs(fd), std::abs(ad), 1e-7}));
      }
      CHECK(max_rel < 1e-2);
    }
  }
}

TEST_CASE("constructed cancellation: collective sees zero where class-wise does not") {
  // real per-class mean gradients are g and -g; synthetic ones are g+delta and
  // -g-delta. The deltas cancel in the collective sum.
  const int64_t d = 4;
  data::DatasetContainer ds;
  ds.name = "cancel";
  ds.height = 1;
  ds.width = d;
  ds.channels = 1;
  ds.classes = 2;
  const std::vector<double> gvec = {0.05, -0.03, 0.02, 0.04};
  for (int i = 0; i < 3; ++i) {  // class 0 = sign -1; class 1 = sign +1
    for (double v : gvec) ds.train_images.push_back(-v);
    ds.train_labels.push_back(0);
    for (double v : gvec) ds.train_images.push_back(-v);
    ds.train_labels.push_back(1);
  }
  ds.rebuild_index();
  ds.validate();

  nn::Hyper h;
  h.in_w = d;
  nn::Model model = nn::build(nn::ModelKind::linear, h, nn::InitSpec{2});
  SyntheticSet synth;
  synth.classes = 2;
  synth.ipc = 1;
  synth.labels = {0, 1};
  synth.images = Tensor({2, 1, 1, d});
  const std::vector<double> delta = {0.01, 0.01, -0.02, 0.005};
  for (int64_t j = 0; j < d; ++j) {
    synth.images[j] = -(gvec[size_t(j)] + delta[size_t(j)]);      // class 0 (sign -1)
    synth.images[d + j] = -(gvec[size_t(j)] + delta[size_t(j)]);  // class 1 (sign +1)
  }

  nn::Binding bd = nn::bind(model, true);
  Var sv(synth.images, true);
  MatchInputs in;
  in.model = &model;
  in.binding = &bd;
  in.layout = &synth;
  in.synth_images = sv;
  in.distance = DistanceKind::l2;
  in.loss = nn::LossKind::hinge;
  for (int64_t c = 0; c < 2; ++c) {
    in.real_batches.push_back(ds.train_batch(ds.train_index[size_t(c)]));
    in.real_labels.push_back(ds.train_label_batch(ds.train_index[size_t(c)]));
  }
  const double coll = collective_loss(in).value().item();
  const double cw = classwise_loss(in).value().item();
  CHECK(coll == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(cw > 1e-3);
}

TEST_CASE("init_synthetic strategies") {
  auto ds = data::make_finegrained2(3, 0, 20, 4);
  std::mt19937_64 rng(4);
  auto s = init_synthetic(ds, 2, InitStrategy::real_sample, rng);
  CHECK(s.labels == std::vector<int>{0, 0, 1, 1});
  // every image exists in the training set
  const int64_t e = ds.img_elems();
  for (int64_t i = 0; i < s.count(); ++i) {
    bool found = false;
    for (int64_t j = 0; j < ds.n_train() && !found; ++j) {
      bool eq = true;
      for (int64_t p = 0; p < e && eq; ++p)
        eq = ds.train_images[j * e + p] == s.images[i * e + p];
      found = eq;
    }
    CHECK(found);
  }
  std::mt19937_64 r1(9), r2(9);
  auto g1 = init_synthetic(ds, 1, InitStrategy::gaussian_noise, r1);
  auto g2 = init_synthetic(ds, 1, InitStrategy::gaussian_noise, r2);
  CHECK(g1.images.raw() == g2.images.raw());
  CHECK_THROWS_AS(init_synthetic(ds, 100, InitStrategy::real_sample, rng), Error);
}

TEST_CASE("augmentation identities") {
  std::mt19937_64 rng(6);
  auto batch = random_tensor({2, 1, 8, 8}, rng);
  Var bv(batch, false);

  aug::AugParams flip;
  flip.kind = aug::TransformKind::flip;
  flip.do_flip = true;
  Tensor twice = aug::apply(aug::apply(bv, flip), flip).value();
  CHECK(twice.raw() == batch.raw());

  aug::AugParams cz;
  cz.kind = aug::TransformKind::cutout;
  CHECK(aug::apply(bv, cz).value().raw() == batch.raw());

  aug::AugParams br;
  br.kind = aug::TransformKind::brightness;
  br.delta = 0.25;
  Var cimg(Tensor::full({1, 1, 4, 4}, 0.5), false);
  Tensor bright = aug::apply(cimg, br).value();
  for (int64_t i = 0; i < bright.numel(); ++i) CHECK(bright[i] == doctest::Approx(0.75));

  // shift and scale remain differentiable w.r.t. pixels
  for (auto mk : {aug::TransformKind::crop_shift, aug::TransformKind::scale}) {
    aug::AugParams p;
    p.kind = mk;
    p.dy = 1;
    p.dx = -1;
    p.factor = 1.13;
    auto r = testutil::check_gradients(
        [&](const std::vector<Var>& v) { return sum_all(square(aug::apply(v[0], p))); }, {batch},
        rng);
    CHECK(r.max_rel_err < 1e-3);
  }
}

TEST_CASE("condense: zero outer loops returns the initialization") {
  auto ds = data::make_finegrained2(5, 0, 12, 4);
  CondenseConfig cfg;
  cfg.outer_loops = 0;
  cfg.ipc = 1;
  cfg.seed = 123;
  cfg.model_kind = nn::ModelKind::mlp;
  auto [s, log] = condense(ds, cfg);
  std::mt19937_64 rng(RngPool(cfg.seed).stream_seed("synthetic-init"));
  auto expect = init_synthetic(ds, 1, cfg.init, rng);
  CHECK(s.images.raw() == expect.images.raw());
  CHECK(log.rows.empty());
}

TEST_CASE("condense is deterministic end-to-end with augmentation off") {
  auto ds = data::make_finegrained2(11, 0, 12, 4);
  CondenseConfig cfg;
  cfg.outer_loops = 2;
  cfg.stages = 2;
  cfg.steps_per_stage = 2;
  cfg.ipc = 1;
  cfg.seed = 7;
  cfg.model_kind = nn::ModelKind::convnet;
  cfg.model_width = 4;
  cfg.model_depth = 2;
  cfg.real_batch_per_class = 6;
  cfg.warmup = WarmupPolicy::simple;
  cfg.warmup_inner = 2;
  auto [s1, l1] = condense(ds, cfg);
  auto [s2, l2] = condense(ds, cfg);
  CHECK(s1.images.raw() == s2.images.raw());
  REQUIRE(l1.rows.size() == l2.rows.size());
  for (size_t i = 0; i < l1.rows.size(); ++i) CHECK(l1.rows[i].loss == l2.rows[i].loss);
}

TEST_CASE("condense on the linear toy task recovers the class-mean direction") {
  // 2-d task as 1x1x2 images; class-wise matching with the sign classifier.
  toy::ToySpec spec;
  spec.alpha = 1.0;
  spec.beta = 4.0;
  spec.n = 4000;
  spec.seed = 3;
  auto tds = toy::sample_toy(spec);

  data::DatasetContainer ds;
  ds.name = "toylinear";
  ds.height = 1;
  ds.width = 2;
  ds.channels = 1;
  ds.classes = 2;
  for (size_t i = 0; i < tds.x.size(); ++i) {
    ds.train_images.push_back(tds.x[i][0]);
    ds.train_images.push_back(tds.x[i][1]);
    ds.train_labels.push_back(tds.y[i] == 1 ? 1 : 0);
  }
  ds.rebuild_index();
  ds.validate();

  CondenseConfig cfg;
  cfg.model_kind = nn::ModelKind::linear;
  cfg.loss = nn::LossKind::hinge;
  cfg.distance = DistanceKind::l2;
  cfg.matching_mode = MatchMode::class_wise;
  cfg.warmup = WarmupPolicy::none;
  cfg.outer_loops = 60;
  cfg.stages = 1;
  cfg.steps_per_stage = 5;
  cfg.ipc = 1;
  cfg.eta_s = 0.05;
  cfg.real_batch_per_class = 64;
  cfg.init = InitStrategy::gaussian_noise;
  cfg.seed = 19;
  auto [s, log] = condense(ds, cfg);

  // class 1 (sign +1) synthetic direction vs mu+ of the toy dataset
  toy::Vec2 s1{s.images[2], s.images[3]};
  const double cosang = toy::dot(s1, tds.mu_pos) / (toy::norm(s1) * toy::norm(tds.mu_pos));
  CHECK(std::acos(std::min(1.0, std::abs(cosang))) < 0.1);
}

TEST_CASE("condense falls back to replacement sampling for tiny classes") {
  auto ds = data::make_finegrained2(13, 0, 3, 2);
  CondenseConfig cfg;
  cfg.outer_loops = 1;
  cfg.stages = 1;
  cfg.steps_per_stage = 1;
  cfg.ipc = 1;
  cfg.real_batch_per_class = 8;  // bigger than the class
  cfg.model_kind = nn::ModelKind::mlp;
  auto [s, log] = condense(ds, cfg);
  bool warned = false;
  for (const auto& w : log.warnings) warned |= w.find("replacement") != std::string::npos;
  CHECK(warned);
}
