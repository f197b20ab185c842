#include "dckit/condense.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "dckit/rng.hpp"

namespace dckit::cond {

const char* to_string(MatchMode m) {
  return m == MatchMode::class_wise ? "class_wise" : "class_collective";
}
const char* to_string(WarmupPolicy p) {
  switch (p) {
    case WarmupPolicy::none: return "none";
    case WarmupPolicy::simple: return "simple";
    case WarmupPolicy::bilevel: return "bilevel";
  }
  return "?";
}
const char* to_string(DistanceKind d) {
  return d == DistanceKind::layerwise_cosine ? "layerwise_cosine" : "l2";
}
const char* to_string(InitStrategy s) {
  return s == InitStrategy::real_sample ? "real_sample" : "gaussian_noise";
}

MatchMode match_mode_from(const std::string& s) {
  if (s == "class_wise" || s == "classwise") return MatchMode::class_wise;
  if (s == "class_collective" || s == "collective") return MatchMode::class_collective;
  fail(ErrorKind::config, "unknown matching mode: " + s);
}
WarmupPolicy warmup_from(const std::string& s) {
  if (s == "none") return WarmupPolicy::none;
  if (s == "simple") return WarmupPolicy::simple;
  if (s == "bilevel") return WarmupPolicy::bilevel;
  fail(ErrorKind::config, "unknown warmup policy: " + s);
}
DistanceKind distance_from(const std::string& s) {
  if (s == "layerwise_cosine" || s == "cosine") return DistanceKind::layerwise_cosine;
  if (s == "l2") return DistanceKind::l2;
  fail(ErrorKind::config, "unknown distance: " + s);
}
InitStrategy init_strategy_from(const std::string& s) {
  if (s == "real_sample") return InitStrategy::real_sample;
  if (s == "gaussian_noise") return InitStrategy::gaussian_noise;
  fail(ErrorKind::config, "unknown init strategy: " + s);
}

void CondenseConfig::validate() const {
  require(outer_loops >= 0 && steps_per_stage >= 0 && stages >= 0, ErrorKind::config,
          "condense: loop counts must be >= 0");
  require(warmup_outer >= 0 && warmup_inner >= 0, ErrorKind::config,
          "condense: warm-up thresholds must be >= 0");
  require(warmup_outer <= outer_loops || warmup == WarmupPolicy::none ||
              warmup == WarmupPolicy::simple,
          ErrorKind::config, "condense: gamma_o exceeds K_o");
  require(ipc >= 1, ErrorKind::config, "condense: ipc must be >= 1");
  require(real_batch_per_class >= 1, ErrorKind::config, "condense: batch must be >= 1");
  require(eta_s > 0.0 && eta_theta > 0.0, ErrorKind::config,
          "condense: learning rates must be positive");
}

std::vector<int64_t> SyntheticSet::class_rows(int64_t c) const {
  std::vector<int64_t> rows(static_cast<size_t>(ipc));
  for (int64_t i = 0; i < ipc; ++i) rows[static_cast<size_t>(i)] = c * ipc + i;
  return rows;
}

MatchMode select_mode(int64_t outer_idx, int64_t inner_step, const CondenseConfig& cfg) {
  require(outer_idx >= 0 && inner_step >= 0, ErrorKind::internal,
          "select_mode: negative index");
  switch (cfg.warmup) {
    case WarmupPolicy::none:
      return cfg.matching_mode;
    case WarmupPolicy::simple:
      return inner_step < cfg.warmup_inner ? MatchMode::class_wise
                                           : MatchMode::class_collective;
    case WarmupPolicy::bilevel: {
      const bool outer_warm = outer_idx < cfg.warmup_outer;
      const bool inner_warm = inner_step < cfg.warmup_inner;
      const bool warm = cfg.warmup_combine == WarmupCombine::any ? (outer_warm || inner_warm)
                                                                 : (outer_warm && inner_warm);
      return warm ? MatchMode::class_wise : MatchMode::class_collective;
    }
  }
  fail(ErrorKind::internal, "unreachable");
}

// ---- gradient distance ----

namespace {

// Slices follow the output dimension of each parameter: rank-4 kernels
// [F,C,kh,kw] slice along F, rank-2 dense weights [in,out] along out, and
// rank-1/rank-[1,n] biases form a single slice.
Var cosine_layer_distance(const Tensor& a, const Var& b, const std::string& layer,
                          std::vector<std::string>* warnings) {
  const auto& s = a.shape();
  Var dots, bn2;
  Tensor an2;
  int64_t m = 0;
  if (s.size() == 4) {
    m = s[0];
    const int64_t rest = a.numel() / m;
    an2 = Tensor({m, 1});
    for (int64_t i = 0; i < m; ++i) {
      double acc = 0.0;
      for (int64_t j = 0; j < rest; ++j) acc += a[i * rest + j] * a[i * rest + j];
      an2[i] = acc;
    }
    Var br = reshape(b, {m, rest});
    Var ar = Var::constant(Tensor({m, rest}, a.raw()));
    dots = rowsum(mul(ar, br));
    bn2 = rowsum(square(br));
  } else if (s.size() == 2 && s[0] > 1) {
    m = s[1];
    an2 = Tensor({m, 1});
    for (int64_t j = 0; j < m; ++j) {
      double acc = 0.0;
      for (int64_t i = 0; i < s[0]; ++i) acc += a[i * m + j] * a[i * m + j];
      an2[j] = acc;
    }
    Var bt = transpose2d(b);
    Var at = Var::constant(Tensor({m, s[0]}, transpose2d(Var::constant(a)).value().raw()));
    dots = rowsum(mul(at, bt));
    bn2 = rowsum(square(bt));
  } else {
    m = 1;
    an2 = Tensor({1, 1});
    double acc = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) acc += a[i] * a[i];
    an2[0] = acc;
    Var bf = reshape(b, {1, a.numel()});
    Var af = Var::constant(Tensor({1, a.numel()}, a.raw()));
    dots = rowsum(mul(af, bf));
    bn2 = rowsum(square(bf));
  }

  // Degenerate slices (zero norm on either side) count as distance 1.
  Tensor zero_mask({m, 1}), keep_mask({m, 1});
  bool any_zero = false;
  for (int64_t i = 0; i < m; ++i) {
    const bool z = an2[i] == 0.0 || bn2.value()[i] == 0.0;
    zero_mask[i] = z ? 1.0 : 0.0;
    keep_mask[i] = z ? 0.0 : 1.0;
    any_zero |= z;
  }
  if (any_zero && warnings)
    warnings->push_back("zero-norm gradient slice in layer " + layer +
                        "; counted as orthogonal");
  Var denom = sqrt(add(mul(Var::constant(an2), bn2), Var::constant(std::move(zero_mask))));
  Var cos = mul(div(dots, denom), Var::constant(std::move(keep_mask)));
  return sub(Var::scalar(static_cast<double>(m)), sum_all(cos));
}

}  // namespace

Var gradient_distance(const std::vector<std::pair<std::string, Var>>& g_real,
                      const std::vector<std::pair<std::string, Var>>& g_synth,
                      DistanceKind kind, std::vector<std::string>* warnings) {
  require(g_real.size() == g_synth.size() && !g_real.empty(), ErrorKind::internal,
          "gradient_distance: layer lists misaligned");
  Var total;
  for (size_t l = 0; l < g_real.size(); ++l) {
    require(g_real[l].second.value().same_shape(g_synth[l].second.value()), ErrorKind::internal,
            "gradient_distance: shape mismatch at layer " + g_real[l].first);
    Var term;
    if (kind == DistanceKind::layerwise_cosine) {
      term = cosine_layer_distance(g_real[l].second.value(), g_synth[l].second,
                                   g_real[l].first, warnings);
    } else {
      term = l2norm(sub(g_real[l].second.detach(), g_synth[l].second));
    }
    total = total.defined() ? add(total, term) : term;
  }
  return total;
}

// ---- matching losses ----

namespace {

struct ClassGrads {
  std::vector<std::pair<std::string, Var>> real;   // detached values
  std::vector<std::pair<std::string, Var>> synth;  // tracked
};

ClassGrads per_class_grads(const MatchInputs& in, int64_t c) {
  const auto& model = *in.model;
  const auto& binding = *in.binding;

  Var real_batch = Var::constant(in.real_batches[static_cast<size_t>(c)]);
  Var synth_batch = slice_rows(in.synth_images, c * in.layout->ipc, in.layout->ipc);
  if (in.augment) {
    auto [ar, as] = aug::dsa_apply(real_batch, synth_batch,
                                   (*in.augment)[static_cast<size_t>(c)]);
    real_batch = ar;
    synth_batch = as;
  }

  std::vector<int> synth_labels(static_cast<size_t>(in.layout->ipc),
                                in.layout->labels[static_cast<size_t>(c * in.layout->ipc)]);

  ClassGrads out;
  {
    Var loss_real = nn::batch_loss(in.loss, nn::forward(model, binding, real_batch),
                                   in.real_labels[static_cast<size_t>(c)]);
    out.real = nn::per_layer_grads(model, binding, loss_real, /*create_graph=*/false);
  }
  {
    Var loss_synth = nn::batch_loss(in.loss, nn::forward(model, binding, synth_batch),
                                    synth_labels);
    out.synth = nn::per_layer_grads(model, binding, loss_synth, /*create_graph=*/true);
  }
  return out;
}

std::vector<std::pair<std::string, Var>> sum_layerwise(
    std::vector<std::pair<std::string, Var>> acc,
    const std::vector<std::pair<std::string, Var>>& term) {
  if (acc.empty()) return term;
  for (size_t l = 0; l < acc.size(); ++l)
    acc[l].second = add(acc[l].second, term[l].second);
  return acc;
}

}  // namespace

Var classwise_loss(const MatchInputs& in) {
  const int64_t classes = in.layout->classes;
  Var total;
  for (int64_t c = 0; c < classes; ++c) {
    ClassGrads g = per_class_grads(in, c);
    Var term = gradient_distance(g.real, g.synth, in.distance, in.warnings);
    total = total.defined() ? add(total, term) : term;
  }
  return total;
}

Var collective_loss(const MatchInputs& in) {
  const int64_t classes = in.layout->classes;
  const int64_t group = in.class_group_size > 0 ? in.class_group_size : classes;
  Var total;
  for (int64_t g0 = 0; g0 < classes; g0 += group) {
    const int64_t g1 = std::min(classes, g0 + group);
    std::vector<std::pair<std::string, Var>> sum_real, sum_synth;
    for (int64_t c = g0; c < g1; ++c) {
      ClassGrads g = per_class_grads(in, c);
      sum_real = sum_layerwise(std::move(sum_real), g.real);
      sum_synth = sum_layerwise(std::move(sum_synth), g.synth);
    }
    Var term = gradient_distance(sum_real, sum_synth, in.distance, in.warnings);
    total = total.defined() ? add(total, term) : term;
  }
  return total;
}

Var matching_loss(MatchMode mode, const MatchInputs& in) {
  return mode == MatchMode::class_wise ? classwise_loss(in) : collective_loss(in);
}

// ---- synthetic set ----

SyntheticSet init_synthetic(const data::DatasetContainer& ds, int64_t ipc, InitStrategy strategy,
                            std::mt19937_64& rng) {
  require(ipc >= 1, ErrorKind::config, "init_synthetic: ipc must be >= 1");
  SyntheticSet s;
  s.ipc = ipc;
  s.classes = ds.classes;
  s.images = Tensor({ds.classes * ipc, ds.channels, ds.height, ds.width});
  const int64_t elems = ds.img_elems();
  for (int64_t c = 0; c < ds.classes; ++c) {
    for (int64_t i = 0; i < ipc; ++i) s.labels.push_back(static_cast<int>(c));
    if (strategy == InitStrategy::real_sample) {
      const auto& pool = ds.train_index[static_cast<size_t>(c)];
      require(static_cast<int64_t>(pool.size()) >= ipc, ErrorKind::data,
              "init_synthetic: class " + std::to_string(c) + " has fewer than ipc examples");
      std::vector<int64_t> pick;
      std::sample(pool.begin(), pool.end(), std::back_inserter(pick), ipc, rng);
      for (int64_t i = 0; i < ipc; ++i)
        std::copy(ds.train_images.begin() + pick[static_cast<size_t>(i)] * elems,
                  ds.train_images.begin() + (pick[static_cast<size_t>(i)] + 1) * elems,
                  s.images.data() + (c * ipc + i) * elems);
    } else {
      std::normal_distribution<double> noise(0.0, 0.1);
      for (int64_t i = 0; i < ipc * elems; ++i)
        s.images[(c * ipc) * elems + i] = noise(rng);
    }
  }
  return s;
}

// ---- the alternating optimization loop ----

namespace {

std::vector<int64_t> sample_class_batch(const std::vector<int64_t>& pool, int64_t batch,
                                        std::mt19937_64& rng, bool& with_replacement) {
  std::vector<int64_t> idx;
  if (static_cast<int64_t>(pool.size()) >= batch) {
    std::sample(pool.begin(), pool.end(), std::back_inserter(idx), batch, rng);
    with_replacement = false;
  } else {
    std::uniform_int_distribution<size_t> pick(0, pool.size() - 1);
    for (int64_t i = 0; i < batch; ++i) idx.push_back(pool[pick(rng)]);
    with_replacement = true;
  }
  return idx;
}

Tensor gram_from_grad(const Tensor& meta_grad, int64_t n_images) {
  const int64_t elems = meta_grad.numel() / n_images;
  Tensor k({n_images, n_images});
  for (int64_t i = 0; i < n_images; ++i)
    for (int64_t j = i; j < n_images; ++j) {
      double acc = 0.0;
      const double* gi = meta_grad.data() + i * elems;
      const double* gj = meta_grad.data() + j * elems;
      for (int64_t p = 0; p < elems; ++p) acc += gi[p] * gj[p];
      k[i * n_images + j] = acc;
      k[j * n_images + i] = acc;
    }
  return k;
}

void train_theta_one_pass(nn::Model& model, const SyntheticSet& s, nn::LossKind loss,
                          double lr, double momentum, nn::SgdState& state) {
  const int64_t n = s.count();
  const int64_t batch = 256;
  const int64_t elems = s.images.numel() / n;
  for (int64_t start = 0; start < n; start += batch) {
    const int64_t b = std::min(batch, n - start);
    Shape bs = s.images.shape();
    bs[0] = b;
    Tensor bimg(bs);
    std::copy(s.images.data() + start * elems, s.images.data() + (start + b) * elems,
              bimg.data());
    std::vector<int> blab(s.labels.begin() + start, s.labels.begin() + start + b);
    nn::Binding bd = nn::bind(model, true);
    Var l = nn::batch_loss(loss, nn::forward(model, bd, Var::constant(std::move(bimg))), blab);
    auto grads = grad(l, bd.params, false);
    std::vector<Tensor> gt;
    for (auto& g : grads) gt.push_back(g.value());
    nn::sgd_step(model, gt, lr, momentum, state);
  }
}

}  // namespace

std::pair<SyntheticSet, RunLog> condense(const data::DatasetContainer& ds,
                                         const CondenseConfig& cfg) {
  cfg.validate();
  require(ds.classes >= 1, ErrorKind::data, "condense: dataset has no classes");
  for (int64_t c = 0; c < ds.classes; ++c)
    require(!ds.train_index[static_cast<size_t>(c)].empty(), ErrorKind::data,
            "condense: class " + std::to_string(c) + " is empty");

  RngPool pool(cfg.seed);
  auto rng_init = pool.stream("synthetic-init");
  auto rng_batch = pool.stream("batch-sampling");
  auto rng_aug = pool.stream("augmentation");

  SyntheticSet synth = init_synthetic(ds, cfg.ipc, cfg.init, rng_init);
  RunLog log;

  nn::Hyper hyper;
  hyper.in_c = ds.channels;
  hyper.in_h = ds.height;
  hyper.in_w = ds.width;
  hyper.classes = ds.classes;
  hyper.width = cfg.model_width;
  hyper.depth = cfg.model_depth;
  hyper.hidden = cfg.model_hidden;

  Tensor momentum_s(synth.images.shape());
  std::vector<bool> warned_replacement(static_cast<size_t>(ds.classes), false);
  int64_t global_step = 0;

  for (int64_t outer = 0; outer < cfg.outer_loops; ++outer) {
    nn::Model model =
        nn::build(cfg.model_kind, hyper,
                  nn::InitSpec{pool.stream_seed("model-init", static_cast<uint64_t>(outer))});
    nn::SgdState theta_state;

    for (int64_t t = 0; t < cfg.stages; ++t) {
      for (int64_t i = 0; i < cfg.steps_per_stage; ++i) {
        const int64_t inner_step = t * cfg.steps_per_stage + i;
        const MatchMode mode = select_mode(outer, inner_step, cfg);
        const auto t0 = std::chrono::steady_clock::now();

        MatchInputs in;
        in.model = &model;
        nn::Binding binding = nn::bind(model, true);
        in.binding = &binding;
        in.layout = &synth;
        in.synth_images = Var(synth.images, true);
        in.distance = cfg.distance;
        in.loss = cfg.loss;
        in.class_group_size = cfg.class_group_size;
        in.warnings = &log.warnings;
        for (int64_t c = 0; c < ds.classes; ++c) {
          bool with_repl = false;
          auto idx = sample_class_batch(ds.train_index[static_cast<size_t>(c)],
                                        cfg.real_batch_per_class, rng_batch, with_repl);
          if (with_repl && !warned_replacement[static_cast<size_t>(c)]) {
            log.warnings.push_back("class " + std::to_string(c) +
                                   " smaller than batch; sampling with replacement");
            warned_replacement[static_cast<size_t>(c)] = true;
          }
          in.real_batches.push_back(ds.train_batch(idx));
          in.real_labels.push_back(ds.train_label_batch(idx));
        }
        if (cfg.augment) {
          std::vector<aug::AugParams> params;
          for (int64_t c = 0; c < ds.classes; ++c)
            params.push_back(aug::sample_params(cfg.transforms, static_cast<int>(ds.height),
                                                static_cast<int>(ds.width), rng_aug));
          in.augment = std::move(params);
        }

        Var loss = matching_loss(mode, in);
        const double loss_val = loss.value().item();
        require(std::isfinite(loss_val), ErrorKind::numeric,
                "condense: non-finite matching loss");
        Tensor meta = grad(loss, {in.synth_images}, false)[0].value();
        require(meta.all_finite(), ErrorKind::numeric, "condense: non-finite meta-gradient");

        for (int64_t p = 0; p < synth.images.numel(); ++p) {
          momentum_s[p] = cfg.momentum_s * momentum_s[p] + meta[p];
          synth.images[p] -= cfg.eta_s * momentum_s[p];
        }

        const auto t1 = std::chrono::steady_clock::now();
        log.rows.push_back({outer, inner_step, mode, loss_val,
                            std::chrono::duration<double, std::milli>(t1 - t0).count()});
        ++global_step;

        if (cfg.gram_every > 0 && global_step % cfg.gram_every == 0 &&
            static_cast<int64_t>(log.gram_snapshots.size()) < cfg.gram_cap) {
          // Fixed probe batch per class keeps snapshots comparable across steps.
          MatchInputs probe = in;
          probe.augment.reset();
          probe.real_batches.clear();
          probe.real_labels.clear();
          for (int64_t c = 0; c < ds.classes; ++c) {
            const auto& cls = ds.train_index[static_cast<size_t>(c)];
            std::vector<int64_t> idx(cls.begin(),
                                     cls.begin() + std::min<int64_t>(cfg.real_batch_per_class,
                                                                     cls.size()));
            probe.real_batches.push_back(ds.train_batch(idx));
            probe.real_labels.push_back(ds.train_label_batch(idx));
          }
          nn::Binding probe_binding = nn::bind(model, true);
          probe.binding = &probe_binding;
          probe.synth_images = Var(synth.images, true);
          Var probe_loss = matching_loss(mode, probe);
          Tensor g = grad(probe_loss, {probe.synth_images}, false)[0].value();
          log.gram_snapshots.emplace_back(global_step, gram_from_grad(g, synth.count()));
        }
      }
      train_theta_one_pass(model, synth, cfg.loss, cfg.eta_theta, cfg.momentum_theta,
                           theta_state);
    }
  }
  return {std::move(synth), std::move(log)};
}

}  // namespace dckit::cond
