#include "dckit/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <future>
#include <numeric>
#include <thread>

#include "dckit/augment.hpp"
#include "dckit/rng.hpp"

namespace dckit::eval {

namespace {

size_t thread_budget() {
  if (const char* env = std::getenv("DCKIT_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1) return static_cast<size_t>(v);
  }
  const unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : hc;
}

template <typename Fn>
void parallel_for(size_t n, Fn&& fn) {
  const size_t threads = std::min(thread_budget(), n);
  if (threads <= 1) {
    for (size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<size_t> next{0};
  std::vector<std::thread> pool;
  for (size_t t = 0; t < threads; ++t)
    pool.emplace_back([&] {
      for (size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
    });
  for (auto& th : pool) th.join();
}

nn::Hyper hyper_for(const EvalProtocol& p, int64_t in_c, int64_t in_h, int64_t in_w,
                    int64_t classes) {
  nn::Hyper h;
  h.in_c = in_c;
  h.in_h = in_h;
  h.in_w = in_w;
  h.classes = classes;
  h.width = p.model_width;
  h.depth = p.model_depth;
  h.hidden = p.model_hidden;
  return h;
}

void train_classifier(nn::Model& model, const Tensor& images, const std::vector<int>& labels,
                      const EvalProtocol& p, uint64_t seed) {
  const int64_t n = images.dim(0);
  std::mt19937_64 rng(mix64(seed ^ hash_name("eval-train")));
  std::vector<int64_t> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  nn::SgdState state;
  const int64_t elems = images.numel() / n;
  const auto kinds = aug::default_transforms();
  double lr = p.lr;
  for (int64_t epoch = 0; epoch < p.epochs; ++epoch) {
    if (epoch == static_cast<int64_t>(p.lr_decay_at * double(p.epochs))) lr *= p.lr_decay;
    std::shuffle(order.begin(), order.end(), rng);
    for (int64_t start = 0; start < n; start += p.batch) {
      const int64_t b = std::min(p.batch, n - start);
      Shape bs = images.shape();
      bs[0] = b;
      Tensor bimg(bs);
      std::vector<int> blab(static_cast<size_t>(b));
      for (int64_t i = 0; i < b; ++i) {
        const int64_t src = order[static_cast<size_t>(start + i)];
        std::copy(images.data() + src * elems, images.data() + (src + 1) * elems,
                  bimg.data() + i * elems);
        blab[static_cast<size_t>(i)] = labels[static_cast<size_t>(src)];
      }
      Var batch = Var::constant(std::move(bimg));
      if (p.augment) {
        auto params = aug::sample_params(kinds, static_cast<int>(images.shape()[2]),
                                         static_cast<int>(images.shape()[3]), rng);
        batch = aug::apply(batch, params);
      }
      nn::Binding bd = nn::bind(model, true);
      Var loss = nn::batch_loss(nn::LossKind::cross_entropy, nn::forward(model, bd, batch), blab);
      require(std::isfinite(loss.value().item()), ErrorKind::numeric,
              "evaluate: non-finite training loss");
      auto grads = grad(loss, bd.params, false);
      std::vector<Tensor> gt;
      for (auto& g : grads) gt.push_back(g.value());
      nn::sgd_step(model, gt, lr, p.momentum, state);
    }
  }
}

}  // namespace

EvalResult evaluate(const cond::SyntheticSet& synth, const data::DatasetContainer& testset,
                    const EvalProtocol& protocol) {
  require(synth.count() >= 1, ErrorKind::data, "evaluate: empty synthetic set");
  EvalResult res;
  res.degenerate = true;
  for (int64_t i = 1; i < synth.images.numel() && res.degenerate; ++i)
    if (synth.images[i] != synth.images[0]) res.degenerate = false;

  const nn::Hyper hyper = hyper_for(protocol, synth.images.shape()[1], synth.images.shape()[2],
                                    synth.images.shape()[3], testset.classes);
  const Tensor test_images = testset.all_test();
  res.accuracies.assign(static_cast<size_t>(protocol.n_models), 0.0);
  RngPool pool(protocol.seed_base);
  parallel_for(static_cast<size_t>(protocol.n_models), [&](size_t m) {
    const uint64_t seed = pool.stream_seed("eval-model", m);
    nn::Model model = nn::build(protocol.model_kind, hyper, nn::InitSpec{seed});
    train_classifier(model, synth.images, synth.labels, protocol, seed);
    res.accuracies[m] = nn::accuracy(model, test_images, testset.test_labels);
  });
  double sum = 0.0, sq = 0.0;
  for (double a : res.accuracies) {
    sum += a;
    sq += a * a;
  }
  res.mean = sum / double(protocol.n_models);
  res.stddev = std::sqrt(std::max(sq / double(protocol.n_models) - res.mean * res.mean, 0.0));
  return res;
}

cond::SyntheticSet random_select(const data::DatasetContainer& ds, int64_t ipc, uint64_t seed) {
  RngPool pool(seed);
  auto rng = pool.stream("random-select");
  return cond::init_synthetic(ds, ipc, cond::InitStrategy::real_sample, rng);
}

SelectionScores grand_el2n_scores(const data::DatasetContainer& ds, int n_models,
                                  const EvalProtocol& protocol, int64_t train_epochs) {
  require(n_models >= 1, ErrorKind::config, "grand_el2n_scores: n_models must be >= 1");
  const int64_t n = ds.n_train();
  SelectionScores out;
  out.grand.assign(static_cast<size_t>(n), 0.0);
  out.el2n.assign(static_cast<size_t>(n), 0.0);

  std::vector<int64_t> all(static_cast<size_t>(n));
  std::iota(all.begin(), all.end(), 0);
  const Tensor images = ds.train_batch(all);
  const int64_t elems = ds.img_elems();
  RngPool pool(protocol.seed_base);

  for (int m = 0; m < n_models; ++m) {
    EvalProtocol p = protocol;
    p.epochs = train_epochs;
    const uint64_t seed = pool.stream_seed("score-model", static_cast<uint64_t>(m));
    nn::Model model = nn::build(p.model_kind,
                                hyper_for(p, ds.channels, ds.height, ds.width, ds.classes),
                                nn::InitSpec{seed});
    train_classifier(model, images, ds.train_labels, p, seed);

    const Tensor logits = nn::predict_logits(model, images);
    const int64_t c = logits.dim(1);
    for (int64_t i = 0; i < n; ++i) {
      // EL2N: ||softmax(logits) - onehot||_2
      double mx = logits[i * c];
      for (int64_t j = 1; j < c; ++j) mx = std::max(mx, logits[i * c + j]);
      double z = 0.0;
      for (int64_t j = 0; j < c; ++j) z += std::exp(logits[i * c + j] - mx);
      double err = 0.0;
      for (int64_t j = 0; j < c; ++j) {
        const double pj = std::exp(logits[i * c + j] - mx) / z;
        const double tgt = ds.train_labels[static_cast<size_t>(i)] == j ? 1.0 : 0.0;
        err += (pj - tgt) * (pj - tgt);
      }
      out.el2n[static_cast<size_t>(i)] += std::sqrt(err) / n_models;

      // GraNd: per-sample loss-gradient norm over all parameters
      Shape s1 = images.shape();
      s1[0] = 1;
      Tensor one(s1);
      std::copy(images.data() + i * elems, images.data() + (i + 1) * elems, one.data());
      nn::Binding bd = nn::bind(model, true);
      Var loss = nn::batch_loss(nn::LossKind::cross_entropy,
                                nn::forward(model, bd, Var::constant(std::move(one))),
                                {ds.train_labels[static_cast<size_t>(i)]});
      auto grads = grad(loss, bd.params, false);
      double sq = 0.0;
      for (const auto& g : grads)
        for (int64_t k = 0; k < g.value().numel(); ++k) sq += g.value()[k] * g.value()[k];
      out.grand[static_cast<size_t>(i)] += std::sqrt(sq) / n_models;
    }
  }
  return out;
}

cond::SyntheticSet select_low_scores(const data::DatasetContainer& ds,
                                     const std::vector<double>& scores, int64_t ipc) {
  require(static_cast<int64_t>(scores.size()) == ds.n_train(), ErrorKind::data,
          "select_low_scores: score count mismatch");
  cond::SyntheticSet s;
  s.ipc = ipc;
  s.classes = ds.classes;
  s.images = Tensor({ds.classes * ipc, ds.channels, ds.height, ds.width});
  const int64_t elems = ds.img_elems();
  for (int64_t c = 0; c < ds.classes; ++c) {
    auto pool = ds.train_index[static_cast<size_t>(c)];
    require(static_cast<int64_t>(pool.size()) >= ipc, ErrorKind::data,
            "select_low_scores: class too small");
    std::sort(pool.begin(), pool.end(), [&](int64_t a, int64_t b) {
      return scores[static_cast<size_t>(a)] < scores[static_cast<size_t>(b)];
    });
    for (int64_t i = 0; i < ipc; ++i) {
      s.labels.push_back(static_cast<int>(c));
      std::copy(ds.train_images.begin() + pool[static_cast<size_t>(i)] * elems,
                ds.train_images.begin() + (pool[static_cast<size_t>(i)] + 1) * elems,
                s.images.data() + (c * ipc + i) * elems);
    }
  }
  return s;
}

Tensor ntk_gram(const std::function<Var(const Var&)>& matching_loss,
                const cond::SyntheticSet& synth) {
  Var sv(synth.images, true);
  Var loss = matching_loss(sv);
  require(loss.value().is_scalar(), ErrorKind::internal, "ntk_gram: loss must be scalar");
  const Tensor g = grad(loss, {sv}, false)[0].value();
  const int64_t n = synth.count();
  const int64_t elems = g.numel() / n;
  Tensor k({n, n});
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = i; j < n; ++j) {
      double acc = 0.0;
      for (int64_t p = 0; p < elems; ++p) acc += g[i * elems + p] * g[j * elems + p];
      k[i * n + j] = acc;
      k[j * n + i] = acc;
    }
  return k;
}

std::vector<double> ntk_velocity(const std::vector<std::pair<int64_t, Tensor>>& snapshots) {
  require(snapshots.size() >= 2, ErrorKind::data, "ntk_velocity: need at least two snapshots");
  std::vector<double> v;
  v.reserve(snapshots.size() - 1);
  for (size_t t = 0; t + 1 < snapshots.size(); ++t) {
    const Tensor& a = snapshots[t].second;
    const Tensor& b = snapshots[t + 1].second;
    require(a.same_shape(b), ErrorKind::data, "ntk_velocity: Gram shape mismatch");
    double ab = 0.0, aa = 0.0, bb = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) {
      ab += a[i] * b[i];
      aa += a[i] * a[i];
      bb += b[i] * b[i];
    }
    require(aa > 0.0 && bb > 0.0, ErrorKind::numeric, "ntk_velocity: zero-norm Gram");
    v.push_back(1.0 - ab / (std::sqrt(aa) * std::sqrt(bb)));
  }
  return v;
}

std::pair<double, double> alignment_uniformity(const Tensor& features,
                                               const std::vector<int>& labels, bool normalize) {
  const int64_t n = features.dim(0), d = features.dim(1);
  require(n == static_cast<int64_t>(labels.size()), ErrorKind::data,
          "alignment_uniformity: label count mismatch");
  require(n >= 2, ErrorKind::data, "alignment_uniformity: need at least two samples");
  Tensor f = features;
  if (normalize) {
    for (int64_t i = 0; i < n; ++i) {
      double nm = 0.0;
      for (int64_t j = 0; j < d; ++j) nm += f[i * d + j] * f[i * d + j];
      nm = std::sqrt(nm);
      require(nm > 0.0, ErrorKind::numeric, "alignment_uniformity: zero feature vector");
      for (int64_t j = 0; j < d; ++j) f[i * d + j] /= nm;
    }
  }
  int per_class_min = 1 << 30;
  {
    std::vector<int> counts;
    for (int y : labels) {
      if (y >= static_cast<int>(counts.size())) counts.resize(static_cast<size_t>(y) + 1, 0);
      counts[static_cast<size_t>(y)]++;
    }
    for (int cnt : counts)
      if (cnt > 0) per_class_min = std::min(per_class_min, cnt);
  }
  require(per_class_min >= 2, ErrorKind::data, "alignment_uniformity: singleton class");

  double align_sum = 0.0, unif_sum = 0.0;
  int64_t align_pairs = 0, all_pairs = 0;
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = i + 1; j < n; ++j) {
      double d2 = 0.0;
      for (int64_t k = 0; k < d; ++k) {
        const double diff = f[i * d + k] - f[j * d + k];
        d2 += diff * diff;
      }
      unif_sum += std::exp(-2.0 * d2);
      ++all_pairs;
      if (labels[static_cast<size_t>(i)] == labels[static_cast<size_t>(j)]) {
        align_sum += d2;
        ++align_pairs;
      }
    }
  const double align = align_sum / double(align_pairs);
  const double uniform = std::log(unif_sum / double(all_pairs));
  return {align, uniform};
}

Tensor penultimate_features(const nn::Model& model, const Tensor& batch) {
  NoGradGuard ng;
  nn::Binding bd = nn::bind(model, false);
  return nn::forward_features(model, bd, Var::constant(batch)).value();
}

// ---- continual learning ----

namespace {

struct Memory {
  std::vector<double> images;
  std::vector<int> labels;
};

std::vector<int> classes_present(const data::DatasetContainer& task) {
  std::vector<int> out;
  for (int64_t c = 0; c < task.classes; ++c)
    if (!task.train_index[static_cast<size_t>(c)].empty()) out.push_back(static_cast<int>(c));
  return out;
}

}  // namespace

ContinualResult continual_run(const ContinualConfig& cfg) {
  require(cfg.tasks.size() >= 1, ErrorKind::config, "continual_run: no tasks");
  const auto& first = cfg.tasks.front();
  int64_t classes = 0;
  for (const auto& t : cfg.tasks) {
    require(t.height == first.height && t.width == first.width && t.channels == first.channels,
            ErrorKind::data, "continual_run: task geometries differ");
    classes = std::max(classes, t.classes);
  }
  for (const auto& t : cfg.tasks)
    require(cfg.memory_per_class <= 0 ||
                [&] {
                  for (int c : classes_present(t))
                    if (static_cast<int64_t>(t.train_index[static_cast<size_t>(c)].size()) <
                        cfg.memory_per_class)
                      return false;
                  return true;
                }(),
            ErrorKind::data, "continual_run: memory budget exceeds a class size");

  RngPool pool(cfg.seed);
  nn::Hyper hyper;
  hyper.in_c = first.channels;
  hyper.in_h = first.height;
  hyper.in_w = first.width;
  hyper.classes = classes;
  hyper.width = cfg.model_width;
  hyper.depth = cfg.model_depth;
  nn::Model model = nn::build(cfg.model_kind, hyper, nn::InitSpec{pool.stream_seed("ct-init")});

  Memory memory;
  const int64_t elems = first.img_elems();
  ContinualResult res;

  for (size_t k = 0; k < cfg.tasks.size(); ++k) {
    const auto& task = cfg.tasks[k];
    // current task data + replay memory
    std::vector<int64_t> all(static_cast<size_t>(task.n_train()));
    std::iota(all.begin(), all.end(), 0);
    Tensor task_images = task.train_batch(all);
    const int64_t n_mix = task.n_train() + static_cast<int64_t>(memory.labels.size());
    Tensor mix({n_mix, task.channels, task.height, task.width});
    std::copy(task_images.data(), task_images.data() + task_images.numel(), mix.data());
    std::copy(memory.images.begin(), memory.images.end(), mix.data() + task_images.numel());
    std::vector<int> mix_labels = task.train_labels;
    mix_labels.insert(mix_labels.end(), memory.labels.begin(), memory.labels.end());

    nn::TrainOpts opts;
    opts.epochs = cfg.epochs_per_task;
    opts.batch = cfg.batch;
    opts.lr = cfg.lr;
    opts.momentum = cfg.momentum;
    opts.seed = pool.stream_seed("ct-train", k);
    nn::train_sgd(model, mix, mix_labels, opts);

    // extend memory from this task
    const auto present = classes_present(task);
    if (cfg.builder == MemoryBuilder::ring_buffer) {
      auto rng = pool.stream("ct-memory", k);
      for (int c : present) {
        const auto& cls = task.train_index[static_cast<size_t>(c)];
        std::vector<int64_t> pick;
        std::sample(cls.begin(), cls.end(), std::back_inserter(pick), cfg.memory_per_class, rng);
        for (int64_t idx : pick) {
          memory.images.insert(memory.images.end(),
                               task.train_images.begin() + idx * elems,
                               task.train_images.begin() + (idx + 1) * elems);
          memory.labels.push_back(c);
        }
      }
    } else {
      data::DatasetContainer local = data::subset_by_class(task, present, /*relabel=*/true);
      cond::CondenseConfig ccfg = cfg.condense_cfg;
      ccfg.ipc = cfg.memory_per_class;
      ccfg.seed = pool.stream_seed("ct-condense", k);
      auto [synth, log] = cond::condense(local, ccfg);
      for (int64_t i = 0; i < synth.count(); ++i) {
        memory.images.insert(memory.images.end(), synth.images.data() + i * elems,
                             synth.images.data() + (i + 1) * elems);
        memory.labels.push_back(present[static_cast<size_t>(synth.labels[static_cast<size_t>(i)])]);
      }
    }

    // average accuracy over seen tasks
    std::vector<double> accs;
    for (size_t j = 0; j <= k; ++j) {
      const auto& tj = cfg.tasks[j];
      accs.push_back(nn::accuracy(model, tj.all_test(), tj.test_labels));
    }
    res.per_task_acc.push_back(accs);
    res.stage_avg_accuracy.push_back(std::accumulate(accs.begin(), accs.end(), 0.0) /
                                     double(accs.size()));
  }
  return res;
}

}  // namespace dckit::eval
