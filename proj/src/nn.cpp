#include "dckit/nn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace dckit::nn {

const char* to_string(ModelKind k) {
  switch (k) {
    case ModelKind::linear: return "linear";
    case ModelKind::mlp: return "mlp";
    case ModelKind::convnet: return "convnet";
  }
  return "?";
}

ModelKind model_kind_from(const std::string& s) {
  if (s == "linear") return ModelKind::linear;
  if (s == "mlp") return ModelKind::mlp;
  if (s == "convnet") return ModelKind::convnet;
  fail(ErrorKind::config, "unknown model kind: " + s);
}

int64_t Model::param_count() const {
  int64_t n = 0;
  for (const auto& l : layers) n += l.param.numel();
  return n;
}

namespace {

Tensor uniform_fan_in(const Shape& shape, int64_t fan_in, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor t(shape);
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = dist(rng);
  return t;
}

int64_t conv_head_features(const Hyper& h) {
  int64_t sh = h.in_h, sw = h.in_w;
  for (int d = 0; d < h.depth; ++d) {
    require(sh % 2 == 0 && sw % 2 == 0, ErrorKind::config,
            "convnet: input " + std::to_string(h.in_h) + "x" + std::to_string(h.in_w) +
                " not poolable to depth " + std::to_string(h.depth));
    sh /= 2;
    sw /= 2;
  }
  return h.width * sh * sw;
}

}  // namespace

Model build(ModelKind kind, const Hyper& hyper, const InitSpec& init) {
  require(hyper.classes >= 1, ErrorKind::config, "model: classes must be >= 1");
  require(hyper.in_features() >= 1, ErrorKind::config, "model: empty input shape");
  std::mt19937_64 rng(mix64(init.seed ^ 0x6d6f64656cull));
  Model m;
  m.kind = kind;
  m.hyper = hyper;
  switch (kind) {
    case ModelKind::linear: {
      // sign classifier: one weight vector, no bias
      m.layers.push_back({"w", uniform_fan_in({hyper.in_features(), 1}, hyper.in_features(), rng)});
      break;
    }
    case ModelKind::mlp: {
      int64_t in = hyper.in_features();
      for (size_t i = 0; i < hyper.hidden.size(); ++i) {
        int64_t out = hyper.hidden[i];
        require(out >= 1, ErrorKind::config, "mlp: hidden width must be >= 1");
        std::string base = "fc" + std::to_string(i + 1);
        m.layers.push_back({base + ".W", uniform_fan_in({in, out}, in, rng)});
        m.layers.push_back({base + ".b", Tensor::zeros({1, out})});
        in = out;
      }
      m.layers.push_back({"head.W", uniform_fan_in({in, hyper.classes}, in, rng)});
      m.layers.push_back({"head.b", Tensor::zeros({1, hyper.classes})});
      break;
    }
    case ModelKind::convnet: {
      require(hyper.depth >= 1, ErrorKind::config, "convnet: depth must be >= 1");
      const int64_t head_in = conv_head_features(hyper);
      int64_t cin = hyper.in_c;
      for (int d = 0; d < hyper.depth; ++d) {
        m.layers.push_back({"conv" + std::to_string(d + 1),
                            uniform_fan_in({hyper.width, cin, 3, 3}, cin * 9, rng)});
        cin = hyper.width;
      }
      m.layers.push_back({"head.W", uniform_fan_in({head_in, hyper.classes}, head_in, rng)});
      m.layers.push_back({"head.b", Tensor::zeros({1, hyper.classes})});
      break;
    }
  }
  return m;
}

Binding bind(const Model& model, bool tracked) {
  Binding b;
  b.params.reserve(model.layers.size());
  for (const auto& l : model.layers) b.params.emplace_back(l.param, tracked);
  return b;
}

namespace {

Var flatten(const Var& batch) {
  const auto& s = batch.shape();
  require(s.size() >= 2, ErrorKind::internal, "flatten: batch rank must be >= 2");
  int64_t rest = 1;
  for (size_t i = 1; i < s.size(); ++i) rest *= s[i];
  return reshape(batch, {s[0], rest});
}

Var dense(const Var& x, const Var& w, const Var& b) {
  return add(matmul(x, w), rowbroadcast(b, x.shape()[0]));
}

Var conv_features(const Model& m, const Binding& bd, const Var& batch) {
  require(batch.shape().size() == 4, ErrorKind::internal, "convnet: batch must be [N,C,H,W]");
  require(batch.shape()[1] == m.hyper.in_c && batch.shape()[2] == m.hyper.in_h &&
              batch.shape()[3] == m.hyper.in_w,
          ErrorKind::internal, "convnet: batch shape " + shape_str(batch.shape()) +
              " does not match model input");
  Var h = batch;
  for (int d = 0; d < m.hyper.depth; ++d) {
    h = conv2d(h, bd.params[d], 1);
    h = instance_norm(h, m.hyper.norm_eps);
    h = relu(h);
    h = avgpool2d(h, 2);
  }
  return flatten(h);
}

}  // namespace

Var forward_features(const Model& m, const Binding& bd, const Var& batch) {
  switch (m.kind) {
    case ModelKind::linear: return flatten(batch);
    case ModelKind::mlp: {
      Var h = flatten(batch);
      const size_t n_hidden = m.hyper.hidden.size();
      for (size_t i = 0; i < n_hidden; ++i)
        h = relu(dense(h, bd.params[2 * i], bd.params[2 * i + 1]));
      return h;
    }
    case ModelKind::convnet: return conv_features(m, bd, batch);
  }
  fail(ErrorKind::internal, "unreachable");
}

Var forward(const Model& m, const Binding& bd, const Var& batch) {
  Var feat = forward_features(m, bd, batch);
  switch (m.kind) {
    case ModelKind::linear: {
      require(feat.shape()[1] == m.hyper.in_features(), ErrorKind::internal,
              "linear: feature width mismatch");
      return matmul(feat, bd.params[0]);  // scores [N,1]
    }
    case ModelKind::mlp:
    case ModelKind::convnet: {
      const size_t nw = bd.params.size();
      return dense(feat, bd.params[nw - 2], bd.params[nw - 1]);
    }
  }
  fail(ErrorKind::internal, "unreachable");
}

Tensor predict_logits(const Model& m, const Tensor& batch) {
  NoGradGuard ng;
  Binding bd = bind(m, false);
  return forward(m, bd, Var::constant(batch)).value();
}

double accuracy(const Model& m, const Tensor& batch, const std::vector<int>& labels) {
  Tensor logits = predict_logits(m, batch);
  const int64_t n = logits.dim(0);
  int64_t correct = 0;
  if (m.kind == ModelKind::linear) {
    for (int64_t i = 0; i < n; ++i) {
      int pred = logits[i] >= 0.0 ? 1 : 0;
      if (pred == labels[static_cast<size_t>(i)]) ++correct;
    }
  } else {
    const int64_t c = logits.dim(1);
    for (int64_t i = 0; i < n; ++i) {
      int64_t arg = 0;
      for (int64_t j = 1; j < c; ++j)
        if (logits[i * c + j] > logits[i * c + arg]) arg = j;
      if (arg == labels[static_cast<size_t>(i)]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

Var batch_loss(LossKind kind, const Var& logits, const std::vector<int>& labels) {
  if (kind == LossKind::cross_entropy) return cross_entropy(logits, labels);
  std::vector<int> signs(labels.size());
  for (size_t i = 0; i < labels.size(); ++i) {
    require(labels[i] == 0 || labels[i] == 1, ErrorKind::data,
            "hinge: labels must be binary {0,1}");
    signs[i] = labels[i] == 1 ? 1 : -1;
  }
  return hinge_loss(logits, signs);
}

std::vector<std::pair<std::string, Var>> per_layer_grads(const Model& model,
                                                         const Binding& binding,
                                                         const Var& loss,
                                                         bool create_graph) {
  require(loss.tracked(), ErrorKind::internal, "per_layer_grads: loss is not tracked");
  auto grads = grad(loss, binding.params, create_graph);
  std::vector<std::pair<std::string, Var>> out;
  out.reserve(grads.size());
  for (size_t i = 0; i < grads.size(); ++i)
    out.emplace_back(model.layers[i].name, grads[i]);
  return out;
}

void sgd_step(Model& model, const std::vector<Tensor>& grads, double lr, double momentum,
              SgdState& state) {
  require(grads.size() == model.layers.size(), ErrorKind::internal,
          "sgd_step: gradient list misaligned with layers");
  if (state.momentum.size() != grads.size()) {
    state.momentum.clear();
    for (const auto& l : model.layers) state.momentum.push_back(Tensor::zeros(l.param.shape()));
  }
  for (size_t i = 0; i < grads.size(); ++i) {
    Tensor& p = model.layers[i].param;
    require(grads[i].same_shape(p), ErrorKind::internal,
            "sgd_step: gradient shape mismatch at " + model.layers[i].name);
    Tensor& buf = state.momentum[i];
    for (int64_t j = 0; j < p.numel(); ++j) {
      buf[j] = momentum * buf[j] + grads[i][j];
      p[j] -= lr * buf[j];
    }
  }
}

void train_sgd(Model& model, const Tensor& images, const std::vector<int>& labels,
               const TrainOpts& opts) {
  const int64_t n = images.dim(0);
  require(n == static_cast<int64_t>(labels.size()), ErrorKind::internal,
          "train_sgd: image/label count mismatch");
  std::mt19937_64 rng(mix64(opts.seed ^ 0x747261696eull));
  std::vector<int64_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  SgdState state;
  const int64_t elems = images.numel() / n;
  double lr = opts.lr;
  for (int64_t epoch = 0; epoch < opts.epochs; ++epoch) {
    if (opts.lr_decay_at <= 1.0 &&
        epoch == static_cast<int64_t>(opts.lr_decay_at * static_cast<double>(opts.epochs)))
      lr *= opts.lr_decay;
    std::shuffle(order.begin(), order.end(), rng);
    for (int64_t start = 0; start < n; start += opts.batch) {
      const int64_t b = std::min(opts.batch, n - start);
      Shape bs = images.shape();
      bs[0] = b;
      Tensor bimg(bs);
      std::vector<int> blab(static_cast<size_t>(b));
      for (int64_t i = 0; i < b; ++i) {
        const int64_t src = order[start + i];
        std::copy(images.data() + src * elems, images.data() + (src + 1) * elems,
                  bimg.data() + i * elems);
        blab[static_cast<size_t>(i)] = labels[static_cast<size_t>(src)];
      }
      Binding bd = bind(model, true);
      Var loss = batch_loss(opts.loss, forward(model, bd, Var::constant(std::move(bimg))), blab);
      require(std::isfinite(loss.value().item()), ErrorKind::numeric,
              "train_sgd: non-finite loss");
      auto grads = grad(loss, bd.params, false);
      std::vector<Tensor> gt;
      gt.reserve(grads.size());
      for (auto& g : grads) gt.push_back(g.value());
      sgd_step(model, gt, lr, opts.momentum, state);
    }
  }
}

}  // namespace dckit::nn
