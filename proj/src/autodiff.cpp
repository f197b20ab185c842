#include "dckit/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>
#include <unordered_set>

#include "dckit/kernels.hpp"

namespace dckit {

namespace {

thread_local bool g_grad_enabled = true;

bool bcast_compatible(const Tensor& a, const Tensor& b) {
  return a.same_shape(b) || a.is_scalar() || b.is_scalar();
}

// Entrywise combine with scalar broadcast on either side.
template <typename F>
Tensor zip(const Tensor& a, const Tensor& b, F f) {
  if (a.same_shape(b)) {
    Tensor out(a.shape());
    for (int64_t i = 0; i < a.numel(); ++i) out[i] = f(a[i], b[i]);
    return out;
  }
  if (a.is_scalar()) {
    Tensor out(b.shape());
    const double av = a[0];
    for (int64_t i = 0; i < b.numel(); ++i) out[i] = f(av, b[i]);
    return out;
  }
  Tensor out(a.shape());
  const double bv = b[0];
  for (int64_t i = 0; i < a.numel(); ++i) out[i] = f(a[i], bv);
  return out;
}

template <typename F>
Tensor map(const Tensor& a, F f) {
  Tensor out(a.shape());
  for (int64_t i = 0; i < a.numel(); ++i) out[i] = f(a[i]);
  return out;
}

// Sums g down to a scalar when the corresponding operand was a broadcast
// scalar; otherwise passes g through.
Var reduce_to(const Var& g, const Var& operand) {
  if (operand.value().is_scalar() && !g.value().is_scalar())
    return reshape(sum_all(g), operand.value().shape());
  return g;
}

void check_same_or_scalar(const char* op, const Var& a, const Var& b) {
  require(bcast_compatible(a.value(), b.value()), ErrorKind::internal,
          std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
              shape_str(b.shape()));
}

}  // namespace

bool GradMode::enabled() { return g_grad_enabled; }
void GradMode::set(bool on) { g_grad_enabled = on; }

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

Var Var::detach() const {
  return Var(node_->value, false);
}

Var make_op(const char* name, Tensor value, std::vector<Var> parents, VjpFn vjp) {
  bool track = false;
  if (g_grad_enabled)
    for (const Var& p : parents)
      if (p.tracked()) track = true;
  if (!track) return Var(std::move(value), false);
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = true;
  n->parents = std::move(parents);
  n->vjp = std::move(vjp);
  n->op = name;
  return Var(std::move(n));
}

// ---- elementwise ----

Var add(const Var& a, const Var& b) {
  check_same_or_scalar("add", a, b);
  return make_op("add", zip(a.value(), b.value(), [](double x, double y) { return x + y; }),
                 {a, b}, [](const Var& g, const std::vector<Var>& p) {
                   return std::vector<Var>{reduce_to(g, p[0]), reduce_to(g, p[1])};
                 });
}

Var sub(const Var& a, const Var& b) {
  check_same_or_scalar("sub", a, b);
  return make_op("sub", zip(a.value(), b.value(), [](double x, double y) { return x - y; }),
                 {a, b}, [](const Var& g, const std::vector<Var>& p) {
                   return std::vector<Var>{reduce_to(g, p[0]), reduce_to(neg(g), p[1])};
                 });
}

Var mul(const Var& a, const Var& b) {
  check_same_or_scalar("mul", a, b);
  return make_op("mul", zip(a.value(), b.value(), [](double x, double y) { return x * y; }),
                 {a, b}, [](const Var& g, const std::vector<Var>& p) {
                   return std::vector<Var>{reduce_to(mul(g, p[1]), p[0]),
                                           reduce_to(mul(g, p[0]), p[1])};
                 });
}

Var scale(const Var& a, double c) {
  return make_op("scale", map(a.value(), [c](double x) { return x * c; }), {a},
                 [c](const Var& g, const std::vector<Var>&) {
                   return std::vector<Var>{scale(g, c)};
                 });
}

Var relu(const Var& a) {
  // Subgradient at 0 is 0: the mask is strict.
  Tensor mask(a.value().shape());
  for (int64_t i = 0; i < a.numel(); ++i) mask[i] = a.value()[i] > 0.0 ? 1.0 : 0.0;
  return make_op("relu", map(a.value(), [](double x) { return x > 0.0 ? x : 0.0; }), {a},
                 [mask = std::move(mask)](const Var& g, const std::vector<Var>&) {
                   return std::vector<Var>{mul(g, Var::constant(mask))};
                 });
}

Var exp(const Var& a) {
  return make_op("exp", map(a.value(), [](double x) { return std::exp(x); }), {a},
                 [](const Var& g, const std::vector<Var>& p) {
                   return std::vector<Var>{mul(g, exp(p[0]))};
                 });
}

Var log(const Var& a) {
  for (int64_t i = 0; i < a.numel(); ++i)
    require(a.value()[i] > 0.0, ErrorKind::numeric, "log: non-positive input");
  return make_op("log", map(a.value(), [](double x) { return std::log(x); }), {a},
                 [](const Var& g, const std::vector<Var>& p) {
                   return std::vector<Var>{mul(g, reciprocal(p[0]))};
                 });
}

Var square(const Var& a) {
  return make_op("square", map(a.value(), [](double x) { return x * x; }), {a},
                 [](const Var& g, const std::vector<Var>& p) {
                   return std::vector<Var>{mul(g, scale(p[0], 2.0))};
                 });
}

Var sqrt(const Var& a) {
  for (int64_t i = 0; i < a.numel(); ++i)
    require(a.value()[i] >= 0.0, ErrorKind::numeric, "sqrt: negative input");
  // Gradient convention at exact zeros: 0 (masked out) instead of +inf.
  Tensor zmask(a.value().shape()), nzmask(a.value().shape());
  for (int64_t i = 0; i < a.numel(); ++i) {
    zmask[i] = a.value()[i] == 0.0 ? 1.0 : 0.0;
    nzmask[i] = 1.0 - zmask[i];
  }
  return make_op("sqrt", map(a.value(), [](double x) { return std::sqrt(x); }), {a},
                 [zmask = std::move(zmask), nzmask = std::move(nzmask)](
                     const Var& g, const std::vector<Var>& p) {
                   Var safe = add(p[0], Var::constant(zmask));
                   Var factor = mul(scale(reciprocal(sqrt(safe)), 0.5), Var::constant(nzmask));
                   return std::vector<Var>{mul(g, factor)};
                 });
}

Var reciprocal(const Var& a) {
  for (int64_t i = 0; i < a.numel(); ++i)
    require(a.value()[i] != 0.0, ErrorKind::numeric, "reciprocal: zero input");
  return make_op("reciprocal", map(a.value(), [](double x) { return 1.0 / x; }), {a},
                 [](const Var& g, const std::vector<Var>& p) {
                   return std::vector<Var>{neg(mul(g, square(reciprocal(p[0]))))};
                 });
}

// ---- linear algebra ----

Var matmul(const Var& a, const Var& b) {
  require(a.shape().size() == 2 && b.shape().size() == 2, ErrorKind::internal,
          "matmul: operands must be rank 2");
  require(a.shape()[1] == b.shape()[0], ErrorKind::internal,
          "matmul: inner dimensions differ, " + shape_str(a.shape()) + " vs " +
              shape_str(b.shape()));
  return make_op("matmul", kernels::matmul(a.value(), b.value()), {a, b},
                 [](const Var& g, const std::vector<Var>& p) {
                   return std::vector<Var>{matmul(g, transpose2d(p[1])),
                                           matmul(transpose2d(p[0]), g)};
                 });
}

Var transpose2d(const Var& a) {
  require(a.shape().size() == 2, ErrorKind::internal, "transpose2d: rank 2 required");
  return make_op("transpose2d", kernels::transpose2d(a.value()), {a},
                 [](const Var& g, const std::vector<Var>&) {
                   return std::vector<Var>{transpose2d(g)};
                 });
}

Var reshape(const Var& a, Shape shape) {
  require(shape_numel(shape) == a.numel(), ErrorKind::internal,
          "reshape: element count mismatch " + shape_str(a.shape()) + " -> " + shape_str(shape));
  Tensor out(shape, a.value().raw());
  Shape orig = a.shape();
  return make_op("reshape", std::move(out), {a},
                 [orig = std::move(orig)](const Var& g, const std::vector<Var>&) {
                   return std::vector<Var>{reshape(g, orig)};
                 });
}

// ---- convolution and pooling ----

Var conv2d(const Var& input, const Var& kernel, int padding) {
  require(input.shape().size() == 4 && kernel.shape().size() == 4, ErrorKind::internal,
          "conv2d: input and kernel must be rank 4");
  const auto& is = input.shape();
  const auto& ks = kernel.shape();
  require(is[1] == ks[1], ErrorKind::internal, "conv2d: channel mismatch");
  require(padding >= 0, ErrorKind::internal, "conv2d: negative padding");
  require(ks[2] <= is[2] + 2 * padding && ks[3] <= is[3] + 2 * padding, ErrorKind::internal,
          "conv2d: kernel larger than padded input");
  const int kh = static_cast<int>(ks[2]), kw = static_cast<int>(ks[3]);
  return make_op(
      "conv2d", kernels::conv2d(input.value(), kernel.value(), padding), {input, kernel},
      [padding, kh, kw](const Var& g, const std::vector<Var>& p) {
        require(kh == kw, ErrorKind::internal, "conv2d backward requires square kernels");
        // input grad: full correlation with the spatially flipped, channel-swapped kernel
        Var wswap = transpose01(flip_hw(p[1], true, true));
        Var gx = conv2d(g, wswap, kh - 1 - padding);
        // kernel grad: correlate input with g, batch and channel axes swapped
        Var gw = transpose01(conv2d(transpose01(p[0]), transpose01(g), padding));
        return std::vector<Var>{gx, gw};
      });
}

Var avgpool2d(const Var& input, int window) {
  require(input.shape().size() == 4, ErrorKind::internal, "avgpool2d: rank 4 required");
  require(window >= 1, ErrorKind::internal, "avgpool2d: window must be >= 1");
  require(input.shape()[2] % window == 0 && input.shape()[3] % window == 0,
          ErrorKind::internal,
          "avgpool2d: spatial dims " + shape_str(input.shape()) + " not divisible by window " +
              std::to_string(window));
  const double inv = 1.0 / (static_cast<double>(window) * window);
  return make_op("avgpool2d", kernels::avgpool2d(input.value(), window), {input},
                 [window, inv](const Var& g, const std::vector<Var>&) {
                   return std::vector<Var>{scale(upsample2d(g, window), inv)};
                 });
}

Var upsample2d(const Var& input, int window) {
  require(input.shape().size() == 4, ErrorKind::internal, "upsample2d: rank 4 required");
  const double w2 = static_cast<double>(window) * window;
  return make_op("upsample2d", kernels::upsample2d(input.value(), window), {input},
                 [window, w2](const Var& g, const std::vector<Var>&) {
                   return std::vector<Var>{scale(avgpool2d(g, window), w2)};
                 });
}

Var slice_rows(const Var& a, int64_t start, int64_t count) {
  require(!a.shape().empty(), ErrorKind::internal, "slice_rows: rank >= 1 required");
  const int64_t n = a.shape()[0];
  require(start >= 0 && count >= 1 && start + count <= n, ErrorKind::internal,
          "slice_rows: range out of bounds");
  const int64_t rest = a.numel() / n;
  Shape s = a.shape();
  s[0] = count;
  Tensor out(s);
  std::copy(a.value().data() + start * rest, a.value().data() + (start + count) * rest,
            out.data());
  return make_op("slice_rows", std::move(out), {a},
                 [start, n](const Var& g, const std::vector<Var>&) {
                   return std::vector<Var>{pad_rows(g, start, n)};
                 });
}

Var pad_rows(const Var& a, int64_t start, int64_t total) {
  require(!a.shape().empty(), ErrorKind::internal, "pad_rows: rank >= 1 required");
  const int64_t n = a.shape()[0];
  require(start >= 0 && start + n <= total, ErrorKind::internal, "pad_rows: range out of bounds");
  const int64_t rest = a.numel() / n;
  Shape s = a.shape();
  s[0] = total;
  Tensor out(s);
  std::copy(a.value().data(), a.value().data() + n * rest, out.data() + start * rest);
  return make_op("pad_rows", std::move(out), {a},
                 [start, n](const Var& g, const std::vector<Var>&) {
                   return std::vector<Var>{slice_rows(g, start, n)};
                 });
}

Var crop_hw(const Var& a, int off_h, int off_w, int out_h, int out_w) {
  require(a.shape().size() == 4, ErrorKind::internal, "crop_hw: rank 4 required");
  const int H = static_cast<int>(a.shape()[2]), W = static_cast<int>(a.shape()[3]);
  require(off_h >= 0 && off_w >= 0 && off_h + out_h <= H && off_w + out_w <= W,
          ErrorKind::internal, "crop_hw: window out of range");
  return make_op("crop_hw", kernels::crop_hw(a.value(), off_h, off_w, out_h, out_w), {a},
                 [off_h, off_w, H, W](const Var& g, const std::vector<Var>&) {
                   return std::vector<Var>{pad_hw(g, off_h, off_w, H, W)};
                 });
}

Var pad_hw(const Var& a, int top, int left, int out_h, int out_w) {
  require(a.shape().size() == 4, ErrorKind::internal, "pad_hw: rank 4 required");
  const int H = static_cast<int>(a.shape()[2]), W = static_cast<int>(a.shape()[3]);
  require(top >= 0 && left >= 0 && top + H <= out_h && left + W <= out_w, ErrorKind::internal,
          "pad_hw: target too small");
  return make_op("pad_hw", kernels::pad_hw(a.value(), top, left, out_h, out_w), {a},
                 [top, left, H, W](const Var& g, const std::vector<Var>&) {
                   return std::vector<Var>{crop_hw(g, top, left, H, W)};
                 });
}

Var flip_hw(const Var& a, bool flip_h, bool flip_w) {
  require(a.shape().size() == 4, ErrorKind::internal, "flip_hw: rank 4 required");
  return make_op("flip_hw", kernels::flip_hw(a.value(), flip_h, flip_w), {a},
                 [flip_h, flip_w](const Var& g, const std::vector<Var>&) {
                   return std::vector<Var>{flip_hw(g, flip_h, flip_w)};
                 });
}

Var transpose01(const Var& a) {
  require(a.shape().size() >= 2, ErrorKind::internal, "transpose01: rank >= 2 required");
  return make_op("transpose01", kernels::transpose01(a.value()), {a},
                 [](const Var& g, const std::vector<Var>&) {
                   return std::vector<Var>{transpose01(g)};
                 });
}

// ---- reductions and broadcasts ----

Var rowsum(const Var& a) {
  require(a.shape().size() == 2, ErrorKind::internal, "rowsum: rank 2 required");
  const int64_t n = a.shape()[0], m = a.shape()[1];
  Tensor out({n, 1});
  for (int64_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (int64_t j = 0; j < m; ++j) s += a.value()[i * m + j];
    out[i] = s;
  }
  return make_op("rowsum", std::move(out), {a},
                 [m](const Var& g, const std::vector<Var>&) {
                   return std::vector<Var>{colbroadcast(g, m)};
                 });
}

Var colbroadcast(const Var& a, int64_t m) {
  require(a.shape().size() == 2 && a.shape()[1] == 1, ErrorKind::internal,
          "colbroadcast: [N,1] required");
  const int64_t n = a.shape()[0];
  Tensor out({n, m});
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < m; ++j) out[i * m + j] = a.value()[i];
  return make_op("colbroadcast", std::move(out), {a},
                 [](const Var& g, const std::vector<Var>&) {
                   return std::vector<Var>{rowsum(g)};
                 });
}

Var colsum(const Var& a) {
  require(a.shape().size() == 2, ErrorKind::internal, "colsum: rank 2 required");
  const int64_t n = a.shape()[0], m = a.shape()[1];
  Tensor out({1, m});
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < m; ++j) out[j] += a.value()[i * m + j];
  return make_op("colsum", std::move(out), {a},
                 [n](const Var& g, const std::vector<Var>&) {
                   return std::vector<Var>{rowbroadcast(g, n)};
                 });
}

Var rowbroadcast(const Var& a, int64_t n) {
  require(a.shape().size() == 2 && a.shape()[0] == 1, ErrorKind::internal,
          "rowbroadcast: [1,M] required");
  const int64_t m = a.shape()[1];
  Tensor out({n, m});
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < m; ++j) out[i * m + j] = a.value()[j];
  return make_op("rowbroadcast", std::move(out), {a},
                 [](const Var& g, const std::vector<Var>&) {
                   return std::vector<Var>{colsum(g)};
                 });
}

Var sum_all(const Var& a) {
  double s = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) s += a.value()[i];
  Shape orig = a.shape();
  return make_op("sum_all", Tensor::scalar(s), {a},
                 [orig = std::move(orig)](const Var& g, const std::vector<Var>&) {
                   return std::vector<Var>{mul(Var::constant(Tensor::ones(orig)), g)};
                 });
}

// ---- composites ----

Var mean_all(const Var& a) { return scale(sum_all(a), 1.0 / static_cast<double>(a.numel())); }

Var dot_all(const Var& a, const Var& b) { return sum_all(mul(a, b)); }

Var l2norm(const Var& a) { return sqrt(sum_all(square(a))); }

Var div(const Var& a, const Var& b) { return mul(a, reciprocal(b)); }

Var instance_norm(const Var& input, double eps) {
  require(input.shape().size() == 4, ErrorKind::internal, "instance_norm: rank 4 required");
  const int64_t N = input.shape()[0], C = input.shape()[1];
  const int64_t hw = input.shape()[2] * input.shape()[3];
  require(hw >= 2, ErrorKind::internal, "instance_norm: needs H*W >= 2");
  Var x2 = reshape(input, {N * C, hw});
  Var mu = scale(rowsum(x2), 1.0 / static_cast<double>(hw));
  Var centered = sub(x2, colbroadcast(mu, hw));
  Var var = scale(rowsum(square(centered)), 1.0 / static_cast<double>(hw));
  Var denom = sqrt(add(var, Var::scalar(eps)));
  Var y = mul(centered, colbroadcast(reciprocal(denom), hw));
  return reshape(y, input.shape());
}

Var cross_entropy(const Var& logits, const std::vector<int>& labels) {
  require(logits.shape().size() == 2, ErrorKind::internal, "cross_entropy: logits must be [N,C]");
  const int64_t N = logits.shape()[0], C = logits.shape()[1];
  require(static_cast<int64_t>(labels.size()) == N, ErrorKind::internal,
          "cross_entropy: label count mismatch");
  Tensor rowmax({N, C});
  Tensor onehot({N, C});
  for (int64_t i = 0; i < N; ++i) {
    require(labels[i] >= 0 && labels[i] < C, ErrorKind::data,
            "cross_entropy: label out of range");
    double m = logits.value()[i * C];
    for (int64_t j = 1; j < C; ++j) m = std::max(m, logits.value()[i * C + j]);
    for (int64_t j = 0; j < C; ++j) rowmax[i * C + j] = m;
    onehot[i * C + labels[i]] = 1.0;
  }
  // The row-max shift is a detached constant; the exact gradient is unchanged.
  Var shifted = sub(logits, Var::constant(std::move(rowmax)));
  Var z = rowsum(exp(shifted));
  Var picked = rowsum(mul(shifted, Var::constant(std::move(onehot))));
  Var per = sub(log(z), picked);
  return scale(sum_all(per), 1.0 / static_cast<double>(N));
}

Var hinge_loss(const Var& scores, const std::vector<int>& sign_labels) {
  const int64_t N = static_cast<int64_t>(sign_labels.size());
  require(scores.numel() == N, ErrorKind::internal, "hinge_loss: score count mismatch");
  Tensor y({N, 1});
  for (int64_t i = 0; i < N; ++i) {
    require(sign_labels[i] == 1 || sign_labels[i] == -1, ErrorKind::data,
            "hinge_loss: labels must be +1/-1");
    y[i] = static_cast<double>(sign_labels[i]);
  }
  Var s = reshape(scores, {N, 1});
  Var margins = sub(Var::constant(Tensor::ones({N, 1})), mul(Var::constant(std::move(y)), s));
  return scale(sum_all(relu(margins)), 1.0 / static_cast<double>(N));
}

// ---- reverse pass ----

std::vector<Var> grad(const Var& output, const std::vector<Var>& inputs, bool create_graph) {
  require(output.defined() && output.tracked(), ErrorKind::internal,
          "grad: output is not tracked");
  require(output.value().is_scalar(), ErrorKind::internal, "grad: output must be scalar");

  // Post-order DFS over the tracked subgraph; each node visited exactly once.
  std::vector<Node*> topo;
  std::unordered_set<Node*> seen;
  struct Frame {
    Node* n;
    size_t next = 0;
  };
  std::vector<Frame> stack{{output.node()}};
  seen.insert(output.node());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next < f.n->parents.size()) {
      const Var& p = f.n->parents[f.next++];
      if (p.tracked() && !seen.count(p.node())) {
        seen.insert(p.node());
        stack.push_back({p.node()});
      }
    } else {
      topo.push_back(f.n);
      stack.pop_back();
    }
  }

  std::unordered_map<Node*, Var> adjoint;
  {
    const bool saved = GradMode::enabled();
    GradMode::set(create_graph);
    adjoint[output.node()] = Var::constant(Tensor::ones(output.value().shape()));
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
      Node* n = *it;
      auto git = adjoint.find(n);
      if (git == adjoint.end() || !n->vjp) continue;
      Var g = git->second;
      std::vector<Var> pgrads = n->vjp(g, n->parents);
      require(pgrads.size() == n->parents.size(), ErrorKind::internal,
              "grad: vjp arity mismatch in op " + std::string(n->op));
      for (size_t i = 0; i < n->parents.size(); ++i) {
        const Var& p = n->parents[i];
        if (!p.tracked() || !pgrads[i].defined()) continue;
        Var& slot = adjoint[p.node()];
        slot = slot.defined() ? add(slot, pgrads[i]) : pgrads[i];
      }
    }
    GradMode::set(saved);
  }

  std::vector<Var> result;
  result.reserve(inputs.size());
  for (const Var& in : inputs) {
    auto it = in.defined() ? adjoint.find(in.node()) : adjoint.end();
    if (it != adjoint.end())
      result.push_back(it->second);
    else
      result.push_back(Var::constant(Tensor::zeros(in.value().shape())));
  }
  return result;
}

}  // namespace dckit
