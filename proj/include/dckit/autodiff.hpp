#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "dckit/tensor.hpp"

namespace dckit {

class Var;
using VjpFn = std::function<std::vector<Var>(const Var& gout, const std::vector<Var>& parents)>;

struct Node {
  Tensor value;
  bool requires_grad = false;
  std::vector<Var> parents;  // empty for leaves and constants
  VjpFn vjp;                 // null for leaves
  const char* op = "leaf";
};

// Handle into a differentiation graph. Ops on tracked Vars record nodes whose
// backward rules are themselves written in terms of Var ops, so a backward
// pass run under grad mode yields a graph that can be differentiated again.
class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);

  static Var constant(Tensor value) { return Var(std::move(value), false); }
  static Var scalar(double v) { return constant(Tensor::scalar(v)); }

  bool defined() const { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  bool tracked() const { return node_ && node_->requires_grad; }
  Var detach() const;

  const Shape& shape() const { return node_->value.shape(); }
  int64_t numel() const { return node_->value.numel(); }

  Node* node() const { return node_.get(); }

 private:
  explicit Var(std::shared_ptr<Node> n) : node_(std::move(n)) {}
  std::shared_ptr<Node> node_;
  friend Var make_op(const char* name, Tensor value, std::vector<Var> parents, VjpFn vjp);
};

// Thread-local switch controlling whether ops record graph nodes.
class GradMode {
 public:
  static bool enabled();
  static void set(bool on);
};

struct NoGradGuard {
  NoGradGuard() : prev_(GradMode::enabled()) { GradMode::set(false); }
  ~NoGradGuard() { GradMode::set(prev_); }

 private:
  bool prev_;
};

Var make_op(const char* name, Tensor value, std::vector<Var> parents, VjpFn vjp);

// Reverse-mode gradients of a scalar output. With create_graph the returned
// Vars are tracked and support a further differentiation pass. Inputs that do
// not participate in the output's graph get zero gradients.
std::vector<Var> grad(const Var& output, const std::vector<Var>& inputs,
                      bool create_graph = false);

// ---- primitive ops ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double c);
Var relu(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
Var square(const Var& a);
Var sqrt(const Var& a);
Var reciprocal(const Var& a);

Var matmul(const Var& a, const Var& b);
Var transpose2d(const Var& a);
Var reshape(const Var& a, Shape shape);

Var conv2d(const Var& input, const Var& kernel, int padding);
Var avgpool2d(const Var& input, int window);
Var upsample2d(const Var& input, int window);

// Contiguous row-range slice along dim 0, and its adjoint zero-embed.
Var slice_rows(const Var& a, int64_t start, int64_t count);
Var pad_rows(const Var& a, int64_t start, int64_t total);

// 4-d spatial crop/zero-pad, mutually adjoint.
Var crop_hw(const Var& a, int off_h, int off_w, int out_h, int out_w);
Var pad_hw(const Var& a, int top, int left, int out_h, int out_w);
Var flip_hw(const Var& a, bool flip_h, bool flip_w);
Var transpose01(const Var& a);

Var rowsum(const Var& a);                    // [N,M] -> [N,1]
Var colbroadcast(const Var& a, int64_t m);   // [N,1] -> [N,M]
Var colsum(const Var& a);                    // [N,M] -> [1,M]
Var rowbroadcast(const Var& a, int64_t n);   // [1,M] -> [N,M]
Var sum_all(const Var& a);                   // -> scalar

// ---- composites ----
inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator*(const Var& a, double c) { return scale(a, c); }
inline Var operator*(double c, const Var& a) { return scale(a, c); }
inline Var neg(const Var& a) { return scale(a, -1.0); }

Var mean_all(const Var& a);
Var dot_all(const Var& a, const Var& b);
Var l2norm(const Var& a);  // sqrt(sum(a^2)), gradient defined as 0 at a == 0
Var div(const Var& a, const Var& b);

Var instance_norm(const Var& input, double eps);
Var cross_entropy(const Var& logits, const std::vector<int>& labels);
Var hinge_loss(const Var& scores, const std::vector<int>& sign_labels);

}  // namespace dckit
