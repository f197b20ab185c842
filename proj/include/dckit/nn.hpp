#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dckit/autodiff.hpp"
#include "dckit/rng.hpp"

namespace dckit::nn {

enum class ModelKind { linear, mlp, convnet };
enum class LossKind { cross_entropy, hinge };

const char* to_string(ModelKind k);
ModelKind model_kind_from(const std::string& s);

struct Hyper {
  int64_t in_h = 1;
  int64_t in_w = 1;
  int64_t in_c = 1;
  int64_t classes = 2;
  std::vector<int64_t> hidden = {64};  // mlp widths; empty = single linear layer
  int64_t width = 128;                 // convnet channels
  int depth = 3;                       // convnet blocks
  double norm_eps = 1e-5;

  int64_t in_features() const { return in_h * in_w * in_c; }
};

// Scaled-uniform fan-in initialization: U(-1/sqrt(fan_in), +1/sqrt(fan_in)),
// biases zero. Identical seeds give identical parameters.
struct InitSpec {
  uint64_t seed = 0;
};

struct Layer {
  std::string name;
  Tensor param;
};

struct Model {
  ModelKind kind = ModelKind::mlp;
  Hyper hyper;
  std::vector<Layer> layers;

  int64_t param_count() const;
};

// Parameters wrapped as Vars for one differentiation episode.
struct Binding {
  std::vector<Var> params;
};

Model build(ModelKind kind, const Hyper& hyper, const InitSpec& init);
Binding bind(const Model& model, bool tracked = true);

// Logits [N,C] (linear: scores [N,1]). Tracked when batch or params are.
Var forward(const Model& model, const Binding& binding, const Var& batch);
// Penultimate representation: convnet = flattened post-block activations,
// mlp = last hidden, linear = flattened input.
Var forward_features(const Model& model, const Binding& binding, const Var& batch);

Tensor predict_logits(const Model& model, const Tensor& batch);
double accuracy(const Model& model, const Tensor& batch, const std::vector<int>& labels);

// Mean loss over the batch. Hinge maps labels {0,1} to signs {-1,+1}.
Var batch_loss(LossKind kind, const Var& logits, const std::vector<int>& labels);

std::vector<std::pair<std::string, Var>> per_layer_grads(const Model& model,
                                                         const Binding& binding,
                                                         const Var& loss,
                                                         bool create_graph);

struct SgdState {
  std::vector<Tensor> momentum;
};

void sgd_step(Model& model, const std::vector<Tensor>& grads, double lr, double momentum,
              SgdState& state);

struct TrainOpts {
  int64_t epochs = 100;
  int64_t batch = 256;
  double lr = 0.01;
  double momentum = 0.5;
  double lr_decay = 0.1;      // multiplier applied once
  double lr_decay_at = 2.0;   // fraction of epochs; >1 disables
  LossKind loss = LossKind::cross_entropy;
  uint64_t seed = 0;
};

// Plain SGD training on an in-memory set of images [N,C,H,W] + labels.
void train_sgd(Model& model, const Tensor& images, const std::vector<int>& labels,
               const TrainOpts& opts);

}  // namespace dckit::nn
