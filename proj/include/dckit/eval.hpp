#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dckit/condense.hpp"
#include "dckit/data.hpp"
#include "dckit/nn.hpp"

namespace dckit::eval {

struct EvalProtocol {
  int64_t n_models = 5;  // classifiers trained from scratch per synthetic set
  int64_t epochs = 200;
  int64_t batch = 256;
  double lr = 0.01;
  double momentum = 0.5;
  double lr_decay = 0.1;
  double lr_decay_at = 0.6667;  // fraction of epochs
  bool augment = false;
  uint64_t seed_base = 0;
  nn::ModelKind model_kind = nn::ModelKind::convnet;
  int64_t model_width = 64;
  int model_depth = 3;
  std::vector<int64_t> model_hidden = {64};
};

struct EvalResult {
  double mean = 0.0;
  double stddev = 0.0;
  std::vector<double> accuracies;
  bool degenerate = false;  // all-equal synthetic pixels
};

// Trains fresh classifiers on the synthetic set only and reports mean/std of
// their test accuracies. Models train in parallel with isolated RNG streams.
EvalResult evaluate(const cond::SyntheticSet& synth, const data::DatasetContainer& testset,
                    const EvalProtocol& protocol);

cond::SyntheticSet random_select(const data::DatasetContainer& ds, int64_t ipc, uint64_t seed);

struct SelectionScores {
  std::vector<double> grand;  // mean loss-gradient norm over briefly trained models
  std::vector<double> el2n;   // mean ||softmax - onehot||
};

SelectionScores grand_el2n_scores(const data::DatasetContainer& ds, int n_models,
                                  const EvalProtocol& protocol, int64_t train_epochs = 1);

// Keeps the lowest-scoring ipc samples per class.
cond::SyntheticSet select_low_scores(const data::DatasetContainer& ds,
                                     const std::vector<double>& scores, int64_t ipc);

// K[i][j] = <d loss / d s_i, d loss / d s_j> over flattened pixels.
Tensor ntk_gram(const std::function<Var(const Var&)>& matching_loss,
                const cond::SyntheticSet& synth);

struct GramSeries {
  std::vector<std::pair<int64_t, Tensor>> snapshots;
  std::vector<double> velocities;
};

// v_t = 1 - <K_t, K_{t+1}>_F / (||K_t||_F ||K_{t+1}||_F)
std::vector<double> ntk_velocity(const std::vector<std::pair<int64_t, Tensor>>& snapshots);

// Representation metrics on L2-normalized features (normalization optional).
// align: mean squared distance over same-class pairs; uniform: log mean
// exp(-2 d^2) over all pairs.
std::pair<double, double> alignment_uniformity(const Tensor& features,
                                               const std::vector<int>& labels,
                                               bool normalize = true);

Tensor penultimate_features(const nn::Model& model, const Tensor& batch);

enum class MemoryBuilder { ring_buffer, condensed };

struct ContinualConfig {
  std::vector<data::DatasetContainer> tasks;  // global, dense labels across tasks
  int64_t memory_per_class = 10;
  MemoryBuilder builder = MemoryBuilder::ring_buffer;
  int64_t epochs_per_task = 30;
  int64_t batch = 64;
  double lr = 0.01;
  double momentum = 0.5;
  cond::CondenseConfig condense_cfg;  // used when builder == condensed
  nn::ModelKind model_kind = nn::ModelKind::convnet;
  int64_t model_width = 32;
  int model_depth = 3;
  uint64_t seed = 0;
};

struct ContinualResult {
  std::vector<double> stage_avg_accuracy;          // after each task, over seen tasks
  std::vector<std::vector<double>> per_task_acc;   // per stage, per seen task
};

ContinualResult continual_run(const ContinualConfig& cfg);

}  // namespace dckit::eval
