#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dckit/augment.hpp"
#include "dckit/data.hpp"
#include "dckit/nn.hpp"

namespace dckit::cond {

enum class MatchMode { class_wise, class_collective };
enum class WarmupPolicy { none, simple, bilevel };
enum class WarmupCombine { any, all };  // how the bilevel conditions combine
enum class DistanceKind { layerwise_cosine, l2 };
enum class InitStrategy { real_sample, gaussian_noise };

const char* to_string(MatchMode m);
const char* to_string(WarmupPolicy p);
const char* to_string(DistanceKind d);
const char* to_string(InitStrategy s);
MatchMode match_mode_from(const std::string& s);
WarmupPolicy warmup_from(const std::string& s);
DistanceKind distance_from(const std::string& s);
InitStrategy init_strategy_from(const std::string& s);

struct CondenseConfig {
  MatchMode matching_mode = MatchMode::class_collective;
  WarmupPolicy warmup = WarmupPolicy::bilevel;
  WarmupCombine warmup_combine = WarmupCombine::any;
  int64_t outer_loops = 1000;       // K_o
  int64_t steps_per_stage = 10;     // K_i
  int64_t stages = 5;               // T (model-training period)
  int64_t warmup_outer = 250;       // gamma_o
  int64_t warmup_inner = 10;        // gamma_i
  double eta_s = 0.1;
  double momentum_s = 0.5;
  double eta_theta = 0.01;
  double momentum_theta = 0.5;
  int64_t real_batch_per_class = 16;
  DistanceKind distance = DistanceKind::layerwise_cosine;
  bool augment = false;
  std::vector<aug::TransformKind> transforms = aug::default_transforms();
  InitStrategy init = InitStrategy::real_sample;
  int64_t ipc = 1;
  uint64_t seed = 0;
  double tau = 0.1;              // recorded from the reference protocol; unused
  int64_t class_group_size = 0;  // >0: sum gradients within class groups only
  nn::ModelKind model_kind = nn::ModelKind::convnet;
  int64_t model_width = 128;
  int model_depth = 3;
  std::vector<int64_t> model_hidden = {64};
  nn::LossKind loss = nn::LossKind::cross_entropy;
  int64_t gram_every = 0;  // snapshot cadence in S-updates; 0 = off
  int64_t gram_cap = 500;

  void validate() const;
};

// The learnable condensed dataset: ipc images per class in class-major order,
// labels fixed.
struct SyntheticSet {
  Tensor images;  // [classes*ipc, C, H, W]
  std::vector<int> labels;
  int64_t ipc = 0;
  int64_t classes = 0;

  int64_t count() const { return classes * ipc; }
  std::vector<int64_t> class_rows(int64_t c) const;
};

struct RunLogRow {
  int64_t outer = 0;
  int64_t inner = 0;
  MatchMode mode = MatchMode::class_wise;
  double loss = 0.0;
  double wall_ms = 0.0;
};

struct RunLog {
  std::vector<RunLogRow> rows;
  std::vector<std::pair<int64_t, Tensor>> gram_snapshots;  // (global S-step, K)
  std::vector<std::string> warnings;
};

MatchMode select_mode(int64_t outer_idx, int64_t inner_step, const CondenseConfig& cfg);

// Layerwise gradient distance. layerwise_cosine reshapes each gradient to
// (out_slices x rest) and sums 1 - cosine over slices; a zero-norm slice
// contributes 1 and emits a warning. l2 sums per-layer Euclidean norms of the
// difference.
Var gradient_distance(const std::vector<std::pair<std::string, Var>>& g_real,
                      const std::vector<std::pair<std::string, Var>>& g_synth,
                      DistanceKind kind, std::vector<std::string>* warnings = nullptr);

// Inputs for one matching-loss evaluation. Real batches are plain tensors
// (the real side is detached by construction); the synthetic side is a
// tracked Var over the whole set plus its row layout.
struct MatchInputs {
  const nn::Model* model = nullptr;
  const nn::Binding* binding = nullptr;
  std::vector<Tensor> real_batches;             // per class
  std::vector<std::vector<int>> real_labels;    // per class
  Var synth_images;                             // tracked [classes*ipc, C,H,W]
  const SyntheticSet* layout = nullptr;
  DistanceKind distance = DistanceKind::layerwise_cosine;
  nn::LossKind loss = nn::LossKind::cross_entropy;
  int64_t class_group_size = 0;
  std::optional<std::vector<aug::AugParams>> augment;  // per class
  std::vector<std::string>* warnings = nullptr;
};

Var classwise_loss(const MatchInputs& in);
Var collective_loss(const MatchInputs& in);
Var matching_loss(MatchMode mode, const MatchInputs& in);

SyntheticSet init_synthetic(const data::DatasetContainer& ds, int64_t ipc, InitStrategy strategy,
                            std::mt19937_64& rng);

std::pair<SyntheticSet, RunLog> condense(const data::DatasetContainer& ds,
                                         const CondenseConfig& cfg);

}  // namespace dckit::cond
