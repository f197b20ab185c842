#pragma once

#include <random>
#include <string>
#include <vector>

#include "dckit/autodiff.hpp"

namespace dckit::aug {

enum class TransformKind { flip, crop_shift, cutout, scale, brightness };

const char* to_string(TransformKind k);
TransformKind transform_from(const std::string& s);
std::vector<TransformKind> default_transforms();

// One sampled transform instance. Applying the same AugParams to the real and
// synthetic batches yields the identical (Siamese) transformation.
struct AugParams {
  TransformKind kind = TransformKind::flip;
  bool do_flip = false;
  int dy = 0, dx = 0;              // crop_shift offsets
  int box_r = 0, box_c = 0;        // cutout top-left
  int box_h = 0, box_w = 0;        // cutout extent (0 = identity)
  double factor = 1.0;             // scale
  double delta = 0.0;              // brightness
};

AugParams sample_params(const std::vector<TransformKind>& kinds, int h, int w,
                        std::mt19937_64& rng);

// Differentiable w.r.t. batch pixels for every transform kind.
Var apply(const Var& batch, const AugParams& p);

std::pair<Var, Var> dsa_apply(const Var& real_batch, const Var& synth_batch, const AugParams& p);

}  // namespace dckit::aug
