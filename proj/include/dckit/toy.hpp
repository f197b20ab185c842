#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "dckit/common.hpp"

namespace dckit::toy {

using Vec2 = std::array<double, 2>;

double dot(const Vec2& a, const Vec2& b);
double norm(const Vec2& a);

// Two-Gaussian binary task: y uniform on {-1,+1}, x ~ N(y*alpha*phi1 + beta*phi2, I).
struct ToySpec {
  double alpha = 1.0;            // class-discriminative strength, >= 1
  double beta = 0.0;             // class-common strength, >= 0
  Vec2 phi1{1.0, 0.0};
  Vec2 phi2{0.0, 1.0};
  int64_t n = 10000;
  double eps = 0.2;              // synthetic norm cap, <= 1 - sqrt(2/pi)
  double lambda = 0.01;          // capacity penalty weight
  uint64_t seed = 0;

  void validate() const;
};

struct ToyDataset {
  std::vector<Vec2> x;
  std::vector<int> y;                 // +1 / -1
  std::vector<size_t> active_pos;     // X+ indices: -y w^T x < 1, y = +1
  std::vector<size_t> active_neg;     // X-
  Vec2 mu_pos{0, 0};                  // mean over X+
  Vec2 mu_neg{0, 0};                  // mean over X-
  Vec2 w{1, 0};                       // fixed classifier weight (= phi1)
};

struct ToyPair {
  Vec2 s1{0, 0};  // synthetic for +1
  Vec2 s2{0, 0};  // synthetic for -1
};

ToyDataset sample_toy(const ToySpec& spec);

// Hinge gradient under the dataset's activity convention: -y*x for active
// pairs, zero otherwise.
Vec2 hinge_grad(const Vec2& x, int y, const Vec2& w);

// || mean grad over the real subset - mean grad over the synthetic set || +
// (lambda/|S|) * sum ||s||.
double toy_matching_loss(const ToyDataset& ds, const std::vector<size_t>& real_idx,
                         const std::vector<std::pair<Vec2, int>>& synth, double lambda);

// Objectives used by the optimizer and oracles. Class-wise sums the per-class
// losses; collective matches the sums of per-class mean gradients.
double classwise_objective(const ToyDataset& ds, const ToyPair& s, double lambda);
double collective_objective(const ToyDataset& ds, const ToyPair& s, double lambda);
void classwise_objective_grad(const ToyDataset& ds, const ToyPair& s, double lambda,
                              ToyPair& grad_out);
void collective_objective_grad(const ToyDataset& ds, const ToyPair& s, double lambda,
                               ToyPair& grad_out);

ToyPair classwise_optimum(const ToyDataset& ds, double eps);
ToyPair collective_optimum(const ToyDataset& ds, double eps);

double ratio_R(const std::vector<Vec2>& synth, const Vec2& phi1, const Vec2& phi2);
double ratio_R(const ToyPair& pair, const Vec2& phi1, const Vec2& phi2);

struct PgdOpts {
  int64_t steps = 5000;
  double step = 1e-2;
  double tol = 1e-8;  // on the projected-gradient displacement
  uint64_t seed = 1;
};

// Projected (sub)gradient descent onto the eps ball; independent numeric
// oracle for the closed forms.
ToyPair pgd_minimize(const ToyDataset& ds, bool collective, double eps, double lambda,
                     const PgdOpts& opts = {});

struct BoundsTrial {
  double classwise_R = 0.0;
  double collective_R = 0.0;
};

struct BoundsReport {
  double alpha = 0.0, beta = 0.0;
  double bound = 0.0;  // alpha / (alpha + beta)
  std::vector<BoundsTrial> trials;
  double max_classwise_R = 0.0;
  double min_collective_R = 1.0;
  double mc_tol = 0.0;  // 4 sigma of the trial spread, reported for context
};

BoundsReport verify_bounds(const ToySpec& spec, int trials);

}  // namespace dckit::toy
