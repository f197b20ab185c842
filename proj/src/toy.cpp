#include "dckit/toy.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "dckit/rng.hpp"

namespace dckit::toy {

double dot(const Vec2& a, const Vec2& b) { return a[0] * b[0] + a[1] * b[1]; }
double norm(const Vec2& a) { return std::sqrt(dot(a, a)); }

namespace {

constexpr double kEpsCap = 0.20198050606196655;  // 1 - sqrt(2/pi)

Vec2 add(const Vec2& a, const Vec2& b) { return {a[0] + b[0], a[1] + b[1]}; }
Vec2 sub(const Vec2& a, const Vec2& b) { return {a[0] - b[0], a[1] - b[1]}; }
Vec2 mul(const Vec2& a, double c) { return {a[0] * c, a[1] * c}; }

Vec2 unit_or_zero(const Vec2& a) {
  const double n = norm(a);
  return n == 0.0 ? Vec2{0, 0} : mul(a, 1.0 / n);
}

Vec2 project_ball(const Vec2& a, double eps) {
  const double n = norm(a);
  return n <= eps ? a : mul(a, eps / n);
}

}  // namespace

void ToySpec::validate() const {
  require(alpha >= 1.0, ErrorKind::config, "toy: alpha must be >= 1");
  require(beta >= 0.0, ErrorKind::config, "toy: beta must be >= 0");
  require(std::abs(dot(phi1, phi2)) < 1e-12, ErrorKind::config, "toy: phi1, phi2 not orthogonal");
  require(std::abs(norm(phi1) - 1.0) < 1e-12 && std::abs(norm(phi2) - 1.0) < 1e-12,
          ErrorKind::config, "toy: basis vectors must be unit norm");
  require(n >= 1, ErrorKind::config, "toy: n must be >= 1");
  require(eps > 0.0 && eps <= kEpsCap + 1e-12, ErrorKind::config,
          "toy: eps must lie in (0, 1 - sqrt(2/pi)]");
  require(lambda >= 0.0 && lambda < 1.0, ErrorKind::config, "toy: lambda must lie in [0, 1)");
}

ToyDataset sample_toy(const ToySpec& spec) {
  spec.validate();
  ToyDataset ds;
  ds.w = spec.phi1;
  std::mt19937_64 rng(mix64(spec.seed ^ hash_name("toy-sampling")));
  std::uniform_int_distribution<int> coin(0, 1);
  std::normal_distribution<double> gauss(0.0, 1.0);
  ds.x.resize(static_cast<size_t>(spec.n));
  ds.y.resize(static_cast<size_t>(spec.n));
  Vec2 sum_pos{0, 0}, sum_neg{0, 0};
  for (int64_t i = 0; i < spec.n; ++i) {
    const int y = coin(rng) == 1 ? 1 : -1;
    const Vec2 mean = add(mul(spec.phi1, y * spec.alpha), mul(spec.phi2, spec.beta));
    const Vec2 x{mean[0] + gauss(rng), mean[1] + gauss(rng)};
    ds.x[static_cast<size_t>(i)] = x;
    ds.y[static_cast<size_t>(i)] = y;
    if (-y * dot(ds.w, x) < 1.0) {
      if (y == 1) {
        ds.active_pos.push_back(static_cast<size_t>(i));
        sum_pos = add(sum_pos, x);
      } else {
        ds.active_neg.push_back(static_cast<size_t>(i));
        sum_neg = add(sum_neg, x);
      }
    }
  }
  if (!ds.active_pos.empty()) ds.mu_pos = mul(sum_pos, 1.0 / double(ds.active_pos.size()));
  if (!ds.active_neg.empty()) ds.mu_neg = mul(sum_neg, 1.0 / double(ds.active_neg.size()));
  return ds;
}

Vec2 hinge_grad(const Vec2& x, int y, const Vec2& w) {
  if (-y * dot(w, x) < 1.0) return mul(x, -double(y));
  return {0, 0};
}

double toy_matching_loss(const ToyDataset& ds, const std::vector<size_t>& real_idx,
                         const std::vector<std::pair<Vec2, int>>& synth, double lambda) {
  require(!real_idx.empty(), ErrorKind::data, "toy_matching_loss: empty real subset");
  require(!synth.empty(), ErrorKind::data, "toy_matching_loss: empty synthetic set");
  Vec2 gr{0, 0};
  for (size_t i : real_idx) gr = add(gr, hinge_grad(ds.x[i], ds.y[i], ds.w));
  gr = mul(gr, 1.0 / double(real_idx.size()));
  Vec2 gs{0, 0};
  double pen = 0.0;
  for (const auto& [s, t] : synth) {
    gs = add(gs, hinge_grad(s, t, ds.w));
    pen += norm(s);
  }
  gs = mul(gs, 1.0 / double(synth.size()));
  return norm(sub(gr, gs)) + lambda / double(synth.size()) * pen;
}

namespace {

Vec2 mean_grad(const ToyDataset& ds, const std::vector<size_t>& idx) {
  Vec2 g{0, 0};
  for (size_t i : idx) g = add(g, hinge_grad(ds.x[i], ds.y[i], ds.w));
  return mul(g, 1.0 / double(idx.size()));
}

bool active(const Vec2& s, int t, const Vec2& w) { return -t * dot(w, s) < 1.0; }

}  // namespace

double classwise_objective(const ToyDataset& ds, const ToyPair& s, double lambda) {
  return toy_matching_loss(ds, ds.active_pos, {{s.s1, 1}}, lambda) +
         toy_matching_loss(ds, ds.active_neg, {{s.s2, -1}}, lambda);
}

double collective_objective(const ToyDataset& ds, const ToyPair& s, double lambda) {
  // Sum of per-class mean gradients on both sides, one distance evaluation.
  const Vec2 greal = add(mean_grad(ds, ds.active_pos), mean_grad(ds, ds.active_neg));
  const Vec2 gsynth = add(hinge_grad(s.s1, 1, ds.w), hinge_grad(s.s2, -1, ds.w));
  return norm(sub(greal, gsynth)) + lambda / 2.0 * (norm(s.s1) + norm(s.s2));
}

void classwise_objective_grad(const ToyDataset& ds, const ToyPair& s, double lambda,
                              ToyPair& g) {
  const Vec2 d_pos = sub(mean_grad(ds, ds.active_pos), hinge_grad(s.s1, 1, ds.w));
  const Vec2 d_neg = sub(mean_grad(ds, ds.active_neg), hinge_grad(s.s2, -1, ds.w));
  // d/ds of ||greal - g(s,t)|| is t * 1{active} * unit(d); the penalty adds
  // lambda * unit(s) with subgradient 0 at s = 0.
  g.s1 = add(mul(unit_or_zero(d_pos), active(s.s1, 1, ds.w) ? 1.0 : 0.0),
             mul(unit_or_zero(s.s1), lambda));
  g.s2 = add(mul(unit_or_zero(d_neg), active(s.s2, -1, ds.w) ? -1.0 : 0.0),
             mul(unit_or_zero(s.s2), lambda));
}

void collective_objective_grad(const ToyDataset& ds, const ToyPair& s, double lambda,
                               ToyPair& g) {
  const Vec2 greal = add(mean_grad(ds, ds.active_pos), mean_grad(ds, ds.active_neg));
  const Vec2 gsynth = add(hinge_grad(s.s1, 1, ds.w), hinge_grad(s.s2, -1, ds.w));
  const Vec2 u = unit_or_zero(sub(greal, gsynth));
  g.s1 = add(mul(u, active(s.s1, 1, ds.w) ? 1.0 : 0.0), mul(unit_or_zero(s.s1), lambda / 2.0));
  g.s2 = add(mul(u, active(s.s2, -1, ds.w) ? -1.0 : 0.0), mul(unit_or_zero(s.s2), lambda / 2.0));
}

ToyPair classwise_optimum(const ToyDataset& ds, double eps) {
  const double np = norm(ds.mu_pos), nn = norm(ds.mu_neg);
  require(np > 0.0 && nn > 0.0, ErrorKind::numeric,
          "classwise_optimum: degenerate sample (zero mean)");
  return {mul(ds.mu_pos, eps / np), mul(ds.mu_neg, eps / nn)};
}

ToyPair collective_optimum(const ToyDataset& ds, double eps) {
  const Vec2 diff = sub(ds.mu_pos, ds.mu_neg);
  const double nd = norm(diff);
  require(nd > 0.0, ErrorKind::numeric, "collective_optimum: mu+ equals mu-");
  const Vec2 u = mul(diff, 1.0 / nd);
  return {mul(u, eps), mul(u, -eps)};
}

double ratio_R(const std::vector<Vec2>& synth, const Vec2& phi1, const Vec2& phi2) {
  require(!synth.empty(), ErrorKind::data, "ratio_R: empty set");
  double acc = 0.0;
  for (const Vec2& s : synth) {
    const double a = std::abs(dot(s, phi1)), b = std::abs(dot(s, phi2));
    require(a + b > 0.0, ErrorKind::numeric, "ratio_R: zero synthetic vector");
    acc += a / (a + b);
  }
  return acc / double(synth.size());
}

double ratio_R(const ToyPair& pair, const Vec2& phi1, const Vec2& phi2) {
  return ratio_R(std::vector<Vec2>{pair.s1, pair.s2}, phi1, phi2);
}

ToyPair pgd_minimize(const ToyDataset& ds, bool collective, double eps, double lambda,
                     const PgdOpts& opts) {
  std::mt19937_64 rng(mix64(opts.seed ^ hash_name("toy-pgd")));
  std::uniform_real_distribution<double> u(-eps, eps);
  ToyPair s{{u(rng), u(rng)}, {u(rng), u(rng)}};
  s.s1 = project_ball(s.s1, eps);
  s.s2 = project_ball(s.s2, eps);
  ToyPair g;
  for (int64_t it = 0; it < opts.steps; ++it) {
    if (collective)
      collective_objective_grad(ds, s, lambda, g);
    else
      classwise_objective_grad(ds, s, lambda, g);
    const Vec2 n1 = project_ball(sub(s.s1, mul(g.s1, opts.step)), eps);
    const Vec2 n2 = project_ball(sub(s.s2, mul(g.s2, opts.step)), eps);
    const double move = std::max(norm(sub(n1, s.s1)), norm(sub(n2, s.s2))) / opts.step;
    s.s1 = n1;
    s.s2 = n2;
    if (move <= opts.tol) break;
  }
  return s;
}

BoundsReport verify_bounds(const ToySpec& spec, int trials) {
  require(trials >= 1, ErrorKind::config, "verify_bounds: trials must be >= 1");
  BoundsReport rep;
  rep.alpha = spec.alpha;
  rep.beta = spec.beta;
  rep.bound = spec.alpha / (spec.alpha + spec.beta);
  double sum = 0.0, sq = 0.0;
  for (int k = 0; k < trials; ++k) {
    ToySpec s = spec;
    s.seed = mix64(spec.seed ^ (0x7472u + static_cast<uint64_t>(k) * 0x9e37ull));
    ToyDataset ds = sample_toy(s);
    BoundsTrial t;
    t.classwise_R = ratio_R(classwise_optimum(ds, s.eps), s.phi1, s.phi2);
    t.collective_R = ratio_R(collective_optimum(ds, s.eps), s.phi1, s.phi2);
    rep.trials.push_back(t);
    rep.max_classwise_R = std::max(rep.max_classwise_R, t.classwise_R);
    rep.min_collective_R = std::min(rep.min_collective_R, t.collective_R);
    sum += t.classwise_R;
    sq += t.classwise_R * t.classwise_R;
  }
  const double mean = sum / trials;
  rep.mc_tol = 4.0 * std::sqrt(std::max(sq / trials - mean * mean, 0.0));
  return rep;
}

}  // namespace dckit::toy
