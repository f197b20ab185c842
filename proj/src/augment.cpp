#include "dckit/augment.hpp"

#include <algorithm>
#include <cmath>

namespace dckit::aug {

const char* to_string(TransformKind k) {
  switch (k) {
    case TransformKind::flip: return "flip";
    case TransformKind::crop_shift: return "crop_shift";
    case TransformKind::cutout: return "cutout";
    case TransformKind::scale: return "scale";
    case TransformKind::brightness: return "brightness";
  }
  return "?";
}

TransformKind transform_from(const std::string& s) {
  if (s == "flip") return TransformKind::flip;
  if (s == "crop_shift") return TransformKind::crop_shift;
  if (s == "cutout") return TransformKind::cutout;
  if (s == "scale") return TransformKind::scale;
  if (s == "brightness") return TransformKind::brightness;
  fail(ErrorKind::config, "unknown transform: " + s);
}

std::vector<TransformKind> default_transforms() {
  return {TransformKind::flip, TransformKind::crop_shift, TransformKind::cutout,
          TransformKind::scale, TransformKind::brightness};
}

AugParams sample_params(const std::vector<TransformKind>& kinds, int h, int w,
                        std::mt19937_64& rng) {
  require(!kinds.empty(), ErrorKind::config, "sample_params: empty transform list");
  AugParams p;
  p.kind = kinds[std::uniform_int_distribution<size_t>(0, kinds.size() - 1)(rng)];
  switch (p.kind) {
    case TransformKind::flip:
      p.do_flip = std::uniform_int_distribution<int>(0, 1)(rng) == 1;
      break;
    case TransformKind::crop_shift: {
      const int sh = std::max(1, static_cast<int>(std::lround(h * 0.125)));
      const int sw = std::max(1, static_cast<int>(std::lround(w * 0.125)));
      p.dy = std::uniform_int_distribution<int>(-sh, sh)(rng);
      p.dx = std::uniform_int_distribution<int>(-sw, sw)(rng);
      break;
    }
    case TransformKind::cutout: {
      p.box_h = std::uniform_int_distribution<int>(0, h / 2)(rng);
      p.box_w = std::uniform_int_distribution<int>(0, w / 2)(rng);
      p.box_r = p.box_h > 0 ? std::uniform_int_distribution<int>(0, h - p.box_h)(rng) : 0;
      p.box_c = p.box_w > 0 ? std::uniform_int_distribution<int>(0, w - p.box_w)(rng) : 0;
      break;
    }
    case TransformKind::scale:
      p.factor = std::uniform_real_distribution<double>(0.8, 1.2)(rng);
      break;
    case TransformKind::brightness:
      p.delta = std::uniform_real_distribution<double>(-0.2, 0.2)(rng);
      break;
  }
  return p;
}

namespace {

// Bilinear zoom about the image center as one constant [HW x HW] matrix;
// the warp is then a plain matmul, linear in the pixels.
Tensor scale_matrix(int h, int w, double factor) {
  Tensor m({static_cast<int64_t>(h) * w, static_cast<int64_t>(h) * w});
  const double cy = (h - 1) / 2.0, cx = (w - 1) / 2.0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double sy = cy + (y - cy) / factor;
      const double sx = cx + (x - cx) / factor;
      const int y0 = static_cast<int>(std::floor(sy));
      const int x0 = static_cast<int>(std::floor(sx));
      const double fy = sy - y0, fx = sx - x0;
      const int64_t row = static_cast<int64_t>(y) * w + x;
      auto put = [&](int yy, int xx, double wgt) {
        if (yy < 0 || yy >= h || xx < 0 || xx >= w || wgt == 0.0) return;
        m[row * h * w + yy * w + xx] += wgt;
      };
      put(y0, x0, (1 - fy) * (1 - fx));
      put(y0, x0 + 1, (1 - fy) * fx);
      put(y0 + 1, x0, fy * (1 - fx));
      put(y0 + 1, x0 + 1, fy * fx);
    }
  }
  return m;
}

}  // namespace

Var apply(const Var& batch, const AugParams& p) {
  require(batch.shape().size() == 4, ErrorKind::internal, "augment: batch must be [N,C,H,W]");
  const int64_t n = batch.shape()[0], c = batch.shape()[1];
  const int h = static_cast<int>(batch.shape()[2]), w = static_cast<int>(batch.shape()[3]);
  switch (p.kind) {
    case TransformKind::flip:
      return p.do_flip ? flip_hw(batch, false, true) : batch;
    case TransformKind::crop_shift: {
      const int sh = std::abs(p.dy), sw = std::abs(p.dx);
      require(sh <= h && sw <= w, ErrorKind::config, "crop_shift: offset out of range");
      if (sh == 0 && sw == 0) return batch;
      const int s = std::max(sh, sw);
      Var padded = pad_hw(batch, s, s, h + 2 * s, w + 2 * s);
      return crop_hw(padded, s - p.dy, s - p.dx, h, w);
    }
    case TransformKind::cutout: {
      require(p.box_r >= 0 && p.box_c >= 0 && p.box_r + p.box_h <= h && p.box_c + p.box_w <= w,
              ErrorKind::config, "cutout: box out of range");
      if (p.box_h == 0 || p.box_w == 0) return batch;
      Tensor mask(batch.shape());
      std::fill(mask.raw().begin(), mask.raw().end(), 1.0);
      for (int64_t img = 0; img < n * c; ++img)
        for (int y = p.box_r; y < p.box_r + p.box_h; ++y)
          for (int x = p.box_c; x < p.box_c + p.box_w; ++x)
            mask[img * h * w + static_cast<int64_t>(y) * w + x] = 0.0;
      return mul(batch, Var::constant(std::move(mask)));
    }
    case TransformKind::scale: {
      require(p.factor >= 0.5 && p.factor <= 2.0, ErrorKind::config,
              "scale: factor out of range");
      if (p.factor == 1.0) return batch;
      Var flat = reshape(batch, {n * c, static_cast<int64_t>(h) * w});
      Var warped = matmul(flat, transpose2d(Var::constant(scale_matrix(h, w, p.factor))));
      return reshape(warped, batch.shape());
    }
    case TransformKind::brightness:
      require(std::abs(p.delta) <= 1.0, ErrorKind::config, "brightness: delta out of range");
      return add(batch, Var::scalar(p.delta));
  }
  fail(ErrorKind::internal, "unreachable");
}

std::pair<Var, Var> dsa_apply(const Var& real_batch, const Var& synth_batch, const AugParams& p) {
  require(real_batch.shape().size() == 4 && synth_batch.shape().size() == 4 &&
              real_batch.shape()[2] == synth_batch.shape()[2] &&
              real_batch.shape()[3] == synth_batch.shape()[3],
          ErrorKind::internal, "dsa_apply: spatial shapes must match");
  return {apply(real_batch, p), apply(synth_batch, p)};
}

}  // namespace dckit::aug
