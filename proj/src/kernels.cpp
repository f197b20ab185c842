#include "dckit/kernels.hpp"

#include <Eigen/Dense>

namespace dckit::kernels {

namespace {
using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EMap = Eigen::Map<EMat>;
using ECMap = Eigen::Map<const EMat>;
}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out({m, n});
  EMap(out.data(), m, n).noalias() =
      ECMap(a.data(), m, k) * ECMap(b.data(), k, n);
  return out;
}

Tensor transpose2d(const Tensor& a) {
  const int64_t m = a.dim(0), n = a.dim(1);
  Tensor out({n, m});
  EMap(out.data(), n, m).noalias() = ECMap(a.data(), m, n).transpose();
  return out;
}

Tensor conv2d(const Tensor& input, const Tensor& kernel, int padding) {
  const int64_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  const int64_t F = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
  const int64_t Ho = H + 2 * padding - kh + 1;
  const int64_t Wo = W + 2 * padding - kw + 1;
  Tensor out({N, F, Ho, Wo});

  // im2col buffer for one sample: [C*kh*kw, Ho*Wo]
  const int64_t ckk = C * kh * kw;
  std::vector<double> col(static_cast<size_t>(ckk * Ho * Wo));
  ECMap wmat(kernel.data(), F, ckk);

  const double* in = input.data();
  double* outp = out.data();
  for (int64_t n = 0; n < N; ++n) {
    double* cp = col.data();
    for (int64_t c = 0; c < C; ++c) {
      const double* plane = in + (n * C + c) * H * W;
      for (int64_t i = 0; i < kh; ++i) {
        for (int64_t j = 0; j < kw; ++j) {
          for (int64_t y = 0; y < Ho; ++y) {
            const int64_t sy = y + i - padding;
            if (sy < 0 || sy >= H) {
              for (int64_t x = 0; x < Wo; ++x) *cp++ = 0.0;
              continue;
            }
            const double* row = plane + sy * W;
            for (int64_t x = 0; x < Wo; ++x) {
              const int64_t sx = x + j - padding;
              *cp++ = (sx >= 0 && sx < W) ? row[sx] : 0.0;
            }
          }
        }
      }
    }
    EMap(outp + n * F * Ho * Wo, F, Ho * Wo).noalias() =
        wmat * ECMap(col.data(), ckk, Ho * Wo);
  }
  return out;
}

Tensor avgpool2d(const Tensor& input, int window) {
  const int64_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  const int64_t Ho = H / window, Wo = W / window;
  const double inv = 1.0 / (static_cast<double>(window) * window);
  Tensor out({N, C, Ho, Wo});
  const double* in = input.data();
  double* op = out.data();
  for (int64_t nc = 0; nc < N * C; ++nc) {
    const double* plane = in + nc * H * W;
    for (int64_t y = 0; y < Ho; ++y) {
      for (int64_t x = 0; x < Wo; ++x) {
        double s = 0.0;
        for (int i = 0; i < window; ++i) {
          const double* row = plane + (y * window + i) * W + x * window;
          for (int j = 0; j < window; ++j) s += row[j];
        }
        *op++ = s * inv;
      }
    }
  }
  return out;
}

Tensor upsample2d(const Tensor& input, int window) {
  const int64_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  const int64_t Ho = H * window, Wo = W * window;
  Tensor out({N, C, Ho, Wo});
  const double* in = input.data();
  double* op = out.data();
  for (int64_t nc = 0; nc < N * C; ++nc) {
    const double* plane = in + nc * H * W;
    for (int64_t y = 0; y < Ho; ++y) {
      const double* row = plane + (y / window) * W;
      for (int64_t x = 0; x < Wo; ++x) *op++ = row[x / window];
    }
  }
  return out;
}

Tensor crop_hw(const Tensor& a, int off_h, int off_w, int out_h, int out_w) {
  const int64_t N = a.dim(0), C = a.dim(1), H = a.dim(2), W = a.dim(3);
  Tensor out({N, C, out_h, out_w});
  const double* in = a.data();
  double* op = out.data();
  for (int64_t nc = 0; nc < N * C; ++nc) {
    const double* plane = in + nc * H * W;
    for (int64_t y = 0; y < out_h; ++y) {
      const double* row = plane + (y + off_h) * W + off_w;
      for (int64_t x = 0; x < out_w; ++x) *op++ = row[x];
    }
  }
  return out;
}

Tensor pad_hw(const Tensor& a, int top, int left, int out_h, int out_w) {
  const int64_t N = a.dim(0), C = a.dim(1), H = a.dim(2), W = a.dim(3);
  Tensor out({N, C, out_h, out_w});
  const double* in = a.data();
  double* op = out.data();
  for (int64_t nc = 0; nc < N * C; ++nc) {
    const double* plane = in + nc * H * W;
    double* oplane = op + nc * out_h * out_w;
    for (int64_t y = 0; y < H; ++y) {
      double* row = oplane + (y + top) * out_w + left;
      const double* src = plane + y * W;
      for (int64_t x = 0; x < W; ++x) row[x] = src[x];
    }
  }
  return out;
}

Tensor flip_hw(const Tensor& a, bool flip_h, bool flip_w) {
  const int64_t N = a.dim(0), C = a.dim(1), H = a.dim(2), W = a.dim(3);
  Tensor out(a.shape());
  const double* in = a.data();
  double* op = out.data();
  for (int64_t nc = 0; nc < N * C; ++nc) {
    const double* plane = in + nc * H * W;
    for (int64_t y = 0; y < H; ++y) {
      const int64_t sy = flip_h ? H - 1 - y : y;
      for (int64_t x = 0; x < W; ++x) {
        const int64_t sx = flip_w ? W - 1 - x : x;
        *op++ = plane[sy * W + sx];
      }
    }
  }
  return out;
}

Tensor transpose01(const Tensor& a) {
  const int64_t A = a.dim(0), B = a.dim(1);
  int64_t rest = 1;
  for (size_t i = 2; i < a.rank(); ++i) rest *= a.dim(i);
  Shape s = a.shape();
  std::swap(s[0], s[1]);
  Tensor out(s);
  const double* in = a.data();
  double* op = out.data();
  for (int64_t i = 0; i < A; ++i)
    for (int64_t j = 0; j < B; ++j)
      std::copy(in + (i * B + j) * rest, in + (i * B + j + 1) * rest,
                op + (j * A + i) * rest);
  return out;
}

}  // namespace dckit::kernels
