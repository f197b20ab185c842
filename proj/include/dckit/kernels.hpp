#pragma once

#include "dckit/tensor.hpp"

// Raw value-level kernels behind the autodiff ops. Shape validation happens
// at the op layer; these assume consistent arguments.
namespace dckit::kernels {

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose2d(const Tensor& a);

// input [N,C,H,W], kernel [F,C,kh,kw], zero padding, stride 1 cross-correlation.
Tensor conv2d(const Tensor& input, const Tensor& kernel, int padding);

Tensor avgpool2d(const Tensor& input, int window);
Tensor upsample2d(const Tensor& input, int window);

Tensor crop_hw(const Tensor& a, int off_h, int off_w, int out_h, int out_w);
Tensor pad_hw(const Tensor& a, int top, int left, int out_h, int out_w);
Tensor flip_hw(const Tensor& a, bool flip_h, bool flip_w);
Tensor transpose01(const Tensor& a);

}  // namespace dckit::kernels
