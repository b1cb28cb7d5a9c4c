#pragma once

#include <cmath>

#include "vattn/tensor.hpp"

namespace vattn {

// Dense per-sample kernels for the fixed computation graph. They are plain
// serial loops arranged for contiguous access; batch-level parallelism is
// applied one level up (one thread per sample, gradients reduced in sample
// order), which keeps results bitwise independent of the thread count.

// 3x3 same-padding convolution, in [Cin,H,W], w [Cout,Cin,3,3], b [Cout].
void conv3x3_forward(const Tensor& in, const Tensor& w, const Tensor& b, Tensor& out);
// d_in += conv transpose of d_out
void conv3x3_backward_input(const Tensor& d_out, const Tensor& w, Tensor& d_in);
// dw/db accumulate
void conv3x3_backward_params(const Tensor& d_out, const Tensor& in, Tensor& dw, Tensor& db);

// 1x1 convolution == per-pixel affine, w [Cout,Cin], b [Cout].
void conv1x1_forward(const Tensor& in, const Tensor& w, const Tensor& b, Tensor& out);
void conv1x1_backward_input(const Tensor& d_out, const Tensor& w, Tensor& d_in);
void conv1x1_backward_params(const Tensor& d_out, const Tensor& in, Tensor& dw, Tensor& db);

// Elementwise nonlinearity used throughout the network: the inverse-square-
// root unit x / sqrt(1 + x^2). Smooth, odd and bounded like tanh, but built
// from vectorizable arithmetic only.
inline double isru(double x) {
    return x / std::sqrt(1.0 + x * x);
}
// derivative expressed through the activation value a = isru(x):
// da/dx = (1 - a^2)^(3/2)
inline double isru_grad_from_act(double a) {
    const double u = 1.0 - a * a;
    return u * std::sqrt(u);
}

void isru_forward(const Tensor& in, Tensor& out);
void isru_backward(const Tensor& act, const Tensor& d_act, Tensor& d_pre);

void softplus_forward(const Tensor& in, Tensor& out);
// d_pre = d_act * sigmoid(pre)
void softplus_backward(const Tensor& pre, const Tensor& d_act, Tensor& d_pre);

} // namespace vattn
