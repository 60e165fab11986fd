#pragma once

#include "fgfp/nd/tensor.hpp"

namespace fgfp::nd {

struct Conv2dGeometry {
  int stride = 1;
  int pad = 0;
};

// Zero-padded 2-D cross-correlation.
//   input  [N, Cin, H, W]
//   kernel [Cout, Cin, Kh, Kw]
//   output [N, Cout, (H + 2p - Kh)/s + 1, (W + 2p - Kw)/s + 1]
// Partial sums are accumulated in double and rounded to T on store.
template <typename T>
BasicTensor<T> conv2d_forward(const BasicTensor<T>& input, const BasicTensor<T>& kernel,
                              Conv2dGeometry geom);

template <typename T>
struct Conv2dGrads {
  BasicTensor<T> grad_input;   // empty when not requested
  BasicTensor<T> grad_kernel;
};

// Gradients of sum(grad_out * conv2d_forward(input, kernel)) w.r.t. input and kernel.
// The kernel gradient is reduced over the batch in sample order, so the result
// does not depend on the worker count.
template <typename T>
Conv2dGrads<T> conv2d_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& input,
                               const BasicTensor<T>& kernel, Conv2dGeometry geom,
                               bool want_input_grad = true);

// Momentum SGD, in place:  buf <- momentum * buf + grad;  param <- param - lr * buf.
// Throws NumericError (leaving everything untouched) if any gradient is not finite.
template <typename T>
void sgd_step(std::span<T> params, std::span<const T> grads, double lr, std::span<T> momentum_buf,
              double momentum);

template <typename T>
void sgd_step(BasicTensor<T>& params, const BasicTensor<T>& grads, double lr,
              BasicTensor<T>& momentum_buf, double momentum) {
  require_shape(grads.shape(), params.shape(), "sgd_step grads");
  require_shape(momentum_buf.shape(), params.shape(), "sgd_step momentum buffer");
  sgd_step<T>(params.data(), grads.data(), lr, momentum_buf.data(), momentum);
}

}  // namespace fgfp::nd
