#include "fgfp/nd/conv.hpp"

#include <cmath>
#include <string>

#include "fgfp/nd/parallel.hpp"

namespace fgfp::nd {
namespace {

struct ConvDims {
  std::int64_t n, cin, h, w, cout, kh, kw, ho, wo;
  std::int64_t taps() const { return cin * kh * kw; }
  std::int64_t pixels() const { return ho * wo; }
};

template <typename T>
ConvDims conv_dims(const BasicTensor<T>& input, const BasicTensor<T>& kernel, Conv2dGeometry g) {
  if (input.rank() != 4) throw DimensionError("conv2d input must be rank 4, got " + shape_str(input.shape()));
  if (kernel.rank() != 4) throw DimensionError("conv2d kernel must be rank 4, got " + shape_str(kernel.shape()));
  if (g.stride < 1 || g.pad < 0) throw DimensionError("conv2d needs stride >= 1 and pad >= 0");
  ConvDims d{input.dim(0), input.dim(1), input.dim(2), input.dim(3),
             kernel.dim(0), kernel.dim(2), kernel.dim(3), 0, 0};
  if (kernel.dim(1) != d.cin) {
    throw DimensionError("conv2d channel mismatch: input has " + std::to_string(d.cin) +
                         ", kernel expects " + std::to_string(kernel.dim(1)));
  }
  if (d.kh > d.h + 2 * g.pad || d.kw > d.w + 2 * g.pad) {
    throw DimensionError("conv2d kernel " + shape_str(kernel.shape()) + " larger than padded input " +
                         shape_str(input.shape()));
  }
  d.ho = (d.h + 2 * g.pad - d.kh) / g.stride + 1;
  d.wo = (d.w + 2 * g.pad - d.kw) / g.stride + 1;
  return d;
}

// cols[(c*kh + i)*kw + j][oy*wo + ox] = x[c, oy*s + i - p, ox*s + j - p]  (0 outside)
template <typename T>
void im2col(const T* x, const ConvDims& d, Conv2dGeometry g, std::vector<T>& cols) {
  const std::int64_t P = d.pixels();
  cols.assign(static_cast<std::size_t>(d.taps() * P), T{0});
  for (std::int64_t c = 0; c < d.cin; ++c) {
    for (std::int64_t i = 0; i < d.kh; ++i) {
      for (std::int64_t j = 0; j < d.kw; ++j) {
        T* row = cols.data() + ((c * d.kh + i) * d.kw + j) * P;
        for (std::int64_t oy = 0; oy < d.ho; ++oy) {
          const std::int64_t y = oy * g.stride + i - g.pad;
          if (y < 0 || y >= d.h) continue;
          const T* src = x + (c * d.h + y) * d.w;
          for (std::int64_t ox = 0; ox < d.wo; ++ox) {
            const std::int64_t xx = ox * g.stride + j - g.pad;
            if (xx >= 0 && xx < d.w) row[oy * d.wo + ox] = src[xx];
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
BasicTensor<T> conv2d_forward(const BasicTensor<T>& input, const BasicTensor<T>& kernel,
                              Conv2dGeometry geom) {
  const ConvDims d = conv_dims(input, kernel, geom);
  BasicTensor<T> out({d.n, d.cout, d.ho, d.wo});
  const std::int64_t K = d.taps(), P = d.pixels();
  const T* w = kernel.data().data();

  parallel_for(static_cast<std::size_t>(d.n), [&](std::size_t n) {
    std::vector<T> cols;
    im2col(input.data().data() + n * d.cin * d.h * d.w, d, geom, cols);
    std::vector<double> acc(static_cast<std::size_t>(P));
    T* dst = out.data().data() + n * d.cout * P;
    for (std::int64_t co = 0; co < d.cout; ++co) {
      std::fill(acc.begin(), acc.end(), 0.0);
      for (std::int64_t k = 0; k < K; ++k) {
        const double wk = static_cast<double>(w[co * K + k]);
        if (wk == 0.0) continue;
        const T* row = cols.data() + k * P;
        for (std::int64_t p = 0; p < P; ++p) acc[p] += wk * static_cast<double>(row[p]);
      }
      for (std::int64_t p = 0; p < P; ++p) dst[co * P + p] = static_cast<T>(acc[p]);
    }
  });
  return out;
}

template <typename T>
Conv2dGrads<T> conv2d_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& input,
                               const BasicTensor<T>& kernel, Conv2dGeometry geom,
                               bool want_input_grad) {
  const ConvDims d = conv_dims(input, kernel, geom);
  require_shape(grad_out.shape(), {d.n, d.cout, d.ho, d.wo}, "conv2d_backward grad_out");
  const std::int64_t K = d.taps(), P = d.pixels();
  const T* w = kernel.data().data();

  Conv2dGrads<T> grads;
  grads.grad_kernel = BasicTensor<T>(kernel.shape());
  if (want_input_grad) grads.grad_input = BasicTensor<T>(input.shape());

  std::vector<double> partial(static_cast<std::size_t>(d.n * d.cout * K), 0.0);

  parallel_for(static_cast<std::size_t>(d.n), [&](std::size_t n) {
    std::vector<T> cols;
    im2col(input.data().data() + n * d.cin * d.h * d.w, d, geom, cols);
    const T* gout = grad_out.data().data() + n * d.cout * P;
    double* gk = partial.data() + n * d.cout * K;
    for (std::int64_t co = 0; co < d.cout; ++co) {
      const T* g = gout + co * P;
      for (std::int64_t k = 0; k < K; ++k) {
        const T* row = cols.data() + k * P;
        double s = 0.0;
        for (std::int64_t p = 0; p < P; ++p) s += static_cast<double>(g[p]) * static_cast<double>(row[p]);
        gk[co * K + k] = s;
      }
    }
    if (!want_input_grad) return;

    // grad_cols = kernel^T * grad_out, scattered back onto the padded input grid.
    std::vector<double> gin(static_cast<std::size_t>(d.cin * d.h * d.w), 0.0);
    std::vector<double> acc(static_cast<std::size_t>(P));
    for (std::int64_t k = 0; k < K; ++k) {
      std::fill(acc.begin(), acc.end(), 0.0);
      bool any = false;
      for (std::int64_t co = 0; co < d.cout; ++co) {
        const double wk = static_cast<double>(w[co * K + k]);
        if (wk == 0.0) continue;
        any = true;
        const T* g = gout + co * P;
        for (std::int64_t p = 0; p < P; ++p) acc[p] += wk * static_cast<double>(g[p]);
      }
      if (!any) continue;
      const std::int64_t c = k / (d.kh * d.kw), i = (k / d.kw) % d.kh, j = k % d.kw;
      for (std::int64_t oy = 0; oy < d.ho; ++oy) {
        const std::int64_t y = oy * geom.stride + i - geom.pad;
        if (y < 0 || y >= d.h) continue;
        for (std::int64_t ox = 0; ox < d.wo; ++ox) {
          const std::int64_t xx = ox * geom.stride + j - geom.pad;
          if (xx >= 0 && xx < d.w) gin[(c * d.h + y) * d.w + xx] += acc[oy * d.wo + ox];
        }
      }
    }
    T* dst = grads.grad_input.data().data() + n * d.cin * d.h * d.w;
    for (std::size_t q = 0; q < gin.size(); ++q) dst[q] = static_cast<T>(gin[q]);
  });

  const std::size_t per = static_cast<std::size_t>(d.cout * K);
  std::vector<double> total(per, 0.0);
  for (std::int64_t n = 0; n < d.n; ++n) {
    const double* src = partial.data() + n * per;
    for (std::size_t q = 0; q < per; ++q) total[q] += src[q];
  }
  for (std::size_t q = 0; q < per; ++q) grads.grad_kernel[q] = static_cast<T>(total[q]);
  return grads;
}

template <typename T>
void sgd_step(std::span<T> params, std::span<const T> grads, double lr, std::span<T> momentum_buf,
              double momentum) {
  if (grads.size() != params.size() || momentum_buf.size() != params.size()) {
    throw DimensionError("sgd_step: params, grads and momentum buffer differ in length");
  }
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!std::isfinite(static_cast<double>(grads[i]))) {
      throw NumericError("sgd_step: non-finite gradient at index " + std::to_string(i));
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    momentum_buf[i] = static_cast<T>(momentum * momentum_buf[i] + grads[i]);
    params[i] = static_cast<T>(params[i] - lr * momentum_buf[i]);
  }
}

template BasicTensor<float> conv2d_forward(const BasicTensor<float>&, const BasicTensor<float>&, Conv2dGeometry);
template BasicTensor<double> conv2d_forward(const BasicTensor<double>&, const BasicTensor<double>&, Conv2dGeometry);
template Conv2dGrads<float> conv2d_backward(const BasicTensor<float>&, const BasicTensor<float>&,
                                            const BasicTensor<float>&, Conv2dGeometry, bool);
template Conv2dGrads<double> conv2d_backward(const BasicTensor<double>&, const BasicTensor<double>&,
                                             const BasicTensor<double>&, Conv2dGeometry, bool);
template void sgd_step(std::span<float>, std::span<const float>, double, std::span<float>, double);
template void sgd_step(std::span<double>, std::span<const double>, double, std::span<double>, double);

}  // namespace fgfp::nd
