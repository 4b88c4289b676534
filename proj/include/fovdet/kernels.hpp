#pragma once

#include <cstdint>

#include "fovdet/tensor.hpp"

namespace fovdet::kernels {

// Every kernel has a serial reference implementation and an OpenMP variant.
// Parallel loops run over independent output elements only, so both variants
// produce bitwise-identical results; the unit tests assert exact equality and
// tools/bench_kernels compares their throughput.
//
// set_parallel() selects the variant used by the dispatching wrappers below;
// the `_serial` / `_parallel` entry points stay callable directly.

void set_parallel(bool enabled);
bool parallel_enabled();

// Caps OpenMP fan-out for all parallel kernels. 0 = library default.
void set_max_threads(int n);

// ---- matmul ---------------------------------------------------------------
// c[n,m] = a[n,k] * b[k,m]
void matmul_nn_serial(const Tensor& a, const Tensor& b, Tensor& c);
void matmul_nn_parallel(const Tensor& a, const Tensor& b, Tensor& c);
void matmul_nn(const Tensor& a, const Tensor& b, Tensor& c);

// c[n,m] = a[n,k] * b[m,k]^T
void matmul_nt_serial(const Tensor& a, const Tensor& b, Tensor& c);
void matmul_nt_parallel(const Tensor& a, const Tensor& b, Tensor& c);
void matmul_nt(const Tensor& a, const Tensor& b, Tensor& c);

// c[k,m] = a[n,k]^T * b[n,m]
void matmul_tn_serial(const Tensor& a, const Tensor& b, Tensor& c);
void matmul_tn_parallel(const Tensor& a, const Tensor& b, Tensor& c);
void matmul_tn(const Tensor& a, const Tensor& b, Tensor& c);

// ---- conv2d ---------------------------------------------------------------
// x[Ci,H,W], w[Co,Ci,kh,kw] -> y[Co,Ho,Wo] with Ho=(H+2p-kh)/s+1.
void conv2d_forward_serial(const Tensor& x, const Tensor& w, int stride,
                           int pad, Tensor& y);
void conv2d_forward_parallel(const Tensor& x, const Tensor& w, int stride,
                             int pad, Tensor& y);
void conv2d_forward(const Tensor& x, const Tensor& w, int stride, int pad,
                    Tensor& y);

// Gradient w.r.t. x: gx has x's shape.
void conv2d_input_grad_serial(const Tensor& gy, const Tensor& w, int stride,
                              int pad, Tensor& gx);
void conv2d_input_grad_parallel(const Tensor& gy, const Tensor& w, int stride,
                                int pad, Tensor& gx);
void conv2d_input_grad(const Tensor& gy, const Tensor& w, int stride, int pad,
                       Tensor& gx);

// Gradient w.r.t. w: gw has w's shape. Accumulates into gw.
void conv2d_weight_grad_serial(const Tensor& x, const Tensor& gy, int stride,
                               int pad, Tensor& gw);
void conv2d_weight_grad_parallel(const Tensor& x, const Tensor& gy, int stride,
                                 int pad, Tensor& gw);
void conv2d_weight_grad(const Tensor& x, const Tensor& gy, int stride, int pad,
                        Tensor& gw);

// ---- image resampling -----------------------------------------------------
// Bilinear gather: for each output pixel of dst (H_d x W_d x C interleaved),
// sample src at (x0 + (j+0.5)*sx, y0 + (i+0.5)*sy) in continuous pixel
// coordinates; out-of-bounds reads return pad_value.
void resample_bilinear_serial(const double* src, int src_h, int src_w, int ch,
                              double* dst, int dst_h, int dst_w, double x0,
                              double y0, double sx, double sy,
                              double pad_value);
void resample_bilinear_parallel(const double* src, int src_h, int src_w,
                                int ch, double* dst, int dst_h, int dst_w,
                                double x0, double y0, double sx, double sy,
                                double pad_value);
void resample_bilinear(const double* src, int src_h, int src_w, int ch,
                       double* dst, int dst_h, int dst_w, double x0, double y0,
                       double sx, double sy, double pad_value);

// ---- per-pixel map --------------------------------------------------------
// Runs fn(row) for every row index in [0,h); rows are independent.
// Used by the rasterizer: each row is computed by a pure function of the
// scene, so thread count cannot change the image.
template <typename Fn>
void for_each_row(int h, Fn&& fn, bool parallel);

}  // namespace fovdet::kernels

// Template definition kept out of line for readability.
namespace fovdet::kernels {
template <typename Fn>
void for_each_row(int h, Fn&& fn, bool parallel) {
  if (parallel) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < h; ++i) fn(i);
  } else {
    for (int i = 0; i < h; ++i) fn(i);
  }
}
}  // namespace fovdet::kernels
