#include <cmath>
#include <omp.h>

#include "fovdet/kernels.hpp"

namespace fovdet::kernels {

void set_max_threads(int n) {
  if (n > 0) omp_set_num_threads(n);
}

// OpenMP variants. Parallelism is always over independent output elements
// with the same per-element summation order as the serial reference, so the
// results are bitwise identical for any thread count.

void matmul_nn_parallel(const Tensor& a, const Tensor& b, Tensor& c) {
  const int n = a.dim(0), k = a.dim(1), m = b.dim(1);
#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < m; ++j) {
      double acc = 0.0;
      for (int t = 0; t < k; ++t) acc += a.data[i * k + t] * b.data[t * m + j];
      c.data[i * m + j] = acc;
    }
  }
}

void matmul_nt_parallel(const Tensor& a, const Tensor& b, Tensor& c) {
  const int n = a.dim(0), k = a.dim(1), m = b.dim(0);
#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < m; ++j) {
      double acc = 0.0;
      for (int t = 0; t < k; ++t) acc += a.data[i * k + t] * b.data[j * k + t];
      c.data[i * m + j] = acc;
    }
  }
}

void matmul_tn_parallel(const Tensor& a, const Tensor& b, Tensor& c) {
  const int n = a.dim(0), k = a.dim(1), m = b.dim(1);
#pragma omp parallel for schedule(static)
  for (int i = 0; i < k; ++i) {
    for (int j = 0; j < m; ++j) {
      double acc = 0.0;
      for (int t = 0; t < n; ++t) acc += a.data[t * k + i] * b.data[t * m + j];
      c.data[i * m + j] = acc;
    }
  }
}

void conv2d_forward_parallel(const Tensor& x, const Tensor& w, int stride,
                             int pad, Tensor& y) {
  const int ci = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const int co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const int ho = y.dim(1), wo = y.dim(2);
#pragma omp parallel for collapse(2) schedule(static)
  for (int oc = 0; oc < co; ++oc) {
    for (int oy = 0; oy < ho; ++oy) {
      for (int ox = 0; ox < wo; ++ox) {
        double acc = 0.0;
        for (int ic = 0; ic < ci; ++ic) {
          for (int ky = 0; ky < kh; ++ky) {
            const int iy = oy * stride - pad + ky;
            if (iy < 0 || iy >= h) continue;
            for (int kx = 0; kx < kw; ++kx) {
              const int ix = ox * stride - pad + kx;
              if (ix < 0 || ix >= wd) continue;
              acc += x.data[(ic * h + iy) * wd + ix] *
                     w.data[((oc * ci + ic) * kh + ky) * kw + kx];
            }
          }
        }
        y.data[(oc * ho + oy) * wo + ox] = acc;
      }
    }
  }
}

void conv2d_input_grad_parallel(const Tensor& gy, const Tensor& w, int stride,
                                int pad, Tensor& gx) {
  const int ci = gx.dim(0), h = gx.dim(1), wd = gx.dim(2);
  const int co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const int ho = gy.dim(1), wo = gy.dim(2);
#pragma omp parallel for collapse(2) schedule(static)
  for (int ic = 0; ic < ci; ++ic) {
    for (int iy = 0; iy < h; ++iy) {
      for (int ix = 0; ix < wd; ++ix) {
        double acc = 0.0;
        for (int oc = 0; oc < co; ++oc) {
          for (int ky = 0; ky < kh; ++ky) {
            const int num_y = iy + pad - ky;
            if (num_y < 0 || num_y % stride != 0) continue;
            const int oy = num_y / stride;
            if (oy >= ho) continue;
            for (int kx = 0; kx < kw; ++kx) {
              const int num_x = ix + pad - kx;
              if (num_x < 0 || num_x % stride != 0) continue;
              const int ox = num_x / stride;
              if (ox >= wo) continue;
              acc += gy.data[(oc * ho + oy) * wo + ox] *
                     w.data[((oc * ci + ic) * kh + ky) * kw + kx];
            }
          }
        }
        gx.data[(ic * h + iy) * wd + ix] = acc;
      }
    }
  }
}

void conv2d_weight_grad_parallel(const Tensor& x, const Tensor& gy, int stride,
                                 int pad, Tensor& gw) {
  const int ci = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const int co = gy.dim(0), ho = gy.dim(1), wo = gy.dim(2);
  const int kh = gw.dim(2), kw = gw.dim(3);
#pragma omp parallel for collapse(2) schedule(static)
  for (int oc = 0; oc < co; ++oc) {
    for (int ic = 0; ic < ci; ++ic) {
      for (int ky = 0; ky < kh; ++ky) {
        for (int kx = 0; kx < kw; ++kx) {
          double acc = 0.0;
          for (int oy = 0; oy < ho; ++oy) {
            const int iy = oy * stride - pad + ky;
            if (iy < 0 || iy >= h) continue;
            for (int ox = 0; ox < wo; ++ox) {
              const int ix = ox * stride - pad + kx;
              if (ix < 0 || ix >= wd) continue;
              acc += x.data[(ic * h + iy) * wd + ix] *
                     gy.data[(oc * ho + oy) * wo + ox];
            }
          }
          gw.data[((oc * ci + ic) * kh + ky) * kw + kx] += acc;
        }
      }
    }
  }
}

namespace {
inline double sample_bilinear(const double* src, int h, int w, int ch, int c,
                              double x, double y, double pad_value) {
  const double fx = x - 0.5, fy = y - 0.5;
  const int x0 = static_cast<int>(std::floor(fx));
  const int y0 = static_cast<int>(std::floor(fy));
  const double wx = fx - x0, wy = fy - y0;
  auto tap = [&](int yy, int xx) -> double {
    if (xx < 0 || xx >= w || yy < 0 || yy >= h) return pad_value;
    return src[(static_cast<std::size_t>(yy) * w + xx) * ch + c];
  };
  const double top = tap(y0, x0) * (1.0 - wx) + tap(y0, x0 + 1) * wx;
  const double bot = tap(y0 + 1, x0) * (1.0 - wx) + tap(y0 + 1, x0 + 1) * wx;
  return top * (1.0 - wy) + bot * wy;
}
}  // namespace

void resample_bilinear_parallel(const double* src, int src_h, int src_w,
                                int ch, double* dst, int dst_h, int dst_w,
                                double x0, double y0, double sx, double sy,
                                double pad_value) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < dst_h; ++i) {
    const double y = y0 + (i + 0.5) * sy;
    for (int j = 0; j < dst_w; ++j) {
      const double x = x0 + (j + 0.5) * sx;
      for (int c = 0; c < ch; ++c) {
        dst[(static_cast<std::size_t>(i) * dst_w + j) * ch + c] =
            sample_bilinear(src, src_h, src_w, ch, c, x, y, pad_value);
      }
    }
  }
}

}  // namespace fovdet::kernels
