#include "fovdet/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "fovdet/errors.hpp"
#include "fovdet/kernels.hpp"

namespace fovdet::ad {

Param* ParamStore::add(const std::string& name, Tensor init) {
  params_.push_back(std::make_unique<Param>(name, std::move(init)));
  return params_.back().get();
}

Param* ParamStore::find(const std::string& name) {
  for (auto& p : params_)
    if (p->name == name) return p.get();
  return nullptr;
}

void ParamStore::zero_grads() {
  for (auto& p : params_) p->grad.fill(0.0);
}

bool ParamStore::all_finite() const {
  for (const auto& p : params_)
    for (double v : p->value.data)
      if (!std::isfinite(v)) return false;
  return true;
}

std::int64_t ParamStore::total_size() const {
  std::int64_t n = 0;
  for (const auto& p : params_) n += p->value.numel();
  return n;
}

Tape::Var Tape::make(Tensor value, bool needs_grad,
                     std::function<void(Tape&, Var)> back) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = needs_grad;
  n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return static_cast<Var>(nodes_.size() - 1);
}

Tape::Var Tape::input(Tensor t) { return make(std::move(t), false); }

Tape::Var Tape::param(Param* p) {
  Var v = make(p->value, true);
  nodes_.back().sink = p;
  return v;
}

namespace {
void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b))
    throw InternalError(std::string(op) + ": shape mismatch");
}
}  // namespace

Tape::Var Tape::add(Var a, Var b) {
  check_same_shape(val(a), val(b), "add");
  Tensor out = val(a);
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] += val(b)[i];
  return make(std::move(out), needs(a) || needs(b),
              [a, b](Tape& t, Var self) {
                const Tensor& g = t.grad_of(self);
                if (t.needs(a))
                  for (std::int64_t i = 0; i < g.numel(); ++i)
                    t.grad_mut(a)[i] += g[i];
                if (t.needs(b))
                  for (std::int64_t i = 0; i < g.numel(); ++i)
                    t.grad_mut(b)[i] += g[i];
              });
}

Tape::Var Tape::sub(Var a, Var b) {
  check_same_shape(val(a), val(b), "sub");
  Tensor out = val(a);
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] -= val(b)[i];
  return make(std::move(out), needs(a) || needs(b),
              [a, b](Tape& t, Var self) {
                const Tensor& g = t.grad_of(self);
                if (t.needs(a))
                  for (std::int64_t i = 0; i < g.numel(); ++i)
                    t.grad_mut(a)[i] += g[i];
                if (t.needs(b))
                  for (std::int64_t i = 0; i < g.numel(); ++i)
                    t.grad_mut(b)[i] -= g[i];
              });
}

Tape::Var Tape::mul(Var a, Var b) {
  check_same_shape(val(a), val(b), "mul");
  Tensor out = val(a);
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] *= val(b)[i];
  return make(std::move(out), needs(a) || needs(b),
              [a, b](Tape& t, Var self) {
                const Tensor& g = t.grad_of(self);
                if (t.needs(a))
                  for (std::int64_t i = 0; i < g.numel(); ++i)
                    t.grad_mut(a)[i] += g[i] * t.val(b)[i];
                if (t.needs(b))
                  for (std::int64_t i = 0; i < g.numel(); ++i)
                    t.grad_mut(b)[i] += g[i] * t.val(a)[i];
              });
}

Tape::Var Tape::div(Var a, Var b) {
  check_same_shape(val(a), val(b), "div");
  Tensor out = val(a);
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] /= val(b)[i];
  return make(std::move(out), needs(a) || needs(b),
              [a, b](Tape& t, Var self) {
                const Tensor& g = t.grad_of(self);
                if (t.needs(a))
                  for (std::int64_t i = 0; i < g.numel(); ++i)
                    t.grad_mut(a)[i] += g[i] / t.val(b)[i];
                if (t.needs(b))
                  for (std::int64_t i = 0; i < g.numel(); ++i)
                    t.grad_mut(b)[i] -= g[i] * t.val(a)[i] /
                                        (t.val(b)[i] * t.val(b)[i]);
              });
}

Tape::Var Tape::scale(Var a, double c) {
  Tensor out = val(a);
  for (double& v : out.data) v *= c;
  return make(std::move(out), needs(a), [a, c](Tape& t, Var self) {
    if (!t.needs(a)) return;
    const Tensor& g = t.grad_of(self);
    for (std::int64_t i = 0; i < g.numel(); ++i)
      t.grad_mut(a)[i] += c * g[i];
  });
}

Tape::Var Tape::add_const(Var a, double c) {
  Tensor out = val(a);
  for (double& v : out.data) v += c;
  return make(std::move(out), needs(a), [a](Tape& t, Var self) {
    if (!t.needs(a)) return;
    const Tensor& g = t.grad_of(self);
    for (std::int64_t i = 0; i < g.numel(); ++i) t.grad_mut(a)[i] += g[i];
  });
}

Tape::Var Tape::add_vec_rows(Var a, Var v) {
  const Tensor& x = val(a);
  const Tensor& b = val(v);
  if (x.ndim() != 2 || b.ndim() != 1 || x.dim(1) != b.dim(0))
    throw InternalError("add_vec_rows: shape mismatch");
  Tensor out = x;
  const int n = x.dim(0), d = x.dim(1);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) out.data[i * d + j] += b.data[j];
  return make(std::move(out), needs(a) || needs(v),
              [a, v, n, d](Tape& t, Var self) {
                const Tensor& g = t.grad_of(self);
                if (t.needs(a))
                  for (std::int64_t i = 0; i < g.numel(); ++i)
                    t.grad_mut(a)[i] += g[i];
                if (t.needs(v))
                  for (int i = 0; i < n; ++i)
                    for (int j = 0; j < d; ++j)
                      t.grad_mut(v)[j] += g[i * d + j];
              });
}

Tape::Var Tape::add_vec_chw(Var a, Var v) {
  const Tensor& x = val(a);
  const Tensor& b = val(v);
  if (x.ndim() != 3 || b.ndim() != 1 || x.dim(0) != b.dim(0))
    throw InternalError("add_vec_chw: channel mismatch");
  Tensor out = x;
  const int c = x.dim(0);
  const std::int64_t hw = static_cast<std::int64_t>(x.dim(1)) * x.dim(2);
  for (int ch = 0; ch < c; ++ch)
    for (std::int64_t i = 0; i < hw; ++i) out.data[ch * hw + i] += b.data[ch];
  return make(std::move(out), needs(a) || needs(v),
              [a, v, c, hw](Tape& t, Var self) {
                const Tensor& g = t.grad_of(self);
                if (t.needs(a))
                  for (std::int64_t i = 0; i < g.numel(); ++i)
                    t.grad_mut(a)[i] += g[i];
                if (t.needs(v))
                  for (int ch = 0; ch < c; ++ch) {
                    double acc = 0.0;
                    for (std::int64_t i = 0; i < hw; ++i)
                      acc += g.data[ch * hw + i];
                    t.grad_mut(v)[ch] += acc;
                  }
              });
}

Tape::Var Tape::div_rows(Var a, Var v) {
  const Tensor& x = val(a);
  const Tensor& s = val(v);
  if (x.ndim() != 2 || s.ndim() != 1 || x.dim(0) != s.dim(0))
    throw InternalError("div_rows: shape mismatch");
  Tensor out = x;
  const int n = x.dim(0), d = x.dim(1);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) out.data[i * d + j] /= s.data[i];
  return make(std::move(out), needs(a) || needs(v),
              [a, v, n, d](Tape& t, Var self) {
                const Tensor& g = t.grad_of(self);
                const Tensor& x2 = t.val(a);
                const Tensor& s2 = t.val(v);
                for (int i = 0; i < n; ++i) {
                  const double inv = 1.0 / s2.data[i];
                  for (int j = 0; j < d; ++j) {
                    const double gij = g.data[i * d + j];
                    if (t.needs(a)) t.grad_mut(a)[i * d + j] += gij * inv;
                    if (t.needs(v))
                      t.grad_mut(v)[i] -= gij * x2.data[i * d + j] * inv * inv;
                  }
                }
              });
}

Tape::Var Tape::sum_all(Var a) {
  Tensor out({1});
  double acc = 0.0;
  for (double v : val(a).data) acc += v;
  out[0] = acc;
  return make(std::move(out), needs(a), [a](Tape& t, Var self) {
    if (!t.needs(a)) return;
    const double g = t.grad_of(self)[0];
    for (std::int64_t i = 0; i < t.grad_mut(a).numel(); ++i)
      t.grad_mut(a)[i] += g;
  });
}

Tape::Var Tape::mean_all(Var a) {
  return scale(sum_all(a), 1.0 / static_cast<double>(val(a).numel()));
}

Tape::Var Tape::sum_rows(Var a) {
  const Tensor& x = val(a);
  if (x.ndim() != 2) throw InternalError("sum_rows: need 2-d input");
  const int n = x.dim(0), d = x.dim(1);
  Tensor out({n});
  for (int i = 0; i < n; ++i) {
    double acc = 0.0;
    for (int j = 0; j < d; ++j) acc += x.data[i * d + j];
    out[i] = acc;
  }
  return make(std::move(out), needs(a), [a, n, d](Tape& t, Var self) {
    if (!t.needs(a)) return;
    const Tensor& g = t.grad_of(self);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < d; ++j) t.grad_mut(a)[i * d + j] += g[i];
  });
}

Tape::Var Tape::gather_rows(Var a, std::vector<int> rows) {
  const Tensor& x = val(a);
  if (x.ndim() != 2) throw InternalError("gather_rows: need 2-d input");
  const int d = x.dim(1);
  Tensor out({static_cast<int>(rows.size()), d});
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (int j = 0; j < d; ++j)
      out.data[i * static_cast<std::size_t>(d) + j] = x.data[rows[i] * d + j];
  return make(std::move(out), needs(a),
              [a, rows = std::move(rows), d](Tape& t, Var self) {
                if (!t.needs(a)) return;
                const Tensor& g = t.grad_of(self);
                for (std::size_t i = 0; i < rows.size(); ++i)
                  for (int j = 0; j < d; ++j)
                    t.grad_mut(a)[rows[i] * d + j] +=
                        g.data[i * static_cast<std::size_t>(d) + j];
              });
}

Tape::Var Tape::slice_cols(Var a, int c0, int c1) {
  const Tensor& x = val(a);
  if (x.ndim() != 2 || c0 < 0 || c1 > x.dim(1) || c0 >= c1)
    throw InternalError("slice_cols: bad range");
  const int n = x.dim(0), d = x.dim(1), w = c1 - c0;
  Tensor out({n, w});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < w; ++j) out.data[i * w + j] = x.data[i * d + c0 + j];
  return make(std::move(out), needs(a), [a, n, d, w, c0](Tape& t, Var self) {
    if (!t.needs(a)) return;
    const Tensor& g = t.grad_of(self);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < w; ++j)
        t.grad_mut(a)[i * d + c0 + j] += g.data[i * w + j];
  });
}

Tape::Var Tape::concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw InternalError("concat_cols: empty");
  const int n = val(parts[0]).dim(0);
  int total = 0;
  bool any_grad = false;
  for (Var p : parts) {
    if (val(p).ndim() != 2 || val(p).dim(0) != n)
      throw InternalError("concat_cols: shape mismatch");
    total += val(p).dim(1);
    any_grad = any_grad || needs(p);
  }
  Tensor out({n, total});
  int off = 0;
  for (Var p : parts) {
    const Tensor& x = val(p);
    const int w = x.dim(1);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < w; ++j)
        out.data[i * total + off + j] = x.data[i * w + j];
    off += w;
  }
  return make(std::move(out), any_grad,
              [parts, n, total](Tape& t, Var self) {
                const Tensor& g = t.grad_of(self);
                int off2 = 0;
                for (Var p : parts) {
                  const int w = t.val(p).dim(1);
                  if (t.needs(p)) {
                    for (int i = 0; i < n; ++i)
                      for (int j = 0; j < w; ++j)
                        t.grad_mut(p)[i * w + j] +=
                            g.data[i * total + off2 + j];
                  }
                  off2 += w;
                }
              });
}

Tape::Var Tape::concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw InternalError("concat_rows: empty");
  const int d = val(parts[0]).dim(1);
  int total = 0;
  bool any_grad = false;
  for (Var p : parts) {
    if (val(p).ndim() != 2 || val(p).dim(1) != d)
      throw InternalError("concat_rows: shape mismatch");
    total += val(p).dim(0);
    any_grad = any_grad || needs(p);
  }
  Tensor out({total, d});
  std::int64_t off = 0;
  for (Var p : parts) {
    const Tensor& x = val(p);
    std::copy(x.data.begin(), x.data.end(), out.data.begin() + off);
    off += x.numel();
  }
  return make(std::move(out), any_grad, [parts](Tape& t, Var self) {
    const Tensor& g = t.grad_of(self);
    std::int64_t off2 = 0;
    for (Var p : parts) {
      const std::int64_t n = t.val(p).numel();
      if (t.needs(p))
        for (std::int64_t i = 0; i < n; ++i)
          t.grad_mut(p)[i] += g[off2 + i];
      off2 += n;
    }
  });
}

Tape::Var Tape::reshape(Var a, std::vector<int> shape) {
  Tensor out = val(a);
  if (Tensor::numel_of(shape) != out.numel())
    throw InternalError("reshape: element count mismatch");
  out.shape = std::move(shape);
  return make(std::move(out), needs(a), [a](Tape& t, Var self) {
    if (!t.needs(a)) return;
    const Tensor& g = t.grad_of(self);
    for (std::int64_t i = 0; i < g.numel(); ++i) t.grad_mut(a)[i] += g[i];
  });
}

Tape::Var Tape::im2rows(Var a) {
  const Tensor& x = val(a);
  if (x.ndim() != 3) throw InternalError("im2rows: need [C,H,W]");
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const int hw = h * w;
  Tensor out({hw, c});
  for (int ch = 0; ch < c; ++ch)
    for (int i = 0; i < hw; ++i) out.data[i * c + ch] = x.data[ch * hw + i];
  return make(std::move(out), needs(a), [a, c, hw](Tape& t, Var self) {
    if (!t.needs(a)) return;
    const Tensor& g = t.grad_of(self);
    for (int ch = 0; ch < c; ++ch)
      for (int i = 0; i < hw; ++i)
        t.grad_mut(a)[ch * hw + i] += g.data[i * c + ch];
  });
}

Tape::Var Tape::relu(Var a) {
  Tensor out = val(a);
  for (double& v : out.data) v = v > 0.0 ? v : 0.0;
  return make(std::move(out), needs(a), [a](Tape& t, Var self) {
    if (!t.needs(a)) return;
    const Tensor& g = t.grad_of(self);
    const Tensor& x = t.val(a);
    for (std::int64_t i = 0; i < g.numel(); ++i)
      if (x[i] > 0.0) t.grad_mut(a)[i] += g[i];
  });
}

Tape::Var Tape::gelu(Var a, bool tanh_approx) {
  Tensor out = val(a);
  if (!tanh_approx) {
    for (double& v : out.data)
      v = 0.5 * v * (1.0 + std::erf(v / 1.4142135623730951));
  } else {
    for (double& v : out.data) {
      const double u = 0.7978845608028654 * (v + 0.044715 * v * v * v);
      v = 0.5 * v * (1.0 + std::tanh(u));
    }
  }
  return make(std::move(out), needs(a), [a, tanh_approx](Tape& t, Var self) {
    if (!t.needs(a)) return;
    const Tensor& g = t.grad_of(self);
    const Tensor& x = t.val(a);
    for (std::int64_t i = 0; i < g.numel(); ++i) {
      const double v = x[i];
      double d;
      if (!tanh_approx) {
        const double phi = std::exp(-0.5 * v * v) * 0.3989422804014327;
        const double Phi = 0.5 * (1.0 + std::erf(v / 1.4142135623730951));
        d = Phi + v * phi;
      } else {
        const double c = 0.7978845608028654;
        const double u = c * (v + 0.044715 * v * v * v);
        const double th = std::tanh(u);
        const double du = c * (1.0 + 3.0 * 0.044715 * v * v);
        d = 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * du;
      }
      t.grad_mut(a)[i] += g[i] * d;
    }
  });
}

Tape::Var Tape::sigmoid(Var a) {
  Tensor out = val(a);
  for (double& v : out.data) v = 1.0 / (1.0 + std::exp(-v));
  return make(std::move(out), needs(a), [a](Tape& t, Var self) {
    if (!t.needs(a)) return;
    const Tensor& g = t.grad_of(self);
    const Tensor& y = t.val(self);
    for (std::int64_t i = 0; i < g.numel(); ++i)
      t.grad_mut(a)[i] += g[i] * y[i] * (1.0 - y[i]);
  });
}

Tape::Var Tape::softplus(Var a) {
  Tensor out = val(a);
  for (double& v : out.data)
    v = v > 30.0 ? v : std::log1p(std::exp(v));
  return make(std::move(out), needs(a), [a](Tape& t, Var self) {
    if (!t.needs(a)) return;
    const Tensor& g = t.grad_of(self);
    const Tensor& x = t.val(a);
    for (std::int64_t i = 0; i < g.numel(); ++i)
      t.grad_mut(a)[i] += g[i] / (1.0 + std::exp(-x[i]));
  });
}

Tape::Var Tape::exp(Var a) {
  Tensor out = val(a);
  for (double& v : out.data) v = std::exp(v);
  return make(std::move(out), needs(a), [a](Tape& t, Var self) {
    if (!t.needs(a)) return;
    const Tensor& g = t.grad_of(self);
    const Tensor& y = t.val(self);
    for (std::int64_t i = 0; i < g.numel(); ++i)
      t.grad_mut(a)[i] += g[i] * y[i];
  });
}

Tape::Var Tape::log(Var a) {
  Tensor out = val(a);
  for (double& v : out.data) v = std::log(v);
  return make(std::move(out), needs(a), [a](Tape& t, Var self) {
    if (!t.needs(a)) return;
    const Tensor& g = t.grad_of(self);
    const Tensor& x = t.val(a);
    for (std::int64_t i = 0; i < g.numel(); ++i)
      t.grad_mut(a)[i] += g[i] / x[i];
  });
}

Tape::Var Tape::square(Var a) {
  Tensor out = val(a);
  for (double& v : out.data) v = v * v;
  return make(std::move(out), needs(a), [a](Tape& t, Var self) {
    if (!t.needs(a)) return;
    const Tensor& g = t.grad_of(self);
    const Tensor& x = t.val(a);
    for (std::int64_t i = 0; i < g.numel(); ++i)
      t.grad_mut(a)[i] += 2.0 * g[i] * x[i];
  });
}

Tape::Var Tape::sqrt(Var a) {
  Tensor out = val(a);
  for (double& v : out.data) v = std::sqrt(v);
  return make(std::move(out), needs(a), [a](Tape& t, Var self) {
    if (!t.needs(a)) return;
    const Tensor& g = t.grad_of(self);
    const Tensor& y = t.val(self);
    for (std::int64_t i = 0; i < g.numel(); ++i)
      t.grad_mut(a)[i] += g[i] * 0.5 / y[i];
  });
}

Tape::Var Tape::abs(Var a) {
  Tensor out = val(a);
  for (double& v : out.data) v = std::fabs(v);
  return make(std::move(out), needs(a), [a](Tape& t, Var self) {
    if (!t.needs(a)) return;
    const Tensor& g = t.grad_of(self);
    const Tensor& x = t.val(a);
    for (std::int64_t i = 0; i < g.numel(); ++i) {
      if (x[i] > 0.0) t.grad_mut(a)[i] += g[i];
      else if (x[i] < 0.0) t.grad_mut(a)[i] -= g[i];
    }
  });
}

Tape::Var Tape::emin(Var a, Var b) {
  check_same_shape(val(a), val(b), "emin");
  Tensor out = val(a);
  for (std::int64_t i = 0; i < out.numel(); ++i)
    out[i] = std::min(out[i], val(b)[i]);
  return make(std::move(out), needs(a) || needs(b),
              [a, b](Tape& t, Var self) {
                const Tensor& g = t.grad_of(self);
                const Tensor& xa = t.val(a);
                const Tensor& xb = t.val(b);
                for (std::int64_t i = 0; i < g.numel(); ++i) {
                  if (xa[i] <= xb[i]) {
                    if (t.needs(a)) t.grad_mut(a)[i] += g[i];
                  } else if (t.needs(b)) {
                    t.grad_mut(b)[i] += g[i];
                  }
                }
              });
}

Tape::Var Tape::emax(Var a, Var b) {
  check_same_shape(val(a), val(b), "emax");
  Tensor out = val(a);
  for (std::int64_t i = 0; i < out.numel(); ++i)
    out[i] = std::max(out[i], val(b)[i]);
  return make(std::move(out), needs(a) || needs(b),
              [a, b](Tape& t, Var self) {
                const Tensor& g = t.grad_of(self);
                const Tensor& xa = t.val(a);
                const Tensor& xb = t.val(b);
                for (std::int64_t i = 0; i < g.numel(); ++i) {
                  if (xa[i] >= xb[i]) {
                    if (t.needs(a)) t.grad_mut(a)[i] += g[i];
                  } else if (t.needs(b)) {
                    t.grad_mut(b)[i] += g[i];
                  }
                }
              });
}

Tape::Var Tape::clamp_min(Var a, double c) {
  Tensor out = val(a);
  for (double& v : out.data) v = std::max(v, c);
  return make(std::move(out), needs(a), [a, c](Tape& t, Var self) {
    if (!t.needs(a)) return;
    const Tensor& g = t.grad_of(self);
    const Tensor& x = t.val(a);
    for (std::int64_t i = 0; i < g.numel(); ++i)
      if (x[i] > c) t.grad_mut(a)[i] += g[i];
  });
}

Tape::Var Tape::matmul_nn(Var a, Var b) {
  const Tensor& x = val(a);
  const Tensor& y = val(b);
  if (x.ndim() != 2 || y.ndim() != 2 || x.dim(1) != y.dim(0))
    throw InternalError("matmul_nn: shape mismatch");
  Tensor out({x.dim(0), y.dim(1)});
  kernels::matmul_nn(x, y, out);
  return make(std::move(out), needs(a) || needs(b),
              [a, b](Tape& t, Var self) {
                const Tensor& g = t.grad_of(self);
                if (t.needs(a)) {
                  Tensor ga({t.val(a).dim(0), t.val(a).dim(1)});
                  kernels::matmul_nt(g, t.val(b), ga);
                  for (std::int64_t i = 0; i < ga.numel(); ++i)
                    t.grad_mut(a)[i] += ga[i];
                }
                if (t.needs(b)) {
                  Tensor gb({t.val(b).dim(0), t.val(b).dim(1)});
                  kernels::matmul_tn(t.val(a), g, gb);
                  for (std::int64_t i = 0; i < gb.numel(); ++i)
                    t.grad_mut(b)[i] += gb[i];
                }
              });
}

Tape::Var Tape::matmul_nt(Var a, Var b) {
  const Tensor& x = val(a);
  const Tensor& y = val(b);
  if (x.ndim() != 2 || y.ndim() != 2 || x.dim(1) != y.dim(1))
    throw InternalError("matmul_nt: shape mismatch");
  Tensor out({x.dim(0), y.dim(0)});
  kernels::matmul_nt(x, y, out);
  return make(std::move(out), needs(a) || needs(b),
              [a, b](Tape& t, Var self) {
                const Tensor& g = t.grad_of(self);
                if (t.needs(a)) {
                  Tensor ga({t.val(a).dim(0), t.val(a).dim(1)});
                  kernels::matmul_nn(g, t.val(b), ga);
                  for (std::int64_t i = 0; i < ga.numel(); ++i)
                    t.grad_mut(a)[i] += ga[i];
                }
                if (t.needs(b)) {
                  Tensor gb({t.val(b).dim(0), t.val(b).dim(1)});
                  kernels::matmul_tn(g, t.val(a), gb);
                  for (std::int64_t i = 0; i < gb.numel(); ++i)
                    t.grad_mut(b)[i] += gb[i];
                }
              });
}

Tape::Var Tape::conv2d(Var xv, Var wv, int stride, int pad) {
  const Tensor& x = val(xv);
  const Tensor& w = val(wv);
  if (x.ndim() != 3 || w.ndim() != 4 || x.dim(0) != w.dim(1))
    throw InternalError("conv2d: shape mismatch");
  const int ho = (x.dim(1) + 2 * pad - w.dim(2)) / stride + 1;
  const int wo = (x.dim(2) + 2 * pad - w.dim(3)) / stride + 1;
  Tensor out({w.dim(0), ho, wo});
  kernels::conv2d_forward(x, w, stride, pad, out);
  return make(std::move(out), needs(xv) || needs(wv),
              [xv, wv, stride, pad](Tape& t, Var self) {
                const Tensor& g = t.grad_of(self);
                if (t.needs(xv)) {
                  Tensor gx(t.val(xv).shape);
                  kernels::conv2d_input_grad(g, t.val(wv), stride, pad, gx);
                  for (std::int64_t i = 0; i < gx.numel(); ++i)
                    t.grad_mut(xv)[i] += gx[i];
                }
                if (t.needs(wv)) {
                  kernels::conv2d_weight_grad(t.val(xv), g, stride, pad,
                                              t.grad_mut(wv));
                }
              });
}

Tape::Var Tape::softmax_rows(Var a) {
  const Tensor& x = val(a);
  if (x.ndim() != 2) throw InternalError("softmax_rows: need 2-d input");
  const int n = x.dim(0), d = x.dim(1);
  Tensor out = x;
  for (int i = 0; i < n; ++i) {
    double mx = -1e300;
    for (int j = 0; j < d; ++j) mx = std::max(mx, out.data[i * d + j]);
    double z = 0.0;
    for (int j = 0; j < d; ++j) {
      out.data[i * d + j] = std::exp(out.data[i * d + j] - mx);
      z += out.data[i * d + j];
    }
    for (int j = 0; j < d; ++j) out.data[i * d + j] /= z;
  }
  return make(std::move(out), needs(a), [a, n, d](Tape& t, Var self) {
    if (!t.needs(a)) return;
    const Tensor& g = t.grad_of(self);
    const Tensor& y = t.val(self);
    for (int i = 0; i < n; ++i) {
      double dot = 0.0;
      for (int j = 0; j < d; ++j) dot += g.data[i * d + j] * y.data[i * d + j];
      for (int j = 0; j < d; ++j)
        t.grad_mut(a)[i * d + j] +=
            y.data[i * d + j] * (g.data[i * d + j] - dot);
    }
  });
}

Tape::Var Tape::log_softmax_rows(Var a) {
  const Tensor& x = val(a);
  if (x.ndim() != 2) throw InternalError("log_softmax_rows: need 2-d input");
  const int n = x.dim(0), d = x.dim(1);
  Tensor out = x;
  for (int i = 0; i < n; ++i) {
    double mx = -1e300;
    for (int j = 0; j < d; ++j) mx = std::max(mx, out.data[i * d + j]);
    double z = 0.0;
    for (int j = 0; j < d; ++j) z += std::exp(out.data[i * d + j] - mx);
    const double lz = mx + std::log(z);
    for (int j = 0; j < d; ++j) out.data[i * d + j] -= lz;
  }
  return make(std::move(out), needs(a), [a, n, d](Tape& t, Var self) {
    if (!t.needs(a)) return;
    const Tensor& g = t.grad_of(self);
    const Tensor& y = t.val(self);  // log-probs
    for (int i = 0; i < n; ++i) {
      double gsum = 0.0;
      for (int j = 0; j < d; ++j) gsum += g.data[i * d + j];
      for (int j = 0; j < d; ++j)
        t.grad_mut(a)[i * d + j] +=
            g.data[i * d + j] - std::exp(y.data[i * d + j]) * gsum;
    }
  });
}

Tape::Var Tape::layernorm_rows(Var a, Var gamma, Var beta, double eps) {
  const Tensor& x = val(a);
  if (x.ndim() != 2) throw InternalError("layernorm_rows: need 2-d input");
  const int n = x.dim(0), d = x.dim(1);
  if (val(gamma).numel() != d || val(beta).numel() != d)
    throw InternalError("layernorm_rows: gamma/beta width mismatch");
  Tensor out({n, d});
  Tensor xhat({n, d});
  Tensor inv_sigma({n});
  for (int i = 0; i < n; ++i) {
    double mu = 0.0;
    for (int j = 0; j < d; ++j) mu += x.data[i * d + j];
    mu /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) {
      const double c = x.data[i * d + j] - mu;
      var += c * c;
    }
    var /= d;
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_sigma[i] = inv;
    for (int j = 0; j < d; ++j) {
      const double xh = (x.data[i * d + j] - mu) * inv;
      xhat.data[i * d + j] = xh;
      out.data[i * d + j] = xh * val(gamma)[j] + val(beta)[j];
    }
  }
  auto xhat_ptr = std::make_shared<Tensor>(std::move(xhat));
  auto inv_ptr = std::make_shared<Tensor>(std::move(inv_sigma));
  return make(std::move(out), needs(a) || needs(gamma) || needs(beta),
              [a, gamma, beta, n, d, xhat_ptr, inv_ptr](Tape& t, Var self) {
                const Tensor& g = t.grad_of(self);
                for (int i = 0; i < n; ++i) {
                  double sum_ggx = 0.0, sum_ggxxh = 0.0;
                  for (int j = 0; j < d; ++j) {
                    const double gg = g.data[i * d + j] * t.val(gamma)[j];
                    sum_ggx += gg;
                    sum_ggxxh += gg * xhat_ptr->data[i * d + j];
                  }
                  for (int j = 0; j < d; ++j) {
                    const double xh = xhat_ptr->data[i * d + j];
                    if (t.needs(a)) {
                      const double gg = g.data[i * d + j] * t.val(gamma)[j];
                      t.grad_mut(a)[i * d + j] +=
                          (*inv_ptr)[i] *
                          (gg - sum_ggx / d - xh * sum_ggxxh / d);
                    }
                    if (t.needs(gamma))
                      t.grad_mut(gamma)[j] += g.data[i * d + j] * xh;
                    if (t.needs(beta)) t.grad_mut(beta)[j] += g.data[i * d + j];
                  }
                }
              });
}

void Tape::backward(Var root) {
  if (val(root).numel() != 1)
    throw InternalError("backward: root must be scalar");
  for (auto& n : nodes_)
    if (n.needs_grad && n.grad.numel() == 0) n.grad = Tensor(n.value.shape);
  if (!nodes_[static_cast<std::size_t>(root)].needs_grad) return;
  nodes_[static_cast<std::size_t>(root)].grad[0] = 1.0;
  for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.needs_grad || !n.back) continue;
    n.back(*this, i);
  }
  for (auto& n : nodes_) {
    if (n.sink) {
      for (std::int64_t i = 0; i < n.grad.numel(); ++i)
        n.sink->grad[i] += n.grad[i];
    }
  }
}

double gradient_check(ParamStore& params,
                      const std::function<double()>& loss_fn,
                      const std::function<void()>& grad_fn, double step) {
  params.zero_grads();
  grad_fn();
  double worst = 0.0;
  for (const auto& p : params.all()) {
    for (std::int64_t i = 0; i < p->value.numel(); ++i) {
      const double saved = p->value[i];
      p->value[i] = saved + step;
      const double up = loss_fn();
      p->value[i] = saved - step;
      const double dn = loss_fn();
      p->value[i] = saved;
      const double numeric = (up - dn) / (2.0 * step);
      const double analytic = p->grad[i];
      const double denom = std::max(1e-8, std::fabs(numeric) + std::fabs(analytic));
      worst = std::max(worst, std::fabs(numeric - analytic) / denom);
    }
  }
  return worst;
}

}  // namespace fovdet::ad
