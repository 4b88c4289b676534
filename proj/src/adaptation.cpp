#include "fovdet/adaptation.hpp"

#include <cmath>
#include <sstream>

#include "fovdet/errors.hpp"

namespace fovdet {

std::string Provenance::to_string() const {
  if (exact) return "exact";
  std::ostringstream os;
  os << "interpolated(" << f_lo << ';' << f_hi << ";w=" << weight << ')';
  return os.str();
}

Tensor uniform_init(std::vector<int> shape, double bound, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.data) v = rng.uniform(-bound, bound);
  return t;
}

Connector Connector::create(ad::ParamStore& store, int in_dim, int hidden,
                            int out_dim, bool tanh_gelu, Rng& rng,
                            const std::string& prefix) {
  if (in_dim <= 0 || hidden <= 0 || out_dim <= 0)
    throw InternalError("connector: bad dimensions");
  Connector c;
  c.in_dim_ = in_dim;
  c.hidden_ = hidden;
  c.out_dim_ = out_dim;
  c.tanh_gelu_ = tanh_gelu;
  const double bound1 = 1.0 / std::sqrt(static_cast<double>(in_dim));
  const double bound2 = 1.0 / std::sqrt(static_cast<double>(hidden));
  c.w1_ = store.add(prefix + ".w1", uniform_init({hidden, in_dim}, bound1, rng));
  c.b1_ = store.add(prefix + ".b1", Tensor({hidden}));
  c.w2_ = store.add(prefix + ".w2", uniform_init({out_dim, hidden}, bound2, rng));
  c.b2_ = store.add(prefix + ".b2", Tensor({out_dim}));
  return c;
}

Connector Connector::create_linear(ad::ParamStore& store, int in_dim,
                                   int out_dim, Rng& rng,
                                   const std::string& prefix) {
  Connector c;
  c.in_dim_ = in_dim;
  c.hidden_ = 0;
  c.out_dim_ = out_dim;
  c.linear_only_ = true;
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_dim));
  c.w2_ = store.add(prefix + ".w", uniform_init({out_dim, in_dim}, bound, rng));
  c.b2_ = store.add(prefix + ".b", Tensor({out_dim}));
  return c;
}

ad::Tape::Var Connector::forward(ad::Tape& tape, ad::Tape::Var t_avg) const {
  if (tape.val(t_avg).ndim() != 2 || tape.val(t_avg).dim(1) != in_dim_)
    throw InternalError("connector: input width mismatch");
  if (linear_only_)
    return tape.linear(t_avg, tape.param(w2_), tape.param(b2_));
  auto h = tape.linear(t_avg, tape.param(w1_), tape.param(b1_));
  h = tape.gelu(h, tanh_gelu_);
  return tape.linear(h, tape.param(w2_), tape.param(b2_));
}

std::vector<double> Connector::forward_value(
    const std::vector<double>& t_avg) const {
  ad::Tape tape;
  Tensor in({1, in_dim_});
  if (static_cast<int>(t_avg.size()) != in_dim_)
    throw InternalError("connector: input width mismatch");
  in.data = t_avg;
  const auto out = forward(tape, tape.input(std::move(in)));
  return tape.val(out).data;
}

std::vector<Tensor> fuse_features(const std::vector<Tensor>& features,
                                  const std::vector<double>& t_intr) {
  std::vector<Tensor> out;
  out.reserve(features.size());
  for (const Tensor& f : features) {
    if (f.ndim() != 3 || f.dim(0) != static_cast<int>(t_intr.size()))
      throw InternalError("fuse_features: channel width mismatch");
    Tensor g = f;
    const std::int64_t hw = static_cast<std::int64_t>(f.dim(1)) * f.dim(2);
    for (int c = 0; c < f.dim(0); ++c)
      for (std::int64_t i = 0; i < hw; ++i)
        g.data[c * hw + i] += t_intr[static_cast<std::size_t>(c)];
    out.push_back(std::move(g));
  }
  return out;
}

Tensor fuse_queries(const Tensor& queries, const std::vector<double>& t_intr) {
  if (queries.ndim() != 2 ||
      queries.dim(1) != static_cast<int>(t_intr.size()))
    throw InternalError("fuse_queries: query width mismatch");
  Tensor out = queries;
  const int n = queries.dim(0), d = queries.dim(1);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j)
      out.data[i * d + j] += t_intr[static_cast<std::size_t>(j)];
  return out;
}

}  // namespace fovdet
