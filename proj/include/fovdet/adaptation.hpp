#pragma once

#include <string>
#include <vector>

#include "fovdet/autodiff.hpp"
#include "fovdet/rng.hpp"
#include "fovdet/tensor.hpp"

namespace fovdet {

// Where an adapted embedding came from at test time.
struct Provenance {
  bool exact = true;
  double f_lo = 0.0, f_hi = 0.0, weight = 1.0;  // t = w*bank[f_lo] + (1-w)*bank[f_hi]
  std::string to_string() const;
};

struct AdaptedEmbedding {
  std::vector<double> t_intr;  // d' wide
  double source_focal = 0.0;
  Provenance provenance;
};

// Two-layer MLP with GELU that projects frozen bank embeddings into the
// detector feature space: t_intr = W2 * gelu(W1 * t + b1) + b2.
class Connector {
 public:
  // Weights init uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero, so
  // an untrained run starts close to the intrinsic-blind baseline.
  static Connector create(ad::ParamStore& store, int in_dim, int hidden,
                          int out_dim, bool tanh_gelu, Rng& rng,
                          const std::string& prefix = "connector");

  // Degenerate single-linear form (the connector-ablation variant).
  static Connector create_linear(ad::ParamStore& store, int in_dim,
                                 int out_dim, Rng& rng,
                                 const std::string& prefix = "connector");

  ad::Tape::Var forward(ad::Tape& tape, ad::Tape::Var t_avg) const;

  std::vector<double> forward_value(const std::vector<double>& t_avg) const;

  int in_dim() const { return in_dim_; }
  int out_dim() const { return out_dim_; }
  bool linear_only() const { return linear_only_; }

 private:
  ad::Param* w1_ = nullptr;
  ad::Param* b1_ = nullptr;
  ad::Param* w2_ = nullptr;
  ad::Param* b2_ = nullptr;
  int in_dim_ = 0, hidden_ = 0, out_dim_ = 0;
  bool tanh_gelu_ = false;
  bool linear_only_ = false;
};

// Broadcast additions of the adapted embedding (value-level forms; the
// training path uses the tape ops directly).
// F'(x,y) + t for every position of every scale.
std::vector<Tensor> fuse_features(const std::vector<Tensor>& features,
                                  const std::vector<double>& t_intr);
// q_j + t for every query row.
Tensor fuse_queries(const Tensor& queries, const std::vector<double>& t_intr);

Tensor uniform_init(std::vector<int> shape, double bound, Rng& rng);

}  // namespace fovdet
