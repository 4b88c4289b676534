#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "fovdet/tensor.hpp"

namespace fovdet {

struct DescriptionSet {
  double focal = 0.0;
  std::vector<std::string> descriptions;  // trimmed, non-empty
};

// Deterministic text -> fixed-width vector. Same text must produce a
// bitwise-identical vector.
class TextEncoder {
 public:
  virtual ~TextEncoder() = default;
  virtual std::vector<double> encode(const std::string& text) const = 0;
  virtual int dim() const = 0;
  virtual std::string name() const = 0;
};

// Bag-of-tokens hash encoder with a smooth numeric channel: every token
// contributes a PRNG vector seeded by its hash; tokens that parse as numbers
// additionally contribute (value/1000) * gain * D for a fixed direction D.
// The numeric channel is what makes nearby focal lengths correlate, so the
// bank has the ordered structure interpolation relies on.
std::unique_ptr<TextEncoder> make_reference_encoder(int dim,
                                                    double numeric_gain = 16.0);

// Adapter that shells out per call: writes the text to the command's stdin
// and reads `dim` whitespace-separated floats from its stdout. Lets real
// embedding models be swapped in without code changes.
std::unique_ptr<TextEncoder> make_external_encoder(const std::string& command,
                                                   int dim);

// Frozen focal -> unit vector map (entries sorted by focal).
class IntrinsicEmbeddingBank {
 public:
  struct Entry {
    double focal;
    double pre_norm;  // magnitude of the averaged embedding before normalizing
    std::vector<double> vec;
  };

  int dim() const { return dim_; }
  bool frozen() const { return frozen_; }
  const std::string& encoder_name() const { return encoder_name_; }
  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  // Throws InternalError once frozen.
  void insert(double focal, std::vector<double> vec, double pre_norm);
  void freeze() { frozen_ = true; }
  void set_meta(int dim, std::string encoder_name);

  const Entry* find(double focal) const;

  // Number of lookups served; lets tests assert which paths touch the bank.
  std::uint64_t lookup_count() const { return lookups_; }

  std::uint64_t content_hash() const;

 private:
  int dim_ = 0;
  bool frozen_ = false;
  std::string encoder_name_;
  std::vector<Entry> entries_;
  mutable std::uint64_t lookups_ = 0;
};

std::vector<DescriptionSet> load_descriptions(const std::string& dir);

// Per focal: mean of the encoded descriptions, then L2-normalized (the
// pre-normalization magnitude is kept for audit). Returned frozen.
IntrinsicEmbeddingBank build_bank(const std::vector<DescriptionSet>& sets,
                                  const TextEncoder& enc);

// M[i][j] = cosine of entries i and j in focal order.
Tensor similarity_matrix(const IntrinsicEmbeddingBank& bank);

// Top-k PCA coordinates per focal (power iteration with deflation).
// Sign convention: each component is flipped so the lowest focal projects
// non-negative. k beyond rank is zero-filled (with a warning on stderr).
struct PcaResult {
  std::vector<double> focals;
  Tensor coords;  // [n_entries, k]
};
PcaResult pca_projection(const IntrinsicEmbeddingBank& bank, int k = 2);

void write_bank(const std::string& path, const IntrinsicEmbeddingBank& bank);
IntrinsicEmbeddingBank read_bank(const std::string& path);

void write_similarity_csv(const std::string& path,
                          const IntrinsicEmbeddingBank& bank);
void write_pca_csv(const std::string& path, const PcaResult& pca);

}  // namespace fovdet
