#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "fovdet/encoder.hpp"
#include "fovdet/errors.hpp"
#include "fovdet/rng.hpp"

using namespace fovdet;
namespace fs = std::filesystem;

namespace {

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double d = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    d += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return d / std::sqrt(na * nb);
}

std::string temp_dir(const std::string& tag) {
  const auto dir = fs::temp_directory_path() / ("fovdet_enc_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir.string();
}

// Encoder stub whose outputs the test controls exactly.
class FixedEncoder final : public TextEncoder {
 public:
  FixedEncoder(int dim, std::vector<std::vector<double>> table)
      : dim_(dim), table_(std::move(table)) {}
  std::vector<double> encode(const std::string& text) const override {
    const std::size_t idx = static_cast<std::size_t>(std::stoul(text));
    return table_.at(idx);
  }
  int dim() const override { return dim_; }
  std::string name() const override { return "fixed"; }

 private:
  int dim_;
  std::vector<std::vector<double>> table_;
};

}  // namespace

TEST_SUITE("encoder") {

TEST_CASE("load_descriptions: parses focal from filename, drops blanks") {
  const auto dir = temp_dir("load");
  {
    std::ofstream f(dir + "/focal_900.txt");
    f << "first line\n\n   \n  second line  \nthird\n";
  }
  {
    std::ofstream f(dir + "/focal_700.txt");
    f << "only one\n";
  }
  const auto sets = load_descriptions(dir);
  REQUIRE(sets.size() == 2);
  CHECK(sets[0].focal == 700);
  CHECK(sets[0].descriptions.size() == 1);
  CHECK(sets[1].focal == 900);
  REQUIRE(sets[1].descriptions.size() == 3);
  CHECK(sets[1].descriptions[1] == "second line");
}

TEST_CASE("load_descriptions: default seen-focal directory has 4x24") {
  const auto sets = load_descriptions("data/descriptions");
  REQUIRE(sets.size() == 4);
  for (const auto& s : sets) CHECK(s.descriptions.size() == 24);
  CHECK(sets[0].focal == 700);
  CHECK(sets[3].focal == 1300);
}

TEST_CASE("load_descriptions: errors") {
  const auto dir = temp_dir("err");
  {
    std::ofstream f(dir + "/focal_abc.txt");
    f << "text\n";
  }
  CHECK_THROWS_AS(load_descriptions(dir), DomainError);
  fs::remove(dir + "/focal_abc.txt");
  {
    std::ofstream f(dir + "/focal_800.txt");  // empty file
  }
  CHECK_THROWS_AS(load_descriptions(dir), DomainError);
}

TEST_CASE("reference encoder: bag-of-tokens and determinism") {
  const auto enc = make_reference_encoder(32);
  const auto ab = enc->encode("a b");
  const auto ba = enc->encode("b a");
  REQUIRE(ab.size() == 32);
  for (std::size_t i = 0; i < ab.size(); ++i) CHECK(ab[i] == ba[i]);
  const auto again = enc->encode("a b");
  for (std::size_t i = 0; i < ab.size(); ++i) CHECK(ab[i] == again[i]);
}

TEST_CASE("reference encoder: numeric channel orders nearby focals") {
  const auto enc = make_reference_encoder(64);
  const auto a = enc->encode("focal 900 narrow");
  const auto b = enc->encode("focal 920 narrow");
  const auto c = enc->encode("focal 1300 narrow");
  CHECK(cosine(a, b) > cosine(a, c));
}

TEST_CASE("reference encoder: dim must be at least 8") {
  CHECK_THROWS_AS(make_reference_encoder(4), DomainError);
}

TEST_CASE("build_bank: mean of identical descriptions is the single vector") {
  const auto enc = make_reference_encoder(16);
  DescriptionSet set;
  set.focal = 800;
  set.descriptions = {"same text here", "same text here", "same text here"};
  const auto bank = build_bank({set}, *enc);
  const auto single = enc->encode("same text here");
  REQUIRE(bank.size() == 1);
  const auto& v = bank.entries()[0].vec;
  for (std::size_t i = 0; i < v.size(); ++i)
    CHECK(v[i] == doctest::Approx(single[i]).epsilon(1e-12));
}

TEST_CASE("build_bank: permuting description order is bitwise invariant") {
  const auto enc = make_reference_encoder(24);
  DescriptionSet s1{800, {"alpha beta", "gamma 800", "delta run"}};
  DescriptionSet s2{800, {"delta run", "alpha beta", "gamma 800"}};
  const auto b1 = build_bank({s1}, *enc);
  const auto b2 = build_bank({s2}, *enc);
  for (std::size_t i = 0; i < b1.entries()[0].vec.size(); ++i)
    CHECK(b1.entries()[0].vec[i] == b2.entries()[0].vec[i]);
  CHECK(b1.content_hash() == b2.content_hash());
}

TEST_CASE("build_bank: oracle recomputation to 1e-12") {
  const auto enc = make_reference_encoder(40);
  DescriptionSet s1{700, {"wide view 700", "open 700 scene", "broad 700"}};
  DescriptionSet s2{1300, {"tight view 1300", "zoom 1300 scene"}};
  const auto bank = build_bank({s1, s2}, *enc);
  REQUIRE(bank.size() == 2);
  for (const auto& set : {s1, s2}) {
    std::vector<double> mean(40, 0.0);
    for (const auto& d : set.descriptions) {
      const auto v = enc->encode(d);
      for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += v[i];
    }
    for (double& m : mean) m /= static_cast<double>(set.descriptions.size());
    double n = 0;
    for (double m : mean) n += m * m;
    n = std::sqrt(n);
    for (double& m : mean) m /= n;
    const auto* e = bank.find(set.focal);
    REQUIRE(e != nullptr);
    for (std::size_t i = 0; i < mean.size(); ++i)
      CHECK(std::fabs(e->vec[i] - mean[i]) < 1e-12);
  }
}

TEST_CASE("bank: frozen entries reject mutation") {
  const auto enc = make_reference_encoder(16);
  auto bank = build_bank({DescriptionSet{900, {"a 900"}}}, *enc);
  CHECK(bank.frozen());
  CHECK_THROWS_AS(bank.insert(1000, std::vector<double>(16, 0.0), 1.0),
                  InternalError);
}

TEST_CASE("bank file round trip preserves content hash") {
  const auto enc = make_reference_encoder(24);
  const auto sets = load_descriptions("data/descriptions");
  const auto bank = build_bank(sets, *enc);
  const auto dir = temp_dir("roundtrip");
  write_bank(dir + "/bank.txt", bank);
  const auto back = read_bank(dir + "/bank.txt");
  CHECK(back.dim() == bank.dim());
  CHECK(back.size() == bank.size());
  CHECK(back.content_hash() == bank.content_hash());
  CHECK(back.frozen());
}

TEST_CASE("similarity_matrix: diagonal, symmetry, range") {
  const auto enc = make_reference_encoder(48);
  const auto bank = build_bank(load_descriptions("data/descriptions"), *enc);
  const auto m = similarity_matrix(bank);
  const int n = m.dim(0);
  for (int i = 0; i < n; ++i) {
    CHECK(std::fabs(m.at(i, i) - 1.0) < 1e-9);
    for (int j = 0; j < n; ++j) {
      CHECK(m.at(i, j) == doctest::Approx(m.at(j, i)).epsilon(1e-12));
      CHECK(m.at(i, j) >= -1.0 - 1e-12);
      CHECK(m.at(i, j) <= 1.0 + 1e-12);
    }
  }
}

TEST_CASE("similarity rows unimodal with diagonal peak on the 13-focal grid") {
  const auto enc = make_reference_encoder(64);
  const auto bank =
      build_bank(load_descriptions("data/descriptions_grid"), *enc);
  REQUIRE(bank.size() == 13);
  const auto m = similarity_matrix(bank);
  const int n = m.dim(0);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j + 1 < n; ++j) {
      if (j + 1 <= i) {
        CHECK(m.at(i, j) < m.at(i, j + 1));  // rising toward the diagonal
      } else {
        CHECK(m.at(i, j) > m.at(i, j + 1));  // falling after it
      }
    }
  }
}

TEST_CASE("pca: two entries project symmetrically on one axis") {
  FixedEncoder enc(8, {{1, 0, 0, 0, 0, 0, 0, 0}, {0, 1, 0, 0, 0, 0, 0, 0}});
  DescriptionSet a{700, {"0"}}, b{900, {"1"}};
  const auto bank = build_bank({a, b}, enc);
  const auto pca = pca_projection(bank, 2);
  CHECK(pca.coords.at(0, 0) ==
        doctest::Approx(-pca.coords.at(1, 0)).epsilon(1e-9));
  CHECK(pca.coords.at(0, 0) >= 0.0);  // sign fix: lowest focal non-negative
  CHECK(std::fabs(pca.coords.at(0, 1)) < 1e-12);  // beyond rank: zero-fill
}

TEST_CASE("pca: collinear vectors have a vanishing second component") {
  std::vector<std::vector<double>> table;
  for (int i = 0; i < 4; ++i) {
    std::vector<double> v(8, 0.0);
    v[2] = 0.1 + 0.2 * i;
    v[5] = 0.05 + 0.1 * i;
    table.push_back(v);
  }
  FixedEncoder enc(8, table);
  std::vector<DescriptionSet> sets;
  for (int i = 0; i < 4; ++i)
    sets.push_back(DescriptionSet{700.0 + 100 * i, {std::to_string(i)}});
  const auto bank = build_bank(sets, enc);
  const auto pca = pca_projection(bank, 2);
  for (int r = 0; r < 4; ++r) CHECK(std::fabs(pca.coords.at(r, 1)) < 1e-8);
}

TEST_CASE("pca: first component monotone in focal on the grid bank") {
  const auto enc = make_reference_encoder(64);
  const auto bank =
      build_bank(load_descriptions("data/descriptions_grid"), *enc);
  const auto pca = pca_projection(bank, 2);
  const bool increasing = pca.coords.at(1, 0) > pca.coords.at(0, 0);
  for (int i = 0; i + 1 < static_cast<int>(bank.size()); ++i) {
    if (increasing)
      CHECK(pca.coords.at(i + 1, 0) > pca.coords.at(i, 0));
    else
      CHECK(pca.coords.at(i + 1, 0) < pca.coords.at(i, 0));
  }
}

TEST_CASE("pca: captures at least as much variance as random projections") {
  const auto enc = make_reference_encoder(32);
  const auto bank = build_bank(load_descriptions("data/descriptions"), *enc);
  const auto pca = pca_projection(bank, 2);
  double pca_var = 0.0;
  for (int r = 0; r < static_cast<int>(bank.size()); ++r)
    for (int c = 0; c < 2; ++c)
      pca_var += pca.coords.at(r, c) * pca.coords.at(r, c);

  const int n = static_cast<int>(bank.size());
  const int d = bank.dim();
  std::vector<std::vector<double>> x(
      static_cast<std::size_t>(n),
      std::vector<double>(static_cast<std::size_t>(d), 0.0));
  std::vector<double> mean(static_cast<std::size_t>(d), 0.0);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < d; ++c)
      mean[static_cast<std::size_t>(c)] +=
          bank.entries()[static_cast<std::size_t>(r)].vec[static_cast<std::size_t>(c)] / n;
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < d; ++c)
      x[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] =
          bank.entries()[static_cast<std::size_t>(r)].vec[static_cast<std::size_t>(c)] -
          mean[static_cast<std::size_t>(c)];

  Rng rng(77);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> u(static_cast<std::size_t>(d)),
        v(static_cast<std::size_t>(d));
    for (double& e : u) e = rng.normal();
    double nu = 0;
    for (double e : u) nu += e * e;
    for (double& e : u) e /= std::sqrt(nu);
    for (double& e : v) e = rng.normal();
    double dot = 0;
    for (int c = 0; c < d; ++c)
      dot += u[static_cast<std::size_t>(c)] * v[static_cast<std::size_t>(c)];
    for (int c = 0; c < d; ++c)
      v[static_cast<std::size_t>(c)] -= dot * u[static_cast<std::size_t>(c)];
    double nv = 0;
    for (double e : v) nv += e * e;
    for (double& e : v) e /= std::sqrt(nv);
    double var = 0;
    for (int r = 0; r < n; ++r) {
      double pu = 0, pv = 0;
      for (int c = 0; c < d; ++c) {
        pu += x[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] *
              u[static_cast<std::size_t>(c)];
        pv += x[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] *
              v[static_cast<std::size_t>(c)];
      }
      var += pu * pu + pv * pv;
    }
    CHECK(var <= pca_var + 1e-9);
  }
}

}  // TEST_SUITE
