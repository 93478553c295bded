#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "modalbound/modalbound.hpp"

using namespace modalbound;
using Catch::Approx;

TEST_CASE("overlap generator validates its configuration") {
  OverlapConfig cfg;
  cfg.modality_dim = 2;
  cfg.n_samples = 3;
  cfg.w = 1.5;
  CHECK_THROWS_AS(generate_overlap(cfg), ConfigError);
  cfg.w = -0.1;
  CHECK_THROWS_AS(generate_overlap(cfg), ConfigError);
  cfg.w = 0.5;
  cfg.n_samples = 0;
  CHECK_THROWS_AS(generate_overlap(cfg), ConfigError);
  cfg.n_samples = 3;
  cfg.modality_dim = 0;
  CHECK_THROWS_AS(generate_overlap(cfg), ConfigError);
}

TEST_CASE("overlap blocks coincide at w = 1 and labels are coordinate sums") {
  OverlapConfig cfg;
  cfg.modality_dim = 3;
  cfg.w = 1.0;
  cfg.n_samples = 50;
  cfg.seed = 5;
  Dataset ds = generate_overlap(cfg);
  REQUIRE(ds.size() == 50);
  CHECK(ds.schema() == ModalitySchema::uniform(4, 3));
  for (const auto& s : ds.samples()) {
    for (int k = 1; k < 4; ++k)
      CHECK(*s.blocks[static_cast<std::size_t>(k)] == *s.blocks[0]);
  }

  cfg.w = 0.37;
  Dataset mixed = generate_overlap(cfg);
  for (const auto& s : mixed.samples()) {
    double y = 0.0;
    for (const auto& b : s.blocks) y += b->sum();
    CHECK(s.label == Approx(y).margin(1e-9));
  }
}

TEST_CASE("overlap streams are deterministic and prefix stable") {
  OverlapConfig cfg;
  cfg.modality_dim = 2;
  cfg.w = 0.4;
  cfg.n_samples = 60;
  cfg.seed = 9;
  Dataset big = generate_overlap(cfg);
  Dataset again = generate_overlap(cfg);
  CHECK(big.digest() == again.digest());

  cfg.n_samples = 25;
  Dataset small = generate_overlap(cfg);
  for (int i = 0; i < small.size(); ++i) {
    CHECK(small.sample(i).label == big.sample(i).label);
    for (int k = 0; k < 4; ++k)
      CHECK(*small.sample(i).blocks[static_cast<std::size_t>(k)] ==
            *big.sample(i).blocks[static_cast<std::size_t>(k)]);
  }

  cfg.seed = 10;
  cfg.n_samples = 60;
  CHECK(generate_overlap(cfg).digest() != big.digest());
}

namespace {

// Sample covariance between two scalar series.
double cov(const std::vector<double>& a, const std::vector<double>& b) {
  const auto n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - ma) * (b[i] - mb);
  return s / (n - 1.0);
}

}  // namespace

TEST_CASE("overlap blocks are independent at w = 0") {
  OverlapConfig cfg;
  cfg.modality_dim = 4;
  cfg.w = 0.0;
  cfg.n_samples = 200000;
  cfg.seed = 21;
  Dataset ds = generate_overlap(cfg);

  // Every cross-block coordinate covariance should be sampling noise.
  for (int a = 0; a < 4; ++a)
    for (int b = a + 1; b < 4; ++b)
      for (int j = 0; j < 4; ++j) {
        std::vector<double> xa, xb;
        xa.reserve(static_cast<std::size_t>(ds.size()));
        xb.reserve(static_cast<std::size_t>(ds.size()));
        for (const auto& s : ds.samples()) {
          xa.push_back((*s.blocks[static_cast<std::size_t>(a)])[j]);
          xb.push_back((*s.blocks[static_cast<std::size_t>(b)])[j]);
        }
        CHECK(std::abs(cov(xa, xb)) < 0.01);
      }
}

TEST_CASE("overlap sample moments match the population covariance") {
  const double w = 0.5;
  OverlapConfig cfg;
  cfg.modality_dim = 1;
  cfg.w = w;
  cfg.n_samples = 200000;
  cfg.seed = 33;
  Dataset ds = generate_overlap(cfg);

  std::vector<std::vector<double>> x(4);
  for (auto& col : x) col.reserve(static_cast<std::size_t>(ds.size()));
  for (const auto& s : ds.samples())
    for (int k = 0; k < 4; ++k)
      x[static_cast<std::size_t>(k)].push_back(
          (*s.blocks[static_cast<std::size_t>(k)])[0]);

  Eigen::MatrixXd pop = overlap_population_covariance(1, w);
  REQUIRE(pop.rows() == 4);
  CHECK(pop(0, 0) == 1.0);
  CHECK(pop(1, 1) == Approx((1 - w) * (1 - w) + w * w));
  CHECK(pop(0, 2) == w);
  CHECK(pop(1, 3) == Approx(w * w));

  for (int a = 0; a < 4; ++a)
    for (int b = a; b < 4; ++b)
      CHECK(cov(x[static_cast<std::size_t>(a)],
                x[static_cast<std::size_t>(b)]) ==
            Approx(pop(a, b)).margin(0.02));
}

TEST_CASE("population covariance is block diagonal across coordinates") {
  Eigen::MatrixXd pop = overlap_population_covariance(3, 0.8);
  REQUIRE(pop.rows() == 12);
  CHECK((pop - pop.transpose()).cwiseAbs().maxCoeff() == 0.0);
  // Same coordinate across blocks couples; distinct coordinates never mix.
  CHECK(pop(0, 3) == 0.8);
  CHECK(pop(1, 4) == 0.8);
  CHECK(pop(0, 1) == 0.0);
  CHECK(pop(0, 4) == 0.0);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(pop);
  CHECK(es.eigenvalues().minCoeff() >= -1e-10);
}

TEST_CASE("overlap true model reproduces the labels") {
  const int p = 3;
  OverlapTrueModel tm = overlap_true_model(p);
  REQUIRE(tm.a_star.rows() == 4 * p);
  REQUIRE(tm.a_star.cols() == 1);
  CHECK(tm.a_star.col(0).norm() == Approx(1.0).margin(1e-12));
  Eigen::VectorXd v = tm.a_star * tm.beta_star;
  CHECK((v - Eigen::VectorXd::Ones(4 * p)).cwiseAbs().maxCoeff() < 1e-12);

  OverlapConfig cfg;
  cfg.modality_dim = p;
  cfg.w = 0.6;
  cfg.n_samples = 40;
  cfg.seed = 2;
  Dataset ds = generate_overlap(cfg);
  LinearComposite truth(ds.schema(), tm.a_star, tm.beta_star);
  ModalitySubset full = ModalitySubset::full(ds.schema());
  for (const auto& s : ds.samples())
    CHECK(truth.predict(s, full) == Approx(s.label).margin(1e-9));
}

TEST_CASE("overlap oracle residual and prefix subsets") {
  CHECK(overlap_prefix_oracle(1, 100, 0.0) == 300.0);
  CHECK(overlap_prefix_oracle(3, 100, 0.2) == Approx(64.0));
  CHECK(overlap_prefix_oracle(1, 100, 0.8) ==
        Approx(12.0).margin(1e-12));
  CHECK(overlap_prefix_oracle(4, 17, 0.3) == 0.0);
  CHECK(overlap_prefix_oracle(2, 5, 1.0) == 0.0);
  CHECK_THROWS_AS(overlap_prefix_oracle(0, 10, 0.5), ConfigError);
  CHECK_THROWS_AS(overlap_prefix_oracle(5, 10, 0.5), ConfigError);

  ModalitySchema schema = ModalitySchema::uniform(4, 2);
  CHECK(overlap_prefix_subset(schema, 2).label() == "m1,m2");
  CHECK(overlap_prefix_subset(schema, 4).is_full());
}

TEST_CASE("closed-form latent quality of prefix encoders hits the residual") {
  const int p = 5;
  OverlapTrueModel tm = overlap_true_model(p);
  for (double w : {0.0, 0.2, 0.5, 0.8, 1.0}) {
    Eigen::MatrixXd sigma = overlap_population_covariance(p, w);
    for (int k = 1; k <= 4; ++k) {
      Eigen::MatrixXd a = Eigen::MatrixXd::Identity(4 * p, 4 * p)
                              .leftCols(k * p);
      double eta = eta_closed_form(a, tm.a_star, tm.beta_star, sigma).value;
      double oracle = overlap_prefix_oracle(k, p, w);
      CHECK(eta == Approx(oracle).margin(1e-8 * (1.0 + oracle)));
    }
  }
}

TEST_CASE("ridgeless regression on an overlap prefix approaches the oracle") {
  OverlapConfig cfg;
  cfg.modality_dim = 8;
  cfg.w = 0.5;
  cfg.n_samples = 40000;
  cfg.seed = 77;
  Dataset ds = generate_overlap(cfg);
  auto [train, test] = ds.split(0.8);
  ModalitySubset prefix2 = overlap_prefix_subset(ds.schema(), 2);
  LinearComposite fit = erm_linear_closed_form(train, prefix2);
  double risk = empirical_risk(fit, test, prefix2);
  double oracle = overlap_prefix_oracle(2, 8, 0.5);
  CHECK(risk == Approx(oracle).epsilon(0.05));
}

TEST_CASE("linear generator basics") {
  ModalitySchema schema({1, 1});
  LinearGenConfig cfg;
  cfg.schema = schema;
  cfg.a_star = Eigen::MatrixXd::Identity(2, 2);
  cfg.beta_star = Eigen::VectorXd::Zero(2);
  cfg.n_samples = 30;
  cfg.seed = 4;
  Dataset zeros = generate_linear(cfg);
  for (const auto& s : zeros.samples()) CHECK(s.label == 0.0);

  Dataset again = generate_linear(cfg);
  CHECK(again.digest() == zeros.digest());
}

TEST_CASE("linear generator label variance and true-model risk") {
  ModalitySchema schema({1});
  LinearGenConfig cfg;
  cfg.schema = schema;
  cfg.a_star = Eigen::MatrixXd::Identity(1, 1);
  cfg.beta_star = Eigen::VectorXd::Constant(1, 2.0);
  cfg.n_samples = 100000;
  cfg.seed = 12;
  Dataset ds = generate_linear(cfg);
  std::vector<double> labels;
  labels.reserve(static_cast<std::size_t>(ds.size()));
  for (const auto& s : ds.samples()) labels.push_back(s.label);
  double sd = sample_sd(labels);
  CHECK(sd * sd == Approx(4.0).epsilon(0.05));

  cfg.noise_sd = 0.5;
  Dataset noisy = generate_linear(cfg);
  LinearComposite truth(schema, cfg.a_star, cfg.beta_star);
  double risk =
      empirical_risk(truth, noisy, ModalitySubset::full(schema));
  CHECK(risk == Approx(0.25).epsilon(0.05));
}

TEST_CASE("linear generator rejects bad instances") {
  ModalitySchema schema({1, 1});
  LinearGenConfig cfg;
  cfg.schema = schema;
  cfg.a_star = Eigen::MatrixXd::Constant(2, 1, 2.0);  // not orthonormal
  cfg.beta_star = Eigen::VectorXd::Ones(1);
  cfg.n_samples = 5;
  CHECK_THROWS_AS(generate_linear(cfg), ConfigError);

  cfg.a_star = Eigen::MatrixXd::Identity(2, 1);
  cfg.beta_star = Eigen::VectorXd::Ones(2);  // length mismatch
  CHECK_THROWS_AS(generate_linear(cfg), SchemaMismatchError);

  cfg.beta_star = Eigen::VectorXd::Ones(1);
  cfg.n_samples = 0;
  CHECK_THROWS_AS(generate_linear(cfg), ConfigError);
  cfg.n_samples = 5;
  cfg.noise_sd = -1.0;
  CHECK_THROWS_AS(generate_linear(cfg), ConfigError);
  cfg.noise_sd = 0.0;

  Eigen::MatrixXd asym(2, 2);
  asym << 1.0, 0.5, 0.2, 1.0;
  cfg.sigma = asym;
  CHECK_THROWS_AS(generate_linear(cfg), ConfigError);
  Eigen::MatrixXd indef(2, 2);
  indef << 1.0, 2.0, 2.0, 1.0;
  cfg.sigma = indef;
  CHECK_THROWS_AS(generate_linear(cfg), ConfigError);

  cfg.sigma.reset();
  cfg.a_star = Eigen::MatrixXd::Identity(3, 1);  // wrong row count
  CHECK_THROWS_AS(generate_linear(cfg), SchemaMismatchError);
}

TEST_CASE("linear generator honours a custom covariance") {
  ModalitySchema schema({2});
  Eigen::MatrixXd sigma(2, 2);
  sigma << 2.0, 0.7, 0.7, 1.0;
  LinearGenConfig cfg;
  cfg.schema = schema;
  cfg.a_star = Eigen::MatrixXd::Identity(2, 2);
  cfg.beta_star = Eigen::VectorXd::Zero(2);
  cfg.sigma = sigma;
  cfg.n_samples = 150000;
  cfg.seed = 8;
  Dataset ds = generate_linear(cfg);
  std::vector<double> x0, x1;
  for (const auto& s : ds.samples()) {
    x0.push_back((*s.blocks[0])[0]);
    x1.push_back((*s.blocks[0])[1]);
  }
  CHECK(cov(x0, x0) == Approx(2.0).margin(0.03));
  CHECK(cov(x0, x1) == Approx(0.7).margin(0.02));
  CHECK(cov(x1, x1) == Approx(1.0).margin(0.02));
}

TEST_CASE("random orthonormal frames") {
  Eigen::MatrixXd q = random_orthonormal(5, 2, StreamKey(3));
  Eigen::MatrixXd gram = q.transpose() * q;
  CHECK((gram - Eigen::MatrixXd::Identity(2, 2)).cwiseAbs().maxCoeff() <
        1e-10);

  Eigen::MatrixXd square = random_orthonormal(3, 3, StreamKey(4));
  CHECK((square.transpose() * square - Eigen::MatrixXd::Identity(3, 3))
            .cwiseAbs()
            .maxCoeff() < 1e-10);

  CHECK(random_orthonormal(5, 2, StreamKey(3)) == q);
  CHECK(random_orthonormal(5, 2, StreamKey(9)) != q);
  CHECK_THROWS_AS(random_orthonormal(2, 3, StreamKey(0)), ConfigError);
}
