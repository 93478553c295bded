#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>

#include "modalbound/modality.hpp"
#include "modalbound/numeric.hpp"
#include "modalbound/rng.hpp"

namespace modalbound {

// ---------------------------------------------------------------------------
// Overlap family: four blocks of dimension p, drawn i.i.d. standard normal,
// then every block after the first is blended with the first,
//   m_i <- (1 - w) m_i + w m_1   (i = 2, 3, 4),
// and the label is the coordinate sum of m_1 + m_2 + m_3 + m_4. The weight
// w in [0, 1] controls how much information the later blocks share with m_1.

struct OverlapConfig {
  int modality_dim = 100;
  double w = 0.0;
  int n_samples = 0;
  std::uint64_t seed = 0;

  std::string digest() const {
    Digest d;
    d.feed("overlap").feed(modality_dim).feed(w).feed(n_samples).feed(seed);
    return d.hex();
  }
};

inline constexpr int kOverlapModalities = 4;

inline Dataset generate_overlap(const OverlapConfig& cfg) {
  if (!(cfg.w >= 0.0 && cfg.w <= 1.0))
    throw ConfigError("overlap weight w must lie in [0, 1]");
  if (cfg.modality_dim < 1) throw ConfigError("modality_dim must be >= 1");
  if (cfg.n_samples < 1) throw ConfigError("n_samples must be >= 1");

  const int p = cfg.modality_dim;
  ModalitySchema schema = ModalitySchema::uniform(kOverlapModalities, p);
  DatasetMeta meta;
  meta.generator = "overlap";
  meta.seed = cfg.seed;
  meta.config_digest = cfg.digest();
  Dataset ds(schema, meta);
  ds.reserve(cfg.n_samples);

  StreamKey base = StreamKey(cfg.seed).with("overlap");
  for (int i = 0; i < cfg.n_samples; ++i) {
    StreamRng rng(base.with(static_cast<std::uint64_t>(i)));
    MultiModalSample s;
    s.blocks.resize(kOverlapModalities);
    for (int k = 0; k < kOverlapModalities; ++k) {
      Eigen::VectorXd b(p);
      for (int j = 0; j < p; ++j) b[j] = rng.normal();
      s.blocks[static_cast<std::size_t>(k)] = std::move(b);
    }
    const Eigen::VectorXd m1 = *s.blocks[0];
    double label = m1.sum();
    for (int k = 1; k < kOverlapModalities; ++k) {
      Eigen::VectorXd& b = *s.blocks[static_cast<std::size_t>(k)];
      b = (1.0 - cfg.w) * b + cfg.w * m1;
      label += b.sum();
    }
    s.label = label;
    ds.add(std::move(s));
  }
  return ds;
}

// Population covariance of the concatenated overlap input. Per coordinate:
// Var(m_1) = 1, Var(m_i) = (1-w)^2 + w^2, Cov(m_1, m_i) = w and
// Cov(m_i, m_j) = w^2 for distinct i, j >= 2; blocks are coordinatewise
// independent, so the covariance is block diagonal in coordinates.
inline Eigen::MatrixXd overlap_population_covariance(int p, double w) {
  const int d = kOverlapModalities * p;
  Eigen::MatrixXd sigma = Eigen::MatrixXd::Zero(d, d);
  auto put = [&](int a, int b, double v) {
    for (int j = 0; j < p; ++j) sigma(a * p + j, b * p + j) = v;
  };
  put(0, 0, 1.0);
  for (int i = 1; i < kOverlapModalities; ++i) {
    put(i, i, (1.0 - w) * (1.0 - w) + w * w);
    put(0, i, w);
    put(i, 0, w);
    for (int j = 1; j < kOverlapModalities; ++j)
      if (j != i) put(i, j, w * w);
  }
  return sigma;
}

// The label is v*^T x for the all-ones composite vector, factored into an
// orthonormal direction and head scale.
struct OverlapTrueModel {
  Eigen::MatrixXd a_star;   // d x 1, unit column
  Eigen::VectorXd beta_star;  // scalar head
};

inline OverlapTrueModel overlap_true_model(int p) {
  const int d = kOverlapModalities * p;
  OverlapTrueModel m;
  Eigen::VectorXd v = Eigen::VectorXd::Ones(d);
  m.a_star = v / v.norm();
  m.beta_star = Eigen::VectorXd::Constant(1, v.norm());
  return m;
}

// Exact residual risk of the best predictor that sees only the first k
// blocks. Seeing m_1 pins the shared component, and each of the remaining
// blocks then contributes an independent (1-w)^2-variance normal per
// coordinate, so the residual is (4 - k) * p * (1 - w)^2.
inline double overlap_prefix_oracle(int k_prefix, int p, double w) {
  if (k_prefix < 1 || k_prefix > kOverlapModalities)
    throw ConfigError("overlap oracle needs a prefix length in [1, 4]");
  return static_cast<double>(kOverlapModalities - k_prefix) *
         static_cast<double>(p) * (1.0 - w) * (1.0 - w);
}

// Prefix subset {m1, ..., mk}.
inline ModalitySubset overlap_prefix_subset(const ModalitySchema& schema,
                                            int k_prefix) {
  std::vector<int> idx;
  for (int k = 0; k < k_prefix; ++k) idx.push_back(k);
  return ModalitySubset::of(schema, idx);
}

// ---------------------------------------------------------------------------
// Linear family: x ~ N(0, Sigma), y = beta*^T A*^T x + eps with Gaussian
// noise. A* must have orthonormal columns and Sigma must be positive
// definite.

struct LinearGenConfig {
  ModalitySchema schema;
  Eigen::MatrixXd a_star;     // d x n, orthonormal columns
  Eigen::VectorXd beta_star;  // n
  double noise_sd = 0.0;
  std::optional<Eigen::MatrixXd> sigma;  // omitted: identity
  int n_samples = 0;
  std::uint64_t seed = 0;

  std::string digest() const {
    Digest d;
    d.feed("linear");
    for (int dim : schema.dims()) d.feed(dim);
    d.feed(a_star).feed(Eigen::MatrixXd(beta_star)).feed(noise_sd);
    if (sigma) d.feed(*sigma);
    d.feed(n_samples).feed(seed);
    return d.hex();
  }
};

inline Dataset generate_linear(const LinearGenConfig& cfg) {
  const int d = cfg.schema.total_dim();
  if (cfg.a_star.rows() != d)
    throw SchemaMismatchError("A* row count != schema dimension");
  const auto n = cfg.a_star.cols();
  if (cfg.beta_star.size() != n)
    throw SchemaMismatchError("beta* length != A* column count");
  if (cfg.n_samples < 1) throw ConfigError("n_samples must be >= 1");
  if (cfg.noise_sd < 0.0) throw ConfigError("noise_sd must be >= 0");

  Eigen::MatrixXd gram = cfg.a_star.transpose() * cfg.a_star;
  if ((gram - Eigen::MatrixXd::Identity(n, n)).cwiseAbs().maxCoeff() > 1e-8)
    throw ConfigError("A* columns are not orthonormal");

  Eigen::MatrixXd chol_lower;
  if (cfg.sigma) {
    if (cfg.sigma->rows() != d || cfg.sigma->cols() != d)
      throw SchemaMismatchError("Sigma size != schema dimension");
    if ((*cfg.sigma - cfg.sigma->transpose()).cwiseAbs().maxCoeff() >
        1e-10 * std::max(1.0, cfg.sigma->cwiseAbs().maxCoeff()))
      throw ConfigError("Sigma is not symmetric");
    Eigen::LLT<Eigen::MatrixXd> llt(*cfg.sigma);
    if (llt.info() != Eigen::Success)
      throw ConfigError("Sigma is not positive definite");
    chol_lower = llt.matrixL();
  }

  DatasetMeta meta;
  meta.generator = "linear";
  meta.seed = cfg.seed;
  meta.config_digest = cfg.digest();
  Dataset ds(cfg.schema, meta);
  ds.reserve(cfg.n_samples);

  Eigen::VectorXd v_star = cfg.a_star * cfg.beta_star;
  StreamKey xkey = StreamKey(cfg.seed).with("linear-x");
  StreamKey nkey = StreamKey(cfg.seed).with("linear-noise");
  for (int i = 0; i < cfg.n_samples; ++i) {
    StreamRng rng(xkey.with(static_cast<std::uint64_t>(i)));
    Eigen::VectorXd g(d);
    for (int j = 0; j < d; ++j) g[j] = rng.normal();
    Eigen::VectorXd x = cfg.sigma ? Eigen::VectorXd(chol_lower * g) : g;
    double y = v_star.dot(x);
    if (cfg.noise_sd > 0.0) {
      StreamRng nrng(nkey.with(static_cast<std::uint64_t>(i)));
      y += cfg.noise_sd * nrng.normal();
    }
    MultiModalSample s;
    s.blocks.resize(static_cast<std::size_t>(cfg.schema.modality_count()));
    for (int k = 0; k < cfg.schema.modality_count(); ++k)
      s.blocks[static_cast<std::size_t>(k)] =
          x.segment(cfg.schema.offset(k), cfg.schema.dim(k)).eval();
    s.label = y;
    ds.add(std::move(s));
  }
  return ds;
}

}  // namespace modalbound
