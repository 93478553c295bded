#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <vector>

#include "modalbound/model.hpp"
#include "modalbound/numeric.hpp"
#include "modalbound/train.hpp"

namespace modalbound {

// Latent quality eta(g): the excess population risk of the best linear
// head on top of encoder g, relative to the best head on the true encoder.
// For linear encoders under Gaussian inputs it has a closed form through
// the latent covariance blocks below.

struct CovarianceBlocks {
  Eigen::MatrixXd g11;  // A^T Sigma A
  Eigen::MatrixXd g12;  // A^T Sigma A'
  Eigen::MatrixXd g21;  // A'^T Sigma A
  Eigen::MatrixXd g22;  // A'^T Sigma A'
};

inline CovarianceBlocks covariance_blocks(const Eigen::MatrixXd& a,
                                          const Eigen::MatrixXd& a_prime,
                                          const Eigen::MatrixXd& sigma) {
  if (sigma.rows() != sigma.cols())
    throw ConfigError("Sigma must be square");
  double scale = std::max(1.0, sigma.cwiseAbs().maxCoeff());
  if ((sigma - sigma.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale)
    throw ConfigError("Sigma is not symmetric");
  if (a.rows() != sigma.rows() || a_prime.rows() != sigma.rows())
    throw SchemaMismatchError("encoder row count != Sigma dimension");
  CovarianceBlocks b;
  Eigen::MatrixXd sa = sigma * a;
  Eigen::MatrixXd sap = sigma * a_prime;
  b.g11 = a.transpose() * sa;
  b.g12 = a.transpose() * sap;
  b.g21 = a_prime.transpose() * sa;
  b.g22 = a_prime.transpose() * sap;
  return b;
}

// Gamma22 - Gamma21 Gamma11^+ Gamma12. With allow_pinv = false a rank
// deficient Gamma11 raises SingularityError instead of falling back to
// the pseudo-inverse.
inline Eigen::MatrixXd schur_complement(const CovarianceBlocks& b,
                                        bool allow_pinv = true) {
  PsdInverse inv = pinv_psd(b.g11);
  if (!allow_pinv && !inv.full_rank)
    throw SingularityError("Gamma11 is rank deficient", inv.rank,
                           static_cast<int>(b.g11.rows()));
  Eigen::MatrixXd s = b.g22 - b.g21 * inv.inverse * b.g12;
  return 0.5 * (s + s.transpose());
}

// Risk-minimizing head for encoder A against the true model (A*, beta*):
// beta = Gamma11^+ Gamma12 beta*.
inline Eigen::VectorXd optimal_head(const Eigen::MatrixXd& a,
                                    const Eigen::MatrixXd& a_star,
                                    const Eigen::VectorXd& beta_star,
                                    const Eigen::MatrixXd& sigma) {
  if (beta_star.size() != a_star.cols())
    throw SchemaMismatchError("beta* length != A* column count");
  CovarianceBlocks b = covariance_blocks(a, a_star, sigma);
  return pinv_psd(b.g11).inverse * (b.g12 * beta_star);
}

struct EtaEstimate {
  enum class Method { closed_form, empirical };

  double value = 0.0;
  Method method = Method::closed_form;
  double std_error = 0.0;
  // The centering offset subtracted from the measured risk. The closed
  // form is centered analytically, recorded as 0.
  double oracle_risk = 0.0;
  int eval_samples = 0;
  // Set when the head-fit and eval data coincide.
  bool overlap_warning = false;
  std::string subset_label;
};

// Exact eta for a linear encoder: the quadratic form of beta* with the
// Schur complement. The result is mathematically >= 0; negative
// floating-point dust is clamped to zero.
inline EtaEstimate eta_closed_form(const Eigen::MatrixXd& a,
                                   const Eigen::MatrixXd& a_star,
                                   const Eigen::VectorXd& beta_star,
                                   const Eigen::MatrixXd& sigma) {
  if (beta_star.size() != a_star.cols())
    throw SchemaMismatchError("beta* length != A* column count");
  CovarianceBlocks b = covariance_blocks(a, a_star, sigma);
  Eigen::MatrixXd s = schur_complement(b);
  double q = beta_star.dot(s * beta_star);
  EtaEstimate e;
  e.value = std::max(q, 0.0);
  e.method = EtaEstimate::Method::closed_form;
  return e;
}

namespace latentdetail {

// Cheap provenance comparison; true when the two datasets were produced
// by the same generator call and carry the same split tag.
inline bool same_data(const Dataset& a, const Dataset& b) {
  return a.meta().generator == b.meta().generator &&
         a.meta().seed == b.meta().seed &&
         a.meta().config_digest == b.meta().config_digest &&
         a.meta().split == b.meta().split && a.size() == b.size();
}

}  // namespace latentdetail

// Empirical eta: freeze the encoder, refit a linear head on fit_ds by
// least squares, evaluate on eval_ds, subtract the supplied oracle risk.
// The standard error is over per-sample eval losses. A bias term is used
// whenever the encoder's own head family has one (the MLP); pass
// with_bias explicitly for bare encoders.
template <LatentEncoder E>
EtaEstimate eta_empirical(const E& encoder, const ModalitySubset& subset,
                          const Dataset& eval_ds, const Dataset& fit_ds,
                          double oracle_risk, bool with_bias = false) {
  if (eval_ds.schema() != subset.schema() ||
      fit_ds.schema() != subset.schema())
    throw SchemaMismatchError("dataset schema != subset schema");
  if (eval_ds.size() < 1 || fit_ds.size() < 1)
    throw ConfigError("eta estimate needs nonempty datasets");

  auto fit = traindetail::fit_linear_head(
      fit_ds,
      [&](const MultiModalSample& s) { return encoder.encode(s, subset); },
      encoder.latent_dim(), with_bias);

  std::vector<double> losses;
  losses.reserve(static_cast<std::size_t>(eval_ds.size()));
  for (const auto& s : eval_ds.samples()) {
    double pred = fit.w.dot(encoder.encode(s, subset)) + fit.bias;
    double e = pred - s.label;
    losses.push_back(e * e);
  }

  EtaEstimate out;
  out.value = kahan_mean(losses) - oracle_risk;
  out.method = EtaEstimate::Method::empirical;
  out.std_error =
      sample_sd(losses) / std::sqrt(static_cast<double>(losses.size()));
  out.oracle_risk = oracle_risk;
  out.eval_samples = eval_ds.size();
  out.overlap_warning = latentdetail::same_data(eval_ds, fit_ds);
  out.subset_label = subset.label();
  return out;
}

struct GammaEstimate {
  double value = 0.0;
  double std_error = 0.0;
};

// gamma(M, N) = eta(g_M) - eta(g_N). Both estimates must be centered with
// the same oracle risk, otherwise the difference mixes baselines.
inline GammaEstimate gamma_gap(const EtaEstimate& eta_m,
                               const EtaEstimate& eta_n) {
  if (eta_m.oracle_risk != eta_n.oracle_risk)
    throw ConfigError("gamma: eta estimates use different oracle risks");
  GammaEstimate g;
  g.value = eta_m.value - eta_n.value;
  g.std_error = std::sqrt(eta_m.std_error * eta_m.std_error +
                          eta_n.std_error * eta_n.std_error);
  return g;
}

// Population excess risk of a fixed linear composite (head included):
// (v - v*)^T Sigma (v - v*) with v = A beta, v* = A* beta*.
inline double linear_excess_risk(const LinearComposite& model,
                                 const Eigen::MatrixXd& a_star,
                                 const Eigen::VectorXd& beta_star,
                                 const Eigen::MatrixXd& sigma) {
  Eigen::VectorXd diff = model.composite_vector() - a_star * beta_star;
  return diff.dot(sigma * diff);
}

}  // namespace modalbound
