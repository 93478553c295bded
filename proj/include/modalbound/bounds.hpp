#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "modalbound/model.hpp"
#include "modalbound/numeric.hpp"
#include "modalbound/rng.hpp"
#include "modalbound/train.hpp"

namespace modalbound {

// ---------------------------------------------------------------------------
// Empirical Rademacher complexity R_S(F) = E_sigma sup_f (1/m) sum sigma_i
// f(Z_i), estimated by averaging the inner sup over Monte Carlo sign draws.

struct RademacherEstimate {
  enum class Kind { linear_exact, mc_ascent };

  double mean = 0.0;
  double std_error = 0.0;
  int n_draws = 0;
  Kind kind = Kind::linear_exact;
  // One sup value per sign draw; kept so estimates sharing a sigma stream
  // can be compared draw by draw.
  std::vector<double> draws;
};

namespace bounddetail {

inline Eigen::VectorXd sigma_draw(int m, StreamKey key, int draw) {
  StreamRng rng(key.with("sigma").with(static_cast<std::uint64_t>(draw)));
  Eigen::VectorXd s(m);
  for (int i = 0; i < m; ++i) s[i] = rng.sign();
  return s;
}

inline RademacherEstimate summarize(std::vector<double> draws,
                                    RademacherEstimate::Kind kind) {
  RademacherEstimate est;
  est.mean = kahan_mean(draws);
  est.std_error =
      sample_sd(draws) / std::sqrt(static_cast<double>(draws.size()));
  est.n_draws = static_cast<int>(draws.size());
  est.kind = kind;
  est.draws = std::move(draws);
  return est;
}

}  // namespace bounddetail

// Exact inner sup for the masked linear class {x -> v . x_masked,
// ||v|| <= cb}: by Cauchy-Schwarz the sup over the ball is
// (cb/m) ||sum_i sigma_i x_i|| on the masked vectors, attained at v
// proportional to the sum (which already lies in the masked subspace).
inline RademacherEstimate rademacher_linear_exact(const Dataset& ds,
                                                  const ModalitySubset& subset,
                                                  double cb, int n_draws,
                                                  std::uint64_t seed) {
  if (!std::isfinite(cb) || cb < 0.0)
    throw ConfigError("head norm bound cb must be finite and nonnegative");
  if (n_draws < 2) throw ConfigError("need at least two sign draws");
  if (ds.size() < 1) throw ConfigError("empty dataset");
  if (ds.schema() != subset.schema())
    throw SchemaMismatchError("subset schema != dataset schema");

  traindetail::ActiveDesign design = traindetail::gather_active(ds, subset);
  const int m = ds.size();
  StreamKey key(seed);
  std::vector<double> draws;
  draws.reserve(static_cast<std::size_t>(n_draws));
  for (int t = 0; t < n_draws; ++t) {
    Eigen::VectorXd sigma = bounddetail::sigma_draw(m, key, t);
    double norm = (design.xt * sigma).norm();
    draws.push_back(cb * norm / static_cast<double>(m));
  }
  return bounddetail::summarize(std::move(draws),
                                RademacherEstimate::Kind::linear_exact);
}

// A sup oracle receives one sigma draw (+-1 entries, one per sample) and
// returns sup_f (1/m) sum sigma_i f(Z_i) for its function class, or a
// lower estimate of it when the sup is approximated.
struct SupOracle {
  std::string name;
  std::function<double(const Eigen::VectorXd&)> sup;
};

// Generic Monte Carlo estimator around a sup oracle. Uses the same sigma
// stream derivation as the exact estimator, so estimates built from the
// same seed see identical sign draws.
inline RademacherEstimate rademacher_mc_oracle(int m, const SupOracle& oracle,
                                               int n_draws,
                                               std::uint64_t seed) {
  if (m < 1) throw ConfigError("need at least one sample");
  if (n_draws < 2) throw ConfigError("need at least two sign draws");
  if (!oracle.sup) throw ConfigError("sup oracle is empty");
  StreamKey key(seed);
  std::vector<double> draws;
  draws.reserve(static_cast<std::size_t>(n_draws));
  for (int t = 0; t < n_draws; ++t) {
    Eigen::VectorXd sigma = bounddetail::sigma_draw(m, key, t);
    double v = oracle.sup(sigma);
    if (!std::isfinite(v))
      throw Error("sup oracle returned a non-finite value on draw " +
                  std::to_string(t));
    draws.push_back(v);
  }
  return bounddetail::summarize(std::move(draws),
                                RademacherEstimate::Kind::mc_ascent);
}

// The class containing only the zero function.
inline SupOracle zero_class_oracle() {
  return {"zero-class", [](const Eigen::VectorXd&) { return 0.0; }};
}

// Projected gradient ascent over the masked linear ball. The objective is
// linear in v, so every restart lands on the exact sup; kept as a
// multi-restart ascent so it doubles as an independent check of the
// closed-form estimator.
inline SupOracle linear_ascent_oracle(const Dataset& ds,
                                      const ModalitySubset& subset, double cb,
                                      int restarts, int iters,
                                      std::uint64_t seed) {
  if (!std::isfinite(cb) || cb < 0.0)
    throw ConfigError("head norm bound cb must be finite and nonnegative");
  if (restarts < 1 || iters < 1)
    throw ConfigError("restarts and iters must be >= 1");
  auto design = std::make_shared<traindetail::ActiveDesign>(
      traindetail::gather_active(ds, subset));
  const int m = ds.size();
  StreamKey key = StreamKey(seed).with("linear-ascent");
  return {"linear-ascent",
          [design, m, cb, restarts, iters, key](const Eigen::VectorXd& sigma) {
            const double inv_m = 1.0 / static_cast<double>(m);
            Eigen::VectorXd grad = inv_m * (design->xt * sigma);
            double best = 0.0;
            for (int r = 0; r < restarts; ++r) {
              StreamRng rng(key.with(static_cast<std::uint64_t>(r)));
              Eigen::VectorXd v(design->xt.rows());
              for (Eigen::Index i = 0; i < v.size(); ++i)
                v[i] = rng.uniform(-1.0, 1.0);
              if (v.norm() > cb && v.norm() > 0) v *= cb / v.norm();
              for (int it = 0; it < iters; ++it) {
                v += cb * grad;
                double n = v.norm();
                if (n > cb && n > 0) v *= cb / n;
                best = std::max(best, grad.dot(v));
              }
            }
            return best;
          }};
}

// Multi-restart projected gradient ascent over MLP parameters confined to
// the box [-param_box, param_box]. Reports the best objective value seen,
// a lower estimate of the true sup.
inline SupOracle mlp_ascent_oracle(const Dataset& ds,
                                   const ModalitySubset& subset,
                                   const MlpSgdSpec& spec, double param_box,
                                   int restarts, int iters, double step,
                                   std::uint64_t seed) {
  if (!(param_box > 0.0) || !std::isfinite(param_box))
    throw ConfigError("param_box must be positive and finite");
  if (restarts < 1 || iters < 1)
    throw ConfigError("restarts and iters must be >= 1");
  if (step <= 0.0) throw ConfigError("step must be positive");

  const ModalitySchema schema = ds.schema();
  const int m = ds.size();
  auto blocks = std::make_shared<
      std::vector<std::vector<const Eigen::VectorXd*>>>();
  static const Eigen::VectorXd kEmpty;
  blocks->resize(static_cast<std::size_t>(m));
  auto samples = std::make_shared<Dataset>(ds);
  for (int i = 0; i < m; ++i) {
    auto& row = (*blocks)[static_cast<std::size_t>(i)];
    row.resize(static_cast<std::size_t>(schema.modality_count()), &kEmpty);
    for (int k = 0; k < schema.modality_count(); ++k) {
      if (!subset.contains(k)) continue;
      const auto& b = samples->sample(i).blocks[static_cast<std::size_t>(k)];
      if (!b)
        throw MissingModalityError("sample lacks modality m" +
                                   std::to_string(k + 1) +
                                   " required by the subset");
      row[static_cast<std::size_t>(k)] = &*b;
    }
  }

  StreamKey key = StreamKey(seed).with("mlp-ascent");
  return {"mlp-ascent",
          [samples, blocks, subset, spec, schema, param_box, restarts, iters,
           step, key, m](const Eigen::VectorXd& sigma) {
            const double inv_m = 1.0 / static_cast<double>(m);
            double best = -std::numeric_limits<double>::infinity();
            for (int r = 0; r < restarts; ++r) {
              MlpComposite model = MlpComposite::initialized(
                  schema, spec.hidden_dim, spec.fusion, spec.relu,
                  key.with(static_cast<std::uint64_t>(r)));
              auto clamp = [&](MlpComposite& mdl) {
                for (auto& wk : mdl.w)
                  wk = wk.cwiseMax(-param_box).cwiseMin(param_box);
                for (auto& bk : mdl.b)
                  bk = bk.cwiseMax(-param_box).cwiseMin(param_box);
                mdl.head_w =
                    mdl.head_w.cwiseMax(-param_box).cwiseMin(param_box);
                mdl.head_b =
                    std::clamp(mdl.head_b, -param_box, param_box);
              };
              clamp(model);
              for (int it = 0; it < iters; ++it) {
                traindetail::MlpGrads grads(model);
                KahanSum obj;
                for (int i = 0; i < m; ++i) {
                  double pred = traindetail::mlp_forward_backward(
                      model, subset, (*blocks)[static_cast<std::size_t>(i)],
                      sigma[i] * inv_m, &grads);
                  obj.add(sigma[i] * inv_m * pred);
                }
                best = std::max(best, obj.value());
                for (std::size_t k = 0; k < model.w.size(); ++k) {
                  model.w[k] += step * grads.w[k];
                  model.b[k] += step * grads.b[k];
                }
                model.head_w += step * grads.head_w;
                model.head_b += step * grads.head_b;
                clamp(model);
              }
              KahanSum obj;
              for (int i = 0; i < m; ++i)
                obj.add(sigma[i] * inv_m *
                        traindetail::mlp_forward_backward(
                            model, subset,
                            (*blocks)[static_cast<std::size_t>(i)], 0.0,
                            nullptr));
              best = std::max(best, obj.value());
            }
            return best;
          }};
}

// ---------------------------------------------------------------------------
// Loss constants and the two generalization bounds.

struct BoundConstants {
  double lipschitz = 0.0;     // L
  double loss_bound = 0.0;    // C
  double head_norm_cap = 0.0; // cb of the hypothesis class
  double delta = 0.05;
  double prediction_bound = 0.0;
  double label_bound = 0.0;
};

// Largest masked-input norm times the head cap: a pointwise bound on
// |prediction| over the dataset for the linear class.
inline double linear_prediction_bound(const Dataset& ds,
                                      const ModalitySubset& subset,
                                      double cb) {
  if (!std::isfinite(cb) || cb < 0.0)
    throw ConfigError("head norm bound cb must be finite and nonnegative");
  double max_norm = 0.0;
  for (const auto& s : ds.samples())
    max_norm = std::max(max_norm, to_masked_vector(s, subset).norm());
  return cb * max_norm;
}

// Squared loss on predictions bounded by B_p and labels bounded by B_y is
// (2(B_p + B_y))-Lipschitz in the prediction and bounded by (B_p + B_y)^2.
inline BoundConstants estimate_constants(const Dataset& ds,
                                         double prediction_bound,
                                         double head_norm_cap,
                                         double delta = 0.05) {
  if (ds.size() < 1) throw ConfigError("empty dataset");
  if (!std::isfinite(prediction_bound) || prediction_bound < 0.0)
    throw ConfigError("prediction bound must be finite and nonnegative");
  if (!(delta > 0.0 && delta < 1.0))
    throw ConfigError("delta must lie in (0, 1)");
  double by = 0.0;
  for (const auto& s : ds.samples()) by = std::max(by, std::abs(s.label));
  BoundConstants c;
  c.prediction_bound = prediction_bound;
  c.label_bound = by;
  c.lipschitz = 2.0 * (prediction_bound + by);
  c.loss_bound =
      (prediction_bound + by) * (prediction_bound + by);
  c.head_norm_cap = head_norm_cap;
  c.delta = delta;
  return c;
}

inline double deviation_sqrt_term(const BoundConstants& c, int m) {
  return 2.0 * c.loss_bound *
         std::sqrt(2.0 * std::log(2.0 / c.delta) / static_cast<double>(m));
}

using BoundComponents = std::vector<std::pair<std::string, double>>;

inline BoundComponents theorem1_components(double gamma_val,
                                           const RademacherEstimate& rad_m,
                                           const BoundConstants& c, int m) {
  if (m < 1) throw ConfigError("sample count must be >= 1");
  return {
      {"gamma", gamma_val},
      {"complexity", 8.0 * c.lipschitz * rad_m.mean},
      {"sqrt_m_deviation",
       4.0 * c.loss_bound / std::sqrt(static_cast<double>(m))},
      {"confidence_deviation", deviation_sqrt_term(c, m)},
  };
}

enum class Theorem2Variant { body, appendix };

inline std::string to_string(Theorem2Variant v) {
  return v == Theorem2Variant::body ? "body" : "appendix";
}

inline Theorem2Variant theorem2_variant_from_string(const std::string& s) {
  if (s == "body") return Theorem2Variant::body;
  if (s == "appendix") return Theorem2Variant::appendix;
  throw ConfigError("unknown theorem 2 variant '" + s + "'");
}

// The two statements differ only in the deviation terms: the compact form
// folds them into 6C sqrt(2 ln(2/delta)/m); the derivation keeps
// 4C/sqrt(m) + 2C sqrt(2 ln(2/delta)/m).
inline BoundComponents theorem2_components(const RademacherEstimate& rad_m,
                                           const RademacherEstimate& rad_full,
                                           const BoundConstants& c, int m,
                                           double centered_gap,
                                           Theorem2Variant variant) {
  if (m < 1) throw ConfigError("sample count must be >= 1");
  BoundComponents parts = {
      {"complexity_subset", 4.0 * c.lipschitz * rad_m.mean},
      {"complexity_full", 4.0 * c.lipschitz * rad_full.mean},
  };
  if (variant == Theorem2Variant::body) {
    parts.emplace_back("confidence_deviation",
                       3.0 * deviation_sqrt_term(c, m));
  } else {
    parts.emplace_back("sqrt_m_deviation",
                       4.0 * c.loss_bound / std::sqrt(static_cast<double>(m)));
    parts.emplace_back("confidence_deviation", deviation_sqrt_term(c, m));
  }
  parts.emplace_back("centered_gap", centered_gap);
  return parts;
}

inline double components_total(const BoundComponents& parts) {
  double total = 0.0;
  for (const auto& [name, v] : parts) total += v;
  return total;
}

inline double theorem1_rhs(double gamma_val, const RademacherEstimate& rad_m,
                           const BoundConstants& c, int m) {
  return components_total(theorem1_components(gamma_val, rad_m, c, m));
}

inline double theorem2_rhs(const RademacherEstimate& rad_m,
                           const RademacherEstimate& rad_full,
                           const BoundConstants& c, int m, double centered_gap,
                           Theorem2Variant variant = Theorem2Variant::body) {
  return components_total(
      theorem2_components(rad_m, rad_full, c, m, centered_gap, variant));
}

struct BoundReport {
  int theorem = 1;
  Theorem2Variant variant = Theorem2Variant::body;
  double lhs = 0.0;
  double rhs = 0.0;
  bool holds = false;
  double margin = 0.0;  // rhs - lhs
  BoundComponents components;
  // Set when any complexity input is an ascent-based lower estimate, in
  // which case the rhs itself may be understated.
  bool understated_rhs = false;
  int m = 0;
  double delta = 0.05;
  std::string config_digest;
};

struct BoundCheckInput {
  int theorem = 1;
  Theorem2Variant variant = Theorem2Variant::body;
  double gamma = 0.0;
  RademacherEstimate rad_m;
  std::optional<RademacherEstimate> rad_full;
  BoundConstants constants;
  int m = 0;
  double centered_gap = 0.0;
  std::string config_digest;
};

// Assembles a bound report from a measured lhs. The lhs must carry the
// same configuration digest as the rhs inputs so reports cannot mix runs.
inline BoundReport bound_check(double lhs, const std::string& lhs_digest,
                               const BoundCheckInput& in) {
  if (in.config_digest.empty() || lhs_digest.empty())
    throw ConfigError("bound_check requires configuration digests");
  if (lhs_digest != in.config_digest)
    throw ConfigError("lhs and rhs were computed on different configurations");

  BoundReport r;
  r.theorem = in.theorem;
  r.variant = in.variant;
  r.lhs = lhs;
  r.m = in.m;
  r.delta = in.constants.delta;
  r.config_digest = in.config_digest;
  if (in.theorem == 1) {
    r.components = theorem1_components(in.gamma, in.rad_m, in.constants, in.m);
    r.understated_rhs =
        in.rad_m.kind == RademacherEstimate::Kind::mc_ascent;
  } else if (in.theorem == 2) {
    if (!in.rad_full)
      throw ConfigError("theorem 2 needs the full-subset complexity");
    r.components = theorem2_components(in.rad_m, *in.rad_full, in.constants,
                                       in.m, in.centered_gap, in.variant);
    r.understated_rhs =
        in.rad_m.kind == RademacherEstimate::Kind::mc_ascent ||
        in.rad_full->kind == RademacherEstimate::Kind::mc_ascent;
  } else {
    throw ConfigError("theorem must be 1 or 2");
  }
  r.rhs = components_total(r.components);
  r.holds = r.lhs <= r.rhs;
  r.margin = r.rhs - r.lhs;
  return r;
}

}  // namespace modalbound
