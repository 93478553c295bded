#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <concepts>
#include <json.hpp>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "modalbound/modality.hpp"
#include "modalbound/numeric.hpp"
#include "modalbound/rng.hpp"

namespace modalbound {

// A latent encoder maps a (possibly masked) sample to a latent vector; a
// predictor additionally applies its head. Both are evaluated under an
// explicit subset so the same model can be queried with any masking.
template <typename E>
concept LatentEncoder =
    requires(const E& e, const MultiModalSample& s, const ModalitySubset& m) {
      { e.encode(s, m) } -> std::convertible_to<Eigen::VectorXd>;
      { e.latent_dim() } -> std::convertible_to<int>;
    };

template <typename M>
concept Predictor =
    requires(const M& p, const MultiModalSample& s, const ModalitySubset& m) {
      { p.predict(s, m) } -> std::convertible_to<double>;
    };

enum class FusionKind { concat, sum, mean, max };

inline std::string to_string(FusionKind k) {
  switch (k) {
    case FusionKind::concat: return "concat";
    case FusionKind::sum: return "sum";
    case FusionKind::mean: return "mean";
    case FusionKind::max: return "max";
  }
  throw ConfigError("unknown fusion kind");
}

inline FusionKind fusion_from_string(const std::string& s) {
  if (s == "concat") return FusionKind::concat;
  if (s == "sum") return FusionKind::sum;
  if (s == "mean") return FusionKind::mean;
  if (s == "max") return FusionKind::max;
  throw ConfigError("unknown fusion kind '" + s + "'");
}

// Combines per-modality latents into one vector. concat accepts mixed
// sizes; the elementwise ops require equal sizes.
inline Eigen::VectorXd fuse(const std::vector<Eigen::VectorXd>& latents,
                            FusionKind kind) {
  if (latents.empty()) throw ConfigError("fuse: no latents");
  if (kind == FusionKind::concat) {
    Eigen::Index total = 0;
    for (const auto& z : latents) total += z.size();
    Eigen::VectorXd out(total);
    Eigen::Index off = 0;
    for (const auto& z : latents) {
      out.segment(off, z.size()) = z;
      off += z.size();
    }
    return out;
  }
  const auto n = latents[0].size();
  for (const auto& z : latents)
    if (z.size() != n)
      throw SchemaMismatchError("elementwise fusion needs equal latent sizes");
  Eigen::VectorXd out = latents[0];
  for (std::size_t i = 1; i < latents.size(); ++i) {
    if (kind == FusionKind::max)
      out = out.cwiseMax(latents[i]);
    else
      out += latents[i];
  }
  if (kind == FusionKind::mean)
    out /= static_cast<double>(latents.size());
  return out;
}

// ---------------------------------------------------------------------------
// Linear composite h(g(x)) = beta^T (A^T x) on the zero-filled masked input.

class LinearComposite {
 public:
  LinearComposite() = default;

  LinearComposite(ModalitySchema schema, Eigen::MatrixXd a,
                  Eigen::VectorXd beta,
                  std::optional<double> head_norm_cap = std::nullopt,
                  bool require_orthonormal = false)
      : schema_(std::move(schema)),
        a_(std::move(a)),
        beta_(std::move(beta)),
        cap_(head_norm_cap) {
    if (a_.rows() != schema_.total_dim())
      throw SchemaMismatchError("encoder row count != schema dimension");
    if (beta_.size() != a_.cols())
      throw SchemaMismatchError("head length != latent dimension");
    if (cap_) {
      if (!std::isfinite(*cap_) || *cap_ < 0)
        throw ConfigError("head norm cap must be finite and nonnegative");
      if (beta_.norm() > *cap_ * (1.0 + 1e-9) + 1e-12)
        throw ConfigError("head norm exceeds its cap");
    }
    if (require_orthonormal && !orthonormal_columns())
      throw ConfigError("encoder columns are not orthonormal");
  }

  // Factors a composite vector v into an orthonormal encoder whose first
  // column spans v and a head carrying the scale, so A beta = v exactly.
  static LinearComposite from_composite_vector(const ModalitySchema& schema,
                                               const Eigen::VectorXd& v,
                                               int latent_dim = 1) {
    if (v.size() != schema.total_dim())
      throw SchemaMismatchError("composite vector length != schema dimension");
    Eigen::MatrixXd a = orthonormal_completion(v, latent_dim);
    Eigen::VectorXd beta = Eigen::VectorXd::Zero(latent_dim);
    beta[0] = v.norm();
    return LinearComposite(schema, std::move(a), std::move(beta));
  }

  Eigen::VectorXd encode(const MultiModalSample& s,
                         const ModalitySubset& subset) const {
    return a_.transpose() * to_masked_vector(s, subset);
  }

  double predict(const MultiModalSample& s,
                 const ModalitySubset& subset) const {
    return beta_.dot(encode(s, subset));
  }

  double predict_vector(const Eigen::VectorXd& masked_x) const {
    return beta_.dot(a_.transpose() * masked_x);
  }

  int latent_dim() const { return static_cast<int>(a_.cols()); }
  const ModalitySchema& schema() const { return schema_; }
  const Eigen::MatrixXd& encoder() const { return a_; }
  const Eigen::VectorXd& head() const { return beta_; }
  std::optional<double> head_norm_cap() const { return cap_; }

  // A beta, the equivalent single weight vector.
  Eigen::VectorXd composite_vector() const { return a_ * beta_; }

  bool orthonormal_columns(double tol = 1e-8) const {
    Eigen::MatrixXd g = a_.transpose() * a_;
    return (g - Eigen::MatrixXd::Identity(a_.cols(), a_.cols()))
               .cwiseAbs()
               .maxCoeff() <= tol;
  }

  std::string digest() const {
    Digest d;
    d.feed("linear-composite");
    for (int dim : schema_.dims()) d.feed(dim);
    d.feed(a_).feed(Eigen::MatrixXd(beta_));
    if (cap_) d.feed(*cap_);
    return d.hex();
  }

 private:
  ModalitySchema schema_;
  Eigen::MatrixXd a_;
  Eigen::VectorXd beta_;
  std::optional<double> cap_;
};

// ---------------------------------------------------------------------------
// MLP composite: one affine encoder per modality into a shared hidden
// width, optional ReLU, a fusion op across modalities, and an affine head.
// Masked blocks enter as zeros, so their encoders contribute only biases.

class MlpComposite {
 public:
  MlpComposite() = default;

  MlpComposite(ModalitySchema schema, int hidden_dim, FusionKind fusion,
               bool relu)
      : schema_(std::move(schema)),
        hidden_(hidden_dim),
        fusion_(fusion),
        relu_(relu) {
    if (hidden_dim < 1) throw ConfigError("hidden_dim must be >= 1");
    const int kcount = schema_.modality_count();
    w.resize(static_cast<std::size_t>(kcount));
    b.resize(static_cast<std::size_t>(kcount));
    for (int k = 0; k < kcount; ++k) {
      w[static_cast<std::size_t>(k)] =
          Eigen::MatrixXd::Zero(hidden_, schema_.dim(k));
      b[static_cast<std::size_t>(k)] = Eigen::VectorXd::Zero(hidden_);
    }
    head_w = Eigen::VectorXd::Zero(latent_dim());
    head_b = 0.0;
  }

  // Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) on every parameter group.
  static MlpComposite initialized(const ModalitySchema& schema, int hidden_dim,
                                  FusionKind fusion, bool relu,
                                  StreamKey key) {
    MlpComposite m(schema, hidden_dim, fusion, relu);
    for (int k = 0; k < schema.modality_count(); ++k) {
      StreamRng rng(key.with("encoder").with(static_cast<std::uint64_t>(k)));
      double s = 1.0 / std::sqrt(static_cast<double>(schema.dim(k)));
      auto& wk = m.w[static_cast<std::size_t>(k)];
      for (Eigen::Index j = 0; j < wk.cols(); ++j)
        for (Eigen::Index i = 0; i < wk.rows(); ++i)
          wk(i, j) = rng.uniform(-s, s);
      auto& bk = m.b[static_cast<std::size_t>(k)];
      for (Eigen::Index i = 0; i < bk.size(); ++i) bk[i] = rng.uniform(-s, s);
    }
    StreamRng rng(key.with("head"));
    double s = 1.0 / std::sqrt(static_cast<double>(m.latent_dim()));
    for (Eigen::Index i = 0; i < m.head_w.size(); ++i)
      m.head_w[i] = rng.uniform(-s, s);
    m.head_b = rng.uniform(-s, s);
    return m;
  }

  int latent_dim() const {
    return fusion_ == FusionKind::concat
               ? hidden_ * schema_.modality_count()
               : hidden_;
  }

  std::vector<Eigen::VectorXd> modality_latents(
      const MultiModalSample& s, const ModalitySubset& subset) const {
    if (static_cast<int>(s.blocks.size()) != schema_.modality_count())
      throw SchemaMismatchError("sample block count != modality count");
    std::vector<Eigen::VectorXd> zs;
    zs.reserve(static_cast<std::size_t>(schema_.modality_count()));
    for (int k = 0; k < schema_.modality_count(); ++k) {
      const auto& block = s.blocks[static_cast<std::size_t>(k)];
      Eigen::VectorXd z;
      if (subset.contains(k)) {
        if (!block)
          throw MissingModalityError("sample lacks modality m" +
                                     std::to_string(k + 1) +
                                     " required by the subset");
        if (block->size() != schema_.dim(k))
          throw SchemaMismatchError("block m" + std::to_string(k + 1) +
                                    " has wrong dimension");
        z = w[static_cast<std::size_t>(k)] * (*block) +
            b[static_cast<std::size_t>(k)];
      } else {
        z = b[static_cast<std::size_t>(k)];
      }
      if (relu_) z = z.cwiseMax(0.0);
      zs.push_back(std::move(z));
    }
    return zs;
  }

  Eigen::VectorXd encode(const MultiModalSample& s,
                         const ModalitySubset& subset) const {
    return fuse(modality_latents(s, subset), fusion_);
  }

  double predict(const MultiModalSample& s,
                 const ModalitySubset& subset) const {
    return head_w.dot(encode(s, subset)) + head_b;
  }

  const ModalitySchema& schema() const { return schema_; }
  int hidden_dim() const { return hidden_; }
  FusionKind fusion() const { return fusion_; }
  bool relu() const { return relu_; }

  std::string digest() const {
    Digest d;
    d.feed("mlp-composite");
    for (int dim : schema_.dims()) d.feed(dim);
    d.feed(hidden_).feed(to_string(fusion_)).feed(relu_ ? 1 : 0);
    for (const auto& wk : w) d.feed(wk);
    for (const auto& bk : b) d.feed(Eigen::MatrixXd(bk));
    d.feed(Eigen::MatrixXd(head_w)).feed(head_b);
    return d.hex();
  }

  // Parameters are public so trainers can update them in place.
  std::vector<Eigen::MatrixXd> w;
  std::vector<Eigen::VectorXd> b;
  Eigen::VectorXd head_w;
  double head_b = 0.0;

 private:
  ModalitySchema schema_;
  int hidden_ = 0;
  FusionKind fusion_ = FusionKind::sum;
  bool relu_ = false;
};

// ---------------------------------------------------------------------------
// JSON serialization (round-trips exactly: doubles pass through untouched).

namespace modeldetail {

inline nlohmann::json matrix_to_json(const Eigen::MatrixXd& m) {
  nlohmann::json cols = nlohmann::json::array();
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    nlohmann::json col = nlohmann::json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) col.push_back(m(i, j));
    cols.push_back(std::move(col));
  }
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(cols)}};
}

inline Eigen::MatrixXd matrix_from_json(const nlohmann::json& j) {
  Eigen::MatrixXd m(j.at("rows").get<Eigen::Index>(),
                    j.at("cols").get<Eigen::Index>());
  const auto& data = j.at("data");
  for (Eigen::Index jj = 0; jj < m.cols(); ++jj)
    for (Eigen::Index ii = 0; ii < m.rows(); ++ii)
      m(ii, jj) = data.at(static_cast<std::size_t>(jj))
                      .at(static_cast<std::size_t>(ii))
                      .get<double>();
  return m;
}

}  // namespace modeldetail

inline nlohmann::json to_json(const LinearComposite& m) {
  nlohmann::json j;
  j["type"] = "linear";
  j["schema"] = m.schema().dims();
  j["encoder"] = modeldetail::matrix_to_json(m.encoder());
  j["head"] = modeldetail::matrix_to_json(m.head());
  if (m.head_norm_cap())
    j["head_norm_cap"] = *m.head_norm_cap();
  else
    j["head_norm_cap"] = nullptr;
  j["digest"] = m.digest();
  return j;
}

inline nlohmann::json to_json(const MlpComposite& m) {
  nlohmann::json j;
  j["type"] = "mlp";
  j["schema"] = m.schema().dims();
  j["hidden_dim"] = m.hidden_dim();
  j["fusion"] = to_string(m.fusion());
  j["relu"] = m.relu();
  nlohmann::json enc = nlohmann::json::array();
  for (std::size_t k = 0; k < m.w.size(); ++k)
    enc.push_back({{"w", modeldetail::matrix_to_json(m.w[k])},
                   {"b", modeldetail::matrix_to_json(m.b[k])}});
  j["encoders"] = std::move(enc);
  j["head_w"] = modeldetail::matrix_to_json(m.head_w);
  j["head_b"] = m.head_b;
  j["digest"] = m.digest();
  return j;
}

inline LinearComposite linear_from_json(const nlohmann::json& j) {
  if (j.at("type").get<std::string>() != "linear")
    throw ConfigError("model json is not a linear composite");
  ModalitySchema schema(j.at("schema").get<std::vector<int>>());
  std::optional<double> cap;
  if (!j.at("head_norm_cap").is_null())
    cap = j.at("head_norm_cap").get<double>();
  Eigen::MatrixXd head = modeldetail::matrix_from_json(j.at("head"));
  return LinearComposite(schema,
                         modeldetail::matrix_from_json(j.at("encoder")),
                         Eigen::VectorXd(head.col(0)), cap);
}

inline MlpComposite mlp_from_json(const nlohmann::json& j) {
  if (j.at("type").get<std::string>() != "mlp")
    throw ConfigError("model json is not an mlp composite");
  ModalitySchema schema(j.at("schema").get<std::vector<int>>());
  MlpComposite m(schema, j.at("hidden_dim").get<int>(),
                 fusion_from_string(j.at("fusion").get<std::string>()),
                 j.at("relu").get<bool>());
  const auto& enc = j.at("encoders");
  for (int k = 0; k < schema.modality_count(); ++k) {
    const auto& e = enc.at(static_cast<std::size_t>(k));
    m.w[static_cast<std::size_t>(k)] =
        modeldetail::matrix_from_json(e.at("w"));
    Eigen::MatrixXd bk = modeldetail::matrix_from_json(e.at("b"));
    m.b[static_cast<std::size_t>(k)] = bk.col(0);
  }
  Eigen::MatrixXd hw = modeldetail::matrix_from_json(j.at("head_w"));
  m.head_w = hw.col(0);
  m.head_b = j.at("head_b").get<double>();
  return m;
}

}  // namespace modalbound
