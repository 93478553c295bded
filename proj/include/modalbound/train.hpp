#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "modalbound/model.hpp"
#include "modalbound/modality.hpp"
#include "modalbound/numeric.hpp"
#include "modalbound/rng.hpp"

namespace modalbound {

enum class Loss { squared };

struct TrainConfig {
  Loss loss = Loss::squared;
  double lr = 0.01;
  double momentum = 0.9;
  int batch = 10000;
  int steps = 10000;
  std::uint64_t seed = 0;
  ModalitySubset subset;
  int checkpoint_interval = 100;

  void validate(int dataset_size) const {
    if (dataset_size < 1) throw ConfigError("training needs >= 1 sample");
    if (subset.is_empty())
      throw ConfigError("training subset must contain a modality");
    if (lr <= 0.0) throw ConfigError("lr must be positive");
    if (momentum < 0.0 || momentum >= 1.0)
      throw ConfigError("momentum must lie in [0, 1)");
    if (batch < 1) throw ConfigError("batch must be >= 1");
    if (steps < 0) throw ConfigError("steps must be >= 0");
    if (checkpoint_interval < 1)
      throw ConfigError("checkpoint_interval must be >= 1");
  }
};

struct LinearClosedFormSpec {
  int latent_dim = 1;
};

struct LinearSgdSpec {
  int latent_dim = 1;
};

struct MlpSgdSpec {
  int hidden_dim = 10;
  FusionKind fusion = FusionKind::sum;
  bool relu = false;
};

using ModelSpec = std::variant<LinearClosedFormSpec, LinearSgdSpec, MlpSgdSpec>;
using TrainedModel = std::variant<LinearComposite, MlpComposite>;

struct ERMResult {
  TrainedModel model;
  double final_risk = std::numeric_limits<double>::quiet_NaN();
  // (step, full-sample empirical risk), recorded every checkpoint interval.
  std::vector<std::pair<int, double>> trajectory;
  bool diverged = false;
  // r_hat(trained) - r_hat(true model) on the training set, when the
  // oracle's training risk is supplied.
  std::optional<double> centered_gap;
  double head_norm = 0.0;
};

template <Predictor M>
double empirical_risk(const M& model, const Dataset& ds,
                      const ModalitySubset& subset) {
  if (ds.size() < 1) throw ConfigError("empirical risk of empty dataset");
  KahanSum s;
  for (const auto& sample : ds.samples()) {
    double e = model.predict(sample, subset) - sample.label;
    s.add(e * e);
  }
  return s.value() / static_cast<double>(ds.size());
}

inline double empirical_risk(const TrainedModel& model, const Dataset& ds,
                             const ModalitySubset& subset) {
  return std::visit(
      [&](const auto& m) { return empirical_risk(m, ds, subset); }, model);
}

namespace traindetail {

inline std::vector<int> active_coords(const ModalitySubset& subset) {
  std::vector<int> act;
  const ModalitySchema& schema = subset.schema();
  for (int k : subset.indices())
    for (int j = 0; j < schema.dim(k); ++j)
      act.push_back(schema.offset(k) + j);
  return act;
}

// Active-coordinate design matrix stored transposed (coord x sample) so a
// sample is one contiguous column.
struct ActiveDesign {
  Eigen::MatrixXd xt;
  Eigen::VectorXd y;
  std::vector<int> coords;
};

inline ActiveDesign gather_active(const Dataset& ds,
                                  const ModalitySubset& subset) {
  const ModalitySchema& schema = subset.schema();
  ActiveDesign d;
  d.coords = active_coords(subset);
  const int da = static_cast<int>(d.coords.size());
  d.xt.resize(da, ds.size());
  d.y.resize(ds.size());
  for (int i = 0; i < ds.size(); ++i) {
    const MultiModalSample& s = ds.sample(i);
    validate_sample(schema, s);
    int row = 0;
    for (int k : subset.indices()) {
      const auto& b = s.blocks[static_cast<std::size_t>(k)];
      if (!b)
        throw MissingModalityError("sample lacks modality m" +
                                   std::to_string(k + 1) +
                                   " required by the training subset");
      d.xt.col(i).segment(row, schema.dim(k)) = *b;
      row += schema.dim(k);
    }
    d.y[i] = s.label;
  }
  return d;
}

// Scatters an active-coordinate weight vector back to schema dimension.
inline Eigen::VectorXd scatter(const Eigen::VectorXd& w_act,
                               const std::vector<int>& coords, int total_dim) {
  Eigen::VectorXd v = Eigen::VectorXd::Zero(total_dim);
  for (std::size_t i = 0; i < coords.size(); ++i)
    v[coords[i]] = w_act[static_cast<Eigen::Index>(i)];
  return v;
}

// Minibatch index source: a fresh permutation per epoch when the batch
// fits the dataset, independent draws with replacement otherwise.
class BatchSource {
 public:
  BatchSource(int n, int batch, StreamKey key)
      : n_(n), batch_(batch), key_(key), with_replacement_(batch > n) {}

  std::vector<int> next(int step) {
    std::vector<int> idx(static_cast<std::size_t>(batch_));
    if (with_replacement_) {
      StreamRng rng(key_.with("batch").with(static_cast<std::uint64_t>(step)));
      for (int i = 0; i < batch_; ++i)
        idx[static_cast<std::size_t>(i)] =
            static_cast<int>(rng.below(static_cast<std::uint64_t>(n_)));
      return idx;
    }
    for (int i = 0; i < batch_; ++i) {
      if (cursor_ == 0 || cursor_ >= n_) {
        StreamRng rng(
            key_.with("shuffle").with(static_cast<std::uint64_t>(epoch_++)));
        perm_ = permutation(n_, rng);
        cursor_ = 0;
      }
      idx[static_cast<std::size_t>(i)] = perm_[static_cast<std::size_t>(
          cursor_++)];
    }
    return idx;
  }

 private:
  int n_;
  int batch_;
  StreamKey key_;
  bool with_replacement_;
  std::vector<int> perm_;
  int cursor_ = 0;
  std::uint64_t epoch_ = 0;
};

}  // namespace traindetail

// Exact ERM for the linear composite class: ordinary least squares on the
// active coordinates of the masked input, via the PSD pseudo-inverse of
// the Gram matrix (minimum-norm solution when rank deficient).
inline LinearComposite erm_linear_closed_form(const Dataset& ds,
                                              const ModalitySubset& subset,
                                              int latent_dim = 1) {
  if (ds.size() < 1) throw ConfigError("training needs >= 1 sample");
  if (subset.is_empty())
    throw ConfigError("training subset must contain a modality");
  if (ds.schema() != subset.schema())
    throw SchemaMismatchError("subset schema != dataset schema");

  const ModalitySchema& schema = ds.schema();
  const std::vector<int> coords = traindetail::active_coords(subset);
  const int da = static_cast<int>(coords.size());
  Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(da, da);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(da);

  const int chunk = 8192;
  Eigen::MatrixXd x(chunk, da);
  Eigen::VectorXd y(chunk);
  for (int begin = 0; begin < ds.size(); begin += chunk) {
    const int end = std::min(ds.size(), begin + chunk);
    const int rows = end - begin;
    for (int i = begin; i < end; ++i) {
      const MultiModalSample& s = ds.sample(i);
      int col = 0;
      for (int k : subset.indices()) {
        const auto& b = s.blocks[static_cast<std::size_t>(k)];
        if (!b)
          throw MissingModalityError("sample lacks modality m" +
                                     std::to_string(k + 1) +
                                     " required by the training subset");
        x.row(i - begin).segment(col, schema.dim(k)) = b->transpose();
        col += schema.dim(k);
      }
      y[i - begin] = s.label;
    }
    gram.selfadjointView<Eigen::Lower>().rankUpdate(
        x.topRows(rows).transpose());
    rhs.noalias() += x.topRows(rows).transpose() * y.head(rows);
  }
  gram = gram.selfadjointView<Eigen::Lower>();

  Eigen::VectorXd w_act = solve_normal_equations(gram, rhs);
  Eigen::VectorXd v =
      traindetail::scatter(w_act, coords, schema.total_dim());
  return LinearComposite::from_composite_vector(schema, v, latent_dim);
}

namespace traindetail {

inline ERMResult run_linear_sgd(const Dataset& ds, const LinearSgdSpec& spec,
                                const TrainConfig& cfg,
                                const std::optional<double>& oracle_risk) {
  ActiveDesign design = gather_active(ds, cfg.subset);
  const int m = ds.size();
  const int da = static_cast<int>(design.coords.size());
  const double inv_m = 1.0 / static_cast<double>(m);

  StreamKey key = StreamKey(cfg.seed);
  StreamRng init_rng(key.with("init"));
  const double scale =
      1.0 / std::sqrt(static_cast<double>(ds.schema().total_dim()));
  Eigen::VectorXd v(da);
  for (int i = 0; i < da; ++i) v[i] = init_rng.uniform(-scale, scale);
  Eigen::VectorXd mom = Eigen::VectorXd::Zero(da);

  auto full_risk = [&](const Eigen::VectorXd& w) {
    return (design.xt.transpose() * w - design.y).squaredNorm() * inv_m;
  };

  ERMResult out;
  out.trajectory.emplace_back(0, full_risk(v));
  Eigen::VectorXd last_good = v;

  BatchSource batches(m, cfg.batch, key);
  const double batch_scale = 2.0 / static_cast<double>(cfg.batch);
  Eigen::VectorXd grad(da);
  for (int step = 1; step <= cfg.steps; ++step) {
    grad.setZero();
    for (int idx : batches.next(step)) {
      double e = design.xt.col(idx).dot(v) - design.y[idx];
      grad.noalias() += e * design.xt.col(idx);
    }
    grad *= batch_scale;
    mom = cfg.momentum * mom + grad;
    v -= cfg.lr * mom;

    if (step % cfg.checkpoint_interval == 0 || step == cfg.steps) {
      double r = v.allFinite() ? full_risk(v)
                               : std::numeric_limits<double>::quiet_NaN();
      if (!std::isfinite(r)) {
        out.diverged = true;
        break;
      }
      out.trajectory.emplace_back(step, r);
      last_good = v;
    }
  }

  Eigen::VectorXd v_full = scatter(out.diverged ? last_good : v,
                                   design.coords,
                                   ds.schema().total_dim());
  LinearComposite model = LinearComposite::from_composite_vector(
      ds.schema(), v_full, spec.latent_dim);
  out.final_risk = out.trajectory.back().second;
  out.head_norm = model.head().norm();
  if (oracle_risk) out.centered_gap = out.final_risk - *oracle_risk;
  out.model = std::move(model);
  return out;
}

struct MlpGrads {
  std::vector<Eigen::MatrixXd> w;
  std::vector<Eigen::VectorXd> b;
  Eigen::VectorXd head_w;
  double head_b = 0.0;

  explicit MlpGrads(const MlpComposite& m) {
    w.reserve(m.w.size());
    b.reserve(m.b.size());
    for (const auto& wk : m.w) w.push_back(Eigen::MatrixXd::Zero(wk.rows(), wk.cols()));
    for (const auto& bk : m.b) b.push_back(Eigen::VectorXd::Zero(bk.size()));
    head_w = Eigen::VectorXd::Zero(m.head_w.size());
  }

  void zero() {
    for (auto& wk : w) wk.setZero();
    for (auto& bk : b) bk.setZero();
    head_w.setZero();
    head_b = 0.0;
  }
};

// Forward pass plus gradient accumulation for one sample; `weight` is the
// derivative of the objective w.r.t. the prediction. Returns the
// prediction. With weight = 0 this is a pure forward pass.
inline double mlp_forward_backward(const MlpComposite& model,
                                   const ModalitySubset& subset,
                                   const std::vector<const Eigen::VectorXd*>& blocks,
                                   double weight, MlpGrads* grads) {
  const int kcount = model.schema().modality_count();
  const int h = model.hidden_dim();
  std::vector<Eigen::VectorXd> pre(static_cast<std::size_t>(kcount));
  std::vector<Eigen::VectorXd> post(static_cast<std::size_t>(kcount));
  for (int k = 0; k < kcount; ++k) {
    const auto ks = static_cast<std::size_t>(k);
    if (subset.contains(k))
      pre[ks] = model.w[ks] * (*blocks[ks]) + model.b[ks];
    else
      pre[ks] = model.b[ks];
    post[ks] = model.relu() ? pre[ks].cwiseMax(0.0).eval() : pre[ks];
  }

  Eigen::VectorXd fused;
  std::vector<int> winner;
  switch (model.fusion()) {
    case FusionKind::concat: {
      fused.resize(static_cast<Eigen::Index>(kcount) * h);
      for (int k = 0; k < kcount; ++k)
        fused.segment(static_cast<Eigen::Index>(k) * h, h) =
            post[static_cast<std::size_t>(k)];
      break;
    }
    case FusionKind::sum:
    case FusionKind::mean: {
      fused = post[0];
      for (int k = 1; k < kcount; ++k)
        fused += post[static_cast<std::size_t>(k)];
      if (model.fusion() == FusionKind::mean)
        fused /= static_cast<double>(kcount);
      break;
    }
    case FusionKind::max: {
      fused = post[0];
      winner.assign(static_cast<std::size_t>(h), 0);
      for (int k = 1; k < kcount; ++k)
        for (int i = 0; i < h; ++i)
          if (post[static_cast<std::size_t>(k)][i] > fused[i]) {
            fused[i] = post[static_cast<std::size_t>(k)][i];
            winner[static_cast<std::size_t>(i)] = k;
          }
      break;
    }
  }

  double pred = model.head_w.dot(fused) + model.head_b;
  if (grads == nullptr || weight == 0.0) return pred;

  grads->head_w.noalias() += weight * fused;
  grads->head_b += weight;
  Eigen::VectorXd dfused = weight * model.head_w;
  for (int k = 0; k < kcount; ++k) {
    const auto ks = static_cast<std::size_t>(k);
    Eigen::VectorXd dpost;
    switch (model.fusion()) {
      case FusionKind::concat:
        dpost = dfused.segment(static_cast<Eigen::Index>(k) * h, h);
        break;
      case FusionKind::sum:
        dpost = dfused;
        break;
      case FusionKind::mean:
        dpost = dfused / static_cast<double>(kcount);
        break;
      case FusionKind::max: {
        dpost = Eigen::VectorXd::Zero(h);
        for (int i = 0; i < h; ++i)
          if (winner[static_cast<std::size_t>(i)] == k) dpost[i] = dfused[i];
        break;
      }
    }
    Eigen::VectorXd dpre =
        model.relu()
            ? Eigen::VectorXd((pre[ks].array() > 0.0).cast<double>() *
                              dpost.array())
            : dpost;
    grads->b[ks] += dpre;
    if (subset.contains(k))
      grads->w[ks].noalias() += dpre * blocks[ks]->transpose();
  }
  return pred;
}

inline ERMResult run_mlp_sgd(const Dataset& ds, const MlpSgdSpec& spec,
                             const TrainConfig& cfg,
                             const std::optional<double>& oracle_risk) {
  const ModalitySchema& schema = ds.schema();
  const int m = ds.size();
  const int kcount = schema.modality_count();

  // Block pointers per sample; masked blocks are never dereferenced.
  static const Eigen::VectorXd kEmpty;
  std::vector<std::vector<const Eigen::VectorXd*>> blocks(
      static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) {
    const MultiModalSample& s = ds.sample(i);
    validate_sample(schema, s);
    auto& row = blocks[static_cast<std::size_t>(i)];
    row.resize(static_cast<std::size_t>(kcount), &kEmpty);
    for (int k = 0; k < kcount; ++k) {
      if (!cfg.subset.contains(k)) continue;
      const auto& b = s.blocks[static_cast<std::size_t>(k)];
      if (!b)
        throw MissingModalityError("sample lacks modality m" +
                                   std::to_string(k + 1) +
                                   " required by the training subset");
      row[static_cast<std::size_t>(k)] = &*b;
    }
  }

  StreamKey key = StreamKey(cfg.seed);
  MlpComposite model = MlpComposite::initialized(
      schema, spec.hidden_dim, spec.fusion, spec.relu, key.with("init"));
  MlpGrads grads(model), mom(model);

  auto full_risk = [&](const MlpComposite& mod) {
    KahanSum s;
    for (int i = 0; i < m; ++i) {
      double e = mlp_forward_backward(mod, cfg.subset,
                                      blocks[static_cast<std::size_t>(i)], 0.0,
                                      nullptr) -
                 ds.sample(i).label;
      s.add(e * e);
    }
    return s.value() / static_cast<double>(m);
  };

  auto finite = [&](const MlpComposite& mod) {
    for (const auto& wk : mod.w)
      if (!wk.allFinite()) return false;
    for (const auto& bk : mod.b)
      if (!bk.allFinite()) return false;
    return mod.head_w.allFinite() && std::isfinite(mod.head_b);
  };

  ERMResult out;
  out.trajectory.emplace_back(0, full_risk(model));
  MlpComposite last_good = model;

  BatchSource batches(m, cfg.batch, key);
  const double batch_scale = 2.0 / static_cast<double>(cfg.batch);
  for (int step = 1; step <= cfg.steps; ++step) {
    grads.zero();
    for (int idx : batches.next(step)) {
      const auto& row = blocks[static_cast<std::size_t>(idx)];
      double pred =
          mlp_forward_backward(model, cfg.subset, row, 0.0, nullptr);
      double w = batch_scale * (pred - ds.sample(idx).label);
      mlp_forward_backward(model, cfg.subset, row, w, &grads);
    }
    for (int k = 0; k < kcount; ++k) {
      const auto ks = static_cast<std::size_t>(k);
      mom.w[ks] = cfg.momentum * mom.w[ks] + grads.w[ks];
      mom.b[ks] = cfg.momentum * mom.b[ks] + grads.b[ks];
      model.w[ks] -= cfg.lr * mom.w[ks];
      model.b[ks] -= cfg.lr * mom.b[ks];
    }
    mom.head_w = cfg.momentum * mom.head_w + grads.head_w;
    mom.head_b = cfg.momentum * mom.head_b + grads.head_b;
    model.head_w -= cfg.lr * mom.head_w;
    model.head_b -= cfg.lr * mom.head_b;

    if (step % cfg.checkpoint_interval == 0 || step == cfg.steps) {
      double r = finite(model) ? full_risk(model)
                               : std::numeric_limits<double>::quiet_NaN();
      if (!std::isfinite(r)) {
        out.diverged = true;
        model = last_good;
        break;
      }
      out.trajectory.emplace_back(step, r);
      last_good = model;
    }
  }

  out.final_risk = out.trajectory.back().second;
  out.head_norm = model.head_w.norm();
  if (oracle_risk) out.centered_gap = out.final_risk - *oracle_risk;
  out.model = std::move(model);
  return out;
}

}  // namespace traindetail

// Empirical risk minimization over the requested subset. The closed-form
// spec solves exactly; the SGD specs run minibatch SGD with momentum and
// record the full-sample risk at every checkpoint. A non-finite checkpoint
// marks the run diverged and rolls back to the last finite one.
inline ERMResult erm_train(
    const Dataset& ds, const ModelSpec& spec, const TrainConfig& cfg,
    std::optional<double> oracle_train_risk = std::nullopt) {
  cfg.validate(ds.size());
  if (ds.schema() != cfg.subset.schema())
    throw SchemaMismatchError("subset schema != dataset schema");

  if (std::holds_alternative<LinearClosedFormSpec>(spec)) {
    const auto& s = std::get<LinearClosedFormSpec>(spec);
    LinearComposite model = erm_linear_closed_form(ds, cfg.subset,
                                                   s.latent_dim);
    ERMResult out;
    out.final_risk = empirical_risk(model, ds, cfg.subset);
    out.trajectory.emplace_back(0, out.final_risk);
    out.head_norm = model.head().norm();
    if (oracle_train_risk)
      out.centered_gap = out.final_risk - *oracle_train_risk;
    out.model = std::move(model);
    return out;
  }
  if (std::holds_alternative<LinearSgdSpec>(spec))
    return traindetail::run_linear_sgd(ds, std::get<LinearSgdSpec>(spec), cfg,
                                       oracle_train_risk);
  return traindetail::run_mlp_sgd(ds, std::get<MlpSgdSpec>(spec), cfg,
                                  oracle_train_risk);
}

namespace traindetail {

struct HeadFit {
  Eigen::VectorXd w;
  double bias = 0.0;
  double risk = 0.0;
};

// Closed-form least squares for a linear head over frozen latent features.
template <typename EncodeFn>
HeadFit fit_linear_head(const Dataset& ds, EncodeFn&& encode, int latent_dim,
                        bool with_bias) {
  if (ds.size() < 1) throw ConfigError("head fit needs >= 1 sample");
  const int cols = latent_dim + (with_bias ? 1 : 0);
  Eigen::MatrixXd z(ds.size(), cols);
  Eigen::VectorXd y(ds.size());
  for (int i = 0; i < ds.size(); ++i) {
    Eigen::VectorXd zi = encode(ds.sample(i));
    if (zi.size() != latent_dim)
      throw SchemaMismatchError("encoder latent size changed across samples");
    z.row(i).head(latent_dim) = zi.transpose();
    if (with_bias) z(i, latent_dim) = 1.0;
    y[i] = ds.sample(i).label;
  }
  Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(cols, cols);
  gram.selfadjointView<Eigen::Lower>().rankUpdate(z.transpose());
  gram = gram.selfadjointView<Eigen::Lower>();
  Eigen::VectorXd sol = solve_normal_equations(gram, z.transpose() * y);
  HeadFit fit;
  fit.w = sol.head(latent_dim);
  fit.bias = with_bias ? sol[latent_dim] : 0.0;
  fit.risk = (z * sol - y).squaredNorm() / static_cast<double>(ds.size());
  return fit;
}

}  // namespace traindetail

// Refits only the head on top of a frozen encoder (exact least squares;
// the linear class has no intercept, the MLP head keeps its bias).
inline ERMResult finetune_head(const Dataset& ds, const LinearComposite& frozen,
                               const ModalitySubset& subset) {
  if (subset.is_empty())
    throw ConfigError("training subset must contain a modality");
  auto fit = traindetail::fit_linear_head(
      ds, [&](const MultiModalSample& s) { return frozen.encode(s, subset); },
      frozen.latent_dim(), /*with_bias=*/false);
  ERMResult out;
  out.final_risk = fit.risk;
  out.trajectory.emplace_back(0, fit.risk);
  out.head_norm = fit.w.norm();
  out.model = LinearComposite(frozen.schema(), frozen.encoder(), fit.w);
  return out;
}

inline ERMResult finetune_head(const Dataset& ds, const MlpComposite& frozen,
                               const ModalitySubset& subset) {
  if (subset.is_empty())
    throw ConfigError("training subset must contain a modality");
  auto fit = traindetail::fit_linear_head(
      ds, [&](const MultiModalSample& s) { return frozen.encode(s, subset); },
      frozen.latent_dim(), /*with_bias=*/true);
  MlpComposite model = frozen;
  model.head_w = fit.w;
  model.head_b = fit.bias;
  ERMResult out;
  out.final_risk = fit.risk;
  out.trajectory.emplace_back(0, fit.risk);
  out.head_norm = fit.w.norm();
  out.model = std::move(model);
  return out;
}

inline ERMResult finetune_head(const Dataset& ds, const TrainedModel& frozen,
                               const ModalitySubset& subset) {
  return std::visit(
      [&](const auto& m) { return finetune_head(ds, m, subset); }, frozen);
}

// Stage 1 trains one uni-modal composite per modality in the subset;
// stage 2 freezes those encoders, fuses them, and refits only the head.
// On a singleton subset this collapses to plain ERM (exactly so for the
// closed-form linear route).
inline ERMResult two_stage_train(const Dataset& ds, const ModelSpec& spec,
                                 const TrainConfig& cfg) {
  cfg.validate(ds.size());
  if (ds.schema() != cfg.subset.schema())
    throw SchemaMismatchError("subset schema != dataset schema");
  const ModalitySchema& schema = ds.schema();
  StreamKey key = StreamKey(cfg.seed).with("two-stage");

  std::vector<ERMResult> stage1;
  for (int k : cfg.subset.indices()) {
    TrainConfig c1 = cfg;
    c1.subset = ModalitySubset::of(schema, {k});
    c1.seed = key.with(static_cast<std::uint64_t>(k)).value();
    stage1.push_back(erm_train(ds, spec, c1));
  }

  if (std::holds_alternative<MlpSgdSpec>(spec)) {
    const auto& ms = std::get<MlpSgdSpec>(spec);
    MlpComposite combined(schema, ms.hidden_dim, ms.fusion, ms.relu);
    const auto idx = cfg.subset.indices();
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const auto ks = static_cast<std::size_t>(idx[i]);
      const auto& uni = std::get<MlpComposite>(stage1[i].model);
      combined.w[ks] = uni.w[ks];
      combined.b[ks] = uni.b[ks];
    }
    ERMResult out = finetune_head(ds, combined, cfg.subset);
    for (const auto& r : stage1) out.diverged = out.diverged || r.diverged;
    return out;
  }

  // Linear routes: each stage-1 composite vector lives on its own block,
  // so the normalized columns form an orthonormal fused encoder.
  const auto idx = cfg.subset.indices();
  Eigen::MatrixXd a =
      Eigen::MatrixXd::Zero(schema.total_dim(), static_cast<int>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) {
    Eigen::VectorXd vk =
        std::get<LinearComposite>(stage1[i].model).composite_vector();
    double norm = vk.norm();
    if (norm > 1e-300)
      a.col(static_cast<Eigen::Index>(i)) = vk / norm;
    else
      a(schema.offset(idx[i]), static_cast<Eigen::Index>(i)) = 1.0;
  }
  LinearComposite frozen(schema, a,
                         Eigen::VectorXd::Zero(static_cast<int>(idx.size())));
  ERMResult out = finetune_head(ds, frozen, cfg.subset);
  for (const auto& r : stage1) out.diverged = out.diverged || r.diverged;
  return out;
}

}  // namespace modalbound
