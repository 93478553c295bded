#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "modalbound/modalbound.hpp"

using namespace modalbound;
using Catch::Approx;

namespace {

Eigen::VectorXd vec(std::initializer_list<double> xs) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v[i++] = x;
  return v;
}

Dataset overlap_ds(int p, double w, int n, std::uint64_t seed) {
  OverlapConfig cfg;
  cfg.modality_dim = p;
  cfg.w = w;
  cfg.n_samples = n;
  cfg.seed = seed;
  return generate_overlap(cfg);
}

}  // namespace

TEST_CASE("sign draws are reproducible plus-minus ones") {
  Eigen::VectorXd s0 = bounddetail::sigma_draw(100, StreamKey(4), 0);
  for (int i = 0; i < 100; ++i) CHECK(std::abs(s0[i]) == 1.0);
  CHECK(s0 == bounddetail::sigma_draw(100, StreamKey(4), 0));
  CHECK(s0 != bounddetail::sigma_draw(100, StreamKey(4), 1));
}

TEST_CASE("two identical samples give the textbook complexity") {
  ModalitySchema s({2});
  DatasetMeta meta;
  Dataset ds(s, meta);
  MultiModalSample a;
  a.blocks.emplace_back(vec({3, 4}));
  a.label = 1.0;
  ds.add(a);
  ds.add(a);
  const double cb = 2.0;

  ModalitySubset full = ModalitySubset::full(s);
  RademacherEstimate est = rademacher_linear_exact(ds, full, cb, 64, 17);
  for (double d : est.draws) {
    bool zero = std::abs(d) < 1e-12;
    bool ten = std::abs(d - 10.0) < 1e-12;
    CHECK((zero || ten));
  }

  SupOracle oracle = linear_ascent_oracle(ds, full, cb, 4, 80, 21);
  double enumerated = 0.0;
  for (double s1 : {-1.0, 1.0})
    for (double s2 : {-1.0, 1.0}) enumerated += oracle.sup(vec({s1, s2}));
  enumerated /= 4.0;
  CHECK(enumerated == Approx(0.5 * cb * 5.0).margin(1e-9));
}

TEST_CASE("ascent reproduces the closed form draw by draw") {
  Dataset ds = overlap_ds(2, 0.4, 40, 303);
  ModalitySubset sub = overlap_prefix_subset(ds.schema(), 3);
  const double cb = 1.3;
  const std::uint64_t seed = 12;
  RademacherEstimate exact = rademacher_linear_exact(ds, sub, cb, 16, seed);
  RademacherEstimate ascent = rademacher_mc_oracle(
      ds.size(), linear_ascent_oracle(ds, sub, cb, 3, 100, 77), 16, seed);
  REQUIRE(exact.draws.size() == ascent.draws.size());
  for (std::size_t t = 0; t < exact.draws.size(); ++t)
    CHECK(ascent.draws[t] == Approx(exact.draws[t]).margin(1e-9));
  CHECK(exact.kind == RademacherEstimate::Kind::linear_exact);
  CHECK(ascent.kind == RademacherEstimate::Kind::mc_ascent);
}

TEST_CASE("complexity is nonnegative and grows with the subset per draw") {
  for (int trial = 0; trial < 10; ++trial) {
    double w = 0.1 * trial;
    Dataset ds = overlap_ds(2, w, 30, 1000 + trial);
    std::vector<RademacherEstimate> ests;
    for (int k = 1; k <= 3; ++k)
      ests.push_back(rademacher_linear_exact(
          ds, overlap_prefix_subset(ds.schema(), k), 1.0, 24, 5));
    for (int t = 0; t < 24; ++t) {
      CHECK(ests[0].draws[t] >= 0.0);
      CHECK(ests[0].draws[t] <= ests[1].draws[t] + 1e-12);
      CHECK(ests[1].draws[t] <= ests[2].draws[t] + 1e-12);
    }
  }
}

TEST_CASE("complexity halves when the sample count quadruples") {
  double ratio_sum = 0.0;
  const int resamples = 20;
  for (int r = 0; r < resamples; ++r) {
    Dataset small = overlap_ds(2, 0.5, 200, 9000 + r);
    Dataset large = overlap_ds(2, 0.5, 800, 9500 + r);
    ModalitySubset fs = ModalitySubset::full(small.schema());
    ModalitySubset fl = ModalitySubset::full(large.schema());
    double rs = rademacher_linear_exact(small, fs, 1.0, 64, 40 + r).mean;
    double rl = rademacher_linear_exact(large, fl, 1.0, 64, 80 + r).mean;
    ratio_sum += rl / rs;
  }
  double avg = ratio_sum / resamples;
  CHECK(avg >= 0.4);
  CHECK(avg <= 0.6);
}

TEST_CASE("degenerate classes have zero complexity") {
  Dataset ds = overlap_ds(1, 0.2, 25, 7);
  ModalitySubset full = ModalitySubset::full(ds.schema());
  RademacherEstimate zero_cb = rademacher_linear_exact(ds, full, 0.0, 16, 3);
  CHECK(zero_cb.mean == 0.0);
  CHECK(zero_cb.std_error == 0.0);

  RademacherEstimate zero_class =
      rademacher_mc_oracle(25, zero_class_oracle(), 16, 3);
  CHECK(zero_class.mean == 0.0);
  CHECK(zero_class.std_error == 0.0);
}

TEST_CASE("complexity estimators validate their inputs") {
  Dataset ds = overlap_ds(1, 0.2, 10, 8);
  ModalitySubset full = ModalitySubset::full(ds.schema());
  CHECK_THROWS_AS(rademacher_linear_exact(ds, full, -1.0, 8, 1), ConfigError);
  CHECK_THROWS_AS(rademacher_linear_exact(ds, full, 1.0, 1, 1), ConfigError);
  Dataset empty(ds.schema(), ds.meta());
  CHECK_THROWS_AS(rademacher_linear_exact(empty, full, 1.0, 8, 1),
                  ConfigError);
  ModalitySubset other = ModalitySubset::full(ModalitySchema({1, 1}));
  CHECK_THROWS_AS(rademacher_linear_exact(ds, other, 1.0, 8, 1),
                  SchemaMismatchError);
  CHECK_THROWS_AS(rademacher_mc_oracle(0, zero_class_oracle(), 8, 1),
                  ConfigError);
  CHECK_THROWS_AS(rademacher_mc_oracle(10, SupOracle{}, 8, 1), ConfigError);
}

TEST_CASE("the mlp ascent stays inside its parameter box") {
  Dataset ds = overlap_ds(1, 0.3, 20, 909);
  ModalitySubset full = ModalitySubset::full(ds.schema());
  MlpSgdSpec spec{4, FusionKind::sum, true};
  CHECK_THROWS_AS(mlp_ascent_oracle(ds, full, spec, 0.0, 2, 30, 0.1, 5),
                  ConfigError);

  RademacherEstimate est = rademacher_mc_oracle(
      ds.size(), mlp_ascent_oracle(ds, full, spec, 1.0, 3, 60, 0.1, 5), 8, 6);
  CHECK(est.kind == RademacherEstimate::Kind::mc_ascent);
  CHECK(std::isfinite(est.mean));
  CHECK(est.std_error >= 0.0);
  for (double d : est.draws) CHECK(std::isfinite(d));
}

TEST_CASE("loss constants follow from prediction and label bounds") {
  ModalitySchema s({1, 1});
  DatasetMeta meta;
  Dataset ds(s, meta);
  MultiModalSample a;
  a.blocks = {vec({3}), vec({4})};
  a.label = 1.0;
  MultiModalSample b;
  b.blocks = {vec({1}), vec({0})};
  b.label = -1.0;
  ds.add(a);
  ds.add(b);

  CHECK(linear_prediction_bound(ds, ModalitySubset::full(s), 2.0) ==
        Approx(10.0));
  CHECK(linear_prediction_bound(ds, ModalitySubset::of(s, {0}), 2.0) ==
        Approx(6.0));
  CHECK_THROWS_AS(linear_prediction_bound(ds, ModalitySubset::full(s), -1.0),
                  ConfigError);

  BoundConstants c = estimate_constants(ds, 1.0, 2.0);
  CHECK(c.label_bound == 1.0);
  CHECK(c.lipschitz == 4.0);
  CHECK(c.loss_bound == 4.0);
  CHECK(c.head_norm_cap == 2.0);
  BoundConstants c0 = estimate_constants(ds, 0.0, 2.0);
  CHECK(c0.lipschitz == 2.0);
  CHECK(c0.loss_bound == 1.0);
  CHECK_THROWS_AS(estimate_constants(ds, -1.0, 2.0), ConfigError);
  CHECK_THROWS_AS(estimate_constants(ds, 1.0, 2.0, 0.0), ConfigError);
  CHECK_THROWS_AS(estimate_constants(ds, 1.0, 2.0, 1.0), ConfigError);
}

TEST_CASE("bound arithmetic matches hand-computed totals") {
  BoundConstants c;
  c.lipschitz = 1.0;
  c.loss_bound = 1.0;
  c.delta = 0.05;
  RademacherEstimate rad_m;
  rad_m.mean = 0.1;
  RademacherEstimate rad_full;
  rad_full.mean = 0.12;

  CHECK(deviation_sqrt_term(c, 100) == Approx(0.5432406064).margin(1e-6));

  double t1 = theorem1_rhs(0.0, rad_m, c, 100);
  CHECK(t1 == Approx(1.7432406064).margin(1e-6));
  CHECK(t1 == Approx(1.7433).margin(1e-4));
  BoundComponents p1 = theorem1_components(0.0, rad_m, c, 100);
  REQUIRE(p1.size() == 4);
  CHECK(p1[0].first == "gamma");
  CHECK(p1[1].second == Approx(0.8));
  CHECK(components_total(p1) == Approx(t1));

  double body = theorem2_rhs(rad_m, rad_full, c, 100, 0.05);
  CHECK(body == Approx(2.5597218192).margin(1e-6));
  CHECK(body == Approx(2.5597).margin(1e-3));
  double appendix = theorem2_rhs(rad_m, rad_full, c, 100, 0.05,
                                 Theorem2Variant::appendix);
  CHECK(appendix == Approx(1.8732406064).margin(1e-6));
  CHECK(appendix <= body);

  c.delta = 0.9;
  CHECK(theorem2_rhs(rad_m, rad_full, c, 100, 0.05,
                     Theorem2Variant::appendix) <=
        theorem2_rhs(rad_m, rad_full, c, 100, 0.05));

  CHECK(to_string(Theorem2Variant::body) == "body");
  CHECK(theorem2_variant_from_string("appendix") == Theorem2Variant::appendix);
  CHECK_THROWS_AS(theorem2_variant_from_string("proof"), ConfigError);
}

TEST_CASE("bound reports keep their provenance straight") {
  BoundCheckInput in;
  in.theorem = 1;
  in.gamma = 0.2;
  in.rad_m.mean = 0.05;
  in.rad_m.kind = RademacherEstimate::Kind::linear_exact;
  in.constants.lipschitz = 1.0;
  in.constants.loss_bound = 1.0;
  in.constants.delta = 0.05;
  in.m = 100;
  in.config_digest = "abc";

  BoundReport r = bound_check(0.5, "abc", in);
  CHECK(r.holds);
  CHECK(r.margin == Approx(r.rhs - 0.5));
  CHECK_FALSE(r.understated_rhs);
  CHECK(r.m == 100);

  in.rad_m.kind = RademacherEstimate::Kind::mc_ascent;
  CHECK(bound_check(0.5, "abc", in).understated_rhs);

  CHECK_THROWS_AS(bound_check(0.5, "xyz", in), ConfigError);
  in.config_digest = "";
  CHECK_THROWS_AS(bound_check(0.5, "", in), ConfigError);
  in.config_digest = "abc";
  in.theorem = 3;
  CHECK_THROWS_AS(bound_check(0.5, "abc", in), ConfigError);
  in.theorem = 2;
  CHECK_THROWS_AS(bound_check(0.5, "abc", in), ConfigError);
  in.rad_full = in.rad_m;
  BoundReport r2 = bound_check(10.0, "abc", in);
  CHECK(r2.theorem == 2);
  CHECK_FALSE(r2.holds);
  CHECK(r2.margin < 0.0);
}

TEST_CASE("theorem 1 holds on a concrete linear instance") {
  auto inst =
      harnessdetail::random_linear_instance({1, 1}, StreamKey(55).with("t1"));
  LinearGenConfig gen;
  gen.schema = inst.schema;
  gen.a_star = inst.a_star;
  gen.beta_star = inst.beta_star;
  gen.sigma = inst.sigma;
  gen.noise_sd = 0.2;
  gen.n_samples = 1000;
  gen.seed = 606;
  Dataset ds = generate_linear(gen);
  ModalitySubset sub = ModalitySubset::of(ds.schema(), {0});

  LinearComposite model = erm_linear_closed_form(ds, sub);
  double lhs = linear_excess_risk(model, inst.a_star, inst.beta_star,
                                  inst.sigma);
  Eigen::VectorXd v_star = inst.a_star * inst.beta_star;
  double gamma = eta_closed_form(
                     harnessdetail::masked_subspace_encoder(sub, v_star),
                     inst.a_star, inst.beta_star, inst.sigma)
                     .value;
  double cb =
      1.5 * std::max(model.composite_vector().norm(), inst.beta_star.norm());
  BoundConstants c = estimate_constants(
      ds, linear_prediction_bound(ds, sub, cb), cb);
  RademacherEstimate rad = rademacher_linear_exact(ds, sub, cb, 64, 1234);
  double rhs = theorem1_rhs(gamma, rad, c, ds.size());
  CHECK(lhs >= 0.0);
  CHECK(gamma >= 0.0);
  CHECK(lhs <= rhs);
}
