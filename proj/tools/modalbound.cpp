// Command line front end: dataset generation, training, latent-quality
// estimation, complexity estimation, bound reports, and the full
// experiment scenarios.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "modalbound/modalbound.hpp"

namespace {

using namespace modalbound;

constexpr int kExitOk = 0;
constexpr int kExitInvalid = 1;
constexpr int kExitAssertFailed = 2;

void write_json_file(const nlohmann::json& j, const std::string& path) {
  std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot open for write: " + path);
  out << j.dump(2) << "\n";
}

nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open: " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("json parse error in " + path + ": " + e.what());
  }
}

TrainedModel load_model(const std::string& path) {
  nlohmann::json j = read_json_file(path);
  const std::string type = j.at("type").get<std::string>();
  if (type == "linear") return linear_from_json(j);
  if (type == "mlp") return mlp_from_json(j);
  throw ConfigError("unknown model type '" + type + "' in " + path);
}

nlohmann::json model_to_json(const TrainedModel& m) {
  return std::visit([](const auto& model) { return to_json(model); }, m);
}

struct SharedOptions {
  std::string config_path;
  std::string out_dir = "out";
  bool fast = false;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  std::optional<std::string> variant;
  std::optional<int> replicates;
  bool assert_mode = false;
};

ExperimentSpec load_spec(const SharedOptions& opts,
                         const std::string& scenario) {
  ExperimentSpec spec;
  if (!opts.config_path.empty()) spec = ExperimentSpec::load(opts.config_path);
  if (!scenario.empty()) spec.scenario = scenario;
  if (spec.scenario.empty())
    throw ConfigError("no scenario given (use --scenario or the config file)");
  if (opts.fast) spec.fast = true;
  if (opts.seed) spec.seed = *opts.seed;
  if (opts.workers) spec.workers = *opts.workers;
  if (opts.variant) spec.bound.variant = *opts.variant;
  if (opts.replicates) spec.replicates = *opts.replicates;
  spec.validate();
  return spec;
}

int report_assertions(const ScenarioResult& result, bool assert_mode) {
  for (const auto& a : result.assertions)
    std::cout << (a.pass ? "[pass] " : "[FAIL] ") << a.description << " ("
              << a.detail << ")\n";
  if (!result.all_pass() && assert_mode) return kExitAssertFailed;
  return kExitOk;
}

void add_shared(CLI::App* cmd, SharedOptions& opts, bool with_assert = true) {
  cmd->add_option("--config", opts.config_path, "experiment spec JSON file");
  cmd->add_option("--out", opts.out_dir, "output directory");
  cmd->add_flag("--fast", opts.fast, "reduced sizes for quick runs");
  cmd->add_option("--seed", opts.seed, "master seed override");
  cmd->add_option("--workers", opts.workers, "worker thread count");
  cmd->add_option("--replicates", opts.replicates, "replicate count override");
  cmd->add_option("--variant", opts.variant,
                  "theorem 2 variant: body or appendix")
      ->check(CLI::IsMember({"body", "appendix"}));
  if (with_assert)
    cmd->add_flag("--assert", opts.assert_mode,
                  "exit 2 when an acceptance assertion fails");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"modality-masking laboratory"};
  app.require_subcommand(1);

  // generate -----------------------------------------------------------
  auto* gen = app.add_subcommand("generate", "generate a synthetic dataset");
  std::string gen_kind = "overlap";
  int gen_dim = 100, gen_n = 100000, gen_latent = 0;
  double gen_w = 0.5, gen_noise = 0.0;
  std::uint64_t gen_seed = 17;
  std::string gen_dims;
  std::string gen_out = "out";
  bool gen_random_sigma = false;
  gen->add_option("--generator", gen_kind, "overlap or linear")
      ->check(CLI::IsMember({"overlap", "linear"}));
  gen->add_option("--dim", gen_dim, "per-modality dimension (overlap)");
  gen->add_option("--dims", gen_dims,
                  "comma separated modality dims (linear), e.g. 2,3,3");
  gen->add_option("--w", gen_w, "overlap weight in [0,1]");
  gen->add_option("--n", gen_n, "sample count");
  gen->add_option("--latent", gen_latent,
                  "true latent width (linear; default: full dimension)");
  gen->add_option("--noise-sd", gen_noise, "label noise (linear)");
  gen->add_flag("--random-sigma", gen_random_sigma,
                "draw a random well-conditioned input covariance (linear)");
  gen->add_option("--seed", gen_seed, "generator seed");
  gen->add_option("--out", gen_out, "output directory");

  // train ---------------------------------------------------------------
  auto* train = app.add_subcommand("train", "fit a composite by ERM");
  std::string train_data, train_subset = "full", train_model =
      "linear_closed_form";
  std::string train_out = "out";
  std::uint64_t train_seed = 17;
  TrainOptions train_opts;
  MlpOptions train_mlp;
  int train_latent = 1;
  bool train_two_stage = false;
  train->add_option("--data", train_data, "training dataset csv")->required();
  train->add_option("--subset", train_subset, "modality subset, e.g. m1,m2");
  train->add_option("--model", train_model,
                    "linear_closed_form, linear_sgd or mlp_sgd")
      ->check(CLI::IsMember({"linear_closed_form", "linear_sgd", "mlp_sgd"}));
  train->add_option("--latent", train_latent, "latent width (linear)");
  train->add_option("--lr", train_opts.lr, "learning rate");
  train->add_option("--momentum", train_opts.momentum, "momentum");
  train->add_option("--batch", train_opts.batch, "minibatch size");
  train->add_option("--steps", train_opts.steps, "step count");
  train->add_option("--hidden", train_mlp.hidden_dim, "mlp hidden width");
  train->add_option("--fusion", train_mlp.fusion,
                    "mlp fusion: concat, sum, mean or max")
      ->check(CLI::IsMember({"concat", "sum", "mean", "max"}));
  train->add_flag("--relu", train_mlp.relu, "mlp encoder activation");
  train->add_flag("--two-stage", train_two_stage,
                  "uni-modal pretraining then head-only fusion fit");
  train->add_option("--seed", train_seed, "training seed");
  train->add_option("--out", train_out, "output directory");

  // eta -----------------------------------------------------------------
  auto* eta = app.add_subcommand(
      "eta", "latent quality of a frozen encoder (head refit + eval)");
  std::string eta_model, eta_fit, eta_eval, eta_subset = "full";
  std::string eta_out = "out";
  double eta_oracle = 0.0;
  eta->add_option("--model", eta_model, "model json")->required();
  eta->add_option("--fit-data", eta_fit, "head-fit dataset csv")->required();
  eta->add_option("--eval-data", eta_eval, "evaluation dataset csv")
      ->required();
  eta->add_option("--subset", eta_subset, "modality subset");
  eta->add_option("--oracle-risk", eta_oracle,
                  "oracle risk subtracted from the eval risk");
  eta->add_option("--out", eta_out, "output directory");

  // gamma ---------------------------------------------------------------
  auto* gamma = app.add_subcommand(
      "gamma", "difference of two eta estimates (eta_M - eta_N)");
  std::string gamma_m, gamma_n, gamma_out = "out";
  gamma->add_option("--eta-m", gamma_m, "eta json for subset M")->required();
  gamma->add_option("--eta-n", gamma_n, "eta json for subset N")->required();
  gamma->add_option("--out", gamma_out, "output directory");

  // rademacher ----------------------------------------------------------
  auto* rad = app.add_subcommand("rademacher",
                                 "empirical Rademacher complexity");
  std::string rad_data, rad_subset = "full", rad_estimator = "exact";
  std::string rad_out = "out";
  double rad_cb = 1.0;
  int rad_draws = 200, rad_restarts = 8, rad_iters = 50;
  std::uint64_t rad_seed = 17;
  rad->add_option("--data", rad_data, "dataset csv")->required();
  rad->add_option("--subset", rad_subset, "modality subset");
  rad->add_option("--cb", rad_cb, "head norm bound of the linear class");
  rad->add_option("--draws", rad_draws, "sign draw count");
  rad->add_option("--estimator", rad_estimator,
                  "exact, linear-ascent or zero")
      ->check(CLI::IsMember({"exact", "linear-ascent", "zero"}));
  rad->add_option("--restarts", rad_restarts, "ascent restarts");
  rad->add_option("--iters", rad_iters, "ascent iterations");
  rad->add_option("--seed", rad_seed, "sign draw seed");
  rad->add_option("--out", rad_out, "output directory");

  // bound-check ---------------------------------------------------------
  auto* bc = app.add_subcommand(
      "bound-check", "assemble and check generalization-bound reports");
  SharedOptions bc_opts;
  add_shared(bc, bc_opts);

  // reproduce -----------------------------------------------------------
  auto* rep = app.add_subcommand("reproduce", "run an experiment scenario");
  SharedOptions rep_opts;
  std::string rep_scenario;
  rep->add_option("--scenario", rep_scenario,
                  "table5, sample_sweep, gamma_vs_risk, prop1_suite, "
                  "bound_suite or all");
  add_shared(rep, rep_opts);

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      std::filesystem::create_directories(gen_out);
      Dataset ds;
      nlohmann::json instance;
      if (gen_kind == "overlap") {
        OverlapConfig cfg;
        cfg.modality_dim = gen_dim;
        cfg.w = gen_w;
        cfg.n_samples = gen_n;
        cfg.seed = gen_seed;
        ds = generate_overlap(cfg);
        OverlapTrueModel tm = overlap_true_model(gen_dim);
        instance = {{"generator", "overlap"},
                    {"w", gen_w},
                    {"modality_dim", gen_dim},
                    {"a_star", modeldetail::matrix_to_json(tm.a_star)},
                    {"beta_star",
                     modeldetail::matrix_to_json(
                         Eigen::MatrixXd(tm.beta_star))},
                    {"oracle_noise_risk", 0.0}};
      } else {
        if (gen_dims.empty())
          throw ConfigError("linear generator needs --dims");
        std::vector<int> dims;
        std::istringstream is(gen_dims);
        std::string tok;
        while (std::getline(is, tok, ',')) dims.push_back(std::stoi(tok));
        ModalitySchema schema(dims);
        const int d = schema.total_dim();
        const int latent = gen_latent > 0 ? gen_latent : d;
        StreamKey key(gen_seed);
        LinearGenConfig cfg;
        cfg.schema = schema;
        cfg.a_star = random_orthonormal(d, latent, key.with("a-star"));
        StreamRng brng(key.with("beta-star"));
        cfg.beta_star.resize(latent);
        for (int i = 0; i < latent; ++i) cfg.beta_star[i] = brng.normal();
        if (gen_random_sigma) {
          Eigen::MatrixXd q = random_orthonormal(d, d, key.with("sigma"));
          StreamRng erng(key.with("sigma-eigs"));
          Eigen::VectorXd eigs(d);
          for (int i = 0; i < d; ++i) eigs[i] = erng.uniform(0.5, 2.0);
          Eigen::MatrixXd sigma = q * eigs.asDiagonal() * q.transpose();
          cfg.sigma = 0.5 * (sigma + sigma.transpose());
        }
        cfg.noise_sd = gen_noise;
        cfg.n_samples = gen_n;
        cfg.seed = gen_seed;
        ds = generate_linear(cfg);
        instance = {{"generator", "linear"},
                    {"dims", dims},
                    {"a_star", modeldetail::matrix_to_json(cfg.a_star)},
                    {"beta_star",
                     modeldetail::matrix_to_json(
                         Eigen::MatrixXd(cfg.beta_star))},
                    {"noise_sd", gen_noise},
                    {"oracle_noise_risk", gen_noise * gen_noise}};
        if (cfg.sigma)
          instance["sigma"] = modeldetail::matrix_to_json(*cfg.sigma);
      }
      write_dataset_csv(ds, gen_out + "/dataset.csv");
      write_json_file(instance, gen_out + "/instance.json");
      std::cout << "wrote " << gen_out << "/dataset.csv (" << ds.size()
                << " samples, digest " << ds.digest() << ")\n";
      return kExitOk;
    }

    if (train->parsed()) {
      Dataset ds = read_dataset_csv(train_data);
      ModalitySubset subset = parse_subset(ds.schema(), train_subset);
      ModelSpec spec;
      if (train_model == "linear_closed_form")
        spec = LinearClosedFormSpec{train_latent};
      else if (train_model == "linear_sgd")
        spec = LinearSgdSpec{train_latent};
      else
        spec = MlpSgdSpec{train_mlp.hidden_dim,
                          fusion_from_string(train_mlp.fusion),
                          train_mlp.relu};
      TrainConfig cfg;
      cfg.lr = train_opts.lr;
      cfg.momentum = train_opts.momentum;
      cfg.batch = train_opts.batch;
      cfg.steps = train_opts.steps;
      cfg.seed = train_seed;
      cfg.subset = subset;
      ERMResult result = train_two_stage ? two_stage_train(ds, spec, cfg)
                                         : erm_train(ds, spec, cfg);
      std::filesystem::create_directories(train_out);
      write_json_file(model_to_json(result.model), train_out + "/model.json");
      nlohmann::json traj = nlohmann::json::array();
      for (const auto& [step, risk] : result.trajectory)
        traj.push_back({{"step", step}, {"risk", risk}});
      write_json_file({{"final_risk", result.final_risk},
                       {"diverged", result.diverged},
                       {"head_norm", result.head_norm},
                       {"trajectory", traj},
                       {"data_digest", ds.digest()},
                       {"subset", subset.label()}},
                      train_out + "/train_result.json");
      std::cout << "final risk " << format_double(result.final_risk)
                << (result.diverged ? " (diverged)" : "") << "\n";
      return kExitOk;
    }

    if (eta->parsed()) {
      TrainedModel model = load_model(eta_model);
      Dataset fit = read_dataset_csv(eta_fit);
      Dataset eval = read_dataset_csv(eta_eval);
      ModalitySubset subset = parse_subset(fit.schema(), eta_subset);
      const bool with_bias = std::holds_alternative<MlpComposite>(model);
      EtaEstimate est = std::visit(
          [&](const auto& m) {
            return eta_empirical(m, subset, eval, fit, eta_oracle, with_bias);
          },
          model);
      write_json_file(
          {{"value", est.value},
           {"std_error", est.std_error},
           {"oracle_risk", est.oracle_risk},
           {"eval_samples", est.eval_samples},
           {"overlap_warning", est.overlap_warning},
           {"subset", est.subset_label},
           {"method", "empirical"}},
          eta_out + "/eta.json");
      std::cout << "eta " << format_double(est.value) << " +- "
                << format_double(est.std_error)
                << (est.overlap_warning ? " (fit and eval data coincide)"
                                        : "")
                << "\n";
      return kExitOk;
    }

    if (gamma->parsed()) {
      auto load_eta = [](const std::string& path) {
        nlohmann::json j = read_json_file(path);
        EtaEstimate e;
        e.value = j.at("value").get<double>();
        e.std_error = j.at("std_error").get<double>();
        e.oracle_risk = j.at("oracle_risk").get<double>();
        e.method = EtaEstimate::Method::empirical;
        e.subset_label = j.at("subset").get<std::string>();
        return e;
      };
      EtaEstimate em = load_eta(gamma_m);
      EtaEstimate en = load_eta(gamma_n);
      GammaEstimate g = gamma_gap(em, en);
      write_json_file({{"value", g.value},
                       {"std_error", g.std_error},
                       {"subset_m", em.subset_label},
                       {"subset_n", en.subset_label}},
                      gamma_out + "/gamma.json");
      std::cout << "gamma " << format_double(g.value) << " +- "
                << format_double(g.std_error) << "\n";
      return kExitOk;
    }

    if (rad->parsed()) {
      Dataset ds = read_dataset_csv(rad_data);
      ModalitySubset subset = parse_subset(ds.schema(), rad_subset);
      RademacherEstimate est;
      if (rad_estimator == "exact") {
        est = rademacher_linear_exact(ds, subset, rad_cb, rad_draws, rad_seed);
      } else if (rad_estimator == "linear-ascent") {
        SupOracle oracle = linear_ascent_oracle(ds, subset, rad_cb,
                                                rad_restarts, rad_iters,
                                                rad_seed);
        est = rademacher_mc_oracle(ds.size(), oracle, rad_draws, rad_seed);
      } else {
        est = rademacher_mc_oracle(ds.size(), zero_class_oracle(), rad_draws,
                                   rad_seed);
      }
      write_json_file(
          {{"mean", est.mean},
           {"std_error", est.std_error},
           {"n_draws", est.n_draws},
           {"kind", est.kind == RademacherEstimate::Kind::linear_exact
                        ? "linear_exact"
                        : "mc_ascent"},
           {"draws", est.draws},
           {"subset", subset.label()},
           {"cb", rad_cb}},
          rad_out + "/rademacher.json");
      std::cout << "rademacher " << format_double(est.mean) << " +- "
                << format_double(est.std_error) << "\n";
      return kExitOk;
    }

    if (bc->parsed()) {
      ExperimentSpec spec = load_spec(bc_opts, "bound_suite");
      if (!bc_opts.replicates && spec.replicates == 0) spec.replicates = 1;
      ScenarioResult result = run_bound_suite(spec);
      write_scenario_outputs(result, bc_opts.out_dir);
      std::cout << "wrote bound reports to " << bc_opts.out_dir << "\n";
      return report_assertions(result, bc_opts.assert_mode);
    }

    if (rep->parsed()) {
      std::vector<std::string> scenarios;
      ExperimentSpec base = load_spec(
          rep_opts, rep_scenario == "all" ? "table5" : rep_scenario);
      if (rep_scenario == "all")
        scenarios = {"table5", "sample_sweep", "gamma_vs_risk", "prop1_suite",
                     "bound_suite"};
      else
        scenarios = {base.scenario};
      int exit_code = kExitOk;
      for (const auto& name : scenarios) {
        ExperimentSpec spec = base;
        spec.scenario = name;
        spec.validate();
        ScenarioResult result = run_scenario(spec);
        write_scenario_outputs(result, rep_opts.out_dir + "/" + name);
        std::cout << "== " << name << " ==\n";
        int code = report_assertions(result, rep_opts.assert_mode);
        if (code != kExitOk) exit_code = code;
      }
      return exit_code;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInvalid;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInvalid;
  }
  return kExitOk;
}
