// Command-line front end: single-problem solves, the ecological-inference
// pipeline (synthesize / cross-validate / infer) and the metric-property
// sweeps, all emitting plot-ready JSON/CSV artifacts.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <optional>
#include <string>

#include "trot/divergence_lab.hpp"
#include "trot/eco_infer.hpp"
#include "trot/serialization.hpp"
#include "trot/solvers.hpp"
#include "trot/synthesis.hpp"

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr int kExitOk = 0;
constexpr int kExitNotConverged = 1;
constexpr int kExitBadInput = 2;

struct CommonOptions {
  double q = 1.0;
  double lambda = 1.0;
  std::string cost = "no_prior";
  double gamma = 10.0;
  double tol = 1e-8;
  int max_iters = 60000;
  std::string production_mods = "on";
  std::string step_decay = "sqrt";
  int jobs = 0;
  std::uint64_t seed = 1;
  std::string out_dir = ".";
  bool strict = false;
  std::string kl_direction = "truth-first";
};

json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open " + path);
  json j;
  in >> j;
  return j;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
}

void write_json_file(const std::string& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

/// Config-file overlay: values adjust the defaults, explicit flags win.
void apply_config(CommonOptions& opt, const json& cfg) {
  auto get = [&](const char* key, auto& slot) {
    if (cfg.contains(key)) slot = cfg.at(key).get<std::decay_t<decltype(slot)>>();
  };
  get("q", opt.q);
  get("lambda", opt.lambda);
  get("cost", opt.cost);
  get("gamma", opt.gamma);
  get("tol", opt.tol);
  get("max_iters", opt.max_iters);
  get("production_mods", opt.production_mods);
  get("step_decay", opt.step_decay);
  get("jobs", opt.jobs);
  get("seed", opt.seed);
  get("out", opt.out_dir);
  get("kl_direction", opt.kl_direction);
}

trot::SolverConfig solver_config(const CommonOptions& opt) {
  trot::SolverConfig cfg;
  cfg.marginal_tol = opt.tol;
  cfg.max_outer_iters = opt.max_iters;
  cfg.production_mods = opt.production_mods == "on";
  cfg.step_schedule.decay =
      opt.step_decay == "harmonic" ? trot::StepDecay::harmonic : trot::StepDecay::sqrt;
  return cfg;
}

trot::eco::EcoSolveOptions eco_options(const CommonOptions& opt) {
  trot::eco::EcoSolveOptions options;
  options.solver = solver_config(opt);
  options.jobs = opt.jobs;
  options.kl_direction = opt.kl_direction == "inferred-first" ? trot::eco::KlDirection::inferred_first
                                                              : trot::eco::KlDirection::truth_first;
  return options;
}

trot::eco::CostMatrixKind cost_kind(const std::string& name) {
  if (name == "rbf") return trot::eco::CostMatrixKind::rbf;
  if (name == "survey") return trot::eco::CostMatrixKind::survey;
  if (name == "no_prior") return trot::eco::CostMatrixKind::no_prior;
  throw std::invalid_argument("unknown cost kind '" + name + "' (expected rbf|survey|no_prior)");
}

/// Assembles the cost matrix for the pipeline commands. Survey proportions
/// come from --proportions when given, falling back to the truth sidecar.
trot::Matrix pipeline_cost_matrix(const CommonOptions& opt, const trot::eco::RegionDataset& data,
                                  const std::string& proportions_path, const json* sidecar) {
  trot::eco::CostMatrixSpec spec;
  spec.kind = cost_kind(opt.cost);
  spec.gamma = opt.gamma;
  if (spec.kind == trot::eco::CostMatrixKind::survey) {
    if (!proportions_path.empty()) {
      spec.survey_proportions = trot::matrix_from_json(load_json_file(proportions_path));
    } else if (sidecar && sidecar->contains("survey_proportions")) {
      spec.survey_proportions = trot::matrix_from_json(sidecar->at("survey_proportions"));
    } else {
      throw std::invalid_argument(
          "survey cost needs --proportions FILE or a truth sidecar with survey_proportions");
    }
  }
  return trot::eco::build_cost_matrix(spec, data);
}

std::vector<double> parse_grid(const std::string& csv) {
  std::vector<double> values;
  std::stringstream ss(csv);
  std::string token;
  while (std::getline(ss, token, ',')) {
    if (!token.empty()) values.push_back(std::stod(token));
  }
  if (values.empty()) throw std::invalid_argument("empty grid '" + csv + "'");
  return values;
}

std::string plan_heatmap_csv(const trot::Matrix& plan) {
  std::ostringstream os;
  os.precision(17);
  for (std::size_t i = 0; i < plan.rows(); ++i) {
    for (std::size_t j = 0; j < plan.cols(); ++j) os << (j ? "," : "") << plan(i, j);
    os << '\n';
  }
  return os.str();
}

int cmd_solve(const CommonOptions& opt, const std::string& problem_path, bool emit_heatmap) {
  const auto prob = trot::problem_from_json(load_json_file(problem_path));
  const trot::QParams params{opt.q, opt.lambda};
  auto result = trot::solve(prob, params, solver_config(opt));

  fs::create_directories(opt.out_dir);
  json plan{{"P", trot::matrix_to_json(result.plan.P)},
            {"row_residual", result.plan.row_residual},
            {"col_residual", result.plan.col_residual},
            {"objective", trot::trot_objective(result.plan, prob, params)},
            {"converged", result.trace.converged},
            {"iterations", result.trace.iterations},
            {"q", params.q},
            {"lambda", params.lambda}};
  write_json_file(opt.out_dir + "/plan.json", plan);

  if (result.duals) {
    write_json_file(opt.out_dir + "/duals.json", json{{"alpha", result.duals->cert.alpha},
                                                      {"beta", result.duals->cert.beta},
                                                      {"kkt_residual", result.duals->residual},
                                                      {"unique", result.duals->unique}});
  }
  std::ostringstream trace;
  trot::write_trace_jsonl(trace, result.trace);
  write_text(opt.out_dir + "/trace.jsonl", trace.str());
  if (emit_heatmap) write_text(opt.out_dir + "/heatmap.csv", plan_heatmap_csv(result.plan.P));

  if (!result.trace.converged) {
    std::cerr << "solve: not converged after " << result.trace.iterations << " sweeps\n";
    if (opt.strict) return kExitNotConverged;
  }
  return kExitOk;
}

int cmd_synth(const CommonOptions& opt, int regions, int records, double coupling) {
  fs::create_directories(opt.out_dir);
  trot::eco::SynthConfig cfg;
  cfg.n_regions = regions;
  cfg.records_per_region = records;
  cfg.coupling_strength = coupling;
  cfg.seed = opt.seed;
  auto paths = trot::eco::synthesize_dataset(cfg, opt.out_dir);
  std::cout << paths.records_path << '\n' << paths.truth_path << '\n';
  return kExitOk;
}

int cmd_infer(const CommonOptions& opt, const std::string& data_path, const std::string& truth_path,
              const std::string& proportions_path) {
  auto data = trot::eco::ingest(data_path);
  std::optional<json> sidecar;
  if (!truth_path.empty()) {
    sidecar = load_json_file(truth_path);
    trot::eco::apply_truth_sidecar(data, *sidecar);
  }
  const trot::Matrix cost = pipeline_cost_matrix(opt, data, proportions_path, sidecar ? &*sidecar : nullptr);
  auto report = trot::eco::infer_all(data, {opt.q, opt.lambda}, cost, eco_options(opt));

  fs::create_directories(opt.out_dir);
  write_json_file(opt.out_dir + "/report.json", trot::eco::report_to_json(report));
  write_text(opt.out_dir + "/report.csv", trot::eco::report_to_csv(report));
  write_text(opt.out_dir + "/scatter.csv", trot::eco::scatter_to_csv(report, data));
  if (!report.skipped_regions.empty()) {
    std::cerr << "infer: " << report.skipped_regions.size() << " region(s) did not converge\n";
    if (opt.strict) return kExitNotConverged;
  }
  return kExitOk;
}

int cmd_cv(const CommonOptions& opt, const std::string& data_path, const std::string& truth_path,
           const std::string& proportions_path, const std::string& q_grid_csv,
           const std::string& lambda_grid_csv, const std::string& holdin_csv,
           const std::string& holdin_district) {
  auto data = trot::eco::ingest(data_path);
  std::optional<json> sidecar;
  if (!truth_path.empty()) {
    sidecar = load_json_file(truth_path);
    trot::eco::apply_truth_sidecar(data, *sidecar);
  }
  const trot::Matrix cost = pipeline_cost_matrix(opt, data, proportions_path, sidecar ? &*sidecar : nullptr);

  std::vector<std::string> holdin;
  if (!holdin_csv.empty()) {
    std::stringstream ss(holdin_csv);
    std::string token;
    while (std::getline(ss, token, ','))
      if (!token.empty()) holdin.push_back(token);
  } else {
    for (const auto& region : data.regions)
      if (region.district == holdin_district) holdin.push_back(region.id);
  }
  if (holdin.empty()) throw std::invalid_argument("no hold-in regions selected");

  auto cv = trot::eco::cross_validate(data, holdin, parse_grid(q_grid_csv), parse_grid(lambda_grid_csv),
                                      cost, eco_options(opt));
  json grid = json::array();
  for (const auto& point : cv.grid)
    grid.push_back(json{{"q", point.q},
                        {"lambda", point.lambda},
                        {"mean_kl", point.mean_kl},
                        {"scored_regions", point.scored_regions}});
  fs::create_directories(opt.out_dir);
  write_json_file(opt.out_dir + "/cv.json",
                  json{{"best", {{"q", cv.best_q}, {"lambda", cv.best_lambda}}},
                       {"holdin_regions", holdin},
                       {"grid", std::move(grid)}});
  std::cout << "best q=" << cv.best_q << " lambda=" << cv.best_lambda << '\n';
  return kExitOk;
}

int cmd_sweep(const CommonOptions& opt, const std::string& kind, int trials, double beta, int support) {
  trot::Rng rng(opt.seed);
  fs::create_directories(opt.out_dir);
  json out;
  if (kind == "triangle") {
    const trot::Matrix metric = trot::lab::random_metric_matrix(static_cast<std::size_t>(support), rng);
    auto report = trot::lab::triangle_sweep(metric, beta, opt.lambda, trials, opt.seed + 1);
    out = trot::lab::sweep_report_to_json(report);
    out["kind"] = "triangle";
    out["beta"] = beta;
  } else if (kind == "gluing") {
    // Feasibility of composed plans plus the q = 1 entropy inequality.
    int violations = 0;
    double worst = 0.0;
    for (int t = 0; t < trials; ++t) {
      const trot::Vector x = rng.dirichlet(static_cast<std::size_t>(support));
      const trot::Vector y = rng.dirichlet(static_cast<std::size_t>(support));
      const trot::Vector z = rng.dirichlet(static_cast<std::size_t>(support));
      trot::Matrix w(x.size(), y.size());
      for (auto& v : w) v = 0.05 + rng.uniform();
      const trot::Matrix p = trot::sinkhorn_knopp(w, x, y, 1e-13, 50000).plan.P;
      for (auto& v : w) v = 0.05 + rng.uniform();
      const trot::Matrix q_plan = trot::sinkhorn_knopp(w, y, z, 1e-13, 50000).plan.P;
      auto glued = trot::lab::glue(p, q_plan, y);
      const double feas = trot::l1_distance(trot::row_sums(glued.S), x) +
                          trot::l1_distance(trot::col_sums(glued.S), z);
      const bool mono = trot::lab::entropy_monotonicity_check(p, q_plan, glued.S, x, y, z, 1.0);
      if (feas > 1e-10 || !mono) {
        ++violations;
        worst = std::max(worst, feas);
      }
    }
    out = json{{"kind", "gluing"}, {"trials", trials}, {"violations", violations}, {"max_violation", worst}};
  } else if (kind == "indiscernibles") {
    const trot::Matrix metric = trot::lab::random_metric_matrix(static_cast<std::size_t>(support), rng);
    int violations = 0;
    for (int t = 0; t < trials; ++t)
      if (!trot::lab::weak_indiscernibles_check(rng.dirichlet(static_cast<std::size_t>(support)), metric,
                                                opt.lambda, opt.q))
        ++violations;
    out = json{{"kind", "indiscernibles"}, {"trials", trials}, {"violations", violations}, {"max_violation", 0.0}};
  } else {
    throw std::invalid_argument("unknown sweep kind '" + kind + "' (expected triangle|gluing|indiscernibles)");
  }
  write_json_file(opt.out_dir + "/sweep.json", out);
  std::cout << out.dump() << '\n';
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Tsallis-regularized optimal transport solvers and ecological inference pipeline"};
  app.require_subcommand(1);

  CommonOptions opt;
  std::string config_path;

  // The config file adjusts defaults before flags are applied.
  for (int i = 1; i + 1 < argc; ++i)
    if (std::string(argv[i]) == "--config") config_path = argv[i + 1];
  if (!config_path.empty()) {
    try {
      apply_config(opt, load_json_file(config_path));
    } catch (const std::exception& e) {
      std::cerr << "config: " << e.what() << '\n';
      return kExitBadInput;
    }
  }

  app.add_option("--config", config_path, "JSON config file with default options");
  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "JSON config file with default options");
    cmd->add_option("--q", opt.q, "deformation parameter q >= 0");
    cmd->add_option("--lambda", opt.lambda, "inverse regularization weight > 0");
    cmd->add_option("--cost", opt.cost, "cost matrix kind: rbf|survey|no_prior");
    cmd->add_option("--gamma", opt.gamma, "rbf kernel bandwidth");
    cmd->add_option("--tol", opt.tol, "L1 marginal tolerance");
    cmd->add_option("--max-iters", opt.max_iters, "outer iteration cap");
    cmd->add_option("--production-mods", opt.production_mods, "balancing speed modifications: on|off")
        ->check(CLI::IsMember({"on", "off"}));
    cmd->add_option("--step-decay", opt.step_decay, "gradient step decay: harmonic|sqrt")
        ->check(CLI::IsMember({"harmonic", "sqrt"}));
    cmd->add_option("--jobs", opt.jobs, "worker pool width (0 = hardware)");
    cmd->add_option("--seed", opt.seed, "random seed");
    cmd->add_option("--out", opt.out_dir, "output directory");
    cmd->add_flag("--strict", opt.strict, "exit 1 when any solve fails to converge");
    cmd->add_option("--kl-direction", opt.kl_direction,
                    "evaluation KL direction: truth-first|inferred-first")
        ->check(CLI::IsMember({"truth-first", "inferred-first"}));
  };

  auto* solve_cmd = app.add_subcommand("solve", "solve one transport problem from a JSON file");
  std::string problem_path;
  bool emit_heatmap = false;
  solve_cmd->add_option("--problem", problem_path, "problem JSON {r, c, M}")->required();
  solve_cmd->add_flag("--emit-heatmap", emit_heatmap, "write the plan as a CSV heat grid");
  add_common(solve_cmd);

  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic voter-records dataset");
  int regions = 10, records = 10000;
  double coupling = 0.8;
  synth_cmd->add_option("--regions", regions, "number of regions");
  synth_cmd->add_option("--records", records, "records per region");
  synth_cmd->add_option("--coupling", coupling, "coupling strength in [0, 1]");
  add_common(synth_cmd);

  auto* infer_cmd = app.add_subcommand("infer", "infer joint tables for every region");
  std::string data_path, truth_path, proportions_path;
  infer_cmd->add_option("--data", data_path, "records CSV")->required();
  infer_cmd->add_option("--truth", truth_path, "truth sidecar JSON replacing empirical tables");
  infer_cmd->add_option("--proportions", proportions_path, "survey proportions JSON matrix");
  add_common(infer_cmd);

  auto* cv_cmd = app.add_subcommand("cv", "grid search (q, lambda) on hold-in regions");
  std::string q_grid = "0.5,1,2", lambda_grid = "0.1,1,10", holdin_csv, holdin_district = "D1";
  cv_cmd->add_option("--data", data_path, "records CSV")->required();
  cv_cmd->add_option("--truth", truth_path, "truth sidecar JSON replacing empirical tables");
  cv_cmd->add_option("--proportions", proportions_path, "survey proportions JSON matrix");
  cv_cmd->add_option("--q-grid", q_grid, "comma-separated q values");
  cv_cmd->add_option("--lambda-grid", lambda_grid, "comma-separated lambda values");
  cv_cmd->add_option("--holdin", holdin_csv, "comma-separated hold-in region ids");
  cv_cmd->add_option("--holdin-district", holdin_district, "hold-in district id (default D1)");
  add_common(cv_cmd);

  auto* sweep_cmd = app.add_subcommand("sweep", "metric-property sweeps emitting a JSON report");
  std::string sweep_kind = "triangle";
  int trials = 500, support = 5;
  double beta = 1.0;
  sweep_cmd->add_option("--kind", sweep_kind, "triangle|gluing|indiscernibles");
  sweep_cmd->add_option("--trials", trials, "number of random trials");
  sweep_cmd->add_option("--beta", beta, "entropy adjustment constant");
  sweep_cmd->add_option("--n", support, "support size of the sampled marginals");
  add_common(sweep_cmd);

  CLI11_PARSE(app, argc, argv);

  try {
    if (solve_cmd->parsed()) return cmd_solve(opt, problem_path, emit_heatmap);
    if (synth_cmd->parsed()) return cmd_synth(opt, regions, records, coupling);
    if (infer_cmd->parsed()) return cmd_infer(opt, data_path, truth_path, proportions_path);
    if (cv_cmd->parsed())
      return cmd_cv(opt, data_path, truth_path, proportions_path, q_grid, lambda_grid, holdin_csv,
                    holdin_district);
    if (sweep_cmd->parsed()) return cmd_sweep(opt, sweep_kind, trials, beta, support);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitBadInput;
  }
  return kExitOk;
}
