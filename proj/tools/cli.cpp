#include "cli.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "pwrd/analysis.hpp"
#include "pwrd/error.hpp"
#include "pwrd/numeric.hpp"
#include "pwrd/panel.hpp"
#include "pwrd/sim.hpp"

#ifndef PWRD_VERSION
#define PWRD_VERSION "0.0.0"
#endif

namespace pwrd::cli {

using nlohmann::json;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::validation, "cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json parse_json(const std::string& path) {
  try {
    return json::parse(slurp(path));
  } catch (const json::exception& e) {
    fail(ErrorKind::validation, "invalid JSON in '" + path + "': " + e.what());
  }
}

std::string checksum(const std::string& bytes) { return "fnv1a64:" + hex64(fnv1a64(bytes)); }

json vec_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

json mat_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) rows.push_back(vec_json(m.row(i).transpose()));
  return rows;
}

Eigen::VectorXd json_vec(const json& j, const std::string& what) {
  if (!j.is_array()) fail(ErrorKind::validation, what + " must be an array of numbers");
  Eigen::VectorXd v(j.size());
  for (size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) fail(ErrorKind::validation, what + " must be an array of numbers");
    v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  }
  return v;
}

json test_json(const AggregatedTest& t) {
  return {{"estimate", t.estimate}, {"null_value", t.null_value}, {"se", t.se},       {"t", t.t_stat},
          {"df", std::isinf(t.df) ? json("inf") : json(t.df)},   {"p", t.p_value}, {"alternative", to_string(t.alternative)}};
}

json weights_json(const AggregationWeights& w) {
  json j = {{"scheme", to_string(w.scheme)}, {"omega", vec_json(w.omega)}, {"clipped_groups", w.clipped_groups}};
  if (w.scheme == WeightScheme::pwrd) {
    j["kkt_passed"] = w.kkt_passed;
    j["used_fallback"] = w.used_fallback;
    j["ridge"] = w.ridge;
    if (w.clip_formula_omega.size()) j["clip_formula_omega"] = vec_json(w.clip_formula_omega);
  }
  return j;
}

// Shared flags for panel analyses.
struct AnalysisFlags {
  std::string method = "pwrd";
  std::string estimator = "diffmeans";
  std::vector<std::string> covariates;
  double alpha = 0.05;
  std::string alternative = "greater";
  std::string cov_variant = "cr2";
  std::string df_rule = "clusters-2";
  std::string residuals = "both-arms";
  bool ridge = false;
  std::vector<double> delta0;

  void add_to(CLI::App* app, bool with_method) {
    if (with_method) app->add_option("--method", method, "pwrd, flat, mixed or exit")->capture_default_str();
    app->add_option("--estimator", estimator, "diffmeans or peters-belson")->capture_default_str();
    app->add_option("--covariates", covariates, "covariate columns for peters-belson")->delimiter(',');
    app->add_option("--alpha", alpha, "test level")->capture_default_str();
    app->add_option("--alternative", alternative, "greater or two-sided")->capture_default_str();
    app->add_option("--cov-variant", cov_variant, "cr0 or cr2")->capture_default_str();
    app->add_option("--df-rule", df_rule, "clusters-2 or satterthwaite")->capture_default_str();
    app->add_option("--residuals", residuals, "both-arms or control-only")->capture_default_str();
    app->add_flag("--ridge", ridge, "add a small ridge to a singular covariance");
    app->add_option("--delta0", delta0, "null effect vector")->delimiter(',');
  }

  AnalysisOptions options() const {
    AnalysisOptions o;
    o.effect_method = effect_method_from_string(estimator);
    o.covariates = covariates;
    o.variant = cov_variant_from_string(cov_variant);
    o.df_rule = df_rule_from_string(df_rule);
    o.residuals = residual_source_from_string(residuals);
    o.alternative = alternative_from_string(alternative);
    o.ridge = ridge;
    if (!delta0.empty()) o.delta0 = Eigen::Map<const Eigen::VectorXd>(delta0.data(), delta0.size());
    if (!(alpha > 0 && alpha < 1)) fail(ErrorKind::validation, "--alpha must lie in (0, 1)");
    return o;
  }

  json to_json() const {
    return {{"method", method},           {"estimator", estimator}, {"covariates", covariates},
            {"alpha", alpha},             {"alternative", alternative}, {"cov_variant", cov_variant},
            {"df_rule", df_rule},         {"residuals", residuals}, {"ridge", ridge},
            {"delta0", delta0}};
  }
};

struct Context {
  std::ostream& out;
  std::ostream& err;
  std::vector<std::string> args;
  json inputs = json::object();
  json config = json::object();
  std::string subcommand;
  std::optional<std::uint64_t> seed;

  std::string read_input(const std::string& path) {
    std::string bytes = slurp(path);
    inputs[path] = checksum(bytes);
    return bytes;
  }

  // Writes the artifact and its manifest, or prints to stdout without --out.
  void emit(const std::string& path, const std::string& content) {
    if (path.empty()) {
      out << content;
      return;
    }
    {
      std::ofstream f(path, std::ios::binary);
      if (!f) fail(ErrorKind::validation, "cannot write '" + path + "'");
      f << content;
    }
    json m = {{"tool", "pwrd"},        {"version", PWRD_VERSION}, {"subcommand", subcommand},
              {"args", args},          {"config", config},        {"inputs", inputs},
              {"outputs", {{path, checksum(content)}}}};
    m["seed"] = seed ? json(*seed) : json(nullptr);
    std::ofstream f(path + ".manifest.json", std::ios::binary);
    f << m.dump(2) << "\n";
  }
};

PanelDataset load_panel(Context& ctx, const std::string& path, const std::string& schema_path) {
  std::string bytes = ctx.read_input(path);
  ColumnSchema schema = ColumnSchema::canonical();
  if (!schema_path.empty()) schema = ColumnSchema::from_json(json::parse(ctx.read_input(schema_path)));
  std::istringstream in(bytes);
  IngestResult r = ingest_panel(in, schema);
  for (const auto& w : r.report.warnings) ctx.err << "warning: " << w << "\n";
  if (!r.report.dropped_rows.empty()) {
    ctx.err << "warning: dropped " << r.report.dropped_rows.size() << " row(s) with missing outcome\n";
  }
  return std::move(r.panel);
}

struct Summary {
  Eigen::VectorXd delta_hat, p0, delta0;
  Eigen::MatrixXd cov;
  double df = std::numeric_limits<double>::infinity();
};

Summary load_summary(Context& ctx, const std::string& path) {
  json j;
  try {
    j = json::parse(ctx.read_input(path));
  } catch (const json::exception& e) {
    fail(ErrorKind::validation, "invalid JSON in '" + path + "': " + e.what());
  }
  Summary s;
  if (!j.contains("delta_hat") || !j.contains("p0")) {
    fail(ErrorKind::validation, "summary needs delta_hat and p0");
  }
  s.delta_hat = json_vec(j["delta_hat"], "delta_hat");
  s.p0 = json_vec(j["p0"], "p0");
  const Eigen::Index G = s.delta_hat.size();
  if (j.contains("cov")) {
    const auto& rows = j["cov"];
    if (!rows.is_array() || rows.size() != static_cast<size_t>(G)) fail(ErrorKind::validation, "cov must be G x G");
    s.cov.resize(G, G);
    for (Eigen::Index i = 0; i < G; ++i) {
      Eigen::VectorXd r = json_vec(rows[i], "cov row");
      if (r.size() != G) fail(ErrorKind::validation, "cov must be G x G");
      s.cov.row(i) = r.transpose();
    }
  } else if (j.contains("se")) {
    Eigen::VectorXd se = json_vec(j["se"], "se");
    if (se.size() != G) fail(ErrorKind::validation, "se must have one entry per estimate");
    s.cov = se.array().square().matrix().asDiagonal();
  } else {
    fail(ErrorKind::validation, "summary needs cov or se");
  }
  if (j.contains("delta0")) s.delta0 = json_vec(j["delta0"], "delta0");
  if (j.contains("df")) s.df = j["df"].get<double>();
  return s;
}

json external_json(const ExternalAggregation& r) {
  json j = weights_json(r.weights);
  j["slope"] = r.slope;
  j["test"] = test_json(r.test);
  return j;
}

std::string table(const AnalysisReport& r) {
  std::ostringstream s;
  char buf[256];
  if (r.effects) {
    std::snprintf(buf, sizeof buf, "%4s %6s %5s %4s %6s %12s %8s %8s\n", "g", "cohort", "entry", "year", "n",
                  "delta_hat", "p0", "omega");
    s << buf;
    for (size_t k = 0; k < r.effects->size(); ++k) {
      const auto& key = r.effects->keys[k];
      const double p0 = r.p0_aligned.size() ? r.p0_aligned[k] : std::nan("");
      std::snprintf(buf, sizeof buf, "%4d %6d %5d %4d %6d %12.5f %8.4f %8.4f\n", r.effects->groups[k], key.cohort,
                    key.entry_grade, key.year, r.effects->n[k], r.effects->delta_hat[k], p0, r.weights->omega[k]);
      s << buf;
    }
  }
  if (r.mixed) {
    const auto& vc = r.mixed->components;
    std::snprintf(buf, sizeof buf, "sigma2_mu %.5g  sigma2_eps %.5g  icc %.4f  se_model %.5g\n", vc.sigma2_mu,
                  vc.sigma2_eps, vc.icc, r.mixed->se_model);
    s << buf;
  }
  if (r.exit) {
    std::snprintf(buf, sizeof buf, "exit rows %d (treated %d, control %d)\n", r.exit->n_rows, r.exit->n_treated,
                  r.exit->n_control);
    s << buf;
  }
  std::snprintf(buf, sizeof buf, "method %s  estimate %.6g  se %.6g  t %.4f  df %.3g  p %.4g  slope %.5g\n",
                to_string(r.method).c_str(), r.test.estimate, r.test.se, r.test.t_stat, r.test.df, r.test.p_value,
                r.slope);
  s << buf;
  if (std::isfinite(r.relative_efficiency)) {
    std::snprintf(buf, sizeof buf, "relative efficiency vs flat %.4f\n", r.relative_efficiency);
    s << buf;
  }
  return s.str();
}

json report_json(const AnalysisReport& r, double alpha) {
  json j;
  j["method"] = to_string(r.method);
  j["test"] = test_json(r.test);
  j["reject"] = r.test.rejects(alpha);
  j["alpha"] = alpha;
  j["slope"] = std::isfinite(r.slope) ? json(r.slope) : json(nullptr);
  j["relative_efficiency"] = std::isfinite(r.relative_efficiency) ? json(r.relative_efficiency) : json(nullptr);
  if (r.effects) {
    json groups = json::array();
    for (size_t k = 0; k < r.effects->size(); ++k) {
      const auto& key = r.effects->keys[k];
      json g = {{"g", r.effects->groups[k]},          {"cohort", key.cohort},
                {"entry_grade", key.entry_grade},     {"year", key.year},
                {"n", r.effects->n[k]},               {"n_treated", r.effects->n_treated[k]},
                {"n_control", r.effects->n_control[k]}, {"delta_hat", r.effects->delta_hat[k]},
                {"omega", r.weights->omega[k]}};
      g["p0"] = r.p0_aligned.size() ? json(r.p0_aligned[k]) : json(nullptr);
      groups.push_back(g);
    }
    j["groups"] = groups;
    json ex = json::array();
    for (const auto& e : r.effects->excluded) ex.push_back({{"g", e.g}, {"reason", e.reason}});
    j["excluded"] = ex;
    j["weights"] = weights_json(*r.weights);
    j["covariance"] = {{"variant", to_string(r.cov->variant)},
                       {"residuals", to_string(r.cov->residuals)},
                       {"n_clusters", r.cov->n_clusters},
                       {"sigma", mat_json(r.cov->sigma_hat)}};
  }
  if (r.mixed) {
    const auto& m = *r.mixed;
    j["mixed"] = {{"tau_hat", m.tau_hat},
                  {"se_model", m.se_model},
                  {"se_cluster_robust", m.se_cr},
                  {"sigma2_mu", m.components.sigma2_mu},
                  {"sigma2_eps", m.components.sigma2_eps},
                  {"icc", m.components.icc},
                  {"fixed_effects", m.fixed_effects}};
  }
  if (r.exit) {
    const auto& e = *r.exit;
    j["exit"] = {{"estimate", e.estimate}, {"se", e.se},         {"n_rows", e.n_rows},
                 {"n_treated", e.n_treated}, {"n_control", e.n_control}, {"n_clusters", e.n_clusters}};
  }
  j["warnings"] = r.warnings;
  return j;
}

Scenario load_scenario(Context& ctx, const std::string& path) {
  if (path.empty()) return Scenario::default_layout();
  try {
    return Scenario::from_json(json::parse(ctx.read_input(path)));
  } catch (const json::exception& e) {
    fail(ErrorKind::validation, "invalid JSON in '" + path + "': " + e.what());
  }
}

int default_workers() {
  const char* env = std::getenv("PWRD_WORKERS");
  if (!env || !*env) return 1;
  const int w = std::atoi(env);
  if (w < 1) fail(ErrorKind::validation, "PWRD_WORKERS must be a positive integer");
  return w;
}

int replay(Context& ctx, const std::string& manifest_path);

int dispatch(Context& ctx) {
  CLI::App app{"PWRD aggregation, comparators and power simulation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", PWRD_VERSION);

  // analyze
  auto* analyze = app.add_subcommand("analyze", "analyze a panel, or summary statistics with --summary");
  std::string a_panel, a_schema, a_summary, a_out;
  AnalysisFlags a_flags;
  analyze->add_option("panel", a_panel, "panel CSV");
  analyze->add_option("--schema", a_schema, "column schema JSON");
  analyze->add_option("--summary", a_summary, "summary JSON {delta_hat, cov | se, p0, delta0?, df?}");
  analyze->add_option("--out", a_out, "report JSON path");
  a_flags.add_to(analyze, true);

  // weights
  auto* weights = app.add_subcommand("weights", "PWRD weights from summary JSON or a panel");
  std::string w_input, w_schema, w_out;
  AnalysisFlags w_flags;
  weights->add_option("input", w_input, "summary JSON or panel CSV")->required();
  weights->add_option("--schema", w_schema, "column schema JSON for a panel input");
  weights->add_option("--out", w_out, "output JSON path");
  w_flags.add_to(weights, false);

  // simulate
  auto* simulate = app.add_subcommand("simulate", "generate one panel as CSV");
  std::string s_scenario, s_out, s_effect;
  std::uint64_t s_seed = 0, s_rep = 0;
  double s_tau = 0.0, s_p = 0.0;
  bool s_sd = false, s_defer = false;
  simulate->add_option("--scenario", s_scenario, "scenario JSON (default: 52-cluster layout)");
  auto* s_seed_opt = simulate->add_option("--seed", s_seed, "override the scenario seed");
  simulate->add_option("--replicate", s_rep, "replicate index")->capture_default_str();
  auto* s_effect_opt = simulate->add_option("--effect", s_effect, "null, effect1, effect2 or effect3");
  auto* s_tau_opt = simulate->add_option("--tau", s_tau, "effect size (l for effect3)");
  auto* s_p_opt = simulate->add_option("--p", s_p, "effect2 spill fraction");
  simulate->add_flag("--sd-reading", s_sd, "effect3 spread is a standard deviation");
  simulate->add_flag("--defer", s_defer, "effects start the year after the first flag");
  simulate->add_option("--out", s_out, "CSV path");

  // power
  auto* power = app.add_subcommand("power", "Monte Carlo power by method");
  std::string p_scenario, p_out, p_effect;
  std::vector<std::string> p_methods = {"pwrd", "flat", "mixed", "exit"};
  std::vector<double> p_grid, p_icc_grid, p_p_grid;
  std::uint64_t p_seed = 0;
  int p_reps = 1000, p_workers = 0;
  double p_tau = 0.0;
  AnalysisFlags p_flags;
  power->add_option("--scenario", p_scenario, "scenario JSON (default: 52-cluster layout)");
  power->add_option("--methods", p_methods, "methods to compare")->delimiter(',')->capture_default_str();
  power->add_option("--reps", p_reps, "replicates per setting")->capture_default_str();
  power->add_option("--workers", p_workers, "worker threads (default: PWRD_WORKERS or 1)");
  auto* p_seed_opt = power->add_option("--seed", p_seed, "override the scenario seed");
  auto* p_effect_opt = power->add_option("--effect", p_effect, "effect regime for --grid");
  power->add_option("--grid", p_grid, "effect levels")->delimiter(',');
  auto* icc_opt = power->add_option("--icc-grid", p_icc_grid, "ICC sweep at --tau")->delimiter(',');
  auto* pg_opt = power->add_option("--p-grid", p_p_grid, "effect2 spill sweep at --tau")->delimiter(',');
  auto* p_tau_opt = power->add_option("--tau", p_tau, "fixed effect for sweeps");
  icc_opt->excludes(pg_opt);
  power->add_option("--out", p_out, "CSV path");
  p_flags.add_to(power, false);

  // replay
  auto* rep = app.add_subcommand("replay", "re-run a manifest and compare outputs");
  std::string r_manifest;
  rep->add_option("manifest", r_manifest, "manifest JSON")->required();

  std::vector<std::string> argv_rev(ctx.args.rbegin(), ctx.args.rend());
  try {
    app.parse(argv_rev);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      ctx.out << (dynamic_cast<const CLI::CallForVersion*>(&e) ? std::string(PWRD_VERSION) + "\n" : app.help());
      return 0;
    }
    ctx.err << "error: " << e.what() << "\n";
    return static_cast<int>(ErrorKind::validation);
  }

  if (analyze->parsed()) {
    ctx.subcommand = "analyze";
    ctx.config = a_flags.to_json();
    if (!a_summary.empty()) {
      if (!a_panel.empty()) fail(ErrorKind::validation, "give a panel or --summary, not both");
      Summary s = load_summary(ctx, a_summary);
      const auto alt = alternative_from_string(a_flags.alternative);
      auto r = aggregate_external(s.delta_hat, s.cov, s.p0, s.delta0, alt, s.df,
                                  PwrdOptions{a_flags.ridge});
      json j = external_json(r);
      j["reject"] = r.test.rejects(a_flags.alpha);
      char buf[200];
      std::snprintf(buf, sizeof buf, "estimate %.6g  se %.6g  t %.4f  p %.4g  slope %.5g\n", r.test.estimate,
                    r.test.se, r.test.t_stat, r.test.p_value, r.slope);
      if (a_out.empty()) {
        ctx.out << buf << j.dump(2) << "\n";
      } else {
        ctx.out << buf;
        ctx.emit(a_out, j.dump(2) + "\n");
      }
      return 0;
    }
    if (a_panel.empty()) fail(ErrorKind::validation, "analyze needs a panel CSV or --summary");
    PanelDataset panel = load_panel(ctx, a_panel, a_schema);
    const Method m = method_from_string(a_flags.method);
    AnalysisReport r = pwrd::analyze(panel, m, a_flags.options());
    for (const auto& w : r.warnings) ctx.err << "warning: " << w << "\n";
    ctx.out << table(r);
    if (!a_out.empty()) ctx.emit(a_out, report_json(r, a_flags.alpha).dump(2) + "\n");
    return 0;
  }

  if (weights->parsed()) {
    ctx.subcommand = "weights";
    ctx.config = w_flags.to_json();
    json j;
    const bool is_json = w_input.size() >= 5 && w_input.substr(w_input.size() - 5) == ".json";
    if (is_json) {
      Summary s = load_summary(ctx, w_input);
      j = external_json(aggregate_external(s.delta_hat, s.cov, s.p0, s.delta0,
                                           alternative_from_string(w_flags.alternative), s.df,
                                           PwrdOptions{w_flags.ridge}));
    } else {
      PanelDataset panel = load_panel(ctx, w_input, w_schema);
      AnalysisReport r = pwrd::analyze(panel, Method::pwrd, w_flags.options());
      for (const auto& w : r.warnings) ctx.err << "warning: " << w << "\n";
      j = weights_json(*r.weights);
      j["slope"] = r.slope;
      j["test"] = test_json(r.test);
    }
    ctx.emit(w_out, j.dump(2) + "\n");
    return 0;
  }

  if (simulate->parsed()) {
    ctx.subcommand = "simulate";
    Scenario s = load_scenario(ctx, s_scenario);
    if (*s_seed_opt) s.seed = s_seed;
    EffectSpec e = s.effect;
    if (*s_effect_opt) e.regime = regime_from_string(s_effect);
    if (*s_tau_opt) e.tau = s_tau;
    if (*s_p_opt) e.p = s_p;
    e.sd_reading = e.sd_reading || s_sd;
    e.defer = e.defer || s_defer;
    s.effect = e;
    s.validate();
    ctx.seed = s.seed;
    ctx.config = {{"scenario", s.to_json()}, {"replicate", s_rep}};
    PanelDataset panel = apply_effect(generate_panel(s, s_rep), e, s.seed, s_rep);
    std::ostringstream csv;
    write_panel_csv(panel, csv);
    ctx.emit(s_out, csv.str());
    return 0;
  }

  if (power->parsed()) {
    ctx.subcommand = "power";
    Scenario s = load_scenario(ctx, p_scenario);
    if (*p_seed_opt) s.seed = p_seed;
    if (*p_effect_opt) s.effect.regime = regime_from_string(p_effect);
    if (*p_tau_opt) s.effect.tau = p_tau;
    s.validate();
    PowerOptions o;
    o.methods.clear();
    for (const auto& m : p_methods) o.methods.push_back(method_from_string(m));
    o.n_reps = p_reps;
    o.alpha = p_flags.alpha;
    o.workers = p_workers > 0 ? p_workers : default_workers();
    o.analysis = p_flags.options();
    ctx.seed = s.seed;
    ctx.config = p_flags.to_json();
    ctx.config["scenario"] = s.to_json();
    ctx.config["methods"] = p_methods;
    ctx.config["reps"] = p_reps;
    ctx.config["workers"] = o.workers;
    // Pin the worker count so a replay does not depend on the environment.
    if (p_workers <= 0) {
      ctx.args.push_back("--workers");
      ctx.args.push_back(std::to_string(o.workers));
    }
    PowerResult r;
    if (*icc_opt) {
      if (!*p_tau_opt && s.effect.regime != Regime::null && s.effect.tau == 0.0) {
        ctx.err << "warning: ICC sweep at effect 0\n";
      }
      ctx.config["icc_grid"] = p_icc_grid;
      r = icc_sweep(s, p_icc_grid, o);
    } else if (*pg_opt) {
      if (!*p_tau_opt) fail(ErrorKind::validation, "--p-grid needs --tau");
      ctx.config["p_grid"] = p_p_grid;
      r = negative_effect_sweep(s, p_tau, p_p_grid, o);
    } else {
      std::vector<double> grid = p_grid;
      if (grid.empty()) grid = {s.effect.regime == Regime::null ? 0.0 : s.effect.tau};
      ctx.config["grid"] = grid;
      r = estimate_power(s, grid, o);
    }
    for (const auto& w : r.warnings) ctx.err << "warning: " << w << "\n";
    std::ostringstream csv;
    write_power_csv(r, csv);
    ctx.emit(p_out, csv.str());
    return 0;
  }

  if (rep->parsed()) return replay(ctx, r_manifest);
  return static_cast<int>(ErrorKind::validation);
}

int replay(Context& ctx, const std::string& manifest_path) {
  json m = parse_json(manifest_path);
  if (!m.contains("args") || !m.contains("inputs") || !m.contains("outputs")) {
    fail(ErrorKind::validation, "'" + manifest_path + "' is not a run manifest");
  }
  for (const auto& [path, sum] : m["inputs"].items()) {
    if (checksum(slurp(path)) != sum.get<std::string>()) {
      fail(ErrorKind::validation, "input '" + path + "' changed since the manifest was written");
    }
  }
  std::ostringstream sink;
  Context inner{sink, ctx.err, m["args"].get<std::vector<std::string>>()};
  const int code = dispatch(inner);
  if (code != 0) return code;
  for (const auto& [path, sum] : m["outputs"].items()) {
    const std::string now = checksum(slurp(path));
    if (now != sum.get<std::string>()) {
      ctx.err << "error: '" << path << "' differs from the manifest (" << now << ")\n";
      return static_cast<int>(ErrorKind::numerical);
    }
    ctx.out << "reproduced " << path << " " << now << "\n";
  }
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Context ctx{out, err, args};
  try {
    return dispatch(ctx);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const json::exception& e) {
    err << "error: " << e.what() << "\n";
    return static_cast<int>(ErrorKind::validation);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return static_cast<int>(ErrorKind::numerical);
  }
}

}  // namespace pwrd::cli
