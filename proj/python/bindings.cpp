#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <limits>
#include <sstream>

#include "json.hpp"
#include "pwrd/analysis.hpp"
#include "pwrd/error.hpp"
#include "pwrd/panel.hpp"
#include "pwrd/sim.hpp"
#include "pwrd/weights.hpp"

namespace py = pybind11;
using namespace pwrd;

namespace {

py::dict weights_dict(const AggregationWeights& w) {
  py::dict d;
  d["scheme"] = to_string(w.scheme);
  d["omega"] = w.omega;
  d["clipped_groups"] = w.clipped_groups;
  d["kkt_passed"] = w.kkt_passed;
  d["used_fallback"] = w.used_fallback;
  d["ridge"] = w.ridge;
  d["notes"] = w.notes;
  return d;
}

py::dict test_dict(const AggregatedTest& t) {
  py::dict d;
  d["estimate"] = t.estimate;
  d["null_value"] = t.null_value;
  d["se"] = t.se;
  d["t"] = t.t_stat;
  d["df"] = t.df;
  d["p"] = t.p_value;
  d["alternative"] = to_string(t.alternative);
  return d;
}

AnalysisOptions make_options(const std::string& estimator, const std::vector<std::string>& covariates,
                             const std::string& cov_variant, const std::string& df_rule,
                             const std::string& residuals, const std::string& alternative, bool ridge,
                             const std::optional<Eigen::VectorXd>& delta0) {
  AnalysisOptions o;
  o.effect_method = effect_method_from_string(estimator);
  o.covariates = covariates;
  o.variant = cov_variant_from_string(cov_variant);
  o.df_rule = df_rule_from_string(df_rule);
  o.residuals = residual_source_from_string(residuals);
  o.alternative = alternative_from_string(alternative);
  o.ridge = ridge;
  if (delta0) o.delta0 = *delta0;
  return o;
}

py::list power_rows(const PowerResult& r) {
  py::list rows;
  for (const auto& row : r.rows) {
    py::dict d;
    d["method"] = to_string(row.method);
    d["regime"] = to_string(row.regime);
    d["effect_level"] = row.effect_level;
    d["icc"] = row.icc;
    d["p_spill"] = row.p_spill;
    d["power"] = row.power;
    d["mc_se"] = row.mc_se;
    d["n_reps"] = row.n_reps;
    d["rejections"] = row.rejections;
    d["excluded"] = row.excluded;
    d["seed"] = row.seed;
    rows.append(d);
  }
  return rows;
}

PowerOptions power_options(const std::vector<std::string>& methods, int n_reps, double alpha, int workers) {
  PowerOptions o;
  o.methods.clear();
  for (const auto& m : methods) o.methods.push_back(method_from_string(m));
  o.n_reps = n_reps;
  o.alpha = alpha;
  o.workers = workers;
  return o;
}

Scenario scenario_from(const std::string& text) {
  if (text.empty()) return Scenario::default_layout();
  return Scenario::from_json(nlohmann::json::parse(text));
}

}  // namespace

PYBIND11_MODULE(_pwrd, m) {
  m.doc() = "PWRD aggregation of per-group ITT estimates";

  static py::exception<Error> exc(m, "PwrdError", PyExc_ValueError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::set_error(exc, (std::string(e.what()) + " [exit code " + std::to_string(e.exit_code()) + "]").c_str());
    }
  });

  m.def(
      "pwrd_weights",
      [](const Eigen::MatrixXd& sigma, const Eigen::VectorXd& p0, bool ridge) {
        return weights_dict(pwrd_weights(sigma, p0, PwrdOptions{ridge}));
      },
      py::arg("sigma"), py::arg("p0"), py::arg("ridge") = false);
  m.def("flat_weights", [](const std::vector<int>& n) { return flat_weights(n).omega; }, py::arg("n"));
  m.def(
      "aggregate_test",
      [](const Eigen::VectorXd& delta_hat, const Eigen::MatrixXd& cov, double df, const Eigen::VectorXd& omega,
         std::optional<Eigen::VectorXd> delta0, const std::string& alternative) {
        return test_dict(aggregate_test(delta_hat, cov, df, omega, delta0 ? *delta0 : Eigen::VectorXd(),
                                        alternative_from_string(alternative)));
      },
      py::arg("delta_hat"), py::arg("cov"), py::arg("df"), py::arg("omega"), py::arg("delta0") = py::none(),
      py::arg("alternative") = "greater");
  m.def("test_slope", &test_slope, py::arg("omega"), py::arg("p0"), py::arg("sigma"));
  m.def("pitman_relative_efficiency", &pitman_relative_efficiency, py::arg("w1"), py::arg("w2"), py::arg("p0"),
        py::arg("sigma"));
  m.def(
      "aggregate_external",
      [](const Eigen::VectorXd& delta_hat, const Eigen::MatrixXd& cov, const Eigen::VectorXd& p0,
         std::optional<Eigen::VectorXd> delta0, const std::string& alternative, double df, bool ridge) {
        auto r = aggregate_external(delta_hat, cov, p0, delta0 ? *delta0 : Eigen::VectorXd(),
                                    alternative_from_string(alternative), df, PwrdOptions{ridge});
        py::dict d = weights_dict(r.weights);
        d["slope"] = r.slope;
        d["test"] = test_dict(r.test);
        return d;
      },
      py::arg("delta_hat"), py::arg("cov"), py::arg("p0"), py::arg("delta0") = py::none(),
      py::arg("alternative") = "greater", py::arg("df") = std::numeric_limits<double>::infinity(),
      py::arg("ridge") = false);

  py::class_<PanelDataset>(m, "Panel")
      .def_static(
          "from_csv",
          [](const std::string& text, const std::string& schema) {
            std::istringstream in(text);
            ColumnSchema s = schema.empty() ? ColumnSchema::canonical()
                                            : ColumnSchema::from_json(nlohmann::json::parse(schema));
            return ingest_panel(in, s).panel;
          },
          py::arg("text"), py::arg("schema") = "")
      .def("__len__", &PanelDataset::size)
      .def_property_readonly("n_units", &PanelDataset::n_units)
      .def_property_readonly("n_clusters", &PanelDataset::n_clusters)
      .def_property_readonly("has_tested_in", &PanelDataset::has_tested_in)
      .def("groups",
           [](const PanelDataset& p) {
             py::list out;
             for (const auto& g : p.groups()) {
               py::dict d;
               d["g"] = g.g;
               d["cohort"] = g.key.cohort;
               d["entry_grade"] = g.key.entry_grade;
               d["year"] = g.key.year;
               d["n"] = g.n;
               d["n_treated"] = g.n_treated;
               d["n_control"] = g.n_control;
               out.append(d);
             }
             return out;
           })
      .def("to_csv", [](const PanelDataset& p) {
        std::ostringstream s;
        write_panel_csv(p, s);
        return s.str();
      });

  m.def(
      "analyze",
      [](const PanelDataset& panel, const std::string& method, const std::string& estimator,
         const std::vector<std::string>& covariates, const std::string& cov_variant, const std::string& df_rule,
         const std::string& residuals, const std::string& alternative, bool ridge,
         std::optional<Eigen::VectorXd> delta0) {
        auto r = analyze(panel, method_from_string(method),
                         make_options(estimator, covariates, cov_variant, df_rule, residuals, alternative, ridge,
                                      delta0));
        py::dict d;
        d["method"] = to_string(r.method);
        d["test"] = test_dict(r.test);
        d["slope"] = r.slope;
        d["relative_efficiency"] = r.relative_efficiency;
        d["warnings"] = r.warnings;
        if (r.effects) {
          d["groups"] = r.effects->groups;
          d["delta_hat"] = r.effects->delta_hat;
          d["p0"] = r.p0_aligned;
          d["sigma"] = r.cov->sigma_hat;
          d["weights"] = weights_dict(*r.weights);
        }
        if (r.mixed) {
          d["icc"] = r.mixed->components.icc;
          d["sigma2_mu"] = r.mixed->components.sigma2_mu;
          d["sigma2_eps"] = r.mixed->components.sigma2_eps;
          d["se_model"] = r.mixed->se_model;
        }
        return d;
      },
      py::arg("panel"), py::arg("method") = "pwrd", py::arg("estimator") = "diffmeans",
      py::arg("covariates") = std::vector<std::string>{}, py::arg("cov_variant") = "cr2",
      py::arg("df_rule") = "clusters-2", py::arg("residuals") = "both-arms", py::arg("alternative") = "greater",
      py::arg("ridge") = false, py::arg("delta0") = py::none());

  m.def("default_scenario", [] { return Scenario::default_layout().to_json().dump(); });
  m.def("normalize_scenario", [](const std::string& text) { return scenario_from(text).to_json().dump(); },
        py::arg("scenario"));
  m.def(
      "simulate",
      [](const std::string& scenario, std::uint64_t replicate, bool with_effect) {
        Scenario s = scenario_from(scenario);
        PanelDataset p = generate_panel(s, replicate);
        return with_effect ? apply_effect(p, s.effect, s.seed, replicate) : p;
      },
      py::arg("scenario") = "", py::arg("replicate") = 0, py::arg("with_effect") = true);
  m.def(
      "expected_year_proportions",
      [](const std::string& scenario) { return expected_year_proportions(scenario_from(scenario)); },
      py::arg("scenario") = "");
  m.def(
      "estimate_power",
      [](const std::string& scenario, const std::vector<double>& grid, const std::vector<std::string>& methods,
         int n_reps, double alpha, int workers) {
        Scenario s = scenario_from(scenario);
        PowerOptions o = power_options(methods, n_reps, alpha, workers);
        PowerResult r;
        {
          py::gil_scoped_release release;
          r = estimate_power(s, grid, o);
        }
        return py::make_tuple(power_rows(r), r.warnings);
      },
      py::arg("scenario"), py::arg("grid"), py::arg("methods"), py::arg("n_reps"), py::arg("alpha"),
      py::arg("workers"));
  m.def(
      "icc_sweep",
      [](const std::string& scenario, const std::vector<double>& iccs, const std::vector<std::string>& methods,
         int n_reps, double alpha, int workers) {
        Scenario s = scenario_from(scenario);
        PowerOptions o = power_options(methods, n_reps, alpha, workers);
        PowerResult r;
        {
          py::gil_scoped_release release;
          r = icc_sweep(s, iccs, o);
        }
        return py::make_tuple(power_rows(r), r.warnings);
      },
      py::arg("scenario"), py::arg("iccs"), py::arg("methods"), py::arg("n_reps"), py::arg("alpha"),
      py::arg("workers"));
  m.def(
      "negative_effect_sweep",
      [](const std::string& scenario, double tau, const std::vector<double>& ps,
         const std::vector<std::string>& methods, int n_reps, double alpha, int workers) {
        Scenario s = scenario_from(scenario);
        PowerOptions o = power_options(methods, n_reps, alpha, workers);
        PowerResult r;
        {
          py::gil_scoped_release release;
          r = negative_effect_sweep(s, tau, ps, o);
        }
        return py::make_tuple(power_rows(r), r.warnings);
      },
      py::arg("scenario"), py::arg("tau"), py::arg("ps"), py::arg("methods"), py::arg("n_reps"), py::arg("alpha"),
      py::arg("workers"));
}
