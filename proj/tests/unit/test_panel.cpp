#include <sstream>

#include "doctest.h"
#include "helpers.hpp"
#include "pwrd/error.hpp"
#include "pwrd/panel.hpp"
#include "pwrd/sim.hpp"

using namespace pwrd;

namespace {

const char* kMinimal =
    "unit,cluster,treatment,cohort,grade,year,outcome,tested_in\n"
    "a,s1,1,1,0,1,5,0\n"
    "b,s1,1,1,0,1,7,1\n"
    "c,s2,0,1,0,1,4,0\n"
    "d,s2,0,1,0,1,6,1\n";

int error_kind(const std::string& text, const ColumnSchema& schema = ColumnSchema::canonical()) {
  try {
    testutil::ingest(text, schema);
  } catch (const Error& e) {
    return e.exit_code();
  }
  return 0;
}

std::string error_text(const std::string& text) {
  try {
    testutil::ingest(text);
  } catch (const Error& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST_CASE("minimal csv gives one group and two clusters") {
  auto r = testutil::ingest(kMinimal);
  CHECK(r.panel.size() == 4);
  CHECK(r.panel.groups().size() == 1);
  CHECK(r.panel.n_clusters() == 2);
  CHECK(r.panel.has_tested_in());
  CHECK(r.report.dropped_rows.empty());
}

TEST_CASE("treatment varying within a cluster is rejected") {
  std::string text =
      "unit,cluster,treatment,cohort,grade,year,outcome\n"
      "a,s1,1,1,0,1,5\n"
      "b,s1,0,1,0,1,7\n";
  CHECK(error_kind(text) == 2);
  CHECK(error_text(text).find("treatment varies within cluster") != std::string::npos);
  CHECK(error_text(text).find("row 3") != std::string::npos);
}

TEST_CASE("ingestion errors") {
  SUBCASE("missing column") {
    CHECK(error_text("unit,cluster,treatment,cohort,grade,outcome\na,s,1,1,0,1\n").find("'year'") !=
          std::string::npos);
  }
  SUBCASE("duplicate unit-year") {
    std::string t = "unit,cluster,treatment,cohort,grade,year,outcome\na,s,1,1,0,1,5\na,s,1,1,0,1,6\n";
    CHECK(error_text(t).find("duplicate (unit, year)") != std::string::npos);
  }
  SUBCASE("non-binary treatment") {
    std::string t = "unit,cluster,treatment,cohort,grade,year,outcome\na,s,2,1,0,1,5\n";
    CHECK(error_text(t).find("non-binary treatment") != std::string::npos);
  }
  SUBCASE("year below one") {
    std::string t = "unit,cluster,treatment,cohort,grade,year,outcome\na,s,1,1,0,0,5\n";
    CHECK(error_kind(t) == 2);
  }
  SUBCASE("unit switching clusters") {
    std::string t = "unit,cluster,treatment,cohort,grade,year,outcome\na,s,1,1,0,1,5\na,r,1,1,1,2,5\n";
    CHECK(error_text(t).find("more than one cluster") != std::string::npos);
  }
  SUBCASE("flag turning off") {
    std::string t =
        "unit,cluster,treatment,cohort,grade,year,outcome,tested_in\n"
        "a,s,1,1,0,2,5,0\na,s,1,1,0,1,5,1\n";
    CHECK(error_text(t).find("switches from 1 back to 0") != std::string::npos);
  }
  SUBCASE("malformed quoting") {
    CHECK(error_kind("unit,cluster\n\"a,b\n") == 2);
  }
}

TEST_CASE("missing outcomes are dropped and reported") {
  std::string t =
      "unit,cluster,treatment,cohort,grade,year,outcome\n"
      "a,s1,1,1,0,1,5\n"
      "b,s1,1,1,0,1,\n"
      "c,s2,0,1,0,1,4\n";
  auto r = testutil::ingest(t);
  CHECK(r.panel.size() == 2);
  REQUIRE(r.report.dropped_rows.size() == 1);
  CHECK(r.report.dropped_rows[0] == 3);
  CHECK_FALSE(r.panel.has_tested_in());
}

TEST_CASE("schema mapping and threshold rule derive monotone flags") {
  auto schema = ColumnSchema::from_json(nlohmann::json::parse(R"({
    "columns": {"unit": "id", "cluster": "school", "treatment": "z", "cohort": "c",
                "grade": "gr", "year": "k", "outcome": "score"},
    "threshold_rule": {"score_column": "score", "cutoffs": {"0": 10, "1": 20}}
  })"));
  std::string t =
      "id,school,z,c,gr,k,score\n"
      "a,s1,1,1,0,1,9\n"
      "a,s1,1,1,1,2,50\n"
      "b,s2,0,1,0,1,11\n"
      "b,s2,0,1,1,2,15\n";
  auto r = testutil::ingest(t, schema);
  CHECK(r.report.tested_in_derived);
  CHECK(r.panel[0].tested_in);
  CHECK(r.panel[1].tested_in);  // persists after recovery
  CHECK_FALSE(r.panel[2].tested_in);
  CHECK(r.panel[3].tested_in);
}

TEST_CASE("group catalog order and totals") {
  Scenario s = Scenario::default_layout();
  auto panel = generate_panel(s, 0);
  auto cat = derive_groups(panel);
  CHECK(cat.size() == 16);
  int cohort1 = 0;
  long total = 0;
  for (size_t i = 0; i < cat.size(); ++i) {
    total += cat[i].n;
    if (cat[i].cohort == 1) ++cohort1;
    if (i) {
      auto a = std::tie(cat[i - 1].cohort, cat[i - 1].entry_grade, cat[i - 1].year);
      auto b = std::tie(cat[i].cohort, cat[i].entry_grade, cat[i].year);
      CHECK(a < b);
    }
  }
  CHECK(cohort1 == 10);
  CHECK(total == static_cast<long>(panel.size()));
  // Group sizes follow the generator configuration.
  for (const auto& e : cat) {
    int units = 0;
    for (const auto& c : s.cohorts) {
      if (c.cohort == e.cohort) units = c.units_per_cluster.at(e.entry_grade);
    }
    CHECK(e.n == units * s.n_clusters);
  }
}

TEST_CASE("single group catalog") {
  auto r = testutil::ingest(kMinimal);
  auto cat = derive_groups(r.panel);
  REQUIRE(cat.size() == 1);
  CHECK(cat[0].n == 4);
  CHECK(derive_groups(PanelDataset()).empty());
}

TEST_CASE("export and re-ingest round trip") {
  Scenario s = Scenario::single_cohort(6, 3);
  auto panel = generate_panel(s, 4);
  std::ostringstream out;
  write_panel_csv(panel, out);
  auto back = testutil::ingest(out.str()).panel;
  REQUIRE(back.size() == panel.size());
  for (size_t i = 0; i < panel.size(); ++i) {
    const auto& a = panel[i];
    const auto& b = back[i];
    CHECK(panel.unit_label(a.unit) == back.unit_label(b.unit));
    CHECK(panel.cluster_label(a.cluster) == back.cluster_label(b.cluster));
    CHECK(panel.block_label(a.block) == back.block_label(b.block));
    CHECK(a.treatment == b.treatment);
    CHECK(a.cohort == b.cohort);
    CHECK(a.grade == b.grade);
    CHECK(a.year == b.year);
    CHECK(a.outcome == b.outcome);
    CHECK(a.tested_in == b.tested_in);
  }
  std::ostringstream again;
  write_panel_csv(back, again);
  CHECK(again.str() == out.str());
}

TEST_CASE("schema json round trip") {
  ColumnSchema s;
  s.unit = "student";
  s.covariates = {"x1"};
  s.threshold_rule = ThresholdRule{"pre", {{0, -1.5}, {1, 2.0}}};
  auto back = ColumnSchema::from_json(s.to_json());
  CHECK(back.unit == "student");
  CHECK(back.covariates == s.covariates);
  REQUIRE(back.threshold_rule);
  CHECK(back.threshold_rule->cutoffs == s.threshold_rule->cutoffs);
}
