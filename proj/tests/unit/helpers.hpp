#pragma once

#include <sstream>
#include <string>
#include <vector>

#include "pwrd/panel.hpp"

namespace testutil {

// Panel with one row per (unit, year); `rows` holds
// {unit, cluster, treatment, cohort, grade, year, outcome, tested_in}.
struct Row {
  int unit, cluster, treatment, cohort, grade, year;
  double outcome;
  bool tested_in;
};

inline pwrd::PanelDataset make_panel(const std::vector<Row>& rows, bool flags = true) {
  std::vector<pwrd::Observation> obs;
  for (const auto& r : rows) {
    pwrd::Observation o;
    o.unit = r.unit;
    o.cluster = r.cluster;
    o.treatment = r.treatment;
    o.cohort = r.cohort;
    o.grade = r.grade;
    o.year = r.year;
    o.outcome = r.outcome;
    o.tested_in = r.tested_in;
    obs.push_back(o);
  }
  return pwrd::PanelDataset(std::move(obs), {}, flags);
}

inline pwrd::IngestResult ingest(const std::string& text,
                                 const pwrd::ColumnSchema& schema = pwrd::ColumnSchema::canonical()) {
  std::istringstream in(text);
  return pwrd::ingest_panel(in, schema);
}

}  // namespace testutil
