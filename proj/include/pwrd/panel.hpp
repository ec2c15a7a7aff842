#pragma once

#include <compare>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace pwrd {

// One student-year record. Identifiers are ordinals into the dataset's label
// tables; cluster ordinals follow order of first appearance.
struct Observation {
  int unit = 0;
  int cluster = 0;
  int block = -1;  // -1 when no randomization block is recorded
  int treatment = 0;
  int cohort = 0;
  int grade = 0;
  int year = 1;  // follow-up year within the study, >= 1
  double outcome = 0.0;
  bool tested_in = false;
};

// Cohort-year cell. Entry grade is derived as grade - (year - 1), so cohort
// and grade jointly determine the cell.
struct GroupKey {
  int cohort = 0;
  int entry_grade = 0;
  int year = 1;

  auto operator<=>(const GroupKey&) const = default;
};

struct GroupInfo {
  int g = 0;  // ordinal in catalog order
  GroupKey key;
  int n = 0;
  int n_treated = 0;
  int n_control = 0;

  // Missing a treatment arm; no effect estimate is defined for the cell.
  bool degenerate() const { return n_treated == 0 || n_control == 0; }
};

class PanelDataset {
 public:
  struct Labels {
    std::vector<std::string> units;
    std::vector<std::string> clusters;
    std::vector<std::string> blocks;
  };

  PanelDataset() = default;

  // Validates the observation-level invariants and builds the group and
  // cluster indices. `source_rows`, when non-empty, names offending input
  // rows in error messages. Throws Error(validation).
  PanelDataset(std::vector<Observation> observations, Labels labels, bool has_tested_in,
               std::vector<std::string> covariate_names = {},
               std::vector<double> covariates = {}, std::span<const int> source_rows = {});

  std::span<const Observation> observations() const { return observations_; }
  const Observation& operator[](size_t i) const { return observations_[i]; }
  size_t size() const { return observations_.size(); }
  bool empty() const { return observations_.empty(); }

  // Catalog ordered by (cohort, entry grade, follow-up year).
  const std::vector<GroupInfo>& groups() const { return groups_; }
  std::span<const int> group_of() const { return group_of_; }
  std::optional<int> find_group(const GroupKey& key) const;

  int n_units() const { return n_units_; }
  int n_clusters() const { return static_cast<int>(cluster_treatment_.size()); }
  int cluster_treatment(int cluster) const { return cluster_treatment_[cluster]; }
  int cluster_size(int cluster) const { return cluster_size_[cluster]; }

  bool has_tested_in() const { return has_tested_in_; }

  const std::vector<std::string>& covariate_names() const { return covariate_names_; }
  size_t n_covariates() const { return covariate_names_.size(); }
  double covariate(size_t row, size_t k) const {
    return covariates_[row * covariate_names_.size() + k];
  }
  std::optional<size_t> covariate_index(const std::string& name) const;

  std::string unit_label(int unit) const;
  std::string cluster_label(int cluster) const;
  std::string block_label(int block) const;
  const Labels& labels() const { return labels_; }

  // Same structure with replaced outcomes; used when imposing effects.
  PanelDataset with_outcomes(std::vector<double> outcomes) const;

 private:
  void build_indices(std::span<const int> source_rows);

  std::vector<Observation> observations_;
  Labels labels_;
  bool has_tested_in_ = false;
  std::vector<std::string> covariate_names_;
  std::vector<double> covariates_;

  int n_units_ = 0;
  std::vector<int> cluster_treatment_;
  std::vector<int> cluster_size_;
  std::vector<GroupInfo> groups_;
  std::map<GroupKey, int> group_index_;
  std::vector<int> group_of_;
};

// Catalog entry as reported by derive_groups.
struct GroupCatalogEntry {
  int g = 0;
  int cohort = 0;
  int entry_grade = 0;
  int year = 1;
  int n = 0;
};

std::vector<GroupCatalogEntry> derive_groups(const PanelDataset& panel);

// Per-grade cutoffs used to derive tested_in from a score column when the
// input carries no flag column: flagged once score < cutoff for the grade,
// then for every later year of the same unit.
struct ThresholdRule {
  std::string score_column;
  std::map<int, double> cutoffs;
};

// Logical-to-physical column mapping for CSV ingestion.
struct ColumnSchema {
  std::string unit = "unit";
  std::string cluster = "cluster";
  std::optional<std::string> block;
  std::string treatment = "treatment";
  std::string cohort = "cohort";
  std::string grade = "grade";
  std::string year = "year";
  std::string outcome = "outcome";
  std::optional<std::string> tested_in;
  std::vector<std::string> covariates;
  std::optional<ThresholdRule> threshold_rule;

  // Layout produced by write_panel_csv.
  static ColumnSchema canonical();
  static ColumnSchema from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

struct IngestReport {
  std::vector<int> dropped_rows;  // source lines with missing outcome
  bool tested_in_derived = false;
  std::vector<std::string> warnings;
};

struct IngestResult {
  PanelDataset panel;
  IngestReport report;
};

// Throws Error(validation) naming the source line of the first violation.
IngestResult ingest_panel(std::istream& csv, const ColumnSchema& schema);

void write_panel_csv(const PanelDataset& panel, std::ostream& out);

}  // namespace pwrd
