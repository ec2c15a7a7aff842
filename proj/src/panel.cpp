#include "pwrd/panel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_map>

#include "json.hpp"

#include "pwrd/csv.hpp"
#include "pwrd/error.hpp"
#include "pwrd/numeric.hpp"

namespace pwrd {

namespace {

std::string row_name(std::span<const int> source_rows, size_t i) {
  if (source_rows.empty()) return "observation " + std::to_string(i + 1);
  return "row " + std::to_string(source_rows[i]);
}

}  // namespace

PanelDataset::PanelDataset(std::vector<Observation> observations, Labels labels,
                           bool has_tested_in, std::vector<std::string> covariate_names,
                           std::vector<double> covariates, std::span<const int> source_rows)
    : observations_(std::move(observations)),
      labels_(std::move(labels)),
      has_tested_in_(has_tested_in),
      covariate_names_(std::move(covariate_names)),
      covariates_(std::move(covariates)) {
  if (covariates_.size() != observations_.size() * covariate_names_.size()) {
    fail(ErrorKind::validation, "covariate matrix does not match observation count");
  }
  if (!source_rows.empty() && source_rows.size() != observations_.size()) {
    fail(ErrorKind::validation, "source row map does not match observation count");
  }
  build_indices(source_rows);
}

void PanelDataset::build_indices(std::span<const int> source_rows) {
  int max_unit = -1;
  int max_cluster = -1;
  bool small_years = true;
  for (size_t i = 0; i < observations_.size(); ++i) {
    const auto& o = observations_[i];
    if (o.unit < 0 || o.cluster < 0) {
      fail(ErrorKind::validation, row_name(source_rows, i) + ": negative identifier ordinal");
    }
    if (o.treatment != 0 && o.treatment != 1) {
      fail(ErrorKind::validation, row_name(source_rows, i) + ": treatment must be 0 or 1");
    }
    if (o.year < 1) {
      fail(ErrorKind::validation, row_name(source_rows, i) + ": follow-up year must be >= 1");
    }
    if (!std::isfinite(o.outcome)) {
      fail(ErrorKind::validation, row_name(source_rows, i) + ": outcome is not finite");
    }
    max_unit = std::max(max_unit, o.unit);
    max_cluster = std::max(max_cluster, o.cluster);
    if (o.year > 63) small_years = false;
  }
  n_units_ = max_unit + 1;
  cluster_treatment_.assign(max_cluster + 1, -1);
  cluster_size_.assign(max_cluster + 1, 0);

  std::vector<int> unit_cluster(n_units_, -1);
  for (size_t i = 0; i < observations_.size(); ++i) {
    const auto& o = observations_[i];
    int& z = cluster_treatment_[o.cluster];
    if (z == -1) {
      z = o.treatment;
    } else if (z != o.treatment) {
      fail(ErrorKind::validation, row_name(source_rows, i) + ": treatment varies within cluster '" +
                                      cluster_label(o.cluster) + "'");
    }
    ++cluster_size_[o.cluster];
    int& uc = unit_cluster[o.unit];
    if (uc == -1) {
      uc = o.cluster;
    } else if (uc != o.cluster) {
      fail(ErrorKind::validation, row_name(source_rows, i) + ": unit '" + unit_label(o.unit) +
                                      "' appears in more than one cluster");
    }
  }
  for (size_t c = 0; c < cluster_treatment_.size(); ++c) {
    if (cluster_treatment_[c] == -1) {
      fail(ErrorKind::validation, "cluster ordinal " + std::to_string(c) + " has no observations");
    }
  }

  // Duplicate (unit, year) pairs and monotone flags.
  auto monotone_violation = [&](size_t i) {
    fail(ErrorKind::validation, row_name(source_rows, i) + ": tested_in for unit '" +
                                    unit_label(observations_[i].unit) +
                                    "' switches from 1 back to 0 over follow-up years");
  };
  auto duplicate = [&](size_t i) {
    fail(ErrorKind::validation, row_name(source_rows, i) + ": duplicate (unit, year) pair for unit '" +
                                    unit_label(observations_[i].unit) + "', year " +
                                    std::to_string(observations_[i].year));
  };
  if (small_years) {
    std::vector<std::uint64_t> seen(n_units_, 0);
    std::vector<int> first_flag(n_units_, std::numeric_limits<int>::max());
    std::vector<int> last_unflagged(n_units_, 0);
    for (size_t i = 0; i < observations_.size(); ++i) {
      const auto& o = observations_[i];
      std::uint64_t bit = std::uint64_t{1} << o.year;
      if (seen[o.unit] & bit) duplicate(i);
      seen[o.unit] |= bit;
      if (has_tested_in_) {
        if (o.tested_in) {
          first_flag[o.unit] = std::min(first_flag[o.unit], o.year);
          if (o.year < last_unflagged[o.unit]) monotone_violation(i);
        } else {
          last_unflagged[o.unit] = std::max(last_unflagged[o.unit], o.year);
          if (first_flag[o.unit] < o.year) monotone_violation(i);
        }
      }
    }
  } else {
    std::vector<size_t> order(observations_.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
      const auto& x = observations_[a];
      const auto& y = observations_[b];
      return x.unit != y.unit ? x.unit < y.unit : x.year < y.year;
    });
    for (size_t k = 1; k < order.size(); ++k) {
      const auto& prev = observations_[order[k - 1]];
      const auto& cur = observations_[order[k]];
      if (prev.unit != cur.unit) continue;
      if (prev.year == cur.year) duplicate(order[k]);
      if (has_tested_in_ && prev.tested_in && !cur.tested_in) monotone_violation(order[k]);
    }
  }

  // Group catalog.
  group_index_.clear();
  for (const auto& o : observations_) {
    group_index_.emplace(GroupKey{o.cohort, o.grade - (o.year - 1), o.year}, 0);
  }
  groups_.clear();
  groups_.reserve(group_index_.size());
  int g = 0;
  for (auto& [key, ordinal] : group_index_) {
    ordinal = g;
    groups_.push_back(GroupInfo{g, key, 0, 0, 0});
    ++g;
  }
  group_of_.resize(observations_.size());
  // Consecutive rows usually share a cell; cache the last lookup.
  GroupKey last_key{std::numeric_limits<int>::min(), 0, 0};
  int last_g = -1;
  for (size_t i = 0; i < observations_.size(); ++i) {
    const auto& o = observations_[i];
    GroupKey key{o.cohort, o.grade - (o.year - 1), o.year};
    if (last_g < 0 || key != last_key) {
      last_g = group_index_.at(key);
      last_key = key;
    }
    group_of_[i] = last_g;
    auto& info = groups_[last_g];
    ++info.n;
    if (o.treatment == 1) {
      ++info.n_treated;
    } else {
      ++info.n_control;
    }
  }
}

std::optional<int> PanelDataset::find_group(const GroupKey& key) const {
  auto it = group_index_.find(key);
  if (it == group_index_.end()) return std::nullopt;
  return it->second;
}

std::optional<size_t> PanelDataset::covariate_index(const std::string& name) const {
  auto it = std::find(covariate_names_.begin(), covariate_names_.end(), name);
  if (it == covariate_names_.end()) return std::nullopt;
  return static_cast<size_t>(it - covariate_names_.begin());
}

std::string PanelDataset::unit_label(int unit) const {
  if (unit >= 0 && static_cast<size_t>(unit) < labels_.units.size()) return labels_.units[unit];
  return std::to_string(unit);
}

std::string PanelDataset::cluster_label(int cluster) const {
  if (cluster >= 0 && static_cast<size_t>(cluster) < labels_.clusters.size())
    return labels_.clusters[cluster];
  return std::to_string(cluster);
}

std::string PanelDataset::block_label(int block) const {
  if (block < 0) return {};
  if (static_cast<size_t>(block) < labels_.blocks.size()) return labels_.blocks[block];
  return std::to_string(block);
}

PanelDataset PanelDataset::with_outcomes(std::vector<double> outcomes) const {
  if (outcomes.size() != observations_.size()) {
    fail(ErrorKind::validation, "outcome vector does not match panel size");
  }
  PanelDataset copy = *this;
  for (size_t i = 0; i < outcomes.size(); ++i) {
    if (!std::isfinite(outcomes[i])) {
      fail(ErrorKind::numerical, "non-finite outcome produced for observation " +
                                     std::to_string(i + 1));
    }
    copy.observations_[i].outcome = outcomes[i];
  }
  return copy;
}

std::vector<GroupCatalogEntry> derive_groups(const PanelDataset& panel) {
  std::vector<GroupCatalogEntry> out;
  out.reserve(panel.groups().size());
  for (const auto& g : panel.groups()) {
    out.push_back({g.g, g.key.cohort, g.key.entry_grade, g.key.year, g.n});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Schema

ColumnSchema ColumnSchema::canonical() {
  ColumnSchema s;
  s.block = "block";
  s.tested_in = "tested_in";
  return s;
}

ColumnSchema ColumnSchema::from_json(const nlohmann::json& j) {
  ColumnSchema s;
  const nlohmann::json& cols = j.contains("columns") ? j.at("columns") : j;
  auto str = [&](const char* key, std::string& target) {
    if (cols.contains(key)) target = cols.at(key).get<std::string>();
  };
  auto opt = [&](const char* key, std::optional<std::string>& target) {
    if (cols.contains(key) && !cols.at(key).is_null()) target = cols.at(key).get<std::string>();
  };
  try {
    str("unit", s.unit);
    str("cluster", s.cluster);
    opt("block", s.block);
    str("treatment", s.treatment);
    str("cohort", s.cohort);
    str("grade", s.grade);
    str("year", s.year);
    str("outcome", s.outcome);
    opt("tested_in", s.tested_in);
    if (j.contains("covariates")) s.covariates = j.at("covariates").get<std::vector<std::string>>();
    if (j.contains("threshold_rule") && !j.at("threshold_rule").is_null()) {
      const auto& r = j.at("threshold_rule");
      ThresholdRule rule;
      rule.score_column = r.at("score_column").get<std::string>();
      for (auto& [grade, cutoff] : r.at("cutoffs").items()) {
        rule.cutoffs[static_cast<int>(parse_int(grade, "threshold grade"))] =
            cutoff.is_string() ? parse_double(cutoff.get<std::string>(), "threshold cutoff")
                               : cutoff.get<double>();
      }
      s.threshold_rule = std::move(rule);
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::validation, std::string("invalid schema: ") + e.what());
  }
  return s;
}

nlohmann::json ColumnSchema::to_json() const {
  nlohmann::json cols = {{"unit", unit},       {"cluster", cluster}, {"treatment", treatment},
                         {"cohort", cohort},   {"grade", grade},     {"year", year},
                         {"outcome", outcome}};
  cols["block"] = block ? nlohmann::json(*block) : nlohmann::json(nullptr);
  cols["tested_in"] = tested_in ? nlohmann::json(*tested_in) : nlohmann::json(nullptr);
  nlohmann::json j = {{"columns", cols}, {"covariates", covariates}};
  if (threshold_rule) {
    nlohmann::json cut = nlohmann::json::object();
    for (auto [g, c] : threshold_rule->cutoffs) cut[std::to_string(g)] = c;
    j["threshold_rule"] = {{"score_column", threshold_rule->score_column}, {"cutoffs", cut}};
  }
  return j;
}

// ---------------------------------------------------------------------------
// Ingestion

namespace {

class LabelTable {
 public:
  int intern(const std::string& label) {
    auto [it, inserted] = index_.emplace(label, static_cast<int>(labels_.size()));
    if (inserted) labels_.push_back(label);
    return it->second;
  }
  std::vector<std::string> release() { return std::move(labels_); }

 private:
  std::unordered_map<std::string, int> index_;
  std::vector<std::string> labels_;
};

bool is_missing(const std::string& field) {
  return field.find_first_not_of(" \t") == std::string::npos;
}

}  // namespace

IngestResult ingest_panel(std::istream& in, const ColumnSchema& schema) {
  std::vector<int> lines;
  auto rows = csv::read(in, &lines);
  if (rows.empty()) fail(ErrorKind::validation, "input has no header row");

  const auto& header = rows.front();
  auto find_col = [&](const std::string& name, const char* logical) -> size_t {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) {
      fail(ErrorKind::validation, std::string("missing required column '") + name +
                                      "' (logical '" + logical + "')");
    }
    return static_cast<size_t>(it - header.begin());
  };
  auto find_optional = [&](const std::optional<std::string>& name) -> std::optional<size_t> {
    if (!name) return std::nullopt;
    auto it = std::find(header.begin(), header.end(), *name);
    if (it == header.end()) return std::nullopt;
    return static_cast<size_t>(it - header.begin());
  };

  const size_t c_unit = find_col(schema.unit, "unit");
  const size_t c_cluster = find_col(schema.cluster, "cluster");
  const size_t c_treat = find_col(schema.treatment, "treatment");
  const size_t c_cohort = find_col(schema.cohort, "cohort");
  const size_t c_grade = find_col(schema.grade, "grade");
  const size_t c_year = find_col(schema.year, "year");
  const size_t c_outcome = find_col(schema.outcome, "outcome");
  const auto c_block = find_optional(schema.block);
  auto c_flag = find_optional(schema.tested_in);
  if (schema.tested_in && !c_flag && !schema.threshold_rule) {
    // A named but absent flag column only matters for PWRD analyses.
    c_flag.reset();
  }
  std::optional<size_t> c_score;
  if (!c_flag && schema.threshold_rule) {
    c_score = find_col(schema.threshold_rule->score_column, "threshold score");
  }
  std::vector<size_t> c_cov;
  for (const auto& name : schema.covariates) c_cov.push_back(find_col(name, "covariate"));

  IngestResult result;
  LabelTable units, clusters, blocks;
  std::vector<Observation> obs;
  std::vector<double> covariates;
  std::vector<double> scores;
  std::vector<int> source_rows;
  obs.reserve(rows.size());

  for (size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    const int line = lines[r];
    const std::string where = "row " + std::to_string(line);
    if (row.size() != header.size()) {
      fail(ErrorKind::validation, where + ": expected " + std::to_string(header.size()) +
                                      " fields, found " + std::to_string(row.size()));
    }
    if (is_missing(row[c_outcome])) {
      result.report.dropped_rows.push_back(line);
      continue;
    }
    auto required = [&](size_t col, const char* logical) -> const std::string& {
      if (is_missing(row[col])) {
        fail(ErrorKind::validation, where + ": missing value for '" + logical + "'");
      }
      return row[col];
    };
    Observation o;
    o.unit = units.intern(required(c_unit, "unit"));
    o.cluster = clusters.intern(required(c_cluster, "cluster"));
    if (c_block && !is_missing(row[*c_block])) o.block = blocks.intern(row[*c_block]);
    const auto z = parse_int(required(c_treat, "treatment"), where + " treatment");
    if (z != 0 && z != 1) {
      fail(ErrorKind::validation, where + ": non-binary treatment value '" + row[c_treat] + "'");
    }
    o.treatment = static_cast<int>(z);
    o.cohort = static_cast<int>(parse_int(required(c_cohort, "cohort"), where + " cohort"));
    o.grade = static_cast<int>(parse_int(required(c_grade, "grade"), where + " grade"));
    o.year = static_cast<int>(parse_int(required(c_year, "year"), where + " year"));
    o.outcome = parse_double(row[c_outcome], where + " outcome");
    if (c_flag) {
      const auto f = parse_int(required(*c_flag, "tested_in"), where + " tested_in");
      if (f != 0 && f != 1) {
        fail(ErrorKind::validation, where + ": tested_in must be 0 or 1");
      }
      o.tested_in = f == 1;
    }
    if (c_score) scores.push_back(parse_double(required(*c_score, "threshold score"), where + " score"));
    for (size_t k = 0; k < c_cov.size(); ++k) {
      covariates.push_back(parse_double(required(c_cov[k], "covariate"), where + " covariate"));
    }
    obs.push_back(o);
    source_rows.push_back(line);
  }

  bool has_flags = c_flag.has_value();
  if (c_score) {
    // Flag at the first below-cutoff year, then persist.
    const auto& rule = *schema.threshold_rule;
    std::vector<size_t> order(obs.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
      return obs[a].unit != obs[b].unit ? obs[a].unit < obs[b].unit : obs[a].year < obs[b].year;
    });
    int current_unit = -1;
    bool flagged = false;
    for (size_t i : order) {
      if (obs[i].unit != current_unit) {
        current_unit = obs[i].unit;
        flagged = false;
      }
      auto it = rule.cutoffs.find(obs[i].grade);
      if (it == rule.cutoffs.end()) {
        fail(ErrorKind::validation, "row " + std::to_string(source_rows[i]) +
                                        ": no threshold cutoff for grade " +
                                        std::to_string(obs[i].grade));
      }
      flagged = flagged || scores[i] < it->second;
      obs[i].tested_in = flagged;
    }
    has_flags = true;
    result.report.tested_in_derived = true;
  }
  if (!has_flags) {
    result.report.warnings.push_back(
        "no tested_in column or threshold rule; only comparator analyses are available");
  }
  if (!result.report.dropped_rows.empty()) {
    result.report.warnings.push_back(std::to_string(result.report.dropped_rows.size()) +
                                     " row(s) with missing outcome removed (listwise deletion)");
  }

  PanelDataset::Labels labels{units.release(), clusters.release(), blocks.release()};
  result.panel = PanelDataset(std::move(obs), std::move(labels), has_flags, schema.covariates,
                              std::move(covariates), source_rows);
  return result;
}

void write_panel_csv(const PanelDataset& panel, std::ostream& out) {
  csv::Row header = {"unit",  "cluster", "block",   "treatment", "cohort",
                     "grade", "year",    "outcome", "tested_in"};
  for (const auto& name : panel.covariate_names()) header.push_back(name);
  csv::write_row(out, header);
  csv::Row row(header.size());
  for (size_t i = 0; i < panel.size(); ++i) {
    const auto& o = panel[i];
    row[0] = panel.unit_label(o.unit);
    row[1] = panel.cluster_label(o.cluster);
    row[2] = panel.block_label(o.block);
    row[3] = std::to_string(o.treatment);
    row[4] = std::to_string(o.cohort);
    row[5] = std::to_string(o.grade);
    row[6] = std::to_string(o.year);
    row[7] = format_double(o.outcome);
    row[8] = panel.has_tested_in() ? std::to_string(o.tested_in ? 1 : 0) : std::string();
    for (size_t k = 0; k < panel.n_covariates(); ++k) row[9 + k] = format_double(panel.covariate(i, k));
    csv::write_row(out, row);
  }
}

}  // namespace pwrd
