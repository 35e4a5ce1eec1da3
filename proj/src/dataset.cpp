#include "nowcast/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

#include "nowcast/csv.hpp"

namespace nowcast {

std::string to_string(ClaimSource source) {
  return source == ClaimSource::kNfip ? "NFIP" : "IA";
}

ClaimSource claim_source_from_string(const std::string& text) {
  if (text == "NFIP") return ClaimSource::kNfip;
  if (text == "IA") return ClaimSource::kIa;
  throw std::runtime_error("unknown claim source '" + text + "' (expected NFIP or IA)");
}

FeatureSchema::FeatureSchema(std::vector<FeatureSpec> features)
    : features_(std::move(features)) {
  std::unordered_set<std::string> names;
  for (const auto& f : features_) {
    if (!names.insert(f.name).second) {
      throw std::invalid_argument("duplicate feature name '" + f.name + "'");
    }
    if (f.kind == FeatureKind::kCategorical && f.levels.empty()) {
      throw std::invalid_argument("categorical feature '" + f.name + "' declares no levels");
    }
    if (f.kind == FeatureKind::kNumeric && !f.levels.empty()) {
      throw std::invalid_argument("numeric feature '" + f.name + "' declares levels");
    }
  }
}

int FeatureSchema::index_of(const std::string& name) const {
  for (int i = 0; i < size(); ++i) {
    if (features_[static_cast<std::size_t>(i)].name == name) return i;
  }
  return -1;
}

int FeatureSchema::level_index(int feature, const std::string& level) const {
  const auto& spec = this->feature(feature);
  const auto& levels = spec.levels;
  const auto it = std::find(levels.begin(), levels.end(), level);
  if (it == levels.end()) {
    throw std::runtime_error("unknown level '" + level + "' for categorical feature '" +
                             spec.name + "'");
  }
  return static_cast<int>(it - levels.begin());
}

bool operator==(const FeatureSchema& a, const FeatureSchema& b) {
  if (a.size() != b.size()) return false;
  for (int i = 0; i < a.size(); ++i) {
    const auto& fa = a.feature(i);
    const auto& fb = b.feature(i);
    if (fa.name != fb.name || fa.kind != fb.kind || fa.levels != fb.levels) return false;
  }
  return true;
}

void TabularDataset::validate() const {
  if (rows.cols() != schema.size()) {
    throw std::runtime_error("dataset has " + std::to_string(rows.cols()) +
                             " columns but schema declares " + std::to_string(schema.size()));
  }
  if (!labels.empty() && static_cast<Eigen::Index>(labels.size()) != rows.rows()) {
    throw std::runtime_error("label count does not match row count");
  }
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    for (int j = 0; j < schema.size(); ++j) {
      const double v = rows(i, j);
      if (!std::isfinite(v)) {
        throw std::runtime_error("non-finite value in feature '" + schema.feature(j).name +
                                 "' at row " + std::to_string(i));
      }
      if (schema.feature(j).kind == FeatureKind::kCategorical) {
        const double floor_v = std::floor(v);
        if (floor_v != v || v < 0.0 ||
            v >= static_cast<double>(schema.feature(j).levels.size())) {
          throw std::runtime_error("invalid level index for categorical feature '" +
                                   schema.feature(j).name + "' at row " + std::to_string(i));
        }
      }
    }
  }
  for (const int label : labels) {
    if (label < 0) throw std::runtime_error("negative class label");
  }
}

TabularDataset TabularDataset::select(const std::vector<int>& indices) const {
  TabularDataset out;
  out.schema = schema;
  out.rows.resize(static_cast<Eigen::Index>(indices.size()), rows.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    out.rows.row(static_cast<Eigen::Index>(i)) = rows.row(indices[i]);
  }
  if (has_labels()) {
    out.labels.reserve(indices.size());
    for (const int idx : indices) out.labels.push_back(labels.at(static_cast<std::size_t>(idx)));
  }
  return out;
}

std::vector<ClaimRecord> merge_claims(const std::vector<ClaimRecord>& nfip,
                                      const std::vector<ClaimRecord>& ia) {
  std::unordered_set<std::string> seen_ids;
  auto check_id = [&seen_ids](const ClaimRecord& record) {
    if (!seen_ids.insert(record.claim_id).second) {
      throw std::runtime_error("duplicate claim_id '" + record.claim_id + "'");
    }
  };

  std::unordered_set<std::string> nfip_buildings;
  for (const auto& record : nfip) {
    check_id(record);
    nfip_buildings.insert(record.building_id);
  }

  std::vector<ClaimRecord> merged = nfip;
  for (const auto& record : ia) {
    check_id(record);
    if (nfip_buildings.count(record.building_id) == 0) merged.push_back(record);
  }
  std::sort(merged.begin(), merged.end(),
            [](const ClaimRecord& a, const ClaimRecord& b) { return a.claim_id < b.claim_id; });
  return merged;
}

std::vector<double> cap_values(const std::vector<double>& values, double percentile) {
  if (values.empty()) throw std::invalid_argument("cap_values: empty input");
  if (!(percentile > 0.0) || percentile > 1.0) {
    throw std::invalid_argument("cap_values: percentile must be in (0, 1]");
  }
  std::vector<double> sorted = values;
  std::sort(sorted.begin(), sorted.end());
  const auto n = static_cast<double>(sorted.size());
  // nearest-rank: 1-based index ceil(p * n)
  const auto rank = static_cast<std::size_t>(std::ceil(percentile * n));
  const double cap = sorted[rank - 1];
  std::vector<double> out = values;
  for (double& v : out) v = std::min(v, cap);
  return out;
}

std::vector<double> min_max_normalize(const std::vector<double>& values) {
  if (values.empty()) throw std::invalid_argument("min_max_normalize: empty input");
  const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
  const double lo = *lo_it;
  const double hi = *hi_it;
  std::vector<double> out(values.size(), 0.0);
  if (hi > lo) {
    const double scale = 1.0 / (hi - lo);
    for (std::size_t i = 0; i < values.size(); ++i) out[i] = (values[i] - lo) * scale;
  }
  return out;
}

Eigen::VectorXd min_max_normalize(const Eigen::Ref<const Eigen::VectorXd>& values) {
  if (values.size() == 0) throw std::invalid_argument("min_max_normalize: empty input");
  const double lo = values.minCoeff();
  const double hi = values.maxCoeff();
  if (hi <= lo) return Eigen::VectorXd::Zero(values.size());
  return (values.array() - lo) / (hi - lo);
}

std::vector<NormalizedClaim> normalize_claims(const std::vector<ClaimRecord>& merged,
                                              double cap_percentile) {
  std::vector<NormalizedClaim> out;
  out.reserve(merged.size());
  for (const ClaimSource source : {ClaimSource::kNfip, ClaimSource::kIa}) {
    std::vector<const ClaimRecord*> records;
    for (const auto& record : merged) {
      if (record.source == source) records.push_back(&record);
    }
    if (records.empty()) continue;
    std::vector<double> amounts;
    amounts.reserve(records.size());
    for (const auto* record : records) amounts.push_back(record->amount);
    const std::vector<double> normalized = min_max_normalize(cap_values(amounts, cap_percentile));
    for (std::size_t i = 0; i < records.size(); ++i) {
      const auto& r = *records[i];
      out.push_back({r.claim_id, r.source, r.building_id, r.x, r.y, normalized[i]});
    }
  }
  std::sort(out.begin(), out.end(), [](const NormalizedClaim& a, const NormalizedClaim& b) {
    return a.claim_id < b.claim_id;
  });
  return out;
}

std::vector<WeightedPoint> sum_by_building(const std::vector<NormalizedClaim>& claims) {
  // map keyed by building_id keeps output deterministic
  std::map<std::string, WeightedPoint> by_building;
  for (const auto& claim : claims) {
    auto [it, inserted] = by_building.try_emplace(claim.building_id,
                                                  WeightedPoint{claim.x, claim.y, claim.value});
    if (!inserted) it->second.value += claim.value;
  }
  std::vector<WeightedPoint> out;
  out.reserve(by_building.size());
  for (const auto& [id, point] : by_building) out.push_back(point);
  return out;
}

CellId cell_of(double x, double y, const GridSpec& grid) {
  const double max_x = grid.origin_x + grid.cell_size * grid.n_cols;
  const double max_y = grid.origin_y + grid.cell_size * grid.n_rows;
  if (x < grid.origin_x || x >= max_x || y < grid.origin_y || y >= max_y) {
    throw std::runtime_error("point (" + format_double(x) + ", " + format_double(y) +
                             ") outside grid extent");
  }
  const int col = static_cast<int>(std::floor((x - grid.origin_x) / grid.cell_size));
  const int row = static_cast<int>(std::floor((y - grid.origin_y) / grid.cell_size));
  // floating point can land exactly on the upper edge after division
  return {std::min(col, grid.n_cols - 1), std::min(row, grid.n_rows - 1)};
}

std::vector<GridCell> aggregate_to_grid(const std::vector<WeightedPoint>& claims,
                                        const GridSpec& grid) {
  if (grid.n_cols <= 0 || grid.n_rows <= 0 || !(grid.cell_size > 0.0)) {
    throw std::invalid_argument("aggregate_to_grid: invalid grid spec");
  }
  std::vector<GridCell> cells(static_cast<std::size_t>(grid.n_cols) *
                              static_cast<std::size_t>(grid.n_rows));
  for (int row = 0; row < grid.n_rows; ++row) {
    for (int col = 0; col < grid.n_cols; ++col) {
      cells[static_cast<std::size_t>(row) * static_cast<std::size_t>(grid.n_cols) +
            static_cast<std::size_t>(col)]
          .id = {col, row};
    }
  }
  for (const auto& point : claims) {
    const CellId id = cell_of(point.x, point.y, grid);
    auto& cell = cells[static_cast<std::size_t>(id.row) * static_cast<std::size_t>(grid.n_cols) +
                       static_cast<std::size_t>(id.col)];
    cell.claim_sum += point.value;
    cell.claim_count += 1;
  }
  return cells;
}

std::vector<int> largest_remainder_counts(int n, const std::vector<double>& ratios) {
  if (n < 0) throw std::invalid_argument("largest_remainder_counts: negative n");
  double total = 0.0;
  for (const double r : ratios) {
    if (r < 0.0) throw std::invalid_argument("largest_remainder_counts: negative ratio");
    total += r;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw std::invalid_argument("largest_remainder_counts: ratios sum to " + format_double(total));
  }
  std::vector<int> counts(ratios.size(), 0);
  std::vector<std::pair<double, std::size_t>> remainders;  // (-fraction, index)
  int assigned = 0;
  for (std::size_t i = 0; i < ratios.size(); ++i) {
    const double exact = ratios[i] * n;
    counts[i] = static_cast<int>(std::floor(exact));
    assigned += counts[i];
    remainders.emplace_back(-(exact - std::floor(exact)), i);
  }
  std::sort(remainders.begin(), remainders.end());
  for (int i = 0; i < n - assigned; ++i) {
    counts[remainders[static_cast<std::size_t>(i)].second] += 1;
  }
  return counts;
}

// ---------------------------------------------------------------------------
// CSV formats
// ---------------------------------------------------------------------------

std::vector<ClaimRecord> read_claims_csv(const std::string& path) {
  const CsvTable table = read_csv(path);
  const std::vector<std::string> expected = {"claim_id", "source", "building_id",
                                             "x",        "y",      "amount"};
  if (table.header != expected) {
    throw std::runtime_error(path + ": expected header claim_id,source,building_id,x,y,amount");
  }
  std::vector<ClaimRecord> claims;
  claims.reserve(table.rows.size());
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const auto& row = table.rows[i];
    const std::string where = path + ":" + std::to_string(i + 2);
    ClaimRecord record;
    record.claim_id = row[0];
    try {
      record.source = claim_source_from_string(row[1]);
    } catch (const std::exception& e) {
      throw std::runtime_error(where + ": " + e.what());
    }
    record.building_id = row[2];
    record.x = parse_double(row[3], where + " x");
    record.y = parse_double(row[4], where + " y");
    record.amount = parse_double(row[5], where + " amount");
    if (!(record.amount > 0.0)) {
      throw std::runtime_error(where + ": amount must be > 0 (zero-damage records are excluded)");
    }
    claims.push_back(std::move(record));
  }
  return claims;
}

void write_claims_csv(const std::string& path, const std::vector<ClaimRecord>& claims) {
  CsvTable table;
  table.header = {"claim_id", "source", "building_id", "x", "y", "amount"};
  for (const auto& c : claims) {
    table.rows.push_back({c.claim_id, to_string(c.source), c.building_id, format_double(c.x),
                          format_double(c.y), format_double(c.amount)});
  }
  write_csv(path, table);
}

void write_normalized_claims_csv(const std::string& path,
                                 const std::vector<NormalizedClaim>& claims) {
  CsvTable table;
  table.header = {"claim_id", "source", "building_id", "x", "y", "normalized_value"};
  for (const auto& c : claims) {
    table.rows.push_back({c.claim_id, to_string(c.source), c.building_id, format_double(c.x),
                          format_double(c.y), format_double(c.value)});
  }
  write_csv(path, table);
}

void write_grid_cells_csv(const std::string& path, const std::vector<GridCell>& cells) {
  CsvTable table;
  table.header = {"cell_col", "cell_row", "claim_sum", "claim_count"};
  for (const auto& cell : cells) {
    table.rows.push_back({std::to_string(cell.id.col), std::to_string(cell.id.row),
                          format_double(cell.claim_sum), std::to_string(cell.claim_count)});
  }
  write_csv(path, table);
}

std::vector<GridCell> read_grid_cells_csv(const std::string& path) {
  const CsvTable table = read_csv(path);
  const std::vector<std::string> expected = {"cell_col", "cell_row", "claim_sum", "claim_count"};
  if (table.header != expected) {
    throw std::runtime_error(path + ": expected header cell_col,cell_row,claim_sum,claim_count");
  }
  std::vector<GridCell> cells;
  cells.reserve(table.rows.size());
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const auto& row = table.rows[i];
    const std::string where = path + ":" + std::to_string(i + 2);
    GridCell cell;
    cell.id.col = static_cast<int>(parse_int(row[0], where + " cell_col"));
    cell.id.row = static_cast<int>(parse_int(row[1], where + " cell_row"));
    cell.claim_sum = parse_double(row[2], where + " claim_sum");
    cell.claim_count = parse_int(row[3], where + " claim_count");
    cells.push_back(cell);
  }
  return cells;
}

namespace {

double cell_value_from_text(const FeatureSchema& schema, int feature, const std::string& text,
                            const std::string& where) {
  const auto& spec = schema.feature(feature);
  if (spec.kind == FeatureKind::kNumeric) {
    return parse_double(text, where + " " + spec.name);
  }
  try {
    return static_cast<double>(schema.level_index(feature, text));
  } catch (const std::exception& e) {
    throw std::runtime_error(where + ": " + e.what());
  }
}

std::string cell_value_to_text(const FeatureSchema& schema, int feature, double value) {
  const auto& spec = schema.feature(feature);
  if (spec.kind == FeatureKind::kNumeric) return format_double(value);
  return spec.levels.at(static_cast<std::size_t>(value));
}

}  // namespace

std::pair<std::vector<CellId>, TabularDataset> read_feature_table_csv(
    const std::string& path, const FeatureSchema& schema) {
  const CsvTable table = read_csv(path);
  std::vector<std::string> expected = {"cell_col", "cell_row"};
  for (const auto& f : schema.features()) expected.push_back(f.name);
  if (table.header != expected) {
    throw std::runtime_error(path + ": header does not match cell_col,cell_row followed by the " +
                             std::to_string(schema.size()) + " schema feature names");
  }
  std::vector<CellId> cells;
  TabularDataset data;
  data.schema = schema;
  data.rows.resize(static_cast<Eigen::Index>(table.rows.size()), schema.size());
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const auto& row = table.rows[i];
    const std::string where = path + ":" + std::to_string(i + 2);
    cells.push_back({static_cast<int>(parse_int(row[0], where + " cell_col")),
                     static_cast<int>(parse_int(row[1], where + " cell_row"))});
    for (int j = 0; j < schema.size(); ++j) {
      data.rows(static_cast<Eigen::Index>(i), j) =
          cell_value_from_text(schema, j, row[static_cast<std::size_t>(j) + 2], where);
    }
  }
  data.validate();
  return {std::move(cells), std::move(data)};
}

void write_dataset_csv(const std::string& path, const TabularDataset& data) {
  CsvTable table;
  for (const auto& f : data.schema.features()) table.header.push_back(f.name);
  if (data.has_labels()) table.header.push_back("pde_class");
  for (Eigen::Index i = 0; i < data.n_rows(); ++i) {
    std::vector<std::string> row;
    row.reserve(static_cast<std::size_t>(data.n_features()) + 1);
    for (int j = 0; j < data.n_features(); ++j) {
      row.push_back(cell_value_to_text(data.schema, j, data.rows(i, j)));
    }
    if (data.has_labels()) row.push_back(std::to_string(data.labels[static_cast<std::size_t>(i)]));
    table.rows.push_back(std::move(row));
  }
  write_csv(path, table);
}

TabularDataset read_dataset_csv(const std::string& path, const FeatureSchema& schema,
                                bool expect_labels) {
  const CsvTable table = read_csv(path);
  std::vector<std::string> expected;
  for (const auto& f : schema.features()) expected.push_back(f.name);
  if (expect_labels) expected.push_back("pde_class");
  if (table.header != expected) {
    throw std::runtime_error(path + ": header does not match the schema feature names" +
                             std::string(expect_labels ? " plus pde_class" : ""));
  }
  TabularDataset data;
  data.schema = schema;
  data.rows.resize(static_cast<Eigen::Index>(table.rows.size()), schema.size());
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const auto& row = table.rows[i];
    const std::string where = path + ":" + std::to_string(i + 2);
    for (int j = 0; j < schema.size(); ++j) {
      data.rows(static_cast<Eigen::Index>(i), j) =
          cell_value_from_text(schema, j, row[static_cast<std::size_t>(j)], where);
    }
    if (expect_labels) {
      data.labels.push_back(static_cast<int>(
          parse_int(row[static_cast<std::size_t>(schema.size())], where + " pde_class")));
    }
  }
  data.validate();
  return data;
}

}  // namespace nowcast
