#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "helpers.hpp"
#include "nowcast/csv.hpp"
#include "nowcast/dataset.hpp"
#include "nowcast/rng.hpp"

using namespace nowcast;

namespace {

ClaimRecord claim(const std::string& id, ClaimSource source, const std::string& building,
                  double x, double y, double amount) {
  return {id, source, building, x, y, amount};
}

}  // namespace

TEST_CASE("merge_claims keeps only NFIP records for buildings present in both sources") {
  const std::vector<ClaimRecord> nfip = {claim("n1", ClaimSource::kNfip, "B", 10, 10, 10000)};
  const std::vector<ClaimRecord> ia = {claim("i1", ClaimSource::kIa, "B", 10, 10, 2000)};
  const auto merged = merge_claims(nfip, ia);
  REQUIRE(merged.size() == 1);
  CHECK(merged[0].claim_id == "n1");
  CHECK(merged[0].source == ClaimSource::kNfip);
}

TEST_CASE("merge_claims passes a lone IA record through") {
  const auto merged = merge_claims({}, {claim("i1", ClaimSource::kIa, "B", 0, 0, 2000)});
  REQUIRE(merged.size() == 1);
  CHECK(merged[0].claim_id == "i1");
}

TEST_CASE("merge_claims keeps disjoint buildings from both sources") {
  const auto merged = merge_claims({claim("n1", ClaimSource::kNfip, "A", 0, 0, 1)},
                                   {claim("i1", ClaimSource::kIa, "B", 0, 0, 1)});
  CHECK(merged.size() == 2);
  CHECK(std::is_sorted(merged.begin(), merged.end(),
                       [](const auto& a, const auto& b) { return a.claim_id < b.claim_id; }));
}

TEST_CASE("merge_claims rejects a duplicate claim_id naming it") {
  const std::vector<ClaimRecord> nfip = {claim("dup", ClaimSource::kNfip, "A", 0, 0, 1)};
  const std::vector<ClaimRecord> ia = {claim("dup", ClaimSource::kIa, "B", 0, 0, 1)};
  CHECK_THROWS_WITH_AS(merge_claims(nfip, ia), doctest::Contains("dup"), std::runtime_error);
}

TEST_CASE("merge_claims is idempotent") {
  Rng rng(11);
  std::vector<ClaimRecord> nfip;
  std::vector<ClaimRecord> ia;
  for (int i = 0; i < 40; ++i) {
    const std::string building = "B" + std::to_string(rng.uniform_int(0, 25));
    if (rng.uniform() < 0.5) {
      nfip.push_back(claim("n" + std::to_string(i), ClaimSource::kNfip, building, 0, 0, 1 + i));
    } else {
      ia.push_back(claim("i" + std::to_string(i), ClaimSource::kIa, building, 0, 0, 1 + i));
    }
  }
  const auto merged = merge_claims(nfip, ia);
  const auto again = merge_claims(merged, {});
  REQUIRE(again.size() == merged.size());
  for (std::size_t i = 0; i < merged.size(); ++i) CHECK(again[i].claim_id == merged[i].claim_id);
}

TEST_CASE("cap_values caps at the nearest-rank percentile") {
  CHECK(cap_values({0, 1, 2, 3, 100}, 0.8) == std::vector<double>{0, 1, 2, 3, 3});
  CHECK(cap_values({0, 1, 2, 3, 100}, 1.0) == std::vector<double>{0, 1, 2, 3, 100});
  CHECK(cap_values({5, 5, 5}, 0.5) == std::vector<double>{5, 5, 5});
  CHECK_THROWS_AS(cap_values({}, 0.5), std::invalid_argument);
}

TEST_CASE("cap_values is monotone non-increasing and order preserving") {
  Rng rng(3);
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<double> values;
    const int n = static_cast<int>(rng.uniform_int(1, 60));
    for (int i = 0; i < n; ++i) values.push_back(rng.uniform(0, 1000));
    const double p = rng.uniform(0.05, 1.0);
    const auto capped = cap_values(values, p);
    REQUIRE(capped.size() == values.size());
    for (std::size_t i = 0; i < values.size(); ++i) CHECK(capped[i] <= values[i]);
    for (std::size_t i = 0; i + 1 < values.size(); ++i) {
      if (values[i] <= values[i + 1]) CHECK(capped[i] <= capped[i + 1]);
    }
  }
}

TEST_CASE("min_max_normalize maps to [0,1] with the degenerate case at zero") {
  CHECK(min_max_normalize(std::vector<double>{0, 5, 10}) == std::vector<double>{0.0, 0.5, 1.0});
  CHECK(min_max_normalize(std::vector<double>{7, 7, 7}) == std::vector<double>{0.0, 0.0, 0.0});
  CHECK(min_max_normalize(std::vector<double>{-2, 0, 2}) == std::vector<double>{0.0, 0.5, 1.0});
  CHECK_THROWS_AS(min_max_normalize(std::vector<double>{}), std::invalid_argument);
}

TEST_CASE("min_max_normalize is idempotent once the range is [0,1]") {
  Rng rng(5);
  for (int rep = 0; rep < 10; ++rep) {
    std::vector<double> values = {0.0, 1.0};
    for (int i = 0; i < 30; ++i) values.push_back(rng.uniform());
    const auto once = min_max_normalize(values);
    const auto twice = min_max_normalize(once);
    for (std::size_t i = 0; i < values.size(); ++i) {
      CHECK(once[i] >= 0.0);
      CHECK(once[i] <= 1.0);
      CHECK(twice[i] == doctest::Approx(once[i]).epsilon(1e-15));
    }
  }
}

TEST_CASE("cell_of uses half-open cells and reports out-of-extent points") {
  const GridSpec grid{0, 0, 500, 4, 4};
  CHECK(cell_of(750, 1250, grid) == CellId{1, 2});
  CHECK(cell_of(500, 0, grid) == CellId{1, 0});
  CHECK_THROWS_AS(cell_of(-1, 0, grid), std::runtime_error);
  CHECK_THROWS_AS(cell_of(2000, 0, grid), std::runtime_error);
}

TEST_CASE("cell_of partitions the extent") {
  const GridSpec grid{-100, 50, 250, 3, 5};
  Rng rng(17);
  for (int i = 0; i < 500; ++i) {
    const double x = rng.uniform(-100, -100 + 250 * 3 - 1e-9);
    const double y = rng.uniform(50, 50 + 250 * 5 - 1e-9);
    const CellId id = cell_of(x, y, grid);
    CHECK(id.col >= 0);
    CHECK(id.col < 3);
    CHECK(id.row >= 0);
    CHECK(id.row < 5);
    // the point is inside its cell's half-open box
    CHECK(x >= grid.origin_x + id.col * grid.cell_size);
    CHECK(x < grid.origin_x + (id.col + 1) * grid.cell_size);
  }
}

TEST_CASE("aggregate_to_grid sums claims into cells and emits zero cells") {
  const GridSpec grid{0, 0, 500, 2, 2};
  SUBCASE("single point") {
    const auto cells = aggregate_to_grid({{100, 600, 0.7}}, grid);
    REQUIRE(cells.size() == 4);
    for (const auto& cell : cells) {
      if (cell.id == CellId{0, 1}) {
        CHECK(cell.claim_sum == doctest::Approx(0.7));
        CHECK(cell.claim_count == 1);
      } else {
        CHECK(cell.claim_sum == 0.0);
      }
    }
  }
  SUBCASE("additivity in one cell") {
    const auto cells = aggregate_to_grid({{10, 10, 0.2}, {20, 20, 0.3}}, grid);
    CHECK(cells[0].claim_sum == doctest::Approx(0.5));
    CHECK(cells[0].claim_count == 2);
  }
}

TEST_CASE("aggregate_to_grid emits all 18823 cells of an empty study-sized grid") {
  const GridSpec study{0, 0, 500, 7, 2689};  // 7 * 2689 = 18823
  const auto cells = aggregate_to_grid({}, study);
  CHECK(cells.size() == 18823);
  CHECK(std::all_of(cells.begin(), cells.end(),
                    [](const GridCell& c) { return c.claim_sum == 0.0 && c.claim_count == 0; }));
}

TEST_CASE("aggregate_to_grid conserves total normalized claim mass") {
  const GridSpec grid{0, 0, 100, 10, 8};
  Rng rng(23);
  for (int rep = 0; rep < 10; ++rep) {
    std::vector<WeightedPoint> points;
    double total = 0.0;
    const int n = static_cast<int>(rng.uniform_int(0, 400));
    for (int i = 0; i < n; ++i) {
      WeightedPoint p{rng.uniform(0, 999.999), rng.uniform(0, 799.999), rng.uniform()};
      total += p.value;
      points.push_back(p);
    }
    const auto cells = aggregate_to_grid(points, grid);
    const double cell_total = std::accumulate(cells.begin(), cells.end(), 0.0,
                                              [](double acc, const GridCell& c) {
                                                return acc + c.claim_sum;
                                              });
    CHECK(std::abs(cell_total - total) < 1e-9);
    const auto count_total = std::accumulate(cells.begin(), cells.end(), std::int64_t{0},
                                             [](std::int64_t acc, const GridCell& c) {
                                               return acc + c.claim_count;
                                             });
    CHECK(count_total == n);
  }
}

TEST_CASE("normalize_claims caps and scales per source then sum_by_building merges") {
  std::vector<ClaimRecord> merged = {
      claim("a", ClaimSource::kNfip, "B1", 10, 10, 1000),
      claim("b", ClaimSource::kNfip, "B2", 20, 20, 3000),
      claim("c", ClaimSource::kNfip, "B2", 20, 20, 5000),
      claim("d", ClaimSource::kIa, "B3", 30, 30, 100),
      claim("e", ClaimSource::kIa, "B4", 40, 40, 300),
  };
  const auto normalized = normalize_claims(merged, 1.0);
  REQUIRE(normalized.size() == 5);
  for (const auto& c : normalized) {
    CHECK(c.value >= 0.0);
    CHECK(c.value <= 1.0);
  }
  // per-source min-max: NFIP min 1000 -> 0, max 5000 -> 1; IA min 100 -> 0, max 300 -> 1
  CHECK(normalized[0].value == doctest::Approx(0.0));
  CHECK(normalized[2].value == doctest::Approx(1.0));
  CHECK(normalized[3].value == doctest::Approx(0.0));
  CHECK(normalized[4].value == doctest::Approx(1.0));

  const auto points = sum_by_building(normalized);
  CHECK(points.size() == 4);  // B2's two claims summed
  const double total = std::accumulate(points.begin(), points.end(), 0.0,
                                       [](double acc, const WeightedPoint& p) {
                                         return acc + p.value;
                                       });
  const double direct = std::accumulate(normalized.begin(), normalized.end(), 0.0,
                                        [](double acc, const NormalizedClaim& c) {
                                          return acc + c.value;
                                        });
  CHECK(total == doctest::Approx(direct).epsilon(1e-12));
}

TEST_CASE("largest_remainder_counts apportions exactly") {
  CHECK(largest_remainder_counts(50000, {0.6, 0.2, 0.2}) == std::vector<int>{30000, 10000, 10000});
  CHECK(largest_remainder_counts(5000, {0.964, 0.008, 0.028}) == std::vector<int>{4820, 40, 140});
  const auto counts = largest_remainder_counts(7, {1.0 / 3, 1.0 / 3, 1.0 / 3});
  CHECK(std::accumulate(counts.begin(), counts.end(), 0) == 7);
  CHECK_THROWS_AS(largest_remainder_counts(10, {0.5, 0.4}), std::invalid_argument);
  CHECK_THROWS_AS(largest_remainder_counts(10, {1.5, -0.5}), std::invalid_argument);
}

TEST_CASE("claims CSV round-trips and validates") {
  const std::string dir = helpers::make_temp_dir("claims");
  const std::vector<ClaimRecord> claims = {
      claim("c1", ClaimSource::kNfip, "B1", 12.5, 800.25, 10000.75),
      claim("c2", ClaimSource::kIa, "B2", 0.125, 3.5, 2000)};
  write_claims_csv(dir + "/claims.csv", claims);
  const auto loaded = read_claims_csv(dir + "/claims.csv");
  REQUIRE(loaded.size() == 2);
  CHECK(loaded[0].claim_id == "c1");
  CHECK(loaded[0].x == 12.5);
  CHECK(loaded[1].amount == 2000);
  CHECK(loaded[1].source == ClaimSource::kIa);
}

TEST_CASE("claims CSV rejects bad source values with a line number") {
  const std::string dir = helpers::make_temp_dir("badclaims");
  {
    CsvTable table;
    table.header = {"claim_id", "source", "building_id", "x", "y", "amount"};
    table.rows.push_back({"c1", "FEMA", "B1", "0", "0", "10"});
    write_csv(dir + "/claims.csv", table);
  }
  CHECK_THROWS_WITH_AS(read_claims_csv(dir + "/claims.csv"), doctest::Contains(":2"),
                       std::runtime_error);
}

TEST_CASE("grid cells CSV round-trips") {
  const std::string dir = helpers::make_temp_dir("cells");
  const std::vector<GridCell> cells = {{{0, 0}, 0.5, 2}, {{1, 0}, 0.0, 0}, {{0, 1}, 1.25, 3}};
  write_grid_cells_csv(dir + "/cells.csv", cells);
  const auto loaded = read_grid_cells_csv(dir + "/cells.csv");
  REQUIRE(loaded.size() == 3);
  CHECK(loaded[2].claim_sum == 1.25);
  CHECK(loaded[2].claim_count == 3);
}

TEST_CASE("feature table and dataset CSV handle categorical levels") {
  const std::string dir = helpers::make_temp_dir("features");
  const FeatureSchema schema({{"elevation", FeatureKind::kNumeric, {}},
                              {"stream_status", FeatureKind::kCategorical,
                               {"non_flooding", "flooding_potential", "flooding_likely"}}});
  {
    CsvTable table;
    table.header = {"cell_col", "cell_row", "elevation", "stream_status"};
    table.rows.push_back({"0", "0", "0.5", "non_flooding"});
    table.rows.push_back({"1", "0", "0.75", "flooding_likely"});
    write_csv(dir + "/features.csv", table);
  }
  const auto [cells, data] = read_feature_table_csv(dir + "/features.csv", schema);
  REQUIRE(cells.size() == 2);
  CHECK(data.rows(0, 0) == 0.5);
  CHECK(data.rows(1, 1) == 2.0);  // level index of flooding_likely

  TabularDataset labeled = data;
  labeled.labels = {0, 2};
  write_dataset_csv(dir + "/dataset.csv", labeled);
  const auto loaded = read_dataset_csv(dir + "/dataset.csv", schema, true);
  CHECK((loaded.rows.array() == labeled.rows.array()).all());
  CHECK(loaded.labels == labeled.labels);

  // unknown level is an ingestion error
  {
    CsvTable table;
    table.header = {"cell_col", "cell_row", "elevation", "stream_status"};
    table.rows.push_back({"0", "0", "0.5", "tsunami"});
    write_csv(dir + "/bad.csv", table);
  }
  CHECK_THROWS_WITH_AS(read_feature_table_csv(dir + "/bad.csv", schema),
                       doctest::Contains("tsunami"), std::runtime_error);
}

TEST_CASE("TabularDataset validate rejects shape and level violations") {
  const FeatureSchema schema({{"a", FeatureKind::kNumeric, {}},
                              {"b", FeatureKind::kCategorical, {"x", "y"}}});
  TabularDataset data;
  data.schema = schema;
  data.rows.resize(2, 2);
  data.rows << 0.5, 0.0, 0.25, 1.0;
  CHECK_NOTHROW(data.validate());
  data.rows(1, 1) = 2.0;  // outside level set
  CHECK_THROWS_AS(data.validate(), std::runtime_error);
  data.rows(1, 1) = 0.5;  // not integral
  CHECK_THROWS_AS(data.validate(), std::runtime_error);
}
