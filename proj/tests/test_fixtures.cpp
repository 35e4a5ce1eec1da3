#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "nowcast/dataset.hpp"
#include "nowcast/fixtures.hpp"
#include "nowcast/gbdt.hpp"
#include "nowcast/metrics.hpp"
#include "nowcast/tuning.hpp"

using namespace nowcast;
using namespace nowcast::fixtures;

TEST_CASE("make_imbalanced_tabular hits exact prevalence counts") {
  FixtureSpec spec;
  spec.n_rows = 5000;
  spec.prevalences = {0.964, 0.008, 0.028};
  spec.seed = 3;
  const auto data = make_imbalanced_tabular(spec);
  data.validate();
  std::vector<int> counts(3, 0);
  for (const int y : data.labels) counts[static_cast<std::size_t>(y)] += 1;
  CHECK(counts == std::vector<int>{4820, 40, 140});
  CHECK(data.n_features() == spec.n_signal_features + spec.n_noise_features);
  CHECK((data.rows.array() >= 0.0).all());
  CHECK((data.rows.array() <= 1.0).all());
}

TEST_CASE("make_imbalanced_tabular is deterministic under seed") {
  FixtureSpec spec;
  spec.n_rows = 400;
  spec.seed = 77;
  const auto a = make_imbalanced_tabular(spec);
  const auto b = make_imbalanced_tabular(spec);
  CHECK((a.rows.array() == b.rows.array()).all());
  CHECK(a.labels == b.labels);
  spec.seed = 78;
  const auto c = make_imbalanced_tabular(spec);
  CHECK_FALSE((a.rows.array() == c.rows.array()).all());
}

TEST_CASE("zero signal strength means class-2 recall indistinguishable from chance") {
  FixtureSpec spec;
  spec.n_rows = 1500;
  spec.prevalences = {0.7, 0.1, 0.2};
  spec.signal_strength = 0.0;
  spec.seed = 5;
  const auto data = make_imbalanced_tabular(spec);

  gbdt::TrainConfig config;
  config.num_trees = 30;
  config.goss_enabled = false;
  config.seed = 1;
  const auto split = tuning::stratified_split(data.labels, 0.8, 11);
  const auto train_set = data.select(split.train_indices);
  const auto test_set = data.select(split.test_indices);
  const auto model = gbdt::train(train_set, train_set.labels, config, 3);
  auto class2_recall = [&](const std::vector<int>& actual, const std::vector<int>& predicted) {
    const auto counts = metrics::one_vs_rest(metrics::confusion(actual, predicted, 3), 2);
    return metrics::precision_recall(counts).recall;
  };
  const double recall_signal_free = class2_recall(test_set.labels, model.predict_class(test_set));

  // permutation baseline: the same pipeline on label-shuffled data
  double max_permuted = 0.0;
  for (int rep = 0; rep < 3; ++rep) {
    TabularDataset permuted = train_set;
    Rng rng(100 + static_cast<std::uint64_t>(rep));
    rng.shuffle(permuted.labels);
    const auto null_model = gbdt::train(permuted, permuted.labels, config, 3);
    max_permuted = std::max(max_permuted,
                            class2_recall(test_set.labels, null_model.predict_class(test_set)));
  }
  CHECK(recall_signal_free <= max_permuted + 0.05);
}

TEST_CASE("signal monotonicity: a stronger signal never loses stump separability") {
  auto best_stump_gain = [](const TabularDataset& data) {
    auto [mapper, binned] = gbdt::quantile_bin(data, 255);
    const auto bundles = gbdt::singleton_bundles(mapper);
    const auto bundled = gbdt::apply_bundles(binned, bundles);
    Eigen::MatrixXd scores = Eigen::MatrixXd::Zero(data.n_rows(), 3);
    auto [grad, hess] = gbdt::softmax_gradients(data.labels, scores);
    gbdt::TrainConfig config;
    config.num_leaves = 2;
    config.max_depth = 1;
    config.min_data_in_leaf = 1;
    const auto tree = gbdt::grow_tree(bundled, bundles, grad.col(2), hess.col(2),
                                      Eigen::VectorXd::Ones(data.n_rows()), config);
    return tree.nodes().empty() ? 0.0 : tree.nodes()[0].gain;
  };
  FixtureSpec weak;
  weak.n_rows = 1000;
  weak.prevalences = {0.6, 0.2, 0.2};
  weak.signal_strength = 0.2;
  weak.seed = 9;
  FixtureSpec strong = weak;
  strong.signal_strength = 1.0;
  CHECK(best_stump_gain(make_imbalanced_tabular(strong)) >=
        best_stump_gain(make_imbalanced_tabular(weak)));
}

TEST_CASE("make_claim_fixture concentrates claims in hotspots and overlaps buildings") {
  const GridSpec grid{0, 0, 500, 10, 10};
  const std::vector<CellId> hotspots = {{3, 4}};
  const auto [nfip, ia] = make_claim_fixture(grid, hotspots, 100, 21);
  const auto merged = merge_claims(nfip, ia);
  const auto normalized = normalize_claims(merged, 0.99);
  const auto cells = aggregate_to_grid(sum_by_building(normalized), grid);

  std::int64_t hotspot_count = 0;
  std::int64_t total_count = 0;
  for (const auto& cell : cells) {
    total_count += cell.claim_count;
    if (cell.id == CellId{3, 4}) hotspot_count = cell.claim_count;
  }
  CHECK(total_count > 0);
  CHECK(hotspot_count * 10 >= total_count * 9);  // >= 90% in the hotspot

  // at least one building id appears in both sources
  bool overlap = false;
  for (const auto& n : nfip) {
    for (const auto& i : ia) {
      if (n.building_id == i.building_id) overlap = true;
    }
  }
  CHECK(overlap);
}

TEST_CASE("make_claim_fixture with zero claims returns empty lists") {
  const GridSpec grid{0, 0, 500, 2, 2};
  const auto [nfip, ia] = make_claim_fixture(grid, {}, 0, 1);
  CHECK(nfip.empty());
  CHECK(ia.empty());
  CHECK_THROWS_AS(make_claim_fixture(grid, {{5, 0}}, 10, 1), std::invalid_argument);
}
