#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <set>

#include "helpers.hpp"
#include "zspose/features.hpp"

using namespace zspose;

namespace {

FeatureGrid random_grid(Rng& rng, int h, int w, int d, double fg_fraction = 1.0) {
  std::normal_distribution<double> nd;
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  FeatureGrid g(h, w, d);
  for (int i = 0; i < g.cells(); ++i) {
    for (int k = 0; k < d; ++k) g.data(i, k) = nd(rng);
    g.foreground[static_cast<std::size_t>(i)] = uni(rng) < fg_fraction ? 1 : 0;
    g.saliency[static_cast<std::size_t>(i)] = uni(rng);
  }
  if (g.foreground_count() == 0) g.foreground[0] = 1;
  return normalize_grid(std::move(g));
}

Eigen::RowVectorXd basis(int d, int i) {
  Eigen::RowVectorXd v = Eigen::RowVectorXd::Zero(d);
  v(i) = 1.0;
  return v;
}

}  // namespace

TEST_CASE("normalize_grid gives unit descriptors and drops null cells") {
  FeatureGrid g(1, 3, 2);
  g.data << 3, 4, 0, 0, 0, -2;
  const FeatureGrid n = normalize_grid(g);
  CHECK(n.data.row(0).norm() == doctest::Approx(1.0));
  CHECK(n.data(0, 0) == doctest::Approx(0.6));
  CHECK(n.foreground[1] == 0);
  CHECK(n.data.row(1).norm() == 0.0);
  CHECK(n.data(2, 1) == doctest::Approx(-1.0));
  CHECK(n.foreground_count() == 2);

  FeatureGrid bad(1, 1, 2);
  bad.data(0, 0) = std::nan("");
  CHECK_CODE(normalize_grid(bad), ErrorCode::InvalidArgument);
}

TEST_CASE("nearest_neighbor searches the foreground and breaks ties row-major") {
  FeatureGrid g(2, 2, 3);
  g.data.row(0) = basis(3, 0);
  g.data.row(1) = basis(3, 1);
  g.data.row(2) = basis(3, 1);
  g.data.row(3) = basis(3, 2);
  g.foreground[0] = 0;
  CHECK(nearest_neighbor(basis(3, 0), g) != GridPoint{0, 0});  // masked out
  CHECK(nearest_neighbor(basis(3, 1), g) == GridPoint{0, 1});  // tie with (1,0)
  CHECK(nearest_neighbor(basis(3, 2), g) == GridPoint{1, 1});
  CHECK_CODE(nearest_neighbor(Eigen::RowVectorXd::Zero(2), g), ErrorCode::DimMismatch);
  std::fill(g.foreground.begin(), g.foreground.end(), 0);
  CHECK_CODE(nearest_neighbor(basis(3, 0), g), ErrorCode::EmptyForeground);
}

TEST_CASE("cyclical distance on a hand-built strip") {
  const int d = 4;
  FeatureGrid ref(1, 4, d);
  ref.data.row(0) = basis(d, 0);
  ref.data.row(1) = basis(d, 1);
  ref.data.row(2) = basis(d, 2);
  ref.data.row(3) = (basis(d, 0) + 0.1 * basis(d, 1)).normalized();
  FeatureGrid tgt(1, 3, d);
  tgt.data.row(0) = basis(d, 0);
  tgt.data.row(1) = basis(d, 1);
  tgt.data.row(2) = basis(d, 2);
  const CyclicalDistanceMap map = cyclical_distance_map(ref, tgt);
  CHECK(map.distance == std::vector<double>{0.0, 0.0, 0.0, 3.0});
  CHECK(map.forward == std::vector<int>{0, 1, 2, 0});
  CHECK(map.back == std::vector<int>{0, 1, 2, 0});
}

TEST_CASE("cycles leaving the foreground are gated") {
  const int d = 4;
  FeatureGrid ref(1, 2, d);
  ref.data.row(0) = basis(d, 0);
  ref.data.row(1) = (basis(d, 0) + 0.05 * basis(d, 1)).normalized();
  ref.foreground[1] = 0;
  FeatureGrid tgt(1, 2, d);
  tgt.data.row(0) = (basis(d, 0) + 0.05 * basis(d, 1)).normalized();
  tgt.data.row(1) = basis(d, 3);
  const CyclicalDistanceMap map = cyclical_distance_map(ref, tgt);
  CHECK(map.forward[0] == 0);
  CHECK(map.back[0] == 1);
  CHECK(std::isinf(map.distance[0]));
  CHECK(std::isinf(map.distance[1]));

  FeatureGrid tgt2 = tgt;
  tgt2.foreground[0] = 0;
  const CyclicalDistanceMap map2 = cyclical_distance_map(ref, tgt2);
  CHECK(map2.back[0] == -1);
  CHECK(std::isinf(map2.distance[0]));
}

TEST_CASE("self-pair maps vanish on the foreground") {
  Rng rng(21);
  for (int t = 0; t < 20; ++t) {
    const FeatureGrid g = random_grid(rng, 8, 9, 16, 0.6);
    const CyclicalDistanceMap map = cyclical_distance_map(g, g);
    for (int u = 0; u < g.cells(); ++u) {
      if (g.is_foreground(u)) {
        CHECK(map.distance[static_cast<std::size_t>(u)] == 0.0);
      } else {
        CHECK(std::isinf(map.distance[static_cast<std::size_t>(u)]));
      }
    }
  }
}

TEST_CASE("finite cyclical distances are bounded by the grid diameter") {
  Rng rng(22);
  for (int t = 0; t < 50; ++t) {
    const FeatureGrid a = random_grid(rng, 7, 11, 8, 0.7);
    const FeatureGrid b = random_grid(rng, 9, 6, 8, 0.7);
    const CyclicalDistanceMap map = cyclical_distance_map(a, b);
    for (double v : map.distance) {
      if (std::isfinite(v)) CHECK(v <= a.height + a.width);
    }
  }
}

TEST_CASE("mutual nearest neighbours have zero cyclical distance") {
  Rng rng(23);
  for (int t = 0; t < 100; ++t) {
    const FeatureGrid a = random_grid(rng, 6, 6, 4, 0.8);
    const FeatureGrid b = random_grid(rng, 6, 6, 4, 0.8);
    const CyclicalDistanceMap map = cyclical_distance_map(a, b);
    const CorrespondenceSet mnn = select_correspondences_mutual_nn(a, b);
    for (const auto& c : mnn.items) {
      CHECK(map.at(c.ref_point) == 0.0);
      CHECK(c.cyc_dist == 0.0);
      CHECK(a.is_foreground(a.index(c.ref_point)));
      CHECK(b.is_foreground(b.index(c.tgt_point)));
    }
  }
}

TEST_CASE("mutual NN can be empty when every return hop leaves the foreground") {
  const int d = 9;
  FeatureGrid ref(2, 3, d);
  FeatureGrid tgt(2, 3, d);
  for (int i = 0; i < 3; ++i) {
    ref.data.row(i) = basis(d, i);
    ref.data.row(3 + i) = (basis(d, i) + basis(d, 3 + i)).normalized();
    ref.foreground[static_cast<std::size_t>(3 + i)] = 0;
    tgt.data.row(i) = (basis(d, i) + 0.5 * basis(d, 3 + i)).normalized();
    tgt.data.row(3 + i) = basis(d, 6 + i);
    tgt.foreground[static_cast<std::size_t>(3 + i)] = 0;
  }
  CHECK(select_correspondences_mutual_nn(ref, tgt).empty());
  const CyclicalDistanceMap map = cyclical_distance_map(ref, tgt);
  for (int u = 0; u < 3; ++u) CHECK(map.forward[static_cast<std::size_t>(u)] == u);
}

TEST_CASE("cyclical selection returns exactly k with enough finite cells") {
  Rng rng(24);
  for (int t = 0; t < 20; ++t) {
    const FeatureGrid a = random_grid(rng, 10, 10, 6);
    const FeatureGrid b = random_grid(rng, 10, 10, 6);
    const CyclicalDistanceMap map = cyclical_distance_map(a, b);
    const auto finite = std::count_if(map.distance.begin(), map.distance.end(), [](double v) { return std::isfinite(v); });
    const int k = 8;
    const CorrespondenceSet s = select_correspondences_cyclical(a, b, k);
    if (finite >= 2 * k) {
      CHECK(s.size() == static_cast<std::size_t>(k));
      CHECK_FALSE(s.short_set);
    }
    std::set<GridPoint> refs;
    for (const auto& c : s.items) {
      CHECK(std::isfinite(c.cyc_dist));
      CHECK(c.cyc_dist == map.at(c.ref_point));
      CHECK(c.feat_dist == doctest::Approx((a.data.row(a.index(c.ref_point)) - b.data.row(b.index(c.tgt_point))).norm()));
      refs.insert(c.ref_point);
    }
    CHECK(refs.size() == s.size());
  }
}

TEST_CASE("cyclical selection flags short sets") {
  const int d = 4;
  FeatureGrid g(1, 2, d);
  g.data.row(0) = basis(d, 0);
  g.data.row(1) = basis(d, 1);
  const CorrespondenceSet s = select_correspondences_cyclical(g, g, 5);
  CHECK(s.short_set);
  CHECK(s.size() == 2);
  CHECK_CODE(select_correspondences_cyclical(g, g, 0), ErrorCode::InvalidArgument);
}

TEST_CASE("kmeans_diversify keeps the most salient member of each cluster") {
  const int d = 3;
  FeatureGrid ref(1, 6, d);
  const double sal[6] = {0.2, 0.9, 0.1, 0.3, 0.3, 0.8};
  for (int i = 0; i < 6; ++i) {
    ref.data.row(i) = i < 3 ? basis(d, 0) : basis(d, 1);
    ref.saliency[static_cast<std::size_t>(i)] = sal[i];
  }
  CorrespondenceSet cands;
  for (int i = 0; i < 6; ++i) cands.items.push_back({{0, i}, {0, i}, 0.1 * i, 0.0});
  const CorrespondenceSet out = kmeans_diversify(cands, 2, ref);
  REQUIRE(out.size() == 2);
  CHECK(out.items[0].ref_point == GridPoint{0, 1});
  CHECK(out.items[1].ref_point == GridPoint{0, 5});
  CHECK_FALSE(out.short_set);

  // k above the candidate count returns everything, flagged short.
  const CorrespondenceSet all = kmeans_diversify(cands, 10, ref);
  CHECK(all.short_set);
}

TEST_CASE("kmeans_diversify is deterministic per seed and preserves input order") {
  Rng rng(25);
  const FeatureGrid a = random_grid(rng, 8, 8, 5);
  CorrespondenceSet cands;
  for (int i = 0; i < 40; ++i) cands.items.push_back({a.point(i), a.point(63 - i), 0.01 * i, 1.0});
  KMeansOptions opts;
  opts.seed = 9;
  const CorrespondenceSet x = kmeans_diversify(cands, 12, a, opts);
  const CorrespondenceSet y = kmeans_diversify(cands, 12, a, opts);
  REQUIRE(x.size() == y.size());
  CHECK(x.size() == 12);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(x.items[i].ref_point == y.items[i].ref_point);
  for (std::size_t i = 1; i < x.size(); ++i) CHECK(a.index(x.items[i - 1].ref_point) < a.index(x.items[i].ref_point));
}

TEST_CASE("sinkhorn plan meets uniform marginals") {
  Rng rng(26);
  for (int t = 0; t < 20; ++t) {
    const FeatureGrid a = random_grid(rng, 4, 4, 64);
    const FeatureGrid b = random_grid(rng, 4, 4, 64);
    const Eigen::MatrixXd plan = sinkhorn_plan(foreground_similarity(a, b), 0.05, 100);
    CHECK((plan.rowwise().sum().array() - 1.0 / 16).abs().maxCoeff() < 1e-6);
    CHECK((plan.colwise().sum().array() - 1.0 / 16).abs().maxCoeff() < 1e-6);
    CHECK(plan.minCoeff() >= 0.0);
  }
  CHECK_CODE(sinkhorn_plan(Eigen::MatrixXd::Ones(2, 2), 0.0, 10), ErrorCode::InvalidArgument);
  CHECK_CODE(sinkhorn_plan(Eigen::MatrixXd(0, 3), 0.1, 10), ErrorCode::EmptyForeground);
}

TEST_CASE("sinkhorn converges more slowly on low-dimensional descriptors") {
  // Wider similarity spread at small D; the marginal error still shrinks with
  // more scalings.
  Rng rng(26);
  const FeatureGrid a = random_grid(rng, 4, 4, 8);
  const FeatureGrid b = random_grid(rng, 4, 4, 8);
  const Eigen::MatrixXd s = foreground_similarity(a, b);
  auto row_error = [&](int iters) {
    return (sinkhorn_plan(s, 0.05, iters).rowwise().sum().array() - 1.0 / 16).abs().maxCoeff();
  };
  CHECK(row_error(400) < row_error(100));
  CHECK(row_error(5000) < 1e-6);
}

TEST_CASE("sinkhorn on a 5x5 similarity") {
  Rng rng(5);
  const FeatureGrid a = random_grid(rng, 1, 5, 64);
  const FeatureGrid b = random_grid(rng, 1, 5, 64);
  const Eigen::MatrixXd plan = sinkhorn_plan(foreground_similarity(a, b), 0.1, 100);
  CHECK((plan.rowwise().sum().array() - 0.2).abs().maxCoeff() < 1e-6);
  CHECK((plan.colwise().sum().array() - 0.2).abs().maxCoeff() < 1e-6);

  // entries spread over [-1, 1] converge too, only more slowly
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Eigen::MatrixXd s(5, 5);
  for (Eigen::Index i = 0; i < 25; ++i) s(i) = u(rng);
  const Eigen::MatrixXd wide = sinkhorn_plan(s, 0.1, 2000);
  CHECK((wide.rowwise().sum().array() - 0.2).abs().maxCoeff() < 1e-6);
  CHECK((wide.colwise().sum().array() - 0.2).abs().maxCoeff() < 1e-6);
}

TEST_CASE("sinkhorn with large epsilon tends to the uniform plan") {
  const Eigen::MatrixXd plan = sinkhorn_plan(Eigen::MatrixXd::Constant(4, 6, 0.3), 100.0, 10);
  CHECK((plan.array() - 1.0 / 24).abs().maxCoeff() < 1e-12);
}

TEST_CASE("dual softmax equals direct recomputation") {
  Rng rng(27);
  const FeatureGrid a = random_grid(rng, 3, 5, 6, 0.7);
  const FeatureGrid b = random_grid(rng, 4, 3, 6, 0.7);
  const Eigen::MatrixXd s = foreground_similarity(a, b);
  const double temp = 0.1;
  const Eigen::MatrixXd p = dual_softmax_scores(s, temp);
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    for (Eigen::Index j = 0; j < s.cols(); ++j) {
      double row = 0.0;
      double col = 0.0;
      for (Eigen::Index jj = 0; jj < s.cols(); ++jj) row += std::exp(s(i, jj) / temp);
      for (Eigen::Index ii = 0; ii < s.rows(); ++ii) col += std::exp(s(ii, j) / temp);
      const double e = std::exp(s(i, j) / temp);
      CHECK(std::abs(p(i, j) - (e / row) * (e / col)) < 1e-9);
    }
  }
}

TEST_CASE("top_k_entries orders by score then row-major") {
  Eigen::MatrixXd s(2, 3);
  s << 0.5, 0.9, 0.5, 0.9, 0.1, 0.2;
  const auto top = top_k_entries(s, 4);
  const std::vector<std::pair<int, int>> expect{{0, 1}, {1, 0}, {0, 0}, {0, 2}};
  CHECK(top == expect);
  CHECK(top_k_entries(s, 100).size() == 6);
}

TEST_CASE("score-matrix matchers return foreground pairs") {
  Rng rng(28);
  const FeatureGrid a = random_grid(rng, 6, 6, 8, 0.8);
  const FeatureGrid b = random_grid(rng, 6, 6, 8, 0.8);
  for (const auto& s : {sinkhorn_match(a, b, 0.05, 100, 5), dual_softmax_match(a, b, 0.05, 5)}) {
    CHECK(s.size() == 5);
    for (const auto& c : s.items) {
      CHECK(a.is_foreground(a.index(c.ref_point)));
      CHECK(b.is_foreground(b.index(c.tgt_point)));
    }
  }
}

TEST_CASE("matcher names round-trip") {
  for (auto k : {MatcherKind::Cyclical, MatcherKind::MutualNN, MatcherKind::Sinkhorn, MatcherKind::DualSoftmax}) {
    CHECK(parse_matcher(to_string(k)) == k);
  }
  CHECK_CODE(parse_matcher("nope"), ErrorCode::InvalidArgument);
}

TEST_CASE("dimension mismatch is rejected") {
  Rng rng(29);
  const FeatureGrid a = random_grid(rng, 3, 3, 4);
  const FeatureGrid b = random_grid(rng, 3, 3, 5);
  CHECK_CODE(cyclical_distance_map(a, b), ErrorCode::DimMismatch);
}
