#include "zspose/features.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "zspose/error.hpp"
#include "zspose/rng.hpp"

namespace zspose {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void require_foreground(const FeatureGrid& g, const char* which) {
  if (g.foreground_count() == 0) {
    throw Error(ErrorCode::EmptyForeground, std::string(which) + " grid has no foreground cells");
  }
}

void require_same_dim(const FeatureGrid& ref, const FeatureGrid& tgt) {
  if (ref.dim != tgt.dim) {
    throw Error(ErrorCode::DimMismatch,
                "descriptor lengths differ: " + std::to_string(ref.dim) + " vs " + std::to_string(tgt.dim));
  }
}

// Exhaustive scan over every cell of `grid` (foreground or not); first minimum wins.
int nearest_cell(const Eigen::Ref<const Eigen::RowVectorXd>& query, const FeatureGrid& grid, double* best_sq) {
  int best = -1;
  double best_d = kInf;
  for (int w = 0; w < grid.cells(); ++w) {
    const double d = (grid.data.row(w) - query).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = w;
    }
  }
  if (best_sq != nullptr) *best_sq = best_d;
  return best;
}

double cell_distance(const FeatureGrid& g, int a, int b) {
  const GridPoint pa = g.point(a);
  const GridPoint pb = g.point(b);
  return std::hypot(static_cast<double>(pa.row - pb.row), static_cast<double>(pa.col - pb.col));
}

double descriptor_distance(const FeatureGrid& ref, GridPoint u, const FeatureGrid& tgt, GridPoint v) {
  return (ref.data.row(ref.index(u)) - tgt.data.row(tgt.index(v))).norm();
}

// Ranks candidate reference cells of a score map (one best target per cell),
// keeps the top 2k and hands them to kmeans_diversify.
CorrespondenceSet reduce_score_matrix(const FeatureGrid& ref, const FeatureGrid& tgt, const Eigen::MatrixXd& scores,
                                      int k, const KMeansOptions& kmeans) {
  const std::vector<int> ref_fg = ref.foreground_indices();
  const std::vector<int> tgt_fg = tgt.foreground_indices();
  struct Cand {
    double score;
    int row;
    int col;
  };
  std::vector<Cand> cands;
  cands.reserve(ref_fg.size());
  for (int i = 0; i < scores.rows(); ++i) {
    int best = 0;
    for (int j = 1; j < scores.cols(); ++j) {
      if (scores(i, j) > scores(i, best)) best = j;
    }
    cands.push_back({scores(i, best), i, best});
  }
  std::stable_sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) { return a.score > b.score; });
  const std::size_t keep = std::min<std::size_t>(cands.size(), 2 * static_cast<std::size_t>(k));

  CorrespondenceSet pool;
  for (std::size_t c = 0; c < keep; ++c) {
    Correspondence corr;
    corr.ref_point = ref.point(ref_fg[static_cast<std::size_t>(cands[c].row)]);
    corr.tgt_point = tgt.point(tgt_fg[static_cast<std::size_t>(cands[c].col)]);
    corr.feat_dist = descriptor_distance(ref, corr.ref_point, tgt, corr.tgt_point);
    corr.cyc_dist = kInf;
    pool.items.push_back(corr);
  }
  if (pool.size() < static_cast<std::size_t>(k)) {
    pool.short_set = true;
    return pool;
  }
  CorrespondenceSet out = kmeans_diversify(pool, k, ref, kmeans);
  out.short_set = out.size() < static_cast<std::size_t>(k);
  return out;
}

double log_sum_exp(const Eigen::Ref<const Eigen::VectorXd>& v) {
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((v.array() - m).exp().sum());
}

}  // namespace

FeatureGrid::FeatureGrid(int h, int w, int d)
    : height(h),
      width(w),
      dim(d),
      data(DescriptorMatrix::Zero(static_cast<Eigen::Index>(h) * w, d)),
      foreground(static_cast<std::size_t>(h) * static_cast<std::size_t>(w), 1),
      saliency(static_cast<std::size_t>(h) * static_cast<std::size_t>(w), 0.0) {
  if (h <= 0 || w <= 0 || d <= 0) throw Error(ErrorCode::InvalidArgument, "grid dimensions must be positive");
}

int FeatureGrid::foreground_count() const {
  return static_cast<int>(std::count_if(foreground.begin(), foreground.end(), [](std::uint8_t f) { return f != 0; }));
}

std::vector<int> FeatureGrid::foreground_indices() const {
  std::vector<int> out;
  for (int i = 0; i < cells(); ++i) {
    if (is_foreground(i)) out.push_back(i);
  }
  return out;
}

FeatureGrid normalize_grid(FeatureGrid raw) {
  if (!raw.data.allFinite()) throw Error(ErrorCode::InvalidArgument, "feature grid has non-finite descriptors");
  for (int i = 0; i < raw.cells(); ++i) {
    const double n = raw.data.row(i).norm();
    if (n < 1e-12) {
      raw.data.row(i).setZero();
      raw.foreground[static_cast<std::size_t>(i)] = 0;
    } else {
      raw.data.row(i) /= n;
    }
  }
  for (double s : raw.saliency) {
    if (!std::isfinite(s)) throw Error(ErrorCode::InvalidArgument, "saliency must be finite");
  }
  return raw;
}

GridPoint nearest_neighbor(const Eigen::Ref<const Eigen::RowVectorXd>& query, const FeatureGrid& grid) {
  if (query.size() != grid.dim) throw Error(ErrorCode::DimMismatch, "query length differs from grid descriptor length");
  int best = -1;
  double best_d = kInf;
  for (int w = 0; w < grid.cells(); ++w) {
    if (!grid.is_foreground(w)) continue;
    const double d = (grid.data.row(w) - query).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = w;
    }
  }
  if (best < 0) throw Error(ErrorCode::EmptyForeground, "grid has no foreground cells");
  return grid.point(best);
}

CyclicalDistanceMap cyclical_distance_map(const FeatureGrid& ref, const FeatureGrid& tgt) {
  require_same_dim(ref, tgt);
  require_foreground(ref, "reference");
  require_foreground(tgt, "target");

  CyclicalDistanceMap map;
  map.height = ref.height;
  map.width = ref.width;
  const auto n = static_cast<std::size_t>(ref.cells());
  map.distance.assign(n, kInf);
  map.forward.assign(n, -1);
  map.back.assign(n, -1);
  map.forward_dist.assign(n, kInf);

  // Many reference cells share a target hit; memoize the return hop.
  std::vector<int> back_memo(static_cast<std::size_t>(tgt.cells()), -2);
  for (int u = 0; u < ref.cells(); ++u) {
    if (!ref.is_foreground(u)) continue;
    double sq = 0.0;
    const int v = nearest_cell(ref.data.row(u), tgt, &sq);
    const auto su = static_cast<std::size_t>(u);
    map.forward[su] = v;
    map.forward_dist[su] = std::sqrt(sq);
    if (!tgt.is_foreground(v)) continue;
    int& back = back_memo[static_cast<std::size_t>(v)];
    if (back == -2) back = nearest_cell(tgt.data.row(v), ref, nullptr);
    map.back[su] = back;
    if (!ref.is_foreground(back)) continue;
    map.distance[su] = cell_distance(ref, u, back);
  }
  return map;
}

CorrespondenceSet select_correspondences_cyclical(const FeatureGrid& ref, const FeatureGrid& tgt, int k,
                                                  const KMeansOptions& kmeans) {
  if (k < 1) throw Error(ErrorCode::InvalidArgument, "k must be at least 1");
  const CyclicalDistanceMap map = cyclical_distance_map(ref, tgt);

  std::vector<int> finite;
  for (int u = 0; u < ref.cells(); ++u) {
    if (std::isfinite(map.distance[static_cast<std::size_t>(u)])) finite.push_back(u);
  }
  std::stable_sort(finite.begin(), finite.end(), [&](int a, int b) {
    const auto sa = static_cast<std::size_t>(a);
    const auto sb = static_cast<std::size_t>(b);
    if (map.distance[sa] != map.distance[sb]) return map.distance[sa] < map.distance[sb];
    return map.forward_dist[sa] < map.forward_dist[sb];
  });
  const std::size_t keep = std::min<std::size_t>(finite.size(), 2 * static_cast<std::size_t>(k));

  CorrespondenceSet pool;
  for (std::size_t i = 0; i < keep; ++i) {
    const auto u = static_cast<std::size_t>(finite[i]);
    pool.items.push_back({ref.point(finite[i]), tgt.point(map.forward[u]), map.forward_dist[u], map.distance[u]});
  }
  if (pool.size() < static_cast<std::size_t>(k)) {
    pool.short_set = true;
    return pool;
  }
  CorrespondenceSet out = kmeans_diversify(pool, k, ref, kmeans);
  out.short_set = out.size() < static_cast<std::size_t>(k);
  return out;
}

CorrespondenceSet kmeans_diversify(const CorrespondenceSet& candidates, int k, const FeatureGrid& ref,
                                   const KMeansOptions& kmeans) {
  if (candidates.empty()) throw Error(ErrorCode::InvalidArgument, "kmeans_diversify needs candidates");
  if (k < 1) throw Error(ErrorCode::InvalidArgument, "k must be at least 1");

  const int n = static_cast<int>(candidates.size());
  const int clusters = std::min(k, n);
  DescriptorMatrix x(n, ref.dim);
  for (int i = 0; i < n; ++i) x.row(i) = ref.data.row(ref.index(candidates.items[static_cast<std::size_t>(i)].ref_point));

  // k-means++ seeding.
  Rng rng(derive_seed(kmeans.seed, 0x6b6d));
  DescriptorMatrix centers(clusters, ref.dim);
  std::vector<double> d2(static_cast<std::size_t>(n), kInf);
  int first = std::uniform_int_distribution<int>(0, n - 1)(rng);
  centers.row(0) = x.row(first);
  for (int c = 1; c < clusters; ++c) {
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
      auto& di = d2[static_cast<std::size_t>(i)];
      di = std::min(di, (x.row(i) - centers.row(c - 1)).squaredNorm());
      total += di;
    }
    int pick = first;
    if (total > 0.0) {
      const double r = std::uniform_real_distribution<double>(0.0, total)(rng);
      double cum = 0.0;
      for (int i = 0; i < n; ++i) {
        const double di = d2[static_cast<std::size_t>(i)];
        if (di <= 0.0) continue;
        pick = i;
        cum += di;
        if (cum > r) break;
      }
    }
    centers.row(c) = x.row(pick);
  }

  // Lloyd iterations; ties go to the lowest center index.
  std::vector<int> assign(static_cast<std::size_t>(n), -1);
  auto nearest_center = [&](int i, double* dist) {
    int best = 0;
    double bd = (x.row(i) - centers.row(0)).squaredNorm();
    for (int c = 1; c < clusters; ++c) {
      const double d = (x.row(i) - centers.row(c)).squaredNorm();
      if (d < bd) {
        bd = d;
        best = c;
      }
    }
    if (dist != nullptr) *dist = bd;
    return best;
  };
  for (int iter = 0; iter < kmeans.max_iterations; ++iter) {
    bool changed = false;
    std::vector<double> dist(static_cast<std::size_t>(n));
    std::vector<int> counts(static_cast<std::size_t>(clusters), 0);
    for (int i = 0; i < n; ++i) {
      const int c = nearest_center(i, &dist[static_cast<std::size_t>(i)]);
      if (c != assign[static_cast<std::size_t>(i)]) changed = true;
      assign[static_cast<std::size_t>(i)] = c;
      ++counts[static_cast<std::size_t>(c)];
    }
    // Re-seed empty clusters with the worst-fit point of a shared cluster.
    for (int c = 0; c < clusters; ++c) {
      if (counts[static_cast<std::size_t>(c)] > 0) continue;
      int worst = -1;
      for (int i = 0; i < n; ++i) {
        const auto si = static_cast<std::size_t>(i);
        if (counts[static_cast<std::size_t>(assign[si])] < 2 || dist[si] <= 0.0) continue;
        if (worst < 0 || dist[si] > dist[static_cast<std::size_t>(worst)]) worst = i;
      }
      if (worst < 0) continue;
      --counts[static_cast<std::size_t>(assign[static_cast<std::size_t>(worst)])];
      assign[static_cast<std::size_t>(worst)] = c;
      counts[static_cast<std::size_t>(c)] = 1;
      dist[static_cast<std::size_t>(worst)] = 0.0;
      centers.row(c) = x.row(worst);
      changed = true;
    }
    if (!changed) break;
    for (int c = 0; c < clusters; ++c) {
      if (counts[static_cast<std::size_t>(c)] == 0) continue;
      Eigen::RowVectorXd sum = Eigen::RowVectorXd::Zero(ref.dim);
      for (int i = 0; i < n; ++i) {
        if (assign[static_cast<std::size_t>(i)] == c) sum += x.row(i);
      }
      centers.row(c) = sum / counts[static_cast<std::size_t>(c)];
    }
  }

  // Representative per cluster: most salient reference cell.
  auto better = [&](int a, int b) {
    const Correspondence& ca = candidates.items[static_cast<std::size_t>(a)];
    const Correspondence& cb = candidates.items[static_cast<std::size_t>(b)];
    const double sa = ref.saliency[static_cast<std::size_t>(ref.index(ca.ref_point))];
    const double sb = ref.saliency[static_cast<std::size_t>(ref.index(cb.ref_point))];
    if (sa != sb) return sa > sb;
    if (ca.cyc_dist != cb.cyc_dist) return ca.cyc_dist < cb.cyc_dist;
    if (ca.feat_dist != cb.feat_dist) return ca.feat_dist < cb.feat_dist;
    if (ca.ref_point != cb.ref_point) return ca.ref_point < cb.ref_point;
    return ca.tgt_point < cb.tgt_point;
  };
  std::vector<int> rep(static_cast<std::size_t>(clusters), -1);
  for (int i = 0; i < n; ++i) {
    int& r = rep[static_cast<std::size_t>(assign[static_cast<std::size_t>(i)])];
    if (r < 0 || better(i, r)) r = i;
  }
  std::vector<int> chosen;
  for (int r : rep) {
    if (r >= 0) chosen.push_back(r);
  }
  std::sort(chosen.begin(), chosen.end());

  CorrespondenceSet out;
  for (int i : chosen) out.items.push_back(candidates.items[static_cast<std::size_t>(i)]);
  out.short_set = out.size() < static_cast<std::size_t>(k);
  return out;
}

CorrespondenceSet select_correspondences_mutual_nn(const FeatureGrid& ref, const FeatureGrid& tgt) {
  const CyclicalDistanceMap map = cyclical_distance_map(ref, tgt);
  CorrespondenceSet out;
  for (int u = 0; u < ref.cells(); ++u) {
    const auto su = static_cast<std::size_t>(u);
    if (std::isfinite(map.distance[su]) && map.back[su] == u) {
      out.items.push_back({ref.point(u), tgt.point(map.forward[su]), map.forward_dist[su], 0.0});
    }
  }
  return out;
}

Eigen::MatrixXd foreground_similarity(const FeatureGrid& ref, const FeatureGrid& tgt) {
  require_same_dim(ref, tgt);
  require_foreground(ref, "reference");
  require_foreground(tgt, "target");
  const std::vector<int> rf = ref.foreground_indices();
  const std::vector<int> tf = tgt.foreground_indices();
  Eigen::MatrixXd s(static_cast<Eigen::Index>(rf.size()), static_cast<Eigen::Index>(tf.size()));
  for (std::size_t i = 0; i < rf.size(); ++i) {
    for (std::size_t j = 0; j < tf.size(); ++j) {
      s(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = ref.data.row(rf[i]).dot(tgt.data.row(tf[j]));
    }
  }
  return s;
}

Eigen::MatrixXd sinkhorn_plan(const Eigen::MatrixXd& similarity, double epsilon, int iters) {
  if (!(epsilon > 0.0)) throw Error(ErrorCode::InvalidArgument, "epsilon must be positive");
  const Eigen::Index n = similarity.rows();
  const Eigen::Index m = similarity.cols();
  if (n == 0 || m == 0) throw Error(ErrorCode::EmptyForeground, "empty similarity matrix");
  const Eigen::MatrixXd log_k = similarity / epsilon;
  const double log_a = -std::log(static_cast<double>(n));
  const double log_b = -std::log(static_cast<double>(m));
  Eigen::VectorXd f = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd g = Eigen::VectorXd::Zero(m);
  for (int it = 0; it < iters; ++it) {
    for (Eigen::Index i = 0; i < n; ++i) f(i) = log_a - log_sum_exp(log_k.row(i).transpose() + g);
    for (Eigen::Index j = 0; j < m; ++j) g(j) = log_b - log_sum_exp(log_k.col(j) + f);
    if (!f.allFinite() || !g.allFinite()) {
      throw Error(ErrorCode::NumericalUnderflow, "Sinkhorn scaling collapsed; epsilon too small");
    }
  }
  Eigen::MatrixXd plan(n, m);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < m; ++j) plan(i, j) = std::exp(log_k(i, j) + f(i) + g(j));
  }
  if (!plan.allFinite() || plan.sum() <= 0.0) {
    throw Error(ErrorCode::NumericalUnderflow, "Sinkhorn plan underflowed");
  }
  return plan;
}

Eigen::MatrixXd dual_softmax_scores(const Eigen::MatrixXd& similarity, double temperature) {
  if (!(temperature > 0.0)) throw Error(ErrorCode::InvalidArgument, "temperature must be positive");
  const Eigen::MatrixXd z = similarity / temperature;
  Eigen::MatrixXd over_cols(z.rows(), z.cols());
  Eigen::MatrixXd over_rows(z.rows(), z.cols());
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const double lse = log_sum_exp(z.row(i).transpose());
    over_cols.row(i) = (z.row(i).array() - lse).exp().matrix();
  }
  for (Eigen::Index j = 0; j < z.cols(); ++j) {
    const double lse = log_sum_exp(z.col(j));
    over_rows.col(j) = (z.col(j).array() - lse).exp().matrix();
  }
  return over_cols.cwiseProduct(over_rows);
}

std::vector<std::pair<int, int>> top_k_entries(const Eigen::MatrixXd& scores, int k) {
  std::vector<std::pair<int, int>> all;
  all.reserve(static_cast<std::size_t>(scores.size()));
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    for (Eigen::Index j = 0; j < scores.cols(); ++j) all.emplace_back(static_cast<int>(i), static_cast<int>(j));
  }
  const std::size_t keep = std::min<std::size_t>(all.size(), static_cast<std::size_t>(std::max(k, 0)));
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(keep), all.end(),
                    [&](const auto& a, const auto& b) {
                      const double sa = scores(a.first, a.second);
                      const double sb = scores(b.first, b.second);
                      if (sa != sb) return sa > sb;
                      return a < b;
                    });
  all.resize(keep);
  return all;
}

CorrespondenceSet sinkhorn_match(const FeatureGrid& ref, const FeatureGrid& tgt, double epsilon, int iters, int k,
                                 const KMeansOptions& kmeans) {
  if (k < 1) throw Error(ErrorCode::InvalidArgument, "k must be at least 1");
  const Eigen::MatrixXd plan = sinkhorn_plan(foreground_similarity(ref, tgt), epsilon, iters);
  return reduce_score_matrix(ref, tgt, plan, k, kmeans);
}

CorrespondenceSet dual_softmax_match(const FeatureGrid& ref, const FeatureGrid& tgt, double temperature, int k,
                                     const KMeansOptions& kmeans) {
  if (k < 1) throw Error(ErrorCode::InvalidArgument, "k must be at least 1");
  const Eigen::MatrixXd scores = dual_softmax_scores(foreground_similarity(ref, tgt), temperature);
  return reduce_score_matrix(ref, tgt, scores, k, kmeans);
}

CorrespondenceSet match(const FeatureGrid& ref, const FeatureGrid& tgt, const MatcherConfig& cfg) {
  switch (cfg.kind) {
    case MatcherKind::Cyclical: return select_correspondences_cyclical(ref, tgt, cfg.k, cfg.kmeans);
    case MatcherKind::MutualNN: return select_correspondences_mutual_nn(ref, tgt);
    case MatcherKind::Sinkhorn:
      return sinkhorn_match(ref, tgt, cfg.sinkhorn_epsilon, cfg.sinkhorn_iters, cfg.k, cfg.kmeans);
    case MatcherKind::DualSoftmax: return dual_softmax_match(ref, tgt, cfg.softmax_temperature, cfg.k, cfg.kmeans);
  }
  throw Error(ErrorCode::InvalidArgument, "unknown matcher");
}

MatcherKind parse_matcher(std::string_view name) {
  if (name == "cyclical") return MatcherKind::Cyclical;
  if (name == "mutual-nn") return MatcherKind::MutualNN;
  if (name == "sinkhorn") return MatcherKind::Sinkhorn;
  if (name == "dual-softmax") return MatcherKind::DualSoftmax;
  throw Error(ErrorCode::InvalidArgument, "unknown matcher '" + std::string(name) + "'");
}

std::string_view to_string(MatcherKind kind) {
  switch (kind) {
    case MatcherKind::Cyclical: return "cyclical";
    case MatcherKind::MutualNN: return "mutual-nn";
    case MatcherKind::Sinkhorn: return "sinkhorn";
    case MatcherKind::DualSoftmax: return "dual-softmax";
  }
  return "unknown";
}

}  // namespace zspose
