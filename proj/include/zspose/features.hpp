#pragma once

#include <Eigen/Core>
#include <compare>
#include <cstdint>
#include <limits>
#include <string_view>
#include <vector>

namespace zspose {

using DescriptorMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct GridPoint {
  int row = 0;
  int col = 0;

  friend auto operator<=>(const GridPoint&, const GridPoint&) = default;
};

/// Dense per-view descriptor field. Cells are stored row-major; `data` holds
/// one descriptor per row.
struct FeatureGrid {
  int height = 0;
  int width = 0;
  int dim = 0;
  DescriptorMatrix data;
  std::vector<std::uint8_t> foreground;
  std::vector<double> saliency;

  FeatureGrid() = default;
  /// Zero descriptors, every cell foreground, zero saliency.
  FeatureGrid(int h, int w, int d);

  int cells() const { return height * width; }
  int index(GridPoint p) const { return p.row * width + p.col; }
  GridPoint point(int idx) const { return {idx / width, idx % width}; }
  bool contains(GridPoint p) const { return p.row >= 0 && p.row < height && p.col >= 0 && p.col < width; }
  bool is_foreground(int idx) const { return foreground[static_cast<std::size_t>(idx)] != 0; }
  int foreground_count() const;
  std::vector<int> foreground_indices() const;
};

struct Correspondence {
  GridPoint ref_point;
  GridPoint tgt_point;
  double feat_dist = 0.0;
  double cyc_dist = std::numeric_limits<double>::infinity();
};

struct CorrespondenceSet {
  std::vector<Correspondence> items;
  bool short_set = false;  // fewer than the requested k were available

  std::size_t size() const { return items.size(); }
  bool empty() const { return items.empty(); }
};

/// Per reference cell: distance between the cell and its cyclical return
/// point, in grid cells. +inf marks cycles that leave the foreground.
/// `forward` and `back` keep the two nearest-neighbour hops (cell indices).
struct CyclicalDistanceMap {
  int height = 0;
  int width = 0;
  std::vector<double> distance;
  std::vector<int> forward;           // v = NN(u) in target, -1 for off-foreground u
  std::vector<int> back;              // u' = NN(v) in reference, -1 when not reached
  std::vector<double> forward_dist;   // descriptor distance u -> v

  double at(GridPoint p) const { return distance[static_cast<std::size_t>(p.row * width + p.col)]; }
};

/// Unit-normalizes every cell. Cells with raw norm below 1e-12 become zero
/// vectors and are removed from the foreground.
FeatureGrid normalize_grid(FeatureGrid raw);

/// Foreground cell closest to `query` in L2; ties go to the first cell in
/// row-major order. Throws EmptyForeground.
GridPoint nearest_neighbor(const Eigen::Ref<const Eigen::RowVectorXd>& query, const FeatureGrid& grid);

CyclicalDistanceMap cyclical_distance_map(const FeatureGrid& ref, const FeatureGrid& tgt);

struct KMeansOptions {
  std::uint64_t seed = 0;
  int max_iterations = 100;
};

/// Top-2k cells by cyclical distance, reduced to k by kmeans_diversify.
CorrespondenceSet select_correspondences_cyclical(const FeatureGrid& ref, const FeatureGrid& tgt, int k,
                                                  const KMeansOptions& kmeans = {});

/// Clusters the reference descriptors of `candidates` into min(k, n) groups
/// and keeps the most salient reference cell of every non-empty group.
/// Output keeps the input order.
CorrespondenceSet kmeans_diversify(const CorrespondenceSet& candidates, int k, const FeatureGrid& ref,
                                   const KMeansOptions& kmeans = {});

CorrespondenceSet select_correspondences_mutual_nn(const FeatureGrid& ref, const FeatureGrid& tgt);

/// Cosine similarity between foreground cells (rows: ref foreground in
/// row-major order, cols: tgt foreground).
Eigen::MatrixXd foreground_similarity(const FeatureGrid& ref, const FeatureGrid& tgt);

/// Entropic optimal transport with uniform marginals, log-domain updates.
/// Throws NumericalUnderflow when a scaling vector collapses.
Eigen::MatrixXd sinkhorn_plan(const Eigen::MatrixXd& similarity, double epsilon, int iters);

/// softmax over columns times softmax over rows of similarity / temperature.
Eigen::MatrixXd dual_softmax_scores(const Eigen::MatrixXd& similarity, double temperature);

/// Largest k entries of a score matrix as (row, col); ties resolve row-major.
std::vector<std::pair<int, int>> top_k_entries(const Eigen::MatrixXd& scores, int k);

CorrespondenceSet sinkhorn_match(const FeatureGrid& ref, const FeatureGrid& tgt, double epsilon, int iters, int k,
                                 const KMeansOptions& kmeans = {});
CorrespondenceSet dual_softmax_match(const FeatureGrid& ref, const FeatureGrid& tgt, double temperature, int k,
                                     const KMeansOptions& kmeans = {});

enum class MatcherKind { Cyclical, MutualNN, Sinkhorn, DualSoftmax };

struct MatcherConfig {
  MatcherKind kind = MatcherKind::Cyclical;
  int k = 50;
  double sinkhorn_epsilon = 0.05;
  int sinkhorn_iters = 100;
  double softmax_temperature = 0.05;
  KMeansOptions kmeans;
};

CorrespondenceSet match(const FeatureGrid& ref, const FeatureGrid& tgt, const MatcherConfig& cfg);

MatcherKind parse_matcher(std::string_view name);
std::string_view to_string(MatcherKind kind);

}  // namespace zspose
