#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "zspose/features.hpp"
#include "zspose/geom.hpp"
#include "zspose/io.hpp"

namespace zspose {

/// A 3D correspondence: reference-view point and target-view point, each in
/// its own camera frame.
struct PointPair3D {
  Vec3 src;
  Vec3 dst;
};

struct RansacConfig {
  int max_iters = 1000;
  double inlier_thresh = 0.2;
  int sample_size = 4;
  std::uint64_t seed = 0;
  int min_pairs = 4;

  void validate() const;
};

struct PoseEstimate {
  RigidTransformSim3 transform;
  int inlier_count = 0;
  std::vector<int> inlier_indices;
  double rms_residual = 0.0;
};

struct PointCloud {
  std::vector<Vec3> points;
  std::vector<int> source_view;  // empty, or one entry per point

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
};

/// Centre of a grid cell in original-image pixel coordinates.
Vec2 grid_to_pixel(GridPoint p, const CropRect& crop, int grid_height, int grid_width);

/// Pinhole back-projection; throws InvalidDepth for depth <= 0 or non-finite.
Vec3 unproject(const Vec2& pixel, double depth, const CameraIntrinsics& intr);
Vec2 project(const Vec3& point, const CameraIntrinsics& intr);

/// Depth at the pixel containing `pixel` (continuous coordinates, pixel i
/// spans [i, i+1)). Empty when out of bounds or invalid.
std::optional<double> sample_depth(const DepthImage& depth, const Vec2& pixel);

/// Least-squares similarity dst ~ scale * R src + t with the reflection
/// correction. Throws DegenerateConfiguration for < 3 pairs or rank < 2.
RigidTransformSim3 umeyama(std::span<const PointPair3D> pairs);

/// Residual norms |dst - T(src)|.
std::vector<double> residuals(const RigidTransformSim3& t, std::span<const PointPair3D> pairs);

/// Fixed-budget RANSAC over umeyama fits followed by a refit on the winning
/// consensus set. Throws NoConsensus.
PoseEstimate ransac_pose(std::span<const PointPair3D> pairs, const RansacConfig& cfg);

struct DepthView {
  DepthImage depth;
  CameraIntrinsics intrinsics;
  RigidTransformSE3 extrinsics;  // world to view
};

/// World-frame cloud from every stride-th valid pixel (in x and y) of each view.
PointCloud fuse_target_cloud(std::span<const DepthView> views, int stride);

/// Camera-frame cloud of one view's valid pixels.
PointCloud depth_to_cloud(const DepthImage& depth, const CameraIntrinsics& intr, int stride);

struct IcpConfig {
  int max_iter = 50;
  double tol = 1e-6;
  int subsample = 5000;
  std::uint64_t seed = 0;
  int exhaustive_below = 2000;     // dst sizes below this use a plain scan
};

struct IcpResult {
  PoseEstimate estimate;
  int iterations = 0;
  std::vector<double> rms_history;  // association RMS at each iteration
};

IcpResult icp_sim3(const PointCloud& src, const PointCloud& dst, const RigidTransformSim3& init,
                   const IcpConfig& cfg = {});

/// Exact nearest-neighbour index over a fixed cloud (k-d tree, or a plain
/// scan when use_tree is false). Ties go to the lower point index.
class NearestNeighborIndex {
 public:
  NearestNeighborIndex(std::span<const Vec3> points, bool use_tree);
  int nearest(const Vec3& q, double* dist_sq = nullptr) const;

 private:
  struct Node {
    int begin = 0;
    int end = 0;
    int axis = -1;  // -1 for leaves
    double split = 0.0;
    int left = -1;
    int right = -1;
  };

  int build(int begin, int end);
  void search(int node, const Vec3& q, int& best, double& best_d) const;
  int nearest_exhaustive(const Vec3& q, double* dist_sq) const;

  std::vector<Vec3> points_;
  std::vector<int> order_;
  std::vector<Node> nodes_;
  bool use_tree_;
};

}  // namespace zspose
