#include "zspose/solver.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "zspose/error.hpp"
#include "zspose/rng.hpp"

namespace zspose {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double rms_of(const RigidTransformSim3& t, std::span<const PointPair3D> pairs, const std::vector<int>& idx) {
  if (idx.empty()) return kInf;
  double acc = 0.0;
  for (int i : idx) {
    const auto& p = pairs[static_cast<std::size_t>(i)];
    acc += (p.dst - t.apply(p.src)).squaredNorm();
  }
  return std::sqrt(acc / static_cast<double>(idx.size()));
}

std::vector<int> inliers_of(const RigidTransformSim3& t, std::span<const PointPair3D> pairs, double thresh) {
  std::vector<int> out;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if ((pairs[i].dst - t.apply(pairs[i].src)).norm() < thresh) out.push_back(static_cast<int>(i));
  }
  return out;
}

std::vector<PointPair3D> gather(std::span<const PointPair3D> pairs, const std::vector<int>& idx) {
  std::vector<PointPair3D> out;
  out.reserve(idx.size());
  for (int i : idx) out.push_back(pairs[static_cast<std::size_t>(i)]);
  return out;
}

struct Refit {
  RigidTransformSim3 transform;
  double rms = kInf;
  bool ok = false;
};

Refit refit_on(std::span<const PointPair3D> pairs, const std::vector<int>& idx) {
  Refit r;
  try {
    const auto subset = gather(pairs, idx);
    r.transform = umeyama(subset);
    std::vector<int> all(subset.size());
    std::iota(all.begin(), all.end(), 0);
    r.rms = rms_of(r.transform, subset, all);
    r.ok = true;
  } catch (const Error& e) {
    if (e.code() != ErrorCode::DegenerateConfiguration) throw;
  }
  return r;
}

std::vector<Vec3> subsample(const std::vector<Vec3>& pts, int max_points, Rng& rng) {
  if (max_points <= 0 || pts.size() <= static_cast<std::size_t>(max_points)) return pts;
  std::vector<Vec3> out;
  out.reserve(static_cast<std::size_t>(max_points));
  std::sample(pts.begin(), pts.end(), std::back_inserter(out), max_points, rng);
  return out;
}

}  // namespace

void RansacConfig::validate() const {
  if (sample_size < 3) throw Error(ErrorCode::InvalidArgument, "RANSAC sample_size must be at least 3");
  if (!(inlier_thresh > 0.0)) throw Error(ErrorCode::InvalidArgument, "RANSAC inlier_thresh must be positive");
  if (max_iters < 1) throw Error(ErrorCode::InvalidArgument, "RANSAC max_iters must be positive");
}

Vec2 grid_to_pixel(GridPoint p, const CropRect& crop, int grid_height, int grid_width) {
  return {crop.x + (p.col + 0.5) * static_cast<double>(crop.w) / grid_width,
          crop.y + (p.row + 0.5) * static_cast<double>(crop.h) / grid_height};
}

Vec3 unproject(const Vec2& pixel, double depth, const CameraIntrinsics& intr) {
  if (!(depth > 0.0) || !std::isfinite(depth)) throw Error(ErrorCode::InvalidDepth, "depth must be positive and finite");
  return {(pixel.x() - intr.cx) / intr.fx * depth, (pixel.y() - intr.cy) / intr.fy * depth, depth};
}

Vec2 project(const Vec3& point, const CameraIntrinsics& intr) {
  return {intr.fx * point.x() / point.z() + intr.cx, intr.fy * point.y() / point.z() + intr.cy};
}

std::optional<double> sample_depth(const DepthImage& depth, const Vec2& pixel) {
  const int x = static_cast<int>(std::floor(pixel.x()));
  const int y = static_cast<int>(std::floor(pixel.y()));
  if (!depth.in_bounds(x, y) || !depth.is_valid(x, y)) return std::nullopt;
  return static_cast<double>(depth.at(x, y));
}

RigidTransformSim3 umeyama(std::span<const PointPair3D> pairs) {
  const std::size_t n = pairs.size();
  if (n < 3) throw Error(ErrorCode::DegenerateConfiguration, "umeyama needs at least 3 pairs");
  Vec3 mu_s = Vec3::Zero();
  Vec3 mu_d = Vec3::Zero();
  for (const auto& p : pairs) {
    mu_s += p.src;
    mu_d += p.dst;
  }
  mu_s /= static_cast<double>(n);
  mu_d /= static_cast<double>(n);

  Mat3 cov = Mat3::Zero();
  Mat3 src_scatter = Mat3::Zero();
  double var_s = 0.0;
  for (const auto& p : pairs) {
    const Vec3 s = p.src - mu_s;
    const Vec3 d = p.dst - mu_d;
    cov += d * s.transpose();
    src_scatter += s * s.transpose();
    var_s += s.squaredNorm();
  }
  cov /= static_cast<double>(n);
  src_scatter /= static_cast<double>(n);
  var_s /= static_cast<double>(n);

  const Eigen::Vector3d src_sv = Eigen::JacobiSVD<Mat3>(src_scatter).singularValues();
  if (!(var_s > 1e-18) || src_sv(1) <= 1e-10 * src_sv(0)) {
    throw Error(ErrorCode::DegenerateConfiguration, "source points are coincident or collinear");
  }

  Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Mat3& u = svd.matrixU();
  const Mat3& v = svd.matrixV();
  Eigen::Vector3d s_diag(1.0, 1.0, 1.0);
  if (u.determinant() * v.determinant() < 0.0) s_diag(2) = -1.0;

  const Mat3 r = u * s_diag.asDiagonal() * v.transpose();
  const double scale = svd.singularValues().dot(s_diag) / var_s;
  if (!(scale > 0.0) || !std::isfinite(scale)) {
    throw Error(ErrorCode::DegenerateConfiguration, "umeyama produced a non-positive scale");
  }
  const Rotation3 rot = Rotation3::project(r);
  return RigidTransformSim3(rot, mu_d - scale * (rot * mu_s), scale);
}

std::vector<double> residuals(const RigidTransformSim3& t, std::span<const PointPair3D> pairs) {
  std::vector<double> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back((p.dst - t.apply(p.src)).norm());
  return out;
}

PoseEstimate ransac_pose(std::span<const PointPair3D> pairs, const RansacConfig& cfg) {
  cfg.validate();
  const int n = static_cast<int>(pairs.size());
  if (n < cfg.min_pairs || n < cfg.sample_size) {
    throw Error(ErrorCode::NoConsensus, "only " + std::to_string(n) + " pairs available");
  }

  std::vector<int> best_inliers;
  double best_refit_rms = kInf;
  std::vector<int> order(static_cast<std::size_t>(n));
  std::vector<PointPair3D> sample(static_cast<std::size_t>(cfg.sample_size));

  for (int trial = 0; trial < cfg.max_iters; ++trial) {
    Rng rng = make_rng(cfg.seed, static_cast<std::uint64_t>(trial));
    std::iota(order.begin(), order.end(), 0);
    for (int i = 0; i < cfg.sample_size; ++i) {
      const int j = std::uniform_int_distribution<int>(i, n - 1)(rng);
      std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
      sample[static_cast<std::size_t>(i)] = pairs[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])];
    }
    RigidTransformSim3 model;
    try {
      model = umeyama(sample);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::DegenerateConfiguration) continue;
      throw;
    }
    std::vector<int> inl = inliers_of(model, pairs, cfg.inlier_thresh);
    if (inl.size() < best_inliers.size() || inl.empty()) continue;
    if (inl.size() == best_inliers.size()) {
      if (inl == best_inliers) continue;
      const Refit cand = refit_on(pairs, inl);
      if (!(cand.rms < best_refit_rms)) continue;
      best_refit_rms = cand.rms;
      best_inliers = std::move(inl);
      continue;
    }
    best_refit_rms = refit_on(pairs, inl).rms;
    best_inliers = std::move(inl);
  }

  if (best_inliers.size() < static_cast<std::size_t>(cfg.sample_size)) {
    throw Error(ErrorCode::NoConsensus, "no RANSAC trial reached " + std::to_string(cfg.sample_size) + " inliers");
  }

  PoseEstimate est;
  const Refit polished = refit_on(pairs, best_inliers);
  if (polished.ok) {
    std::vector<int> inl = inliers_of(polished.transform, pairs, cfg.inlier_thresh);
    if (inl.size() >= best_inliers.size()) {
      est.transform = polished.transform;
      est.inlier_indices = std::move(inl);
      est.inlier_count = static_cast<int>(est.inlier_indices.size());
      est.rms_residual = rms_of(est.transform, pairs, est.inlier_indices);
      return est;
    }
  }
  // Refit lost support; fall back to the consensus set's own least-squares fit
  // evaluated on that set.
  est.transform = polished.ok ? polished.transform : umeyama(gather(pairs, best_inliers));
  est.inlier_indices = best_inliers;
  est.inlier_count = static_cast<int>(best_inliers.size());
  est.rms_residual = rms_of(est.transform, pairs, best_inliers);
  return est;
}

PointCloud depth_to_cloud(const DepthImage& depth, const CameraIntrinsics& intr, int stride) {
  if (stride < 1) throw Error(ErrorCode::InvalidArgument, "stride must be at least 1");
  PointCloud cloud;
  for (int y = 0; y < depth.height; y += stride) {
    for (int x = 0; x < depth.width; x += stride) {
      if (!depth.is_valid(x, y)) continue;
      cloud.points.push_back(unproject(Vec2(x + 0.5, y + 0.5), depth.at(x, y), intr));
    }
  }
  return cloud;
}

PointCloud fuse_target_cloud(std::span<const DepthView> views, int stride) {
  if (views.empty()) throw Error(ErrorCode::InvalidArgument, "fuse_target_cloud needs at least one view");
  PointCloud fused;
  for (std::size_t v = 0; v < views.size(); ++v) {
    const RigidTransformSE3 view_to_world = views[v].extrinsics.inverse();
    const PointCloud local = depth_to_cloud(views[v].depth, views[v].intrinsics, stride);
    for (const Vec3& p : local.points) {
      fused.points.push_back(view_to_world.apply(p));
      fused.source_view.push_back(static_cast<int>(v));
    }
  }
  return fused;
}

NearestNeighborIndex::NearestNeighborIndex(std::span<const Vec3> points, bool use_tree)
    : points_(points.begin(), points.end()), use_tree_(use_tree && !points.empty()) {
  if (!use_tree_) return;
  order_.resize(points_.size());
  std::iota(order_.begin(), order_.end(), 0);
  nodes_.reserve(2 * points_.size() / 8 + 1);
  build(0, static_cast<int>(order_.size()));
}

int NearestNeighborIndex::build(int begin, int end) {
  constexpr int kLeafSize = 8;
  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back({begin, end});
  if (end - begin <= kLeafSize) return id;

  Vec3 lo = Vec3::Constant(kInf);
  Vec3 hi = Vec3::Constant(-kInf);
  for (int i = begin; i < end; ++i) {
    lo = lo.cwiseMin(points_[static_cast<std::size_t>(order_[static_cast<std::size_t>(i)])]);
    hi = hi.cwiseMax(points_[static_cast<std::size_t>(order_[static_cast<std::size_t>(i)])]);
  }
  int axis = 0;
  (hi - lo).maxCoeff(&axis);
  if (!(hi(axis) > lo(axis))) return id;  // all points coincide

  const int mid = begin + (end - begin) / 2;
  const auto first = order_.begin() + begin;
  std::nth_element(first, order_.begin() + mid, order_.begin() + end, [&](int a, int b) {
    const double pa = points_[static_cast<std::size_t>(a)](axis);
    const double pb = points_[static_cast<std::size_t>(b)](axis);
    return pa < pb || (pa == pb && a < b);
  });
  const double split = points_[static_cast<std::size_t>(order_[static_cast<std::size_t>(mid)])](axis);
  const int left = build(begin, mid);
  const int right = build(mid, end);
  Node& n = nodes_[static_cast<std::size_t>(id)];
  n.axis = axis;
  n.split = split;
  n.left = left;
  n.right = right;
  return id;
}

void NearestNeighborIndex::search(int node, const Vec3& q, int& best, double& best_d) const {
  const Node& n = nodes_[static_cast<std::size_t>(node)];
  if (n.axis < 0) {
    for (int i = n.begin; i < n.end; ++i) {
      const int idx = order_[static_cast<std::size_t>(i)];
      const double d = (points_[static_cast<std::size_t>(idx)] - q).squaredNorm();
      if (d < best_d || (d == best_d && idx < best)) {
        best_d = d;
        best = idx;
      }
    }
    return;
  }
  // Left holds coordinates <= split, right holds >= split.
  const double diff = q(n.axis) - n.split;
  const int near = diff <= 0.0 ? n.left : n.right;
  const int far = diff <= 0.0 ? n.right : n.left;
  search(near, q, best, best_d);
  if (diff * diff <= best_d) search(far, q, best, best_d);
}

int NearestNeighborIndex::nearest_exhaustive(const Vec3& q, double* dist_sq) const {
  int best = -1;
  double bd = kInf;
  for (std::size_t i = 0; i < points_.size(); ++i) {
    const double d = (points_[i] - q).squaredNorm();
    if (d < bd) {
      bd = d;
      best = static_cast<int>(i);
    }
  }
  if (dist_sq != nullptr) *dist_sq = bd;
  return best;
}

int NearestNeighborIndex::nearest(const Vec3& q, double* dist_sq) const {
  if (points_.empty()) return -1;
  if (!use_tree_) return nearest_exhaustive(q, dist_sq);
  int best = -1;
  double bd = kInf;
  search(0, q, best, bd);
  if (dist_sq != nullptr) *dist_sq = bd;
  return best;
}

IcpResult icp_sim3(const PointCloud& src, const PointCloud& dst, const RigidTransformSim3& init, const IcpConfig& cfg) {
  if (src.size() < 3 || dst.size() < 3) {
    throw Error(ErrorCode::DegenerateConfiguration, "ICP needs at least 3 points per cloud");
  }
  Rng src_rng = make_rng(cfg.seed, 1);
  Rng dst_rng = make_rng(cfg.seed, 2);
  const std::vector<Vec3> s = subsample(src.points, cfg.subsample, src_rng);
  const std::vector<Vec3> d = subsample(dst.points, cfg.subsample, dst_rng);
  const NearestNeighborIndex index(d, static_cast<int>(d.size()) >= cfg.exhaustive_below);

  IcpResult result;
  RigidTransformSim3 t = init;
  std::vector<PointPair3D> pairs(s.size());
  double prev_rms = kInf;
  std::vector<int> seen(d.size(), -1);
  for (int iter = 0;; ++iter) {
    double acc = 0.0;
    int distinct = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      double d2 = 0.0;
      const int j = index.nearest(t.apply(s[i]), &d2);
      pairs[i] = {s[i], d[static_cast<std::size_t>(j)]};
      if (seen[static_cast<std::size_t>(j)] != iter) {
        seen[static_cast<std::size_t>(j)] = iter;
        ++distinct;
      }
      acc += d2;
    }
    const double rms = std::sqrt(acc / static_cast<double>(s.size()));
    result.rms_history.push_back(rms);
    if (distinct < 3) {
      throw Error(ErrorCode::DegenerateConfiguration, "ICP associations collapsed onto fewer than 3 points");
    }
    if (std::abs(prev_rms - rms) < cfg.tol || iter >= cfg.max_iter) {
      result.estimate.rms_residual = rms;
      break;
    }
    t = umeyama(pairs);
    prev_rms = rms;
    result.iterations = iter + 1;
  }
  result.estimate.transform = t;
  result.estimate.inlier_count = static_cast<int>(s.size());
  result.estimate.inlier_indices.resize(s.size());
  std::iota(result.estimate.inlier_indices.begin(), result.estimate.inlier_indices.end(), 0);
  return result;
}

}  // namespace zspose
