#include "zspose/pipeline.hpp"

#include <cmath>
#include <optional>
#include <string>

#include "zspose/error.hpp"

namespace zspose {

namespace {

void check_frame(const FrameBundle& f, const char* role) {
  const std::string who = std::string(role) + " frame '" + f.frame_id + "'";
  if (f.features.cells() == 0 || f.features.dim == 0) throw Error(ErrorCode::InvalidFrame, who + " has no features");
  if (f.depth.height == 0 || f.depth.width == 0) throw Error(ErrorCode::InvalidFrame, who + " has no depth");
  try {
    f.intrinsics.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::InvalidFrame, who + ": " + e.what());
  }
}

/// Depth lookup that inpaints the frame only when a sampled pixel is invalid.
class DepthLookup {
 public:
  explicit DepthLookup(const DepthImage& depth) : depth_(depth) {}

  std::optional<double> at(const Vec2& pixel) {
    if (auto z = sample_depth(depth_, pixel)) return z;
    if (!filled_attempted_) {
      filled_attempted_ = true;
      try {
        filled_ = inpaint_depth(depth_);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::NoValidDepth) throw;
      }
    }
    if (!filled_) return std::nullopt;
    return sample_depth(*filled_, pixel);
  }

 private:
  const DepthImage& depth_;
  bool filled_attempted_ = false;
  std::optional<DepthImage> filled_;
};

PoseEstimate identity_estimate() {
  PoseEstimate e;
  e.transform = RigidTransformSim3();
  return e;
}

}  // namespace

std::string_view to_string(FallbackFlag f) {
  return f == FallbackFlag::None ? "none" : "best_view_only_fallback";
}

void PipelineConfig::validate() const {
  if (!best_view_only && k < 4) throw Error(ErrorCode::InvalidArgument, "k must be at least 4");
  if (k < 1) throw Error(ErrorCode::InvalidArgument, "k must be positive");
  ransac.validate();
}

MatcherConfig PipelineConfig::matcher_config() const {
  MatcherConfig m;
  m.kind = matcher;
  m.k = k;
  m.sinkhorn_epsilon = sinkhorn_epsilon;
  m.sinkhorn_iters = sinkhorn_iters;
  m.softmax_temperature = softmax_temperature;
  m.kmeans.seed = ransac.seed;
  return m;
}

ViewSelectConfig PipelineConfig::view_config() const {
  ViewSelectConfig v;
  v.strategy = view_strategy;
  v.matcher = matcher_config();
  v.iou_tau = iou_tau;
  return v;
}

std::vector<PointPair3D> lift_correspondences(const FrameBundle& ref, const FrameBundle& tgt,
                                              const CorrespondenceSet& corrs) {
  DepthLookup ref_depth(ref.depth);
  DepthLookup tgt_depth(tgt.depth);
  std::vector<PointPair3D> out;
  out.reserve(corrs.size());
  for (const auto& c : corrs.items) {
    const Vec2 pu = grid_to_pixel(c.ref_point, ref.crop, ref.features.height, ref.features.width);
    const Vec2 pv = grid_to_pixel(c.tgt_point, tgt.crop, tgt.features.height, tgt.features.width);
    const auto zu = ref_depth.at(pu);
    if (!zu) continue;
    const auto zv = tgt_depth.at(pv);
    if (!zv) continue;
    out.push_back({unproject(pu, *zu, ref.intrinsics), unproject(pv, *zv, tgt.intrinsics)});
  }
  return out;
}

PipelineResult estimate_pose(const FrameBundle& ref, std::span<const FrameBundle> targets,
                             const PipelineConfig& cfg) {
  cfg.validate();
  if (targets.empty()) throw Error(ErrorCode::InvalidArgument, "estimate_pose needs at least one target frame");
  check_frame(ref, "reference");
  for (const auto& t : targets) check_frame(t, "target");

  std::vector<const FeatureGrid*> grids;
  grids.reserve(targets.size());
  for (const auto& t : targets) grids.push_back(&t.features);
  ViewSelection sel = select_best_view(ref.features, grids, cfg.view_config());

  PipelineResult result;
  result.best_view_index = sel.best.view_index;
  result.view_scores = std::move(sel.scores);
  result.estimate = identity_estimate();
  if (cfg.best_view_only) return result;

  const FrameBundle& best = targets[static_cast<std::size_t>(result.best_view_index)];
  result.correspondences = cfg.view_strategy == ViewStrategy::CorrespondSim
                               ? result.view_scores[static_cast<std::size_t>(result.best_view_index)].correspondences
                               : match(ref.features, best.features, cfg.matcher_config());

  const std::vector<PointPair3D> pairs = lift_correspondences(ref, best, result.correspondences);
  result.lifted_pairs = static_cast<int>(pairs.size());
  if (result.lifted_pairs < cfg.ransac.min_pairs) {
    result.fallback = FallbackFlag::BestViewOnlyFallback;
    return result;
  }
  try {
    result.estimate = ransac_pose(pairs, cfg.ransac);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::NoConsensus) throw;
    result.fallback = FallbackFlag::BestViewOnlyFallback;
  }
  return result;
}

std::vector<RigidTransformSim3> propagate_to_sequence(const PipelineResult& result,
                                                      std::span<const RigidTransformSE3> target_extrinsics) {
  if (result.best_view_index < 0 || static_cast<std::size_t>(result.best_view_index) >= target_extrinsics.size()) {
    throw Error(ErrorCode::InvalidArgument, "best view index outside the extrinsics list");
  }
  const RigidTransformSim3 best_inv =
      invert(RigidTransformSim3(target_extrinsics[static_cast<std::size_t>(result.best_view_index)]));
  std::vector<RigidTransformSim3> out;
  out.reserve(target_extrinsics.size());
  for (const auto& cam : target_extrinsics) {
    out.push_back(compose(RigidTransformSim3(cam), compose(best_inv, result.estimate.transform)));
  }
  return out;
}

IcpInit parse_icp_init(std::string_view name) {
  if (name == "identity") return IcpInit::Identity;
  if (name == "best-view") return IcpInit::BestView;
  throw Error(ErrorCode::InvalidArgument, "unknown ICP init '" + std::string(name) + "'");
}

std::string_view to_string(IcpInit init) { return init == IcpInit::Identity ? "identity" : "best-view"; }

PointCloud masked_cloud(const FrameBundle& frame, int stride) {
  if (stride < 1) throw Error(ErrorCode::InvalidArgument, "stride must be at least 1");
  const FeatureGrid& g = frame.features;
  const CropRect& crop = frame.crop;
  PointCloud cloud;
  for (int y = crop.y; y < crop.y + crop.h; y += stride) {
    const int row = static_cast<int>(std::floor((y + 0.5 - crop.y) * g.height / crop.h));
    for (int x = crop.x; x < crop.x + crop.w; x += stride) {
      const int col = static_cast<int>(std::floor((x + 0.5 - crop.x) * g.width / crop.w));
      if (!g.is_foreground(g.index({row, col}))) continue;
      if (!frame.depth.in_bounds(x, y) || !frame.depth.is_valid(x, y)) continue;
      cloud.points.push_back(unproject(Vec2(x + 0.5, y + 0.5), frame.depth.at(x, y), frame.intrinsics));
    }
  }
  return cloud;
}

IcpBaselineResult estimate_pose_icp(const FrameBundle& ref, std::span<const FrameBundle> targets,
                                    const IcpBaselineConfig& cfg) {
  if (targets.empty()) throw Error(ErrorCode::InvalidArgument, "ICP needs at least one target frame");
  check_frame(ref, "reference");
  for (const auto& t : targets) check_frame(t, "target");

  IcpBaselineResult out;
  if (cfg.init == IcpInit::BestView) {
    std::vector<const FeatureGrid*> grids;
    for (const auto& t : targets) grids.push_back(&t.features);
    out.target_view = select_best_view(ref.features, grids, cfg.selection.view_config()).best.view_index;
  }

  const PointCloud src = masked_cloud(ref, cfg.stride);
  const RigidTransformSE3& view_cam = targets[static_cast<std::size_t>(out.target_view)].extrinsics;
  PointCloud dst;
  for (const auto& t : targets) {
    const RigidTransformSE3 to_view = compose(view_cam, t.extrinsics.inverse());
    for (const Vec3& p : masked_cloud(t, cfg.stride).points) dst.points.push_back(to_view.apply(p));
  }
  out.icp = icp_sim3(src, dst, RigidTransformSim3(), cfg.icp);
  return out;
}

}  // namespace zspose
