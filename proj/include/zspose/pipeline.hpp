#pragma once

#include <span>
#include <string_view>
#include <vector>

#include "zspose/features.hpp"
#include "zspose/io.hpp"
#include "zspose/solver.hpp"
#include "zspose/viewsel.hpp"

namespace zspose {

enum class FallbackFlag { None, BestViewOnlyFallback };

std::string_view to_string(FallbackFlag f);

struct PipelineConfig {
  int k = 50;
  MatcherKind matcher = MatcherKind::Cyclical;
  ViewStrategy view_strategy = ViewStrategy::CorrespondSim;
  RansacConfig ransac;
  bool best_view_only = false;
  double sinkhorn_epsilon = 0.05;
  int sinkhorn_iters = 100;
  double softmax_temperature = 0.05;
  double iou_tau = 2.0;

  void validate() const;
  /// Matcher settings; K-means shares the RANSAC seed.
  MatcherConfig matcher_config() const;
  ViewSelectConfig view_config() const;
};

struct PipelineResult {
  PoseEstimate estimate;  // reference camera -> camera of view best_view_index
  int best_view_index = 0;
  CorrespondenceSet correspondences;
  std::vector<ViewScore> view_scores;
  FallbackFlag fallback = FallbackFlag::None;
  int lifted_pairs = 0;
};

/// Lifts grid correspondences to camera-frame 3D pairs. Pixels without depth
/// are looked up in the inpainted map; pairs still lacking depth are dropped.
std::vector<PointPair3D> lift_correspondences(const FrameBundle& ref, const FrameBundle& tgt,
                                              const CorrespondenceSet& corrs);

/// Throws InvalidFrame or AllViewsUnusable. Never throws NoConsensus: that
/// case degrades to the best-view-only answer with the fallback flag set.
PipelineResult estimate_pose(const FrameBundle& ref, std::span<const FrameBundle> targets,
                             const PipelineConfig& cfg);

/// For each target view i: cam_i * inv(cam_best) * estimate.
std::vector<RigidTransformSim3> propagate_to_sequence(const PipelineResult& result,
                                                      std::span<const RigidTransformSE3> target_extrinsics);

// ---- ICP baseline --------------------------------------------------------

enum class IcpInit { Identity, BestView };

IcpInit parse_icp_init(std::string_view name);
std::string_view to_string(IcpInit init);

struct IcpBaselineConfig {
  IcpInit init = IcpInit::Identity;
  IcpConfig icp;
  int stride = 2;  // pixel stride when building clouds
  PipelineConfig selection;  // view selection settings for BestView
};

struct IcpBaselineResult {
  IcpResult icp;
  int target_view = 0;
};

/// Cloud of the pixels whose grid cell is foreground, in the frame's camera.
PointCloud masked_cloud(const FrameBundle& frame, int stride);

/// Aligns the reference cloud to the fused target cloud expressed in the
/// camera of view 0 (identity init) or of the best view (best-view init),
/// starting from the identity in that frame.
IcpBaselineResult estimate_pose_icp(const FrameBundle& ref, std::span<const FrameBundle> targets,
                                    const IcpBaselineConfig& cfg);

}  // namespace zspose
