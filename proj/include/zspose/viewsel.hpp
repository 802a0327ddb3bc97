#pragma once

#include <span>
#include <string_view>
#include <vector>

#include "zspose/features.hpp"

namespace zspose {

enum class ViewStrategy { CorrespondSim, GlobalSim, SaliencyIou, CyclicalDistIou };

ViewStrategy parse_view_strategy(std::string_view name);
std::string_view to_string(ViewStrategy s);

struct ViewScore {
  int view_index = 0;
  double score = 0.0;  // -inf marks an unusable view
  CorrespondenceSet correspondences;  // filled by CorrespondSim only
};

struct ViewSelectConfig {
  ViewStrategy strategy = ViewStrategy::CorrespondSim;
  MatcherConfig matcher;   // used by CorrespondSim
  double iou_tau = 2.0;    // grid cells, CyclicalDistIou
};

struct ViewSelection {
  ViewScore best;
  std::vector<ViewScore> scores;  // one per target, in input order
};

/// Sum of negated feature distances; -inf for an empty set. When k exceeds
/// the set size every missing correspondence counts as the largest possible
/// unit-descriptor distance, 2.
double correspondence_score(const CorrespondenceSet& corrs, int k = 0);

double global_similarity(const FeatureGrid& ref, const FeatureGrid& tgt);
double saliency_iou(const FeatureGrid& ref, const FeatureGrid& tgt);
double cyclical_distance_iou(const FeatureGrid& ref, const FeatureGrid& tgt, double tau);

/// Scores every target and returns the argmax (ties: smallest index).
/// Throws AllViewsUnusable when every score is -inf.
ViewSelection select_best_view(const FeatureGrid& ref, std::span<const FeatureGrid* const> targets,
                               const ViewSelectConfig& cfg);
ViewScore select_best_view(const FeatureGrid& ref, std::span<const FeatureGrid> targets, int k,
                           ViewStrategy strategy);

}  // namespace zspose
