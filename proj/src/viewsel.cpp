#include "zspose/viewsel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "zspose/error.hpp"

namespace zspose {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

struct MaskBox {
  int r0 = 0, r1 = -1, c0 = 0, c1 = -1;
  bool empty() const { return r1 < r0; }
};

MaskBox bounding_box(const FeatureGrid& g) {
  MaskBox b{g.height, -1, g.width, -1};
  for (int idx = 0; idx < g.cells(); ++idx) {
    if (!g.is_foreground(idx)) continue;
    const GridPoint p = g.point(idx);
    b.r0 = std::min(b.r0, p.row);
    b.r1 = std::max(b.r1, p.row);
    b.c0 = std::min(b.c0, p.col);
    b.c1 = std::max(b.c1, p.col);
  }
  return b;
}

Eigen::RowVectorXd pooled(const FeatureGrid& g) {
  Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(g.dim);
  for (int idx : g.foreground_indices()) acc += g.data.row(idx);
  return acc;
}

}  // namespace

ViewStrategy parse_view_strategy(std::string_view name) {
  if (name == "correspond-sim") return ViewStrategy::CorrespondSim;
  if (name == "global-sim") return ViewStrategy::GlobalSim;
  if (name == "saliency-iou") return ViewStrategy::SaliencyIou;
  if (name == "cyclical-dist-iou") return ViewStrategy::CyclicalDistIou;
  throw Error(ErrorCode::InvalidArgument, "unknown view strategy '" + std::string(name) + "'");
}

std::string_view to_string(ViewStrategy s) {
  switch (s) {
    case ViewStrategy::CorrespondSim: return "correspond-sim";
    case ViewStrategy::GlobalSim: return "global-sim";
    case ViewStrategy::SaliencyIou: return "saliency-iou";
    case ViewStrategy::CyclicalDistIou: return "cyclical-dist-iou";
  }
  return "unknown";
}

double correspondence_score(const CorrespondenceSet& corrs, int k) {
  if (corrs.empty()) return kNegInf;
  double s = 0.0;
  for (const auto& c : corrs.items) s -= c.feat_dist;
  const int missing = k - static_cast<int>(corrs.size());
  if (missing > 0) s -= 2.0 * missing;
  return s;
}

double global_similarity(const FeatureGrid& ref, const FeatureGrid& tgt) {
  if (ref.dim != tgt.dim) throw Error(ErrorCode::DimMismatch, "descriptor dimensions differ");
  const Eigen::RowVectorXd a = pooled(ref);
  const Eigen::RowVectorXd b = pooled(tgt);
  const double na = a.norm();
  const double nb = b.norm();
  if (!(na > 1e-12) || !(nb > 1e-12)) return kNegInf;
  return a.dot(b) / (na * nb);
}

double saliency_iou(const FeatureGrid& ref, const FeatureGrid& tgt) {
  const MaskBox a = bounding_box(ref);
  const MaskBox b = bounding_box(tgt);
  if (a.empty() || b.empty()) return kNegInf;
  // Shift the target mask so both bounding-box centres coincide.
  const int dr = static_cast<int>(std::lround(((a.r0 + a.r1) - (b.r0 + b.r1)) / 2.0));
  const int dc = static_cast<int>(std::lround(((a.c0 + a.c1) - (b.c0 + b.c1)) / 2.0));
  int inter = 0;
  for (int idx = 0; idx < tgt.cells(); ++idx) {
    if (!tgt.is_foreground(idx)) continue;
    const GridPoint p = tgt.point(idx);
    const GridPoint q{p.row + dr, p.col + dc};
    if (ref.contains(q) && ref.is_foreground(ref.index(q))) ++inter;
  }
  const int uni = ref.foreground_count() + tgt.foreground_count() - inter;
  return static_cast<double>(inter) / uni;
}

double cyclical_distance_iou(const FeatureGrid& ref, const FeatureGrid& tgt, double tau) {
  const int tgt_fg = tgt.foreground_count();
  if (tgt_fg == 0 || ref.foreground_count() == 0) return kNegInf;
  const CyclicalDistanceMap map = cyclical_distance_map(ref, tgt);
  std::vector<std::uint8_t> hit(static_cast<std::size_t>(tgt.cells()), 0);
  for (std::size_t u = 0; u < map.distance.size(); ++u) {
    if (map.distance[u] < tau && map.forward[u] >= 0) hit[static_cast<std::size_t>(map.forward[u])] = 1;
  }
  int inter = 0;
  int hits = 0;
  for (int v = 0; v < tgt.cells(); ++v) {
    if (!hit[static_cast<std::size_t>(v)]) continue;
    ++hits;
    if (tgt.is_foreground(v)) ++inter;
  }
  return static_cast<double>(inter) / (tgt_fg + hits - inter);
}

ViewSelection select_best_view(const FeatureGrid& ref, std::span<const FeatureGrid* const> targets,
                               const ViewSelectConfig& cfg) {
  if (targets.empty()) throw Error(ErrorCode::InvalidArgument, "select_best_view needs at least one target");
  ViewSelection sel;
  sel.scores.reserve(targets.size());
  for (std::size_t j = 0; j < targets.size(); ++j) {
    const FeatureGrid& tgt = *targets[j];
    ViewScore vs;
    vs.view_index = static_cast<int>(j);
    switch (cfg.strategy) {
      case ViewStrategy::CorrespondSim:
        if (tgt.foreground_count() == 0) {
          vs.score = kNegInf;
          break;
        }
        vs.correspondences = match(ref, tgt, cfg.matcher);
        vs.score = correspondence_score(vs.correspondences, cfg.matcher.k);
        break;
      case ViewStrategy::GlobalSim: vs.score = global_similarity(ref, tgt); break;
      case ViewStrategy::SaliencyIou: vs.score = saliency_iou(ref, tgt); break;
      case ViewStrategy::CyclicalDistIou: vs.score = cyclical_distance_iou(ref, tgt, cfg.iou_tau); break;
    }
    if (std::isnan(vs.score)) vs.score = kNegInf;
    sel.scores.push_back(std::move(vs));
  }
  int best = -1;
  for (std::size_t j = 0; j < sel.scores.size(); ++j) {
    const double s = sel.scores[j].score;
    if (s == kNegInf) continue;
    if (best < 0 || s > sel.scores[static_cast<std::size_t>(best)].score) best = static_cast<int>(j);
  }
  if (best < 0) throw Error(ErrorCode::AllViewsUnusable, "no target view produced a usable score");
  sel.best = sel.scores[static_cast<std::size_t>(best)];
  return sel;
}

ViewScore select_best_view(const FeatureGrid& ref, std::span<const FeatureGrid> targets, int k,
                           ViewStrategy strategy) {
  std::vector<const FeatureGrid*> ptrs;
  ptrs.reserve(targets.size());
  for (const auto& t : targets) ptrs.push_back(&t);
  ViewSelectConfig cfg;
  cfg.strategy = strategy;
  cfg.matcher.k = k;
  return select_best_view(ref, ptrs, cfg).best;
}

}  // namespace zspose
