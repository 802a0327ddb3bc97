#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "zspose/eval.hpp"
#include "zspose/features.hpp"
#include "zspose/geom.hpp"
#include "zspose/io.hpp"

namespace zspose {

struct CategoryPrototype {
  DescriptorMatrix descriptors;  // P x D, unit rows, pairwise cosine < 0.5
  std::vector<Vec3> positions;   // canonical frame, unit-scale ellipsoid surface
  Vec3 centroid = Vec3::Zero();

  int part_count() const { return static_cast<int>(positions.size()); }
};

/// Throws SamplingExhausted when 10*p*d descriptor draws are not enough.
CategoryPrototype gen_category(int p, int d, std::uint64_t seed, const Vec3& semi_axes = Vec3(1.5, 1.2, 1.0));

struct InstanceSpec {
  std::shared_ptr<const CategoryPrototype> prototype;
  std::vector<Vec3> positions;  // canonical frame, after shape jitter
  Vec3 centroid = Vec3::Zero();
  double shape_noise = 0.0;
  double scale = 1.0;
  RigidTransformSim3 canonical_pose;  // label: canonical -> world, scale included
};

/// Random Haar rotation, N(0, I) translation, scale U[0.8, 1.25].
InstanceSpec make_instance(std::shared_ptr<const CategoryPrototype> proto, double shape_noise, std::uint64_t seed);

struct SynthRenderConfig {
  int grid_height = 28;
  int grid_width = 28;
  CameraIntrinsics intrinsics{250.0, 250.0, 128.0, 120.0, 256, 240};
  CropRect crop{16, 8, 224, 224};
  double feat_noise = 0.0;   // per-component Gaussian sigma before re-normalization
  double depth_noise = 0.0;  // per-pixel Gaussian sigma, scene units
  double ring_mix = 1.0;     // weight of the per-cell random component on the dilated ring
  int ring_radius = 2;       // grid cells
  double camera_radius = 4.0;       // in units of the instance scale
  double ring_elevation_deg = 25.0;
  std::vector<double> ring_azimuths_deg;  // empty: evenly spaced over 360
  bool occlusion = true;     // hide parts whose outward normal faces away

  std::vector<double> azimuths(int n_views) const;
};

struct RenderedView {
  FrameBundle bundle;        // features normalized
  FeatureGrid raw_features;  // exactly what a .zpf file stores
  std::vector<int> cell_part;          // owning part per cell (part and ring cells), -1 elsewhere
  std::vector<std::uint8_t> part_cell; // 1 where the part itself projects
  std::vector<int> visible_parts;
};

/// World-to-view camera on a sphere around the instance, looking at its centre.
RigidTransformSE3 orbit_camera(const InstanceSpec& inst, double azimuth_deg, double elevation_deg, double roll_deg,
                               double radius);

/// Throws NoVisibleParts.
RenderedView render_view(const InstanceSpec& inst, const RigidTransformSE3& extrinsics, const SynthRenderConfig& cfg,
                         std::uint64_t seed, const std::string& frame_id = "frame");

struct NoiseProfile {
  double feat = 0.1;
  double shape = 0.05;
  double depth = 0.01;

  static NoiseProfile zero() { return {0.0, 0.0, 0.0}; }
  static NoiseProfile standard() { return {}; }
};

struct SynthBenchmarkConfig {
  int categories = 5;
  int pairs_per_category = 100;
  int n_views = 5;
  NoiseProfile noise;
  std::uint64_t seed = 0;
  int parts = 32;
  int dim = 64;
  SynthRenderConfig render;

  void validate() const;
};

struct SynthPair {
  PairSpec spec;
  InstanceSpec ref_instance;
  InstanceSpec tgt_instance;
  RenderedView reference;
  std::vector<RenderedView> targets;

  PairInstance instance() const;
};

std::string category_name(int c);

/// Deterministic per (cfg.seed, category, index); independent of generation order.
SynthPair generate_pair(const SynthBenchmarkConfig& cfg, const std::shared_ptr<const CategoryPrototype>& proto,
                        int category, int index);
std::shared_ptr<const CategoryPrototype> category_prototype(const SynthBenchmarkConfig& cfg, int category);

/// Pairs regenerated on demand, nothing written to disk.
class SynthPairSource : public PairSource {
 public:
  /// views > 0 keeps only the first `views` ring views.
  explicit SynthPairSource(SynthBenchmarkConfig cfg, int views = 0);

  std::size_t size() const override;
  PairSpec spec(std::size_t i) const override;
  PairInstance load(std::size_t i) const override;
  SynthPair pair(std::size_t i) const;

 private:
  SynthBenchmarkConfig cfg_;
  int views_;
  std::vector<std::shared_ptr<const CategoryPrototype>> protos_;
};

struct BenchmarkSummary {
  int pairs = 0;
  int sequences = 0;
  int frames = 0;
};

/// Writes <out>/pairs.jsonl and one <out>/<sequence_id>/ directory per sequence.
BenchmarkSummary gen_benchmark(const SynthBenchmarkConfig& cfg, const std::filesystem::path& out);

}  // namespace zspose
