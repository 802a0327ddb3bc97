#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "zspose/features.hpp"
#include "zspose/geom.hpp"

namespace zspose {

/// Region of the original image the feature grid was computed from.
struct CropRect {
  int x = 0;
  int y = 0;
  int w = 1;
  int h = 1;

  /// Throws InvalidArgument unless the crop lies inside a width x height image.
  void validate(int image_width, int image_height) const;
};

struct DepthImage {
  int height = 0;
  int width = 0;
  std::vector<float> values;
  std::vector<std::uint8_t> valid;

  DepthImage() = default;
  /// All pixels invalid with value 0.
  DepthImage(int h, int w);

  std::size_t offset(int x, int y) const { return static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x); }
  bool in_bounds(int x, int y) const { return x >= 0 && y >= 0 && x < width && y < height; }
  bool is_valid(int x, int y) const { return valid[offset(x, y)] != 0; }
  float at(int x, int y) const { return values[offset(x, y)]; }
  void set(int x, int y, float v) {
    values[offset(x, y)] = v;
    valid[offset(x, y)] = 1;
  }
  int valid_count() const;
};

struct FrameBundle {
  std::string frame_id;
  FeatureGrid features;  // normalized
  DepthImage depth;
  CameraIntrinsics intrinsics;
  RigidTransformSE3 extrinsics;  // world to view
  CropRect crop;
};

// ---- .zpf feature grids -------------------------------------------------

inline constexpr std::uint32_t kFeatureFormatVersion = 1;
inline constexpr std::uint32_t kDepthFormatVersion = 1;

std::vector<std::uint8_t> encode_feature_grid(const FeatureGrid& raw);
/// Raw (un-normalized) payload; throws BadMagic, TruncatedFile, VersionUnsupported.
FeatureGrid decode_feature_grid(std::span<const std::uint8_t> bytes);

void write_feature_file(const std::filesystem::path& path, const FeatureGrid& raw);
FeatureGrid read_feature_file(const std::filesystem::path& path);
/// read_feature_file followed by normalize_grid.
FeatureGrid load_feature_file(const std::filesystem::path& path);

// ---- .zdf depth maps ----------------------------------------------------

std::vector<std::uint8_t> encode_depth_image(const DepthImage& depth);
/// Throws BadMagic, TruncatedFile, VersionUnsupported, InvalidDepth.
DepthImage decode_depth_image(std::span<const std::uint8_t> bytes);

void write_depth_file(const std::filesystem::path& path, const DepthImage& depth);
DepthImage read_depth_file(const std::filesystem::path& path);

struct InpaintOptions {
  int max_sweeps = 500;
  double relative_tolerance = 1e-4;
};

/// Harmonic fill of invalid pixels by Jacobi sweeps over the 4-neighbourhood.
/// Valid pixels are never modified; every pixel of the result is valid.
/// Throws NoValidDepth when nothing is valid.
DepthImage inpaint_depth(const DepthImage& depth, const InpaintOptions& opts = {});

// ---- JSON helpers -------------------------------------------------------

nlohmann::json sim3_to_json(const RigidTransformSim3& t);
RigidTransformSim3 sim3_from_json(const nlohmann::json& j);
nlohmann::json se3_to_json(const RigidTransformSE3& t);  // 16 row-major floats
RigidTransformSE3 se3_from_json(const nlohmann::json& j);

// ---- sequence manifests -------------------------------------------------

struct FrameRecord {
  std::string id;
  std::string features_path;  // relative to the manifest directory
  std::string depth_path;
  CameraIntrinsics intrinsics;
  RigidTransformSE3 extrinsics;
  CropRect crop;
};

struct SequenceManifest {
  std::string category;
  std::string sequence_id;
  std::vector<FrameRecord> frames;
  std::optional<RigidTransformSim3> canonical_alignment;
  std::optional<double> scene_scale;
};

nlohmann::json manifest_to_json(const SequenceManifest& m);
/// Throws SchemaError naming the offending field or frame.
SequenceManifest manifest_from_json(const nlohmann::json& j);
void write_manifest(const std::filesystem::path& path, const SequenceManifest& m);

/// A validated manifest with on-demand frame loading.
class Sequence {
 public:
  const SequenceManifest& manifest() const { return manifest_; }
  const std::filesystem::path& directory() const { return dir_; }
  bool has_frame(const std::string& id) const { return index_.count(id) != 0; }
  const FrameRecord& record(const std::string& id) const;
  std::vector<std::string> frame_ids() const;
  FrameBundle frame(const std::string& id) const;

  friend Sequence load_sequence(const std::filesystem::path& manifest_path);

 private:
  std::filesystem::path dir_;
  SequenceManifest manifest_;
  std::map<std::string, std::size_t> index_;
};

/// Throws MissingFile (with the path) or SchemaError (with field / frame id).
Sequence load_sequence(const std::filesystem::path& manifest_path);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace zspose
