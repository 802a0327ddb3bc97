#include "zspose/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "zspose/error.hpp"

namespace zspose {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::uint8_t kFlagMask = 0x1;
constexpr std::uint8_t kFlagSaliency = 0x2;

// Little-endian byte sink / source, independent of host order.
class ByteWriter {
 public:
  void bytes(const char* s, std::size_t n) { buf_.insert(buf_.end(), s, s + n); }
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  std::vector<std::uint8_t> take() { return std::move(buf_); }

 private:
  std::vector<std::uint8_t> buf_;
};

class ByteReader {
 public:
  ByteReader(std::span<const std::uint8_t> data, const char* what) : data_(data), what_(what) {}

  void need(std::size_t n, const char* field) const {
    if (data_.size() - pos_ < n) {
      throw Error(ErrorCode::TruncatedFile, std::string(what_) + " ends inside " + field);
    }
  }
  std::uint8_t u8(const char* field) {
    need(1, field);
    return data_[pos_++];
  }
  std::uint32_t u32(const char* field) {
    need(4, field);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
    pos_ += 4;
    return v;
  }
  float f32(const char* field) { return std::bit_cast<float>(u32(field)); }
  void skip(std::size_t n, const char* field) {
    need(n, field);
    pos_ += n;
  }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
  const char* what_;
};

void check_magic(ByteReader& r, const char (&magic)[5], const char* what) {
  r.need(4, "magic");
  char got[4];
  for (char& c : got) c = static_cast<char>(r.u8("magic"));
  if (std::memcmp(got, magic, 4) != 0) {
    throw Error(ErrorCode::BadMagic, std::string(what) + " does not start with " + magic);
  }
}

std::vector<std::uint8_t> read_binary(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::MissingFile, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_binary(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::IoFailure, "write failed for " + path.string());
}

template <typename T>
T get_field(const json& j, const char* key, const std::string& context) {
  if (!j.is_object() || !j.contains(key)) throw Error(ErrorCode::SchemaError, context + ": missing field '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::SchemaError, context + ": field '" + key + "' has the wrong type");
  }
}

std::vector<double> get_numbers(const json& j, std::size_t n, const std::string& context) {
  if (!j.is_array() || j.size() != n) {
    throw Error(ErrorCode::SchemaError, context + ": expected an array of " + std::to_string(n) + " numbers");
  }
  std::vector<double> out;
  for (const auto& v : j) {
    if (!v.is_number()) throw Error(ErrorCode::SchemaError, context + ": non-numeric entry");
    out.push_back(v.get<double>());
  }
  return out;
}

}  // namespace

void CropRect::validate(int image_width, int image_height) const {
  if (w <= 0 || h <= 0 || x < 0 || y < 0 || x + w > image_width || y + h > image_height) {
    throw Error(ErrorCode::InvalidArgument, "crop rectangle lies outside the image");
  }
}

DepthImage::DepthImage(int h, int w)
    : height(h),
      width(w),
      values(static_cast<std::size_t>(h) * static_cast<std::size_t>(w), 0.0F),
      valid(static_cast<std::size_t>(h) * static_cast<std::size_t>(w), 0) {
  if (h <= 0 || w <= 0) throw Error(ErrorCode::InvalidArgument, "depth image dimensions must be positive");
}

int DepthImage::valid_count() const {
  return static_cast<int>(std::count_if(valid.begin(), valid.end(), [](std::uint8_t v) { return v != 0; }));
}

// ---- .zpf ----------------------------------------------------------------

std::vector<std::uint8_t> encode_feature_grid(const FeatureGrid& raw) {
  ByteWriter w;
  w.bytes("ZPF1", 4);
  w.u32(kFeatureFormatVersion);
  w.u32(static_cast<std::uint32_t>(raw.height));
  w.u32(static_cast<std::uint32_t>(raw.width));
  w.u32(static_cast<std::uint32_t>(raw.dim));
  w.u8(kFlagMask | kFlagSaliency);
  w.u8(0);
  w.u8(0);
  w.u8(0);
  for (int c = 0; c < raw.cells(); ++c) {
    for (int d = 0; d < raw.dim; ++d) w.f32(static_cast<float>(raw.data(c, d)));
  }
  for (std::uint8_t m : raw.foreground) w.u8(m != 0 ? 1 : 0);
  for (double s : raw.saliency) w.f32(static_cast<float>(s));
  return w.take();
}

FeatureGrid decode_feature_grid(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "feature file");
  check_magic(r, "ZPF1", "feature file");
  const std::uint32_t version = r.u32("version");
  if (version != kFeatureFormatVersion) {
    throw Error(ErrorCode::VersionUnsupported, "feature file version " + std::to_string(version));
  }
  const std::uint32_t h = r.u32("height");
  const std::uint32_t w = r.u32("width");
  const std::uint32_t d = r.u32("dim");
  const std::uint8_t flags = r.u8("flags");
  r.skip(3, "padding");
  if (h == 0 || w == 0 || d == 0) throw Error(ErrorCode::SchemaError, "feature file declares an empty grid");

  const std::uint64_t cells = static_cast<std::uint64_t>(h) * w;
  std::uint64_t body = cells * d * 4;
  if ((flags & kFlagMask) != 0) body += cells;
  if ((flags & kFlagSaliency) != 0) body += cells * 4;
  if (r.remaining() < body) throw Error(ErrorCode::TruncatedFile, "feature file body shorter than its header declares");

  FeatureGrid g(static_cast<int>(h), static_cast<int>(w), static_cast<int>(d));
  for (int c = 0; c < g.cells(); ++c) {
    for (int k = 0; k < g.dim; ++k) g.data(c, k) = static_cast<double>(r.f32("descriptors"));
  }
  if ((flags & kFlagMask) != 0) {
    for (auto& m : g.foreground) m = r.u8("mask") != 0 ? 1 : 0;
  }
  if ((flags & kFlagSaliency) != 0) {
    for (auto& s : g.saliency) s = static_cast<double>(r.f32("saliency"));
  }
  return g;
}

void write_feature_file(const fs::path& path, const FeatureGrid& raw) { write_binary(path, encode_feature_grid(raw)); }

FeatureGrid read_feature_file(const fs::path& path) {
  const auto bytes = read_binary(path);
  return decode_feature_grid(bytes);
}

FeatureGrid load_feature_file(const fs::path& path) { return normalize_grid(read_feature_file(path)); }

// ---- .zdf ----------------------------------------------------------------

std::vector<std::uint8_t> encode_depth_image(const DepthImage& depth) {
  ByteWriter w;
  w.bytes("ZDF1", 4);
  w.u32(kDepthFormatVersion);
  w.u32(static_cast<std::uint32_t>(depth.height));
  w.u32(static_cast<std::uint32_t>(depth.width));
  for (float v : depth.values) w.f32(v);
  for (std::uint8_t v : depth.valid) w.u8(v != 0 ? 1 : 0);
  return w.take();
}

DepthImage decode_depth_image(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "depth file");
  check_magic(r, "ZDF1", "depth file");
  const std::uint32_t version = r.u32("version");
  if (version != kDepthFormatVersion) {
    throw Error(ErrorCode::VersionUnsupported, "depth file version " + std::to_string(version));
  }
  const std::uint32_t h = r.u32("height");
  const std::uint32_t w = r.u32("width");
  if (h == 0 || w == 0) throw Error(ErrorCode::SchemaError, "depth file declares an empty image");
  const std::uint64_t pixels = static_cast<std::uint64_t>(h) * w;
  if (r.remaining() < pixels * 5) throw Error(ErrorCode::TruncatedFile, "depth file body shorter than its header declares");

  DepthImage d(static_cast<int>(h), static_cast<int>(w));
  for (auto& v : d.values) v = r.f32("depth values");
  for (std::size_t i = 0; i < d.valid.size(); ++i) {
    d.valid[i] = r.u8("validity") != 0 ? 1 : 0;
    if (d.valid[i] != 0 && !(std::isfinite(d.values[i]) && d.values[i] > 0.0F)) {
      throw Error(ErrorCode::InvalidDepth, "valid pixel " + std::to_string(i) + " has non-positive depth");
    }
  }
  return d;
}

void write_depth_file(const fs::path& path, const DepthImage& depth) { write_binary(path, encode_depth_image(depth)); }

DepthImage read_depth_file(const fs::path& path) {
  const auto bytes = read_binary(path);
  return decode_depth_image(bytes);
}

DepthImage inpaint_depth(const DepthImage& depth, const InpaintOptions& opts) {
  const int n_valid = depth.valid_count();
  if (n_valid == 0) throw Error(ErrorCode::NoValidDepth, "depth image has no valid pixels to inpaint from");

  const int w = depth.width;
  const int h = depth.height;
  double sum = 0.0;
  double max_valid = 0.0;
  std::vector<int> holes;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (depth.is_valid(x, y)) {
        sum += depth.at(x, y);
        max_valid = std::max(max_valid, static_cast<double>(depth.at(x, y)));
      } else {
        holes.push_back(y * w + x);
      }
    }
  }
  DepthImage out = depth;
  if (holes.empty()) return out;

  std::vector<double> cur(depth.values.begin(), depth.values.end());
  const double init = sum / n_valid;
  for (int idx : holes) cur[static_cast<std::size_t>(idx)] = init;
  std::vector<double> next = cur;
  const double tol = opts.relative_tolerance * max_valid;

  for (int sweep = 0; sweep < opts.max_sweeps; ++sweep) {
    double max_change = 0.0;
    for (int idx : holes) {
      const int x = idx % w;
      const int y = idx / w;
      double acc = 0.0;
      int cnt = 0;
      if (x > 0) { acc += cur[static_cast<std::size_t>(idx - 1)]; ++cnt; }
      if (x + 1 < w) { acc += cur[static_cast<std::size_t>(idx + 1)]; ++cnt; }
      if (y > 0) { acc += cur[static_cast<std::size_t>(idx - w)]; ++cnt; }
      if (y + 1 < h) { acc += cur[static_cast<std::size_t>(idx + w)]; ++cnt; }
      const double v = cnt > 0 ? acc / cnt : cur[static_cast<std::size_t>(idx)];
      max_change = std::max(max_change, std::abs(v - cur[static_cast<std::size_t>(idx)]));
      next[static_cast<std::size_t>(idx)] = v;
    }
    std::swap(cur, next);
    if (max_change < tol) break;
  }
  for (int idx : holes) {
    out.values[static_cast<std::size_t>(idx)] = static_cast<float>(cur[static_cast<std::size_t>(idx)]);
    out.valid[static_cast<std::size_t>(idx)] = 1;
  }
  return out;
}

// ---- JSON ---------------------------------------------------------------

json sim3_to_json(const RigidTransformSim3& t) {
  json rot = json::array();
  const Mat3& r = t.rotation().matrix();
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) rot.push_back(r(i, j));
  }
  return json{{"rotation", rot},
              {"translation", {t.translation().x(), t.translation().y(), t.translation().z()}},
              {"scale", t.scale()}};
}

RigidTransformSim3 sim3_from_json(const json& j) {
  if (!j.is_object()) throw Error(ErrorCode::SchemaError, "Sim3 must be an object");
  if (!j.contains("rotation") || !j.contains("translation") || !j.contains("scale")) {
    throw Error(ErrorCode::SchemaError, "Sim3 needs rotation, translation and scale");
  }
  const auto r = get_numbers(j.at("rotation"), 9, "Sim3 rotation");
  const auto t = get_numbers(j.at("translation"), 3, "Sim3 translation");
  if (!j.at("scale").is_number()) throw Error(ErrorCode::SchemaError, "Sim3 scale must be a number");
  const double s = j.at("scale").get<double>();
  Mat3 m;
  m << r[0], r[1], r[2], r[3], r[4], r[5], r[6], r[7], r[8];
  if (!(s > 0.0) || !std::isfinite(s)) throw Error(ErrorCode::SchemaError, "Sim3 scale must be positive");
  return RigidTransformSim3(Rotation3::from_loaded(m), Vec3(t[0], t[1], t[2]), s);
}

json se3_to_json(const RigidTransformSE3& t) {
  json out = json::array();
  const Mat4 m = t.matrix();
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) out.push_back(m(i, j));
  }
  return out;
}

RigidTransformSE3 se3_from_json(const json& j) {
  const auto v = get_numbers(j, 16, "extrinsics");
  Mat4 m;
  for (int i = 0; i < 4; ++i) {
    for (int k = 0; k < 4; ++k) m(i, k) = v[static_cast<std::size_t>(i * 4 + k)];
  }
  return RigidTransformSE3::from_matrix(m);
}

json manifest_to_json(const SequenceManifest& m) {
  json frames = json::array();
  for (const FrameRecord& f : m.frames) {
    frames.push_back({{"id", f.id},
                      {"features", f.features_path},
                      {"depth", f.depth_path},
                      {"intrinsics",
                       {{"fx", f.intrinsics.fx},
                        {"fy", f.intrinsics.fy},
                        {"cx", f.intrinsics.cx},
                        {"cy", f.intrinsics.cy},
                        {"width", f.intrinsics.width},
                        {"height", f.intrinsics.height}}},
                      {"extrinsics", se3_to_json(f.extrinsics)},
                      {"crop", {{"x", f.crop.x}, {"y", f.crop.y}, {"w", f.crop.w}, {"h", f.crop.h}}}});
  }
  json out{{"category", m.category}, {"sequence_id", m.sequence_id}, {"frames", frames}};
  out["canonical_alignment"] = m.canonical_alignment ? sim3_to_json(*m.canonical_alignment) : json(nullptr);
  if (m.scene_scale) out["scene_scale"] = *m.scene_scale;
  return out;
}

SequenceManifest manifest_from_json(const json& j) {
  if (!j.is_object()) throw Error(ErrorCode::SchemaError, "manifest must be a JSON object");
  SequenceManifest m;
  m.category = get_field<std::string>(j, "category", "manifest");
  m.sequence_id = get_field<std::string>(j, "sequence_id", "manifest");
  if (j.contains("canonical_alignment") && !j.at("canonical_alignment").is_null()) {
    try {
      m.canonical_alignment = sim3_from_json(j.at("canonical_alignment"));
    } catch (const Error& e) {
      throw Error(ErrorCode::SchemaError, "manifest field 'canonical_alignment': " + std::string(e.what()));
    }
  }
  if (j.contains("scene_scale") && !j.at("scene_scale").is_null()) {
    m.scene_scale = get_field<double>(j, "scene_scale", "manifest");
  }
  if (!j.contains("frames") || !j.at("frames").is_array()) {
    throw Error(ErrorCode::SchemaError, "manifest: missing array field 'frames'");
  }
  std::set<std::string> seen;
  for (const json& f : j.at("frames")) {
    FrameRecord r;
    r.id = get_field<std::string>(f, "id", "frame");
    const std::string ctx = "frame '" + r.id + "'";
    if (!seen.insert(r.id).second) throw Error(ErrorCode::SchemaError, ctx + ": duplicate frame id");
    r.features_path = get_field<std::string>(f, "features", ctx);
    r.depth_path = get_field<std::string>(f, "depth", ctx);
    const json intr = get_field<json>(f, "intrinsics", ctx);
    r.intrinsics.fx = get_field<double>(intr, "fx", ctx + " intrinsics");
    r.intrinsics.fy = get_field<double>(intr, "fy", ctx + " intrinsics");
    r.intrinsics.cx = get_field<double>(intr, "cx", ctx + " intrinsics");
    r.intrinsics.cy = get_field<double>(intr, "cy", ctx + " intrinsics");
    r.intrinsics.width = get_field<int>(intr, "width", ctx + " intrinsics");
    r.intrinsics.height = get_field<int>(intr, "height", ctx + " intrinsics");
    try {
      r.intrinsics.validate();
    } catch (const Error& e) {
      throw Error(ErrorCode::SchemaError, ctx + ": " + e.what());
    }
    if (!f.contains("extrinsics")) throw Error(ErrorCode::SchemaError, ctx + ": missing field 'extrinsics'");
    try {
      r.extrinsics = se3_from_json(f.at("extrinsics"));
    } catch (const Error& e) {
      throw Error(ErrorCode::SchemaError, ctx + " extrinsics: " + e.what());
    }
    const json crop = get_field<json>(f, "crop", ctx);
    r.crop = {get_field<int>(crop, "x", ctx + " crop"), get_field<int>(crop, "y", ctx + " crop"),
              get_field<int>(crop, "w", ctx + " crop"), get_field<int>(crop, "h", ctx + " crop")};
    try {
      r.crop.validate(r.intrinsics.width, r.intrinsics.height);
    } catch (const Error& e) {
      throw Error(ErrorCode::SchemaError, ctx + ": " + e.what());
    }
    m.frames.push_back(std::move(r));
  }
  return m;
}

void write_manifest(const fs::path& path, const SequenceManifest& m) {
  write_text_file(path, manifest_to_json(m).dump(2) + "\n");
}

const FrameRecord& Sequence::record(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) {
    throw Error(ErrorCode::SchemaError, "sequence '" + manifest_.sequence_id + "' has no frame '" + id + "'");
  }
  return manifest_.frames[it->second];
}

std::vector<std::string> Sequence::frame_ids() const {
  std::vector<std::string> ids;
  for (const FrameRecord& f : manifest_.frames) ids.push_back(f.id);
  return ids;
}

FrameBundle Sequence::frame(const std::string& id) const {
  const FrameRecord& r = record(id);
  FrameBundle b;
  b.frame_id = r.id;
  b.features = load_feature_file(dir_ / r.features_path);
  b.depth = read_depth_file(dir_ / r.depth_path);
  b.intrinsics = r.intrinsics;
  b.extrinsics = r.extrinsics;
  b.crop = r.crop;
  if (b.depth.width != r.intrinsics.width || b.depth.height != r.intrinsics.height) {
    throw Error(ErrorCode::SchemaError, "frame '" + id + "': depth size does not match intrinsics");
  }
  return b;
}

Sequence load_sequence(const fs::path& manifest_path) {
  if (!fs::exists(manifest_path)) throw Error(ErrorCode::MissingFile, manifest_path.string());
  json j;
  try {
    j = json::parse(read_text_file(manifest_path));
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::SchemaError, manifest_path.string() + ": " + e.what());
  }
  Sequence s;
  s.dir_ = manifest_path.parent_path();
  try {
    s.manifest_ = manifest_from_json(j);
  } catch (const Error& e) {
    throw Error(e.code(), manifest_path.string() + ": " + e.what());
  }
  for (std::size_t i = 0; i < s.manifest_.frames.size(); ++i) {
    const FrameRecord& r = s.manifest_.frames[i];
    for (const std::string& rel : {r.features_path, r.depth_path}) {
      const fs::path p = s.dir_ / rel;
      if (!fs::exists(p)) throw Error(ErrorCode::MissingFile, p.string());
    }
    s.index_.emplace(r.id, i);
  }
  return s;
}

std::string read_text_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::MissingFile, path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorCode::IoFailure, "write failed for " + path.string());
}

}  // namespace zspose
