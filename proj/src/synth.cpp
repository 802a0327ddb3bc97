#include "zspose/synth.hpp"

#include <Eigen/SVD>
#include <cmath>
#include <cstdio>
#include <limits>
#include <random>
#include <string>

#include "zspose/error.hpp"
#include "zspose/rng.hpp"
#include "zspose/solver.hpp"

namespace zspose {

namespace {

Vec3 random_unit3(Rng& rng) {
  std::normal_distribution<double> nd;
  Vec3 v;
  do {
    v = Vec3(nd(rng), nd(rng), nd(rng));
  } while (v.norm() < 1e-9);
  return v.normalized();
}

Eigen::RowVectorXd random_normal_row(Rng& rng, int d) {
  std::normal_distribution<double> nd;
  Eigen::RowVectorXd v(d);
  for (int i = 0; i < d; ++i) v(i) = nd(rng);
  return v;
}

Rotation3 haar_rotation(Rng& rng) {
  std::normal_distribution<double> nd;
  Eigen::Quaterniond q(nd(rng), nd(rng), nd(rng), nd(rng));
  q.normalize();
  return Rotation3::project(q.toRotationMatrix());
}

bool non_coplanar(const std::vector<Vec3>& pts) {
  Vec3 mu = Vec3::Zero();
  for (const auto& p : pts) mu += p;
  mu /= static_cast<double>(pts.size());
  Mat3 scatter = Mat3::Zero();
  for (const auto& p : pts) scatter += (p - mu) * (p - mu).transpose();
  const Eigen::Vector3d sv = Eigen::JacobiSVD<Mat3>(scatter).singularValues();
  return sv(2) > 1e-6 * sv(0);
}

}  // namespace

CategoryPrototype gen_category(int p, int d, std::uint64_t seed, const Vec3& semi_axes) {
  if (p < 4) throw Error(ErrorCode::InvalidArgument, "gen_category needs p >= 4");
  if (d < 8) throw Error(ErrorCode::InvalidArgument, "gen_category needs d >= 8");
  CategoryPrototype proto;
  proto.descriptors.resize(p, d);

  Rng desc_rng = make_rng(seed, 0);
  const long budget = 10L * p * d;
  long draws = 0;
  int accepted = 0;
  while (accepted < p) {
    if (draws >= budget) {
      throw Error(ErrorCode::SamplingExhausted, "could not place " + std::to_string(p) + " descriptors in " +
                                                    std::to_string(d) + " dimensions within " +
                                                    std::to_string(budget) + " draws");
    }
    ++draws;
    Eigen::RowVectorXd v = random_normal_row(desc_rng, d);
    const double n = v.norm();
    if (n < 1e-12) continue;
    v /= n;
    bool ok = true;
    for (int i = 0; i < accepted && ok; ++i) ok = proto.descriptors.row(i).dot(v) < 0.5;
    if (ok) proto.descriptors.row(accepted++) = v;
  }

  Rng pos_rng = make_rng(seed, 1);
  do {
    proto.positions.clear();
    for (int i = 0; i < p; ++i) proto.positions.push_back(semi_axes.cwiseProduct(random_unit3(pos_rng)));
  } while (!non_coplanar(proto.positions));
  for (const auto& q : proto.positions) proto.centroid += q;
  proto.centroid /= static_cast<double>(p);
  return proto;
}

InstanceSpec make_instance(std::shared_ptr<const CategoryPrototype> proto, double shape_noise, std::uint64_t seed) {
  if (!(shape_noise >= 0.0)) throw Error(ErrorCode::InvalidArgument, "shape noise must be non-negative");
  InstanceSpec inst;
  inst.shape_noise = shape_noise;
  Rng rng = make_rng(seed, 0);
  std::normal_distribution<double> nd;
  for (const auto& q : proto->positions) {
    const Vec3 jitter(nd(rng), nd(rng), nd(rng));
    inst.positions.push_back(q + shape_noise * jitter);
  }
  for (const auto& q : inst.positions) inst.centroid += q;
  inst.centroid /= static_cast<double>(inst.positions.size());
  const Rotation3 r = haar_rotation(rng);
  const Vec3 t(nd(rng), nd(rng), nd(rng));
  inst.scale = std::uniform_real_distribution<double>(0.8, 1.25)(rng);
  inst.canonical_pose = RigidTransformSim3(r, t, inst.scale);
  inst.prototype = std::move(proto);
  return inst;
}

std::vector<double> SynthRenderConfig::azimuths(int n_views) const {
  if (n_views < 1) throw Error(ErrorCode::InvalidArgument, "need at least one view");
  std::vector<double> out;
  if (!ring_azimuths_deg.empty()) {
    if (ring_azimuths_deg.size() < static_cast<std::size_t>(n_views)) {
      throw Error(ErrorCode::InvalidArgument, "fewer ring azimuths than requested views");
    }
    out.assign(ring_azimuths_deg.begin(), ring_azimuths_deg.begin() + n_views);
    return out;
  }
  for (int j = 0; j < n_views; ++j) out.push_back(360.0 * j / n_views);
  return out;
}

RigidTransformSE3 orbit_camera(const InstanceSpec& inst, double azimuth_deg, double elevation_deg, double roll_deg,
                               double radius) {
  const double az = deg2rad(azimuth_deg);
  const double el = deg2rad(elevation_deg);
  const Vec3 centre =
      inst.centroid + radius * Vec3(std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el));
  const Vec3 forward = (inst.centroid - centre).normalized();
  const Vec3 right = forward.cross(Vec3::UnitZ()).normalized();
  const Vec3 down = forward.cross(right);
  Mat3 look;
  look.row(0) = right.transpose();
  look.row(1) = down.transpose();
  look.row(2) = forward.transpose();
  const Mat3 r_cam = Rotation3::rot_z(deg2rad(roll_deg)).matrix() * look;

  // world -> canonical (inverse label), canonical -> camera, then back to
  // world units so the result stays rigid.
  const Mat3 r0 = inst.canonical_pose.rotation().matrix();
  const Vec3& t0 = inst.canonical_pose.translation();
  const double s = inst.scale;
  const Mat3 r = r_cam * r0.transpose();
  return RigidTransformSE3(Rotation3::project(r), -r * t0 - s * (r_cam * centre));
}

RenderedView render_view(const InstanceSpec& inst, const RigidTransformSE3& extrinsics, const SynthRenderConfig& cfg,
                         std::uint64_t seed, const std::string& frame_id) {
  if (!(cfg.feat_noise >= 0.0) || !(cfg.depth_noise >= 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "noise levels must be non-negative");
  }
  cfg.intrinsics.validate();
  cfg.crop.validate(cfg.intrinsics.width, cfg.intrinsics.height);
  const CategoryPrototype& proto = *inst.prototype;
  const int gh = cfg.grid_height;
  const int gw = cfg.grid_width;
  const int d = static_cast<int>(proto.descriptors.cols());
  const int cells = gh * gw;

  RenderedView out;
  out.cell_part.assign(static_cast<std::size_t>(cells), -1);
  out.part_cell.assign(static_cast<std::size_t>(cells), 0);
  std::vector<double> cell_z(static_cast<std::size_t>(cells), std::numeric_limits<double>::infinity());

  const Mat3 normal_rot = extrinsics.rotation.matrix() * inst.canonical_pose.rotation().matrix();
  for (int p = 0; p < static_cast<int>(inst.positions.size()); ++p) {
    const Vec3& q = inst.positions[static_cast<std::size_t>(p)];
    const Vec3 x = extrinsics.apply(inst.canonical_pose.apply(q));
    if (x.z() <= 0.0) continue;
    if (cfg.occlusion && (normal_rot * (q - inst.centroid)).dot(-x) <= 0.0) continue;
    const Vec2 px = project(x, cfg.intrinsics);
    const double u = (px.x() - cfg.crop.x) * gw / cfg.crop.w;
    const double v = (px.y() - cfg.crop.y) * gh / cfg.crop.h;
    if (!(u >= 0.0 && u < gw && v >= 0.0 && v < gh)) continue;
    out.visible_parts.push_back(p);
    const int idx = static_cast<int>(std::floor(v)) * gw + static_cast<int>(std::floor(u));
    if (x.z() < cell_z[static_cast<std::size_t>(idx)]) {
      cell_z[static_cast<std::size_t>(idx)] = x.z();
      out.cell_part[static_cast<std::size_t>(idx)] = p;
      out.part_cell[static_cast<std::size_t>(idx)] = 1;
    }
  }
  if (out.visible_parts.empty()) {
    throw Error(ErrorCode::NoVisibleParts, "frame '" + frame_id + "' sees no part");
  }

  // Dilated ring: owner is the nearest part cell, depth is inverse-distance
  // weighted over the part cells in reach.
  const int rr = cfg.ring_radius;
  for (int idx = 0; idx < cells; ++idx) {
    if (out.part_cell[static_cast<std::size_t>(idx)]) continue;
    const int r0 = idx / gw;
    const int c0 = idx % gw;
    int best_d2 = std::numeric_limits<int>::max();
    double wsum = 0.0;
    double zsum = 0.0;
    for (int r = std::max(0, r0 - rr); r <= std::min(gh - 1, r0 + rr); ++r) {
      for (int c = std::max(0, c0 - rr); c <= std::min(gw - 1, c0 + rr); ++c) {
        const int j = r * gw + c;
        if (!out.part_cell[static_cast<std::size_t>(j)]) continue;
        const int d2 = (r - r0) * (r - r0) + (c - c0) * (c - c0);
        if (d2 > rr * rr) continue;
        if (d2 < best_d2) {
          best_d2 = d2;
          out.cell_part[static_cast<std::size_t>(idx)] = out.cell_part[static_cast<std::size_t>(j)];
        }
        wsum += 1.0 / d2;
        zsum += cell_z[static_cast<std::size_t>(j)] / d2;
      }
    }
    if (wsum > 0.0) cell_z[static_cast<std::size_t>(idx)] = zsum / wsum;
  }

  Rng app_rng = make_rng(seed, 0);
  FeatureGrid raw(gh, gw, d);
  for (int idx = 0; idx < cells; ++idx) {
    Eigen::RowVectorXd g = random_normal_row(app_rng, d);
    g /= g.norm();
    const Eigen::RowVectorXd n = random_normal_row(app_rng, d);
    const int owner = out.cell_part[static_cast<std::size_t>(idx)];
    Eigen::RowVectorXd desc;
    if (owner < 0) {
      desc = g;
      raw.foreground[static_cast<std::size_t>(idx)] = 0;
      raw.saliency[static_cast<std::size_t>(idx)] = 0.0;
    } else if (out.part_cell[static_cast<std::size_t>(idx)]) {
      desc = proto.descriptors.row(owner) + cfg.feat_noise * n;
      raw.saliency[static_cast<std::size_t>(idx)] = 1.0;
    } else {
      desc = proto.descriptors.row(owner) + cfg.ring_mix * g + cfg.feat_noise * n;
      raw.saliency[static_cast<std::size_t>(idx)] = 0.5;
    }
    desc /= desc.norm();
    // Round through float so in-memory grids equal their on-disk form.
    for (int k = 0; k < d; ++k) raw.data(idx, k) = static_cast<double>(static_cast<float>(desc(k)));
  }

  DepthImage depth(cfg.intrinsics.height, cfg.intrinsics.width);
  Rng depth_rng = make_rng(seed, 1);
  std::normal_distribution<double> nd;
  for (int y = cfg.crop.y; y < cfg.crop.y + cfg.crop.h; ++y) {
    const int row = (y - cfg.crop.y) * gh / cfg.crop.h;
    for (int x = cfg.crop.x; x < cfg.crop.x + cfg.crop.w; ++x) {
      const int col = (x - cfg.crop.x) * gw / cfg.crop.w;
      const int idx = row * gw + col;
      if (out.cell_part[static_cast<std::size_t>(idx)] < 0) continue;
      const double z = cell_z[static_cast<std::size_t>(idx)] + cfg.depth_noise * nd(depth_rng);
      depth.set(x, y, static_cast<float>(std::max(z, 1e-3)));
    }
  }

  out.raw_features = raw;
  out.bundle.frame_id = frame_id;
  out.bundle.features = normalize_grid(std::move(raw));
  out.bundle.depth = std::move(depth);
  out.bundle.intrinsics = cfg.intrinsics;
  out.bundle.extrinsics = extrinsics;
  out.bundle.crop = cfg.crop;
  return out;
}

void SynthBenchmarkConfig::validate() const {
  if (categories < 1 || pairs_per_category < 1 || n_views < 1) {
    throw Error(ErrorCode::InvalidArgument, "categories, pairs and views must all be at least 1");
  }
  if (!(noise.feat >= 0.0) || !(noise.shape >= 0.0) || !(noise.depth >= 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "noise levels must be non-negative");
  }
}

PairInstance SynthPair::instance() const {
  PairInstance inst;
  inst.reference = reference.bundle;
  for (const auto& t : targets) inst.targets.push_back(t.bundle);
  inst.ref_label = ref_instance.canonical_pose;
  inst.tgt_label = tgt_instance.canonical_pose;
  return inst;
}

std::string category_name(int c) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "cat%02d", c);
  return buf;
}

std::shared_ptr<const CategoryPrototype> category_prototype(const SynthBenchmarkConfig& cfg, int category) {
  return std::make_shared<const CategoryPrototype>(
      gen_category(cfg.parts, cfg.dim, derive_seed(cfg.seed, 0xca7000 + static_cast<std::uint64_t>(category))));
}

SynthPair generate_pair(const SynthBenchmarkConfig& cfg, const std::shared_ptr<const CategoryPrototype>& proto,
                        int category, int index) {
  const std::uint64_t ps =
      derive_seed(derive_seed(cfg.seed, 0x9a17 + static_cast<std::uint64_t>(category)), static_cast<std::uint64_t>(index));
  SynthRenderConfig render = cfg.render;
  render.feat_noise = cfg.noise.feat;
  render.depth_noise = cfg.noise.depth;

  SynthPair pair;
  const std::string cat = category_name(category);
  char id[64];
  std::snprintf(id, sizeof id, "%s-%03d", cat.c_str(), index);
  pair.spec.pair_id = id;
  pair.spec.category = cat;
  pair.spec.ref_sequence = pair.spec.pair_id + "-a";
  pair.spec.ref_frame = "ref";
  pair.spec.tgt_sequence = pair.spec.pair_id + "-b";

  pair.ref_instance = make_instance(proto, cfg.noise.shape, derive_seed(ps, 1));
  pair.tgt_instance = make_instance(proto, cfg.noise.shape, derive_seed(ps, 2));

  Rng cam_rng = make_rng(ps, 3);
  std::uniform_real_distribution<double> az(0.0, 360.0);
  std::uniform_real_distribution<double> el(10.0, 40.0);
  std::uniform_real_distribution<double> roll(-10.0, 10.0);
  for (int attempt = 0;; ++attempt) {
    const double a = az(cam_rng);
    const double e = el(cam_rng);
    const double r = roll(cam_rng);
    const RigidTransformSE3 cam = orbit_camera(pair.ref_instance, a, e, r, render.camera_radius);
    try {
      pair.reference = render_view(pair.ref_instance, cam, render, derive_seed(ps, 100), "ref");
      break;
    } catch (const Error& err) {
      if (err.code() != ErrorCode::NoVisibleParts || attempt >= 31) throw;
    }
  }

  const std::vector<double> azimuths = render.azimuths(cfg.n_views);
  for (int j = 0; j < cfg.n_views; ++j) {
    const RigidTransformSE3 cam = orbit_camera(pair.tgt_instance, azimuths[static_cast<std::size_t>(j)],
                                               render.ring_elevation_deg, 0.0, render.camera_radius);
    const std::string fid = "view" + std::to_string(j);
    pair.targets.push_back(render_view(pair.tgt_instance, cam, render, derive_seed(ps, 200 + static_cast<std::uint64_t>(j)), fid));
    pair.spec.tgt_frames.push_back(fid);
  }
  return pair;
}

SynthPairSource::SynthPairSource(SynthBenchmarkConfig cfg, int views) : cfg_(std::move(cfg)), views_(views) {
  cfg_.validate();
  if (views_ < 0) throw Error(ErrorCode::InvalidArgument, "views must be non-negative");
  for (int c = 0; c < cfg_.categories; ++c) protos_.push_back(category_prototype(cfg_, c));
}

std::size_t SynthPairSource::size() const {
  return static_cast<std::size_t>(cfg_.categories) * static_cast<std::size_t>(cfg_.pairs_per_category);
}

SynthPair SynthPairSource::pair(std::size_t i) const {
  if (i >= size()) throw Error(ErrorCode::InvalidArgument, "pair index out of range");
  const int c = static_cast<int>(i / static_cast<std::size_t>(cfg_.pairs_per_category));
  const int k = static_cast<int>(i % static_cast<std::size_t>(cfg_.pairs_per_category));
  SynthPair p = generate_pair(cfg_, protos_[static_cast<std::size_t>(c)], c, k);
  if (views_ > 0 && p.targets.size() > static_cast<std::size_t>(views_)) {
    p.targets.resize(static_cast<std::size_t>(views_));
    p.spec.tgt_frames.resize(static_cast<std::size_t>(views_));
  }
  return p;
}

PairSpec SynthPairSource::spec(std::size_t i) const {
  const int c = static_cast<int>(i / static_cast<std::size_t>(cfg_.pairs_per_category));
  const int k = static_cast<int>(i % static_cast<std::size_t>(cfg_.pairs_per_category));
  char id[64];
  std::snprintf(id, sizeof id, "%s-%03d", category_name(c).c_str(), k);
  PairSpec s;
  s.pair_id = id;
  s.category = category_name(c);
  s.ref_sequence = s.pair_id + "-a";
  s.ref_frame = "ref";
  s.tgt_sequence = s.pair_id + "-b";
  const int n = views_ > 0 ? std::min(views_, cfg_.n_views) : cfg_.n_views;
  for (int j = 0; j < n; ++j) s.tgt_frames.push_back("view" + std::to_string(j));
  return s;
}

PairInstance SynthPairSource::load(std::size_t i) const { return pair(i).instance(); }

namespace {

FrameRecord write_frame(const std::filesystem::path& dir, const RenderedView& view) {
  const std::string& id = view.bundle.frame_id;
  write_feature_file(dir / (id + ".zpf"), view.raw_features);
  write_depth_file(dir / (id + ".zdf"), view.bundle.depth);
  FrameRecord rec;
  rec.id = id;
  rec.features_path = id + ".zpf";
  rec.depth_path = id + ".zdf";
  rec.intrinsics = view.bundle.intrinsics;
  rec.extrinsics = view.bundle.extrinsics;
  rec.crop = view.bundle.crop;
  return rec;
}

}  // namespace

BenchmarkSummary gen_benchmark(const SynthBenchmarkConfig& cfg, const std::filesystem::path& out) {
  cfg.validate();
  try {
    std::filesystem::create_directories(out);
  } catch (const std::filesystem::filesystem_error& e) {
    throw Error(ErrorCode::IoFailure, "cannot create '" + out.string() + "': " + e.what());
  }
  BenchmarkSummary summary;
  std::vector<PairSpec> specs;
  for (int c = 0; c < cfg.categories; ++c) {
    const auto proto = category_prototype(cfg, c);
    for (int i = 0; i < cfg.pairs_per_category; ++i) {
      const SynthPair pair = generate_pair(cfg, proto, c, i);
      const auto emit = [&](const std::string& seq_id, const InstanceSpec& inst, std::span<const RenderedView> views) {
        const std::filesystem::path dir = out / seq_id;
        try {
          std::filesystem::create_directories(dir);
        } catch (const std::filesystem::filesystem_error& e) {
          throw Error(ErrorCode::IoFailure, "cannot create '" + dir.string() + "': " + e.what());
        }
        SequenceManifest m;
        m.category = pair.spec.category;
        m.sequence_id = seq_id;
        m.canonical_alignment = inst.canonical_pose;
        for (const auto& v : views) m.frames.push_back(write_frame(dir, v));
        write_manifest(dir / "manifest.json", m);
        ++summary.sequences;
        summary.frames += static_cast<int>(views.size());
      };
      emit(pair.spec.ref_sequence, pair.ref_instance, std::span<const RenderedView>(&pair.reference, 1));
      emit(pair.spec.tgt_sequence, pair.tgt_instance, pair.targets);
      specs.push_back(pair.spec);
      ++summary.pairs;
    }
  }
  write_text_file(out / "pairs.jsonl", pairs_to_jsonl(specs));
  return summary;
}

}  // namespace zspose
