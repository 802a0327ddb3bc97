#include "zspose/cli.hpp"

#include <CLI11.hpp>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "zspose/error.hpp"
#include "zspose/eval.hpp"
#include "zspose/io.hpp"
#include "zspose/pipeline.hpp"
#include "zspose/synth.hpp"

namespace zspose {

namespace {

using nlohmann::json;

int default_jobs() {
  if (const char* env = std::getenv("ZSPOSE_JOBS")) {
    const int v = std::atoi(env);
    if (v > 0) return v;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::AllViewsUnusable:
    case ErrorCode::NoConsensus:
    case ErrorCode::DegenerateConfiguration:
    case ErrorCode::NumericalUnderflow:
      return kExitEstimation;
    case ErrorCode::InvalidArgument:
    case ErrorCode::SamplingExhausted:
      return kExitUsage;
    default:
      return kExitData;
  }
}

struct PipelineFlags {
  int k = 50;
  std::string matcher = "cyclical";
  std::string view_select = "correspond-sim";
  int ransac_iters = 1000;
  double inlier_thresh = 0.2;
  int sample_size = 4;
  std::uint64_t seed = 0;
  bool best_view_only = false;
  double sinkhorn_eps = 0.05;
  int sinkhorn_iters = 100;
  double softmax_temp = 0.05;
  double iou_tau = 2.0;

  PipelineConfig config() const {
    PipelineConfig c;
    c.k = k;
    c.matcher = parse_matcher(matcher);
    c.view_strategy = parse_view_strategy(view_select);
    c.ransac.max_iters = ransac_iters;
    c.ransac.inlier_thresh = inlier_thresh;
    c.ransac.sample_size = sample_size;
    c.ransac.seed = seed;
    c.best_view_only = best_view_only;
    c.sinkhorn_epsilon = sinkhorn_eps;
    c.sinkhorn_iters = sinkhorn_iters;
    c.softmax_temperature = softmax_temp;
    c.iou_tau = iou_tau;
    return c;
  }

  json echo() const {
    return json{{"k", k},
                {"matcher", matcher},
                {"view_select", view_select},
                {"ransac_iters", ransac_iters},
                {"inlier_thresh", inlier_thresh},
                {"sample_size", sample_size},
                {"seed", seed},
                {"best_view_only", best_view_only}};
  }
};

void add_pipeline_flags(CLI::App* app, PipelineFlags& f) {
  app->add_option("--k", f.k, "Correspondences per pair")->check(CLI::PositiveNumber);
  app->add_option("--matcher", f.matcher, "cyclical | mutual-nn | sinkhorn | dual-softmax")
      ->check(CLI::IsMember({"cyclical", "mutual-nn", "sinkhorn", "dual-softmax"}));
  app->add_option("--view-select", f.view_select, "correspond-sim | global-sim | saliency-iou | cyclical-dist-iou")
      ->check(CLI::IsMember({"correspond-sim", "global-sim", "saliency-iou", "cyclical-dist-iou"}));
  app->add_option("--ransac-iters", f.ransac_iters, "RANSAC trials")->check(CLI::PositiveNumber);
  app->add_option("--inlier-thresh", f.inlier_thresh, "RANSAC inlier distance, scene units")
      ->check(CLI::PositiveNumber);
  app->add_option("--sample-size", f.sample_size, "Pairs per RANSAC sample")->check(CLI::Range(3, 1000));
  app->add_option("--seed", f.seed, "Seed for K-means and RANSAC");
  app->add_flag("--best-view-only", f.best_view_only, "Skip RANSAC and answer with the best view");
  app->add_option("--sinkhorn-eps", f.sinkhorn_eps, "Entropic regularization")->check(CLI::PositiveNumber);
  app->add_option("--sinkhorn-iters", f.sinkhorn_iters, "Sinkhorn iterations")->check(CLI::PositiveNumber);
  app->add_option("--softmax-temp", f.softmax_temp, "Dual-softmax temperature")->check(CLI::PositiveNumber);
  app->add_option("--iou-tau", f.iou_tau, "Cyclical distance threshold for cyclical-dist-iou")
      ->check(CLI::PositiveNumber);
}

struct FrameSelection {
  std::string ref;
  std::string target;
  std::string frames;
};

void add_frame_flags(CLI::App* app, FrameSelection& f, bool required) {
  auto* r = app->add_option("--ref", f.ref, "Reference frame as <manifest>#<frame_id>");
  auto* t = app->add_option("--target", f.target, "Target sequence manifest");
  if (required) {
    r->required();
    t->required();
  }
  app->add_option("--frames", f.frames, "Comma-separated target frame ids (default: all)");
}

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

struct LoadedFrames {
  FrameBundle reference;
  std::vector<FrameBundle> targets;
  std::vector<std::string> target_ids;
};

LoadedFrames load_frames(const FrameSelection& sel) {
  const auto hash = sel.ref.rfind('#');
  if (hash == std::string::npos || hash == 0 || hash + 1 == sel.ref.size()) {
    throw CLI::ValidationError("--ref", "expected <manifest>#<frame_id>");
  }
  const Sequence ref_seq = load_sequence(sel.ref.substr(0, hash));
  const std::string ref_id = sel.ref.substr(hash + 1);
  if (!ref_seq.has_frame(ref_id)) {
    throw Error(ErrorCode::SchemaError, "reference frame '" + ref_id + "' not in manifest");
  }
  const Sequence tgt_seq = load_sequence(sel.target);
  LoadedFrames out;
  out.reference = ref_seq.frame(ref_id);
  out.target_ids = sel.frames.empty() ? tgt_seq.frame_ids() : split_csv(sel.frames);
  if (out.target_ids.empty()) throw Error(ErrorCode::SchemaError, "no target frames selected");
  for (const auto& id : out.target_ids) {
    if (!tgt_seq.has_frame(id)) throw Error(ErrorCode::SchemaError, "target frame '" + id + "' not in manifest");
    out.targets.push_back(tgt_seq.frame(id));
  }
  return out;
}

void warn_if_unnormalized(const FrameBundle& ref, std::ostream& err) {
  const PointCloud cloud = masked_cloud(ref, 4);
  if (cloud.size() < 2) return;
  Vec3 mu = Vec3::Zero();
  for (const auto& p : cloud.points) mu += p;
  mu /= static_cast<double>(cloud.size());
  double var = 0.0;
  for (const auto& p : cloud.points) var += (p - mu).squaredNorm();
  const double sd = std::sqrt(var / (3.0 * static_cast<double>(cloud.size())));
  if (sd > 3.0 || sd < 1.0 / 3.0) {
    err << "warning: reference cloud std " << sd
        << " is far from 1; the default inlier threshold assumes unit-std scenes\n";
  }
}

void emit(const std::string& payload, const std::string& out_path, std::ostream& out) {
  if (out_path.empty()) {
    out << payload;
  } else {
    write_text_file(out_path, payload);
  }
}

struct EvalFlags {
  std::string pairs;
  std::string data;
  std::string per_pair_csv;
  std::string histogram_csv;
  int views = 0;
  int jobs = 1;
  bool micro = false;
};

void add_eval_flags(CLI::App* app, EvalFlags& f, bool required) {
  auto* p = app->add_option("--pairs", f.pairs, "Pair specification file (JSON lines)");
  auto* d = app->add_option("--data", f.data, "Dataset root holding <sequence_id>/manifest.json");
  if (required) {
    p->required();
    d->required();
  }
  app->add_option("--per-pair-csv", f.per_pair_csv, "Write per-pair errors to this CSV");
  app->add_option("--histogram-csv", f.histogram_csv, "Write (category, error) rows to this CSV");
  app->add_option("--views", f.views, "Use only the first N target frames of every pair")->check(CLI::PositiveNumber);
  app->add_option("--jobs", f.jobs, "Worker threads (default: ZSPOSE_JOBS or all cores)")
      ->check(CLI::PositiveNumber);
  app->add_flag("--micro", f.micro, "Aggregate over pairs instead of averaging categories");
}

std::string run_evaluation(const EvalFlags& f, const Predictor& predict, const json& echo) {
  std::vector<PairSpec> pairs = read_pairs_file(f.pairs);
  if (pairs.empty()) throw Error(ErrorCode::SchemaError, "pairs file '" + f.pairs + "' holds no pairs");
  const DatasetPairSource source(f.data, std::move(pairs), f.views);
  EvalOptions opts;
  opts.jobs = f.jobs;
  opts.aggregation = f.micro ? Aggregation::Micro : Aggregation::Macro;
  const EvalReport report = evaluate_pairs(source, predict, opts);
  if (!f.per_pair_csv.empty()) write_text_file(f.per_pair_csv, per_pair_csv(report.records));
  if (!f.histogram_csv.empty()) write_text_file(f.histogram_csv, error_histogram_csv(report.records));
  json cfg = echo;
  cfg["views"] = f.views;
  cfg["aggregation"] = f.micro ? "micro" : "macro";
  return report_to_json(report, cfg).dump(2) + "\n";
}

/// argv plus the entries of a --config JSON file appended as flags, so that
/// config values take precedence (options keep their last value).
std::vector<std::string> expand_config(int argc, const char* const* argv) {
  // --config may appear anywhere, so it is consumed here rather than by CLI11
  std::vector<std::string> args;
  std::string config_path;
  for (int i = 0; i < argc; ++i) {
    const std::string a = argv[i];
    if (i > 0 && a == "--config" && i + 1 < argc) {
      config_path = argv[++i];
    } else if (i > 0 && a.rfind("--config=", 0) == 0) {
      config_path = a.substr(9);
    } else {
      args.push_back(a);
    }
  }
  if (config_path.empty()) return args;
  json cfg;
  try {
    cfg = json::parse(read_text_file(config_path));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::SchemaError, "config '" + config_path + "': " + e.what());
  }
  if (!cfg.is_object()) throw Error(ErrorCode::SchemaError, "config '" + config_path + "' must be a JSON object");
  for (const auto& [key, value] : cfg.items()) {
    const std::string flag = "--" + key;
    if (value.is_boolean()) {
      args.push_back(flag + "=" + (value.get<bool>() ? "true" : "false"));
    } else if (value.is_string()) {
      args.push_back(flag);
      args.push_back(value.get<std::string>());
    } else if (value.is_array()) {
      std::string joined;
      for (const auto& v : value) joined += (joined.empty() ? "" : ",") + (v.is_string() ? v.get<std::string>() : v.dump());
      args.push_back(flag);
      args.push_back(joined);
    } else {
      args.push_back(flag);
      args.push_back(value.dump());
    }
  }
  return args;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Relative pose between object instances from feature grids and depth", "zspose"};
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.require_subcommand(1);
  std::string config_path;
  app.add_option("--config", config_path, "JSON object whose entries override command-line flags");

  PipelineFlags pf;
  FrameSelection fs;
  std::string out_path;
  auto* estimate = app.add_subcommand("estimate", "Estimate the pose of a reference frame against a target sequence");
  add_frame_flags(estimate, fs, true);
  add_pipeline_flags(estimate, pf);
  estimate->add_option("--out", out_path, "Write the pose JSON here instead of stdout");

  PipelineFlags epf;
  EvalFlags ef;
  std::string eval_out;
  auto* evaluate = app.add_subcommand("evaluate", "Score the pipeline over a list of pairs");
  add_eval_flags(evaluate, ef, true);
  add_pipeline_flags(evaluate, epf);
  evaluate->add_option("--out", eval_out, "Write the report JSON here instead of stdout");

  SynthBenchmarkConfig sc;
  sc.categories = 2;
  sc.pairs_per_category = 5;
  std::string synth_out;
  auto* synth = app.add_subcommand("synth", "Write a synthetic benchmark");
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--categories", sc.categories, "Object categories")->check(CLI::PositiveNumber);
  synth->add_option("--pairs", sc.pairs_per_category, "Pairs per category")->check(CLI::PositiveNumber);
  synth->add_option("--views", sc.n_views, "Target views per pair")->check(CLI::PositiveNumber);
  synth->add_option("--noise-feat", sc.noise.feat, "Descriptor noise sigma")->check(CLI::NonNegativeNumber);
  synth->add_option("--noise-shape", sc.noise.shape, "Part position jitter")->check(CLI::NonNegativeNumber);
  synth->add_option("--noise-depth", sc.noise.depth, "Depth noise sigma")->check(CLI::NonNegativeNumber);
  synth->add_option("--parts", sc.parts, "Parts per category")->check(CLI::Range(4, 100000));
  synth->add_option("--dim", sc.dim, "Descriptor dimension")->check(CLI::Range(8, 100000));
  synth->add_option("--seed", sc.seed, "Generator seed");

  PipelineFlags ipf;
  FrameSelection ifs;
  EvalFlags ief;
  IcpBaselineConfig icfg;
  std::string init = "identity";
  std::string icp_out;
  auto* icp = app.add_subcommand("icp", "Sim(3) ICP baseline for one frame or, with --pairs, a whole pair list");
  add_frame_flags(icp, ifs, false);
  add_eval_flags(icp, ief, false);
  add_pipeline_flags(icp, ipf);
  icp->add_option("--init", init, "identity | best-view")->check(CLI::IsMember({"identity", "best-view"}));
  icp->add_option("--subsample", icfg.icp.subsample, "Points kept per cloud")->check(CLI::PositiveNumber);
  icp->add_option("--max-iter", icfg.icp.max_iter, "Iteration cap")->check(CLI::PositiveNumber);
  icp->add_option("--tol", icfg.icp.tol, "Stop when the RMS changes less than this")->check(CLI::NonNegativeNumber);
  icp->add_option("--stride", icfg.stride, "Pixel stride when building clouds")->check(CLI::PositiveNumber);
  icp->add_option("--out", icp_out, "Write the JSON here instead of stdout");

  const int default_job_count = default_jobs();
  ef.jobs = default_job_count;
  ief.jobs = default_job_count;

  try {
    const std::vector<std::string> args = expand_config(argc, argv);
    std::vector<const char*> ptrs;
    for (const auto& a : args) ptrs.push_back(a.c_str());
    app.parse(static_cast<int>(ptrs.size()), ptrs.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return kExitUsage;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  }

  try {
    if (*estimate) {
      const PipelineConfig cfg = pf.config();
      const LoadedFrames frames = load_frames(fs);
      warn_if_unnormalized(frames.reference, err);
      const PipelineResult r = estimate_pose(frames.reference, frames.targets, cfg);
      if (r.fallback != FallbackFlag::None) err << "warning: fell back to the best-view-only estimate\n";
      const json j{{"transform", sim3_to_json(r.estimate.transform)},
                   {"best_view", r.best_view_index},
                   {"best_view_frame", frames.target_ids[static_cast<std::size_t>(r.best_view_index)]},
                   {"inliers", r.estimate.inlier_count},
                   {"rms", r.estimate.rms_residual},
                   {"fallback", std::string(to_string(r.fallback))}};
      emit(j.dump(2) + "\n", out_path, out);
      return kExitOk;
    }
    if (*evaluate) {
      const PipelineConfig cfg = epf.config();
      cfg.validate();
      emit(run_evaluation(ef, pipeline_predictor(cfg), epf.echo()), eval_out, out);
      return kExitOk;
    }
    if (*synth) {
      const BenchmarkSummary s = gen_benchmark(sc, synth_out);
      out << json{{"out", synth_out}, {"pairs", s.pairs}, {"sequences", s.sequences}, {"frames", s.frames}}.dump()
          << "\n";
      return kExitOk;
    }
    if (*icp) {
      icfg.init = parse_icp_init(init);
      icfg.icp.seed = ipf.seed;
      icfg.selection = ipf.config();
      const bool batch = !ief.pairs.empty() || !ief.data.empty();
      if (batch) {
        if (ief.pairs.empty() || ief.data.empty()) {
          err << "error: --pairs and --data go together\n" << icp->help();
          return kExitUsage;
        }
        json echo = ipf.echo();
        echo["method"] = "icp";
        echo["init"] = init;
        echo["subsample"] = icfg.icp.subsample;
        echo["max_iter"] = icfg.icp.max_iter;
        echo["tol"] = icfg.icp.tol;
        emit(run_evaluation(ief, icp_predictor(icfg), echo), icp_out, out);
        return kExitOk;
      }
      if (ifs.ref.empty() || ifs.target.empty()) {
        err << "error: icp needs --ref and --target, or --pairs and --data\n" << icp->help();
        return kExitUsage;
      }
      const LoadedFrames frames = load_frames(ifs);
      const IcpBaselineResult r = estimate_pose_icp(frames.reference, frames.targets, icfg);
      const json j{{"transform", sim3_to_json(r.icp.estimate.transform)},
                   {"target_view", r.target_view},
                   {"target_frame", frames.target_ids[static_cast<std::size_t>(r.target_view)]},
                   {"iterations", r.icp.iterations},
                   {"rms", r.icp.estimate.rms_residual},
                   {"init", init}};
      emit(j.dump(2) + "\n", icp_out, out);
      return kExitOk;
    }
  } catch (const CLI::ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}

}  // namespace zspose
