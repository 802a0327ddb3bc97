#include "zspose/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <optional>
#include <sstream>
#include <thread>

#include "zspose/error.hpp"

namespace zspose {

namespace {

using nlohmann::json;

std::string str_field(const json& j, const char* key) {
  if (!j.contains(key) || !j.at(key).is_string()) {
    throw Error(ErrorCode::SchemaError, std::string("pair record field '") + key + "' missing or not a string");
  }
  return j.at(key).get<std::string>();
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

json pair_to_json(const PairSpec& p) {
  return json{{"pair_id", p.pair_id},
              {"category", p.category},
              {"reference", {{"sequence", p.ref_sequence}, {"frame", p.ref_frame}}},
              {"target", {{"sequence", p.tgt_sequence}, {"frames", p.tgt_frames}}}};
}

PairSpec pair_from_json(const json& j) {
  if (!j.is_object()) throw Error(ErrorCode::SchemaError, "pair record is not an object");
  PairSpec p;
  p.pair_id = str_field(j, "pair_id");
  p.category = str_field(j, "category");
  if (!j.contains("reference") || !j.at("reference").is_object()) {
    throw Error(ErrorCode::SchemaError, "pair '" + p.pair_id + "': field 'reference' missing");
  }
  if (!j.contains("target") || !j.at("target").is_object()) {
    throw Error(ErrorCode::SchemaError, "pair '" + p.pair_id + "': field 'target' missing");
  }
  p.ref_sequence = str_field(j.at("reference"), "sequence");
  p.ref_frame = str_field(j.at("reference"), "frame");
  p.tgt_sequence = str_field(j.at("target"), "sequence");
  const json& frames = j.at("target").value("frames", json());
  if (!frames.is_array() || frames.empty()) {
    throw Error(ErrorCode::SchemaError, "pair '" + p.pair_id + "': target frames must be a non-empty list");
  }
  for (const auto& f : frames) {
    if (!f.is_string()) throw Error(ErrorCode::SchemaError, "pair '" + p.pair_id + "': target frame ids must be strings");
    p.tgt_frames.push_back(f.get<std::string>());
    if (p.tgt_sequence == p.ref_sequence && p.tgt_frames.back() == p.ref_frame) {
      throw Error(ErrorCode::SchemaError, "pair '" + p.pair_id + "': reference frame is also a target frame");
    }
  }
  return p;
}

std::vector<PairSpec> parse_pairs_jsonl(const std::string& text) {
  std::vector<PairSpec> out;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw Error(ErrorCode::SchemaError, "pairs line " + std::to_string(lineno) + ": " + e.what());
    }
    out.push_back(pair_from_json(j));
  }
  return out;
}

std::string pairs_to_jsonl(const std::vector<PairSpec>& pairs) {
  std::string out;
  for (const auto& p : pairs) {
    out += pair_to_json(p).dump();
    out += '\n';
  }
  return out;
}

std::vector<PairSpec> read_pairs_file(const std::filesystem::path& path) {
  return parse_pairs_jsonl(read_text_file(path));
}

DatasetPairSource::DatasetPairSource(std::filesystem::path root, std::vector<PairSpec> pairs, int views)
    : root_(std::move(root)), pairs_(std::move(pairs)) {
  if (views < 0) throw Error(ErrorCode::InvalidArgument, "views must be non-negative");
  if (views > 0) {
    for (auto& p : pairs_) {
      if (p.tgt_frames.size() > static_cast<std::size_t>(views)) p.tgt_frames.resize(static_cast<std::size_t>(views));
    }
  }
}

PairSpec DatasetPairSource::spec(std::size_t i) const { return pairs_.at(i); }

PairInstance DatasetPairSource::load(std::size_t i) const {
  const PairSpec& p = pairs_.at(i);
  const Sequence ref_seq = load_sequence(root_ / p.ref_sequence / "manifest.json");
  const Sequence tgt_seq = load_sequence(root_ / p.tgt_sequence / "manifest.json");
  for (const Sequence* s : {&ref_seq, &tgt_seq}) {
    if (!s->manifest().canonical_alignment) {
      throw Error(ErrorCode::MissingLabel, "sequence '" + s->manifest().sequence_id + "' has no canonical alignment");
    }
  }
  PairInstance inst;
  inst.reference = ref_seq.frame(p.ref_frame);
  for (const auto& id : p.tgt_frames) inst.targets.push_back(tgt_seq.frame(id));
  inst.ref_label = *ref_seq.manifest().canonical_alignment;
  inst.tgt_label = *tgt_seq.manifest().canonical_alignment;
  return inst;
}

Predictor pipeline_predictor(const PipelineConfig& cfg) {
  return [cfg](const PairInstance& inst) {
    const PipelineResult r = estimate_pose(inst.reference, inst.targets, cfg);
    return Prediction{r.estimate.transform, r.best_view_index, r.fallback};
  };
}

Predictor icp_predictor(const IcpBaselineConfig& cfg) {
  return [cfg](const PairInstance& inst) {
    const IcpBaselineResult r = estimate_pose_icp(inst.reference, inst.targets, cfg);
    return Prediction{r.icp.estimate.transform, r.target_view, FallbackFlag::None};
  };
}

Predictor oracle_predictor(int view) {
  return [view](const PairInstance& inst) {
    const auto& tgt = inst.targets.at(static_cast<std::size_t>(view));
    return Prediction{relative_gt_pose(inst.ref_label, inst.tgt_label, inst.reference.extrinsics, tgt.extrinsics), view,
                      FallbackFlag::None};
  };
}

Predictor identity_predictor(int view) {
  return [view](const PairInstance&) { return Prediction{RigidTransformSim3(), view, FallbackFlag::None}; };
}

double median_lower(std::vector<double> values) {
  if (values.empty()) throw Error(ErrorCode::InvalidArgument, "median of an empty list");
  const std::size_t mid = (values.size() - 1) / 2;
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid), values.end());
  return values[mid];
}

double accuracy_at(const std::vector<double>& errors_deg, double threshold_deg) {
  if (errors_deg.empty()) return 0.0;
  const auto hits = std::count_if(errors_deg.begin(), errors_deg.end(), [&](double e) { return e < threshold_deg; });
  return 100.0 * static_cast<double>(hits) / static_cast<double>(errors_deg.size());
}

CategoryReport summarize(const std::string& category, const std::vector<double>& errors_deg) {
  CategoryReport r;
  r.category = category;
  r.pair_count = static_cast<int>(errors_deg.size());
  if (errors_deg.empty()) return r;
  r.median_error_deg = median_lower(errors_deg);
  r.acc30 = accuracy_at(errors_deg, 30.0);
  r.acc15 = accuracy_at(errors_deg, 15.0);
  return r;
}

PairResult score_prediction(const PairSpec& spec, const PairInstance& inst, const Prediction& pred) {
  if (pred.view_index < 0 || static_cast<std::size_t>(pred.view_index) >= inst.targets.size()) {
    throw Error(ErrorCode::InvalidArgument, "prediction refers to a target view that does not exist");
  }
  const RigidTransformSim3 gt = relative_gt_pose(inst.ref_label, inst.tgt_label, inst.reference.extrinsics,
                                                 inst.targets[static_cast<std::size_t>(pred.view_index)].extrinsics);
  PairResult r;
  r.category = spec.category;
  r.pair_id = spec.pair_id;
  r.rotation_error_deg = rad2deg(geodesic_rotation_error(pred.transform.rotation(), gt.rotation()));
  r.translation_error = (pred.transform.translation() - gt.translation()).norm();
  r.best_view = pred.view_index;
  r.fallback = pred.fallback;
  return r;
}

void aggregate_records(EvalReport& report, Aggregation aggregation) {
  std::map<std::string, std::vector<double>> by_cat;
  std::vector<double> all;
  for (const auto& r : report.records) {
    by_cat[r.category].push_back(r.rotation_error_deg);
    all.push_back(r.rotation_error_deg);
  }
  report.per_category.clear();
  for (const auto& [cat, errs] : by_cat) report.per_category.push_back(summarize(cat, errs));

  if (aggregation == Aggregation::Micro || report.per_category.empty()) {
    report.aggregate = summarize("aggregate", all);
    return;
  }
  CategoryReport agg;
  agg.category = "aggregate";
  for (const auto& c : report.per_category) {
    agg.median_error_deg += c.median_error_deg;
    agg.acc30 += c.acc30;
    agg.acc15 += c.acc15;
    agg.pair_count += c.pair_count;
  }
  const double n = static_cast<double>(report.per_category.size());
  agg.median_error_deg /= n;
  agg.acc30 /= n;
  agg.acc15 /= n;
  report.aggregate = agg;
}

EvalReport evaluate_pairs(const PairSource& source, const Predictor& predict, const EvalOptions& opts) {
  const std::size_t n = source.size();
  std::vector<std::optional<PairResult>> results(n);
  std::vector<std::string> skips(n);
  std::vector<std::exception_ptr> failures(n);
  std::atomic<std::size_t> next{0};

  auto worker = [&]() {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        const PairSpec spec = source.spec(i);
        const PairInstance inst = source.load(i);
        results[i] = score_prediction(spec, inst, predict(inst));
      } catch (const Error& e) {
        if (e.code() == ErrorCode::MissingLabel || e.code() == ErrorCode::AllViewsUnusable) {
          skips[i] = std::string(to_string(e.code()));
        } else {
          failures[i] = std::current_exception();
        }
      } catch (...) {
        failures[i] = std::current_exception();
      }
    }
  };

  const int jobs = std::max(1, std::min<int>(opts.jobs, static_cast<int>(std::max<std::size_t>(n, 1))));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < jobs; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (const auto& f : failures) {
    if (f) std::rethrow_exception(f);
  }

  EvalReport report;
  for (std::size_t i = 0; i < n; ++i) {
    if (results[i]) {
      report.records.push_back(*results[i]);
    } else {
      ++report.skipped;
      ++report.skip_reasons[skips[i]];
    }
  }
  aggregate_records(report, opts.aggregation);
  return report;
}

json report_to_json(const EvalReport& report, const json& config_echo) {
  auto row = [](const CategoryReport& c) {
    return json{{"category", c.category},
                {"median_error_deg", c.median_error_deg},
                {"acc30", c.acc30},
                {"acc15", c.acc15},
                {"pair_count", c.pair_count}};
  };
  json per_cat = json::array();
  for (const auto& c : report.per_category) per_cat.push_back(row(c));
  json agg = row(report.aggregate);
  agg.erase("category");
  return json{{"aggregate", agg},
              {"per_category", per_cat},
              {"skipped", report.skipped},
              {"skip_reasons", report.skip_reasons},
              {"config", config_echo}};
}

std::string per_pair_csv(const std::vector<PairResult>& records) {
  std::string out = "category,pair_id,rotation_error_deg,translation_error,best_view,fallback\n";
  for (const auto& r : records) {
    out += r.category + "," + r.pair_id + "," + fmt(r.rotation_error_deg) + "," + fmt(r.translation_error) + "," +
           std::to_string(r.best_view) + "," + std::string(to_string(r.fallback)) + "\n";
  }
  return out;
}

std::string error_histogram_csv(const std::vector<PairResult>& records) {
  std::string out = "category,rotation_error_deg\n";
  for (const auto& r : records) out += r.category + "," + fmt(r.rotation_error_deg) + "\n";
  return out;
}

std::vector<int> histogram_counts(const std::vector<double>& errors_deg, int bins) {
  if (bins < 1) throw Error(ErrorCode::InvalidArgument, "bins must be positive");
  std::vector<int> counts(static_cast<std::size_t>(bins), 0);
  for (double e : errors_deg) {
    int b = static_cast<int>(std::floor(e / 180.0 * bins));
    b = std::clamp(b, 0, bins - 1);
    ++counts[static_cast<std::size_t>(b)];
  }
  return counts;
}

}  // namespace zspose
