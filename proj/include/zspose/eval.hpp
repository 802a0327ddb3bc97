#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "zspose/geom.hpp"
#include "zspose/io.hpp"
#include "zspose/pipeline.hpp"

namespace zspose {

struct PairSpec {
  std::string pair_id;
  std::string category;
  std::string ref_sequence;
  std::string ref_frame;
  std::string tgt_sequence;
  std::vector<std::string> tgt_frames;
};

nlohmann::json pair_to_json(const PairSpec& p);
/// Throws SchemaError.
PairSpec pair_from_json(const nlohmann::json& j);
/// One JSON object per non-blank line.
std::vector<PairSpec> parse_pairs_jsonl(const std::string& text);
std::string pairs_to_jsonl(const std::vector<PairSpec>& pairs);
std::vector<PairSpec> read_pairs_file(const std::filesystem::path& path);

/// Everything a predictor needs for one pair plus the two alignment labels.
struct PairInstance {
  FrameBundle reference;
  std::vector<FrameBundle> targets;
  RigidTransformSim3 ref_label;  // canonical -> world, reference sequence
  RigidTransformSim3 tgt_label;  // canonical -> world, target sequence
};

class PairSource {
 public:
  virtual ~PairSource() = default;
  virtual std::size_t size() const = 0;
  virtual PairSpec spec(std::size_t i) const = 0;
  /// Throws MissingLabel when a sequence has no canonical alignment.
  virtual PairInstance load(std::size_t i) const = 0;
};

/// Pairs over sequences stored as <root>/<sequence_id>/manifest.json.
class DatasetPairSource : public PairSource {
 public:
  /// views > 0 keeps only the first `views` target frames of every pair.
  DatasetPairSource(std::filesystem::path root, std::vector<PairSpec> pairs, int views = 0);

  std::size_t size() const override { return pairs_.size(); }
  PairSpec spec(std::size_t i) const override;
  PairInstance load(std::size_t i) const override;

 private:
  std::filesystem::path root_;
  std::vector<PairSpec> pairs_;
};

struct Prediction {
  RigidTransformSim3 transform;  // reference camera -> camera of target view_index
  int view_index = 0;
  FallbackFlag fallback = FallbackFlag::None;
};

using Predictor = std::function<Prediction(const PairInstance&)>;

Predictor pipeline_predictor(const PipelineConfig& cfg);
Predictor icp_predictor(const IcpBaselineConfig& cfg);
/// Ground-truth pose into `view`.
Predictor oracle_predictor(int view = 0);
Predictor identity_predictor(int view = 0);

struct PairResult {
  std::string category;
  std::string pair_id;
  double rotation_error_deg = 0.0;
  double translation_error = 0.0;  // |t_pred - t_gt|, reported outside the headline metrics
  int best_view = 0;
  FallbackFlag fallback = FallbackFlag::None;
};

struct CategoryReport {
  std::string category;
  double median_error_deg = 0.0;
  double acc30 = 0.0;
  double acc15 = 0.0;
  int pair_count = 0;
};

enum class Aggregation { Macro, Micro };

struct EvalOptions {
  int jobs = 1;
  Aggregation aggregation = Aggregation::Macro;
};

struct EvalReport {
  std::vector<CategoryReport> per_category;  // sorted by category
  CategoryReport aggregate;
  std::vector<PairResult> records;           // in pair order, scored pairs only
  int skipped = 0;
  std::map<std::string, int> skip_reasons;
};

/// Lower-middle order statistic. Throws InvalidArgument on empty input.
double median_lower(std::vector<double> values);
/// Percentage of values strictly below threshold.
double accuracy_at(const std::vector<double>& errors_deg, double threshold_deg);
CategoryReport summarize(const std::string& category, const std::vector<double>& errors_deg);

PairResult score_prediction(const PairSpec& spec, const PairInstance& inst, const Prediction& pred);

/// Runs `predict` over every pair (up to opts.jobs threads). Pairs failing
/// with MissingLabel or AllViewsUnusable are skipped and counted.
EvalReport evaluate_pairs(const PairSource& source, const Predictor& predict, const EvalOptions& opts = {});
/// Rebuilds the per-category and aggregate rows from records.
void aggregate_records(EvalReport& report, Aggregation aggregation);

nlohmann::json report_to_json(const EvalReport& report, const nlohmann::json& config_echo = nlohmann::json::object());
std::string per_pair_csv(const std::vector<PairResult>& records);
/// (category, error) rows for external plotting.
std::string error_histogram_csv(const std::vector<PairResult>& records);
/// Counts over `bins` equal bins spanning [0, 180] degrees.
std::vector<int> histogram_counts(const std::vector<double>& errors_deg, int bins);

}  // namespace zspose
