#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "hf/data.hpp"
#include "hf/tensor.hpp"

namespace hf {

// A maximal run of one label; runs tile the stream and adjacent runs differ.
struct Run {
  enum class Source { kTruth, kPrediction };
  int label = 0;
  std::size_t start = 0;  // half-open [start, end)
  std::size_t end = 0;
  Source source = Source::kTruth;
};

std::vector<Run> to_runs(const std::vector<int>& stream, Run::Source source);

// Frame-level misalignment taxonomy. The five categories partition all
// frames exactly: correct frames (including correct Null) are true
// positives; errors are classified by run analysis.
struct MisalignmentCounts {
  std::size_t true_positive = 0;
  std::size_t deletion = 0;
  std::size_t insertion = 0;
  std::size_t overfill = 0;
  std::size_t underfill = 0;
  std::size_t substitution = 0;
  std::size_t total = 0;

  std::size_t overfill_underfill() const { return overfill + underfill; }
};

MisalignmentCounts misalignment(const std::vector<int>& truth,
                                const std::vector<int>& pred, std::size_t null_index);

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t support = 0;  // truth frames of this class
};

struct EvalReport {
  std::vector<std::string> labels;
  std::vector<std::vector<std::size_t>> confusion;  // [truth][pred]
  std::vector<ClassMetrics> per_class;
  double fm = 0.0;  // the headline score per include_null_in_fm
  double fm_including_null = 0.0;
  std::optional<double> fm_excluding_null;  // present when a null class exists
  bool include_null_in_fm = true;
  std::size_t total_frames = 0;
  std::optional<MisalignmentCounts> taxonomy;
};

// Per-class precision/recall/F1 from the confusion matrix; F_m is the mean
// of per-class F1 with the 0/0 -> 0 convention. Taxonomy is attached when
// the label space defines a null class.
EvalReport evaluate_streams(const std::vector<int>& truth, const std::vector<int>& pred,
                            const LabelSpace& labels, bool include_null_in_fm = true);

// Multi-sequence scoring: confusion matrices and frame counts accumulate
// before metrics are derived (frame-count-weighted merge).
EvalReport evaluate_stream_pairs(
    const std::vector<std::pair<std::vector<int>, std::vector<int>>>& pairs,
    const LabelSpace& labels, bool include_null_in_fm = true);

// Model adapter for prediction: maps stacked windows [B,D,W] to logits [B,C].
using LogitsFn = std::function<Tensor(const Tensor& windows)>;

// Sample-wise prediction over a continuous sequence. Windows slide with
// stride 1; the argmax of each window is assigned to the window's last
// sample (causal), and samples 0..W-2 take the first window's label. Argmax
// ties break toward the lowest class index.
std::vector<int> samplewise_predict(const LogitsFn& logits_fn, const SensorSequence& seq,
                                    std::size_t window, std::size_t batch_size = 256);

// JSON report plus CSV confusion matrix. Taxonomy percentages are written
// at 2-decimal precision with largest-remainder rounding so they sum to
// exactly 100.00.
struct ReportFiles {
  std::string report_json;
  std::string confusion_csv;
};
ReportFiles report_export(const EvalReport& report, const std::string& out_dir);
EvalReport report_import(const std::string& json_path);

// Prediction stream CSV: sample_index,truth,pred (label tokens).
void write_prediction_stream(const std::string& path, const std::vector<int>& truth,
                             const std::vector<int>& pred, const LabelSpace& labels);

}  // namespace hf
