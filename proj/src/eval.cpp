#include "hf/eval.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "json.hpp"

namespace hf {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<Run> to_runs(const std::vector<int>& stream, Run::Source source) {
  std::vector<Run> runs;
  if (stream.empty()) return runs;
  Run cur{stream[0], 0, 1, source};
  for (std::size_t i = 1; i < stream.size(); ++i) {
    if (stream[i] == cur.label) {
      cur.end = i + 1;
    } else {
      runs.push_back(cur);
      cur = Run{stream[i], i, i + 1, source};
    }
  }
  runs.push_back(cur);
  return runs;
}

MisalignmentCounts misalignment(const std::vector<int>& truth,
                                const std::vector<int>& pred, std::size_t null_index) {
  if (truth.size() != pred.size()) {
    throw ShapeError("misalignment: stream lengths differ (" +
                     std::to_string(truth.size()) + " vs " + std::to_string(pred.size()) +
                     ")");
  }
  const int null_label = static_cast<int>(null_index);
  const std::size_t N = truth.size();

  const std::vector<Run> truth_runs = to_runs(truth, Run::Source::kTruth);
  const std::vector<Run> pred_runs = to_runs(pred, Run::Source::kPrediction);

  // Frame -> enclosing run index.
  std::vector<std::size_t> truth_run_of(N), pred_run_of(N);
  for (std::size_t r = 0; r < truth_runs.size(); ++r) {
    for (std::size_t i = truth_runs[r].start; i < truth_runs[r].end; ++i) truth_run_of[i] = r;
  }
  for (std::size_t r = 0; r < pred_runs.size(); ++r) {
    for (std::size_t i = pred_runs[r].start; i < pred_runs[r].end; ++i) pred_run_of[i] = r;
  }

  // Does a truth run of this label intersect the predicted run's interval?
  std::vector<bool> pred_run_touches_same(pred_runs.size(), false);
  for (std::size_t r = 0; r < pred_runs.size(); ++r) {
    const Run& pr = pred_runs[r];
    for (const Run& tr : truth_runs) {
      if (tr.start >= pr.end) break;
      if (tr.end <= pr.start) continue;
      if (tr.label == pr.label) {
        pred_run_touches_same[r] = true;
        break;
      }
    }
  }
  // Does this truth run contain at least one correctly predicted frame?
  std::vector<bool> truth_run_has_hit(truth_runs.size(), false);
  for (std::size_t i = 0; i < N; ++i) {
    if (truth[i] == pred[i]) truth_run_has_hit[truth_run_of[i]] = true;
  }

  MisalignmentCounts out;
  out.total = N;
  for (std::size_t i = 0; i < N; ++i) {
    if (pred[i] == truth[i]) {
      out.true_positive++;
    } else if (truth[i] == null_label) {
      // Activity predicted over Null: boundary spill if the predicted run
      // reaches a matching truth run, otherwise a spurious insertion.
      if (pred_run_touches_same[pred_run_of[i]]) {
        out.overfill++;
      } else {
        out.insertion++;
      }
    } else if (pred[i] == null_label) {
      // Null predicted over an activity: a partially-hit truth run shrank
      // (underfill); a fully-missed one was deleted.
      if (truth_run_has_hit[truth_run_of[i]]) {
        out.underfill++;
      } else {
        out.deletion++;
      }
    } else {
      out.substitution++;
    }
  }
  return out;
}

// --------------------------------------------------------------------------
// confusion matrix metrics
// --------------------------------------------------------------------------

namespace {

EvalReport report_from_confusion(std::vector<std::vector<std::size_t>> confusion,
                                 const LabelSpace& labels, bool include_null_in_fm) {
  const std::size_t C = labels.size();
  EvalReport rep;
  rep.labels = labels.names;
  rep.confusion = std::move(confusion);
  rep.include_null_in_fm = include_null_in_fm;
  rep.per_class.resize(C);

  std::size_t total = 0;
  for (std::size_t t = 0; t < C; ++t) {
    for (std::size_t p = 0; p < C; ++p) total += rep.confusion[t][p];
  }
  rep.total_frames = total;

  for (std::size_t c = 0; c < C; ++c) {
    std::size_t tp = rep.confusion[c][c];
    std::size_t fp = 0, fn = 0, support = 0;
    for (std::size_t o = 0; o < C; ++o) {
      if (o != c) {
        fp += rep.confusion[o][c];
        fn += rep.confusion[c][o];
      }
      support += rep.confusion[c][o];
    }
    ClassMetrics& m = rep.per_class[c];
    m.support = support;
    m.precision = (tp + fp) > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
    m.recall = (tp + fn) > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
    m.f1 = (m.precision + m.recall) > 0.0
               ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
               : 0.0;
  }

  double sum_all = 0.0;
  for (const auto& m : rep.per_class) sum_all += m.f1;
  rep.fm_including_null = sum_all / static_cast<double>(C);
  if (labels.null_index) {
    if (C > 1) {
      const double sum_wo = sum_all - rep.per_class[*labels.null_index].f1;
      rep.fm_excluding_null = sum_wo / static_cast<double>(C - 1);
    } else {
      rep.fm_excluding_null = 0.0;
    }
  }
  rep.fm = (!include_null_in_fm && rep.fm_excluding_null) ? *rep.fm_excluding_null
                                                          : rep.fm_including_null;
  return rep;
}

}  // namespace

EvalReport evaluate_stream_pairs(
    const std::vector<std::pair<std::vector<int>, std::vector<int>>>& pairs,
    const LabelSpace& labels, bool include_null_in_fm) {
  const std::size_t C = labels.size();
  std::vector<std::vector<std::size_t>> confusion(C, std::vector<std::size_t>(C, 0));
  for (const auto& [truth, pred] : pairs) {
    if (truth.size() != pred.size()) {
      throw ShapeError("evaluate: stream lengths differ (" + std::to_string(truth.size()) +
                       " vs " + std::to_string(pred.size()) + ")");
    }
    for (std::size_t i = 0; i < truth.size(); ++i) {
      const int t = truth[i];
      const int p = pred[i];
      if (t < 0 || static_cast<std::size_t>(t) >= C || p < 0 ||
          static_cast<std::size_t>(p) >= C) {
        throw ValueError("evaluate: class index out of range at frame " + std::to_string(i));
      }
      confusion[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)]++;
    }
  }
  EvalReport rep = report_from_confusion(std::move(confusion), labels, include_null_in_fm);
  if (labels.null_index) {
    MisalignmentCounts sum;
    for (const auto& [truth, pred] : pairs) {
      const MisalignmentCounts c = misalignment(truth, pred, *labels.null_index);
      sum.true_positive += c.true_positive;
      sum.deletion += c.deletion;
      sum.insertion += c.insertion;
      sum.overfill += c.overfill;
      sum.underfill += c.underfill;
      sum.substitution += c.substitution;
      sum.total += c.total;
    }
    rep.taxonomy = sum;
  }
  return rep;
}

EvalReport evaluate_streams(const std::vector<int>& truth, const std::vector<int>& pred,
                            const LabelSpace& labels, bool include_null_in_fm) {
  return evaluate_stream_pairs({{truth, pred}}, labels, include_null_in_fm);
}

// --------------------------------------------------------------------------
// sample-wise prediction
// --------------------------------------------------------------------------

std::vector<int> samplewise_predict(const LogitsFn& logits_fn, const SensorSequence& seq,
                                    std::size_t window, std::size_t batch_size) {
  const std::size_t N = seq.length();
  const std::size_t D = seq.channel_count;
  if (N < window) {
    throw ValueError("samplewise_predict: sequence of length " + std::to_string(N) +
                     " is shorter than the window (" + std::to_string(window) + ")");
  }
  if (batch_size == 0) batch_size = 1;
  const std::size_t num_windows = N - window + 1;
  std::vector<int> window_label(num_windows, 0);

  for (std::size_t base = 0; base < num_windows; base += batch_size) {
    const std::size_t take = std::min(batch_size, num_windows - base);
    Tensor batch = Tensor::zeros({take, D, window});
    double* px = batch.data();
    for (std::size_t i = 0; i < take; ++i) {
      const std::size_t start = base + i;
      for (std::size_t d = 0; d < D; ++d) {
        const double* src = seq.samples.data() + d * N + start;
        std::copy(src, src + window, px + (i * D + d) * window);
      }
    }
    Tensor logits = logits_fn(batch);
    if (logits.rank() != 2 || logits.dim(0) != take) {
      throw ShapeError("samplewise_predict: model returned " + shape_str(logits.shape()) +
                       " for a batch of " + std::to_string(take));
    }
    const std::size_t C = logits.dim(1);
    const double* pl = logits.data();
    for (std::size_t i = 0; i < take; ++i) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < C; ++c) {
        if (pl[i * C + c] > pl[i * C + best]) best = c;  // ties keep the lowest index
      }
      window_label[base + i] = static_cast<int>(best);
    }
  }

  // Causal assignment: window starting at s labels sample s+W-1; the first
  // window backfills samples 0..W-2.
  std::vector<int> out(N);
  for (std::size_t i = 0; i + 1 < window; ++i) out[i] = window_label[0];
  for (std::size_t s = 0; s < num_windows; ++s) out[s + window - 1] = window_label[s];
  return out;
}

// --------------------------------------------------------------------------
// export
// --------------------------------------------------------------------------

namespace {

// Percentages on a 0.01 grid that sum to exactly 100.00 (largest remainder).
std::vector<double> rounded_percentages(const std::vector<std::size_t>& counts,
                                        std::size_t total) {
  const std::size_t n = counts.size();
  std::vector<double> out(n, 0.0);
  if (total == 0) return out;
  std::vector<long long> units(n);
  std::vector<double> rema(n);
  long long assigned = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double exact = 10000.0 * static_cast<double>(counts[i]) / static_cast<double>(total);
    units[i] = static_cast<long long>(std::floor(exact));
    rema[i] = exact - std::floor(exact);
    assigned += units[i];
  }
  long long leftover = 10000 - assigned;
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return rema[a] > rema[b]; });
  for (long long k = 0; k < leftover; ++k) units[order[static_cast<std::size_t>(k) % n]]++;
  for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<double>(units[i]) / 100.0;
  return out;
}

json class_metrics_json(const EvalReport& rep) {
  json arr = json::array();
  for (std::size_t c = 0; c < rep.per_class.size(); ++c) {
    const ClassMetrics& m = rep.per_class[c];
    arr.push_back({{"label", rep.labels[c]},
                   {"precision", m.precision},
                   {"recall", m.recall},
                   {"f1", m.f1},
                   {"support", m.support}});
  }
  return arr;
}

}  // namespace

ReportFiles report_export(const EvalReport& report, const std::string& out_dir) {
  fs::create_directories(out_dir);
  ReportFiles files;
  files.report_json = (fs::path(out_dir) / "report.json").string();
  files.confusion_csv = (fs::path(out_dir) / "confusion.csv").string();

  json j;
  j["labels"] = report.labels;
  j["total_frames"] = report.total_frames;
  j["fm"] = report.fm;
  j["fm_including_null"] = report.fm_including_null;
  if (report.fm_excluding_null) j["fm_excluding_null"] = *report.fm_excluding_null;
  j["include_null_in_fm"] = report.include_null_in_fm;
  j["per_class"] = class_metrics_json(report);
  j["confusion"] = report.confusion;
  if (report.taxonomy) {
    const MisalignmentCounts& t = *report.taxonomy;
    const std::vector<std::size_t> counts = {t.true_positive, t.deletion, t.insertion,
                                             t.overfill_underfill(), t.substitution};
    const std::vector<double> pct = rounded_percentages(counts, t.total);
    j["misalignment"] = {
        {"total_frames", t.total},
        {"true_positive", t.true_positive},
        {"deletion", t.deletion},
        {"insertion", t.insertion},
        {"overfill_underfill", t.overfill_underfill()},
        {"overfill", t.overfill},
        {"underfill", t.underfill},
        {"substitution", t.substitution},
        {"percent",
         {{"true_positive", pct[0]},
          {"deletion", pct[1]},
          {"insertion", pct[2]},
          {"overfill_underfill", pct[3]},
          {"substitution", pct[4]}}},
    };
  }
  std::ofstream out(files.report_json);
  if (!out) throw IoError("cannot write " + files.report_json);
  out << j.dump(2) << "\n";

  std::ofstream cm(files.confusion_csv);
  if (!cm) throw IoError("cannot write " + files.confusion_csv);
  cm << "truth\\pred";
  for (const auto& name : report.labels) cm << "," << name;
  cm << "\n";
  for (std::size_t t = 0; t < report.confusion.size(); ++t) {
    cm << report.labels[t];
    for (std::size_t p = 0; p < report.confusion[t].size(); ++p) {
      cm << "," << report.confusion[t][p];
    }
    cm << "\n";
  }
  return files;
}

EvalReport report_import(const std::string& json_path) {
  std::ifstream in(json_path);
  if (!in) throw IoError("cannot open " + json_path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ParseError(std::string("report: ") + e.what());
  }
  EvalReport rep;
  rep.labels = j.at("labels").get<std::vector<std::string>>();
  rep.total_frames = j.at("total_frames").get<std::size_t>();
  rep.fm = j.at("fm").get<double>();
  rep.fm_including_null = j.at("fm_including_null").get<double>();
  if (j.contains("fm_excluding_null")) {
    rep.fm_excluding_null = j.at("fm_excluding_null").get<double>();
  }
  rep.include_null_in_fm = j.at("include_null_in_fm").get<bool>();
  rep.confusion = j.at("confusion").get<std::vector<std::vector<std::size_t>>>();
  for (const auto& e : j.at("per_class")) {
    ClassMetrics m;
    m.precision = e.at("precision").get<double>();
    m.recall = e.at("recall").get<double>();
    m.f1 = e.at("f1").get<double>();
    m.support = e.at("support").get<std::size_t>();
    rep.per_class.push_back(m);
  }
  if (j.contains("misalignment")) {
    const auto& t = j.at("misalignment");
    MisalignmentCounts c;
    c.total = t.at("total_frames").get<std::size_t>();
    c.true_positive = t.at("true_positive").get<std::size_t>();
    c.deletion = t.at("deletion").get<std::size_t>();
    c.insertion = t.at("insertion").get<std::size_t>();
    c.overfill = t.at("overfill").get<std::size_t>();
    c.underfill = t.at("underfill").get<std::size_t>();
    c.substitution = t.at("substitution").get<std::size_t>();
    rep.taxonomy = c;
  }
  return rep;
}

void write_prediction_stream(const std::string& path, const std::vector<int>& truth,
                             const std::vector<int>& pred, const LabelSpace& labels) {
  if (truth.size() != pred.size()) {
    throw ShapeError("prediction stream: truth and pred lengths differ");
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "sample_index,truth,pred\n";
  for (std::size_t i = 0; i < truth.size(); ++i) {
    out << i << "," << labels.names.at(static_cast<std::size_t>(truth[i])) << ","
        << labels.names.at(static_cast<std::size_t>(pred[i])) << "\n";
  }
}

}  // namespace hf
