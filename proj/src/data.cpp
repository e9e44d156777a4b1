#include "hf/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>

#include "json.hpp"

namespace hf {

namespace fs = std::filesystem;
using nlohmann::json;

// --------------------------------------------------------------------------
// label space
// --------------------------------------------------------------------------

std::size_t LabelSpace::index_of(const std::string& token) const {
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == token) return i;
  }
  throw ParseError("unknown label token '" + token + "'");
}

void LabelSpace::validate() const {
  if (names.empty()) throw ConfigError("label space: no class names");
  std::set<std::string> seen(names.begin(), names.end());
  if (seen.size() != names.size()) {
    throw ConfigError("label space: class names must be unique");
  }
  if (null_index && *null_index >= names.size()) {
    throw ConfigError("label space: null index " + std::to_string(*null_index) +
                      " out of range");
  }
}

// --------------------------------------------------------------------------
// CSV ingestion
// --------------------------------------------------------------------------

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

double parse_field(const std::string& field, const std::string& path, std::size_t line_no) {
  double v = 0.0;
  const char* first = field.data();
  const char* last = field.data() + field.size();
  auto res = std::from_chars(first, last, v);
  if (res.ec != std::errc() || res.ptr != last || !std::isfinite(v)) {
    throw ParseError(path + ":" + std::to_string(line_no) + ": non-numeric field '" +
                     field + "'");
  }
  return v;
}

}  // namespace

SensorSequence load_sequence(const std::string& path, const LabelSpace& labels,
                             double sample_rate_hz) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open sequence file " + path);

  std::string line;
  if (!std::getline(in, line)) throw ParseError(path + ":1: missing header row");
  const std::vector<std::string> header = split_csv_line(line);

  std::size_t label_col = header.size();
  std::vector<std::size_t> channel_cols;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == "label") {
      label_col = i;
    } else {
      channel_cols.push_back(i);
    }
  }
  if (label_col == header.size()) {
    throw ParseError(path + ":1: header has no 'label' column");
  }
  if (channel_cols.empty()) {
    throw ParseError(path + ":1: header names no channel columns");
  }

  const std::size_t D = channel_cols.size();
  std::vector<std::vector<double>> columns(D);
  std::vector<int> stream_labels;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::vector<std::string> fields = split_csv_line(line);
    if (fields.size() != header.size()) {
      throw ParseError(path + ":" + std::to_string(line_no) + ": expected " +
                       std::to_string(header.size()) + " fields, got " +
                       std::to_string(fields.size()));
    }
    for (std::size_t d = 0; d < D; ++d) {
      columns[d].push_back(parse_field(fields[channel_cols[d]], path, line_no));
    }
    const std::string& token = fields[label_col];
    std::size_t cls;
    try {
      cls = labels.index_of(token);
    } catch (const ParseError&) {
      throw ParseError(path + ":" + std::to_string(line_no) + ": unknown label token '" +
                       token + "'");
    }
    stream_labels.push_back(static_cast<int>(cls));
  }

  SensorSequence seq;
  seq.id = path;
  seq.sample_rate_hz = sample_rate_hz;
  seq.channel_count = D;
  seq.labels = std::move(stream_labels);
  const std::size_t N = seq.labels.size();
  seq.samples.resize(D * N);
  for (std::size_t d = 0; d < D; ++d) {
    std::copy(columns[d].begin(), columns[d].end(), seq.samples.begin() + d * N);
  }
  return seq;
}

void write_sequence(const std::string& path, const SensorSequence& seq,
                    const LabelSpace& labels) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write sequence file " + path);
  const std::size_t D = seq.channel_count;
  const std::size_t N = seq.length();
  for (std::size_t d = 0; d < D; ++d) out << "ch" << d << ",";
  out << "label\n";
  for (std::size_t i = 0; i < N; ++i) {
    for (std::size_t d = 0; d < D; ++d) out << format_double(seq.at(d, i)) << ",";
    out << labels.names.at(static_cast<std::size_t>(seq.labels[i])) << "\n";
  }
  if (!out) throw IoError("write failed for " + path);
}

// --------------------------------------------------------------------------
// resampling and normalization
// --------------------------------------------------------------------------

SensorSequence resample(const SensorSequence& seq, double target_hz) {
  if (!(target_hz > 0.0)) throw ValueError("resample: target rate must be positive");
  if (target_hz > seq.sample_rate_hz) {
    throw ValueError("resample: cannot upsample " + format_double(seq.sample_rate_hz) +
                     " Hz to " + format_double(target_hz) + " Hz");
  }
  const double ratio = seq.sample_rate_hz / target_hz;
  const double rounded = std::round(ratio);
  if (std::abs(ratio - rounded) > 0.02) {
    throw ValueError("resample: rate ratio " + format_double(ratio) +
                     " is not within 0.02 of an integer; refusing to interpolate");
  }
  const std::size_t r = static_cast<std::size_t>(rounded);
  if (r <= 1) return seq;

  SensorSequence out;
  out.id = seq.id;
  out.subject = seq.subject;
  out.run = seq.run;
  out.channel_count = seq.channel_count;
  out.sample_rate_hz = seq.sample_rate_hz / static_cast<double>(r);
  const std::size_t N = seq.length();
  const std::size_t M = (N + r - 1) / r;  // keep indices 0, r, 2r, ...
  out.labels.resize(M);
  out.samples.resize(seq.channel_count * M);
  for (std::size_t i = 0; i < M; ++i) out.labels[i] = seq.labels[i * r];
  for (std::size_t d = 0; d < seq.channel_count; ++d) {
    for (std::size_t i = 0; i < M; ++i) out.samples[d * M + i] = seq.at(d, i * r);
  }
  return out;
}

NormalizationStats fit_stats(const std::vector<SensorSequence>& train) {
  if (train.empty()) throw ValueError("fit_stats: empty training pool");
  const std::size_t D = train[0].channel_count;
  std::size_t total = 0;
  for (const auto& s : train) {
    if (s.channel_count != D) {
      throw ShapeError("fit_stats: channel count mismatch across sequences");
    }
    total += s.length();
  }
  if (total == 0) throw ValueError("fit_stats: training pool has no samples");

  NormalizationStats stats;
  stats.mean.assign(D, 0.0);
  stats.std_dev.assign(D, 0.0);
  for (std::size_t d = 0; d < D; ++d) {
    double s = 0.0;
    for (const auto& seq : train) {
      const std::size_t N = seq.length();
      for (std::size_t i = 0; i < N; ++i) s += seq.at(d, i);
    }
    const double mu = s / static_cast<double>(total);
    double ss = 0.0;
    for (const auto& seq : train) {
      const std::size_t N = seq.length();
      for (std::size_t i = 0; i < N; ++i) {
        const double dv = seq.at(d, i) - mu;
        ss += dv * dv;
      }
    }
    stats.mean[d] = mu;
    stats.std_dev[d] = std::sqrt(ss / static_cast<double>(total));
  }
  return stats;
}

SensorSequence apply_stats(const SensorSequence& seq, const NormalizationStats& stats) {
  if (seq.channel_count != stats.channels()) {
    throw ShapeError("apply_stats: stats for " + std::to_string(stats.channels()) +
                     " channels applied to sequence with " +
                     std::to_string(seq.channel_count));
  }
  SensorSequence out = seq;
  const std::size_t N = seq.length();
  for (std::size_t d = 0; d < seq.channel_count; ++d) {
    // Guard: constant channels are centered but not scaled.
    const double denom = stats.std_dev[d] < 1e-8 ? 1.0 : stats.std_dev[d];
    const double mu = stats.mean[d];
    for (std::size_t i = 0; i < N; ++i) {
      out.samples[d * N + i] = (seq.at(d, i) - mu) / denom;
    }
  }
  return out;
}

// --------------------------------------------------------------------------
// windowing
// --------------------------------------------------------------------------

std::vector<Segment> segment(const SensorSequence& seq, std::size_t window,
                             double overlap, std::size_t num_classes,
                             std::vector<std::string>* warnings) {
  if (window == 0) throw ValueError("segment: window must be positive");
  if (!(overlap >= 0.0) || overlap >= 1.0) {
    throw ValueError("segment: overlap must satisfy 0 <= overlap < 1");
  }
  const double stride_f = static_cast<double>(window) * (1.0 - overlap);
  const double stride_round = std::round(stride_f);
  if (std::abs(stride_f - stride_round) > 1e-9 || stride_round < 1.0) {
    throw ValueError("segment: W*(1-overlap) = " + format_double(stride_f) +
                     " is not a positive integer stride");
  }
  const std::size_t stride = static_cast<std::size_t>(stride_round);
  const std::size_t N = seq.length();
  std::vector<Segment> out;
  if (N < window) {
    if (warnings) {
      warnings->push_back("sequence " + seq.id + " shorter than window (" +
                          std::to_string(N) + " < " + std::to_string(window) + "), skipped");
    }
    return out;
  }

  for (std::size_t start = 0; start + window <= N; start += stride) {
    Segment seg;
    seg.channel_count = seq.channel_count;
    seg.width = window;
    seg.origin = {seq.id, start};
    seg.window.resize(seq.channel_count * window);
    for (std::size_t d = 0; d < seq.channel_count; ++d) {
      for (std::size_t t = 0; t < window; ++t) {
        seg.window[d * window + t] = seq.at(d, start + t);
      }
    }
    // Majority label; ties break toward the label whose latest occurrence in
    // the window comes last.
    std::vector<std::size_t> count(num_classes, 0);
    std::vector<std::size_t> last_seen(num_classes, 0);
    for (std::size_t t = 0; t < window; ++t) {
      const int lbl = seq.labels[start + t];
      count[static_cast<std::size_t>(lbl)]++;
      last_seen[static_cast<std::size_t>(lbl)] = t;
    }
    std::size_t best = 0;
    bool have = false;
    for (std::size_t c = 0; c < num_classes; ++c) {
      if (count[c] == 0) continue;
      if (!have || count[c] > count[best] ||
          (count[c] == count[best] && last_seen[c] > last_seen[best])) {
        best = c;
        have = true;
      }
    }
    seg.label.assign(num_classes, 0.0);
    seg.label[best] = 1.0;
    out.push_back(std::move(seg));
  }
  return out;
}

// --------------------------------------------------------------------------
// batching and mixup
// --------------------------------------------------------------------------

std::vector<Batch> make_batches(const std::vector<Segment>& segments,
                                std::size_t batch_size, Rng& rng) {
  if (batch_size == 0) throw ValueError("make_batches: batch size must be >= 1");
  const std::vector<std::size_t> order = rng.permutation(segments.size());
  std::vector<Batch> out;
  std::size_t pos = 0;
  while (pos < order.size()) {
    const std::size_t take = std::min(batch_size, order.size() - pos);
    const Segment& first = segments[order[pos]];
    const std::size_t D = first.channel_count;
    const std::size_t W = first.width;
    const std::size_t C = first.label.size();
    Batch batch;
    batch.inputs = Tensor::zeros({take, D, W});
    batch.labels = Tensor::zeros({take, C});
    batch.origins.reserve(take);
    double* px = batch.inputs.data();
    double* py = batch.labels.data();
    for (std::size_t i = 0; i < take; ++i) {
      const Segment& seg = segments[order[pos + i]];
      std::copy(seg.window.begin(), seg.window.end(), px + i * D * W);
      std::copy(seg.label.begin(), seg.label.end(), py + i * C);
      batch.origins.push_back(seg.origin);
    }
    out.push_back(std::move(batch));
    pos += take;
  }
  return out;
}

Batch mixup_pairs(const Batch& batch, const std::vector<std::size_t>& partner,
                  const std::vector<double>& lambdas) {
  const std::size_t B = batch.size();
  if (partner.size() != B || lambdas.size() != B) {
    throw ShapeError("mixup_pairs: partner/lambda lists must match batch size");
  }
  const std::size_t row_x = batch.inputs.numel() / std::max<std::size_t>(B, 1);
  const std::size_t row_y = batch.labels.numel() / std::max<std::size_t>(B, 1);
  Batch out;
  out.inputs = Tensor::zeros(batch.inputs.shape());
  out.labels = Tensor::zeros(batch.labels.shape());
  out.origins = batch.origins;
  const double* x = batch.inputs.data();
  const double* y = batch.labels.data();
  double* ox = out.inputs.data();
  double* oy = out.labels.data();
  for (std::size_t i = 0; i < B; ++i) {
    const std::size_t j = partner[i];
    const double lam = lambdas[i];
    const double co = 1.0 - lam;
    for (std::size_t k = 0; k < row_x; ++k) {
      ox[i * row_x + k] = lam * x[i * row_x + k] + co * x[j * row_x + k];
    }
    for (std::size_t k = 0; k < row_y; ++k) {
      oy[i * row_y + k] = lam * y[i * row_y + k] + co * y[j * row_y + k];
    }
  }
  return out;
}

Batch mixup_batch(const Batch& batch, double alpha, Rng& rng,
                  std::optional<double> forced_lambda) {
  if (!(alpha > 0.0)) {
    throw ValueError("mixup: alpha must be positive, got " + format_double(alpha));
  }
  if (batch.size() == 0) throw ValueError("mixup: empty batch");
  const std::size_t B = batch.size();
  const std::vector<std::size_t> partner = rng.permutation(B);
  std::vector<double> lambdas(B);
  for (std::size_t i = 0; i < B; ++i) {
    lambdas[i] = forced_lambda ? *forced_lambda : rng.beta(alpha, alpha);
  }
  return mixup_pairs(batch, partner, lambdas);
}

// --------------------------------------------------------------------------
// manifest
// --------------------------------------------------------------------------

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "val") return Split::kVal;
  if (s == "test") return Split::kTest;
  throw ConfigError("manifest: unknown split '" + s + "' (expected train/val/test)");
}

std::string split_to_string(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "train";
}

DatasetManifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ParseError("manifest " + path + ": " + e.what());
  }

  static const std::set<std::string> known = {"name", "sample_rate_hz", "labels",
                                              "null_label", "files"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!known.count(it.key())) {
      throw ConfigError("manifest " + path + ": unknown key '" + it.key() + "'");
    }
  }

  DatasetManifest m;
  try {
    m.name = j.value("name", std::string());
    m.sample_rate_hz = j.at("sample_rate_hz").get<double>();
    m.labels.names = j.at("labels").get<std::vector<std::string>>();
    if (j.contains("null_label")) {
      m.labels.null_index = m.labels.index_of(j.at("null_label").get<std::string>());
    }
    const fs::path base = fs::path(path).parent_path();
    for (const auto& f : j.at("files")) {
      static const std::set<std::string> fkeys = {"path", "split", "subject", "run"};
      for (auto it = f.begin(); it != f.end(); ++it) {
        if (!fkeys.count(it.key())) {
          throw ConfigError("manifest " + path + ": unknown file key '" + it.key() + "'");
        }
      }
      ManifestEntry e;
      e.path = (base / f.at("path").get<std::string>()).string();
      e.split = split_from_string(f.at("split").get<std::string>());
      e.subject = f.value("subject", std::string());
      e.run = f.value("run", std::string());
      m.files.push_back(std::move(e));
    }
  } catch (const json::exception& e) {
    throw ParseError("manifest " + path + ": " + e.what());
  }
  m.labels.validate();
  if (!(m.sample_rate_hz > 0.0)) {
    throw ConfigError("manifest " + path + ": sample_rate_hz must be positive");
  }
  return m;
}

void write_manifest(const std::string& path, const DatasetManifest& manifest) {
  json j;
  j["name"] = manifest.name;
  j["sample_rate_hz"] = manifest.sample_rate_hz;
  j["labels"] = manifest.labels.names;
  if (manifest.labels.null_index) {
    j["null_label"] = manifest.labels.names[*manifest.labels.null_index];
  }
  json files = json::array();
  const fs::path base = fs::path(path).parent_path();
  for (const auto& e : manifest.files) {
    json f;
    f["path"] = fs::relative(e.path, base).string();
    f["split"] = split_to_string(e.split);
    if (!e.subject.empty()) f["subject"] = e.subject;
    if (!e.run.empty()) f["run"] = e.run;
    files.push_back(std::move(f));
  }
  j["files"] = std::move(files);
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest " + path);
  out << j.dump(2) << "\n";
}

}  // namespace hf
