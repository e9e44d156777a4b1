#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hf/rng.hpp"
#include "hf/tensor.hpp"

namespace hf {

// The set of activity classes. `null_index`, when present, marks the
// activity-of-non-interest class required by the misalignment measures.
struct LabelSpace {
  std::vector<std::string> names;
  std::optional<std::size_t> null_index;

  std::size_t size() const { return names.size(); }
  // Index of a label token; throws ParseError when unknown.
  std::size_t index_of(const std::string& token) const;
  void validate() const;
};

// A continuous multi-channel recording with one label per sample.
// samples is row-major [D x N]: channel d occupies row d.
struct SensorSequence {
  std::string id;
  std::string subject;
  std::string run;
  double sample_rate_hz = 0.0;
  std::size_t channel_count = 0;  // D
  std::vector<double> samples;    // D*N, channel-major
  std::vector<int> labels;        // N

  std::size_t length() const { return labels.size(); }
  double at(std::size_t channel, std::size_t i) const {
    return samples[channel * length() + i];
  }
};

// Per-channel mean/std fitted on the training split only.
struct NormalizationStats {
  std::vector<double> mean;
  std::vector<double> std_dev;

  std::size_t channels() const { return mean.size(); }
};

struct SegmentOrigin {
  std::string sequence_id;
  std::size_t start = 0;

  bool operator==(const SegmentOrigin& o) const {
    return sequence_id == o.sequence_id && start == o.start;
  }
};

// A fixed-width training window with a soft label vector on the simplex.
struct Segment {
  std::size_t channel_count = 0;   // D
  std::size_t width = 0;           // W
  std::vector<double> window;      // D*W, channel-major
  std::vector<double> label;       // length num_classes, sums to 1
  SegmentOrigin origin;
};

// Stacked windows [B,D,W] and soft labels [B,C] ready for the model.
struct Batch {
  Tensor inputs;
  Tensor labels;
  std::vector<SegmentOrigin> origins;

  std::size_t size() const { return origins.size(); }
};

// --------------------------------------------------------------------------
// ingestion
// --------------------------------------------------------------------------

// Reads one recording from CSV. The header names the channel columns plus a
// `label` column; every other column is a channel, in header order. Parse
// failures report the file and 1-based line number.
SensorSequence load_sequence(const std::string& path, const LabelSpace& labels,
                             double sample_rate_hz);

// Writes a sequence in the same CSV dialect (shortest round-trip floats).
void write_sequence(const std::string& path, const SensorSequence& seq,
                    const LabelSpace& labels);

// Integer decimation. The rate ratio must sit within 0.02 of an integer;
// anything else (including upsampling) is rejected rather than interpolated.
SensorSequence resample(const SensorSequence& seq, double target_hz);

NormalizationStats fit_stats(const std::vector<SensorSequence>& train);
// Channels with std below 1e-8 are shifted but not scaled.
SensorSequence apply_stats(const SensorSequence& seq, const NormalizationStats& stats);

// Sliding windows of width W starting at 0, stride, 2*stride, ... with
// stride = W*(1-overlap) (must be a positive integer). Window label = the
// majority label, one-hot; ties break toward the label occurring latest in
// the window. N < W yields an empty list and a warning record.
std::vector<Segment> segment(const SensorSequence& seq, std::size_t window,
                             double overlap, std::size_t num_classes,
                             std::vector<std::string>* warnings = nullptr);

// --------------------------------------------------------------------------
// batching and augmentation
// --------------------------------------------------------------------------

// Seeded shuffle, then exhaustive disjoint batches; the last may be smaller.
std::vector<Batch> make_batches(const std::vector<Segment>& segments,
                                std::size_t batch_size, Rng& rng);

// Convex combination of rows i and partner[i] with per-row lambda.
Batch mixup_pairs(const Batch& batch, const std::vector<std::size_t>& partner,
                  const std::vector<double>& lambdas);

// Pairs each row with a uniformly permuted partner from the same batch and
// draws one lambda ~ Beta(alpha, alpha) per row. `forced_lambda` pins lambda
// for every row (test hook).
Batch mixup_batch(const Batch& batch, double alpha, Rng& rng,
                  std::optional<double> forced_lambda = std::nullopt);

// --------------------------------------------------------------------------
// dataset manifest
// --------------------------------------------------------------------------

enum class Split { kTrain, kVal, kTest };

Split split_from_string(const std::string& s);
std::string split_to_string(Split s);

struct ManifestEntry {
  std::string path;  // resolved to an absolute/relative-to-cwd path on load
  Split split = Split::kTrain;
  std::string subject;
  std::string run;
};

struct DatasetManifest {
  std::string name;
  double sample_rate_hz = 0.0;
  LabelSpace labels;
  std::vector<ManifestEntry> files;
};

DatasetManifest load_manifest(const std::string& path);
void write_manifest(const std::string& path, const DatasetManifest& manifest);

}  // namespace hf
