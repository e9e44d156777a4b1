#include "hf/pipeline.hpp"

#include <algorithm>

namespace hf {

PreparedData prepare_dataset(const DatasetManifest& manifest, const TrainConfig& cfg) {
  PreparedData data;
  data.labels = manifest.labels;
  data.labels.validate();

  for (const ManifestEntry& entry : manifest.files) {
    SensorSequence seq = load_sequence(entry.path, manifest.labels, manifest.sample_rate_hz);
    seq.subject = entry.subject;
    seq.run = entry.run;
    if (cfg.resample_hz) seq = resample(seq, *cfg.resample_hz);
    switch (entry.split) {
      case Split::kTrain: data.train.push_back(std::move(seq)); break;
      case Split::kVal: data.val.push_back(std::move(seq)); break;
      case Split::kTest: data.test.push_back(std::move(seq)); break;
    }
  }
  if (data.train.empty()) {
    throw ConfigError("dataset: manifest has no train files; normalization statistics "
                      "need a training split");
  }
  data.channel_count = data.train.front().channel_count;

  data.stats = fit_stats(data.train);
  for (auto* split : {&data.train, &data.val, &data.test}) {
    for (SensorSequence& seq : *split) seq = apply_stats(seq, data.stats);
  }

  for (const SensorSequence& seq : data.train) {
    std::vector<Segment> segs =
        segment(seq, cfg.window, cfg.overlap, data.labels.size(), &data.warnings);
    data.train_segments.insert(data.train_segments.end(),
                               std::make_move_iterator(segs.begin()),
                               std::make_move_iterator(segs.end()));
  }
  if (cfg.drop_null_windows && data.labels.null_index) {
    const std::size_t null_c = *data.labels.null_index;
    std::erase_if(data.train_segments, [null_c](const Segment& s) {
      return s.label[null_c] == 1.0;
    });
  }
  return data;
}

const std::vector<SensorSequence>& sequences_for_split(const PreparedData& data,
                                                       Split split) {
  switch (split) {
    case Split::kTrain: return data.train;
    case Split::kVal: return data.val;
    case Split::kTest: return data.test;
  }
  return data.train;
}

}  // namespace hf
