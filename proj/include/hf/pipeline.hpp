#pragma once

#include <string>
#include <vector>

#include "hf/data.hpp"
#include "hf/trainer.hpp"

namespace hf {

// A manifest's worth of data, resampled and normalized with the training
// split's statistics, with the training split cut into windows.
struct PreparedData {
  LabelSpace labels;
  NormalizationStats stats;
  std::size_t channel_count = 0;
  std::vector<SensorSequence> train;
  std::vector<SensorSequence> val;
  std::vector<SensorSequence> test;
  std::vector<Segment> train_segments;
  std::vector<std::string> warnings;
};

PreparedData prepare_dataset(const DatasetManifest& manifest, const TrainConfig& cfg);

const std::vector<SensorSequence>& sequences_for_split(const PreparedData& data,
                                                       Split split);

}  // namespace hf
