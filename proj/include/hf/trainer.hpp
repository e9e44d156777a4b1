#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hf/data.hpp"
#include "hf/loss.hpp"
#include "hf/model.hpp"

namespace hf {

struct Toggles {
  bool mixup = true;
  bool center_loss = true;
  bool cie = true;
  bool age_attention = true;

  bool operator==(const Toggles&) const = default;
};

// Every training knob. Defaults follow the shared regimen; per-dataset
// presets override p_feat, p_cls and gamma only.
struct TrainConfig {
  std::size_t epochs = 300;
  std::size_t batch_size = 256;
  double lr = 1e-3;
  double lr_decay_factor = 0.9;
  std::size_t lr_decay_every = 10;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double mixup_alpha = 0.8;
  double gamma = 3e-4;
  double p_feat = 0.5;
  double p_cls = 0.5;
  std::uint64_t seed = 1;
  Toggles toggles;
  std::size_t window = 24;
  double overlap = 0.5;
  std::size_t conv_channels = 64;
  std::size_t hidden = 128;
  std::optional<double> resample_hz;
  bool include_null_in_fm = true;
  bool drop_null_windows = false;
  bool cie_bias = false;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

// Strict JSON load: unknown keys and out-of-range values fail before any
// computation starts.
TrainConfig load_train_config(const std::string& path);
std::string train_config_to_json_string(const TrainConfig& cfg);

ModelConfig model_config_from(const TrainConfig& cfg, std::size_t sensor_channels,
                              std::size_t num_classes);

double lr_at(std::size_t epoch, const TrainConfig& cfg);

// Bias-corrected Adam over the model's parameter blocks. Moments mirror the
// block list; a non-finite gradient aborts with the offending block named.
class Adam {
 public:
  Adam(const std::vector<ParamBlock>& blocks, double beta1, double beta2, double eps);

  void step(const std::vector<ParamBlock>& blocks, double lr);
  std::size_t step_count() const { return step_; }

  const std::vector<std::vector<double>>& first_moments() const { return m_; }
  const std::vector<std::vector<double>>& second_moments() const { return v_; }
  void restore(std::size_t step, std::vector<std::vector<double>> m,
               std::vector<std::vector<double>> v);

 private:
  double beta1_;
  double beta2_;
  double eps_;
  std::size_t step_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

struct EpochStats {
  double total = 0.0;
  double cross_entropy = 0.0;
  double center = 0.0;
  std::size_t batches = 0;
};

// One pass over the training segments: shuffle into batches, mixup when on,
// forward, joint loss, backward, Adam step at lr_at(epoch). Returns mean
// losses across batches.
EpochStats train_epoch(Model& model, const std::vector<Segment>& segments,
                       const TrainConfig& cfg, std::size_t epoch, Adam& adam, Rng& rng);

struct HistoryRow {
  std::size_t epoch = 0;
  double lr = 0.0;
  double total = 0.0;
  double cross_entropy = 0.0;
  double center = 0.0;
  double val_fm = 0.0;
};

void write_history_csv(const std::string& path, const std::vector<HistoryRow>& rows);

struct FitResult {
  std::vector<HistoryRow> history;
  std::optional<double> best_val_fm;
  std::size_t best_epoch = 0;
  std::string best_checkpoint;
  std::string last_checkpoint;
  std::string history_csv;
};

// Full training run with per-epoch sample-wise validation F_m. Keeps the
// best-validation checkpoint alongside the final one and writes
// out_dir/history.csv with columns epoch,lr,total_loss,ce_loss,center_loss,
// val_Fm. Pass adam/rng/start_epoch to resume from a checkpoint.
FitResult fit(Model& model, const std::vector<Segment>& train_segments,
              const std::vector<SensorSequence>& val_sequences, const LabelSpace& labels,
              const TrainConfig& cfg, const std::string& out_dir, Adam* adam = nullptr,
              Rng* rng = nullptr, std::size_t start_epoch = 0);

// --------------------------------------------------------------------------
// checkpoints
// --------------------------------------------------------------------------

void save_checkpoint(const std::string& path, const Model& model, const TrainConfig& cfg,
                     std::size_t epoch, std::optional<double> val_fm,
                     const Adam* adam = nullptr, const Rng* rng = nullptr);

struct LoadedCheckpoint {
  TrainConfig config;
  std::size_t sensor_channels = 0;
  std::size_t num_classes = 0;
  std::size_t epoch = 0;
  std::optional<double> val_fm;
  Model model;
  std::optional<Adam> adam;
  std::optional<Rng> rng;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

// Throws ConfigError naming the first differing architecture field.
void require_same_arch(const TrainConfig& expected, const TrainConfig& found);

}  // namespace hf
