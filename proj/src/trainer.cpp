#include "hf/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "config_json.hpp"
#include "hf/eval.hpp"

namespace hf {

namespace fs = std::filesystem;
using nlohmann::json;

// --------------------------------------------------------------------------
// config
// --------------------------------------------------------------------------

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("config: batch_size must be >= 1");
  if (!(lr >= 0.0)) throw ConfigError("config: lr must be nonnegative");
  if (!(lr_decay_factor > 0.0) || lr_decay_factor > 1.0) {
    throw ConfigError("config: lr_decay_factor must lie in (0,1]");
  }
  if (lr_decay_every == 0) throw ConfigError("config: lr_decay_every must be >= 1");
  if (!(adam_beta1 >= 0.0) || adam_beta1 >= 1.0 || !(adam_beta2 >= 0.0) || adam_beta2 >= 1.0) {
    throw ConfigError("config: adam betas must lie in [0,1)");
  }
  if (!(adam_eps > 0.0)) throw ConfigError("config: adam_eps must be positive");
  if (!(mixup_alpha > 0.0)) throw ConfigError("config: mixup_alpha must be positive");
  if (gamma < 0.0) throw ConfigError("config: gamma must be nonnegative");
  if (!(p_feat >= 0.0) || p_feat >= 1.0 || !(p_cls >= 0.0) || p_cls >= 1.0) {
    throw ConfigError("config: dropout probabilities must satisfy 0 <= p < 1");
  }
  if (!(overlap >= 0.0) || overlap >= 1.0) {
    throw ConfigError("config: overlap must satisfy 0 <= overlap < 1");
  }
  if (window == 0) throw ConfigError("config: window must be positive");
  if (conv_channels == 0 || hidden == 0) {
    throw ConfigError("config: conv_channels and hidden must be positive");
  }
  if (resample_hz && !(*resample_hz > 0.0)) {
    throw ConfigError("config: resample_hz must be positive when set");
  }
}

namespace detail {

json train_config_to_json(const TrainConfig& cfg) {
  json j;
  j["epochs"] = cfg.epochs;
  j["batch_size"] = cfg.batch_size;
  j["lr"] = cfg.lr;
  j["lr_decay"] = {{"factor", cfg.lr_decay_factor}, {"every", cfg.lr_decay_every}};
  j["adam"] = {{"beta1", cfg.adam_beta1}, {"beta2", cfg.adam_beta2}, {"eps", cfg.adam_eps}};
  j["mixup_alpha"] = cfg.mixup_alpha;
  j["gamma"] = cfg.gamma;
  j["p_feat"] = cfg.p_feat;
  j["p_cls"] = cfg.p_cls;
  j["seed"] = cfg.seed;
  j["toggles"] = {{"mixup", cfg.toggles.mixup},
                  {"center_loss", cfg.toggles.center_loss},
                  {"cie", cfg.toggles.cie},
                  {"age_attention", cfg.toggles.age_attention}};
  j["window"] = cfg.window;
  j["overlap"] = cfg.overlap;
  j["conv_channels"] = cfg.conv_channels;
  j["hidden"] = cfg.hidden;
  if (cfg.resample_hz) {
    j["resample_hz"] = *cfg.resample_hz;
  } else {
    j["resample_hz"] = nullptr;
  }
  j["include_null_in_fm"] = cfg.include_null_in_fm;
  j["drop_null_windows"] = cfg.drop_null_windows;
  j["cie_bias"] = cfg.cie_bias;
  return j;
}

namespace {

void reject_unknown(const json& j, std::initializer_list<const char*> known,
                    const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : known) {
      if (it.key() == k) {
        ok = true;
        break;
      }
    }
    if (!ok) throw ConfigError(where + ": unknown key '" + it.key() + "'");
  }
}

}  // namespace

TrainConfig train_config_from_json(const json& j, const std::string& where) {
  reject_unknown(j,
                 {"epochs", "batch_size", "lr", "lr_decay", "adam", "mixup_alpha", "gamma",
                  "p_feat", "p_cls", "seed", "toggles", "window", "overlap", "conv_channels",
                  "hidden", "resample_hz", "include_null_in_fm", "drop_null_windows",
                  "cie_bias"},
                 where);
  TrainConfig cfg;
  try {
    cfg.epochs = j.value("epochs", cfg.epochs);
    cfg.batch_size = j.value("batch_size", cfg.batch_size);
    cfg.lr = j.value("lr", cfg.lr);
    if (j.contains("lr_decay")) {
      reject_unknown(j["lr_decay"], {"factor", "every"}, where + ".lr_decay");
      cfg.lr_decay_factor = j["lr_decay"].value("factor", cfg.lr_decay_factor);
      cfg.lr_decay_every = j["lr_decay"].value("every", cfg.lr_decay_every);
    }
    if (j.contains("adam")) {
      reject_unknown(j["adam"], {"beta1", "beta2", "eps"}, where + ".adam");
      cfg.adam_beta1 = j["adam"].value("beta1", cfg.adam_beta1);
      cfg.adam_beta2 = j["adam"].value("beta2", cfg.adam_beta2);
      cfg.adam_eps = j["adam"].value("eps", cfg.adam_eps);
    }
    cfg.mixup_alpha = j.value("mixup_alpha", cfg.mixup_alpha);
    cfg.gamma = j.value("gamma", cfg.gamma);
    cfg.p_feat = j.value("p_feat", cfg.p_feat);
    cfg.p_cls = j.value("p_cls", cfg.p_cls);
    cfg.seed = j.value("seed", cfg.seed);
    if (j.contains("toggles")) {
      reject_unknown(j["toggles"], {"mixup", "center_loss", "cie", "age_attention"},
                     where + ".toggles");
      cfg.toggles.mixup = j["toggles"].value("mixup", cfg.toggles.mixup);
      cfg.toggles.center_loss = j["toggles"].value("center_loss", cfg.toggles.center_loss);
      cfg.toggles.cie = j["toggles"].value("cie", cfg.toggles.cie);
      cfg.toggles.age_attention =
          j["toggles"].value("age_attention", cfg.toggles.age_attention);
    }
    cfg.window = j.value("window", cfg.window);
    cfg.overlap = j.value("overlap", cfg.overlap);
    cfg.conv_channels = j.value("conv_channels", cfg.conv_channels);
    cfg.hidden = j.value("hidden", cfg.hidden);
    if (j.contains("resample_hz") && !j["resample_hz"].is_null()) {
      cfg.resample_hz = j["resample_hz"].get<double>();
    }
    cfg.include_null_in_fm = j.value("include_null_in_fm", cfg.include_null_in_fm);
    cfg.drop_null_windows = j.value("drop_null_windows", cfg.drop_null_windows);
    cfg.cie_bias = j.value("cie_bias", cfg.cie_bias);
  } catch (const json::exception& e) {
    throw ConfigError(where + ": " + e.what());
  }
  cfg.validate();
  return cfg;
}

}  // namespace detail

TrainConfig load_train_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ParseError("config " + path + ": " + e.what());
  }
  return detail::train_config_from_json(j, "config " + path);
}

std::string train_config_to_json_string(const TrainConfig& cfg) {
  return detail::train_config_to_json(cfg).dump(2);
}

ModelConfig model_config_from(const TrainConfig& cfg, std::size_t sensor_channels,
                              std::size_t num_classes) {
  ModelConfig mc;
  mc.sensor_channels = sensor_channels;
  mc.window = cfg.window;
  mc.conv_channels = cfg.conv_channels;
  mc.hidden = cfg.hidden;
  mc.num_classes = num_classes;
  mc.cie = cfg.toggles.cie;
  mc.age_attention = cfg.toggles.age_attention;
  mc.center_loss = cfg.toggles.center_loss;
  mc.cie_bias = cfg.cie_bias;
  mc.p_feat = cfg.p_feat;
  mc.p_cls = cfg.p_cls;
  return mc;
}

double lr_at(std::size_t epoch, const TrainConfig& cfg) {
  const std::size_t steps = epoch / cfg.lr_decay_every;
  return cfg.lr * std::pow(cfg.lr_decay_factor, static_cast<double>(steps));
}

// --------------------------------------------------------------------------
// Adam
// --------------------------------------------------------------------------

Adam::Adam(const std::vector<ParamBlock>& blocks, double beta1, double beta2, double eps)
    : beta1_(beta1), beta2_(beta2), eps_(eps) {
  m_.reserve(blocks.size());
  v_.reserve(blocks.size());
  for (const auto& b : blocks) {
    m_.emplace_back(b.tensor.numel(), 0.0);
    v_.emplace_back(b.tensor.numel(), 0.0);
  }
}

void Adam::step(const std::vector<ParamBlock>& blocks, double lr) {
  if (blocks.size() != m_.size()) {
    throw ShapeError("adam: block count changed since construction");
  }
  ++step_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
  for (std::size_t bi = 0; bi < blocks.size(); ++bi) {
    const ParamBlock& blk = blocks[bi];
    const std::size_t n = blk.tensor.numel();
    if (m_[bi].size() != n) {
      throw ShapeError("adam: moment shape mismatch for block '" + blk.name + "'");
    }
    const double* g = blk.tensor.grad();
    for (std::size_t i = 0; i < n; ++i) {
      if (!std::isfinite(g[i])) {
        throw NumericError("adam: non-finite gradient in block '" + blk.name +
                           "' at step " + std::to_string(step_));
      }
    }
    double* w = blk.tensor.data();
    double* m = m_[bi].data();
    double* v = v_[bi].data();
    for (std::size_t i = 0; i < n; ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      w[i] -= lr * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

void Adam::restore(std::size_t step, std::vector<std::vector<double>> m,
                   std::vector<std::vector<double>> v) {
  if (m.size() != m_.size() || v.size() != v_.size()) {
    throw ShapeError("adam: restored moments do not match block count");
  }
  step_ = step;
  m_ = std::move(m);
  v_ = std::move(v);
}

// --------------------------------------------------------------------------
// epochs
// --------------------------------------------------------------------------

EpochStats train_epoch(Model& model, const std::vector<Segment>& segments,
                       const TrainConfig& cfg, std::size_t epoch, Adam& adam, Rng& rng) {
  if (segments.empty()) throw ValueError("train_epoch: no training segments");
  const double lr = lr_at(epoch, cfg);
  std::vector<Batch> batches = make_batches(segments, cfg.batch_size, rng);
  EpochStats stats;
  for (const Batch& raw : batches) {
    const Batch* batch = &raw;
    Batch mixed;
    if (cfg.toggles.mixup) {
      mixed = mixup_batch(raw, cfg.mixup_alpha, rng);
      batch = &mixed;
    }
    Tape tape;
    ForwardTrace trace = model.forward(&tape, batch->inputs, true, &rng);
    Tensor ce = cross_entropy(&tape, trace.logits, batch->labels);
    Tensor closs = cfg.toggles.center_loss
                       ? center_loss(&tape, trace.summary, batch->labels, model.centers())
                       : Tensor::scalar(0.0);
    auto [total, report] =
        total_loss(&tape, ce, closs, cfg.toggles.center_loss ? cfg.gamma : 0.0);
    model.zero_grads();
    tape.backward(total);
    adam.step(model.blocks(), lr);
    stats.total += report.total;
    stats.cross_entropy += report.cross_entropy;
    stats.center += report.center;
    stats.batches++;
  }
  if (stats.batches > 0) {
    const double inv = 1.0 / static_cast<double>(stats.batches);
    stats.total *= inv;
    stats.cross_entropy *= inv;
    stats.center *= inv;
  }
  return stats;
}

// --------------------------------------------------------------------------
// fit
// --------------------------------------------------------------------------

void write_history_csv(const std::string& path, const std::vector<HistoryRow>& rows) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "epoch,lr,total_loss,ce_loss,center_loss,val_Fm\n";
  for (const HistoryRow& r : rows) {
    out << r.epoch << "," << format_double(r.lr) << "," << format_double(r.total) << ","
        << format_double(r.cross_entropy) << "," << format_double(r.center) << ","
        << format_double(r.val_fm) << "\n";
  }
}

namespace {

double validation_fm(Model& model, const std::vector<SensorSequence>& val_sequences,
                     const LabelSpace& labels, const TrainConfig& cfg) {
  LogitsFn fn = [&model](const Tensor& w) {
    return model.forward(nullptr, w, false, nullptr).logits;
  };
  std::vector<std::pair<std::vector<int>, std::vector<int>>> pairs;
  pairs.reserve(val_sequences.size());
  for (const SensorSequence& seq : val_sequences) {
    pairs.emplace_back(seq.labels,
                       samplewise_predict(fn, seq, cfg.window, cfg.batch_size));
  }
  return evaluate_stream_pairs(pairs, labels, cfg.include_null_in_fm).fm;
}

}  // namespace

FitResult fit(Model& model, const std::vector<Segment>& train_segments,
              const std::vector<SensorSequence>& val_sequences, const LabelSpace& labels,
              const TrainConfig& cfg, const std::string& out_dir, Adam* adam, Rng* rng,
              std::size_t start_epoch) {
  if (train_segments.empty()) throw ValueError("fit: training split is empty");
  if (val_sequences.empty()) throw ValueError("fit: validation split is empty");
  fs::create_directories(out_dir);

  Adam local_adam = adam ? *adam : Adam(model.blocks(), cfg.adam_beta1, cfg.adam_beta2,
                                        cfg.adam_eps);
  Rng local_rng = rng ? *rng : Rng(seed_for(cfg.seed, "trainer"));

  FitResult result;
  result.last_checkpoint = (fs::path(out_dir) / "last.ckpt").string();
  result.history_csv = (fs::path(out_dir) / "history.csv").string();

  if (cfg.epochs == start_epoch || cfg.epochs == 0) {
    save_checkpoint(result.last_checkpoint, model, cfg, start_epoch, std::nullopt,
                    &local_adam, &local_rng);
    write_history_csv(result.history_csv, result.history);
    return result;
  }

  const std::string best_path = (fs::path(out_dir) / "best.ckpt").string();
  for (std::size_t epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    const EpochStats stats = train_epoch(model, train_segments, cfg, epoch, local_adam,
                                         local_rng);
    const double val_fm = validation_fm(model, val_sequences, labels, cfg);
    HistoryRow row;
    row.epoch = epoch;
    row.lr = lr_at(epoch, cfg);
    row.total = stats.total;
    row.cross_entropy = stats.cross_entropy;
    row.center = stats.center;
    row.val_fm = val_fm;
    result.history.push_back(row);

    if (!result.best_val_fm || val_fm > *result.best_val_fm) {
      result.best_val_fm = val_fm;
      result.best_epoch = epoch;
      result.best_checkpoint = best_path;
      save_checkpoint(best_path, model, cfg, epoch + 1, val_fm, &local_adam, &local_rng);
    }
    save_checkpoint(result.last_checkpoint, model, cfg, epoch + 1, val_fm, &local_adam,
                    &local_rng);
  }
  write_history_csv(result.history_csv, result.history);
  return result;
}

void require_same_arch(const TrainConfig& expected, const TrainConfig& found) {
  auto fail = [](const std::string& field) {
    throw ConfigError("checkpoint/config mismatch on " + field);
  };
  if (expected.toggles.mixup != found.toggles.mixup) fail("toggles.mixup");
  if (expected.toggles.center_loss != found.toggles.center_loss) fail("toggles.center_loss");
  if (expected.toggles.cie != found.toggles.cie) fail("toggles.cie");
  if (expected.toggles.age_attention != found.toggles.age_attention) {
    fail("toggles.age_attention");
  }
  if (expected.window != found.window) fail("window");
  if (expected.conv_channels != found.conv_channels) fail("conv_channels");
  if (expected.hidden != found.hidden) fail("hidden");
  if (expected.cie_bias != found.cie_bias) fail("cie_bias");
}

}  // namespace hf
