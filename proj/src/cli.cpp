#include "hf/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"

#include "hf/eval.hpp"
#include "hf/pipeline.hpp"
#include "hf/trainer.hpp"

namespace hf::cli {

namespace fs = std::filesystem;

namespace {

struct ToggleOverride {
  std::string name;
  bool value = false;
};

ToggleOverride parse_toggle(const std::string& spec) {
  const std::size_t eq = spec.find('=');
  if (eq == std::string::npos) {
    throw ConfigError("--toggle expects name=on|off, got '" + spec + "'");
  }
  ToggleOverride t;
  t.name = spec.substr(0, eq);
  const std::string v = spec.substr(eq + 1);
  if (v == "on") {
    t.value = true;
  } else if (v == "off") {
    t.value = false;
  } else {
    throw ConfigError("--toggle value must be on or off, got '" + v + "'");
  }
  if (t.name != "mixup" && t.name != "center_loss" && t.name != "cie" &&
      t.name != "age_attention") {
    throw ConfigError("--toggle: unknown toggle '" + t.name + "'");
  }
  return t;
}

void apply_toggles(TrainConfig& cfg, const std::vector<std::string>& toggles) {
  for (const std::string& spec : toggles) {
    const ToggleOverride t = parse_toggle(spec);
    if (t.name == "mixup") cfg.toggles.mixup = t.value;
    if (t.name == "center_loss") cfg.toggles.center_loss = t.value;
    if (t.name == "cie") cfg.toggles.cie = t.value;
    if (t.name == "age_attention") cfg.toggles.age_attention = t.value;
  }
}

LogitsFn model_adapter(const Model& model) {
  return [&model](const Tensor& windows) {
    return model.forward(nullptr, windows, false, nullptr).logits;
  };
}

std::string sanitize(const std::string& name) {
  std::string out;
  for (char c : name) {
    out += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_') ? c : '_';
  }
  return out;
}

void print_report_summary(const EvalReport& report) {
  std::cout << "frames " << report.total_frames << "  F_m " << format_double(report.fm)
            << "  (incl. null " << format_double(report.fm_including_null);
  if (report.fm_excluding_null) {
    std::cout << ", excl. null " << format_double(*report.fm_excluding_null);
  }
  std::cout << ")\n";
  if (report.taxonomy) {
    const MisalignmentCounts& t = *report.taxonomy;
    std::cout << "misalignment: tp " << t.true_positive << "  deletion " << t.deletion
              << "  insertion " << t.insertion << "  overfill/underfill "
              << t.overfill_underfill() << "  substitution " << t.substitution << "\n";
  }
}

// ---------------------------------------------------------------------------
// commands
// ---------------------------------------------------------------------------

int cmd_train(const std::string& config_path, const std::string& manifest_path,
              const std::string& out_dir, std::optional<std::uint64_t> seed_override,
              const std::vector<std::string>& toggles, const std::string& resume_path) {
  TrainConfig cfg = load_train_config(config_path);
  if (seed_override) cfg.seed = *seed_override;
  apply_toggles(cfg, toggles);

  const DatasetManifest manifest = load_manifest(manifest_path);
  PreparedData data = prepare_dataset(manifest, cfg);
  for (const std::string& w : data.warnings) std::cerr << "warning: " << w << "\n";

  std::optional<LoadedCheckpoint> resume;
  if (!resume_path.empty()) {
    resume = load_checkpoint(resume_path);
    require_same_arch(cfg, resume->config);
    if (resume->sensor_channels != data.channel_count ||
        resume->num_classes != data.labels.size()) {
      throw ConfigError("resume checkpoint was trained on different data dimensions");
    }
    if (!resume->adam || !resume->rng) {
      throw ConfigError("resume checkpoint lacks optimizer or rng state");
    }
  }

  Model local_model =
      resume ? std::move(resume->model)
             : Model(model_config_from(cfg, data.channel_count, data.labels.size()),
                     cfg.seed);
  FitResult res =
      fit(local_model, data.train_segments, data.val, data.labels, cfg, out_dir,
          resume ? &*resume->adam : nullptr, resume ? &*resume->rng : nullptr,
          resume ? resume->epoch : 0);

  for (const HistoryRow& row : res.history) {
    std::cout << "epoch " << row.epoch << "  lr " << format_double(row.lr) << "  total "
              << format_double(row.total) << "  ce " << format_double(row.cross_entropy)
              << "  center " << format_double(row.center) << "  val_Fm "
              << format_double(row.val_fm) << "\n";
  }

  if (!res.history.empty()) {
    LogitsFn fn = model_adapter(local_model);
    std::vector<std::pair<std::vector<int>, std::vector<int>>> pairs;
    for (const SensorSequence& seq : data.val) {
      pairs.emplace_back(seq.labels, samplewise_predict(fn, seq, cfg.window, cfg.batch_size));
    }
    const EvalReport report =
        evaluate_stream_pairs(pairs, data.labels, cfg.include_null_in_fm);
    report_export(report, (fs::path(out_dir) / "val_report").string());
    std::cout << "validation ";
    print_report_summary(report);
  }
  std::cout << "checkpoint " << res.last_checkpoint << "\n";
  return 0;
}

int cmd_eval_or_predict(const std::string& ckpt_path, const std::string& manifest_path,
                        const std::string& split_name, const std::string& out_dir,
                        bool with_report) {
  LoadedCheckpoint ckpt = load_checkpoint(ckpt_path);
  const Split split = split_from_string(split_name);
  const DatasetManifest manifest = load_manifest(manifest_path);
  PreparedData data = prepare_dataset(manifest, ckpt.config);
  if (data.channel_count != ckpt.sensor_channels ||
      data.labels.size() != ckpt.num_classes) {
    throw ConfigError("checkpoint was trained on " + std::to_string(ckpt.sensor_channels) +
                      " channels / " + std::to_string(ckpt.num_classes) +
                      " classes; manifest provides " + std::to_string(data.channel_count) +
                      " / " + std::to_string(data.labels.size()));
  }
  const std::vector<SensorSequence>& seqs = sequences_for_split(data, split);
  if (seqs.empty()) {
    throw ConfigError("manifest has no files in split '" + split_name + "'");
  }

  fs::create_directories(out_dir);
  LogitsFn fn = model_adapter(ckpt.model);
  std::vector<std::pair<std::vector<int>, std::vector<int>>> pairs;
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    const SensorSequence& seq = seqs[i];
    std::vector<int> pred =
        samplewise_predict(fn, seq, ckpt.config.window, ckpt.config.batch_size);
    const std::string stem = sanitize(fs::path(seq.id).stem().string());
    write_prediction_stream(
        (fs::path(out_dir) / ("predictions_" + std::to_string(i) + "_" + stem + ".csv"))
            .string(),
        seq.labels, pred, data.labels);
    pairs.emplace_back(seq.labels, std::move(pred));
  }
  if (with_report) {
    const EvalReport report =
        evaluate_stream_pairs(pairs, data.labels, ckpt.config.include_null_in_fm);
    report_export(report, out_dir);
    print_report_summary(report);
  }
  return 0;
}

std::vector<int> read_token_stream(const std::string& path, const LabelSpace& labels) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open stream " + path);
  std::vector<int> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    try {
      out.push_back(static_cast<int>(labels.index_of(line)));
    } catch (const ParseError&) {
      throw ParseError(path + ":" + std::to_string(line_no) + ": unknown label token '" +
                       line + "'");
    }
  }
  return out;
}

int cmd_score(const std::string& truth_path, const std::string& pred_path,
              const std::string& labels_csv, const std::string& null_label,
              const std::string& out_dir, bool include_null_in_fm) {
  LabelSpace labels;
  std::string cur;
  for (char c : labels_csv + ",") {
    if (c == ',') {
      if (!cur.empty()) labels.names.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!null_label.empty()) labels.null_index = labels.index_of(null_label);
  labels.validate();

  const std::vector<int> truth = read_token_stream(truth_path, labels);
  const std::vector<int> pred = read_token_stream(pred_path, labels);
  if (truth.size() != pred.size()) {
    throw ValueError("score: stream lengths differ (" + std::to_string(truth.size()) +
                     " vs " + std::to_string(pred.size()) + ")");
  }
  const EvalReport report = evaluate_streams(truth, pred, labels, include_null_in_fm);
  print_report_summary(report);
  if (!out_dir.empty()) report_export(report, out_dir);
  return 0;
}

int cmd_export_attention(const std::string& ckpt_path, const std::string& manifest_path,
                         const std::string& split_name, const std::string& out_dir,
                         const std::string& selector) {
  LoadedCheckpoint ckpt = load_checkpoint(ckpt_path);
  if (!ckpt.config.toggles.cie && !ckpt.config.toggles.age_attention) {
    throw ConfigError(
        "this checkpoint was trained with cie and age_attention off; it produces no "
        "attention artifacts to export");
  }
  const Split split = split_from_string(split_name);
  const DatasetManifest manifest = load_manifest(manifest_path);
  PreparedData data = prepare_dataset(manifest, ckpt.config);
  const std::vector<SensorSequence>& seqs = sequences_for_split(data, split);
  if (seqs.empty()) {
    throw ConfigError("manifest has no files in split '" + split_name + "'");
  }

  std::vector<Segment> windows;
  std::vector<std::string> warnings;
  for (const SensorSequence& seq : seqs) {
    std::vector<Segment> segs =
        segment(seq, ckpt.config.window, ckpt.config.overlap, data.labels.size(), &warnings);
    windows.insert(windows.end(), std::make_move_iterator(segs.begin()),
                   std::make_move_iterator(segs.end()));
  }

  // Selector: half-open index range "a:b" into the window list, or "all".
  std::size_t sel_begin = 0, sel_end = 0;
  if (selector == "all") {
    sel_end = windows.size();
  } else {
    const std::size_t colon = selector.find(':');
    if (colon == std::string::npos) {
      throw ConfigError("--windows expects a:b or all, got '" + selector + "'");
    }
    try {
      sel_begin = std::stoul(selector.substr(0, colon));
      sel_end = std::stoul(selector.substr(colon + 1));
    } catch (const std::exception&) {
      throw ConfigError("--windows expects numeric bounds, got '" + selector + "'");
    }
  }
  sel_end = std::min(sel_end, windows.size());
  sel_begin = std::min(sel_begin, sel_end);
  if (sel_begin == sel_end) {
    std::cerr << "warning: window selector matched no windows; nothing exported\n";
    return 0;
  }

  const std::size_t D = data.channel_count;
  const std::size_t W = ckpt.config.window;
  const std::size_t T = ckpt.model.config().temporal_length();
  const std::size_t B = sel_end - sel_begin;
  const std::size_t chunk = std::max<std::size_t>(ckpt.config.batch_size, 1);

  ForwardTrace combined;
  if (ckpt.config.toggles.cie) combined.attention = Tensor::zeros({B, T, D, D});
  if (ckpt.config.toggles.age_attention) combined.beta = Tensor::zeros({B, T});
  std::vector<WindowMeta> metas(B);

  for (std::size_t base = 0; base < B; base += chunk) {
    const std::size_t take = std::min(chunk, B - base);
    Tensor inputs = Tensor::zeros({take, D, W});
    for (std::size_t i = 0; i < take; ++i) {
      const Segment& seg = windows[sel_begin + base + i];
      std::copy(seg.window.begin(), seg.window.end(), inputs.data() + i * D * W);
      metas[base + i] = {seg.origin.sequence_id, seg.origin.start};
    }
    const ForwardTrace trace = ckpt.model.forward(nullptr, inputs, false, nullptr);
    if (combined.attention.defined()) {
      std::copy(trace.attention.data(), trace.attention.data() + take * T * D * D,
                combined.attention.data() + base * T * D * D);
    }
    if (combined.beta.defined()) {
      std::copy(trace.beta.data(), trace.beta.data() + take * T,
                combined.beta.data() + base * T);
    }
  }

  const AttentionExport files = export_attention(combined, metas, out_dir);
  std::cout << "exported " << files.matrix_files.size() << " attention matrices";
  if (!files.beta_file.empty()) std::cout << " and " << B << " beta rows";
  std::cout << " to " << out_dir << "\n";
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  argv.push_back("harforge");
  for (const std::string& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data());
}

int run(int argc, const char* const* argv) {
  threads::configure_from_env();

  CLI::App app{"Wearable activity recognition: train, evaluate and inspect models"};
  app.require_subcommand(1);

  std::string config_path, manifest_path, out_dir, checkpoint_path, resume_path;
  std::string split_name = "test";
  std::string truth_path, pred_path, labels_csv, null_label;
  std::string selector = "0:8";
  std::vector<std::string> toggles;
  std::optional<std::uint64_t> seed_override;
  bool exclude_null = false;

  CLI::App* train = app.add_subcommand("train", "Train a model from a config and manifest");
  train->add_option("--config", config_path, "Run config JSON")->required();
  train->add_option("--manifest", manifest_path, "Dataset manifest JSON")->required();
  train->add_option("--out", out_dir, "Output directory")->required();
  train->add_option("--seed", seed_override, "Override the config seed");
  train->add_option("--toggle", toggles, "Override a toggle, e.g. cie=off")
      ->take_all();
  train->add_option("--resume", resume_path, "Resume from a checkpoint");

  CLI::App* eval = app.add_subcommand("eval", "Sample-wise evaluation of a checkpoint");
  eval->add_option("--checkpoint", checkpoint_path, "Checkpoint file")->required();
  eval->add_option("--manifest", manifest_path, "Dataset manifest JSON")->required();
  eval->add_option("--split", split_name, "train, val or test (default test)");
  eval->add_option("--out", out_dir, "Output directory")->required();

  CLI::App* predict = app.add_subcommand("predict", "Write sample-wise prediction streams");
  predict->add_option("--checkpoint", checkpoint_path, "Checkpoint file")->required();
  predict->add_option("--manifest", manifest_path, "Dataset manifest JSON")->required();
  predict->add_option("--split", split_name, "train, val or test (default test)");
  predict->add_option("--out", out_dir, "Output directory")->required();

  CLI::App* score = app.add_subcommand("score", "Score prediction streams without a model");
  score->add_option("--truth", truth_path, "Truth stream (one label token per line)")
      ->required();
  score->add_option("--pred", pred_path, "Prediction stream (one label token per line)")
      ->required();
  score->add_option("--labels", labels_csv, "Comma-separated class names")->required();
  score->add_option("--null-label", null_label, "Null class name (enables misalignment)");
  score->add_option("--out", out_dir, "Optional output directory");
  score->add_flag("--exclude-null-from-fm", exclude_null,
                  "Report F_m without the null class");

  CLI::App* exp = app.add_subcommand("export-attention",
                                     "Export attention matrices and temporal weights");
  exp->add_option("--checkpoint", checkpoint_path, "Checkpoint file")->required();
  exp->add_option("--manifest", manifest_path, "Dataset manifest JSON")->required();
  exp->add_option("--split", split_name, "train, val or test (default test)");
  exp->add_option("--out", out_dir, "Output directory")->required();
  exp->add_option("--windows", selector, "Window range a:b or 'all' (default 0:8)");

  try {
    app.parse(argc, const_cast<char**>(argv));
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (train->parsed()) {
      return cmd_train(config_path, manifest_path, out_dir, seed_override, toggles,
                       resume_path);
    }
    if (eval->parsed()) {
      return cmd_eval_or_predict(checkpoint_path, manifest_path, split_name, out_dir, true);
    }
    if (predict->parsed()) {
      return cmd_eval_or_predict(checkpoint_path, manifest_path, split_name, out_dir,
                                 false);
    }
    if (score->parsed()) {
      return cmd_score(truth_path, pred_path, labels_csv, null_label, out_dir,
                       !exclude_null);
    }
    if (exp->parsed()) {
      return cmd_export_attention(checkpoint_path, manifest_path, split_name, out_dir,
                                  selector);
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const ValueError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const ShapeError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "runtime failure: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

}  // namespace hf::cli
