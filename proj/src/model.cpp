#include "hf/model.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>

namespace hf {

namespace fs = std::filesystem;
namespace op = hf::ops;

// --------------------------------------------------------------------------
// config
// --------------------------------------------------------------------------

std::size_t ModelConfig::temporal_length() const {
  const std::size_t shrink = kConvLayers * (kKernel - 1);
  if (window < shrink + 1) {
    throw ConfigError("model: window " + std::to_string(window) +
                      " leaves no time-steps after " + std::to_string(kConvLayers) +
                      " conv layers (need W >= " + std::to_string(shrink + 1) + ")");
  }
  return window - shrink;
}

void ModelConfig::validate() const {
  if (sensor_channels == 0) throw ConfigError("model: sensor_channels must be set");
  if (num_classes == 0) throw ConfigError("model: num_classes must be set");
  if (conv_channels == 0 || hidden == 0) {
    throw ConfigError("model: conv_channels and hidden must be positive");
  }
  temporal_length();  // validates the window
  if (!(p_feat >= 0.0) || p_feat >= 1.0 || !(p_cls >= 0.0) || p_cls >= 1.0) {
    throw ConfigError("model: dropout probabilities must satisfy 0 <= p < 1");
  }
}

// --------------------------------------------------------------------------
// construction
// --------------------------------------------------------------------------

Tensor Model::register_block(const std::string& name, Shape shape, double init_bound,
                             std::uint64_t master_seed) {
  Tensor t = Tensor::zeros(std::move(shape), true);
  if (init_bound > 0.0) {
    Rng rng(seed_for(master_seed, name));
    for (double& v : t.values()) v = rng.uniform(-init_bound, init_bound);
  }
  blocks_.push_back({name, t});
  return t;
}

Model::Model(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  const std::size_t C = config_.conv_channels;
  const std::size_t K = ModelConfig::kKernel;
  const std::size_t H = config_.hidden;
  const std::size_t M = C * config_.sensor_channels;

  for (std::size_t l = 0; l < ModelConfig::kConvLayers; ++l) {
    const std::size_t cin = l == 0 ? 1 : C;
    // He-uniform: keeps activation variance stable through the ReLU stack.
    const double bound = std::sqrt(6.0 / static_cast<double>(cin * K));
    const std::string prefix = "conv" + std::to_string(l + 1);
    conv_[l].weight = register_block(prefix + ".weight", {C, cin, K}, bound, seed);
    conv_[l].bias = register_block(prefix + ".bias", {C}, 0.0, seed);
  }

  if (config_.cie) {
    const double bound = std::sqrt(3.0 / static_cast<double>(C));
    cie_f_ = register_block("cie.f", {C, C}, bound, seed);
    cie_g_ = register_block("cie.g", {C, C}, bound, seed);
    cie_h_ = register_block("cie.h", {C, C}, bound, seed);
    // v starts at zero so the residual block is the identity at init.
    cie_v_ = register_block("cie.v", {C, C}, 0.0, seed);
    if (config_.cie_bias) {
      cie_fb_ = register_block("cie.f_bias", {C}, 0.0, seed);
      cie_gb_ = register_block("cie.g_bias", {C}, 0.0, seed);
      cie_hb_ = register_block("cie.h_bias", {C}, 0.0, seed);
      cie_vb_ = register_block("cie.v_bias", {C}, 0.0, seed);
    }
  }

  auto make_gru = [&](GruLayer& g, const std::string& prefix, std::size_t in) {
    const double bx = std::sqrt(3.0 / static_cast<double>(in));
    const double bh = std::sqrt(3.0 / static_cast<double>(H));
    g.w_xr = register_block(prefix + ".w_xr", {in, H}, bx, seed);
    g.w_hr = register_block(prefix + ".w_hr", {H, H}, bh, seed);
    g.b_r = register_block(prefix + ".b_r", {H}, 0.0, seed);
    g.w_xz = register_block(prefix + ".w_xz", {in, H}, bx, seed);
    g.w_hz = register_block(prefix + ".w_hz", {H, H}, bh, seed);
    g.b_z = register_block(prefix + ".b_z", {H}, 0.0, seed);
    g.w_xn = register_block(prefix + ".w_xn", {in, H}, bx, seed);
    g.w_hn = register_block(prefix + ".w_hn", {H, H}, bh, seed);
    g.b_n = register_block(prefix + ".b_n", {H}, 0.0, seed);
  };
  make_gru(gru1_, "gru1", M);
  make_gru(gru2_, "gru2", H);

  if (config_.age_attention) {
    const double bound = std::sqrt(3.0 / static_cast<double>(H));
    // No scorer bias: softmax over time-steps is shift-invariant, so a
    // scalar bias added to every score is inert and untrainable.
    scorer_w_ = register_block("scorer.weight", {H, 1}, bound, seed);
  }

  const double cls_bound = std::sqrt(3.0 / static_cast<double>(H));
  cls_w_ = register_block("classifier.weight", {H, config_.num_classes}, cls_bound, seed);
  cls_b_ = register_block("classifier.bias", {config_.num_classes}, 0.0, seed);

  if (config_.center_loss) {
    centers_ = register_block("centers", {config_.num_classes, H}, 0.0, seed);
  }
}

std::size_t Model::param_count() const {
  std::size_t n = 0;
  for (const auto& b : blocks_) n += b.tensor.numel();
  return n;
}

void Model::zero_grads() const {
  for (const auto& b : blocks_) b.tensor.zero_grad();
}

Tensor Model::centers() const {
  if (!config_.center_loss) {
    throw ConfigError("model: centers requested but the center-loss toggle is off");
  }
  return centers_;
}

// --------------------------------------------------------------------------
// forward pieces
// --------------------------------------------------------------------------

Tensor Model::backbone_forward(Tape* tape, const Tensor& windows) const {
  if (windows.rank() != 3 || windows.dim(1) != config_.sensor_channels ||
      windows.dim(2) != config_.window) {
    throw ShapeError("backbone: expected [B," + std::to_string(config_.sensor_channels) +
                     "," + std::to_string(config_.window) + "], got " +
                     shape_str(windows.shape()));
  }
  const std::size_t B = windows.dim(0);
  const std::size_t D = config_.sensor_channels;
  const std::size_t C = config_.conv_channels;
  const std::size_t T = config_.temporal_length();

  // Each sensor channel runs through the shared filters independently.
  Tensor x = op::reshape(tape, windows, {B * D, 1, config_.window});
  for (std::size_t l = 0; l < ModelConfig::kConvLayers; ++l) {
    x = op::conv1d_valid(tape, x, conv_[l].weight, conv_[l].bias);
    x = op::relu(tape, x);
  }
  x = op::reshape(tape, x, {B, D, C, T});
  return op::permute(tape, x, {0, 2, 1, 3});  // [B,C,D,T]
}

Model::CieResult Model::cie_forward(Tape* tape, const Tensor& feature_map) const {
  if (!config_.cie) {
    throw ConfigError("cie_forward: the CIE toggle is off for this model");
  }
  if (feature_map.rank() != 4) {
    throw ShapeError("cie_forward: expected [B,C,D,T], got " +
                     shape_str(feature_map.shape()));
  }
  const std::size_t B = feature_map.dim(0);
  const std::size_t C = feature_map.dim(1);
  const std::size_t D = feature_map.dim(2);
  const std::size_t T = feature_map.dim(3);

  // Attention runs independently per window and per time-step: fold B and T
  // into one batch axis of D x C channel-feature matrices.
  Tensor x = op::permute(tape, feature_map, {0, 3, 2, 1});      // [B,T,D,C]
  Tensor flat = op::reshape(tape, x, {B * T * D, C});

  auto embed = [&](const Tensor& w, const Tensor& bias) {
    Tensor e = op::matmul(tape, flat, w);
    if (config_.cie_bias) e = op::add_bias(tape, e, bias);
    return op::reshape(tape, e, {B * T, D, C});
  };
  Tensor f = embed(cie_f_, cie_fb_);
  Tensor g = embed(cie_g_, cie_gb_);
  Tensor h = embed(cie_h_, cie_hb_);

  Tensor scores = op::bmm(tape, f, op::permute(tape, g, {0, 2, 1}));  // [B*T,D,D]
  Tensor attn = op::softmax(tape, scores, 2);
  Tensor mixed = op::bmm(tape, attn, h);  // [B*T,D,C]

  Tensor o = op::matmul(tape, op::reshape(tape, mixed, {B * T * D, C}), cie_v_);
  if (config_.cie_bias) o = op::add_bias(tape, o, cie_vb_);
  o = op::reshape(tape, o, {B * T * D, C});

  Tensor refined = op::add(tape, o, flat);  // residual link
  refined = op::reshape(tape, refined, {B, T, D, C});
  refined = op::permute(tape, refined, {0, 3, 2, 1});  // back to [B,C,D,T]

  CieResult res;
  res.refined = refined;
  res.attention = op::reshape(tape, attn, {B, T, D, D});
  return res;
}

std::vector<Tensor> Model::gru_layer(Tape* tape, const std::vector<Tensor>& inputs,
                                     const GruLayer& p) const {
  const std::size_t B = inputs.front().dim(0);
  const std::size_t H = config_.hidden;
  Tensor h = Tensor::zeros({B, H});
  std::vector<Tensor> states;
  states.reserve(inputs.size());
  for (const Tensor& x : inputs) {
    Tensor r = op::sigmoid(
        tape, op::add_bias(tape,
                           op::add(tape, op::matmul(tape, x, p.w_xr),
                                   op::matmul(tape, h, p.w_hr)),
                           p.b_r));
    Tensor z = op::sigmoid(
        tape, op::add_bias(tape,
                           op::add(tape, op::matmul(tape, x, p.w_xz),
                                   op::matmul(tape, h, p.w_hz)),
                           p.b_z));
    Tensor n = op::tanh(
        tape, op::add_bias(tape,
                           op::add(tape, op::matmul(tape, x, p.w_xn),
                                   op::mul(tape, r, op::matmul(tape, h, p.w_hn))),
                           p.b_n));
    // h' = (1-z)*n + z*h
    Tensor one_minus_z = op::affine(tape, z, -1.0, 1.0);
    h = op::add(tape, op::mul(tape, one_minus_z, n), op::mul(tape, z, h));
    states.push_back(h);
  }
  return states;
}

Model::AgeResult Model::age_forward(Tape* tape, const Tensor& seq) const {
  if (seq.rank() != 3) {
    throw ShapeError("age_forward: expected [B,T,M], got " + shape_str(seq.shape()));
  }
  const std::size_t B = seq.dim(0);
  const std::size_t T = seq.dim(1);
  const std::size_t M = seq.dim(2);

  std::vector<Tensor> xs;
  xs.reserve(T);
  for (std::size_t t = 0; t < T; ++t) {
    xs.push_back(op::reshape(tape, op::slice(tape, seq, 1, t, 1), {B, M}));
  }
  std::vector<Tensor> h1 = gru_layer(tape, xs, gru1_);
  std::vector<Tensor> h2 = gru_layer(tape, h1, gru2_);

  AgeResult res;
  if (!config_.age_attention) {
    res.summary = h2.back();
    return res;
  }
  std::vector<Tensor> scores;
  scores.reserve(T);
  for (const Tensor& h : h2) {
    scores.push_back(op::matmul(tape, h, scorer_w_));
  }
  Tensor beta = op::softmax(tape, op::concat(tape, scores, 1), 1);  // [B,T]
  Tensor z;
  for (std::size_t t = 0; t < T; ++t) {
    Tensor w = op::reshape(tape, op::slice(tape, beta, 1, t, 1), {B});
    Tensor term = op::scale_rows(tape, h2[t], w);
    z = t == 0 ? term : op::add(tape, z, term);
  }
  res.summary = z;
  res.beta = beta;
  return res;
}

Tensor Model::classify(Tape* tape, const Tensor& z, bool training, Rng* rng) const {
  Tensor in = z;
  if (training && config_.p_cls > 0.0) {
    if (!rng) throw ValueError("classify: training dropout needs an rng");
    in = op::dropout(tape, in, config_.p_cls, training, *rng);
  }
  return op::add_bias(tape, op::matmul(tape, in, cls_w_), cls_b_);
}

ForwardTrace Model::forward(Tape* tape, const Tensor& windows, bool training,
                            Rng* rng) const {
  const std::size_t B = windows.dim(0);
  const std::size_t D = config_.sensor_channels;
  const std::size_t C = config_.conv_channels;
  const std::size_t T = config_.temporal_length();

  ForwardTrace trace;
  Tensor fm = backbone_forward(tape, windows);
  Tensor refined = fm;
  if (config_.cie) {
    CieResult cie = cie_forward(tape, fm);
    refined = cie.refined;
    trace.attention = cie.attention;
  }
  if (training && config_.p_feat > 0.0) {
    if (!rng) throw ValueError("forward: training dropout needs an rng");
    refined = op::dropout(tape, refined, config_.p_feat, training, *rng);
  }
  // Vectorize feature-major: r_t[c*D + d] = refined[c][d] at time t.
  Tensor seq = op::permute(tape, refined, {0, 3, 1, 2});  // [B,T,C,D]
  seq = op::reshape(tape, seq, {B, T, C * D});

  AgeResult age = age_forward(tape, seq);
  trace.summary = age.summary;
  trace.beta = age.beta;
  trace.logits = classify(tape, age.summary, training, rng);
  return trace;
}

// --------------------------------------------------------------------------
// attention export
// --------------------------------------------------------------------------

namespace {

void write_matrix_csv(const std::string& path, const double* data, std::size_t rows,
                      std::size_t cols) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      if (j) out << ",";
      out << format_double(data[i * cols + j]);
    }
    out << "\n";
  }
}

}  // namespace

AttentionExport export_attention(const ForwardTrace& trace,
                                 const std::vector<WindowMeta>& windows,
                                 const std::string& out_dir) {
  if (!trace.attention.defined() && !trace.beta.defined()) {
    throw ConfigError(
        "export_attention: no attention artifacts in this trace; the model was "
        "built with cie and age_attention off");
  }
  fs::create_directories(out_dir);
  AttentionExport result;

  const std::size_t B = windows.size();
  // Origin metadata for every exported window.
  {
    const std::string meta = (fs::path(out_dir) / "windows.csv").string();
    std::ofstream out(meta);
    if (!out) throw IoError("cannot write " + meta);
    out << "window,sequence,start\n";
    for (std::size_t i = 0; i < B; ++i) {
      out << i << "," << windows[i].sequence_id << "," << windows[i].start << "\n";
    }
    result.meta_file = meta;
  }

  if (trace.attention.defined()) {
    if (trace.attention.dim(0) != B) {
      throw ShapeError("export_attention: trace holds " +
                       std::to_string(trace.attention.dim(0)) + " windows, metadata " +
                       std::to_string(B));
    }
    const std::size_t T = trace.attention.dim(1);
    const std::size_t D = trace.attention.dim(2);
    std::vector<double> avg(D * D);
    for (std::size_t b = 0; b < B; ++b) {
      // One D x D matrix per window: the per-time-step scores averaged over T
      // (the average of row-stochastic matrices stays row-stochastic).
      std::fill(avg.begin(), avg.end(), 0.0);
      for (std::size_t t = 0; t < T; ++t) {
        const double* src = trace.attention.data() + ((b * T + t) * D * D);
        for (std::size_t i = 0; i < D * D; ++i) avg[i] += src[i];
      }
      for (double& v : avg) v /= static_cast<double>(T);
      const std::string path =
          (fs::path(out_dir) / ("cie_window_" + std::to_string(b) + ".csv")).string();
      write_matrix_csv(path, avg.data(), D, D);
      result.matrix_files.push_back(path);
    }
  }

  if (trace.beta.defined()) {
    if (trace.beta.dim(0) != B) {
      throw ShapeError("export_attention: beta rows do not match window metadata");
    }
    const std::size_t T = trace.beta.dim(1);
    const std::string path = (fs::path(out_dir) / "beta.csv").string();
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << "window,sequence,start";
    for (std::size_t t = 0; t < T; ++t) out << ",beta_" << t;
    out << "\n";
    for (std::size_t b = 0; b < B; ++b) {
      out << b << "," << windows[b].sequence_id << "," << windows[b].start;
      for (std::size_t t = 0; t < T; ++t) {
        out << "," << format_double(trace.beta.at(b, t));
      }
      out << "\n";
    }
    result.beta_file = path;
  }
  return result;
}

std::vector<std::vector<double>> load_attention_matrix(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<double> row;
    std::size_t pos = 0;
    while (pos <= line.size()) {
      std::size_t next = line.find(',', pos);
      if (next == std::string::npos) next = line.size();
      double v = 0.0;
      auto res = std::from_chars(line.data() + pos, line.data() + next, v);
      if (res.ec != std::errc()) {
        throw ParseError(path + ":" + std::to_string(line_no) + ": bad number");
      }
      row.push_back(v);
      pos = next + 1;
      if (next == line.size()) break;
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace hf
