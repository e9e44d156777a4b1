#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hf/ops.hpp"
#include "hf/rng.hpp"
#include "hf/tensor.hpp"

namespace hf {

// Architecture knobs. Toggles are fixed for the life of the parameters;
// flipping one changes the parameter blocks a model owns.
struct ModelConfig {
  std::size_t sensor_channels = 0;  // D
  std::size_t window = 24;          // W
  std::size_t conv_channels = 64;   // C, feature maps per conv layer
  std::size_t hidden = 128;         // GRU width per layer
  std::size_t num_classes = 0;
  bool cie = true;
  bool age_attention = true;
  bool center_loss = true;  // registers the class-center block
  bool cie_bias = false;
  double p_feat = 0.5;  // dropout on refined feature maps
  double p_cls = 0.5;   // dropout on the classifier input

  static constexpr std::size_t kConvLayers = 4;
  static constexpr std::size_t kKernel = 5;

  // T = W - 4*(K-1); requires W >= 17 so at least one time-step survives.
  std::size_t temporal_length() const;
  void validate() const;
};

struct ParamBlock {
  std::string name;
  Tensor tensor;
};

// Everything one forward pass produces. attention [B,T,D,D] and beta [B,T]
// are defined only when the corresponding toggle is on.
struct ForwardTrace {
  Tensor logits;   // [B,C]
  Tensor summary;  // [B,hidden], the representation z fed to the classifier
  Tensor attention;
  Tensor beta;
};

// The full network: per-channel 1-D conv backbone, cross-channel
// self-attention encoder, 2-layer GRU with temporal attention, linear
// classifier. Parameter blocks are seeded independently by name so the same
// master seed yields identical shared blocks across toggle variants.
class Model {
 public:
  Model(ModelConfig config, std::uint64_t seed);

  // [B,D,W] -> [B,C,D,T]; channels share weights and never mix.
  Tensor backbone_forward(Tape* tape, const Tensor& windows) const;

  struct CieResult {
    Tensor refined;    // [B,C,D,T]
    Tensor attention;  // [B,T,D,D], rows stochastic
  };
  CieResult cie_forward(Tape* tape, const Tensor& feature_map) const;

  struct AgeResult {
    Tensor summary;  // [B,hidden]
    Tensor beta;     // [B,T] when attention is on, undefined otherwise
  };
  // seq is [B,T,M] with M = C*D; vectorization order is feature-major
  // (index c*D + d).
  AgeResult age_forward(Tape* tape, const Tensor& seq) const;

  Tensor classify(Tape* tape, const Tensor& z, bool training, Rng* rng) const;

  ForwardTrace forward(Tape* tape, const Tensor& windows, bool training,
                       Rng* rng) const;

  const ModelConfig& config() const { return config_; }
  std::vector<ParamBlock>& blocks() { return blocks_; }
  const std::vector<ParamBlock>& blocks() const { return blocks_; }
  std::size_t param_count() const;
  void zero_grads() const;
  Tensor centers() const;  // defined when center_loss is on

 private:
  struct Conv {
    Tensor weight;  // [C,Cin,K]
    Tensor bias;    // [C]
  };
  struct GruLayer {
    Tensor w_xr, w_hr, b_r;
    Tensor w_xz, w_hz, b_z;
    Tensor w_xn, w_hn, b_n;
  };

  Tensor register_block(const std::string& name, Shape shape, double init_bound,
                        std::uint64_t master_seed);
  std::vector<Tensor> gru_layer(Tape* tape, const std::vector<Tensor>& inputs,
                                const GruLayer& p) const;

  ModelConfig config_;
  std::vector<ParamBlock> blocks_;
  Conv conv_[ModelConfig::kConvLayers];
  Tensor cie_f_, cie_g_, cie_h_, cie_v_;
  Tensor cie_fb_, cie_gb_, cie_hb_, cie_vb_;
  GruLayer gru1_, gru2_;
  Tensor scorer_w_;
  Tensor cls_w_, cls_b_;
  Tensor centers_;
};

// Attention artifacts for one exported window.
struct WindowMeta {
  std::string sequence_id;
  std::size_t start = 0;
};

// Writes one D x D matrix per window (per-time-step scores averaged over T)
// plus a beta row per window, with origin metadata. Artifacts whose toggles
// were off raise ConfigError.
struct AttentionExport {
  std::vector<std::string> matrix_files;
  std::string beta_file;
  std::string meta_file;
};
AttentionExport export_attention(const ForwardTrace& trace,
                                 const std::vector<WindowMeta>& windows,
                                 const std::string& out_dir);

// Reads back a matrix written by export_attention.
std::vector<std::vector<double>> load_attention_matrix(const std::string& path);

}  // namespace hf
