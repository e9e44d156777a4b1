#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "hf/loss.hpp"
#include "hf/model.hpp"
#include "support/oracles.hpp"

using namespace hf;
namespace op = hf::ops;

namespace {

ModelConfig small_config(std::size_t D = 4, std::size_t classes = 3) {
  ModelConfig cfg;
  cfg.sensor_channels = D;
  cfg.window = 24;
  cfg.conv_channels = 6;
  cfg.hidden = 8;
  cfg.num_classes = classes;
  cfg.p_feat = 0.0;
  cfg.p_cls = 0.0;
  return cfg;
}

Tensor random_windows(std::size_t B, std::size_t D, std::size_t W, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t = Tensor::zeros({B, D, W});
  for (double& v : t.values()) v = rng.uniform(-1.5, 1.5);
  return t;
}

const Tensor& find_block(const Model& model, const std::string& name) {
  for (const ParamBlock& b : model.blocks()) {
    if (b.name == name) return b.tensor;
  }
  throw std::runtime_error("no block named " + name);
}

bool has_block(const Model& model, const std::string& name) {
  for (const ParamBlock& b : model.blocks()) {
    if (b.name == name) return true;
  }
  return false;
}

}  // namespace

TEST_CASE("backbone produces B x C x D x T with T = W - 16") {
  ModelConfig cfg;
  cfg.sensor_channels = 79;
  cfg.window = 24;
  cfg.num_classes = 3;
  cfg.p_feat = cfg.p_cls = 0.0;
  Model model(cfg, 1);
  Tensor fm = model.backbone_forward(nullptr, random_windows(1, 79, 24, 2));
  CHECK(fm.shape() == Shape{1, 64, 79, 8});
}

TEST_CASE("shape theorem holds for every window in 17..40") {
  for (std::size_t W = 17; W <= 40; ++W) {
    ModelConfig cfg = small_config(2, 2);
    cfg.window = W;
    cfg.conv_channels = 4;
    cfg.hidden = 4;
    Model model(cfg, 3);
    Tensor fm = model.backbone_forward(nullptr, random_windows(1, 2, W, W));
    CHECK(fm.shape() == Shape{1, 4, 2, W - 16});
  }
  ModelConfig cfg = small_config();
  cfg.window = 16;
  CHECK_THROWS_AS(Model(cfg, 1), ConfigError);
}

TEST_CASE("backbone maps zero input to zero output") {
  Model model(small_config(), 5);
  Tensor zeros = Tensor::zeros({2, 4, 24});
  Tensor fm = model.backbone_forward(nullptr, zeros);
  for (std::size_t i = 0; i < fm.numel(); ++i) CHECK(fm.data()[i] == 0.0);
}

TEST_CASE("backbone treats sensor channels independently") {
  Model model(small_config(), 7);
  Tensor base = random_windows(1, 4, 24, 11);
  Tensor doubled = Tensor::from_vector(base.shape(), base.values());
  for (std::size_t t = 0; t < 24; ++t) doubled.at(0, 2, t) *= 2.0;
  Tensor fm_a = model.backbone_forward(nullptr, base);
  Tensor fm_b = model.backbone_forward(nullptr, doubled);
  const std::size_t C = 6, D = 4, T = 8;
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t d = 0; d < D; ++d) {
      for (std::size_t t = 0; t < T; ++t) {
        if (d == 2) continue;
        CHECK(fm_a.at(0, c, d, t) == fm_b.at(0, c, d, t));
      }
    }
  }
  // The perturbed channel does change somewhere.
  bool changed = false;
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t t = 0; t < T; ++t) {
      if (fm_a.at(0, c, 2, t) != fm_b.at(0, c, 2, t)) changed = true;
    }
  }
  CHECK(changed);
}

TEST_CASE("backbone is equivariant to sensor channel permutations") {
  Model model(small_config(), 9);
  Tensor base = random_windows(2, 4, 24, 13);
  const std::vector<std::size_t> perm = {2, 0, 3, 1};
  Tensor permuted = Tensor::zeros({2, 4, 24});
  for (std::size_t b = 0; b < 2; ++b) {
    for (std::size_t d = 0; d < 4; ++d) {
      for (std::size_t t = 0; t < 24; ++t) {
        permuted.at(b, d, t) = base.at(b, perm[d], t);
      }
    }
  }
  Tensor fm_base = model.backbone_forward(nullptr, base);
  Tensor fm_perm = model.backbone_forward(nullptr, permuted);
  for (std::size_t b = 0; b < 2; ++b) {
    for (std::size_t c = 0; c < 6; ++c) {
      for (std::size_t d = 0; d < 4; ++d) {
        for (std::size_t t = 0; t < 8; ++t) {
          CHECK(fm_perm.at(b, c, d, t) == fm_base.at(b, c, perm[d], t));
        }
      }
    }
  }
}

TEST_CASE("cie gives uniform attention when all channels look alike") {
  Model model(small_config(), 21);
  const std::size_t B = 1, C = 6, D = 4, T = 8;
  Tensor fm = Tensor::zeros({B, C, D, T});
  Rng rng(3);
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t t = 0; t < T; ++t) {
      const double v = rng.uniform(-1, 1);
      for (std::size_t d = 0; d < D; ++d) fm.at(0, c, d, t) = v;
    }
  }
  Model::CieResult res = model.cie_forward(nullptr, fm);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t d = 0; d < D; ++d) {
      for (std::size_t d2 = 0; d2 < D; ++d2) {
        CHECK(res.attention.at(0, t, d, d2) == doctest::Approx(0.25).epsilon(1e-9));
      }
    }
  }
}

TEST_CASE("cie with zero v is exactly the identity on features") {
  Model model(small_config(), 23);  // v initializes to zero
  Tensor fm = Tensor::zeros({2, 6, 4, 8});
  Rng rng(5);
  for (double& v : fm.values()) v = rng.uniform(-2, 2);
  Model::CieResult res = model.cie_forward(nullptr, fm);
  for (std::size_t i = 0; i < fm.numel(); ++i) {
    CHECK(res.refined.data()[i] == fm.data()[i]);
  }
}

TEST_CASE("cie matches the naive double-loop reference") {
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    ModelConfig cfg = small_config(5, 3);
    cfg.cie_bias = (seed % 2 == 1);
    Model model(cfg, seed);
    // Give v real (nonzero) values so the attention path is exercised.
    {
      Rng rng(seed + 101);
      for (double& v : find_block(model, "cie.v").values()) v = rng.uniform(-0.7, 0.7);
      if (cfg.cie_bias) {
        for (double& v : find_block(model, "cie.v_bias").values()) v = rng.uniform(-0.2, 0.2);
      }
    }
    const std::size_t B = 2, C = 6, D = 5, T = 3;
    Tensor fm = Tensor::zeros({B, C, D, T});
    Rng rng(seed + 7);
    for (double& v : fm.values()) v = rng.uniform(-1.5, 1.5);

    Model::CieResult res = model.cie_forward(nullptr, fm);

    const std::vector<double>* bf = nullptr;
    const std::vector<double>* bg = nullptr;
    const std::vector<double>* bh = nullptr;
    const std::vector<double>* bv = nullptr;
    std::vector<double> bfv, bgv, bhv, bvv;
    if (cfg.cie_bias) {
      bfv = find_block(model, "cie.f_bias").values();
      bgv = find_block(model, "cie.g_bias").values();
      bhv = find_block(model, "cie.h_bias").values();
      bvv = find_block(model, "cie.v_bias").values();
      bf = &bfv;
      bg = &bgv;
      bh = &bhv;
      bv = &bvv;
    }
    hf::testing::CieReference ref = hf::testing::cie_reference(
        fm.values(), B, C, D, T, find_block(model, "cie.f").values(),
        find_block(model, "cie.g").values(), find_block(model, "cie.h").values(),
        find_block(model, "cie.v").values(), bf, bg, bh, bv);

    for (std::size_t i = 0; i < ref.refined.size(); ++i) {
      CHECK(std::abs(res.refined.data()[i] - ref.refined[i]) < 1e-9);
    }
    for (std::size_t i = 0; i < ref.attention.size(); ++i) {
      CHECK(std::abs(res.attention.data()[i] - ref.attention[i]) < 1e-9);
    }
    // Every attention row is stochastic.
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t d = 0; d < D; ++d) {
          double sum = 0.0;
          for (std::size_t d2 = 0; d2 < D; ++d2) {
            const double a = res.attention.at(b, t, d, d2);
            CHECK(a >= 0.0);
            CHECK(a <= 1.0);
            sum += a;
          }
          CHECK(std::abs(sum - 1.0) < 1e-6);
        }
      }
    }
  }
}

TEST_CASE("age with a single time-step is the first hidden state") {
  ModelConfig cfg = small_config();
  Model model(cfg, 31);
  const std::size_t B = 3, M = cfg.conv_channels * cfg.sensor_channels;
  Tensor seq = Tensor::zeros({B, 1, M});
  Rng rng(8);
  for (double& v : seq.values()) v = rng.uniform(-1, 1);
  Model::AgeResult res = model.age_forward(nullptr, seq);
  REQUIRE(res.beta.defined());
  for (std::size_t b = 0; b < B; ++b) CHECK(res.beta.at(b, 0) == doctest::Approx(1.0));

  // z must equal the layer-2 state computed by the scalar reference.
  hf::testing::GruWeights w1{
      find_block(model, "gru1.w_xr").values(), find_block(model, "gru1.w_hr").values(),
      find_block(model, "gru1.b_r").values(),  find_block(model, "gru1.w_xz").values(),
      find_block(model, "gru1.w_hz").values(), find_block(model, "gru1.b_z").values(),
      find_block(model, "gru1.w_xn").values(), find_block(model, "gru1.w_hn").values(),
      find_block(model, "gru1.b_n").values()};
  hf::testing::GruWeights w2{
      find_block(model, "gru2.w_xr").values(), find_block(model, "gru2.w_hr").values(),
      find_block(model, "gru2.b_r").values(),  find_block(model, "gru2.w_xz").values(),
      find_block(model, "gru2.w_hz").values(), find_block(model, "gru2.b_z").values(),
      find_block(model, "gru2.w_xn").values(), find_block(model, "gru2.w_hn").values(),
      find_block(model, "gru2.b_n").values()};
  auto h1 = hf::testing::gru_reference({seq.values()}, B, M, cfg.hidden, w1);
  auto h2 = hf::testing::gru_reference(h1, B, cfg.hidden, cfg.hidden, w2);
  for (std::size_t i = 0; i < h2[0].size(); ++i) {
    CHECK(std::abs(res.summary.data()[i] - h2[0][i]) < 1e-9);
  }
}

TEST_CASE("age of zero input with zero biases is zero") {
  Model model(small_config(), 33);
  const std::size_t M = 6 * 4;
  Tensor seq = Tensor::zeros({2, 5, M});
  Model::AgeResult res = model.age_forward(nullptr, seq);
  for (std::size_t i = 0; i < res.summary.numel(); ++i) {
    CHECK(res.summary.data()[i] == 0.0);
  }
}

TEST_CASE("age matches the scalar recurrence reference across time") {
  ModelConfig cfg = small_config();
  Model model(cfg, 35);
  const std::size_t B = 2, T = 6, M = cfg.conv_channels * cfg.sensor_channels;
  Tensor seq = Tensor::zeros({B, T, M});
  Rng rng(12);
  for (double& v : seq.values()) v = rng.uniform(-1, 1);

  hf::testing::GruWeights w1{
      find_block(model, "gru1.w_xr").values(), find_block(model, "gru1.w_hr").values(),
      find_block(model, "gru1.b_r").values(),  find_block(model, "gru1.w_xz").values(),
      find_block(model, "gru1.w_hz").values(), find_block(model, "gru1.b_z").values(),
      find_block(model, "gru1.w_xn").values(), find_block(model, "gru1.w_hn").values(),
      find_block(model, "gru1.b_n").values()};
  hf::testing::GruWeights w2{
      find_block(model, "gru2.w_xr").values(), find_block(model, "gru2.w_hr").values(),
      find_block(model, "gru2.b_r").values(),  find_block(model, "gru2.w_xz").values(),
      find_block(model, "gru2.w_hz").values(), find_block(model, "gru2.b_z").values(),
      find_block(model, "gru2.w_xn").values(), find_block(model, "gru2.w_hn").values(),
      find_block(model, "gru2.b_n").values()};

  std::vector<std::vector<double>> xs;
  for (std::size_t t = 0; t < T; ++t) {
    std::vector<double> x(B * M);
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t m = 0; m < M; ++m) x[b * M + m] = seq.at(b, t, m);
    }
    xs.push_back(std::move(x));
  }
  auto h1 = hf::testing::gru_reference(xs, B, M, cfg.hidden, w1);
  auto h2 = hf::testing::gru_reference(h1, B, cfg.hidden, cfg.hidden, w2);

  // Scorer + softmax over time + weighted sum, by hand.
  const std::vector<double>& sw = find_block(model, "scorer.weight").values();
  std::vector<double> expect(B * cfg.hidden, 0.0);
  std::vector<double> beta_ref(B * T);
  for (std::size_t b = 0; b < B; ++b) {
    std::vector<double> scores(T);
    for (std::size_t t = 0; t < T; ++t) {
      double s = 0.0;
      for (std::size_t j = 0; j < cfg.hidden; ++j) s += h2[t][b * cfg.hidden + j] * sw[j];
      scores[t] = s;
    }
    double mx = scores[0];
    for (double s : scores) mx = std::max(mx, s);
    double sum = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
      scores[t] = std::exp(scores[t] - mx);
      sum += scores[t];
    }
    for (std::size_t t = 0; t < T; ++t) {
      beta_ref[b * T + t] = scores[t] / sum;
      for (std::size_t j = 0; j < cfg.hidden; ++j) {
        expect[b * cfg.hidden + j] += beta_ref[b * T + t] * h2[t][b * cfg.hidden + j];
      }
    }
  }

  Model::AgeResult res = model.age_forward(nullptr, seq);
  for (std::size_t i = 0; i < expect.size(); ++i) {
    CHECK(std::abs(res.summary.data()[i] - expect[i]) < 1e-9);
  }
  for (std::size_t i = 0; i < beta_ref.size(); ++i) {
    CHECK(std::abs(res.beta.data()[i] - beta_ref[i]) < 1e-9);
  }
  // Beta rows are stochastic.
  for (std::size_t b = 0; b < B; ++b) {
    double sum = 0.0;
    for (std::size_t t = 0; t < T; ++t) sum += res.beta.at(b, t);
    CHECK(std::abs(sum - 1.0) < 1e-6);
  }
}

TEST_CASE("classifier is the documented affine map") {
  ModelConfig cfg = small_config(4, 4);
  Model model(cfg, 41);
  const std::size_t B = 3, H = cfg.hidden;
  Tensor z = Tensor::zeros({B, H});
  Rng rng(14);
  for (double& v : z.values()) v = rng.uniform(-1, 1);

  // Zero weights, bias b -> logits == b for any z.
  Tensor w = find_block(model, "classifier.weight");
  Tensor bias = find_block(model, "classifier.bias");
  std::vector<double> saved_w = w.values();
  std::fill(w.values().begin(), w.values().end(), 0.0);
  bias.values() = {0.5, -1.0, 2.0, 0.25};
  Tensor logits = model.classify(nullptr, z, false, nullptr);
  for (std::size_t b = 0; b < B; ++b) {
    CHECK(logits.at(b, 0) == 0.5);
    CHECK(logits.at(b, 1) == -1.0);
    CHECK(logits.at(b, 2) == 2.0);
    CHECK(logits.at(b, 3) == 0.25);
  }

  // Restore weights: p_cls = 0 means training equals inference.
  w.values() = saved_w;
  Rng drop_rng(1);
  Tensor train_logits = model.classify(nullptr, z, true, &drop_rng);
  Tensor infer_logits = model.classify(nullptr, z, false, nullptr);
  for (std::size_t i = 0; i < train_logits.numel(); ++i) {
    CHECK(train_logits.data()[i] == infer_logits.data()[i]);
  }

  // Hand affine check.
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t c = 0; c < 4; ++c) {
      double s = 0.0;
      for (std::size_t k = 0; k < H; ++k) s += z.at(b, k) * w.at(k, c);
      s += bias.values()[c];
      CHECK(std::abs(infer_logits.at(b, c) - s) < 1e-12);
    }
  }
}

TEST_CASE("toggles-off forward equals the manual backbone+GRU composition") {
  ModelConfig cfg = small_config();
  cfg.cie = false;
  cfg.age_attention = false;
  cfg.center_loss = false;
  Model model(cfg, 51);
  Tensor x = random_windows(2, 4, 24, 15);

  ForwardTrace trace = model.forward(nullptr, x, false, nullptr);
  CHECK(!trace.attention.defined());
  CHECK(!trace.beta.defined());

  Tensor fm = model.backbone_forward(nullptr, x);
  Tensor seq = op::reshape(nullptr, op::permute(nullptr, fm, {0, 3, 1, 2}), {2, 8, 6 * 4});
  Model::AgeResult age = model.age_forward(nullptr, seq);
  Tensor logits = model.classify(nullptr, age.summary, false, nullptr);
  for (std::size_t i = 0; i < logits.numel(); ++i) {
    CHECK(trace.logits.data()[i] == logits.data()[i]);
  }
}

TEST_CASE("cie on with zero-initialized v reproduces the cie-off logits bit-exactly") {
  ModelConfig cfg_on = small_config();
  ModelConfig cfg_off = small_config();
  cfg_off.cie = false;
  Model on(cfg_on, 77);
  Model off(cfg_off, 77);
  Tensor x = random_windows(3, 4, 24, 16);
  ForwardTrace ta = on.forward(nullptr, x, false, nullptr);
  ForwardTrace tb = off.forward(nullptr, x, false, nullptr);
  REQUIRE(ta.logits.numel() == tb.logits.numel());
  CHECK(std::memcmp(ta.logits.data(), tb.logits.data(),
                    ta.logits.numel() * sizeof(double)) == 0);
}

TEST_CASE("full forward has the right shapes and stays finite") {
  ModelConfig cfg = small_config(6, 3);
  Model model(cfg, 91);
  Tensor x = random_windows(2, 6, 24, 17);
  ForwardTrace trace = model.forward(nullptr, x, false, nullptr);
  CHECK(trace.logits.shape() == Shape{2, 3});
  CHECK(trace.summary.shape() == Shape{2, 8});
  REQUIRE(trace.attention.defined());
  CHECK(trace.attention.shape() == Shape{2, 8, 6, 6});
  REQUIRE(trace.beta.defined());
  CHECK(trace.beta.shape() == Shape{2, 8});
  for (std::size_t i = 0; i < trace.logits.numel(); ++i) {
    CHECK(std::isfinite(trace.logits.data()[i]));
  }
}

TEST_CASE("parameter accounting across toggles") {
  auto count = [](bool cie, bool age, bool bias, std::size_t C, std::size_t H) {
    ModelConfig cfg = small_config();
    cfg.conv_channels = C;
    cfg.hidden = H;
    cfg.cie = cie;
    cfg.age_attention = age;
    cfg.cie_bias = bias;
    return Model(cfg, 1).param_count();
  };
  for (std::size_t C : {6ul, 16ul, 64ul}) {
    const std::size_t H = 8;
    CHECK(count(true, true, false, C, H) - count(false, true, false, C, H) == 4 * C * C);
    CHECK(count(true, true, true, C, H) - count(false, true, true, C, H) ==
          4 * C * C + 4 * C);
    CHECK(count(true, true, false, C, H) - count(true, false, false, C, H) == H);
  }

  // Analytic total for one known configuration.
  const std::size_t D = 4, W_C = 6, H = 8, K = 5, CLS = 3, M = W_C * D;
  std::size_t expect = 0;
  expect += W_C * 1 * K + W_C;            // conv1
  expect += 3 * (W_C * W_C * K + W_C);    // conv2..4
  expect += 4 * W_C * W_C;                // cie f,g,h,v
  expect += 3 * (M * H + H * H + H);      // gru1 gates
  expect += 3 * (H * H + H * H + H);      // gru2 gates
  expect += H;                            // scorer (no bias: inert under softmax)
  expect += H * CLS + CLS;                // classifier
  expect += CLS * H;                      // centers
  Model model(small_config(), 1);
  CHECK(model.param_count() == expect);

  // The centers block exists exactly when center loss is on.
  ModelConfig no_centers = small_config();
  no_centers.center_loss = false;
  CHECK(has_block(model, "centers"));
  CHECK(!has_block(Model(no_centers, 1), "centers"));
}

TEST_CASE("every enabled block gets gradient signal") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    ModelConfig cfg = small_config();
    cfg.p_feat = 0.1;
    cfg.p_cls = 0.1;
    Model model(cfg, seed);
    // Give v nonzero values so attention contributes.
    {
      Rng rng(seed + 31);
      for (double& v : find_block(model, "cie.v").values()) v = rng.uniform(-0.5, 0.5);
    }
    Tensor x = random_windows(4, 4, 24, seed + 19);
    Tensor targets = Tensor::zeros({4, 3});
    Rng trng(seed + 5);
    for (std::size_t i = 0; i < 4; ++i) targets.at(i, trng.below(3)) = 1.0;

    Tape tape;
    Rng rng(seed + 77);
    ForwardTrace trace = model.forward(&tape, x, true, &rng);
    Tensor ce = cross_entropy(&tape, trace.logits, targets);
    Tensor cl = center_loss(&tape, trace.summary, targets, model.centers());
    auto [total, report] = total_loss(&tape, ce, cl, 0.1);
    model.zero_grads();
    tape.backward(total);

    for (const ParamBlock& b : model.blocks()) {
      bool nonzero = false;
      for (std::size_t i = 0; i < b.tensor.numel(); ++i) {
        if (b.tensor.grad()[i] != 0.0) {
          nonzero = true;
          break;
        }
      }
      INFO("block ", b.name, " seed ", seed);
      CHECK(nonzero);
    }
  }
}

TEST_CASE("attention export round-trips and validates") {
  namespace fs = std::filesystem;
  const std::string dir =
      (fs::temp_directory_path() / ("hf_attn_" + std::to_string(::getpid()))).string();

  ModelConfig cfg = small_config();
  Model model(cfg, 61);
  {
    Rng rng(62);
    for (double& v : find_block(model, "cie.v").values()) v = rng.uniform(-0.5, 0.5);
  }
  Tensor x = random_windows(2, 4, 24, 63);
  ForwardTrace trace = model.forward(nullptr, x, false, nullptr);
  std::vector<WindowMeta> metas = {{"seqA", 0}, {"seqA", 12}};
  AttentionExport files = export_attention(trace, metas, dir);
  REQUIRE(files.matrix_files.size() == 2);
  REQUIRE(!files.beta_file.empty());

  // Matrices reload within 1e-9 of the trace average and stay stochastic.
  for (std::size_t b = 0; b < 2; ++b) {
    auto rows = load_attention_matrix(files.matrix_files[b]);
    REQUIRE(rows.size() == 4);
    for (std::size_t d = 0; d < 4; ++d) {
      double sum = 0.0;
      for (std::size_t d2 = 0; d2 < 4; ++d2) {
        double avg = 0.0;
        for (std::size_t t = 0; t < 8; ++t) avg += trace.attention.at(b, t, d, d2);
        avg /= 8.0;
        CHECK(std::abs(rows[d][d2] - avg) < 1e-9);
        sum += rows[d][d2];
      }
      CHECK(std::abs(sum - 1.0) < 1e-6);
    }
  }

  // Beta rows in the file sum to 1.
  {
    std::ifstream in(files.beta_file);
    std::string line;
    std::getline(in, line);  // header
    std::size_t rows = 0;
    while (std::getline(in, line)) {
      std::size_t pos = 0;
      std::vector<std::string> fields;
      while (pos <= line.size()) {
        std::size_t next = line.find(',', pos);
        if (next == std::string::npos) next = line.size();
        fields.push_back(line.substr(pos, next - pos));
        pos = next + 1;
        if (next == line.size()) break;
      }
      REQUIRE(fields.size() == 3 + 8);
      double sum = 0.0;
      for (std::size_t i = 3; i < fields.size(); ++i) sum += std::stod(fields[i]);
      CHECK(std::abs(sum - 1.0) < 1e-6);
      rows++;
    }
    CHECK(rows == 2);
  }
  fs::remove_all(dir);

  // A trace without artifacts cannot be exported.
  ModelConfig off = small_config();
  off.cie = false;
  off.age_attention = false;
  Model plain(off, 61);
  ForwardTrace plain_trace = plain.forward(nullptr, x, false, nullptr);
  CHECK_THROWS_AS(export_attention(plain_trace, metas, dir), ConfigError);
}

TEST_CASE("uniform attention trace exports rows of 1/D") {
  namespace fs = std::filesystem;
  const std::string dir =
      (fs::temp_directory_path() / ("hf_attn_u_" + std::to_string(::getpid()))).string();
  ForwardTrace trace;
  trace.attention = Tensor::full({1, 2, 5, 5}, 0.2);
  trace.beta = Tensor::full({1, 2}, 0.5);
  AttentionExport files = export_attention(trace, {{"s", 0}}, dir);
  auto rows = load_attention_matrix(files.matrix_files[0]);
  for (const auto& row : rows) {
    for (double v : row) CHECK(v == doctest::Approx(0.2).epsilon(1e-12));
  }
  fs::remove_all(dir);
}
