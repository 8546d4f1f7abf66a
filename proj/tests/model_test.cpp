#include "scala/model.hpp"

#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>

#include "scala/checkpoint.hpp"
#include "scala/gradcheck.hpp"
#include "scala/losses.hpp"
#include "test_util.hpp"

using namespace scala;
namespace fs = std::filesystem;

namespace {

ModelConfig small_config(int d_s = 3, int vocab = 4) {
  ModelConfig cfg;
  cfg.d_s = d_s;
  cfg.d_f = 8;
  cfg.n_sab = 2;
  cfg.n_heads = 2;
  cfg.ffn_dim = 12;
  cfg.vocab_size = vocab;
  cfg.finalize();
  return cfg;
}

TEST(InitModelTest, DeterministicUnderSeed) {
  ModelConfig cfg = small_config();
  ParamStore a = init_model(cfg, 5);
  ParamStore b = init_model(cfg, 5);
  for (auto& [name, t] : a.items())
    EXPECT_EQ(t.data(), b.get(name).data()) << name;
  ParamStore c = init_model(cfg, 6);
  EXPECT_NE(a.get("q_proj.weight").data(), c.get("q_proj.weight").data());
}

TEST(InitModelTest, ParameterCountMatchesClosedForm) {
  ModelConfig cfg = small_config();
  ParamStore params = init_model(cfg, 1);
  int d_f = cfg.d_f, ffn = cfg.ffn_dim, v = cfg.vocab_size;
  int conv = cfg.conv[0].out_channels * cfg.d_s * cfg.conv[0].kernel +
             cfg.conv[0].out_channels;
  int mask_vec = d_f;
  int q_proj = d_f * d_f + d_f;
  int per_sab = 2 * d_f                    // ln1
                + 4 * (d_f * d_f) + 4 * d_f  // attention
                + 2 * d_f                  // ln2
                + ffn * d_f + ffn + d_f * ffn + d_f;  // ffn
  int ln_f = 2 * d_f;
  int head = d_f * d_f + d_f + v * d_f + v;
  int expected = conv + mask_vec + q_proj + cfg.n_sab * per_sab + ln_f + head;
  EXPECT_EQ(params.total_coords(), expected);
}

TEST(InitModelTest, BiasesStartAtZero) {
  ParamStore params = init_model(small_config(), 9);
  for (auto& [name, t] : params.items()) {
    if (name.find(".bias") == std::string::npos &&
        name.find(".b") == std::string::npos)
      continue;
    if (name.find("ln") != std::string::npos &&
        name.find("gain") != std::string::npos)
      continue;
    if (name == "mask_vec") continue;
    for (double v : t.data()) EXPECT_EQ(v, 0.0) << name;
  }
}

TEST(InitModelTest, BadConfigRejected) {
  ModelConfig cfg = small_config();
  cfg.n_heads = 3;  // 8 % 3 != 0
  EXPECT_THROW(cfg.finalize(), Error);
}

TEST(ForwardTest, ShapesAndNormalization) {
  ModelConfig cfg = small_config();
  ParamStore params = init_model(cfg, 2);
  Rng rng(1);
  Tensor features = testutil::random_tensor({3, 11}, rng);
  EncoderOutputs out = forward(params, cfg, features, MaskPlan{});
  int s_len = cfg.encoder_len(11);
  EXPECT_EQ(s_len, 6);
  EXPECT_EQ(out.z.shape(), (std::vector<int>{8, 6}));
  EXPECT_EQ(out.z_masked.data(), out.z.data());  // empty plan
  EXPECT_EQ(out.c.shape(), (std::vector<int>{8, 6}));
  EXPECT_EQ(out.q.shape(), (std::vector<int>{8, 6}));
  EXPECT_EQ(out.log_probs.shape(), (std::vector<int>{6, 4}));
  for (int t = 0; t < 6; ++t) {
    double sum = 0;
    for (int v = 0; v < 4; ++v) sum += std::exp(out.log_probs.at(t, v));
    EXPECT_NEAR(sum, 1.0, 1e-9);
  }
}

TEST(ForwardTest, AttentionIsGlobal) {
  // perturbing the first input frame must move a distant context column
  ModelConfig cfg = small_config();
  ParamStore params = init_model(cfg, 3);
  Rng rng(2);
  Tensor features = testutil::random_tensor({3, 16}, rng);
  NoGradGuard guard;
  EncoderOutputs base = forward(params, cfg, features, MaskPlan{});
  Tensor poked = features.detach();
  poked.at(0, 0) += 0.5;
  EncoderOutputs moved = forward(params, cfg, poked, MaskPlan{});
  int s_len = base.c.dim(1);
  double delta = 0;
  for (int r = 0; r < cfg.d_f; ++r)
    delta += std::fabs(moved.c.at(r, s_len - 1) - base.c.at(r, s_len - 1));
  EXPECT_GT(delta, 1e-9);
  // while z, a strided conv output, must NOT move at the far end
  double z_delta = 0;
  for (int r = 0; r < cfg.d_f; ++r)
    z_delta += std::fabs(moved.z.at(r, s_len - 1) - base.z.at(r, s_len - 1));
  EXPECT_EQ(z_delta, 0.0);
}

TEST(ForwardTest, TargetsComeFromPreMaskFeatures) {
  ModelConfig cfg = small_config();
  ParamStore params = init_model(cfg, 4);
  Rng rng(3);
  Tensor features = testutil::random_tensor({3, 12}, rng);
  NoGradGuard guard;
  EncoderOutputs clean = forward(params, cfg, features, MaskPlan{});
  std::vector<bool> flags(static_cast<size_t>(clean.z.dim(1)), false);
  flags[1] = flags[2] = flags[4] = true;
  EncoderOutputs masked =
      forward(params, cfg, features, MaskPlan::from_flags(flags));
  EXPECT_EQ(clean.q.data(), masked.q.data());  // bitwise
  EXPECT_NE(masked.z_masked.data(), masked.z.data());
  EXPECT_NE(masked.c.data(), clean.c.data());
}

TEST(ForwardTest, SingleFrameUtterance) {
  ModelConfig cfg = small_config();
  ParamStore params = init_model(cfg, 5);
  Tensor features = Tensor::constant({3, 1}, 0.4);
  EncoderOutputs out = forward(params, cfg, features, MaskPlan{});
  EXPECT_EQ(out.z.shape(), (std::vector<int>{8, 1}));
  EXPECT_EQ(out.log_probs.shape(), (std::vector<int>{1, 4}));
}

TEST(ForwardTest, ZeroReplacementUsesZeroColumns) {
  ModelConfig cfg = small_config();
  ParamStore params = init_model(cfg, 6);
  Rng rng(4);
  Tensor features = testutil::random_tensor({3, 8}, rng);
  std::vector<bool> flags(static_cast<size_t>(cfg.encoder_len(8)), false);
  flags[0] = true;
  NoGradGuard guard;
  EncoderOutputs out = forward(params, cfg, features, MaskPlan::from_flags(flags),
                               MaskConfig::Replacement::kZero);
  for (int r = 0; r < cfg.d_f; ++r) EXPECT_EQ(out.z_masked.at(r, 0), 0.0);
}

TEST(ForwardTest, StopGradTargetsCutsEncoderGradient) {
  ModelConfig cfg = small_config();
  cfg.stop_grad_targets = true;
  ParamStore params = init_model(cfg, 7);
  Rng rng(5);
  Tensor features = testutil::random_tensor({3, 10}, rng);
  params.zero_grad();
  EncoderOutputs out = forward(params, cfg, features, MaskPlan{});
  backward(sum(out.q), params);
  double conv_grad = 0, proj_grad = 0;
  for (double g : params.get("conv0.kernel").grad()) conv_grad += std::fabs(g);
  for (double g : params.get("q_proj.weight").grad()) proj_grad += std::fabs(g);
  EXPECT_EQ(conv_grad, 0.0);
  EXPECT_GT(proj_grad, 0.0);

  cfg.stop_grad_targets = false;
  params.zero_grad();
  EncoderOutputs out2 = forward(params, cfg, features, MaskPlan{});
  backward(sum(out2.q), params);
  conv_grad = 0;
  for (double g : params.get("conv0.kernel").grad()) conv_grad += std::fabs(g);
  EXPECT_GT(conv_grad, 0.0);
}

TEST(ForwardTest, UtterancesAreIndependent) {
  ModelConfig cfg = small_config();
  ParamStore params = init_model(cfg, 8);
  Rng rng(6);
  Tensor f1 = testutil::random_tensor({3, 9}, rng);
  Tensor f2 = testutil::random_tensor({3, 13}, rng);
  NoGradGuard guard;
  EncoderOutputs a1 = forward(params, cfg, f1, MaskPlan{});
  EncoderOutputs a2 = forward(params, cfg, f2, MaskPlan{});
  // reversed order: outputs permute correspondingly, bit for bit
  EncoderOutputs b2 = forward(params, cfg, f2, MaskPlan{});
  EncoderOutputs b1 = forward(params, cfg, f1, MaskPlan{});
  EXPECT_EQ(a1.log_probs.data(), b1.log_probs.data());
  EXPECT_EQ(a2.log_probs.data(), b2.log_probs.data());
}

TEST(GreedyDecodeTest, CollapseRule) {
  // argmax path [blk, a, a, blk, b] -> [a, b]
  std::vector<double> lp = {
      0, -5, -5,   // blk
      -5, 0, -5,   // a
      -5, 0, -5,   // a
      0, -5, -5,   // blk
      -5, -5, 0,   // b
  };
  Tensor t = Tensor::from_values({5, 3}, lp);
  EXPECT_EQ(greedy_decode(t), (std::vector<int>{1, 2}));
}

TEST(GreedyDecodeTest, AllBlanksDecodeEmpty) {
  std::vector<double> lp(12, -5.0);
  for (int t = 0; t < 4; ++t) lp[static_cast<size_t>(t * 3)] = 0.0;
  EXPECT_TRUE(greedy_decode(Tensor::from_values({4, 3}, lp)).empty());
}

TEST(GreedyDecodeTest, NeverEmitsBlankOrRunRepeats) {
  Rng rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    int s_len = 1 + rng.uniform_int(12);
    Tensor logits = testutil::random_tensor({s_len, 4}, rng, -1, 1);
    Tensor lp = log_softmax(logits, 1);
    std::vector<int> decoded = greedy_decode(lp);
    // reference: direct application of argmax + collapse
    std::vector<int> path;
    for (int t = 0; t < s_len; ++t) {
      int best = 0;
      for (int v = 1; v < 4; ++v)
        if (lp.at(t, v) > lp.at(t, best)) best = v;
      path.push_back(best);
    }
    std::vector<int> expected;
    int prev = -1;
    for (int v : path) {
      if (v != prev && v != 0) expected.push_back(v);
      prev = v;
    }
    ASSERT_EQ(decoded, expected);
    for (int v : decoded) ASSERT_NE(v, 0);
  }
}

TEST(FullModelTest, GradientCheckBothLosses) {
  for (uint64_t seed = 0; seed < 3; ++seed) {
    ModelConfig cfg = small_config();
    ParamStore params = init_model(cfg, seed + 10);
    Rng rng(seed + 20);
    Tensor features = testutil::random_tensor({3, 14}, rng);
    int s_len = cfg.encoder_len(14);  // 7

    AlignmentTrack track;
    for (int i = 0; i < s_len; ++i) track.labels.push_back(i % 3);
    for (int i = 0; i < s_len; ++i) track.spans.push_back({i % 3, i, i + 1});

    MaskPlan plan = plan_fixed_mask_from_starts(s_len, {1, 4}, 2);
    ContrastiveConfig ccfg;
    ccfg.negatives = 3;
    Rng sample_rng(seed + 30);
    auto samples = sample_contrastive(plan, track, ccfg, sample_rng);
    ASSERT_FALSE(samples.empty());
    std::vector<int> y = {1, 2};

    auto loss = [&]() {
      EncoderOutputs out = forward(params, cfg, features, plan);
      Tensor ctc = ctc_loss(out.log_probs, y);
      Tensor scl = scl_loss(out.c, out.q, samples, 0.1);
      return scale(add(ctc, scl), 0.5);
    };
    auto report = finite_diff_check(params, loss);
    EXPECT_LE(report.max_rel_err, 1e-4) << "seed " << seed;
  }
}

TEST(CheckpointTest, SaveLoadRoundTripBitExact) {
  ModelConfig cfg = small_config();
  ParamStore params = init_model(cfg, 33);
  fs::path path = fs::temp_directory_path() / "scala_model_test.sclc";
  save_model(path.string(), cfg, params);
  LoadedModel loaded = load_model(path.string());
  EXPECT_EQ(loaded.config.d_f, cfg.d_f);
  EXPECT_EQ(loaded.config.vocab_size, cfg.vocab_size);
  for (auto& [name, t] : params.items()) {
    const auto& a = t.data();
    const auto& b = loaded.params.get(name).data();
    ASSERT_EQ(a.size(), b.size()) << name;
    EXPECT_EQ(std::memcmp(a.data(), b.data(), a.size() * sizeof(double)), 0)
        << name;
  }
  // identical forward outputs on a probe
  Rng rng(8);
  Tensor features = testutil::random_tensor({3, 10}, rng);
  NoGradGuard guard;
  EncoderOutputs x = forward(params, cfg, features, MaskPlan{});
  EncoderOutputs y = forward(loaded.params, loaded.config, features, MaskPlan{});
  EXPECT_EQ(x.log_probs.data(), y.log_probs.data());
  fs::remove(path);
}

TEST(CheckpointTest, RejectsGarbage) {
  fs::path path = fs::temp_directory_path() / "scala_bad_ckpt.sclc";
  std::ofstream(path) << "definitely not a checkpoint";
  EXPECT_THROW(Checkpoint::load(path.string()), Error);
  fs::remove(path);
}

}  // namespace
