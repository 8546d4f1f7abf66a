#pragma once

#include <cmath>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "scala/config.hpp"
#include "scala/corpus.hpp"
#include "scala/masking.hpp"
#include "scala/rng.hpp"
#include "scala/tensor.hpp"

namespace scala {

struct ConvLayerSpec {
  int kernel;
  int stride;
  int out_channels;
};

struct ModelConfig {
  int d_s = 0;   // input feature dim, taken from the data
  int d_f = 64;  // latent dim
  std::vector<ConvLayerSpec> conv;  // empty = one 3:2:d_f layer
  int n_sab = 2;
  int n_heads = 4;
  int ffn_dim = 128;
  int vocab_size = 0;  // |L|+1 including blank
  bool stop_grad_targets = false;

  static std::vector<ConvLayerSpec> parse_conv(const std::string& text) {
    std::vector<ConvLayerSpec> layers;
    if (text.empty()) return layers;
    std::istringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
      int k, s, c;
      char c1, c2;
      std::istringstream fs(item);
      fs >> k >> c1 >> s >> c2 >> c;
      check_data(!fs.fail() && c1 == ':' && c2 == ':',
                 "model.conv: expected kernel:stride:channels, got " + item);
      layers.push_back({k, s, c});
    }
    return layers;
  }

  static std::string conv_to_string(const std::vector<ConvLayerSpec>& layers) {
    std::string out;
    for (const auto& l : layers) {
      if (!out.empty()) out += ",";
      out += std::to_string(l.kernel) + ":" + std::to_string(l.stride) + ":" +
             std::to_string(l.out_channels);
    }
    return out;
  }

  static ModelConfig from_config(const Config& cfg, int d_s, int vocab_size) {
    ModelConfig m;
    m.d_s = d_s;
    m.vocab_size = vocab_size;
    m.d_f = cfg.get_int("model.d_f");
    m.conv = parse_conv(cfg.get_string("model.conv"));
    m.n_sab = cfg.get_int("model.n_sab");
    m.n_heads = cfg.get_int("model.n_heads");
    m.ffn_dim = cfg.get_int("model.ffn_dim");
    m.stop_grad_targets = cfg.get_bool("model.stop_grad_targets");
    m.finalize();
    return m;
  }

  // Fills the default conv stack and validates.
  void finalize() {
    if (conv.empty()) conv.push_back({3, 2, d_f});
    check_data(d_s >= 1 && d_f >= 1 && vocab_size >= 2, "model: bad dimensions");
    check_data(n_sab >= 1 && n_heads >= 1 && ffn_dim >= 1,
               "model: bad block sizes");
    check_data(d_f % n_heads == 0, "model: d_f must be divisible by n_heads");
    for (const auto& l : conv)
      check_data(l.kernel >= 1 && l.stride >= 1 && l.out_channels >= 1,
                 "model: bad conv layer");
    check_data(conv.back().out_channels == d_f,
               "model: conv stack must end in d_f channels");
  }

  std::vector<int> strides() const {
    std::vector<int> out;
    for (const auto& l : conv) out.push_back(l.stride);
    return out;
  }

  int encoder_len(int t_len) const {
    int s = t_len;
    for (const auto& l : conv) s = conv_out_len(s, l.stride);
    return s;
  }

  std::map<std::string, std::string> to_kv() const {
    return {
        {"model.d_s", std::to_string(d_s)},
        {"model.d_f", std::to_string(d_f)},
        {"model.conv", conv_to_string(conv)},
        {"model.n_sab", std::to_string(n_sab)},
        {"model.n_heads", std::to_string(n_heads)},
        {"model.ffn_dim", std::to_string(ffn_dim)},
        {"model.vocab_size", std::to_string(vocab_size)},
        {"model.stop_grad_targets", stop_grad_targets ? "true" : "false"},
    };
  }

  static ModelConfig from_kv(const std::map<std::string, std::string>& kv) {
    auto need = [&](const std::string& key) {
      auto it = kv.find(key);
      check_data(it != kv.end(), "checkpoint config missing " + key);
      return it->second;
    };
    ModelConfig m;
    m.d_s = std::stoi(need("model.d_s"));
    m.d_f = std::stoi(need("model.d_f"));
    m.conv = parse_conv(need("model.conv"));
    m.n_sab = std::stoi(need("model.n_sab"));
    m.n_heads = std::stoi(need("model.n_heads"));
    m.ffn_dim = std::stoi(need("model.ffn_dim"));
    m.vocab_size = std::stoi(need("model.vocab_size"));
    m.stop_grad_targets = need("model.stop_grad_targets") == "true";
    m.finalize();
    return m;
  }
};

struct EncoderOutputs {
  Tensor z;          // encoder features, pre-mask  [d_f x S]
  Tensor z_masked;   //                            [d_f x S]
  Tensor c;          // context features           [d_f x S]
  Tensor q;          // contrastive targets        [d_f x S]
  Tensor log_probs;  //                            [S x V]
};

// ---------------------------------------------------------------------------
// Initialization
// ---------------------------------------------------------------------------

namespace detail {

inline Tensor init_weight(std::vector<int> shape, int fan_in, Rng& rng) {
  double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  int n = 1;
  for (int d : shape) n *= d;
  std::vector<double> v(static_cast<size_t>(n));
  for (double& x : v) x = bound * (2.0 * rng.uniform01() - 1.0);
  return Tensor::from_values(std::move(shape), std::move(v));
}

}  // namespace detail

// Scaled uniform fan-in init for weights, zero biases, unit layer-norm gains.
// The shared mask vector is drawn from N(0, 0.01). Parameters are created in
// a fixed order, so a seed pins every value.
inline ParamStore init_model(const ModelConfig& cfg, uint64_t seed) {
  ParamStore params;
  Rng rng = Rng::substream(seed, 0x5caa);

  int in_ch = cfg.d_s;
  for (size_t i = 0; i < cfg.conv.size(); ++i) {
    const auto& l = cfg.conv[i];
    std::string prefix = "conv" + std::to_string(i);
    params.add(prefix + ".kernel",
               detail::init_weight({l.out_channels, in_ch, l.kernel},
                                   in_ch * l.kernel, rng));
    params.add(prefix + ".bias", Tensor::zeros({l.out_channels}));
    in_ch = l.out_channels;
  }

  {
    std::vector<double> mv(static_cast<size_t>(cfg.d_f));
    for (double& x : mv) x = rng.normal(0.0, 0.1);
    params.add("mask_vec", Tensor::from_values({cfg.d_f}, std::move(mv)));
  }

  params.add("q_proj.weight", detail::init_weight({cfg.d_f, cfg.d_f}, cfg.d_f, rng));
  params.add("q_proj.bias", Tensor::zeros({cfg.d_f}));

  for (int i = 0; i < cfg.n_sab; ++i) {
    std::string p = "sab" + std::to_string(i);
    params.add(p + ".ln1.gain", Tensor::constant({cfg.d_f}, 1.0));
    params.add(p + ".ln1.bias", Tensor::zeros({cfg.d_f}));
    for (const char* name : {".attn.wq", ".attn.wk", ".attn.wv", ".attn.wo"})
      params.add(p + name, detail::init_weight({cfg.d_f, cfg.d_f}, cfg.d_f, rng));
    for (const char* name : {".attn.bq", ".attn.bk", ".attn.bv", ".attn.bo"})
      params.add(p + name, Tensor::zeros({cfg.d_f}));
    params.add(p + ".ln2.gain", Tensor::constant({cfg.d_f}, 1.0));
    params.add(p + ".ln2.bias", Tensor::zeros({cfg.d_f}));
    params.add(p + ".ffn.w1",
               detail::init_weight({cfg.ffn_dim, cfg.d_f}, cfg.d_f, rng));
    params.add(p + ".ffn.b1", Tensor::zeros({cfg.ffn_dim}));
    params.add(p + ".ffn.w2",
               detail::init_weight({cfg.d_f, cfg.ffn_dim}, cfg.ffn_dim, rng));
    params.add(p + ".ffn.b2", Tensor::zeros({cfg.d_f}));
  }

  params.add("ln_f.gain", Tensor::constant({cfg.d_f}, 1.0));
  params.add("ln_f.bias", Tensor::zeros({cfg.d_f}));

  params.add("head.w1", detail::init_weight({cfg.d_f, cfg.d_f}, cfg.d_f, rng));
  params.add("head.b1", Tensor::zeros({cfg.d_f}));
  params.add("head.w2",
             detail::init_weight({cfg.vocab_size, cfg.d_f}, cfg.d_f, rng));
  params.add("head.b2", Tensor::zeros({cfg.vocab_size}));

  for (auto& [name, t] : params.items()) t.set_requires_grad(true);
  return params;
}

// ---------------------------------------------------------------------------
// Forward pass
// ---------------------------------------------------------------------------

namespace detail {

// Sinusoidal positions laid out as [d_f x S]; constant, added after the conv
// stack so the attention blocks see order information.
inline Tensor positional_encoding(int d_f, int s_len) {
  std::vector<double> pe(static_cast<size_t>(d_f) * s_len);
  for (int r = 0; r < d_f; ++r) {
    double freq = std::pow(10000.0, -2.0 * (r / 2) / static_cast<double>(d_f));
    for (int s = 0; s < s_len; ++s) {
      double angle = s * freq;
      pe[static_cast<size_t>(r * s_len + s)] =
          (r % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return Tensor::from_values({d_f, s_len}, std::move(pe));
}

inline Tensor linear_cols(const Tensor& w, const Tensor& x, const Tensor& b) {
  return add_col_bias(matmul(w, x), b);
}

// Per-frame layer norm for [d x S] tensors (rows are feature dims).
inline Tensor frame_norm(const Tensor& x, const Tensor& gain, const Tensor& bias) {
  return transpose(layer_norm(transpose(x), gain, bias));
}

inline Tensor self_attention(const ParamStore& params, const std::string& p,
                             const Tensor& x, int n_heads) {
  const int d_f = x.dim(0);
  const int head_dim = d_f / n_heads;
  Tensor q = linear_cols(params.get(p + ".attn.wq"), x, params.get(p + ".attn.bq"));
  Tensor k = linear_cols(params.get(p + ".attn.wk"), x, params.get(p + ".attn.bk"));
  Tensor v = linear_cols(params.get(p + ".attn.wv"), x, params.get(p + ".attn.bv"));
  std::vector<Tensor> heads;
  heads.reserve(static_cast<size_t>(n_heads));
  for (int h = 0; h < n_heads; ++h) {
    Tensor qh = row_slice(q, h * head_dim, head_dim);
    Tensor kh = row_slice(k, h * head_dim, head_dim);
    Tensor vh = row_slice(v, h * head_dim, head_dim);
    Tensor scores = scale(matmul(transpose(qh), kh),
                          1.0 / std::sqrt(static_cast<double>(head_dim)));
    Tensor attn = exp(log_softmax(scores, 1));  // rows: queries
    heads.push_back(matmul(vh, transpose(attn)));
  }
  Tensor cat = n_heads == 1 ? heads[0] : concat_rows(heads);
  return linear_cols(params.get(p + ".attn.wo"), cat, params.get(p + ".attn.bo"));
}

}  // namespace detail

// Runs the backbone on one utterance. Target features q are projected from
// the PRE-mask encoder features; the context path sees the masked features
// plus positional encodings.
inline EncoderOutputs forward(const ParamStore& params, const ModelConfig& cfg,
                              const Tensor& features, const MaskPlan& plan,
                              MaskConfig::Replacement replacement =
                                  MaskConfig::Replacement::kLearned) {
  check_runtime(features.ndim() == 2 && features.dim(0) == cfg.d_s,
                "forward: feature dim disagrees with model config");
  EncoderOutputs out;

  Tensor h = features;
  for (size_t i = 0; i < cfg.conv.size(); ++i) {
    std::string prefix = "conv" + std::to_string(i);
    h = tanh(add_col_bias(conv1d(h, params.get(prefix + ".kernel"),
                                 cfg.conv[i].stride),
                          params.get(prefix + ".bias")));
  }
  out.z = h;
  const int s_len = out.z.dim(1);

  out.q = detail::linear_cols(params.get("q_proj.weight"),
                              cfg.stop_grad_targets ? out.z.detach() : out.z,
                              params.get("q_proj.bias"));

  Tensor mask_fill = replacement == MaskConfig::Replacement::kLearned
                         ? params.get("mask_vec")
                         : Tensor::zeros({cfg.d_f});
  out.z_masked = apply_mask(out.z, plan, mask_fill);

  Tensor x = add(out.z_masked, detail::positional_encoding(cfg.d_f, s_len));
  for (int i = 0; i < cfg.n_sab; ++i) {
    std::string p = "sab" + std::to_string(i);
    Tensor attn_in = detail::frame_norm(x, params.get(p + ".ln1.gain"),
                                        params.get(p + ".ln1.bias"));
    x = add(x, detail::self_attention(params, p, attn_in, cfg.n_heads));
    Tensor ffn_in = detail::frame_norm(x, params.get(p + ".ln2.gain"),
                                       params.get(p + ".ln2.bias"));
    Tensor ffn = detail::linear_cols(
        params.get(p + ".ffn.w2"),
        tanh(detail::linear_cols(params.get(p + ".ffn.w1"), ffn_in,
                                 params.get(p + ".ffn.b1"))),
        params.get(p + ".ffn.b2"));
    x = add(x, ffn);
  }
  out.c = detail::frame_norm(x, params.get("ln_f.gain"), params.get("ln_f.bias"));

  Tensor hidden = tanh(detail::linear_cols(params.get("head.w1"), out.c,
                                           params.get("head.b1")));
  Tensor logits = detail::linear_cols(params.get("head.w2"), hidden,
                                      params.get("head.b2"));
  out.log_probs = log_softmax(transpose(logits), 1);
  return out;
}

// Best-path CTC decoding: per-frame argmax (ties toward the lower index),
// collapse repeats, drop blanks.
inline std::vector<int> greedy_decode(const Tensor& log_probs) {
  const int s_len = log_probs.dim(0), vocab = log_probs.dim(1);
  std::vector<int> decoded;
  int prev = -1;
  for (int t = 0; t < s_len; ++t) {
    int best = 0;
    for (int v = 1; v < vocab; ++v)
      if (log_probs.at(t, v) > log_probs.at(t, best)) best = v;
    if (best != prev && best != kBlank) decoded.push_back(best);
    prev = best;
  }
  return decoded;
}

}  // namespace scala
