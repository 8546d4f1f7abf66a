#pragma once

#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "scala/error.hpp"

namespace scala {

// Flat key=value configuration with a closed key registry: a key that is not
// registered is rejected outright, so typos never fall back to defaults.
class Config {
 public:
  enum class Type { kInt, kDouble, kBool, kString, kEnum };

  struct KeySpec {
    Type type;
    std::string default_value;
    std::vector<std::string> choices;  // kEnum only
    std::string help;
  };

  static const std::map<std::string, KeySpec>& registry() {
    static const std::map<std::string, KeySpec> reg = {
        // synthetic corpus generator
        {"synth.n_train", {Type::kInt, "200", {}, "training utterances"}},
        {"synth.n_test", {Type::kInt, "50", {}, "held-out utterances"}},
        {"synth.n_phonemes",
         {Type::kInt, "10", {}, "phoneme inventory size incl. silence"}},
        {"synth.n_tokens", {Type::kInt, "20", {}, "output vocabulary size"}},
        {"synth.d_s", {Type::kInt, "8", {}, "feature dimension"}},
        {"synth.dur_min", {Type::kInt, "2", {}, "min phoneme duration, frames"}},
        {"synth.dur_max", {Type::kInt, "4", {}, "max phoneme duration, frames"}},
        {"synth.phonemes_per_token",
         {Type::kInt, "2", {}, "phonemes per token (1 or 2)"}},
        {"synth.tokens_min", {Type::kInt, "3", {}, "min tokens per utterance"}},
        {"synth.tokens_max", {Type::kInt, "6", {}, "max tokens per utterance"}},
        {"synth.sigma",
         {Type::kDouble, "0.6", {}, "frame noise stddev around cluster centers"}},
        {"synth.center_sep",
         {Type::kDouble, "1.5", {}, "min distance between cluster centers"}},
        {"synth.center_tries",
         {Type::kInt, "100", {}, "center resampling attempts before failing"}},
        {"synth.sil_prob",
         {Type::kDouble, "0.3", {}, "probability of silence at utterance edges"}},
        {"synth.align_jitter",
         {Type::kInt, "0", {}, "max +/- frames of alignment boundary noise"}},

        // alignment handling
        {"align.downsample",
         {Type::kEnum, "majority", {"majority", "center"},
          "input-rate to encoder-rate label rule"}},

        // model
        {"model.d_f", {Type::kInt, "64", {}, "latent feature dimension"}},
        {"model.conv",
         {Type::kString, "", {},
          "conv stack as kernel:stride:channels,... (empty = one 3:2:d_f layer)"}},
        {"model.n_sab", {Type::kInt, "2", {}, "self-attention blocks"}},
        {"model.n_heads", {Type::kInt, "4", {}, "attention heads"}},
        {"model.ffn_dim", {Type::kInt, "128", {}, "feed-forward width"}},
        {"model.stop_grad_targets",
         {Type::kBool, "false", {}, "detach encoder features before target projection"}},

        // masking
        {"mask.mode",
         {Type::kEnum, "phoneme", {"phoneme", "fixed", "none"}, "mask planner"}},
        {"mask.p_e", {Type::kDouble, "0.065", {}, "start-index probability"}},
        {"mask.P", {Type::kInt, "2", {}, "phonemes per mask (phoneme mode)"}},
        {"mask.F", {Type::kInt, "4", {}, "frames per mask (fixed mode)"}},
        {"mask.exclude_silence_anchors",
         {Type::kBool, "false", {}, "drop silence-labeled anchors"}},
        {"mask.replacement",
         {Type::kEnum, "learned", {"learned", "zero"}, "masked column fill"}},

        // contrastive loss
        {"scl.tau", {Type::kDouble, "0.1", {}, "softmax temperature"}},
        {"scl.K", {Type::kInt, "100", {}, "negatives per anchor"}},
        {"scl.supervised",
         {Type::kBool, "true", {}, "filter negatives by alignment label"}},

        // training
        {"train.mode",
         {Type::kEnum, "scala", {"scala", "scala_sc", "scala_c", "baseline"},
          "training variant"}},
        {"train.batch_size", {Type::kInt, "8", {}, "utterances per step"}},
        {"train.steps", {Type::kInt, "2000", {}, "optimizer steps"}},
        {"train.lr_ctc", {Type::kDouble, "1e-3", {}, "recognition LR (constant)"}},
        {"train.lr_scl_start", {Type::kDouble, "1e-3", {}, "contrastive LR at step 0"}},
        {"train.lr_scl_end", {Type::kDouble, "1e-4", {}, "contrastive LR at last step"}},
        {"train.seed", {Type::kInt, "1", {}, "master seed"}},
        {"train.beta1", {Type::kDouble, "0.9", {}, "first-moment decay"}},
        {"train.beta2", {Type::kDouble, "0.999", {}, "second-moment decay"}},
        {"train.eps", {Type::kDouble, "1e-8", {}, "optimizer epsilon"}},
        {"train.eval_interval", {Type::kInt, "200", {}, "steps between validations"}},
        {"train.ckpt_interval", {Type::kInt, "500", {}, "steps between checkpoints"}},
        {"train.ratio",
         {Type::kInt, "1", {}, "recognition phases per contrastive phase"}},

        // preset: desk-scale defaults or the full-scale settings recorded from
        // the original system (3 conv / 10 SAB, batch 128, LR 2.5e-5 etc.)
        {"preset", {Type::kEnum, "desk", {"desk", "paper"}, "hyperparameter preset"}},
    };
    return reg;
  }

  Config() {
    for (const auto& [key, spec] : registry()) values_[key] = spec.default_value;
  }

  // preset=paper swaps in the full-scale defaults; explicit keys still win.
  void apply_preset(const std::string& name) {
    if (name == "desk") return;
    check_data(name == "paper", "unknown preset: " + name);
    values_["model.conv"] = "3:2:64,3:2:64,3:1:64";
    values_["model.n_sab"] = "10";
    values_["train.batch_size"] = "128";
    values_["train.lr_ctc"] = "2.5e-5";
    values_["train.lr_scl_start"] = "5e-4";
    values_["train.lr_scl_end"] = "5e-5";
  }

  void load_file(const std::string& path) {
    std::ifstream in(path);
    check_data(in.good(), "cannot open config file: " + path);
    std::string line;
    int lineno = 0;
    std::vector<std::pair<std::string, std::string>> pairs;
    while (std::getline(in, line)) {
      ++lineno;
      std::string s = strip_comment(line);
      if (s.empty()) continue;
      auto eq = s.find('=');
      check_data(eq != std::string::npos,
                 path + ":" + std::to_string(lineno) + ": expected key=value");
      pairs.emplace_back(trim(s.substr(0, eq)), trim(s.substr(eq + 1)));
    }
    // preset applies first so file keys override its values
    for (auto& [k, v] : pairs)
      if (k == "preset") {
        validate(k, v, ErrorKind::kData);
        values_[k] = v;
        apply_preset(v);
      }
    for (auto& [k, v] : pairs) {
      if (k == "preset") continue;
      validate(k, v, ErrorKind::kData);
      values_[k] = v;
    }
  }

  // CLI override: "key=value". Bad keys/values are usage errors.
  void set_override(const std::string& assignment) {
    auto eq = assignment.find('=');
    if (eq == std::string::npos)
      fail_usage("--set expects key=value, got: " + assignment);
    std::string k = trim(assignment.substr(0, eq));
    std::string v = trim(assignment.substr(eq + 1));
    validate(k, v, ErrorKind::kUsage);
    values_[k] = v;
    if (k == "preset") {
      apply_preset(v);
    }
  }

  const std::string& get_string(const std::string& key) const {
    auto it = values_.find(key);
    check_runtime(it != values_.end(), "unregistered config key: " + key);
    return it->second;
  }

  int get_int(const std::string& key) const {
    return parse_int(key, get_string(key));
  }

  double get_double(const std::string& key) const {
    return parse_double(key, get_string(key));
  }

  bool get_bool(const std::string& key) const {
    return parse_bool(key, get_string(key));
  }

  // One "key=value" line per key, sorted; used for checkpoint config blocks.
  std::string serialize() const {
    std::ostringstream os;
    for (const auto& [k, v] : values_) os << k << "=" << v << "\n";
    return os.str();
  }

  static std::string help_text() {
    std::ostringstream os;
    os << "Config keys (key=value in the config file or via --set):\n";
    for (const auto& [key, spec] : registry()) {
      os << "  " << key << " (default: "
         << (spec.default_value.empty() ? "derived" : spec.default_value)
         << ") " << spec.help << "\n";
    }
    return os.str();
  }

 private:
  static std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    size_t b = s.find_last_not_of(" \t\r");
    if (a == std::string::npos) return "";
    return s.substr(a, b - a + 1);
  }

  static std::string strip_comment(const std::string& s) {
    auto hash = s.find('#');
    return trim(hash == std::string::npos ? s : s.substr(0, hash));
  }

  static void fail_kind(ErrorKind kind, const std::string& msg) {
    throw Error(kind, msg);
  }

  void validate(const std::string& key, const std::string& value,
                ErrorKind kind) const {
    auto it = registry().find(key);
    if (it == registry().end()) fail_kind(kind, "unknown config key: " + key);
    const KeySpec& spec = it->second;
    switch (spec.type) {
      case Type::kInt:
        parse_int(key, value);
        break;
      case Type::kDouble:
        parse_double(key, value);
        break;
      case Type::kBool:
        parse_bool(key, value);
        break;
      case Type::kEnum: {
        for (const auto& c : spec.choices)
          if (c == value) return;
        std::string opts;
        for (const auto& c : spec.choices) opts += (opts.empty() ? "" : "|") + c;
        fail_kind(kind, key + ": expected one of " + opts + ", got " + value);
        break;
      }
      case Type::kString:
        break;
    }
  }

  static int parse_int(const std::string& key, const std::string& v) {
    try {
      size_t pos = 0;
      int out = std::stoi(v, &pos);
      check_data(pos == v.size(), "");
      return out;
    } catch (...) {
      fail_data(key + ": expected integer, got '" + v + "'");
    }
  }

  static double parse_double(const std::string& key, const std::string& v) {
    try {
      size_t pos = 0;
      double out = std::stod(v, &pos);
      check_data(pos == v.size(), "");
      return out;
    } catch (...) {
      fail_data(key + ": expected number, got '" + v + "'");
    }
  }

  static bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    fail_data(key + ": expected true/false, got '" + v + "'");
  }

  std::map<std::string, std::string> values_;
};

}  // namespace scala
