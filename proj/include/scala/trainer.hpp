#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "scala/checkpoint.hpp"
#include "scala/config.hpp"
#include "scala/corpus.hpp"
#include "scala/losses.hpp"
#include "scala/masking.hpp"
#include "scala/metrics.hpp"
#include "scala/model.hpp"
#include "scala/optim.hpp"
#include "scala/rng.hpp"

namespace scala {

struct TrainConfig {
  enum class Mode { kScala, kScalaSc, kScalaC, kBaseline };

  Mode mode = Mode::kScala;
  int batch_size = 8;
  int steps = 2000;
  double lr_ctc = 1e-3;
  double lr_scl_start = 1e-3;
  double lr_scl_end = 1e-4;
  uint64_t seed = 1;
  AdamConfig adam;
  int eval_interval = 200;
  int ckpt_interval = 500;
  int ratio = 1;  // recognition phases per contrastive phase
  MaskConfig mask;
  ContrastiveConfig contrastive;
  DownsampleRule downsample = DownsampleRule::kMajority;

  bool uses_scl() const { return mode == Mode::kScala || mode == Mode::kScalaSc; }
  bool uses_mask() const { return mode != Mode::kBaseline; }

  static Mode parse_mode(const std::string& name) {
    if (name == "scala") return Mode::kScala;
    if (name == "scala_sc") return Mode::kScalaSc;
    if (name == "scala_c") return Mode::kScalaC;
    check_data(name == "baseline", "train.mode: unknown mode " + name);
    return Mode::kBaseline;
  }

  static const char* mode_name(Mode mode) {
    switch (mode) {
      case Mode::kScala: return "scala";
      case Mode::kScalaSc: return "scala_sc";
      case Mode::kScalaC: return "scala_c";
      case Mode::kBaseline: return "baseline";
    }
    return "?";
  }

  static TrainConfig from_config(const Config& cfg) {
    TrainConfig t;
    t.mode = parse_mode(cfg.get_string("train.mode"));
    t.batch_size = cfg.get_int("train.batch_size");
    t.steps = cfg.get_int("train.steps");
    t.lr_ctc = cfg.get_double("train.lr_ctc");
    t.lr_scl_start = cfg.get_double("train.lr_scl_start");
    t.lr_scl_end = cfg.get_double("train.lr_scl_end");
    t.seed = static_cast<uint64_t>(cfg.get_int("train.seed"));
    t.adam.beta1 = cfg.get_double("train.beta1");
    t.adam.beta2 = cfg.get_double("train.beta2");
    t.adam.eps = cfg.get_double("train.eps");
    t.eval_interval = cfg.get_int("train.eval_interval");
    t.ckpt_interval = cfg.get_int("train.ckpt_interval");
    t.ratio = cfg.get_int("train.ratio");
    t.mask = MaskConfig::from_config(cfg);
    t.contrastive = ContrastiveConfig::from_config(cfg);
    t.downsample = cfg.get_string("align.downsample") == "center"
                       ? DownsampleRule::kCenter
                       : DownsampleRule::kMajority;
    t.apply_mode_consistency();
    t.validate();
    return t;
  }

  // The mode fixes the sampler and the masking: the baseline trains without
  // masks, and SCaLa-SC is exactly SCaLa with the label filter turned off.
  void apply_mode_consistency() {
    if (mode == Mode::kBaseline) mask.mode = MaskConfig::Mode::kNone;
    if (mode == Mode::kScala) contrastive.supervised = true;
    if (mode == Mode::kScalaSc) contrastive.supervised = false;
  }

  void validate() const {
    check_data(lr_ctc > 0 && lr_scl_start > 0 && lr_scl_end > 0,
               "train: learning rates must be positive");
    check_data(steps >= 0, "train.steps must be >= 0");
    check_data(batch_size >= 1, "train.batch_size must be >= 1");
    check_data(eval_interval >= 1 && ckpt_interval >= 1,
               "train: intervals must be >= 1");
    check_data(ratio >= 1, "train.ratio must be >= 1");
  }
};

// Linear decay from lr_scl_start at step 0 to lr_scl_end at the final step,
// clamped beyond.
inline double lr_schedule_scl(long step, const TrainConfig& cfg) {
  if (cfg.steps <= 0) return cfg.lr_scl_start;
  double t = static_cast<double>(std::min<long>(step, cfg.steps)) /
             static_cast<double>(cfg.steps);
  return cfg.lr_scl_start + (cfg.lr_scl_end - cfg.lr_scl_start) * t;
}

struct TrainUtterance {
  Utterance utt;
  AlignmentTrack track;
};

inline std::vector<TrainUtterance> prepare_utterances(
    std::vector<Utterance> utts, const ModelConfig& model_cfg,
    DownsampleRule rule) {
  std::vector<TrainUtterance> out;
  out.reserve(utts.size());
  for (auto& utt : utts) {
    TrainUtterance tu;
    tu.track = downsample_alignment(utt, model_cfg.strides(), rule);
    tu.utt = std::move(utt);
    out.push_back(std::move(tu));
  }
  return out;
}

struct StepReport {
  long step = 0;
  double ctc_loss = 0.0;
  bool has_scl = false;
  double scl_loss = 0.0;
  int anchors = 0;
  long noisy_negatives = 0;
  int skipped_utterances = 0;
};

// Model parameters plus both optimizer states, the data order, and the rng —
// everything needed to reproduce the rest of a run bit-exactly.
struct TrainState {
  ParamStore params;
  AdamOptimizer opt_ctc;
  AdamOptimizer opt_scl;
  long global_step = 0;
  Rng rng;
  std::vector<int> data_order;
  size_t data_cursor = 0;
  double best_cer = -1.0;  // < 0 until the first evaluation
  long best_step = -1;

  static TrainState fresh(const ModelConfig& model_cfg, const TrainConfig& cfg,
                          size_t n_train) {
    TrainState state;
    state.params = init_model(model_cfg, cfg.seed);
    state.opt_ctc = AdamOptimizer(cfg.adam);
    state.opt_scl = AdamOptimizer(cfg.adam);
    state.rng = Rng::substream(cfg.seed, 0x7a11);
    state.data_order.resize(n_train);
    for (size_t i = 0; i < n_train; ++i)
      state.data_order[i] = static_cast<int>(i);
    state.data_cursor = n_train;  // force a shuffle before the first batch
    return state;
  }
};

// One alternate-minimization step on a batch: a CTC phase with fresh mask
// plans and an opt_ctc update, then (in the contrastive modes) a second
// forward with fresh plans, a contrastive phase, and an opt_scl update.
inline StepReport train_step(TrainState& state,
                             const std::vector<const TrainUtterance*>& batch,
                             const TrainConfig& cfg,
                             const ModelConfig& model_cfg) {
  check_runtime(!batch.empty(), "train_step: empty batch");
  StepReport report;
  report.step = state.global_step + 1;

  // ---- phase (a): recognition ----
  state.params.zero_grad();
  std::vector<Tensor> ctc_terms;
  for (const TrainUtterance* tu : batch) {
    MaskPlan plan = plan_mask(tu->track, cfg.mask, state.rng);
    try {
      EncoderOutputs out = forward(state.params, model_cfg, tu->utt.features,
                                   plan, cfg.mask.replacement);
      ctc_terms.push_back(ctc_loss(out.log_probs, tu->utt.transcript));
    } catch (const InfeasibleTargetError& e) {
      std::cerr << "warning: skipping " << tu->utt.id << ": " << e.what()
                << "\n";
      ++report.skipped_utterances;
    }
  }
  check_runtime(!ctc_terms.empty(),
                "train_step: every utterance in the batch is infeasible");
  Tensor batch_ctc = ctc_terms[0];
  for (size_t i = 1; i < ctc_terms.size(); ++i)
    batch_ctc = add(batch_ctc, ctc_terms[i]);
  batch_ctc = scale(batch_ctc, 1.0 / static_cast<double>(ctc_terms.size()));
  report.ctc_loss = batch_ctc.value();
  backward(batch_ctc, state.params);
  state.opt_ctc.step(state.params, cfg.lr_ctc);

  // ---- phase (b): contrastive ----
  bool scl_phase = cfg.uses_scl() && (report.step % cfg.ratio == 0);
  if (scl_phase) {
    state.params.zero_grad();
    std::vector<Tensor> scl_terms;
    for (const TrainUtterance* tu : batch) {
      MaskPlan plan = plan_mask(tu->track, cfg.mask, state.rng);
      int silence_id = cfg.mask.exclude_silence_anchors ? 0 : -1;
      auto samples = sample_contrastive(plan, tu->track, cfg.contrastive,
                                        state.rng, silence_id);
      if (samples.empty()) continue;
      report.anchors += static_cast<int>(samples.size());
      for (const auto& s : samples)
        for (int k : s.negatives)
          if (tu->track.labels[static_cast<size_t>(k)] ==
              tu->track.labels[static_cast<size_t>(s.anchor)])
            ++report.noisy_negatives;
      EncoderOutputs out = forward(state.params, model_cfg, tu->utt.features,
                                   plan, cfg.mask.replacement);
      scl_terms.push_back(scl_loss(out.c, out.q, samples, cfg.contrastive.tau));
    }
    if (!scl_terms.empty()) {
      Tensor batch_scl = scl_terms[0];
      for (size_t i = 1; i < scl_terms.size(); ++i)
        batch_scl = add(batch_scl, scl_terms[i]);
      batch_scl = scale(batch_scl, 1.0 / static_cast<double>(scl_terms.size()));
      report.has_scl = true;
      report.scl_loss = batch_scl.value();
      backward(batch_scl, state.params);
      state.opt_scl.step(state.params, lr_schedule_scl(state.global_step, cfg));
    }
  }

  ++state.global_step;
  return report;
}

// Validation always runs on unmasked forward passes.
struct EvalResult {
  double ctc_loss = 0.0;
  CerReport cer;
};

inline EvalResult evaluate(const ParamStore& params, const ModelConfig& model_cfg,
                           const std::vector<TrainUtterance>& utts) {
  EvalResult result;
  NoGradGuard guard;
  double total = 0.0;
  long counted = 0;
  for (const auto& tu : utts) {
    EncoderOutputs out =
        forward(params, model_cfg, tu.utt.features, MaskPlan{});
    result.cer.merge(
        edit_alignment(tu.utt.transcript, greedy_decode(out.log_probs)));
    try {
      total += ctc_loss(out.log_probs, tu.utt.transcript).value();
      ++counted;
    } catch (const InfeasibleTargetError&) {
      // too short for its transcript; CER still counts it
    }
  }
  result.ctc_loss = counted ? total / static_cast<double>(counted) : 0.0;
  return result;
}

// ---------------------------------------------------------------------------
// Trainer checkpoints (full state) and the training loop
// ---------------------------------------------------------------------------

inline void save_train_state(const std::string& path, const TrainState& state,
                             const ModelConfig& model_cfg) {
  Checkpoint ckpt;
  ckpt.config = model_cfg.to_kv();
  ckpt.config["trainer.global_step"] = std::to_string(state.global_step);
  ckpt.config["trainer.rng"] = state.rng.serialize();
  ckpt.config["trainer.data_cursor"] = std::to_string(state.data_cursor);
  ckpt.config["trainer.best_cer"] = detail::format_full(state.best_cer);
  ckpt.config["trainer.best_step"] = std::to_string(state.best_step);
  for (const auto& [name, t] : state.params.items())
    ckpt.tensors.emplace("param/" + name, t.detach());
  state.opt_ctc.save_state(ckpt, "opt_ctc");
  state.opt_scl.save_state(ckpt, "opt_scl");
  std::vector<double> order(state.data_order.begin(), state.data_order.end());
  const int order_len = static_cast<int>(order.size());
  ckpt.tensors.emplace("data/order",
                       Tensor::from_values({order_len}, std::move(order)));
  ckpt.save(path);
}

inline TrainState load_train_state(const std::string& path,
                                   const ModelConfig& expected_cfg) {
  Checkpoint ckpt = Checkpoint::load(path);
  LoadedModel model = from_checkpoint(ckpt, path);
  check_data(model.config.to_kv() == expected_cfg.to_kv(),
             path + ": checkpoint model config disagrees with the run config");
  TrainState state;
  state.params = std::move(model.params);
  auto need = [&](const std::string& key) {
    auto it = ckpt.config.find(key);
    check_data(it != ckpt.config.end(), path + ": missing " + key);
    return it->second;
  };
  state.global_step = std::stol(need("trainer.global_step"));
  state.rng.deserialize(need("trainer.rng"));
  state.data_cursor = static_cast<size_t>(std::stoul(need("trainer.data_cursor")));
  state.best_cer = std::stod(need("trainer.best_cer"));
  state.best_step = std::stol(need("trainer.best_step"));
  state.opt_ctc.load_state(ckpt, "opt_ctc");
  state.opt_scl.load_state(ckpt, "opt_scl");
  auto order_it = ckpt.tensors.find("data/order");
  check_data(order_it != ckpt.tensors.end(), path + ": missing data order");
  state.data_order.clear();
  for (double v : order_it->second.data())
    state.data_order.push_back(static_cast<int>(v));
  return state;
}

struct RunResult {
  std::string best_checkpoint;  // model-only, lowest validation CER
  std::string last_checkpoint;  // full trainer state at the final step
  std::string metrics_path;
  double best_cer = 0.0;
  long best_step = 0;
  double final_val_ctc = 0.0;
  double final_val_cer = 0.0;
};

// Full training loop: shuffled mini-batches, per-step metric emission,
// periodic validation (unmasked) and checkpointing, best-CER tracking,
// bit-exact resume from `resume_path`. `stop_after` > 0 limits how many steps
// this invocation runs (the schedule still spans cfg.steps), so an
// interrupted-plus-resumed run retraces the uninterrupted one exactly.
inline RunResult run_training(const TrainConfig& cfg,
                              const ModelConfig& model_cfg,
                              const std::vector<TrainUtterance>& train,
                              const std::vector<TrainUtterance>& validation,
                              const std::string& out_dir,
                              const std::string& resume_path = "",
                              long stop_after = 0) {
  namespace fs = std::filesystem;
  check_data(!train.empty(), "run_training: empty training corpus");
  check_data(!validation.empty(), "run_training: empty validation corpus");
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  check_data(!ec, "cannot create output directory: " + out_dir);

  RunResult result;
  result.best_checkpoint = out_dir + "/best.sclc";
  result.last_checkpoint = out_dir + "/last.sclc";
  result.metrics_path = out_dir + "/metrics.jsonl";

  bool resuming = !resume_path.empty();
  TrainState state = resuming
                         ? load_train_state(resume_path, model_cfg)
                         : TrainState::fresh(model_cfg, cfg, train.size());
  check_data(state.data_order.size() == train.size(),
             "run_training: checkpoint corpus size disagrees");

  std::ofstream metrics(result.metrics_path,
                        resuming ? std::ios::app : std::ios::trunc);
  check_data(metrics.good(), "cannot open metrics stream for writing");
  auto emit = [&](long step, const char* kind, double value) {
    metrics << format_metrics_record({step, kind, value}) << "\n";
  };

  auto run_eval = [&](long step) {
    EvalResult eval = evaluate(state.params, model_cfg, validation);
    emit(step, "val_ctc", eval.ctc_loss);
    emit(step, "val_cer", eval.cer.cer());
    result.final_val_ctc = eval.ctc_loss;
    result.final_val_cer = eval.cer.cer();
    if (state.best_cer < 0.0 || eval.cer.cer() < state.best_cer) {
      state.best_cer = eval.cer.cer();
      state.best_step = step;
      save_model(result.best_checkpoint, model_cfg, state.params);
    }
  };

  if (cfg.steps == 0) {
    // nothing to train: the initial state is the result, metrics stay empty
    save_model(result.best_checkpoint, model_cfg, state.params);
    save_train_state(result.last_checkpoint, state, model_cfg);
    return result;
  }

  if (!resuming) run_eval(0);

  std::vector<const TrainUtterance*> batch;
  const int batch_size =
      std::min<int>(cfg.batch_size, static_cast<int>(train.size()));
  long session_steps = 0;
  while (state.global_step < cfg.steps &&
         (stop_after <= 0 || session_steps < stop_after)) {
    ++session_steps;
    batch.clear();
    for (int i = 0; i < batch_size; ++i) {
      if (state.data_cursor >= state.data_order.size()) {
        state.rng.shuffle(state.data_order);
        state.data_cursor = 0;
      }
      batch.push_back(&train[static_cast<size_t>(
          state.data_order[state.data_cursor++])]);
    }
    StepReport report = train_step(state, batch, cfg, model_cfg);
    emit(report.step, "train_ctc", report.ctc_loss);
    if (report.has_scl) emit(report.step, "train_scl", report.scl_loss);
    if (report.step % cfg.eval_interval == 0 || report.step == cfg.steps)
      run_eval(report.step);
    if (report.step % cfg.ckpt_interval == 0 || report.step == cfg.steps)
      save_train_state(result.last_checkpoint, state, model_cfg);
  }
  result.best_cer = state.best_cer;
  result.best_step = state.best_step;
  metrics.flush();
  return result;
}

}  // namespace scala
