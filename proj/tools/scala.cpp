// scala: synthetic-corpus generation, masked-contrastive CTC training,
// evaluation, negative-pair auditing, and the numeric verification harnesses,
// driven by a flat key=value config with --set overrides.
//
// Exit codes: 0 success, 1 usage error, 2 data/validation error,
// 3 runtime/numeric error.

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "scala/checkpoint.hpp"
#include "scala/config.hpp"
#include "scala/corpus.hpp"
#include "scala/gradcheck.hpp"
#include "scala/losses.hpp"
#include "scala/masking.hpp"
#include "scala/metrics.hpp"
#include "scala/model.hpp"
#include "scala/synth.hpp"
#include "scala/trainer.hpp"

namespace fs = std::filesystem;
using namespace scala;

double oracle_ctc_bruteforce(const Tensor& log_probs,
                             const std::vector<int>& targets);

namespace {

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string workdir = ".";
  long seed = -1;  // <0: use train.seed from the config
  int threads = 1;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "config file (key=value lines)");
  cmd->add_option("--set", args.overrides,
                  "config override key=value (repeatable, last wins)");
  cmd->add_option("--workdir", args.workdir,
                  "directory all relative paths resolve against");
  cmd->add_option("--seed", args.seed, "seed override (sets train.seed)");
  cmd->add_option("--threads", args.threads,
                  "worker threads for evaluation (default 1)");
}

Config build_config(const CommonArgs& args) {
  Config cfg;
  if (!args.config_path.empty()) cfg.load_file(args.config_path);
  for (const auto& assignment : args.overrides) cfg.set_override(assignment);
  if (args.seed >= 0)
    cfg.set_override("train.seed=" + std::to_string(args.seed));
  return cfg;
}

std::string resolve(const CommonArgs& args, const std::string& path) {
  if (path.empty() || fs::path(path).is_absolute()) return path;
  return (fs::path(args.workdir) / path).string();
}

struct CorpusPaths {
  LoadedCorpus corpus;
};

uint64_t seed_of(const Config& cfg) {
  return static_cast<uint64_t>(cfg.get_int("train.seed"));
}

CerReport evaluate_corpus_threaded(const ParamStore& params,
                                   const ModelConfig& cfg,
                                   const std::vector<Utterance>& utts,
                                   int threads) {
  if (threads <= 1) return evaluate_corpus(params, cfg, utts);
  std::vector<CerReport> partial(utts.size());
  std::atomic<size_t> next{0};
  auto worker = [&]() {
    NoGradGuard guard;
    size_t i;
    while ((i = next.fetch_add(1)) < utts.size()) {
      EncoderOutputs out = forward(params, cfg, utts[i].features, MaskPlan{});
      partial[i] =
          edit_alignment(utts[i].transcript, greedy_decode(out.log_probs));
    }
  };
  std::vector<std::thread> pool;
  for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  CerReport pooled;  // reduced in utterance order: thread count cannot matter
  for (const auto& r : partial) pooled.merge(r);
  return pooled;
}

void print_cer(const char* tag, const CerReport& r) {
  std::printf("%s CER %.4f%% [ %ld err / %ld ref ] SUB %.4f%% (%ld) DEL %.4f%% (%ld) INS %.4f%% (%ld)\n",
              tag, r.cer(), r.errors(), r.ref_tokens, r.sub_rate(),
              r.substitutions, r.del_rate(), r.deletions, r.ins_rate(),
              r.insertions);
}

// ---------------------------------------------------------------------------
// commands
// ---------------------------------------------------------------------------

int cmd_gen_data(const CommonArgs& args, const std::string& out_dir) {
  Config cfg = build_config(args);
  SynthSpec spec = SynthSpec::from_config(cfg);
  uint64_t seed = seed_of(cfg);
  SynthCorpus corpus = generate_synthetic_corpus(spec, seed);
  write_corpus(corpus, resolve(args, out_dir));
  std::printf("wrote %d train / %d test utterances to %s (seed %llu)\n",
              spec.n_train, spec.n_test, resolve(args, out_dir).c_str(),
              static_cast<unsigned long long>(seed));
  return 0;
}

int cmd_train(const CommonArgs& args, const std::string& data_dir,
              const std::string& out_dir, const std::string& resume,
              long stop_after) {
  Config cfg = build_config(args);
  LoadedCorpus corpus = load_corpus(resolve(args, data_dir));
  check_data(!corpus.train.empty(), "training manifest is empty");
  check_data(!corpus.test.empty(), "validation manifest is empty");

  ModelConfig model_cfg = ModelConfig::from_config(
      cfg, corpus.train[0].feature_dim(), corpus.vocab.size());
  TrainConfig train_cfg = TrainConfig::from_config(cfg);

  auto train = prepare_utterances(std::move(corpus.train), model_cfg,
                                  train_cfg.downsample);
  auto validation = prepare_utterances(std::move(corpus.test), model_cfg,
                                       train_cfg.downsample);

  std::string out = resolve(args, out_dir);
  RunResult result = run_training(train_cfg, model_cfg, train, validation, out,
                                  resolve(args, resume), stop_after);

  // final report artifacts next to the metrics stream
  std::map<std::string, double> extra;
  if (fs::exists(result.best_checkpoint)) {
    LoadedModel best = load_model(result.best_checkpoint);
    std::vector<Utterance> val_utts;
    for (const auto& tu : validation) val_utts.push_back(tu.utt);
    CerReport best_eval = evaluate_corpus_threaded(best.params, best.config,
                                                   val_utts, args.threads);
    extra["sub_rate"] = best_eval.sub_rate();
    extra["del_rate"] = best_eval.del_rate();
    extra["ins_rate"] = best_eval.ins_rate();
  }
  emit_report(result.metrics_path, out + "/report.csv", out + "/summary.json",
              extra);

  std::printf("mode %s: best val CER %.4f%% at step %ld\n",
              TrainConfig::mode_name(train_cfg.mode), result.best_cer,
              result.best_step);
  std::printf("best checkpoint: %s\n", result.best_checkpoint.c_str());
  std::printf("metrics: %s\n", result.metrics_path.c_str());
  return 0;
}

int cmd_evaluate(const CommonArgs& args, const std::string& ckpt_path,
                 const std::string& data_dir, const std::string& split,
                 const std::string& json_out) {
  LoadedModel model = load_model(resolve(args, ckpt_path));
  LoadedCorpus corpus = load_corpus(resolve(args, data_dir));
  const std::vector<Utterance>& utts =
      split == "train" ? corpus.train : corpus.test;
  check_data(!utts.empty(), "no utterances in split " + split);
  check_data(utts[0].feature_dim() == model.config.d_s,
             "corpus feature dim disagrees with the checkpoint");
  CerReport report =
      evaluate_corpus_threaded(model.params, model.config, utts, args.threads);
  print_cer(split.c_str(), report);
  if (!json_out.empty()) {
    nlohmann::ordered_json j;
    j["split"] = split;
    j["cer"] = report.cer();
    j["sub_rate"] = report.sub_rate();
    j["del_rate"] = report.del_rate();
    j["ins_rate"] = report.ins_rate();
    j["errors"] = report.errors();
    j["ref_tokens"] = report.ref_tokens;
    std::ofstream out(resolve(args, json_out));
    check_data(out.good(), "cannot write " + json_out);
    out << j.dump(2) << "\n";
  }
  return 0;
}

int cmd_audit(const CommonArgs& args, const std::string& data_dir,
              const std::string& split, int trials,
              const std::string& json_out) {
  Config cfg = build_config(args);
  LoadedCorpus corpus = load_corpus(resolve(args, data_dir));
  const std::vector<Utterance>& utts =
      split == "train" ? corpus.train : corpus.test;
  check_data(!utts.empty(), "no utterances in split " + split);

  ModelConfig model_cfg = ModelConfig::from_config(
      cfg, utts[0].feature_dim(), corpus.vocab.size());
  MaskConfig mask_cfg = MaskConfig::from_config(cfg);
  check_data(mask_cfg.mode != MaskConfig::Mode::kNone,
             "audit-negatives needs mask.mode phoneme or fixed");
  ContrastiveConfig scl_cfg = ContrastiveConfig::from_config(cfg);
  DownsampleRule rule = cfg.get_string("align.downsample") == "center"
                            ? DownsampleRule::kCenter
                            : DownsampleRule::kMajority;

  std::vector<AlignmentTrack> tracks;
  for (const auto& utt : utts)
    tracks.push_back(downsample_alignment(utt, model_cfg.strides(), rule));
  int silence_id =
      mask_cfg.exclude_silence_anchors ? corpus.inventory.silence_id() : -1;
  uint64_t seed = seed_of(cfg);

  ContrastiveConfig supervised = scl_cfg;
  supervised.supervised = true;
  ContrastiveConfig unsupervised = scl_cfg;
  unsupervised.supervised = false;
  NegativeAudit sup =
      audit_negatives(tracks, mask_cfg, supervised, trials, seed, silence_id);
  NegativeAudit unsup =
      audit_negatives(tracks, mask_cfg, unsupervised, trials, seed, silence_id);

  std::printf("%-14s %12s %12s %12s\n", "sampler", "noisy", "total", "rate");
  std::printf("%-14s %12ld %12ld %12.4f\n", "supervised", sup.noisy_pairs,
              sup.total_pairs, sup.noisy_rate());
  std::printf("%-14s %12ld %12ld %12.4f\n", "unsupervised", unsup.noisy_pairs,
              unsup.total_pairs, unsup.noisy_rate());
  if (!json_out.empty()) {
    nlohmann::ordered_json j;
    j["supervised"] = {{"noisy_pairs", sup.noisy_pairs},
                       {"total_pairs", sup.total_pairs},
                       {"noisy_rate", sup.noisy_rate()}};
    j["unsupervised"] = {{"noisy_pairs", unsup.noisy_pairs},
                         {"total_pairs", unsup.total_pairs},
                         {"noisy_rate", unsup.noisy_rate()}};
    j["noisy_negative_rate"] = unsup.noisy_rate();
    std::ofstream out(resolve(args, json_out));
    check_data(out.good(), "cannot write " + json_out);
    out << j.dump(2) << "\n";
  }
  return 0;
}

int cmd_grad_check(const CommonArgs& args, int seeds, double tol,
                   int max_coords) {
  Config cfg = build_config(args);
  SynthSpec spec = SynthSpec::from_config(cfg);
  spec.n_train = 1;
  spec.n_test = 0;
  double worst = 0.0;
  for (int s = 0; s < seeds; ++s) {
    uint64_t seed = seed_of(cfg) + static_cast<uint64_t>(s);
    SynthCorpus corpus = generate_synthetic_corpus(spec, seed);
    ModelConfig model_cfg =
        ModelConfig::from_config(cfg, spec.d_s, corpus.vocab.size());
    const Utterance& utt = corpus.train[0];
    AlignmentTrack track =
        downsample_alignment(utt, model_cfg.strides(), DownsampleRule::kMajority);

    ParamStore params = init_model(model_cfg, seed);
    Rng rng = Rng::substream(seed, 0x6c);
    MaskConfig mask_cfg = MaskConfig::from_config(cfg);
    mask_cfg.p_e = std::max(mask_cfg.p_e, 0.2);  // a few anchors, always
    MaskPlan plan = plan_phoneme_mask(track, mask_cfg, rng);
    ContrastiveConfig scl_cfg = ContrastiveConfig::from_config(cfg);
    scl_cfg.negatives = std::min(scl_cfg.negatives, 8);
    auto samples = sample_contrastive(plan, track, scl_cfg, rng);

    auto loss = [&]() {
      EncoderOutputs out = forward(params, model_cfg, utt.features, plan);
      Tensor total = ctc_loss(out.log_probs, utt.transcript);
      if (!samples.empty())
        total = add(total, scl_loss(out.c, out.q, samples, scl_cfg.tau));
      return total;
    };
    GradCheckReport report =
        finite_diff_check(params, loss, 1e-5, max_coords, seed);
    const GradCheckEntry* worst_entry = nullptr;
    for (const auto& e : report.entries)
      if (!worst_entry || e.max_rel_err > worst_entry->max_rel_err)
        worst_entry = &e;
    std::printf("seed %llu: max rel err %.3e (%s), %d anchors\n",
                static_cast<unsigned long long>(seed), report.max_rel_err,
                worst_entry ? worst_entry->name.c_str() : "-",
                static_cast<int>(samples.size()));
    worst = std::max(worst, report.max_rel_err);
  }
  std::printf("grad-check max rel err %.3e (tolerance %.1e)\n", worst, tol);
  if (worst > tol) {
    std::cerr << "grad-check FAILED\n";
    return 3;
  }
  return 0;
}

int cmd_ctc_oracle(const CommonArgs& args, int max_s, int max_v, int max_y,
                   int trials, double tol) {
  Config cfg = build_config(args);
  Rng rng(seed_of(cfg));
  double worst = 0.0;
  long tested = 0;
  while (tested < trials) {
    int s_len = 1 + rng.uniform_int(max_s);
    int vocab = 2 + rng.uniform_int(max_v - 1);
    int n = 1 + rng.uniform_int(max_y);
    std::vector<int> y;
    for (int i = 0; i < n; ++i) y.push_back(1 + rng.uniform_int(vocab - 1));
    if (s_len < ctc_min_frames(y)) continue;
    std::vector<double> logits(static_cast<size_t>(s_len) * vocab);
    for (double& v : logits) v = 4.0 * rng.uniform01() - 2.0;
    Tensor lp = log_softmax(
        Tensor::from_values({s_len, vocab}, std::move(logits)), 1);
    double dp = 0.0;
    {
      NoGradGuard guard;
      dp = ctc_loss(lp, y).value();
    }
    double brute = oracle_ctc_bruteforce(lp, y);
    worst = std::max(worst, std::fabs(dp - brute));
    ++tested;
  }
  std::printf("ctc-oracle: %ld instances, max |DP - enumeration| = %.3e\n",
              tested, worst);
  if (worst > tol) {
    std::cerr << "ctc-oracle FAILED (tolerance " << tol << ")\n";
    return 3;
  }
  return 0;
}

int cmd_report(const CommonArgs& args, const std::string& metrics_path,
               const std::string& csv_path, const std::string& json_path,
               const std::string& eval_json) {
  std::map<std::string, double> extra;
  if (!eval_json.empty()) {
    std::ifstream in(resolve(args, eval_json));
    check_data(in.good(), "cannot open " + eval_json);
    nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
    check_data(!j.is_discarded(), eval_json + ": not valid JSON");
    for (const char* key :
         {"sub_rate", "del_rate", "ins_rate", "noisy_negative_rate"})
      if (j.contains(key) && j[key].is_number())
        extra[key] = j[key].get<double>();
  }
  emit_report(resolve(args, metrics_path), resolve(args, csv_path),
              resolve(args, json_path), extra);
  std::printf("wrote %s and %s\n", csv_path.c_str(), json_path.c_str());
  return 0;
}

}  // namespace

// Brute-force CTC path enumeration; lives here so the oracle the CLI exposes
// is independent of the DP implementation in the library.
double oracle_ctc_bruteforce(const Tensor& log_probs,
                             const std::vector<int>& targets) {
  const int s_len = log_probs.dim(0), vocab = log_probs.dim(1);
  std::vector<int> path(static_cast<size_t>(s_len), 0);
  double total = 0.0;
  while (true) {
    double logp = 0.0;
    for (int t = 0; t < s_len; ++t)
      logp += log_probs.at(t, path[static_cast<size_t>(t)]);
    std::vector<int> collapsed;
    int prev = -1;
    for (int v : path) {
      if (v != prev && v != 0) collapsed.push_back(v);
      prev = v;
    }
    if (collapsed == targets) total += std::exp(logp);
    int pos = s_len - 1;
    while (pos >= 0 && path[static_cast<size_t>(pos)] == vocab - 1) {
      path[static_cast<size_t>(pos)] = 0;
      --pos;
    }
    if (pos < 0) break;
    ++path[static_cast<size_t>(pos)];
  }
  return -std::log(total);
}

int main(int argc, char** argv) {
  CLI::App app{"SCaLa: supervised contrastive learning for CTC recognition "
               "on synthetic corpora with exact alignments"};
  app.require_subcommand(1);
  app.footer(Config::help_text());

  CommonArgs args;

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic corpus");
  add_common(gen, args);
  std::string gen_out = "data";
  gen->add_option("--out", gen_out, "output corpus directory");

  auto* train = app.add_subcommand("train", "train a model");
  add_common(train, args);
  std::string train_data = "data", train_out = "run", train_resume;
  long stop_after = 0;
  train->add_option("--data", train_data, "corpus directory");
  train->add_option("--out", train_out, "run output directory");
  train->add_option("--resume", train_resume, "trainer checkpoint to resume");
  train->add_option("--stop-after", stop_after,
                    "stop this session after N steps (schedule unchanged)");

  auto* eval = app.add_subcommand("evaluate", "evaluate a checkpoint");
  add_common(eval, args);
  std::string eval_ckpt, eval_data = "data", eval_split = "test", eval_json;
  eval->add_option("--ckpt", eval_ckpt, "model checkpoint")->required();
  eval->add_option("--data", eval_data, "corpus directory");
  eval->add_option("--split", eval_split, "train or test")
      ->check(CLI::IsMember({"train", "test"}));
  eval->add_option("--json", eval_json, "also write a JSON report");

  auto* audit = app.add_subcommand(
      "audit-negatives", "noisy-negative rates for both samplers");
  add_common(audit, args);
  std::string audit_data = "data", audit_split = "test", audit_json;
  int audit_trials = 10;
  audit->add_option("--data", audit_data, "corpus directory");
  audit->add_option("--split", audit_split, "train or test")
      ->check(CLI::IsMember({"train", "test"}));
  audit->add_option("--trials", audit_trials, "mask/sample simulation rounds");
  audit->add_option("--json", audit_json, "also write a JSON report");

  auto* grad = app.add_subcommand("grad-check",
                                  "full-model finite-difference gradient check");
  add_common(grad, args);
  int grad_seeds = 5, grad_max_coords = 0;
  double grad_tol = 1e-4;
  grad->add_option("--seeds", grad_seeds, "number of seeds");
  grad->add_option("--tol", grad_tol, "max relative error tolerance");
  grad->add_option("--max-coords", grad_max_coords,
                   "coordinates probed per parameter (0 = all)");

  auto* oracle = app.add_subcommand(
      "ctc-oracle", "compare the CTC DP against exhaustive path enumeration");
  add_common(oracle, args);
  int oracle_max_s = 6, oracle_max_v = 4, oracle_max_y = 3,
      oracle_trials = 10000;
  double oracle_tol = 1e-9;
  oracle->add_option("--max-S", oracle_max_s, "max frame count");
  oracle->add_option("--max-V", oracle_max_v, "max vocabulary size incl blank");
  oracle->add_option("--max-y", oracle_max_y, "max target length");
  oracle->add_option("--trials", oracle_trials, "random instances");
  oracle->add_option("--tol", oracle_tol, "max absolute difference");

  auto* report = app.add_subcommand("report",
                                    "metrics stream -> CSV + JSON summary");
  add_common(report, args);
  std::string rep_metrics, rep_csv = "report.csv", rep_json = "summary.json",
              rep_eval;
  report->add_option("--metrics", rep_metrics, "metrics JSONL stream")
      ->required();
  report->add_option("--csv", rep_csv, "output CSV path");
  report->add_option("--json", rep_json, "output summary path");
  report->add_option("--eval-json", rep_eval,
                     "evaluate/audit JSON to merge into the summary");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(args, gen_out);
    if (train->parsed())
      return cmd_train(args, train_data, train_out, train_resume, stop_after);
    if (eval->parsed())
      return cmd_evaluate(args, eval_ckpt, eval_data, eval_split, eval_json);
    if (audit->parsed())
      return cmd_audit(args, audit_data, audit_split, audit_trials, audit_json);
    if (grad->parsed())
      return cmd_grad_check(args, grad_seeds, grad_tol, grad_max_coords);
    if (oracle->parsed())
      return cmd_ctc_oracle(args, oracle_max_s, oracle_max_v, oracle_max_y,
                            oracle_trials, oracle_tol);
    if (report->parsed())
      return cmd_report(args, rep_metrics, rep_csv, rep_json, rep_eval);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 1;
}
