#pragma once

#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "scala/corpus.hpp"
#include "scala/error.hpp"
#include "scala/losses.hpp"
#include "scala/masking.hpp"
#include "scala/model.hpp"
#include "scala/rng.hpp"

namespace scala {

// ---------------------------------------------------------------------------
// Edit distance and CER
// ---------------------------------------------------------------------------

struct CerReport {
  long substitutions = 0;
  long deletions = 0;
  long insertions = 0;
  long ref_tokens = 0;

  long errors() const { return substitutions + deletions + insertions; }
  double cer() const { return 100.0 * static_cast<double>(errors()) / static_cast<double>(ref_tokens); }
  double sub_rate() const { return 100.0 * static_cast<double>(substitutions) / static_cast<double>(ref_tokens); }
  double del_rate() const { return 100.0 * static_cast<double>(deletions) / static_cast<double>(ref_tokens); }
  double ins_rate() const { return 100.0 * static_cast<double>(insertions) / static_cast<double>(ref_tokens); }

  void merge(const CerReport& other) {
    substitutions += other.substitutions;
    deletions += other.deletions;
    insertions += other.insertions;
    ref_tokens += other.ref_tokens;
  }
};

// Unit-cost Levenshtein alignment of hyp against ref. Among minimal-cost
// alignments the backtrace prefers substitution over deletion over insertion,
// which fixes the SUB/DEL/INS decomposition deterministically.
inline CerReport edit_alignment(const std::vector<int>& ref,
                                const std::vector<int>& hyp) {
  check_data(!ref.empty(), "edit_alignment: empty reference, rates undefined");
  const size_t r = ref.size(), h = hyp.size();
  std::vector<int> dist((r + 1) * (h + 1));
  auto at = [&](size_t i, size_t j) -> int& { return dist[i * (h + 1) + j]; };
  for (size_t i = 0; i <= r; ++i) at(i, 0) = static_cast<int>(i);
  for (size_t j = 0; j <= h; ++j) at(0, j) = static_cast<int>(j);
  for (size_t i = 1; i <= r; ++i) {
    for (size_t j = 1; j <= h; ++j) {
      int diag = at(i - 1, j - 1) + (ref[i - 1] != hyp[j - 1] ? 1 : 0);
      int del = at(i - 1, j) + 1;
      int ins = at(i, j - 1) + 1;
      at(i, j) = std::min({diag, del, ins});
    }
  }
  CerReport report;
  report.ref_tokens = static_cast<long>(r);
  size_t i = r, j = h;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0 &&
        at(i, j) == at(i - 1, j - 1) + (ref[i - 1] != hyp[j - 1] ? 1 : 0)) {
      if (ref[i - 1] != hyp[j - 1]) ++report.substitutions;
      --i;
      --j;
    } else if (i > 0 && at(i, j) == at(i - 1, j) + 1) {
      ++report.deletions;
      --i;
    } else {
      ++report.insertions;
      --j;
    }
  }
  return report;
}

// Corpus-level CER: error and reference counts are pooled over utterances
// before dividing (not a mean of per-utterance rates).
inline CerReport evaluate_corpus(const ParamStore& params,
                                 const ModelConfig& cfg,
                                 const std::vector<Utterance>& utterances) {
  CerReport pooled;
  NoGradGuard guard;
  for (const auto& utt : utterances) {
    EncoderOutputs out = forward(params, cfg, utt.features, MaskPlan{});
    pooled.merge(edit_alignment(utt.transcript, greedy_decode(out.log_probs)));
  }
  return pooled;
}

// ---------------------------------------------------------------------------
// Noisy-negative audit
// ---------------------------------------------------------------------------

struct NegativeAudit {
  long total_pairs = 0;
  long noisy_pairs = 0;

  double noisy_rate() const {
    return total_pairs == 0
               ? 0.0
               : static_cast<double>(noisy_pairs) / static_cast<double>(total_pairs);
  }
};

// Simulates mask planning plus negative sampling n_trials times over the
// corpus and counts pairs whose negative shares the anchor's label. The
// supervised sampler must report exactly zero.
inline NegativeAudit audit_negatives(const std::vector<AlignmentTrack>& tracks,
                                     const MaskConfig& mask_cfg,
                                     const ContrastiveConfig& scl_cfg,
                                     int n_trials, uint64_t seed,
                                     int silence_label_id = -1) {
  check_data(n_trials >= 1, "audit_negatives: n_trials must be >= 1");
  NegativeAudit audit;
  Rng rng = Rng::substream(seed, 0xa0d17);
  for (int trial = 0; trial < n_trials; ++trial) {
    for (const auto& track : tracks) {
      MaskPlan plan = plan_mask(track, mask_cfg, rng);
      auto samples =
          sample_contrastive(plan, track, scl_cfg, rng, silence_label_id);
      for (const auto& sample : samples) {
        int anchor_label = track.labels[static_cast<size_t>(sample.anchor)];
        for (int k : sample.negatives) {
          ++audit.total_pairs;
          if (track.labels[static_cast<size_t>(k)] == anchor_label)
            ++audit.noisy_pairs;
        }
      }
    }
  }
  return audit;
}

// ---------------------------------------------------------------------------
// Metrics stream and reports
// ---------------------------------------------------------------------------

struct MetricsRecord {
  long step;
  std::string kind;  // train_ctc | train_scl | val_ctc | val_cer
  double value;
};

inline std::string format_metrics_record(const MetricsRecord& rec) {
  nlohmann::ordered_json j;
  j["step"] = rec.step;
  j["kind"] = rec.kind;
  j["value"] = rec.value;
  return j.dump();
}

inline std::vector<MetricsRecord> read_metrics_stream(const std::string& path) {
  std::ifstream in(path);
  check_data(in.good(), "cannot open metrics stream: " + path);
  std::vector<MetricsRecord> records;
  std::string line;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    check_data(!j.is_discarded() && j.contains("step") && j.contains("kind") &&
                   j.contains("value"),
               path + ":" + std::to_string(lineno) + ": malformed stream line");
    records.push_back({j["step"].get<long>(), j["kind"].get<std::string>(),
                       j["value"].get<double>()});
  }
  return records;
}

inline const std::vector<std::string>& metric_kinds() {
  static const std::vector<std::string> kinds = {"train_ctc", "train_scl",
                                                 "val_ctc", "val_cer"};
  return kinds;
}

namespace detail {

inline std::string format_full(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

// Step-indexed CSV with one column per metric kind; missing cells stay blank.
inline void write_report_csv(const std::vector<MetricsRecord>& records,
                             const std::string& csv_path) {
  std::map<long, std::map<std::string, double>> by_step;
  for (const auto& rec : records) by_step[rec.step][rec.kind] = rec.value;
  std::ofstream out(csv_path, std::ios::binary);
  check_data(out.good(), "cannot write report CSV: " + csv_path);
  out << "step";
  for (const auto& kind : metric_kinds()) out << "," << kind;
  out << "\n";
  for (const auto& [step, vals] : by_step) {
    out << step;
    for (const auto& kind : metric_kinds()) {
      out << ",";
      auto it = vals.find(kind);
      if (it != vals.end()) out << detail::format_full(it->second);
    }
    out << "\n";
  }
}

inline std::vector<MetricsRecord> read_report_csv(const std::string& csv_path) {
  std::ifstream in(csv_path);
  check_data(in.good(), "cannot open report CSV: " + csv_path);
  std::string line;
  check_data(static_cast<bool>(std::getline(in, line)), csv_path + ": empty CSV");
  std::vector<MetricsRecord> records;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto cols = io::split(line, ',');
    check_data(cols.size() == metric_kinds().size() + 1,
               csv_path + ": bad row " + line);
    long step = std::stol(cols[0]);
    for (size_t k = 0; k < metric_kinds().size(); ++k)
      if (!cols[k + 1].empty())
        records.push_back({step, metric_kinds()[k], std::stod(cols[k + 1])});
  }
  return records;
}

// Summary keys are fixed; entries the stream cannot provide (the CER
// decomposition and the audit rate) come from `extra` or stay null.
inline nlohmann::ordered_json summarize_metrics(
    const std::vector<MetricsRecord>& records,
    const std::map<std::string, double>& extra = {}) {
  nlohmann::ordered_json summary;
  std::optional<double> final_cer, best_cer;
  std::optional<long> best_step;
  long final_step = -1;
  for (const auto& rec : records) {
    if (rec.kind != "val_cer") continue;
    if (rec.step >= final_step) {
      final_step = rec.step;
      final_cer = rec.value;
    }
    if (!best_cer || rec.value < *best_cer) {
      best_cer = rec.value;
      best_step = rec.step;
    }
  }
  auto put = [&](const char* key, std::optional<double> v) {
    if (v)
      summary[key] = *v;
    else
      summary[key] = nullptr;
  };
  put("final_cer", final_cer);
  put("best_cer", best_cer);
  if (best_step)
    summary["best_step"] = *best_step;
  else
    summary["best_step"] = nullptr;
  for (const char* key :
       {"sub_rate", "del_rate", "ins_rate", "noisy_negative_rate"}) {
    auto it = extra.find(key);
    put(key, it == extra.end() ? std::nullopt
                               : std::optional<double>(it->second));
  }
  return summary;
}

// stream (JSONL) -> CSV + JSON summary. Idempotent for identical input.
inline void emit_report(const std::string& stream_path,
                        const std::string& csv_path,
                        const std::string& json_path,
                        const std::map<std::string, double>& extra = {}) {
  auto records = read_metrics_stream(stream_path);
  write_report_csv(records, csv_path);
  std::ofstream out(json_path, std::ios::binary);
  check_data(out.good(), "cannot write summary: " + json_path);
  out << summarize_metrics(records, extra).dump(2) << "\n";
}

}  // namespace scala
