#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "scala/config.hpp"
#include "scala/corpus.hpp"
#include "scala/rng.hpp"

namespace scala {

// Synthetic-corpus recipe: every phoneme owns a Gaussian cluster center in
// feature space; utterances are random token sequences expanded to phonemes,
// each emitting duration-many noisy frames around its center. Ground-truth
// segment boundaries are exact (optionally jittered to imitate an imperfect
// forced aligner).
struct SynthSpec {
  int n_train = 200;
  int n_test = 50;
  int n_phonemes = 10;  // including silence
  int n_tokens = 20;
  int d_s = 8;
  int dur_min = 2;
  int dur_max = 4;
  int phonemes_per_token = 2;
  int tokens_min = 3;
  int tokens_max = 6;
  double sigma = 0.6;
  double center_sep = 1.5;
  int center_tries = 100;
  double sil_prob = 0.3;
  int align_jitter = 0;

  static SynthSpec from_config(const Config& cfg) {
    SynthSpec s;
    s.n_train = cfg.get_int("synth.n_train");
    s.n_test = cfg.get_int("synth.n_test");
    s.n_phonemes = cfg.get_int("synth.n_phonemes");
    s.n_tokens = cfg.get_int("synth.n_tokens");
    s.d_s = cfg.get_int("synth.d_s");
    s.dur_min = cfg.get_int("synth.dur_min");
    s.dur_max = cfg.get_int("synth.dur_max");
    s.phonemes_per_token = cfg.get_int("synth.phonemes_per_token");
    s.tokens_min = cfg.get_int("synth.tokens_min");
    s.tokens_max = cfg.get_int("synth.tokens_max");
    s.sigma = cfg.get_double("synth.sigma");
    s.center_sep = cfg.get_double("synth.center_sep");
    s.center_tries = cfg.get_int("synth.center_tries");
    s.sil_prob = cfg.get_double("synth.sil_prob");
    s.align_jitter = cfg.get_int("synth.align_jitter");
    return s;
  }

  void validate() const {
    check_data(n_train + n_test >= 1, "synth: need at least one utterance");
    check_data(n_phonemes >= 3, "synth: need >= 3 phonemes");
    check_data(d_s >= 2, "synth: feature dim must be >= 2");
    check_data(n_tokens >= 2, "synth: need >= 2 tokens");
    check_data(dur_min >= 1 && dur_max >= dur_min, "synth: bad duration range");
    check_data(phonemes_per_token == 1 || phonemes_per_token == 2,
               "synth: phonemes_per_token must be 1 or 2");
    check_data(tokens_min >= 1 && tokens_max >= tokens_min,
               "synth: bad tokens-per-utterance range");
    check_data(sigma >= 0.0, "synth: sigma must be >= 0");
    check_data(sil_prob >= 0.0 && sil_prob <= 1.0, "synth: bad sil_prob");
    check_data(align_jitter >= 0, "synth: align_jitter must be >= 0");
    int usable = n_phonemes - 1;  // silence carries no token
    long combos = phonemes_per_token == 1
                      ? usable
                      : static_cast<long>(usable) * (usable - 1);
    check_data(static_cast<long>(n_tokens) <= combos,
               "synth: not enough phoneme combinations for the vocabulary");
  }
};

namespace detail {

inline std::string zero_pad(int v, int width) {
  std::string s = std::to_string(v);
  while (static_cast<int>(s.size()) < width) s = "0" + s;
  return s;
}

}  // namespace detail

// In-memory corpus, produced by the generator and written to disk afterwards.
struct SynthCorpus {
  PhonemeInventory inventory;
  Vocabulary vocab;
  std::vector<Utterance> train;
  std::vector<Utterance> test;
  std::vector<std::vector<int>> token_phonemes;  // token id-1 -> phoneme ids
  std::vector<std::vector<double>> centers;      // phoneme id -> center
};

inline SynthCorpus generate_synthetic_corpus(const SynthSpec& spec,
                                             uint64_t seed) {
  spec.validate();
  SynthCorpus corpus;

  corpus.inventory.silence_label = "sil";
  corpus.inventory.phonemes.push_back("sil");
  for (int i = 1; i < spec.n_phonemes; ++i)
    corpus.inventory.phonemes.push_back("p" + detail::zero_pad(i, 2));
  for (int i = 0; i < spec.n_tokens; ++i)
    corpus.vocab.tokens.push_back("w" + detail::zero_pad(i, 2));

  // Cluster centers with a minimum pairwise separation.
  Rng center_rng = Rng::substream(seed, 0);
  for (int p = 0; p < spec.n_phonemes; ++p) {
    bool placed = false;
    for (int attempt = 0; attempt < spec.center_tries && !placed; ++attempt) {
      std::vector<double> c(static_cast<size_t>(spec.d_s));
      for (double& v : c) v = center_rng.normal();
      placed = true;
      for (const auto& other : corpus.centers) {
        double d2 = 0;
        for (int i = 0; i < spec.d_s; ++i)
          d2 += (c[static_cast<size_t>(i)] - other[static_cast<size_t>(i)]) *
                (c[static_cast<size_t>(i)] - other[static_cast<size_t>(i)]);
        if (d2 < spec.center_sep * spec.center_sep) {
          placed = false;
          break;
        }
      }
      if (placed) corpus.centers.push_back(std::move(c));
    }
    check_data(placed,
               "synth: could not place separated cluster centers; lower "
               "synth.center_sep or synth.n_phonemes");
  }

  // Token pronunciations: distinct ordered tuples of non-silence phonemes.
  Rng map_rng = Rng::substream(seed, 1);
  std::vector<std::vector<int>> pool;
  if (spec.phonemes_per_token == 1) {
    for (int p = 1; p < spec.n_phonemes; ++p) pool.push_back({p});
  } else {
    for (int a = 1; a < spec.n_phonemes; ++a)
      for (int b = 1; b < spec.n_phonemes; ++b)
        if (a != b) pool.push_back({a, b});
  }
  corpus.token_phonemes = map_rng.sample_without_replacement(
      pool, static_cast<size_t>(spec.n_tokens));

  Rng utt_rng = Rng::substream(seed, 2);
  auto make_utt = [&](const std::string& id) {
    Utterance utt;
    utt.id = id;
    int n_tok = spec.tokens_min +
                utt_rng.uniform_int(spec.tokens_max - spec.tokens_min + 1);
    std::vector<int> phones;
    bool lead_sil = utt_rng.bernoulli(spec.sil_prob);
    bool tail_sil = utt_rng.bernoulli(spec.sil_prob);
    if (lead_sil) phones.push_back(0);
    for (int i = 0; i < n_tok; ++i) {
      int tok = 1 + utt_rng.uniform_int(spec.n_tokens);
      utt.transcript.push_back(tok);
      for (int p : corpus.token_phonemes[static_cast<size_t>(tok - 1)])
        phones.push_back(p);
    }
    if (tail_sil) phones.push_back(0);

    std::vector<int> durations;
    int t_total = 0;
    for (size_t i = 0; i < phones.size(); ++i) {
      int dur = spec.dur_min +
                utt_rng.uniform_int(spec.dur_max - spec.dur_min + 1);
      durations.push_back(dur);
      t_total += dur;
    }

    std::vector<double> data(static_cast<size_t>(spec.d_s) * t_total);
    int cursor = 0;
    for (size_t i = 0; i < phones.size(); ++i) {
      int p = phones[i];
      PhonemeSegment seg;
      seg.label = corpus.inventory.phonemes[static_cast<size_t>(p)];
      seg.label_id = p;
      seg.start = cursor;
      seg.end = cursor + durations[i];
      utt.segments.push_back(seg);
      for (int t = seg.start; t < seg.end; ++t) {
        for (int d = 0; d < spec.d_s; ++d) {
          double v = corpus.centers[static_cast<size_t>(p)][static_cast<size_t>(d)] +
                     spec.sigma * utt_rng.normal();
          // features live on disk as f32; round now so memory == file
          data[static_cast<size_t>(d) * t_total + t] =
              static_cast<double>(static_cast<float>(v));
        }
      }
      cursor = seg.end;
    }
    utt.features = Tensor::from_values({spec.d_s, t_total}, std::move(data));

    // Boundary jitter: shift recorded boundaries (not the audio) to imitate
    // forced-aligner error. Each internal boundary moves by at most +/-j,
    // clamped so segments keep at least one frame.
    if (spec.align_jitter > 0) {
      for (size_t b = 1; b < utt.segments.size(); ++b) {
        auto& prev = utt.segments[b - 1];
        auto& next = utt.segments[b];
        int shift = utt_rng.uniform_int(2 * spec.align_jitter + 1) -
                    spec.align_jitter;
        int boundary = next.start + shift;
        boundary = std::max(boundary, prev.start + 1);
        boundary = std::min(boundary, next.end - 1);
        prev.end = boundary;
        next.start = boundary;
      }
    }
    return utt;
  };

  for (int i = 0; i < spec.n_train; ++i)
    corpus.train.push_back(make_utt("train_" + detail::zero_pad(i, 4)));
  for (int i = 0; i < spec.n_test; ++i)
    corpus.test.push_back(make_utt("test_" + detail::zero_pad(i, 4)));
  return corpus;
}

// Corpus directory layout:
//   inventory.txt vocab.txt
//   features/<id>.sclf
//   alignments.tsv transcripts.tsv
//   manifest_train.tsv manifest_test.tsv
inline void write_corpus(const SynthCorpus& corpus, const std::string& outdir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(outdir + "/features", ec);
  check_data(!ec, "cannot create output directory: " + outdir);

  corpus.inventory.save(outdir + "/inventory.txt");
  corpus.vocab.save(outdir + "/vocab.txt");

  std::ofstream align(outdir + "/alignments.tsv", std::ios::binary);
  std::ofstream trans(outdir + "/transcripts.tsv", std::ios::binary);
  std::ofstream man_train(outdir + "/manifest_train.tsv", std::ios::binary);
  std::ofstream man_test(outdir + "/manifest_test.tsv", std::ios::binary);
  check_data(align.good() && trans.good() && man_train.good() && man_test.good(),
             "cannot write corpus files under " + outdir);

  auto emit = [&](const std::vector<Utterance>& utts, std::ofstream& manifest) {
    for (const auto& utt : utts) {
      std::string rel = "features/" + utt.id + ".sclf";
      write_feature_file(outdir + "/" + rel, utt.features);
      manifest << utt.id << "\t" << rel << "\n";
      for (const auto& seg : utt.segments)
        align << utt.id << "\t" << seg.start << "\t" << seg.end << "\t"
              << seg.label << "\n";
      trans << utt.id << "\t";
      for (size_t i = 0; i < utt.transcript.size(); ++i) {
        if (i) trans << " ";
        trans << corpus.vocab.token_at(utt.transcript[i]);
      }
      trans << "\n";
    }
  };
  emit(corpus.train, man_train);
  emit(corpus.test, man_test);
}

// Convenience loader for a directory written by write_corpus.
struct LoadedCorpus {
  PhonemeInventory inventory;
  Vocabulary vocab;
  std::vector<Utterance> train;
  std::vector<Utterance> test;
};

inline LoadedCorpus load_corpus(const std::string& dir) {
  LoadedCorpus corpus;
  corpus.inventory = PhonemeInventory::load(dir + "/inventory.txt");
  corpus.vocab = Vocabulary::load(dir + "/vocab.txt");
  corpus.train = load_manifest(dir + "/manifest_train.tsv", dir,
                               dir + "/alignments.tsv", dir + "/transcripts.tsv",
                               corpus.inventory, corpus.vocab);
  corpus.test = load_manifest(dir + "/manifest_test.tsv", dir,
                              dir + "/alignments.tsv", dir + "/transcripts.tsv",
                              corpus.inventory, corpus.vocab);
  return corpus;
}

}  // namespace scala
