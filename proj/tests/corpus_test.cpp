#include "scala/corpus.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "scala/synth.hpp"
#include "test_util.hpp"

using namespace scala;
namespace fs = std::filesystem;

namespace {

class TempDir {
 public:
  TempDir() {
    static int counter = 0;
    path_ = fs::temp_directory_path() /
            ("scala_corpus_test_" + std::to_string(::getpid()) + "_" +
             std::to_string(counter++));
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  std::string str() const { return path_.string(); }

 private:
  fs::path path_;
};

PhonemeInventory test_inventory() {
  PhonemeInventory inv;
  inv.phonemes = {"sil", "A", "B"};
  inv.silence_label = "sil";
  return inv;
}

Vocabulary test_vocab() {
  Vocabulary v;
  v.tokens = {"x", "y"};
  return v;
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  out << content;
}

// Writes a tiny corpus: one utterance, T frames, given alignment lines.
struct MiniCorpus {
  TempDir dir;
  PhonemeInventory inv = test_inventory();
  Vocabulary vocab = test_vocab();

  void write(int t_len, const std::string& alignment,
             const std::string& transcript = "u1\tx y") {
    Rng rng(1);
    Tensor feats = testutil::random_tensor({3, t_len}, rng);
    fs::create_directories(dir.str() + "/features");
    write_feature_file(dir.str() + "/features/u1.sclf", feats);
    write_file(dir.str() + "/manifest.tsv", "u1\tfeatures/u1.sclf\n");
    write_file(dir.str() + "/alignments.tsv", alignment);
    write_file(dir.str() + "/transcripts.tsv", transcript + "\n");
  }

  std::vector<Utterance> load() {
    return load_manifest(dir.str() + "/manifest.tsv", dir.str(),
                         dir.str() + "/alignments.tsv",
                         dir.str() + "/transcripts.tsv", inv, vocab);
  }
};

TEST(LoadManifestTest, FullCoverAccepted) {
  MiniCorpus c;
  c.write(10, "u1\t0\t4\tA\nu1\t4\t10\tB\n");
  auto utts = c.load();
  ASSERT_EQ(utts.size(), 1u);
  EXPECT_EQ(utts[0].frames(), 10);
  ASSERT_EQ(utts[0].segments.size(), 2u);
  EXPECT_EQ(utts[0].segments[1].label, "B");
  EXPECT_EQ(utts[0].transcript, (std::vector<int>{1, 2}));
}

TEST(LoadManifestTest, GapRejected) {
  MiniCorpus c;
  c.write(10, "u1\t0\t4\tA\nu1\t5\t10\tB\n");
  try {
    c.load();
    FAIL() << "expected alignment-coverage error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kData);
    EXPECT_NE(std::string(e.what()).find("alignment-coverage"),
              std::string::npos);
  }
}

TEST(LoadManifestTest, OverlapRejected) {
  MiniCorpus c;
  c.write(10, "u1\t0\t5\tA\nu1\t4\t10\tB\n");
  EXPECT_THROW(c.load(), Error);
}

TEST(LoadManifestTest, UnknownTokenRejected) {
  MiniCorpus c;
  c.write(10, "u1\t0\t10\tA\n", "u1\tx zz");
  try {
    c.load();
    FAIL() << "expected inventory error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("unknown token"), std::string::npos);
  }
}

TEST(LoadManifestTest, UnknownPhonemeRejected) {
  MiniCorpus c;
  c.write(10, "u1\t0\t10\tQ\n");
  EXPECT_THROW(c.load(), Error);
}

TEST(LoadManifestTest, MissingIdRejected) {
  MiniCorpus c;
  c.write(10, "u2\t0\t10\tA\n");
  try {
    c.load();
    FAIL() << "expected lookup error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("lookup"), std::string::npos);
  }
}

TEST(FeatureFileTest, RoundTripIsValueIdentical) {
  TempDir dir;
  Rng rng(3);
  // f32-representable values survive exactly
  std::vector<double> vals(12);
  for (double& v : vals)
    v = static_cast<double>(static_cast<float>(rng.normal()));
  Tensor t = Tensor::from_values({3, 4}, vals);
  write_feature_file(dir.str() + "/f.sclf", t);
  Tensor back = read_feature_file(dir.str() + "/f.sclf");
  EXPECT_EQ(back.shape(), t.shape());
  EXPECT_EQ(back.data(), t.data());
}

TEST(FeatureFileTest, BadMagicRejected) {
  TempDir dir;
  write_file(dir.str() + "/bad.sclf", "NOPE1234567890");
  EXPECT_THROW(read_feature_file(dir.str() + "/bad.sclf"), Error);
}

Utterance utt_with_labels(const std::vector<int>& frame_labels,
                          const PhonemeInventory& inv) {
  Utterance utt;
  utt.id = "u";
  int t_len = static_cast<int>(frame_labels.size());
  utt.features = Tensor::zeros({2, t_len});
  utt.transcript = {1};
  int start = 0;
  for (int t = 0; t < t_len; ++t) {
    if (t + 1 == t_len || frame_labels[t + 1] != frame_labels[t]) {
      PhonemeSegment seg;
      seg.label_id = frame_labels[t];
      seg.label = inv.phonemes[static_cast<size_t>(seg.label_id)];
      seg.start = start;
      seg.end = t + 1;
      utt.segments.push_back(seg);
      start = t + 1;
    }
  }
  return utt;
}

TEST(DownsampleTest, PairMajority) {
  auto inv = test_inventory();
  // [A,A,B,B] stride 2 -> [A,B]
  Utterance utt = utt_with_labels({1, 1, 2, 2}, inv);
  AlignmentTrack track = downsample_alignment(utt, {2});
  EXPECT_EQ(track.labels, (std::vector<int>{1, 2}));
  ASSERT_EQ(track.spans.size(), 2u);
  EXPECT_EQ(track.spans[0].label, 1);
  EXPECT_EQ(track.spans[0].start, 0);
  EXPECT_EQ(track.spans[0].end, 1);
  EXPECT_EQ(track.spans[1].label, 2);
  EXPECT_EQ(track.spans[1].start, 1);
  EXPECT_EQ(track.spans[1].end, 2);
}

TEST(DownsampleTest, TieBreaksToEarliestLabel) {
  auto inv = test_inventory();
  // [A,B] with stride 2: one window, tie, earliest wins
  Utterance utt = utt_with_labels({1, 2}, inv);
  AlignmentTrack track = downsample_alignment(utt, {2});
  EXPECT_EQ(track.labels, (std::vector<int>{1}));
}

TEST(DownsampleTest, CenterRule) {
  auto inv = test_inventory();
  // window [A,B,B,B]: center frame (index 1) is B even though A starts
  Utterance utt = utt_with_labels({1, 2, 2, 2}, inv);
  AlignmentTrack track =
      downsample_alignment(utt, {4}, DownsampleRule::kCenter);
  EXPECT_EQ(track.labels, (std::vector<int>{2}));
}

TEST(DownsampleTest, SpansReconstructLabels) {
  auto inv = test_inventory();
  Rng rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    int t_len = 1 + rng.uniform_int(60);
    std::vector<int> frame_labels(static_cast<size_t>(t_len));
    int lab = rng.uniform_int(3);
    for (int t = 0; t < t_len; ++t) {
      if (rng.uniform01() < 0.3) lab = rng.uniform_int(3);
      frame_labels[static_cast<size_t>(t)] = lab;
    }
    Utterance utt = utt_with_labels(frame_labels, inv);
    std::vector<int> strides = trial % 2 ? std::vector<int>{2}
                                         : std::vector<int>{2, 2};
    AlignmentTrack track = downsample_alignment(utt, strides);
    // spans partition [0,S) and agree with labels
    std::vector<int> rebuilt;
    int total = 0;
    int cursor = 0;
    for (const auto& span : track.spans) {
      EXPECT_EQ(span.start, cursor);
      for (int i = span.start; i < span.end; ++i) rebuilt.push_back(span.label);
      total += span.end - span.start;
      cursor = span.end;
    }
    EXPECT_EQ(rebuilt, track.labels);
    EXPECT_EQ(total, track.length());
  }
}

TEST(DownsampleTest, LengthMatchesConvStack) {
  auto inv = test_inventory();
  Rng rng(19);
  for (int trial = 0; trial < 60; ++trial) {
    int t_len = 1 + rng.uniform_int(500);
    std::vector<int> frame_labels(static_cast<size_t>(t_len), 1);
    Utterance utt = utt_with_labels(frame_labels, inv);
    std::vector<int> strides = trial % 2 ? std::vector<int>{2}
                                         : std::vector<int>{2, 3};
    AlignmentTrack track = downsample_alignment(utt, strides);

    Tensor x = utt.features;
    for (int s : strides) {
      Tensor k = Tensor::constant({2, 2, 3}, 0.1);
      x = conv1d(x, k, s);
    }
    EXPECT_EQ(track.length(), x.dim(1)) << "T=" << t_len;
  }
}

SynthSpec tiny_spec() {
  SynthSpec spec;
  spec.n_train = 4;
  spec.n_test = 2;
  spec.n_phonemes = 5;
  spec.n_tokens = 6;
  spec.d_s = 4;
  return spec;
}

TEST(SynthTest, SingleTokenExpansion) {
  SynthSpec spec = tiny_spec();
  spec.n_train = 1;
  spec.n_test = 0;
  spec.tokens_min = spec.tokens_max = 1;
  spec.dur_min = spec.dur_max = 3;
  spec.sil_prob = 0.0;
  SynthCorpus corpus = generate_synthetic_corpus(spec, 7);
  ASSERT_EQ(corpus.train.size(), 1u);
  const Utterance& utt = corpus.train[0];
  ASSERT_EQ(utt.transcript.size(), 1u);
  // one token -> two phonemes, 3 frames each
  EXPECT_EQ(utt.frames(), 6);
  ASSERT_EQ(utt.segments.size(), 2u);
  EXPECT_EQ(utt.segments[0].start, 0);
  EXPECT_EQ(utt.segments[0].end, 3);
  EXPECT_EQ(utt.segments[1].start, 3);
  EXPECT_EQ(utt.segments[1].end, 6);
  auto expected = corpus.token_phonemes[static_cast<size_t>(utt.transcript[0] - 1)];
  EXPECT_EQ(utt.segments[0].label_id, expected[0]);
  EXPECT_EQ(utt.segments[1].label_id, expected[1]);
}

TEST(SynthTest, SameSeedGivesBitIdenticalFiles) {
  TempDir a, b;
  SynthSpec spec = tiny_spec();
  write_corpus(generate_synthetic_corpus(spec, 42), a.str());
  write_corpus(generate_synthetic_corpus(spec, 42), b.str());
  int compared = 0;
  for (const auto& entry : fs::recursive_directory_iterator(a.str())) {
    if (!entry.is_regular_file()) continue;
    fs::path rel = fs::relative(entry.path(), a.str());
    std::ifstream fa(entry.path(), std::ios::binary);
    std::ifstream fb(fs::path(b.str()) / rel, std::ios::binary);
    ASSERT_TRUE(fb.good()) << rel;
    std::string ca((std::istreambuf_iterator<char>(fa)), {});
    std::string cb((std::istreambuf_iterator<char>(fb)), {});
    EXPECT_EQ(ca, cb) << rel;
    ++compared;
  }
  EXPECT_GT(compared, 6);
}

TEST(SynthTest, DifferentSeedsDiffer) {
  SynthSpec spec = tiny_spec();
  SynthCorpus c1 = generate_synthetic_corpus(spec, 1);
  SynthCorpus c2 = generate_synthetic_corpus(spec, 2);
  EXPECT_NE(c1.train[0].features.data(), c2.train[0].features.data());
}

TEST(SynthTest, ZeroSigmaFramesClassifyPerfectly) {
  SynthSpec spec = tiny_spec();
  spec.sigma = 0.0;
  SynthCorpus corpus = generate_synthetic_corpus(spec, 11);
  for (const auto& utt : corpus.train) {
    for (const auto& seg : utt.segments) {
      for (int t = seg.start; t < seg.end; ++t) {
        int best = -1;
        double best_d2 = 1e300;
        for (size_t p = 0; p < corpus.centers.size(); ++p) {
          double d2 = 0;
          for (int d = 0; d < utt.feature_dim(); ++d) {
            double diff = utt.features.at(d, t) -
                          corpus.centers[p][static_cast<size_t>(d)];
            d2 += diff * diff;
          }
          if (d2 < best_d2) {
            best_d2 = d2;
            best = static_cast<int>(p);
          }
        }
        ASSERT_EQ(best, seg.label_id) << utt.id << " frame " << t;
      }
    }
  }
}

TEST(SynthTest, WriteLoadRoundTrip) {
  TempDir dir;
  SynthSpec spec = tiny_spec();
  SynthCorpus corpus = generate_synthetic_corpus(spec, 23);
  write_corpus(corpus, dir.str());
  LoadedCorpus loaded = load_corpus(dir.str());
  ASSERT_EQ(loaded.train.size(), corpus.train.size());
  ASSERT_EQ(loaded.test.size(), corpus.test.size());
  for (size_t i = 0; i < corpus.train.size(); ++i) {
    const Utterance& a = corpus.train[i];
    const Utterance& b = loaded.train[i];
    EXPECT_EQ(a.id, b.id);
    EXPECT_EQ(a.features.data(), b.features.data());
    EXPECT_EQ(a.transcript, b.transcript);
    ASSERT_EQ(a.segments.size(), b.segments.size());
    for (size_t s = 0; s < a.segments.size(); ++s) {
      EXPECT_EQ(a.segments[s].label, b.segments[s].label);
      EXPECT_EQ(a.segments[s].start, b.segments[s].start);
      EXPECT_EQ(a.segments[s].end, b.segments[s].end);
    }
  }
}

TEST(SynthTest, JitterKeepsCoverage) {
  SynthSpec spec = tiny_spec();
  spec.align_jitter = 2;
  SynthCorpus corpus = generate_synthetic_corpus(spec, 31);
  for (const auto& utt : corpus.train)
    validate_utterance(utt, corpus.inventory, corpus.vocab);
}

TEST(SynthTest, UnsatisfiableSeparationFails) {
  SynthSpec spec = tiny_spec();
  spec.center_sep = 100.0;
  spec.center_tries = 3;
  EXPECT_THROW(generate_synthetic_corpus(spec, 1), Error);
}

}  // namespace
