#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "scala/error.hpp"
#include "scala/tensor.hpp"

namespace scala {

// CTC blank: reserved output index 0, never a real token.
inline constexpr int kBlank = 0;

// ---------------------------------------------------------------------------
// Label alphabets
// ---------------------------------------------------------------------------

// Phoneme label set. File format: one label per line; the FIRST line is the
// designated silence label.
struct PhonemeInventory {
  std::vector<std::string> phonemes;
  std::string silence_label;

  int size() const { return static_cast<int>(phonemes.size()); }

  int index_of(const std::string& label) const {
    for (size_t i = 0; i < phonemes.size(); ++i)
      if (phonemes[i] == label) return static_cast<int>(i);
    return -1;
  }

  int silence_id() const { return index_of(silence_label); }

  void validate() const {
    check_data(!phonemes.empty(), "inventory: empty");
    for (const auto& p : phonemes)
      check_data(!p.empty(), "inventory: empty label");
    for (size_t i = 0; i < phonemes.size(); ++i)
      for (size_t j = i + 1; j < phonemes.size(); ++j)
        check_data(phonemes[i] != phonemes[j],
                   "inventory: duplicate label " + phonemes[i]);
    check_data(index_of(silence_label) >= 0,
               "inventory: silence label missing: " + silence_label);
  }

  static PhonemeInventory load(const std::string& path) {
    std::ifstream in(path);
    check_data(in.good(), "cannot open inventory: " + path);
    PhonemeInventory inv;
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      inv.phonemes.push_back(line);
    }
    check_data(!inv.phonemes.empty(), "inventory: empty file " + path);
    inv.silence_label = inv.phonemes.front();
    inv.validate();
    return inv;
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    check_data(out.good(), "cannot write inventory: " + path);
    // silence first so load() re-designates it
    out << silence_label << "\n";
    for (const auto& p : phonemes)
      if (p != silence_label) out << p << "\n";
  }
};

// Output token alphabet. Index 0 is the CTC blank and is not itself a token;
// real tokens are indexed from 1. File format: first line is the "<blk>"
// marker, then one token per line.
struct Vocabulary {
  std::vector<std::string> tokens;

  int size() const { return static_cast<int>(tokens.size()) + 1; }  // |L|+1

  // 1-based token index; -1 when unknown.
  int index_of(const std::string& token) const {
    for (size_t i = 0; i < tokens.size(); ++i)
      if (tokens[i] == token) return static_cast<int>(i) + 1;
    return -1;
  }

  const std::string& token_at(int index) const {
    check_data(index >= 1 && index <= static_cast<int>(tokens.size()),
               "vocabulary: token index out of range");
    return tokens[static_cast<size_t>(index - 1)];
  }

  void validate() const {
    for (const auto& t : tokens) {
      check_data(!t.empty(), "vocabulary: empty token");
      check_data(t != "<blk>", "vocabulary: blank marker used as a token");
    }
    for (size_t i = 0; i < tokens.size(); ++i)
      for (size_t j = i + 1; j < tokens.size(); ++j)
        check_data(tokens[i] != tokens[j],
                   "vocabulary: duplicate token " + tokens[i]);
  }

  static Vocabulary load(const std::string& path) {
    std::ifstream in(path);
    check_data(in.good(), "cannot open vocabulary: " + path);
    Vocabulary vocab;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      if (first) {
        check_data(line == "<blk>",
                   "vocabulary: first line must be <blk>, got " + line);
        first = false;
        continue;
      }
      vocab.tokens.push_back(line);
    }
    check_data(!first, "vocabulary: empty file " + path);
    vocab.validate();
    return vocab;
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    check_data(out.good(), "cannot write vocabulary: " + path);
    out << "<blk>\n";
    for (const auto& t : tokens) out << t << "\n";
  }
};

// ---------------------------------------------------------------------------
// Utterances and alignments
// ---------------------------------------------------------------------------

// Phoneme span in input frames, end exclusive.
struct PhonemeSegment {
  std::string label;
  int label_id = -1;  // resolved inventory index
  int start = 0;
  int end = 0;
};

struct Utterance {
  std::string id;
  Tensor features;  // [d_s x T]
  std::vector<int> transcript;  // token ids, never 0 (blank)
  std::vector<PhonemeSegment> segments;

  int feature_dim() const { return features.dim(0); }
  int frames() const { return features.dim(1); }
};

inline void validate_utterance(const Utterance& utt,
                               const PhonemeInventory& inventory,
                               const Vocabulary& vocab) {
  const std::string& id = utt.id;
  check_data(utt.features.defined() && utt.features.ndim() == 2,
             id + ": features must be 2-D");
  check_data(!utt.transcript.empty(), id + ": empty transcript");
  for (int tok : utt.transcript)
    check_data(tok >= 1 && tok < vocab.size(),
               id + ": transcript token index out of range (inventory error)");
  check_data(!utt.segments.empty(), id + ": no alignment segments");
  int t_len = utt.frames();
  int cursor = 0;
  for (const auto& seg : utt.segments) {
    check_data(seg.start < seg.end, id + ": empty or inverted segment for " +
                                        seg.label);
    check_data(seg.start == cursor,
               id + ": alignment-coverage error at frame " +
                   std::to_string(std::min(seg.start, cursor)) +
                   (seg.start > cursor ? " (gap)" : " (overlap)"));
    check_data(inventory.index_of(seg.label) >= 0,
               id + ": unknown phoneme label " + seg.label);
    check_data(seg.label_id == inventory.index_of(seg.label),
               id + ": segment label id out of sync");
    cursor = seg.end;
  }
  check_data(cursor == t_len, id + ": alignment-coverage error, segments end at " +
                                  std::to_string(cursor) + " but T=" +
                                  std::to_string(t_len));
}

// Per-encoder-index phoneme labels with span boundaries.
struct AlignmentTrack {
  struct Span {
    int label;
    int start;
    int end;  // exclusive
  };

  std::vector<int> labels;
  std::vector<Span> spans;

  int length() const { return static_cast<int>(labels.size()); }

  // Span index containing encoder index i.
  int span_of(int i) const {
    int lo = 0, hi = static_cast<int>(spans.size()) - 1;
    while (lo < hi) {
      int mid = (lo + hi) / 2;
      if (spans[static_cast<size_t>(mid)].end <= i)
        lo = mid + 1;
      else
        hi = mid;
    }
    return lo;
  }
};

enum class DownsampleRule { kMajority, kCenter };

// Maps input-rate segments to encoder-rate labels for a conv stack with the
// given strides. Majority vote over each length-r window (r = product of
// strides), ties broken by the earliest-starting label in the window; the
// center rule takes the label of the window's middle frame instead.
inline AlignmentTrack downsample_alignment(
    const Utterance& utt, const std::vector<int>& strides,
    DownsampleRule rule = DownsampleRule::kMajority) {
  int r = 1;
  for (int s : strides) {
    check_runtime(s >= 1, "downsample_alignment: stride must be >= 1");
    r *= s;
  }
  const int t_len = utt.frames();
  const int s_len = (t_len + r - 1) / r;

  std::vector<int> frame_labels(static_cast<size_t>(t_len));
  for (const auto& seg : utt.segments)
    for (int t = seg.start; t < seg.end; ++t)
      frame_labels[static_cast<size_t>(t)] = seg.label_id;

  AlignmentTrack track;
  track.labels.resize(static_cast<size_t>(s_len));
  for (int i = 0; i < s_len; ++i) {
    int w0 = i * r;
    int w1 = std::min(w0 + r, t_len);
    if (rule == DownsampleRule::kCenter) {
      track.labels[static_cast<size_t>(i)] =
          frame_labels[static_cast<size_t>(w0 + (w1 - w0 - 1) / 2)];
      continue;
    }
    // majority with earliest-first tie-break: scan in order, counting
    std::vector<std::pair<int, int>> counts;  // (label, count), first-seen order
    for (int t = w0; t < w1; ++t) {
      int lab = frame_labels[static_cast<size_t>(t)];
      bool found = false;
      for (auto& [l, c] : counts)
        if (l == lab) {
          ++c;
          found = true;
          break;
        }
      if (!found) counts.emplace_back(lab, 1);
    }
    int best_label = counts[0].first, best_count = counts[0].second;
    for (const auto& [l, c] : counts)
      if (c > best_count) {  // strict: ties keep the earliest-seen label
        best_label = l;
        best_count = c;
      }
    track.labels[static_cast<size_t>(i)] = best_label;
  }

  for (int i = 0; i < s_len; ++i) {
    if (!track.spans.empty() && track.spans.back().label == track.labels[static_cast<size_t>(i)]) {
      track.spans.back().end = i + 1;
    } else {
      track.spans.push_back({track.labels[static_cast<size_t>(i)], i, i + 1});
    }
  }
  return track;
}

// ---------------------------------------------------------------------------
// File formats
// ---------------------------------------------------------------------------

namespace io {

inline void write_u32(std::ostream& out, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

inline uint32_t read_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) |
         (static_cast<uint32_t>(b[3]) << 24);
}

inline void write_f32(std::ostream& out, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  write_u32(out, bits);
}

inline float read_f32(std::istream& in) {
  uint32_t bits = read_u32(in);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

inline void write_f64(std::ostream& out, double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, 8);
  write_u32(out, static_cast<uint32_t>(bits & 0xffffffffULL));
  write_u32(out, static_cast<uint32_t>(bits >> 32));
}

inline double read_f64(std::istream& in) {
  uint64_t lo = read_u32(in);
  uint64_t hi = read_u32(in);
  uint64_t bits = lo | (hi << 32);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  size_t start = 0;
  while (true) {
    size_t pos = s.find(sep, start);
    if (pos == std::string::npos) {
      out.push_back(s.substr(start));
      return out;
    }
    out.push_back(s.substr(start, pos - start));
    start = pos + 1;
  }
}

inline int parse_frame_index(const std::string& s, const std::string& where) {
  try {
    size_t pos = 0;
    int v = std::stoi(s, &pos);
    check_data(pos == s.size() && v >= 0, "");
    return v;
  } catch (...) {
    fail_data(where + ": bad frame index '" + s + "'");
  }
}

}  // namespace io

inline constexpr char kFeatureMagic[4] = {'S', 'C', 'L', 'F'};

// Feature file: "SCLF" | u32 d_s | u32 T | T frames x d_s f32, frame-major.
inline void write_feature_file(const std::string& path, const Tensor& features) {
  std::ofstream out(path, std::ios::binary);
  check_data(out.good(), "cannot write feature file: " + path);
  out.write(kFeatureMagic, 4);
  const int d_s = features.dim(0), t_len = features.dim(1);
  io::write_u32(out, static_cast<uint32_t>(d_s));
  io::write_u32(out, static_cast<uint32_t>(t_len));
  for (int t = 0; t < t_len; ++t)
    for (int d = 0; d < d_s; ++d)
      io::write_f32(out, static_cast<float>(features.at(d, t)));
  check_data(out.good(), "failed while writing feature file: " + path);
}

inline Tensor read_feature_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  check_data(in.good(), "cannot open feature file: " + path);
  char magic[4];
  in.read(magic, 4);
  check_data(in.good() && std::memcmp(magic, kFeatureMagic, 4) == 0,
             path + ": bad magic, not a feature file");
  uint32_t d_s = io::read_u32(in);
  uint32_t t_len = io::read_u32(in);
  check_data(in.good() && d_s >= 1 && t_len >= 1,
             path + ": bad header dimensions");
  std::vector<double> data(static_cast<size_t>(d_s) * t_len);
  for (uint32_t t = 0; t < t_len; ++t)
    for (uint32_t d = 0; d < d_s; ++d)
      data[d * t_len + t] = static_cast<double>(io::read_f32(in));
  check_data(in.good(), path + ": truncated feature data");
  return Tensor::from_values({static_cast<int>(d_s), static_cast<int>(t_len)},
                             std::move(data));
}

// Loads and fully validates a corpus.
//
// manifest:    utt_id<TAB>relative_feature_path
// alignments:  utt_id<TAB>start<TAB>end<TAB>phoneme (input frames, end excl.)
// transcripts: utt_id<TAB>tok1 tok2 ... tokN
inline std::vector<Utterance> load_manifest(const std::string& manifest_path,
                                            const std::string& features_dir,
                                            const std::string& alignment_path,
                                            const std::string& transcript_path,
                                            const PhonemeInventory& inventory,
                                            const Vocabulary& vocab) {
  std::ifstream manifest(manifest_path);
  check_data(manifest.good(), "cannot open manifest: " + manifest_path);
  std::vector<std::pair<std::string, std::string>> entries;
  std::string line;
  while (std::getline(manifest, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cols = io::split(line, '\t');
    check_data(cols.size() == 2, manifest_path + ": expected 2 columns: " + line);
    entries.emplace_back(cols[0], cols[1]);
  }

  std::map<std::string, std::vector<PhonemeSegment>> alignments;
  {
    std::ifstream in(alignment_path);
    check_data(in.good(), "cannot open alignment file: " + alignment_path);
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      auto cols = io::split(line, '\t');
      check_data(cols.size() == 4,
                 alignment_path + ": expected 4 columns: " + line);
      PhonemeSegment seg;
      seg.start = io::parse_frame_index(cols[1], alignment_path);
      seg.end = io::parse_frame_index(cols[2], alignment_path);
      seg.label = cols[3];
      seg.label_id = inventory.index_of(seg.label);
      check_data(seg.label_id >= 0,
                 cols[0] + ": unknown phoneme label " + seg.label);
      alignments[cols[0]].push_back(seg);
    }
  }

  std::map<std::string, std::vector<int>> transcripts;
  {
    std::ifstream in(transcript_path);
    check_data(in.good(), "cannot open transcript file: " + transcript_path);
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      auto cols = io::split(line, '\t');
      check_data(cols.size() == 2,
                 transcript_path + ": expected 2 columns: " + line);
      std::vector<int> ids;
      for (const auto& tok : io::split(cols[1], ' ')) {
        if (tok.empty()) continue;
        int id = vocab.index_of(tok);
        check_data(id >= 1, cols[0] + ": unknown token " + tok +
                                " (inventory error)");
        ids.push_back(id);
      }
      transcripts[cols[0]] = std::move(ids);
    }
  }

  std::vector<Utterance> utts;
  utts.reserve(entries.size());
  for (const auto& [id, rel_path] : entries) {
    auto align_it = alignments.find(id);
    check_data(align_it != alignments.end(),
               id + ": no alignment entry (lookup error)");
    auto trans_it = transcripts.find(id);
    check_data(trans_it != transcripts.end(),
               id + ": no transcript entry (lookup error)");
    Utterance utt;
    utt.id = id;
    utt.features = read_feature_file(features_dir + "/" + rel_path);
    utt.segments = align_it->second;
    std::sort(utt.segments.begin(), utt.segments.end(),
              [](const PhonemeSegment& a, const PhonemeSegment& b) {
                return a.start < b.start;
              });
    utt.transcript = trans_it->second;
    validate_utterance(utt, inventory, vocab);
    utts.push_back(std::move(utt));
  }
  return utts;
}

}  // namespace scala
