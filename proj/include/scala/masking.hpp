#pragma once

#include <string>
#include <vector>

#include "scala/config.hpp"
#include "scala/corpus.hpp"
#include "scala/rng.hpp"
#include "scala/tensor.hpp"

namespace scala {

struct MaskConfig {
  enum class Mode { kPhoneme, kFixed, kNone };
  enum class Replacement { kLearned, kZero };

  Mode mode = Mode::kPhoneme;
  double p_e = 0.065;
  int phonemes_per_mask = 2;  // P
  int frames_per_mask = 4;    // F
  bool exclude_silence_anchors = false;
  Replacement replacement = Replacement::kLearned;

  static MaskConfig from_config(const Config& cfg) {
    MaskConfig m;
    const std::string& mode = cfg.get_string("mask.mode");
    m.mode = mode == "phoneme" ? Mode::kPhoneme
             : mode == "fixed" ? Mode::kFixed
                               : Mode::kNone;
    m.p_e = cfg.get_double("mask.p_e");
    m.phonemes_per_mask = cfg.get_int("mask.P");
    m.frames_per_mask = cfg.get_int("mask.F");
    m.exclude_silence_anchors = cfg.get_bool("mask.exclude_silence_anchors");
    m.replacement = cfg.get_string("mask.replacement") == "zero"
                        ? Replacement::kZero
                        : Replacement::kLearned;
    m.validate();
    return m;
  }

  void validate() const {
    check_data(p_e >= 0.0 && p_e <= 1.0, "mask.p_e must be in [0,1]");
    check_data(phonemes_per_mask >= 1, "mask.P must be >= 1");
    check_data(frames_per_mask >= 1, "mask.F must be >= 1");
  }
};

// Sorted masked index set with its maximal runs.
struct MaskPlan {
  struct Span {
    int start;
    int end;  // exclusive
  };

  std::vector<int> masked;
  std::vector<Span> spans;

  bool empty() const { return masked.empty(); }
  int count() const { return static_cast<int>(masked.size()); }

  static MaskPlan from_flags(const std::vector<bool>& flags) {
    MaskPlan plan;
    for (size_t i = 0; i < flags.size(); ++i) {
      if (!flags[i]) continue;
      plan.masked.push_back(static_cast<int>(i));
      if (!plan.spans.empty() &&
          plan.spans.back().end == static_cast<int>(i)) {
        plan.spans.back().end = static_cast<int>(i) + 1;
      } else {
        plan.spans.push_back({static_cast<int>(i), static_cast<int>(i) + 1});
      }
    }
    return plan;
  }
};

// Each encoder index becomes a start independently with probability p_e.
inline std::vector<int> sample_mask_starts(int s_len, double p_e, Rng& rng) {
  std::vector<int> starts;
  for (int i = 0; i < s_len; ++i)
    if (rng.bernoulli(p_e)) starts.push_back(i);
  return starts;
}

// For every start index, the phoneme span containing it plus the next P-1
// whole spans are masked; overlapping selections union.
inline MaskPlan plan_phoneme_mask_from_starts(const AlignmentTrack& track,
                                              const std::vector<int>& starts,
                                              int phonemes_per_mask) {
  const int s_len = track.length();
  std::vector<bool> flags(static_cast<size_t>(s_len), false);
  for (int start : starts) {
    check_runtime(start >= 0 && start < s_len,
                  "plan_phoneme_mask: start index out of range");
    int span = track.span_of(start);
    int last = std::min(span + phonemes_per_mask - 1,
                        static_cast<int>(track.spans.size()) - 1);
    for (int i = track.spans[static_cast<size_t>(span)].start;
         i < track.spans[static_cast<size_t>(last)].end; ++i)
      flags[static_cast<size_t>(i)] = true;
  }
  return MaskPlan::from_flags(flags);
}

inline MaskPlan plan_phoneme_mask(const AlignmentTrack& track,
                                  const MaskConfig& cfg, Rng& rng,
                                  std::vector<int>* starts_out = nullptr) {
  std::vector<int> starts = sample_mask_starts(track.length(), cfg.p_e, rng);
  if (starts_out) *starts_out = starts;
  return plan_phoneme_mask_from_starts(track, starts, cfg.phonemes_per_mask);
}

// Each start masks F consecutive indices, truncated at the sequence end.
inline MaskPlan plan_fixed_mask_from_starts(int s_len,
                                            const std::vector<int>& starts,
                                            int frames_per_mask) {
  std::vector<bool> flags(static_cast<size_t>(s_len), false);
  for (int start : starts) {
    check_runtime(start >= 0 && start < s_len,
                  "plan_fixed_mask: start index out of range");
    for (int i = start; i < std::min(start + frames_per_mask, s_len); ++i)
      flags[static_cast<size_t>(i)] = true;
  }
  return MaskPlan::from_flags(flags);
}

inline MaskPlan plan_fixed_mask(int s_len, const MaskConfig& cfg, Rng& rng,
                                std::vector<int>* starts_out = nullptr) {
  std::vector<int> starts = sample_mask_starts(s_len, cfg.p_e, rng);
  if (starts_out) *starts_out = starts;
  return plan_fixed_mask_from_starts(s_len, starts, cfg.frames_per_mask);
}

// Mode dispatch used by the trainer; mode none yields an empty plan.
inline MaskPlan plan_mask(const AlignmentTrack& track, const MaskConfig& cfg,
                          Rng& rng) {
  switch (cfg.mode) {
    case MaskConfig::Mode::kPhoneme:
      return plan_phoneme_mask(track, cfg, rng);
    case MaskConfig::Mode::kFixed:
      return plan_fixed_mask(track.length(), cfg, rng);
    case MaskConfig::Mode::kNone:
      return MaskPlan{};
  }
  return MaskPlan{};
}

// Replaces masked columns of z[d x S] with the shared mask vector. Gradients
// flow to z only through unmasked columns and to the mask vector only through
// masked ones.
inline Tensor apply_mask(const Tensor& z, const MaskPlan& plan,
                         const Tensor& mask_vector) {
  const int d = z.dim(0), s_len = z.dim(1);
  check_runtime(mask_vector.ndim() == 1 && mask_vector.dim(0) == d,
                "apply_mask: mask vector length must equal feature dim");
  for (int i : plan.masked)
    check_runtime(i >= 0 && i < s_len, "apply_mask: masked index out of range");
  std::vector<double> out = z.data();
  for (int i : plan.masked)
    for (int r = 0; r < d; ++r) out[r * s_len + i] = mask_vector.data()[r];
  std::vector<int> masked = plan.masked;
  return OpBuilder::make(
      "apply_mask", z.shape(), std::move(out), {z, mask_vector},
      [d, s_len, masked = std::move(masked)](detail::TensorImpl& self) {
        auto& z_impl = *self.parents[0];
        auto& mv_impl = *self.parents[1];
        std::vector<bool> is_masked(static_cast<size_t>(s_len), false);
        for (int i : masked) is_masked[static_cast<size_t>(i)] = true;
        if (z_impl.requires_grad) {
          z_impl.ensure_grad();
          for (int r = 0; r < d; ++r)
            for (int i = 0; i < s_len; ++i)
              if (!is_masked[static_cast<size_t>(i)])
                z_impl.grad[r * s_len + i] += self.grad[r * s_len + i];
        }
        if (mv_impl.requires_grad) {
          mv_impl.ensure_grad();
          for (int i : masked)
            for (int r = 0; r < d; ++r)
              mv_impl.grad[r] += self.grad[r * s_len + i];
        }
      });
}

}  // namespace scala
