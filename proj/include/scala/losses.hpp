#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "scala/config.hpp"
#include "scala/corpus.hpp"
#include "scala/masking.hpp"
#include "scala/rng.hpp"
#include "scala/tensor.hpp"

namespace scala {

// Target cannot be emitted in the available frames (S too short); callers in
// the training loop skip such utterances.
class InfeasibleTargetError : public Error {
 public:
  explicit InfeasibleTargetError(const std::string& what)
      : Error(ErrorKind::kData, what) {}
};

namespace detail {

inline double log_add(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

}  // namespace detail

// Frames needed to emit `targets`: one per token plus a mandatory blank
// between equal neighbours.
inline int ctc_min_frames(const std::vector<int>& targets) {
  int needed = static_cast<int>(targets.size());
  for (size_t i = 1; i < targets.size(); ++i)
    if (targets[i] == targets[i - 1]) ++needed;
  return needed;
}

// Connectionist temporal classification loss, -log of the summed probability
// of every blank-augmented path that collapses to `targets`. Forward runs the
// standard log-space DP over the blank-interleaved target sequence; backward
// uses the matching beta recursion to form path posteriors.
inline Tensor ctc_loss(const Tensor& log_probs, const std::vector<int>& targets) {
  check_runtime(log_probs.ndim() == 2, "ctc_loss: log_probs must be [S x V]");
  const int s_len = log_probs.dim(0), vocab = log_probs.dim(1);
  check_runtime(!targets.empty(), "ctc_loss: empty target sequence");
  for (int tok : targets)
    check_runtime(tok > kBlank && tok < vocab,
                  "ctc_loss: target token out of range");
  if (s_len < ctc_min_frames(targets)) {
    throw InfeasibleTargetError(
        "ctc_loss: target needs " + std::to_string(ctc_min_frames(targets)) +
        " frames but only " + std::to_string(s_len) + " available");
  }

  // Extended sequence: blank, y1, blank, y2, ..., yN, blank.
  const int n = static_cast<int>(targets.size());
  const int ext_len = 2 * n + 1;
  std::vector<int> ext(static_cast<size_t>(ext_len), kBlank);
  for (int i = 0; i < n; ++i) ext[static_cast<size_t>(2 * i + 1)] = targets[static_cast<size_t>(i)];

  const double neg_inf = -std::numeric_limits<double>::infinity();
  const double* lp = log_probs.data().data();
  auto emit = [&](int t, int s) { return lp[t * vocab + ext[static_cast<size_t>(s)]]; };
  auto can_skip = [&](int s) {
    return ext[static_cast<size_t>(s)] != kBlank &&
           ext[static_cast<size_t>(s)] != ext[static_cast<size_t>(s - 2)];
  };

  std::vector<double> alpha(static_cast<size_t>(s_len) * ext_len, neg_inf);
  alpha[0] = emit(0, 0);
  if (ext_len > 1) alpha[1] = emit(0, 1);
  for (int t = 1; t < s_len; ++t) {
    for (int s = 0; s < ext_len; ++s) {
      double best = alpha[(t - 1) * ext_len + s];
      if (s >= 1) best = detail::log_add(best, alpha[(t - 1) * ext_len + s - 1]);
      if (s >= 2 && can_skip(s))
        best = detail::log_add(best, alpha[(t - 1) * ext_len + s - 2]);
      alpha[t * ext_len + s] = best == neg_inf ? neg_inf : best + emit(t, s);
    }
  }
  double log_z = alpha[(s_len - 1) * ext_len + ext_len - 1];
  if (ext_len > 1)
    log_z = detail::log_add(log_z, alpha[(s_len - 1) * ext_len + ext_len - 2]);
  check_runtime(std::isfinite(log_z), "ctc_loss: no feasible path");

  return OpBuilder::make(
      "ctc_loss", {1}, {-log_z}, {log_probs},
      [s_len, vocab, ext, alpha = std::move(alpha), log_z,
       ext_len](detail::TensorImpl& self) {
        auto& lp_impl = *self.parents[0];
        if (!lp_impl.requires_grad) return;
        lp_impl.ensure_grad();
        const double neg_inf = -std::numeric_limits<double>::infinity();
        const double* lp = lp_impl.data.data();
        auto emit = [&](int t, int s) {
          return lp[t * vocab + ext[static_cast<size_t>(s)]];
        };
        auto can_skip = [&](int s) {
          return ext[static_cast<size_t>(s)] != kBlank &&
                 ext[static_cast<size_t>(s)] != ext[static_cast<size_t>(s - 2)];
        };
        // beta with the emission at t included, mirroring alpha
        std::vector<double> beta(static_cast<size_t>(s_len) * ext_len, neg_inf);
        beta[(s_len - 1) * ext_len + ext_len - 1] = emit(s_len - 1, ext_len - 1);
        if (ext_len > 1)
          beta[(s_len - 1) * ext_len + ext_len - 2] = emit(s_len - 1, ext_len - 2);
        for (int t = s_len - 2; t >= 0; --t) {
          for (int s = ext_len - 1; s >= 0; --s) {
            double best = beta[(t + 1) * ext_len + s];
            if (s + 1 < ext_len)
              best = detail::log_add(best, beta[(t + 1) * ext_len + s + 1]);
            if (s + 2 < ext_len && can_skip(s + 2))
              best = detail::log_add(best, beta[(t + 1) * ext_len + s + 2]);
            beta[t * ext_len + s] = best == neg_inf ? neg_inf : best + emit(t, s);
          }
        }
        // d(-logZ)/d lp[t][k] = -sum_{s: ext_s=k} exp(alpha+beta-emit-logZ)
        double upstream = self.grad[0];
        for (int t = 0; t < s_len; ++t) {
          for (int s = 0; s < ext_len; ++s) {
            double a = alpha[t * ext_len + s];
            double b = beta[t * ext_len + s];
            if (a == neg_inf || b == neg_inf) continue;
            double post = std::exp(a + b - emit(t, s) - log_z);
            lp_impl.grad[t * vocab + ext[static_cast<size_t>(s)]] -=
                upstream * post;
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Contrastive pair sampling (Eq. 2's N_m) and the supervised contrastive loss
// ---------------------------------------------------------------------------

struct ContrastiveConfig {
  double tau = 0.1;
  int negatives = 100;     // |K|
  bool supervised = true;  // filter negatives by alignment label

  static ContrastiveConfig from_config(const Config& cfg) {
    ContrastiveConfig c;
    c.tau = cfg.get_double("scl.tau");
    c.negatives = cfg.get_int("scl.K");
    c.supervised = cfg.get_bool("scl.supervised");
    c.validate();
    return c;
  }

  void validate() const {
    check_data(tau > 0.0, "scl.tau must be positive");
    check_data(negatives >= 1, "scl.K must be >= 1");
  }
};

struct ContrastiveSample {
  int anchor;                  // masked index m
  std::vector<int> negatives;  // K_m, excludes m
};

// One sample per masked index. Supervised mode draws negatives uniformly from
// indices with a different alignment label; unsupervised mode from all other
// indices. Anchors with no eligible candidates are dropped; when
// silence_label_id >= 0, silence-labeled anchors are dropped as well (the
// masked set itself is untouched).
inline std::vector<ContrastiveSample> sample_contrastive(
    const MaskPlan& plan, const AlignmentTrack& track,
    const ContrastiveConfig& cfg, Rng& rng, int silence_label_id = -1) {
  const int s_len = track.length();
  std::vector<ContrastiveSample> samples;
  for (int m : plan.masked) {
    check_runtime(m >= 0 && m < s_len,
                  "sample_contrastive: plan and track lengths disagree");
    if (silence_label_id >= 0 &&
        track.labels[static_cast<size_t>(m)] == silence_label_id)
      continue;
    std::vector<int> candidates;
    candidates.reserve(static_cast<size_t>(s_len));
    for (int k = 0; k < s_len; ++k) {
      if (cfg.supervised) {
        if (track.labels[static_cast<size_t>(k)] !=
            track.labels[static_cast<size_t>(m)])
          candidates.push_back(k);
      } else if (k != m) {
        candidates.push_back(k);
      }
    }
    if (candidates.empty()) continue;
    ContrastiveSample sample;
    sample.anchor = m;
    sample.negatives = rng.sample_without_replacement(
        candidates, static_cast<size_t>(cfg.negatives));
    std::sort(sample.negatives.begin(), sample.negatives.end());
    samples.push_back(std::move(sample));
  }
  return samples;
}

// Supervised contrastive loss over context features c[d x S] and target
// features q[d x S]:
//
//   L = -(1/|M'|) sum_m log( e^{sim(c_m,q_m)/tau} / sum_{n in N_m} e^{sim(c_m,q_n)/tau} )
//
// with N_m = {m} + K_m and sim the cosine similarity. The log-sum-exp is
// computed stably; gradients flow to both c and q.
inline Tensor scl_loss(const Tensor& c, const Tensor& q,
                       const std::vector<ContrastiveSample>& samples,
                       double tau) {
  check_runtime(!samples.empty(), "scl_loss: no anchors");
  check_runtime(c.ndim() == 2 && q.ndim() == 2 && c.shape() == q.shape(),
                "scl_loss: c and q must share shape [d x S]");
  check_runtime(tau > 0.0, "scl_loss: tau must be positive");
  const int d = c.dim(0), s_len = c.dim(1);

  auto col_norm = [d, s_len](const std::vector<double>& data, int j) {
    double acc = 0.0;
    for (int r = 0; r < d; ++r) acc += data[r * s_len + j] * data[r * s_len + j];
    return std::sqrt(acc);
  };
  auto col_dot = [d, s_len](const std::vector<double>& a, int i,
                            const std::vector<double>& b, int j) {
    double acc = 0.0;
    for (int r = 0; r < d; ++r) acc += a[r * s_len + i] * b[r * s_len + j];
    return acc;
  };

  double total = 0.0;
  for (const auto& sample : samples) {
    int m = sample.anchor;
    check_runtime(m >= 0 && m < s_len, "scl_loss: anchor out of range");
    double cn = col_norm(c.data(), m);
    check_runtime(cn > 0.0, "scl_loss: zero-norm context column, similarity undefined");
    double qn_m = col_norm(q.data(), m);
    check_runtime(qn_m > 0.0, "scl_loss: zero-norm target column, similarity undefined");
    double pos = col_dot(c.data(), m, q.data(), m) / (cn * qn_m);
    double max_s = pos / tau;
    std::vector<double> scaled;
    scaled.reserve(sample.negatives.size() + 1);
    scaled.push_back(pos / tau);
    for (int k : sample.negatives) {
      check_runtime(k >= 0 && k < s_len && k != m,
                    "scl_loss: bad negative index");
      double qn = col_norm(q.data(), k);
      check_runtime(qn > 0.0, "scl_loss: zero-norm target column, similarity undefined");
      double sim = col_dot(c.data(), m, q.data(), k) / (cn * qn);
      scaled.push_back(sim / tau);
      max_s = std::max(max_s, sim / tau);
    }
    double acc = 0.0;
    for (double s : scaled) acc += std::exp(s - max_s);
    double lse = max_s + std::log(acc);
    total += lse - scaled[0];
  }
  double loss = total / static_cast<double>(samples.size());

  return OpBuilder::make(
      "scl_loss", {1}, {loss}, {c, q},
      [d, s_len, samples, tau](detail::TensorImpl& self) {
        auto& c_impl = *self.parents[0];
        auto& q_impl = *self.parents[1];
        if (c_impl.requires_grad) c_impl.ensure_grad();
        if (q_impl.requires_grad) q_impl.ensure_grad();
        double upstream = self.grad[0] / static_cast<double>(samples.size());

        auto col_norm = [&](const std::vector<double>& data, int j) {
          double acc = 0.0;
          for (int r = 0; r < d; ++r)
            acc += data[r * s_len + j] * data[r * s_len + j];
          return std::sqrt(acc);
        };

        for (const auto& sample : samples) {
          int m = sample.anchor;
          std::vector<int> members;
          members.push_back(m);
          for (int k : sample.negatives) members.push_back(k);

          double cn = col_norm(c_impl.data, m);
          std::vector<double> qn(members.size());
          std::vector<double> sims(members.size());
          double max_s = -std::numeric_limits<double>::infinity();
          for (size_t i = 0; i < members.size(); ++i) {
            int k = members[i];
            qn[i] = col_norm(q_impl.data, k);
            double dot = 0.0;
            for (int r = 0; r < d; ++r)
              dot += c_impl.data[r * s_len + m] * q_impl.data[r * s_len + k];
            sims[i] = dot / (cn * qn[i]);
            max_s = std::max(max_s, sims[i] / tau);
          }
          double acc = 0.0;
          for (double s : sims) acc += std::exp(s / tau - max_s);
          // dL/dsim_i = (p_i - [i == positive]) / tau, softmax p over N_m
          for (size_t i = 0; i < members.size(); ++i) {
            int k = members[i];
            double p = std::exp(sims[i] / tau - max_s) / acc;
            double dsim = upstream * (p - (i == 0 ? 1.0 : 0.0)) / tau;
            if (dsim == 0.0) continue;
            for (int r = 0; r < d; ++r) {
              double c_hat = c_impl.data[r * s_len + m] / cn;
              double q_hat = q_impl.data[r * s_len + k] / qn[i];
              if (c_impl.requires_grad)
                c_impl.grad[r * s_len + m] +=
                    dsim * (q_hat - sims[i] * c_hat) / cn;
              if (q_impl.requires_grad)
                q_impl.grad[r * s_len + k] +=
                    dsim * (c_hat - sims[i] * q_hat) / qn[i];
            }
          }
        }
      });
}

}  // namespace scala
