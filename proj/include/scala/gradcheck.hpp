#pragma once

#include <cstring>
#include <functional>
#include <string>
#include <vector>

#include "scala/rng.hpp"
#include "scala/tensor.hpp"

namespace scala {

struct GradCheckEntry {
  std::string name;
  double max_rel_err = 0.0;
  int checked_coords = 0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_err = 0.0;

  bool passed(double tol) const { return max_rel_err <= tol; }
};

// Relative error with a unit floor, so coordinates whose true gradient is tiny
// are compared absolutely instead of blowing up the ratio.
inline double rel_err(double a, double b) {
  double denom = std::max({1.0, std::fabs(a), std::fabs(b)});
  return std::fabs(a - b) / denom;
}

// Central-difference check of reverse-mode gradients.
//
// `loss_fn` must rebuild the forward pass from the current parameter values
// and be deterministic: it is evaluated twice up front and the two results
// must agree bit for bit, otherwise the check is invalid.
//
// `max_coords_per_param` caps the number of coordinates probed per parameter
// (0 = all coordinates); the subset is drawn deterministically from
// `coord_seed`. Backward gradients are always computed for every coordinate.
inline GradCheckReport finite_diff_check(ParamStore& params,
                                         const std::function<Tensor()>& loss_fn,
                                         double step = 1e-5,
                                         int max_coords_per_param = 0,
                                         uint64_t coord_seed = 0) {
  auto eval = [&]() {
    NoGradGuard guard;
    return loss_fn().value();
  };
  double probe1 = eval();
  double probe2 = eval();
  check_runtime(std::memcmp(&probe1, &probe2, sizeof(double)) == 0,
                "finite_diff_check: loss function is not deterministic");

  params.zero_grad();
  Tensor loss = loss_fn();
  backward(loss, params);
  std::map<std::string, std::vector<double>> analytic;
  for (auto& [name, t] : params.items()) analytic[name] = t.grad();

  Rng coord_rng(coord_seed);
  GradCheckReport report;
  for (auto& [name, t] : params.items()) {
    std::vector<int> coords;
    int n = t.numel();
    if (max_coords_per_param <= 0 || max_coords_per_param >= n) {
      coords.resize(static_cast<size_t>(n));
      for (int i = 0; i < n; ++i) coords[static_cast<size_t>(i)] = i;
    } else {
      std::vector<int> all(static_cast<size_t>(n));
      for (int i = 0; i < n; ++i) all[static_cast<size_t>(i)] = i;
      coords = coord_rng.sample_without_replacement(
          all, static_cast<size_t>(max_coords_per_param));
    }
    GradCheckEntry entry;
    entry.name = name;
    entry.checked_coords = static_cast<int>(coords.size());
    for (int i : coords) {
      double saved = t.data()[static_cast<size_t>(i)];
      t.data()[static_cast<size_t>(i)] = saved + step;
      double up = eval();
      t.data()[static_cast<size_t>(i)] = saved - step;
      double down = eval();
      t.data()[static_cast<size_t>(i)] = saved;
      double fd = (up - down) / (2.0 * step);
      entry.max_rel_err = std::max(
          entry.max_rel_err, rel_err(fd, analytic[name][static_cast<size_t>(i)]));
    }
    report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace scala
