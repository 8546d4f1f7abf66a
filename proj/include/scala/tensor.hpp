#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <string>
#include <unordered_set>
#include <vector>

#include "scala/error.hpp"

namespace scala {

class Tensor;

namespace detail {

struct TensorImpl {
  std::vector<int> shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a backward pass touches this node
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorImpl>> parents;
  std::function<void(TensorImpl&)> backward_fn;

  int numel() const {
    int n = 1;
    for (int d : shape) n *= d;
    return n;
  }

  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
  }
};

// Define-by-run recording can be suspended (evaluation paths, finite
// differences). Thread-local so parallel evaluation workers are independent.
inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

inline std::string shape_str(const std::vector<int>& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

}  // namespace detail

struct NoGradGuard {
  NoGradGuard() : prev_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// Dense row-major double tensor with a dynamically recorded backward graph.
// Values are immutable once an op has produced them; only grad buffers mutate.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false) {
    return make_leaf(std::move(shape), {}, requires_grad, /*fill=*/0.0);
  }

  static Tensor constant(std::vector<int> shape, double value) {
    return make_leaf(std::move(shape), {}, false, value);
  }

  static Tensor from_values(std::vector<int> shape, std::vector<double> values,
                            bool requires_grad = false) {
    Tensor t = make_leaf(std::move(shape), std::move(values), requires_grad, 0.0);
    t.check_finite("from_values");
    return t;
  }

  static Tensor scalar(double v) { return from_values({1}, {v}); }

  bool defined() const { return impl_ != nullptr; }
  const std::vector<int>& shape() const { return impl_->shape; }
  int ndim() const { return static_cast<int>(impl_->shape.size()); }
  int dim(int i) const { return impl_->shape[static_cast<size_t>(i)]; }
  int numel() const { return impl_->numel(); }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool v) { impl_->requires_grad = v; }

  std::vector<double>& data() { return impl_->data; }
  const std::vector<double>& data() const { return impl_->data; }

  double value() const {
    check_runtime(numel() == 1, "Tensor::value: tensor is not scalar");
    return impl_->data[0];
  }

  // 2-D accessors, row-major.
  double at(int r, int c) const { return impl_->data[idx2(r, c)]; }
  double& at(int r, int c) { return impl_->data[idx2(r, c)]; }

  const std::vector<double>& grad() const {
    impl_->ensure_grad();
    return impl_->grad;
  }

  void zero_grad() { impl_->grad.assign(impl_->data.size(), 0.0); }

  // Value copy detached from the graph; never requires grad.
  Tensor detach() const {
    Tensor t;
    t.impl_ = std::make_shared<detail::TensorImpl>();
    t.impl_->shape = impl_->shape;
    t.impl_->data = impl_->data;
    return t;
  }

  void check_finite(const char* op) const {
    for (double v : impl_->data) {
      if (!std::isfinite(v)) {
        fail_runtime(std::string(op) + ": non-finite value in result");
      }
    }
  }

  std::shared_ptr<detail::TensorImpl> impl() const { return impl_; }

  friend class OpBuilder;
  friend void backward(const Tensor&);

 private:
  int idx2(int r, int c) const {
    return r * impl_->shape[1] + c;
  }

  static Tensor make_leaf(std::vector<int> shape, std::vector<double> values,
                          bool requires_grad, double fill) {
    int n = 1;
    for (int d : shape) {
      check_runtime(d > 0, "Tensor: shape dimensions must be positive, got " +
                               detail::shape_str(shape));
      n *= d;
    }
    Tensor t;
    t.impl_ = std::make_shared<detail::TensorImpl>();
    t.impl_->shape = std::move(shape);
    if (values.empty()) {
      t.impl_->data.assign(static_cast<size_t>(n), fill);
    } else {
      check_runtime(static_cast<int>(values.size()) == n,
                    "Tensor: data length does not match shape");
      t.impl_->data = std::move(values);
    }
    t.impl_->requires_grad = requires_grad;
    return t;
  }

  std::shared_ptr<detail::TensorImpl> impl_;
};

// Named trainable parameters; iteration order is sorted by name.
class ParamStore {
 public:
  void add(const std::string& name, Tensor t) {
    check_runtime(params_.find(name) == params_.end(),
                  "ParamStore: duplicate parameter " + name);
    t.set_requires_grad(true);
    params_.emplace(name, std::move(t));
  }

  bool has(const std::string& name) const { return params_.count(name) > 0; }

  Tensor& get(const std::string& name) {
    auto it = params_.find(name);
    check_runtime(it != params_.end(), "ParamStore: unknown parameter " + name);
    return it->second;
  }

  const Tensor& get(const std::string& name) const {
    auto it = params_.find(name);
    check_runtime(it != params_.end(), "ParamStore: unknown parameter " + name);
    return it->second;
  }

  std::map<std::string, Tensor>& items() { return params_; }
  const std::map<std::string, Tensor>& items() const { return params_; }

  void zero_grad() {
    for (auto& [name, t] : params_) t.zero_grad();
  }

  int total_coords() const {
    int n = 0;
    for (const auto& [name, t] : params_) n += t.numel();
    return n;
  }

 private:
  std::map<std::string, Tensor> params_;
};

// ---------------------------------------------------------------------------
// Op construction
// ---------------------------------------------------------------------------

class OpBuilder {
 public:
  static Tensor make(const char* op, std::vector<int> shape,
                     std::vector<double> data, std::vector<Tensor> parents,
                     std::function<void(detail::TensorImpl&)> backward_fn) {
    Tensor out;
    out.impl_ = std::make_shared<detail::TensorImpl>();
    out.impl_->shape = std::move(shape);
    out.impl_->data = std::move(data);
    out.check_finite(op);
    bool needs = false;
    if (detail::grad_mode()) {
      for (const Tensor& p : parents) needs = needs || p.requires_grad();
    }
    if (needs) {
      out.impl_->requires_grad = true;
      out.impl_->parents.reserve(parents.size());
      for (Tensor& p : parents) out.impl_->parents.push_back(p.impl());
      out.impl_->backward_fn = std::move(backward_fn);
    }
    return out;
  }
};

namespace detail {

inline void require_same_shape(const Tensor& a, const Tensor& b,
                               const char* op) {
  check_runtime(a.shape() == b.shape(),
                std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                    " vs " + shape_str(b.shape()));
}

inline void accumulate(TensorImpl& p, const std::vector<double>& g) {
  if (!p.requires_grad) return;
  p.ensure_grad();
  for (size_t i = 0; i < g.size(); ++i) p.grad[i] += g[i];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<double> out(a.data().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return OpBuilder::make("add", a.shape(), std::move(out), {a, b},
                         [](detail::TensorImpl& self) {
                           detail::accumulate(*self.parents[0], self.grad);
                           detail::accumulate(*self.parents[1], self.grad);
                         });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<double> out(a.data().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  return OpBuilder::make("sub", a.shape(), std::move(out), {a, b},
                         [](detail::TensorImpl& self) {
                           detail::accumulate(*self.parents[0], self.grad);
                           auto& b_impl = *self.parents[1];
                           if (b_impl.requires_grad) {
                             b_impl.ensure_grad();
                             for (size_t i = 0; i < self.grad.size(); ++i)
                               b_impl.grad[i] -= self.grad[i];
                           }
                         });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<double> out(a.data().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return OpBuilder::make(
      "mul", a.shape(), std::move(out), {a, b},
      [](detail::TensorImpl& self) {
        auto& a_impl = *self.parents[0];
        auto& b_impl = *self.parents[1];
        if (a_impl.requires_grad) {
          a_impl.ensure_grad();
          for (size_t i = 0; i < self.grad.size(); ++i)
            a_impl.grad[i] += self.grad[i] * b_impl.data[i];
        }
        if (b_impl.requires_grad) {
          b_impl.ensure_grad();
          for (size_t i = 0; i < self.grad.size(); ++i)
            b_impl.grad[i] += self.grad[i] * a_impl.data[i];
        }
      });
}

inline Tensor scale(const Tensor& a, double c) {
  std::vector<double> out(a.data().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * c;
  return OpBuilder::make("scale", a.shape(), std::move(out), {a},
                         [c](detail::TensorImpl& self) {
                           auto& a_impl = *self.parents[0];
                           if (!a_impl.requires_grad) return;
                           a_impl.ensure_grad();
                           for (size_t i = 0; i < self.grad.size(); ++i)
                             a_impl.grad[i] += self.grad[i] * c;
                         });
}

inline Tensor exp(const Tensor& a) {
  std::vector<double> out(a.data().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = std::exp(a.data()[i]);
  return OpBuilder::make("exp", a.shape(), std::move(out), {a},
                         [](detail::TensorImpl& self) {
                           auto& a_impl = *self.parents[0];
                           if (!a_impl.requires_grad) return;
                           a_impl.ensure_grad();
                           for (size_t i = 0; i < self.grad.size(); ++i)
                             a_impl.grad[i] += self.grad[i] * self.data[i];
                         });
}

inline Tensor log(const Tensor& a) {
  std::vector<double> out(a.data().size());
  for (size_t i = 0; i < out.size(); ++i) {
    check_runtime(a.data()[i] > 0.0, "log: non-positive input");
    out[i] = std::log(a.data()[i]);
  }
  return OpBuilder::make(
      "log", a.shape(), std::move(out), {a}, [](detail::TensorImpl& self) {
        auto& a_impl = *self.parents[0];
        if (!a_impl.requires_grad) return;
        a_impl.ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i)
          a_impl.grad[i] += self.grad[i] / a_impl.data[i];
      });
}

inline Tensor relu(const Tensor& a) {
  std::vector<double> out(a.data().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = std::max(a.data()[i], 0.0);
  return OpBuilder::make(
      "relu", a.shape(), std::move(out), {a}, [](detail::TensorImpl& self) {
        auto& a_impl = *self.parents[0];
        if (!a_impl.requires_grad) return;
        a_impl.ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i)
          if (a_impl.data[i] > 0.0) a_impl.grad[i] += self.grad[i];
      });
}

inline Tensor tanh(const Tensor& a) {
  std::vector<double> out(a.data().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(a.data()[i]);
  return OpBuilder::make(
      "tanh", a.shape(), std::move(out), {a}, [](detail::TensorImpl& self) {
        auto& a_impl = *self.parents[0];
        if (!a_impl.requires_grad) return;
        a_impl.ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) {
          double y = self.data[i];
          a_impl.grad[i] += self.grad[i] * (1.0 - y * y);
        }
      });
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  check_runtime(a.ndim() == 2 && b.ndim() == 2, "matmul: operands must be 2-D");
  check_runtime(a.dim(1) == b.dim(0),
                "matmul: inner dimensions disagree, " +
                    detail::shape_str(a.shape()) + " vs " +
                    detail::shape_str(b.shape()));
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(static_cast<size_t>(m) * n, 0.0);
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  for (int i = 0; i < m; ++i) {
    for (int p = 0; p < k; ++p) {
      double av = pa[i * k + p];
      const double* brow = pb + p * n;
      double* orow = out.data() + i * n;
      for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  return OpBuilder::make(
      "matmul", {m, n}, std::move(out), {a, b},
      [m, k, n](detail::TensorImpl& self) {
        auto& a_impl = *self.parents[0];
        auto& b_impl = *self.parents[1];
        const double* g = self.grad.data();
        if (a_impl.requires_grad) {
          a_impl.ensure_grad();
          // dA += dC * B^T
          for (int i = 0; i < m; ++i) {
            for (int j = 0; j < n; ++j) {
              double gv = g[i * n + j];
              const double* brow = b_impl.data.data();
              for (int p = 0; p < k; ++p)
                a_impl.grad[i * k + p] += gv * brow[p * n + j];
            }
          }
        }
        if (b_impl.requires_grad) {
          b_impl.ensure_grad();
          // dB += A^T * dC
          for (int i = 0; i < m; ++i) {
            const double* arow = a_impl.data.data() + i * k;
            for (int p = 0; p < k; ++p) {
              double av = arow[p];
              const double* grow = g + i * n;
              double* brow = b_impl.grad.data() + p * n;
              for (int j = 0; j < n; ++j) brow[j] += av * grow[j];
            }
          }
        }
      });
}

inline Tensor transpose(const Tensor& a) {
  check_runtime(a.ndim() == 2, "transpose: operand must be 2-D");
  const int r = a.dim(0), c = a.dim(1);
  std::vector<double> out(a.data().size());
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) out[j * r + i] = a.data()[i * c + j];
  return OpBuilder::make("transpose", {c, r}, std::move(out), {a},
                         [r, c](detail::TensorImpl& self) {
                           auto& a_impl = *self.parents[0];
                           if (!a_impl.requires_grad) return;
                           a_impl.ensure_grad();
                           for (int i = 0; i < r; ++i)
                             for (int j = 0; j < c; ++j)
                               a_impl.grad[i * c + j] += self.grad[j * r + i];
                         });
}

inline Tensor row_slice(const Tensor& a, int row0, int nrows) {
  check_runtime(a.ndim() == 2, "row_slice: operand must be 2-D");
  const int r = a.dim(0), c = a.dim(1);
  check_runtime(row0 >= 0 && nrows >= 1 && row0 + nrows <= r,
                "row_slice: range out of bounds");
  std::vector<double> out(static_cast<size_t>(nrows) * c);
  std::copy(a.data().begin() + row0 * c, a.data().begin() + (row0 + nrows) * c,
            out.begin());
  return OpBuilder::make("row_slice", {nrows, c}, std::move(out), {a},
                         [row0, c](detail::TensorImpl& self) {
                           auto& a_impl = *self.parents[0];
                           if (!a_impl.requires_grad) return;
                           a_impl.ensure_grad();
                           for (size_t i = 0; i < self.grad.size(); ++i)
                             a_impl.grad[row0 * c + i] += self.grad[i];
                         });
}

inline Tensor concat_rows(const std::vector<Tensor>& parts) {
  check_runtime(!parts.empty(), "concat_rows: no inputs");
  const int c = parts[0].dim(1);
  int total = 0;
  for (const Tensor& p : parts) {
    check_runtime(p.ndim() == 2 && p.dim(1) == c,
                  "concat_rows: column counts disagree");
    total += p.dim(0);
  }
  std::vector<double> out;
  out.reserve(static_cast<size_t>(total) * c);
  for (const Tensor& p : parts)
    out.insert(out.end(), p.data().begin(), p.data().end());
  return OpBuilder::make(
      "concat_rows", {total, c}, std::move(out), parts,
      [](detail::TensorImpl& self) {
        size_t off = 0;
        for (auto& p : self.parents) {
          if (p->requires_grad) {
            p->ensure_grad();
            for (size_t i = 0; i < p->data.size(); ++i)
              p->grad[i] += self.grad[off + i];
          }
          off += p->data.size();
        }
      });
}

// Adds bias[d] to every column of t[d x S].
inline Tensor add_col_bias(const Tensor& t, const Tensor& bias) {
  check_runtime(t.ndim() == 2 && bias.ndim() == 1 && bias.dim(0) == t.dim(0),
                "add_col_bias: bias length must equal row count");
  const int d = t.dim(0), s = t.dim(1);
  std::vector<double> out(t.data().size());
  for (int r = 0; r < d; ++r)
    for (int j = 0; j < s; ++j)
      out[r * s + j] = t.data()[r * s + j] + bias.data()[r];
  return OpBuilder::make(
      "add_col_bias", t.shape(), std::move(out), {t, bias},
      [d, s](detail::TensorImpl& self) {
        detail::accumulate(*self.parents[0], self.grad);
        auto& b_impl = *self.parents[1];
        if (b_impl.requires_grad) {
          b_impl.ensure_grad();
          for (int r = 0; r < d; ++r) {
            double acc = 0.0;
            for (int j = 0; j < s; ++j) acc += self.grad[r * s + j];
            b_impl.grad[r] += acc;
          }
        }
      });
}

inline Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.data()) acc += v;
  return OpBuilder::make("sum", {1}, {acc}, {a},
                         [](detail::TensorImpl& self) {
                           auto& a_impl = *self.parents[0];
                           if (!a_impl.requires_grad) return;
                           a_impl.ensure_grad();
                           for (double& g : a_impl.grad) g += self.grad[0];
                         });
}

// ---------------------------------------------------------------------------
// log_softmax, layer_norm, conv1d
// ---------------------------------------------------------------------------

// Numerically stable log-softmax along `axis` of a 2-D tensor.
inline Tensor log_softmax(const Tensor& t, int axis) {
  check_runtime(t.ndim() == 2, "log_softmax: operand must be 2-D");
  check_runtime(axis == 0 || axis == 1, "log_softmax: axis must be 0 or 1");
  const int r = t.dim(0), c = t.dim(1);
  const int outer = (axis == 1) ? r : c;
  const int inner = (axis == 1) ? c : r;
  auto index = [&](int o, int i) {
    return (axis == 1) ? o * c + i : i * c + o;
  };
  std::vector<double> out(t.data().size());
  for (int o = 0; o < outer; ++o) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < inner; ++i) mx = std::max(mx, t.data()[index(o, i)]);
    double acc = 0.0;
    for (int i = 0; i < inner; ++i)
      acc += std::exp(t.data()[index(o, i)] - mx);
    double lse = mx + std::log(acc);
    for (int i = 0; i < inner; ++i)
      out[index(o, i)] = t.data()[index(o, i)] - lse;
  }
  return OpBuilder::make(
      "log_softmax", t.shape(), std::move(out), {t},
      [axis, outer, inner, c](detail::TensorImpl& self) {
        auto& t_impl = *self.parents[0];
        if (!t_impl.requires_grad) return;
        t_impl.ensure_grad();
        auto index = [&](int o, int i) {
          return (axis == 1) ? o * c + i : i * c + o;
        };
        for (int o = 0; o < outer; ++o) {
          double gsum = 0.0;
          for (int i = 0; i < inner; ++i) gsum += self.grad[index(o, i)];
          for (int i = 0; i < inner; ++i) {
            size_t ix = static_cast<size_t>(index(o, i));
            t_impl.grad[ix] += self.grad[ix] - std::exp(self.data[ix]) * gsum;
          }
        }
      });
}

// Per-row normalization of t[S x d] to zero mean / unit variance, then
// affine with gain[d], bias[d]. Population variance, epsilon inside sqrt.
inline Tensor layer_norm(const Tensor& t, const Tensor& gain,
                         const Tensor& bias) {
  constexpr double kEps = 1e-5;
  check_runtime(t.ndim() == 2, "layer_norm: operand must be 2-D");
  const int s = t.dim(0), d = t.dim(1);
  check_runtime(d > 1, "layer_norm: feature dimension must exceed 1");
  check_runtime(gain.ndim() == 1 && gain.dim(0) == d && bias.ndim() == 1 &&
                    bias.dim(0) == d,
                "layer_norm: gain/bias must have length d");
  std::vector<double> out(t.data().size());
  std::vector<double> norm(t.data().size());   // pre-affine rows, for backward
  std::vector<double> inv_sd(static_cast<size_t>(s));
  for (int i = 0; i < s; ++i) {
    const double* row = t.data().data() + i * d;
    double mean = 0.0;
    for (int j = 0; j < d; ++j) mean += row[j];
    mean /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= d;
    double isd = 1.0 / std::sqrt(var + kEps);
    inv_sd[static_cast<size_t>(i)] = isd;
    for (int j = 0; j < d; ++j) {
      double y = (row[j] - mean) * isd;
      norm[i * d + j] = y;
      out[i * d + j] = y * gain.data()[j] + bias.data()[j];
    }
  }
  return OpBuilder::make(
      "layer_norm", t.shape(), std::move(out), {t, gain, bias},
      [s, d, norm = std::move(norm),
       inv_sd = std::move(inv_sd)](detail::TensorImpl& self) {
        auto& t_impl = *self.parents[0];
        auto& g_impl = *self.parents[1];
        auto& b_impl = *self.parents[2];
        if (g_impl.requires_grad) g_impl.ensure_grad();
        if (b_impl.requires_grad) b_impl.ensure_grad();
        if (t_impl.requires_grad) t_impl.ensure_grad();
        for (int i = 0; i < s; ++i) {
          const double* go = self.grad.data() + i * d;
          const double* y = norm.data() + i * d;
          if (g_impl.requires_grad || b_impl.requires_grad) {
            for (int j = 0; j < d; ++j) {
              if (g_impl.requires_grad) g_impl.grad[j] += go[j] * y[j];
              if (b_impl.requires_grad) b_impl.grad[j] += go[j];
            }
          }
          if (t_impl.requires_grad) {
            // dx = (h - mean(h) - y * mean(h*y)) * inv_sd, h = gain * dout
            double mean_h = 0.0, mean_hy = 0.0;
            for (int j = 0; j < d; ++j) {
              double h = go[j] * g_impl.data[j];
              mean_h += h;
              mean_hy += h * y[j];
            }
            mean_h /= d;
            mean_hy /= d;
            for (int j = 0; j < d; ++j) {
              double h = go[j] * g_impl.data[j];
              t_impl.grad[i * d + j] +=
                  (h - mean_h - y[j] * mean_hy) * inv_sd[static_cast<size_t>(i)];
            }
          }
        }
      });
}

inline int conv_out_len(int t, int stride) { return (t + stride - 1) / stride; }

// 1-D convolution over input[d_in x T] with kernels[d_out x d_in x k] and
// "same"-style zero padding, so the output length is ceil(T / stride).
inline Tensor conv1d(const Tensor& input, const Tensor& kernels, int stride) {
  check_runtime(input.ndim() == 2, "conv1d: input must be 2-D");
  check_runtime(kernels.ndim() == 3, "conv1d: kernels must be 3-D");
  check_runtime(stride >= 1, "conv1d: stride must be >= 1");
  const int d_in = input.dim(0), t_len = input.dim(1);
  const int d_out = kernels.dim(0), k = kernels.dim(2);
  check_runtime(t_len >= 1, "conv1d: empty input");
  check_runtime(kernels.dim(1) == d_in,
                "conv1d: kernel input channels disagree with input");
  check_runtime(k >= 1, "conv1d: kernel width must be >= 1");
  const int s_len = conv_out_len(t_len, stride);
  const int pad_left = (k - 1) / 2;
  std::vector<double> out(static_cast<size_t>(d_out) * s_len, 0.0);
  const double* x = input.data().data();
  const double* w = kernels.data().data();
  for (int oc = 0; oc < d_out; ++oc) {
    for (int i = 0; i < s_len; ++i) {
      double acc = 0.0;
      int base = i * stride - pad_left;
      for (int ic = 0; ic < d_in; ++ic) {
        const double* xr = x + ic * t_len;
        const double* wr = w + (oc * d_in + ic) * k;
        for (int j = 0; j < k; ++j) {
          int pos = base + j;
          if (pos >= 0 && pos < t_len) acc += wr[j] * xr[pos];
        }
      }
      out[oc * s_len + i] = acc;
    }
  }
  return OpBuilder::make(
      "conv1d", {d_out, s_len}, std::move(out), {input, kernels},
      [d_in, t_len, d_out, k, stride, s_len, pad_left](detail::TensorImpl& self) {
        auto& x_impl = *self.parents[0];
        auto& w_impl = *self.parents[1];
        const double* g = self.grad.data();
        if (x_impl.requires_grad) x_impl.ensure_grad();
        if (w_impl.requires_grad) w_impl.ensure_grad();
        for (int oc = 0; oc < d_out; ++oc) {
          for (int i = 0; i < s_len; ++i) {
            double gv = g[oc * s_len + i];
            if (gv == 0.0) continue;
            int base = i * stride - pad_left;
            for (int ic = 0; ic < d_in; ++ic) {
              for (int j = 0; j < k; ++j) {
                int pos = base + j;
                if (pos < 0 || pos >= t_len) continue;
                if (x_impl.requires_grad)
                  x_impl.grad[ic * t_len + pos] +=
                      gv * w_impl.data[(oc * d_in + ic) * k + j];
                if (w_impl.requires_grad)
                  w_impl.grad[(oc * d_in + ic) * k + j] +=
                      gv * x_impl.data[ic * t_len + pos];
              }
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Backward pass
// ---------------------------------------------------------------------------

inline void backward(const Tensor& loss) {
  check_runtime(loss.defined() && loss.numel() == 1,
                "backward: loss must be a defined scalar");
  auto root = loss.impl();
  if (!root->requires_grad) {
    // Loss does not depend on any grad-requiring tensor; nothing to do.
    return;
  }
  // Iterative post-order DFS over the parent DAG.
  std::vector<detail::TensorImpl*> order;
  std::unordered_set<detail::TensorImpl*> visited;
  std::vector<std::pair<detail::TensorImpl*, size_t>> stack;
  stack.emplace_back(root.get(), 0);
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::TensorImpl* p = node->parents[next].get();
      ++next;
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root->ensure_grad();
  root->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::TensorImpl* node = *it;
    if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
  }
}

// Populates gradients for every parameter; parameters the loss does not reach
// receive zero gradients.
inline void backward(const Tensor& loss, ParamStore& params) {
  backward(loss);
  for (auto& [name, t] : params.items()) t.grad();
}

}  // namespace scala
