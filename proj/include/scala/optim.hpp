#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "scala/checkpoint.hpp"
#include "scala/tensor.hpp"

namespace scala {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adaptive-moment estimation with bias correction. Moment buffers live here,
// keyed by parameter name, so two optimizers over the same ParamStore stay
// fully independent.
class AdamOptimizer {
 public:
  explicit AdamOptimizer(AdamConfig cfg = {}) : cfg_(cfg) {}

  void step(ParamStore& params, double lr) {
    ++t_;
    double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (auto& [name, p] : params.items()) {
      const auto& g = p.grad();
      auto& m = m_[name];
      auto& v = v_[name];
      if (m.empty()) m.assign(g.size(), 0.0);
      if (v.empty()) v.assign(g.size(), 0.0);
      auto& data = p.data();
      for (size_t i = 0; i < g.size(); ++i) {
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
        double m_hat = m[i] / bc1;
        double v_hat = v[i] / bc2;
        data[i] -= lr * m_hat / (std::sqrt(v_hat) + cfg_.eps);
      }
    }
  }

  long step_count() const { return t_; }

  void save_state(Checkpoint& ckpt, const std::string& prefix) const {
    ckpt.config[prefix + ".t"] = std::to_string(t_);
    for (const auto& [name, m] : m_)
      ckpt.tensors.emplace(prefix + "/m/" + name,
                           Tensor::from_values({static_cast<int>(m.size())}, m));
    for (const auto& [name, v] : v_)
      ckpt.tensors.emplace(prefix + "/v/" + name,
                           Tensor::from_values({static_cast<int>(v.size())}, v));
  }

  void load_state(const Checkpoint& ckpt, const std::string& prefix) {
    auto it = ckpt.config.find(prefix + ".t");
    check_data(it != ckpt.config.end(), "checkpoint missing " + prefix + ".t");
    t_ = std::stol(it->second);
    m_.clear();
    v_.clear();
    for (const auto& [name, t] : ckpt.tensors) {
      if (name.rfind(prefix + "/m/", 0) == 0)
        m_[name.substr(prefix.size() + 3)] = t.data();
      else if (name.rfind(prefix + "/v/", 0) == 0)
        v_[name.substr(prefix.size() + 3)] = t.data();
    }
  }

 private:
  AdamConfig cfg_;
  long t_ = 0;
  std::map<std::string, std::vector<double>> m_, v_;
};

}  // namespace scala
