#pragma once

#include <cmath>
#include <vector>

#include "fld/nn/graph.hpp"

namespace fld::nn {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction over a fixed parameter set.
template <typename T>
class Adam {
 public:
  Adam(std::vector<Parameter<T>*> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (Parameter<T>* p : params_) {
      m_.emplace_back(p->value.shape());
      v_.emplace_back(p->value.shape());
    }
  }

  void zero_grads() {
    for (Parameter<T>* p : params_) p->zero_grad();
  }

  void step() {
    ++t_;
    ++call_count_;
    last_updated_.clear();
    const T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
    const T c1 = T(1) - static_cast<T>(std::pow(cfg_.beta1, t_));
    const T c2 = T(1) - static_cast<T>(std::pow(cfg_.beta2, t_));
    const T lr = static_cast<T>(cfg_.lr), eps = static_cast<T>(cfg_.eps);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Parameter<T>& p = *params_[i];
      last_updated_.push_back(&p);
      Tensor<T>& m = m_[i];
      Tensor<T>& v = v_[i];
      for (std::int64_t j = 0; j < p.value.size(); ++j) {
        const T gj = p.grad[j];
        m[j] = b1 * m[j] + (T(1) - b1) * gj;
        v[j] = b2 * v[j] + (T(1) - b2) * gj * gj;
        const T mhat = m[j] / c1;
        const T vhat = v[j] / c2;
        p.value[j] -= lr * mhat / (std::sqrt(vhat) + eps);
      }
    }
  }

  long step_count() const { return t_; }
  long call_count() const { return call_count_; }
  const std::vector<Parameter<T>*>& last_updated() const { return last_updated_; }
  const std::vector<Parameter<T>*>& params() const { return params_; }
  const AdamConfig& config() const { return cfg_; }

  // Moment buffers for checkpointing, parallel to params().
  Tensor<T>& moment1(std::size_t i) { return m_[i]; }
  Tensor<T>& moment2(std::size_t i) { return v_[i]; }
  void set_step_count(long t) { t_ = t; }

 private:
  std::vector<Parameter<T>*> params_;
  AdamConfig cfg_;
  std::vector<Tensor<T>> m_, v_;
  long t_ = 0;
  long call_count_ = 0;
  std::vector<Parameter<T>*> last_updated_;
};

}  // namespace fld::nn
