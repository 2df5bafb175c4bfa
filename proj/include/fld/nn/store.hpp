#pragma once

#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "fld/nn/graph.hpp"
#include "fld/nn/init.hpp"

namespace fld::nn {

// Owns the persistent state of a network: trainable parameters and
// non-trainable buffers (batchnorm running statistics). Names are unique
// and creation order is fixed, which keeps initialization deterministic.
template <typename T>
class ParamStore {
 public:
  Parameter<T>& param(const std::string& name, Shape shape, Init init, std::mt19937_64& rng) {
    if (by_name_.count(name)) throw ModelError("duplicate parameter name: " + name);
    auto p = std::make_unique<Parameter<T>>();
    p->name = name;
    p->value = Tensor<T>(std::move(shape));
    initialize(p->value, init, rng);
    p->grad = Tensor<T>(p->value.shape());
    params_.push_back(std::move(p));
    by_name_[name] = params_.back().get();
    return *params_.back();
  }

  Buffer<T>& buffer(const std::string& name, Shape shape, T fill) {
    if (buf_by_name_.count(name)) throw ModelError("duplicate buffer name: " + name);
    auto b = std::make_unique<Buffer<T>>();
    b->name = name;
    b->value = Tensor<T>(std::move(shape), fill);
    buffers_.push_back(std::move(b));
    buf_by_name_[name] = buffers_.back().get();
    return *buffers_.back();
  }

  std::vector<Parameter<T>*> params() const {
    std::vector<Parameter<T>*> out;
    out.reserve(params_.size());
    for (const auto& p : params_) out.push_back(p.get());
    return out;
  }

  std::vector<Buffer<T>*> buffers() const {
    std::vector<Buffer<T>*> out;
    out.reserve(buffers_.size());
    for (const auto& b : buffers_) out.push_back(b.get());
    return out;
  }

  Parameter<T>* find(const std::string& name) const {
    auto it = by_name_.find(name);
    return it == by_name_.end() ? nullptr : it->second;
  }

  void zero_grads() {
    for (auto& p : params_) p->zero_grad();
  }

  std::int64_t param_count() const {
    std::int64_t n = 0;
    for (const auto& p : params_) n += p->value.size();
    return n;
  }

  // Parameters plus buffers, in creation order, for checkpointing.
  std::vector<std::pair<std::string, Tensor<T>*>> state_entries() {
    std::vector<std::pair<std::string, Tensor<T>*>> out;
    for (auto& p : params_) out.emplace_back(p->name, &p->value);
    for (auto& b : buffers_) out.emplace_back(b->name, &b->value);
    return out;
  }

 private:
  std::vector<std::unique_ptr<Parameter<T>>> params_;
  std::vector<std::unique_ptr<Buffer<T>>> buffers_;
  std::map<std::string, Parameter<T>*> by_name_;
  std::map<std::string, Buffer<T>*> buf_by_name_;
};

}  // namespace fld::nn
