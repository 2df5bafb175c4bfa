#pragma once

#include <cmath>
#include <random>

#include "fld/nn/tensor.hpp"

namespace fld::nn {

enum class Init { zeros, ones, he_uniform, xavier_uniform };

// fan_in/fan_out from the weight shape: conv (O,C,k,k) or fc (O,F).
inline std::pair<int, int> fan_in_out(const Shape& s) {
  if (s.size() == 4) {
    const int recept = s[2] * s[3];
    return {s[1] * recept, s[0] * recept};
  }
  if (s.size() == 2) return {s[1], s[0]};
  return {static_cast<int>(shape_numel(s)), static_cast<int>(shape_numel(s))};
}

template <typename T>
void initialize(Tensor<T>& t, Init init, std::mt19937_64& rng) {
  switch (init) {
    case Init::zeros:
      t.zero();
      return;
    case Init::ones:
      t.fill(T(1));
      return;
    case Init::he_uniform: {
      auto [fin, fout] = fan_in_out(t.shape());
      (void)fout;
      const double limit = std::sqrt(6.0 / fin);
      std::uniform_real_distribution<double> dist(-limit, limit);
      for (std::int64_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(dist(rng));
      return;
    }
    case Init::xavier_uniform: {
      auto [fin, fout] = fan_in_out(t.shape());
      const double limit = std::sqrt(6.0 / (fin + fout));
      std::uniform_real_distribution<double> dist(-limit, limit);
      for (std::int64_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(dist(rng));
      return;
    }
  }
}

}  // namespace fld::nn
