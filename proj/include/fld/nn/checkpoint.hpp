#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "fld/nn/tensor.hpp"

namespace fld::nn {

// Flat binary tensor container: magic + version, a JSON manifest of
// (name, shape, dtype, offset), then raw little-endian float32 payloads.
// Optimizer state travels under an "opt/" name prefix by convention.
void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, const Tensor<float>*>>& tensors);

std::map<std::string, Tensor<float>> load_checkpoint(const std::string& path);

}  // namespace fld::nn
