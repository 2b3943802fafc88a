#pragma once
// Named parameter and buffer registry shared by blocks, optimizers, and
// checkpoints.

#include <string>
#include <vector>

#include "pathfinder/tensor.hpp"

namespace pathfinder {

enum class ParamRole {
  weight,         ///< full-precision conv/linear weight
  binary_weight,  ///< latent weight deployed as sign bits
  bias,
  norm,   ///< batch-norm affine parameters
  shift,  ///< learnable sign/activation shifts and PReLU slopes
};

template <class Real>
struct ParamRef {
  std::string name;
  ag::Tensor<Real> tensor;
  ParamRole role;
};

template <class Real>
struct BufferRef {
  std::string name;
  std::vector<Real>* data;
};

template <class Real>
struct Registry {
  std::vector<ParamRef<Real>> params;
  std::vector<BufferRef<Real>> buffers;

  void param(const std::string& name, ag::Tensor<Real>& t, ParamRole role) { params.push_back({name, t, role}); }
  void buffer(const std::string& name, std::vector<Real>& v) { buffers.push_back({name, &v}); }
};

inline std::string join_name(const std::string& prefix, const std::string& name) {
  return prefix.empty() ? name : prefix + "." + name;
}

}  // namespace pathfinder
