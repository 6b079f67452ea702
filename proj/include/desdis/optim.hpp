#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "desdis/net.hpp"
#include "desdis/tensor.hpp"

namespace desdis {

/// Adam first/second moments, one pair per parameter, plus the step count.
template <typename Scalar>
struct AdamState {
  std::int64_t step = 0;
  std::vector<Tensor<Scalar>> m;
  std::vector<Tensor<Scalar>> v;

  static AdamState init_for(std::span<const Parameter<Scalar>> params) {
    AdamState st;
    st.m.reserve(params.size());
    st.v.reserve(params.size());
    for (const auto& p : params) {
      st.m.push_back(Tensor<Scalar>::zeros(p.value.shape()));
      st.v.push_back(Tensor<Scalar>::zeros(p.value.shape()));
    }
    return st;
  }
};

/// One Adam update with bias correction, reading each parameter's own
/// gradient buffer.
template <typename Scalar>
void adam_step(std::span<Parameter<Scalar>> params, AdamState<Scalar>& state, Scalar lr,
               Scalar beta1, Scalar beta2, Scalar epsilon) {
  if (params.size() != state.m.size() || params.size() != state.v.size()) {
    throw std::invalid_argument("adam state does not match parameter list");
  }
  ++state.step;
  const Scalar bc1 = Scalar(1) - std::pow(beta1, Scalar(state.step));
  const Scalar bc2 = Scalar(1) - std::pow(beta2, Scalar(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter<Scalar>& p = params[i];
    if (!p.grad.same_shape(p.value) || !state.m[i].same_shape(p.value)) {
      throw ShapeError("adam_step shape mismatch for parameter '" + p.name + "'");
    }
    if (!p.trainable) continue;
    auto& m = state.m[i].array();
    auto& v = state.v[i].array();
    const auto& g = p.grad.array();
    m = beta1 * m + (Scalar(1) - beta1) * g;
    v = beta2 * v + (Scalar(1) - beta2) * g.square();
    p.value.array() -= lr * (m / bc1) / ((v / bc2).sqrt() + epsilon);
  }
}

}  // namespace desdis
