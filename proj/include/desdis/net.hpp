#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "desdis/arch.hpp"
#include "desdis/rng.hpp"
#include "desdis/tape.hpp"
#include "desdis/tensor.hpp"

namespace desdis {

/// Trainable value paired with its gradient buffer (zeroed between steps).
template <typename Scalar>
struct Parameter {
  std::string name;
  Tensor<Scalar> value;
  Tensor<Scalar> grad;
  bool trainable = true;
};

/// A descriptor network: a NetworkSpec bound to parameters and batch-norm
/// buffers. Maps an N×1×side×side batch of standardized patches to N
/// unit-norm descriptor rows.
template <typename Scalar>
class DescriptorNet {
 public:
  enum class Mode { kTrain, kEval };

  DescriptorNet(NetworkSpec spec, std::uint64_t init_seed,
                Scalar bn_momentum = Scalar(0.1))
      : spec_(std::move(spec)), bn_momentum_(bn_momentum) {
    validate_spec(spec_);
    std::uint64_t p = 0;
    for (std::size_t li = 0; li < spec_.layers.size(); ++li) {
      const LayerSpec& l = spec_.layers[li];
      const std::string prefix = "conv" + std::to_string(li + 1);
      // Fan-in scaled init for conv weights; affine BN starts at identity.
      Tensor<Scalar> w({l.out_channels, l.in_channels, l.kernel, l.kernel});
      Rng rng(derive_seed(init_seed, p));
      const double stddev = std::sqrt(2.0 / static_cast<double>(l.in_channels * l.kernel * l.kernel));
      for (Index i = 0; i < w.numel(); ++i) w[i] = static_cast<Scalar>(stddev * rng.normal());
      push_param(prefix + ".weight", std::move(w));
      ++p;
      if (l.has_bn) {
        push_param(prefix + ".bn.gamma", Tensor<Scalar>::full({l.out_channels}, Scalar(1)));
        push_param(prefix + ".bn.beta", Tensor<Scalar>::zeros({l.out_channels}));
        p += 2;
        bn_layer_of_.push_back(static_cast<Index>(li));
        bn_stats_.emplace_back(l.out_channels);
      }
    }
  }

  const NetworkSpec& spec() const { return spec_; }
  Scalar bn_momentum() const { return bn_momentum_; }

  std::span<Parameter<Scalar>> parameters() { return params_; }
  std::span<const Parameter<Scalar>> parameters() const { return params_; }

  Parameter<Scalar>& parameter(std::string_view name) {
    for (auto& pr : params_) {
      if (pr.name == name) return pr;
    }
    throw std::invalid_argument("no parameter named '" + std::string(name) + "'");
  }

  std::span<BatchNormStats<Scalar>> bn_stats() { return bn_stats_; }
  std::span<const BatchNormStats<Scalar>> bn_stats() const { return bn_stats_; }

  // Frozen nets (a distillation teacher) skip gradient bookkeeping entirely.
  void set_trainable(bool trainable) {
    for (auto& pr : params_) pr.trainable = trainable;
  }

  void zero_grads() {
    for (auto& pr : params_) pr.grad.array().setZero();
  }

  struct ForwardHandles {
    Val output;                    // N×descriptor_dim, unit-norm rows
    std::vector<Val> param_vals;   // parallel to parameters()
  };

  /// Differentiable forward pass. `patches` must be an N×1×side×side tape
  /// value of per-patch standardized intensities. Train mode uses batch
  /// normalization statistics (and updates the running stats unless told not
  /// to); eval mode uses the running stats, making each row a pure function
  /// of (parameters, that patch).
  ForwardHandles forward(Tape<Scalar>& tape, Val patches, Mode mode,
                         bool update_running = true) {
    const Tensor<Scalar>& x = tape.value(patches);
    if (x.rank() != 4 || x.dim(1) != 1 || x.dim(2) != spec_.input_side ||
        x.dim(3) != spec_.input_side) {
      throw ShapeError("expected patches of shape [N, 1, " + std::to_string(spec_.input_side) +
                       ", " + std::to_string(spec_.input_side) + "], got " +
                       shape_to_string(x.shape()));
    }
    ForwardHandles h;
    h.param_vals.reserve(params_.size());
    for (const auto& pr : params_) h.param_vals.push_back(tape.leaf(pr.value, pr.trainable));

    Val cur = patches;
    std::size_t pi = 0;
    std::size_t bi = 0;
    for (const LayerSpec& l : spec_.layers) {
      cur = conv2d(tape, cur, h.param_vals[pi++], l.stride, l.padding);
      if (l.has_bn) {
        Val g = h.param_vals[pi++];
        Val b = h.param_vals[pi++];
        BatchNormStats<Scalar>* stats = &bn_stats_[bi++];
        if (mode == Mode::kTrain) {
          cur = batch_norm(tape, cur, g, b, update_running ? stats : nullptr, BnMode::kTrain,
                           bn_momentum_, kBnEpsilon);
        } else {
          cur = batch_norm(tape, cur, g, b, stats, BnMode::kEval, bn_momentum_, kBnEpsilon);
        }
      }
      if (l.activation == Activation::kRelu) cur = relu(tape, cur);
    }
    cur = reshape(tape, cur, {x.dim(0), spec_.descriptor_dim});
    h.output = l2_normalize(tape, cur, kNormEpsilon);
    return h;
  }

  /// Tapeless eval-mode forward; returns the N×descriptor_dim matrix.
  Tensor<Scalar> infer(const Tensor<Scalar>& patches) const {
    Tape<Scalar> tape;
    Val in = tape.leaf(patches, /*trainable=*/false);
    auto& self = const_cast<DescriptorNet&>(*this);  // eval mode never mutates stats
    auto h = self.forward(tape, in, Mode::kEval);
    return tape.value(h.output);
  }

  static constexpr Scalar kBnEpsilon = Scalar(1e-5);
  static constexpr Scalar kNormEpsilon = Scalar(1e-8);

 private:
  void push_param(std::string name, Tensor<Scalar> value) {
    Parameter<Scalar> pr;
    pr.name = std::move(name);
    pr.grad = Tensor<Scalar>::zeros(value.shape());
    pr.value = std::move(value);
    params_.push_back(std::move(pr));
  }

  NetworkSpec spec_;
  Scalar bn_momentum_;
  std::vector<Parameter<Scalar>> params_;
  std::vector<BatchNormStats<Scalar>> bn_stats_;
  std::vector<Index> bn_layer_of_;
};

/// Per-patch standardization: subtract the patch mean and divide by the patch
/// standard deviation (epsilon-guarded). Returns an N×1×side×side tensor.
template <typename Scalar>
Tensor<Scalar> standardize_patches(std::span<const std::uint8_t> bytes, Index n, Index side,
                                   Scalar epsilon = Scalar(1e-8)) {
  const Index px = side * side;
  if (static_cast<Index>(bytes.size()) != n * px) {
    throw ShapeError("patch byte count " + std::to_string(bytes.size()) + " does not match " +
                     std::to_string(n) + " patches of side " + std::to_string(side));
  }
  Tensor<Scalar> out({n, 1, side, side});
  for (Index i = 0; i < n; ++i) {
    Eigen::Map<ArrayX<Scalar>> plane(out.data() + i * px, px);
    for (Index j = 0; j < px; ++j) {
      plane[j] = static_cast<Scalar>(bytes[static_cast<std::size_t>(i * px + j)]);
    }
    const Scalar mean = plane.mean();
    const Scalar sd = std::sqrt((plane - mean).square().sum() / Scalar(px));
    plane = (plane - mean) / std::max(sd, epsilon);
  }
  return out;
}

}  // namespace desdis
