#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "desdis/parallel.hpp"
#include "desdis/tensor.hpp"

namespace desdis {

/// Handle to a node on a Tape. Only meaningful for the tape that issued it.
struct Val {
  int id = -1;
};

enum class BnMode { kTrain, kEval };

/// Per-channel running statistics of a batch-norm layer. Not a tape node:
/// forward passes in train mode update it in place, eval passes read it.
template <typename Scalar>
struct BatchNormStats {
  VectorX<Scalar> mean;
  VectorX<Scalar> var;

  explicit BatchNormStats(Index channels)
      : mean(VectorX<Scalar>::Zero(channels)), var(VectorX<Scalar>::Ones(channels)) {}
};

/// Reverse-mode differentiation tape.
///
/// Every primitive appends one node holding the forward value, the input
/// references, and a closure with whatever forward state its gradient rule
/// needs. Nodes are in topological order by construction, so backward() is a
/// single reverse sweep. A tape is single-use: one forward build, one
/// backward; replaying a consumed tape is rejected.
template <typename Scalar>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Val leaf(Tensor<Scalar> value, bool trainable = false) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = trainable;
    n.trainable_leaf = trainable;
    nodes_.push_back(std::move(n));
    return Val{static_cast<int>(nodes_.size()) - 1};
  }

  const Tensor<Scalar>& value(Val v) const { return node(v).value; }

  // Gradient of the last backward()'s loss w.r.t. this node. Zero tensor for
  // trainable leaves the loss does not depend on.
  const Tensor<Scalar>& grad(Val v) const {
    if (!consumed_) throw std::logic_error("grad() called before backward()");
    const Node& n = node(v);
    if (n.grad.numel() != n.value.numel() || n.grad.shape() != n.value.shape()) {
      throw std::logic_error("no gradient recorded for this node; mark it trainable");
    }
    return n.grad;
  }

  // Reverse sweep from a scalar loss. Populates gradients for every node the
  // loss depends on, plus every trainable leaf (zeros when unreached).
  void backward(Val loss) {
    if (consumed_) {
      throw std::logic_error("backward() called twice on one tape; rebuild the forward pass");
    }
    Node& l = node(loss);
    if (l.value.numel() != 1) {
      throw ShapeError("backward() requires a scalar loss, got shape " +
                       shape_to_string(l.value.shape()));
    }
    consumed_ = true;
    for (auto& n : nodes_) {
      if (n.needs_grad || n.trainable_leaf) n.grad = Tensor<Scalar>::zeros(n.value.shape());
    }
    if (!l.needs_grad && !l.trainable_leaf) return;  // loss constant w.r.t. all leaves
    l.grad.array().setConstant(Scalar(1));
    for (int k = loss.id; k >= 0; --k) {
      Node& n = nodes_[static_cast<std::size_t>(k)];
      if (n.needs_grad && n.backward_fn) n.backward_fn(*this, n);
    }
  }

  bool consumed() const { return consumed_; }
  Index size() const { return static_cast<Index>(nodes_.size()); }

  // --- interface used by the primitive implementations ---

  struct Node {
    Tensor<Scalar> value;
    Tensor<Scalar> grad;
    std::array<int, 3> inputs{-1, -1, -1};
    bool needs_grad = false;
    bool trainable_leaf = false;
    std::function<void(Tape&, Node&)> backward_fn;
  };

  Val append(Tensor<Scalar> value, std::initializer_list<Val> inputs,
             std::function<void(Tape&, Node&)> backward_fn) {
    Node n;
    n.value = std::move(value);
    int slot = 0;
    for (Val in : inputs) {
      node(in);  // bounds check
      if (in.id >= static_cast<int>(nodes_.size())) {
        throw std::logic_error("tape input out of topological order");
      }
      n.inputs[static_cast<std::size_t>(slot++)] = in.id;
      n.needs_grad = n.needs_grad || nodes_[static_cast<std::size_t>(in.id)].needs_grad;
    }
    if (n.needs_grad) n.backward_fn = std::move(backward_fn);
    nodes_.push_back(std::move(n));
    return Val{static_cast<int>(nodes_.size()) - 1};
  }

  bool wants_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }

  Tensor<Scalar>& grad_buffer(int id) { return nodes_[static_cast<std::size_t>(id)].grad; }

  const Tensor<Scalar>& node_value(int id) const {
    return nodes_[static_cast<std::size_t>(id)].value;
  }

 private:
  Node& node(Val v) {
    if (v.id < 0 || v.id >= static_cast<int>(nodes_.size())) {
      throw std::logic_error("invalid tape handle");
    }
    return nodes_[static_cast<std::size_t>(v.id)];
  }
  const Node& node(Val v) const { return const_cast<Tape*>(this)->node(v); }

  std::vector<Node> nodes_;
  bool consumed_ = false;
};

template <typename Scalar>
Val constant(Tape<Scalar>& t, Tensor<Scalar> value) {
  return t.leaf(std::move(value), /*trainable=*/false);
}

namespace detail {

// Gathers conv patches of one C×H×W image (row-major) into a row-major
// (C*KH*KW) × (Ho*Wo) matrix; out-of-range taps read as zero padding.
template <typename Scalar>
void im2col(const Scalar* img, Index C, Index H, Index W, Index KH, Index KW, Index stride,
            Index pad, Index Ho, Index Wo, Scalar* col) {
  const Index L = Ho * Wo;
  for (Index c = 0; c < C; ++c) {
    const Scalar* plane = img + c * H * W;
    for (Index kh = 0; kh < KH; ++kh) {
      for (Index kw = 0; kw < KW; ++kw) {
        Scalar* row = col + ((c * KH + kh) * KW + kw) * L;
        for (Index oh = 0; oh < Ho; ++oh) {
          const Index ih = oh * stride + kh - pad;
          Scalar* dst = row + oh * Wo;
          if (ih < 0 || ih >= H) {
            std::fill(dst, dst + Wo, Scalar(0));
            continue;
          }
          const Scalar* src = plane + ih * W;
          for (Index ow = 0; ow < Wo; ++ow) {
            const Index iw = ow * stride + kw - pad;
            dst[ow] = (iw >= 0 && iw < W) ? src[iw] : Scalar(0);
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-adds a column matrix back into an image.
template <typename Scalar>
void col2im_add(const Scalar* col, Index C, Index H, Index W, Index KH, Index KW, Index stride,
                Index pad, Index Ho, Index Wo, Scalar* img) {
  const Index L = Ho * Wo;
  for (Index c = 0; c < C; ++c) {
    Scalar* plane = img + c * H * W;
    for (Index kh = 0; kh < KH; ++kh) {
      for (Index kw = 0; kw < KW; ++kw) {
        const Scalar* row = col + ((c * KH + kh) * KW + kw) * L;
        for (Index oh = 0; oh < Ho; ++oh) {
          const Index ih = oh * stride + kh - pad;
          if (ih < 0 || ih >= H) continue;
          Scalar* dst = plane + ih * W;
          const Scalar* src = row + oh * Wo;
          for (Index ow = 0; ow < Wo; ++ow) {
            const Index iw = ow * stride + kw - pad;
            if (iw >= 0 && iw < W) dst[iw] += src[ow];
          }
        }
      }
    }
  }
}

inline Index conv_out_extent(Index in, Index kernel, Index stride, Index pad) {
  return (in + 2 * pad - kernel) / stride + 1;
}

}  // namespace detail

/// 2-D cross-correlation of an NCHW input with OIHW weights, no bias.
/// Output extent: floor((H + 2*pad - KH)/stride) + 1, same for W.
template <typename Scalar>
Val conv2d(Tape<Scalar>& t, Val input, Val weights, Index stride, Index padding) {
  const Tensor<Scalar>& x = t.value(input);
  const Tensor<Scalar>& w = t.value(weights);
  if (x.rank() != 4) {
    throw ShapeError("conv2d input must be rank-4 NCHW, got shape " +
                     shape_to_string(x.shape()));
  }
  if (w.rank() != 4) {
    throw ShapeError("conv2d weights must be rank-4 OIHW, got shape " +
                     shape_to_string(w.shape()));
  }
  if (stride < 1) throw std::invalid_argument("conv2d stride must be >= 1");
  if (padding < 0) throw std::invalid_argument("conv2d padding must be >= 0");
  const Index N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const Index O = w.dim(0), I = w.dim(1), KH = w.dim(2), KW = w.dim(3);
  if (C != I) {
    throw ShapeError("conv2d channel mismatch: input axis 1 has " + std::to_string(C) +
                     " channels, weight axis 1 expects " + std::to_string(I));
  }
  if (H + 2 * padding < KH || W + 2 * padding < KW) {
    throw ShapeError("conv2d kernel " + std::to_string(KH) + "x" + std::to_string(KW) +
                     " does not fit padded input axes 2/3 of shape " +
                     shape_to_string(x.shape()) + " with padding " + std::to_string(padding));
  }
  const Index Ho = detail::conv_out_extent(H, KH, stride, padding);
  const Index Wo = detail::conv_out_extent(W, KW, stride, padding);
  const Index K = C * KH * KW;
  const Index L = Ho * Wo;

  Tensor<Scalar> out({N, O, Ho, Wo});
  {
    const Scalar* xp = x.data();
    const Scalar* wp = w.data();
    Scalar* op = out.data();
    parallel_for(N, [&](Index begin, Index end) {
      std::vector<Scalar> col(static_cast<std::size_t>(K * L));
      Eigen::Map<const RowMajorMatrix<Scalar>> wm(wp, O, K);
      for (Index n = begin; n < end; ++n) {
        detail::im2col(xp + n * C * H * W, C, H, W, KH, KW, stride, padding, Ho, Wo, col.data());
        Eigen::Map<const RowMajorMatrix<Scalar>> cm(col.data(), K, L);
        Eigen::Map<RowMajorMatrix<Scalar>> om(op + n * O * L, O, L);
        om.noalias() = wm * cm;
      }
    });
  }

  auto backward = [stride, padding](Tape<Scalar>& tape, typename Tape<Scalar>::Node& node) {
    const Tensor<Scalar>& x = tape.node_value(node.inputs[0]);
    const Tensor<Scalar>& w = tape.node_value(node.inputs[1]);
    const Index N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const Index O = w.dim(0), KH = w.dim(2), KW = w.dim(3);
    const Index Ho = node.value.dim(2), Wo = node.value.dim(3);
    const Index K = C * KH * KW;
    const Index L = Ho * Wo;
    const bool want_x = tape.wants_grad(node.inputs[0]);
    const bool want_w = tape.wants_grad(node.inputs[1]);
    Eigen::Map<const RowMajorMatrix<Scalar>> wm(w.data(), O, K);
    // Sequential over images: the dW reduction order is fixed, so results do
    // not depend on the worker cap.
    std::vector<Scalar> col(static_cast<std::size_t>(K * L));
    std::vector<Scalar> dcol(want_x ? static_cast<std::size_t>(K * L) : 0);
    Scalar* gx = want_x ? tape.grad_buffer(node.inputs[0]).data() : nullptr;
    Scalar* gw = want_w ? tape.grad_buffer(node.inputs[1]).data() : nullptr;
    Eigen::Map<RowMajorMatrix<Scalar>> gwm(want_w ? gw : col.data(), O, K);
    for (Index n = 0; n < N; ++n) {
      Eigen::Map<const RowMajorMatrix<Scalar>> gom(node.grad.data() + n * O * L, O, L);
      if (want_w) {
        detail::im2col(x.data() + n * C * H * W, C, H, W, KH, KW, stride, padding, Ho, Wo,
                       col.data());
        Eigen::Map<const RowMajorMatrix<Scalar>> cm(col.data(), K, L);
        gwm.noalias() += gom * cm.transpose();
      }
      if (want_x) {
        Eigen::Map<RowMajorMatrix<Scalar>> dcm(dcol.data(), K, L);
        dcm.noalias() = wm.transpose() * gom;
        detail::col2im_add(dcol.data(), C, H, W, KH, KW, stride, padding, Ho, Wo,
                           gx + n * C * H * W);
      }
    }
  };
  return t.append(std::move(out), {input, weights}, std::move(backward));
}

/// Per-channel batch normalization of an NCHW tensor with affine transform.
/// Train mode standardizes with batch statistics (population variance) and,
/// when `running` is given, folds them into the running stats by EMA with the
/// given momentum. Eval mode standardizes with the running stats.
template <typename Scalar>
Val batch_norm(Tape<Scalar>& t, Val input, Val gamma, Val beta, BatchNormStats<Scalar>* running,
               BnMode mode, Scalar momentum, Scalar epsilon) {
  const Tensor<Scalar>& x = t.value(input);
  const Tensor<Scalar>& g = t.value(gamma);
  const Tensor<Scalar>& b = t.value(beta);
  if (x.rank() != 4) {
    throw ShapeError("batch_norm input must be rank-4 NCHW, got shape " +
                     shape_to_string(x.shape()));
  }
  const Index N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (g.rank() != 1 || g.dim(0) != C || b.rank() != 1 || b.dim(0) != C) {
    throw ShapeError("batch_norm affine parameters must be length-" + std::to_string(C) +
                     " vectors matching input channel axis 1; got gamma " +
                     shape_to_string(g.shape()) + ", beta " + shape_to_string(b.shape()));
  }
  const Index M = N * H * W;  // reduction set per channel
  if (mode == BnMode::kTrain && M < 2) {
    throw std::invalid_argument("batch_norm train mode needs N*H*W >= 2 samples per channel");
  }
  if (mode == BnMode::kEval && running == nullptr) {
    throw std::invalid_argument("batch_norm eval mode needs running statistics");
  }

  VectorX<Scalar> mean(C), var(C);
  if (mode == BnMode::kTrain) {
    for (Index c = 0; c < C; ++c) {
      Scalar s = 0;
      for (Index n = 0; n < N; ++n) {
        Eigen::Map<const ArrayX<Scalar>> plane(x.data() + (n * C + c) * H * W, H * W);
        s += plane.sum();
      }
      mean[c] = s / Scalar(M);
      Scalar sq = 0;
      for (Index n = 0; n < N; ++n) {
        Eigen::Map<const ArrayX<Scalar>> plane(x.data() + (n * C + c) * H * W, H * W);
        sq += (plane - mean[c]).square().sum();
      }
      var[c] = sq / Scalar(M);
    }
    if (running != nullptr) {
      running->mean = (Scalar(1) - momentum) * running->mean + momentum * mean;
      running->var = (Scalar(1) - momentum) * running->var + momentum * var;
    }
  } else {
    mean = running->mean;
    var = running->var;
  }

  VectorX<Scalar> inv_std = (var.array() + epsilon).rsqrt().matrix();
  Tensor<Scalar> xhat(x.shape());
  Tensor<Scalar> out(x.shape());
  for (Index n = 0; n < N; ++n) {
    for (Index c = 0; c < C; ++c) {
      const Index off = (n * C + c) * H * W;
      Eigen::Map<const ArrayX<Scalar>> in(x.data() + off, H * W);
      Eigen::Map<ArrayX<Scalar>> xh(xhat.data() + off, H * W);
      Eigen::Map<ArrayX<Scalar>> o(out.data() + off, H * W);
      xh = (in - mean[c]) * inv_std[c];
      o = g[c] * xh + b[c];
    }
  }

  auto backward = [xhat = std::move(xhat), inv_std = std::move(inv_std), mode, M](
                      Tape<Scalar>& tape, typename Tape<Scalar>::Node& node) {
    const Tensor<Scalar>& g = tape.node_value(node.inputs[1]);
    const Index N = node.value.dim(0), C = node.value.dim(1);
    const Index HW = node.value.dim(2) * node.value.dim(3);
    const bool want_x = tape.wants_grad(node.inputs[0]);
    const bool want_g = tape.wants_grad(node.inputs[1]);
    const bool want_b = tape.wants_grad(node.inputs[2]);
    for (Index c = 0; c < C; ++c) {
      Scalar sum_gy = 0, sum_gy_xhat = 0;
      for (Index n = 0; n < N; ++n) {
        const Index off = (n * C + c) * HW;
        Eigen::Map<const ArrayX<Scalar>> gy(node.grad.data() + off, HW);
        Eigen::Map<const ArrayX<Scalar>> xh(xhat.data() + off, HW);
        sum_gy += gy.sum();
        sum_gy_xhat += (gy * xh).sum();
      }
      if (want_g) tape.grad_buffer(node.inputs[1])[c] += sum_gy_xhat;
      if (want_b) tape.grad_buffer(node.inputs[2])[c] += sum_gy;
      if (!want_x) continue;
      Scalar* gx = tape.grad_buffer(node.inputs[0]).data();
      if (mode == BnMode::kEval) {
        // Running stats are constants: the map is affine per channel.
        const Scalar k = g[c] * inv_std[c];
        for (Index n = 0; n < N; ++n) {
          const Index off = (n * C + c) * HW;
          Eigen::Map<const ArrayX<Scalar>> gy(node.grad.data() + off, HW);
          Eigen::Map<ArrayX<Scalar>> dx(gx + off, HW);
          dx += k * gy;
        }
      } else {
        const Scalar k = g[c] * inv_std[c] / Scalar(M);
        const Scalar mg = sum_gy / Scalar(M);
        const Scalar mgx = sum_gy_xhat / Scalar(M);
        for (Index n = 0; n < N; ++n) {
          const Index off = (n * C + c) * HW;
          Eigen::Map<const ArrayX<Scalar>> gy(node.grad.data() + off, HW);
          Eigen::Map<const ArrayX<Scalar>> xh(xhat.data() + off, HW);
          Eigen::Map<ArrayX<Scalar>> dx(gx + off, HW);
          dx += Scalar(M) * k * (gy - mg - xh * mgx);
        }
      }
    }
  };
  return t.append(std::move(out), {input, gamma, beta}, std::move(backward));
}

/// Elementwise max(0, x); gradient is the indicator x > 0.
template <typename Scalar>
Val relu(Tape<Scalar>& t, Val input) {
  Tensor<Scalar> out(t.value(input).shape());
  out.array() = t.value(input).array().max(Scalar(0));
  auto backward = [](Tape<Scalar>& tape, typename Tape<Scalar>::Node& node) {
    if (!tape.wants_grad(node.inputs[0])) return;
    const Tensor<Scalar>& x = tape.node_value(node.inputs[0]);
    tape.grad_buffer(node.inputs[0]).array() +=
        (x.array() > Scalar(0)).template cast<Scalar>() * node.grad.array();
  };
  return t.append(std::move(out), {input}, std::move(backward));
}

/// Divides every row of an N×D tensor by max(row L2 norm, epsilon).
template <typename Scalar>
Val l2_normalize(Tape<Scalar>& t, Val input, Scalar epsilon) {
  const Tensor<Scalar>& x = t.value(input);
  if (x.rank() != 2) {
    throw ShapeError("l2_normalize expects a rank-2 N×D tensor, got shape " +
                     shape_to_string(x.shape()));
  }
  const Index N = x.dim(0), D = x.dim(1);
  Tensor<Scalar> out(x.shape());
  VectorX<Scalar> denom(N);
  auto xm = x.matrix();
  auto om = out.matrix();
  for (Index i = 0; i < N; ++i) {
    denom[i] = std::max(xm.row(i).norm(), epsilon);
    om.row(i) = xm.row(i) / denom[i];
  }
  auto backward = [denom = std::move(denom), epsilon, D](Tape<Scalar>& tape,
                                                         typename Tape<Scalar>::Node& node) {
    if (!tape.wants_grad(node.inputs[0])) return;
    auto gy = node.grad.matrix();
    auto y = node.value.matrix();
    auto gx = tape.grad_buffer(node.inputs[0]).matrix();
    const Tensor<Scalar>& x = tape.node_value(node.inputs[0]);
    auto xm = x.matrix();
    for (Index i = 0; i < gy.rows(); ++i) {
      if (xm.row(i).norm() > epsilon) {
        const Scalar dot = y.row(i).dot(gy.row(i));
        gx.row(i) += (gy.row(i) - dot * y.row(i)) / denom[i];
      } else {
        // Below the guard the denominator is the constant epsilon.
        gx.row(i) += gy.row(i) / epsilon;
      }
    }
    (void)D;
  };
  return t.append(std::move(out), {input}, std::move(backward));
}

enum class ReduceKind { kSum, kMean };

/// Reduction over the given axes (deduplicated, ascending); the reduced axes
/// are removed from the shape. An empty axis list reduces everything to a
/// rank-0 scalar.
template <typename Scalar>
Val reduce(Tape<Scalar>& t, Val input, ReduceKind kind, std::span<const Index> axes) {
  const Tensor<Scalar>& x = t.value(input);
  const Index r = x.rank();
  std::vector<Index> ax(axes.begin(), axes.end());
  std::sort(ax.begin(), ax.end());
  ax.erase(std::unique(ax.begin(), ax.end()), ax.end());
  for (Index a : ax) {
    if (a < 0 || a >= r) {
      throw ShapeError("reduce axis " + std::to_string(a) + " invalid for shape " +
                       shape_to_string(x.shape()));
    }
  }
  if (ax.empty()) {
    ax.resize(static_cast<std::size_t>(r));
    for (Index a = 0; a < r; ++a) ax[static_cast<std::size_t>(a)] = a;
  }
  std::vector<bool> reduced(static_cast<std::size_t>(r), false);
  for (Index a : ax) reduced[static_cast<std::size_t>(a)] = true;
  std::vector<Index> out_shape;
  Index count = 1;
  for (Index a = 0; a < r; ++a) {
    if (reduced[static_cast<std::size_t>(a)]) {
      count *= x.dim(a);
    } else {
      out_shape.push_back(x.dim(a));
    }
  }

  // out_index_of[i] for every flat input index, shared by both sweeps.
  auto map_indices = [r, &reduced](const Tensor<Scalar>& in,
                                   const std::vector<Index>& out_shape) {
    std::vector<Index> out_stride(out_shape.size());
    Index s = 1;
    for (std::size_t i = out_shape.size(); i-- > 0;) {
      out_stride[i] = s;
      s *= out_shape[i];
    }
    std::vector<Index> idx(static_cast<std::size_t>(in.numel()));
    std::vector<Index> counter(static_cast<std::size_t>(r), 0);
    for (Index flat = 0; flat < in.numel(); ++flat) {
      Index o = 0;
      std::size_t oi = 0;
      for (Index a = 0; a < r; ++a) {
        if (!reduced[static_cast<std::size_t>(a)]) {
          o += counter[static_cast<std::size_t>(a)] * out_stride[oi++];
        }
      }
      idx[static_cast<std::size_t>(flat)] = o;
      for (Index a = r; a-- > 0;) {
        auto& c = counter[static_cast<std::size_t>(a)];
        if (++c < in.dim(a)) break;
        c = 0;
      }
    }
    return idx;
  };

  Tensor<Scalar> out(out_shape);
  std::vector<Index> idx = map_indices(x, out_shape);
  for (Index flat = 0; flat < x.numel(); ++flat) {
    out[idx[static_cast<std::size_t>(flat)]] += x[flat];
  }
  const Scalar scale = kind == ReduceKind::kMean ? Scalar(1) / Scalar(count) : Scalar(1);
  if (kind == ReduceKind::kMean) out.array() *= scale;

  auto backward = [idx = std::move(idx), scale](Tape<Scalar>& tape,
                                                typename Tape<Scalar>::Node& node) {
    if (!tape.wants_grad(node.inputs[0])) return;
    Tensor<Scalar>& gx = tape.grad_buffer(node.inputs[0]);
    for (Index flat = 0; flat < gx.numel(); ++flat) {
      gx[flat] += scale * node.grad[idx[static_cast<std::size_t>(flat)]];
    }
  };
  return t.append(std::move(out), {input}, std::move(backward));
}

template <typename Scalar>
Val reduce_sum(Tape<Scalar>& t, Val input, std::initializer_list<Index> axes = {}) {
  return reduce(t, input, ReduceKind::kSum, std::span<const Index>(axes.begin(), axes.size()));
}

template <typename Scalar>
Val reduce_mean(Tape<Scalar>& t, Val input, std::initializer_list<Index> axes = {}) {
  return reduce(t, input, ReduceKind::kMean, std::span<const Index>(axes.begin(), axes.size()));
}

namespace detail {
template <typename Scalar>
void require_same_shape(const Tensor<Scalar>& a, const Tensor<Scalar>& b, const char* op) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) +
                     " vs " + shape_to_string(b.shape()));
  }
}
}  // namespace detail

template <typename Scalar>
Val add(Tape<Scalar>& t, Val a, Val b) {
  detail::require_same_shape(t.value(a), t.value(b), "add");
  Tensor<Scalar> out(t.value(a).shape());
  out.array() = t.value(a).array() + t.value(b).array();
  auto backward = [](Tape<Scalar>& tape, typename Tape<Scalar>::Node& node) {
    for (int s = 0; s < 2; ++s) {
      if (tape.wants_grad(node.inputs[static_cast<std::size_t>(s)])) {
        tape.grad_buffer(node.inputs[static_cast<std::size_t>(s)]).array() += node.grad.array();
      }
    }
  };
  return t.append(std::move(out), {a, b}, std::move(backward));
}

template <typename Scalar>
Val sub(Tape<Scalar>& t, Val a, Val b) {
  detail::require_same_shape(t.value(a), t.value(b), "sub");
  Tensor<Scalar> out(t.value(a).shape());
  out.array() = t.value(a).array() - t.value(b).array();
  auto backward = [](Tape<Scalar>& tape, typename Tape<Scalar>::Node& node) {
    if (tape.wants_grad(node.inputs[0])) {
      tape.grad_buffer(node.inputs[0]).array() += node.grad.array();
    }
    if (tape.wants_grad(node.inputs[1])) {
      tape.grad_buffer(node.inputs[1]).array() -= node.grad.array();
    }
  };
  return t.append(std::move(out), {a, b}, std::move(backward));
}

template <typename Scalar>
Val mul(Tape<Scalar>& t, Val a, Val b) {
  detail::require_same_shape(t.value(a), t.value(b), "mul");
  Tensor<Scalar> out(t.value(a).shape());
  out.array() = t.value(a).array() * t.value(b).array();
  auto backward = [](Tape<Scalar>& tape, typename Tape<Scalar>::Node& node) {
    if (tape.wants_grad(node.inputs[0])) {
      tape.grad_buffer(node.inputs[0]).array() +=
          node.grad.array() * tape.node_value(node.inputs[1]).array();
    }
    if (tape.wants_grad(node.inputs[1])) {
      tape.grad_buffer(node.inputs[1]).array() +=
          node.grad.array() * tape.node_value(node.inputs[0]).array();
    }
  };
  return t.append(std::move(out), {a, b}, std::move(backward));
}

template <typename Scalar>
Val add_scalar(Tape<Scalar>& t, Val a, Scalar c) {
  Tensor<Scalar> out(t.value(a).shape());
  out.array() = t.value(a).array() + c;
  auto backward = [](Tape<Scalar>& tape, typename Tape<Scalar>::Node& node) {
    if (tape.wants_grad(node.inputs[0])) {
      tape.grad_buffer(node.inputs[0]).array() += node.grad.array();
    }
  };
  return t.append(std::move(out), {a}, std::move(backward));
}

template <typename Scalar>
Val mul_scalar(Tape<Scalar>& t, Val a, Scalar c) {
  Tensor<Scalar> out(t.value(a).shape());
  out.array() = t.value(a).array() * c;
  auto backward = [c](Tape<Scalar>& tape, typename Tape<Scalar>::Node& node) {
    if (tape.wants_grad(node.inputs[0])) {
      tape.grad_buffer(node.inputs[0]).array() += c * node.grad.array();
    }
  };
  return t.append(std::move(out), {a}, std::move(backward));
}

/// Copies the data into a new shape with the same element count.
template <typename Scalar>
Val reshape(Tape<Scalar>& t, Val input, std::vector<Index> shape) {
  Tensor<Scalar> out(std::move(shape));
  if (out.numel() != t.value(input).numel()) {
    throw ShapeError("reshape from " + shape_to_string(t.value(input).shape()) + " to " +
                     shape_to_string(out.shape()) + " changes the element count");
  }
  out.array() = t.value(input).array();
  auto backward = [](Tape<Scalar>& tape, typename Tape<Scalar>::Node& node) {
    if (tape.wants_grad(node.inputs[0])) {
      tape.grad_buffer(node.inputs[0]).array() += node.grad.array();
    }
  };
  return t.append(std::move(out), {input}, std::move(backward));
}

/// Selects rows of an N×D tensor; indices may repeat. Backward scatter-adds.
template <typename Scalar>
Val gather_rows(Tape<Scalar>& t, Val input, std::vector<Index> indices) {
  const Tensor<Scalar>& x = t.value(input);
  if (x.rank() != 2) {
    throw ShapeError("gather_rows expects a rank-2 tensor, got shape " +
                     shape_to_string(x.shape()));
  }
  const Index N = x.dim(0), D = x.dim(1);
  for (Index i : indices) {
    if (i < 0 || i >= N) {
      throw std::out_of_range("gather_rows index " + std::to_string(i) +
                              " out of range for " + std::to_string(N) + " rows");
    }
  }
  Tensor<Scalar> out({static_cast<Index>(indices.size()), D});
  auto om = out.matrix();
  auto xm = x.matrix();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    om.row(static_cast<Index>(i)) = xm.row(indices[i]);
  }
  auto backward = [indices = std::move(indices)](Tape<Scalar>& tape,
                                                 typename Tape<Scalar>::Node& node) {
    if (!tape.wants_grad(node.inputs[0])) return;
    auto gx = tape.grad_buffer(node.inputs[0]).matrix();
    auto gy = node.grad.matrix();
    for (std::size_t i = 0; i < indices.size(); ++i) {
      gx.row(indices[i]) += gy.row(static_cast<Index>(i));
    }
  };
  return t.append(std::move(out), {input}, std::move(backward));
}

/// Row-paired Euclidean distances of two N×D tensors: d_i = ||a_i - b_i||_2.
/// At d_i = 0 the subgradient 0 is used.
template <typename Scalar>
Val rowwise_distance(Tape<Scalar>& t, Val a, Val b) {
  const Tensor<Scalar>& av = t.value(a);
  const Tensor<Scalar>& bv = t.value(b);
  detail::require_same_shape(av, bv, "rowwise_distance");
  if (av.rank() != 2) {
    throw ShapeError("rowwise_distance expects rank-2 tensors, got shape " +
                     shape_to_string(av.shape()));
  }
  const Index N = av.dim(0);
  Tensor<Scalar> out({N});
  auto am = av.matrix();
  auto bm = bv.matrix();
  for (Index i = 0; i < N; ++i) {
    const Scalar sq = (am.row(i) - bm.row(i)).squaredNorm();
    out[i] = std::sqrt(std::max(sq, Scalar(0)));
  }
  auto backward = [](Tape<Scalar>& tape, typename Tape<Scalar>::Node& node) {
    const bool want_a = tape.wants_grad(node.inputs[0]);
    const bool want_b = tape.wants_grad(node.inputs[1]);
    if (!want_a && !want_b) return;
    auto am = tape.node_value(node.inputs[0]).matrix();
    auto bm = tape.node_value(node.inputs[1]).matrix();
    for (Index i = 0; i < node.value.numel(); ++i) {
      const Scalar d = node.value[i];
      if (d <= Scalar(0)) continue;
      const Scalar k = node.grad[i] / d;
      if (want_a) {
        tape.grad_buffer(node.inputs[0]).matrix().row(i) += k * (am.row(i) - bm.row(i));
      }
      if (want_b) {
        tape.grad_buffer(node.inputs[1]).matrix().row(i) -= k * (am.row(i) - bm.row(i));
      }
    }
  };
  return t.append(std::move(out), {a, b}, std::move(backward));
}

}  // namespace desdis
