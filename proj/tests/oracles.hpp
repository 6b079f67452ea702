// Brute-force reference implementations used only by tests. Each one follows
// the plain definition with nested loops and stays independent of the library
// code paths it checks.
#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "desdis/tensor.hpp"

namespace oracles {

using desdis::Index;

// Direct cross-correlation by its 7-loop definition.
template <typename S>
desdis::Tensor<S> conv2d_naive(const desdis::Tensor<S>& x, const desdis::Tensor<S>& w,
                               Index stride, Index pad) {
  const Index N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const Index O = w.dim(0), KH = w.dim(2), KW = w.dim(3);
  const Index Ho = (H + 2 * pad - KH) / stride + 1;
  const Index Wo = (W + 2 * pad - KW) / stride + 1;
  desdis::Tensor<S> out({N, O, Ho, Wo});
  for (Index n = 0; n < N; ++n)
    for (Index o = 0; o < O; ++o)
      for (Index oh = 0; oh < Ho; ++oh)
        for (Index ow = 0; ow < Wo; ++ow) {
          S acc = 0;
          for (Index c = 0; c < C; ++c)
            for (Index kh = 0; kh < KH; ++kh)
              for (Index kw = 0; kw < KW; ++kw) {
                const Index ih = oh * stride + kh - pad;
                const Index iw = ow * stride + kw - pad;
                if (ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
                acc += x[((n * C + c) * H + ih) * W + iw] *
                       w[((o * C + c) * KH + kh) * KW + kw];
              }
          out[((n * O + o) * Ho + oh) * Wo + ow] = acc;
        }
  return out;
}

// Per-pair distance loop.
inline Eigen::MatrixXd distance_matrix_naive(const Eigen::MatrixXd& a,
                                             const Eigen::MatrixXd& b) {
  Eigen::MatrixXd d(a.rows(), b.rows());
  for (Index i = 0; i < a.rows(); ++i)
    for (Index j = 0; j < b.rows(); ++j) d(i, j) = (a.row(i) - b.row(j)).norm();
  return d;
}

// Exhaustive search over every admissible negative.
inline std::vector<Index> mine_hardest_exhaustive(const Eigen::MatrixXd& dist,
                                                  std::span<const std::uint32_t> ids) {
  std::vector<Index> out(static_cast<std::size_t>(dist.rows()), -1);
  for (Index i = 0; i < dist.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (Index j = 0; j < dist.cols(); ++j) {
      if (ids[static_cast<std::size_t>(j)] == ids[static_cast<std::size_t>(i)]) continue;
      if (dist(i, j) < best) {
        best = dist(i, j);
        out[static_cast<std::size_t>(i)] = j;
      }
    }
  }
  return out;
}

// Threshold sweep over all candidate taus (every positive distance), picking
// the smallest one admitting at least ceil(0.95 P) positives.
inline double fpr95_sweep(std::span<const double> d_pos, std::span<const double> d_neg) {
  std::vector<double> cands(d_pos.begin(), d_pos.end());
  std::sort(cands.begin(), cands.end());
  const std::size_t p = d_pos.size();
  const std::size_t need = (95 * p + 99) / 100;
  double tau = cands.back();
  for (double c : cands) {
    std::size_t admitted = 0;
    for (double d : d_pos) admitted += d <= c;
    if (admitted >= need) {
      tau = c;
      break;
    }
  }
  std::size_t fp = 0;
  for (double d : d_neg) fp += d <= tau;
  return static_cast<double>(fp) / static_cast<double>(d_neg.size());
}

// Average precision by definition: nearest neighbour per reference, matches
// ranked by distance (ties by reference index), precision accumulated at
// every correct hit, normalized by the reference count.
inline double matching_ap_naive(const Eigen::MatrixXd& ref, const Eigen::MatrixXd& tgt,
                                std::span<const Index> truth) {
  const Index n = ref.rows();
  std::vector<Index> nn(static_cast<std::size_t>(n));
  std::vector<double> nd(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    Index best = 0;
    double bd = (ref.row(i) - tgt.row(0)).norm();
    for (Index j = 1; j < n; ++j) {
      const double d = (ref.row(i) - tgt.row(j)).norm();
      if (d < bd) {
        bd = d;
        best = j;
      }
    }
    nn[static_cast<std::size_t>(i)] = best;
    nd[static_cast<std::size_t>(i)] = bd;
  }
  std::vector<Index> order(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  std::sort(order.begin(), order.end(), [&](Index a, Index b) {
    const double da = nd[static_cast<std::size_t>(a)], db = nd[static_cast<std::size_t>(b)];
    return da != db ? da < db : a < b;
  });
  double ap = 0;
  Index hit = 0;
  for (Index k = 0; k < n; ++k) {
    const Index i = order[static_cast<std::size_t>(k)];
    if (nn[static_cast<std::size_t>(i)] == truth[static_cast<std::size_t>(i)]) {
      ++hit;
      ap += static_cast<double>(hit) / static_cast<double>(k + 1);
    }
  }
  return ap / static_cast<double>(n);
}

}  // namespace oracles
