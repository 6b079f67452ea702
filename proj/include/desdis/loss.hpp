#pragma once

#include <Eigen/Dense>

#include <span>
#include <stdexcept>
#include <vector>

#include "desdis/tape.hpp"
#include "desdis/tensor.hpp"

namespace desdis {

class MiningError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// All pairwise Euclidean distances between the rows of A and the rows of B,
/// via the stabilized expansion sqrt(max(0, |a|^2 + |b|^2 - 2 a.b)).
template <typename Scalar>
MatrixX<Scalar> distance_matrix(const Eigen::Ref<const RowMajorMatrix<Scalar>>& a,
                                const Eigen::Ref<const RowMajorMatrix<Scalar>>& b) {
  if (a.cols() != b.cols()) {
    throw ShapeError("distance_matrix dimension mismatch: " + std::to_string(a.cols()) +
                     " vs " + std::to_string(b.cols()) + " columns");
  }
  const VectorX<Scalar> a2 = a.rowwise().squaredNorm();
  const VectorX<Scalar> b2 = b.rowwise().squaredNorm();
  MatrixX<Scalar> d = (-2 * a * b.transpose()).eval();
  d.colwise() += a2;
  d.rowwise() += b2.transpose();
  return d.array().max(Scalar(0)).sqrt();
}

/// Hardest-in-batch negatives: for each anchor row i, the column j with the
/// smallest distance among columns whose point id differs from the anchor's.
/// Ties break toward the smallest index.
struct MinedTriplets {
  std::vector<Index> negative;  // negative[i] = column index paired with anchor i
};

template <typename Scalar>
MinedTriplets mine_hardest_negatives(const MatrixX<Scalar>& dist,
                                     std::span<const std::uint32_t> point_ids) {
  const Index n = dist.rows();
  if (dist.cols() != n || static_cast<Index>(point_ids.size()) != n) {
    throw ShapeError("mine_hardest_negatives wants a square matrix with one point id per row");
  }
  bool two_ids = false;
  for (Index i = 1; i < n && !two_ids; ++i) two_ids = point_ids[i] != point_ids[0];
  if (!two_ids) {
    throw MiningError("negative mining needs at least 2 distinct point ids in the batch");
  }
  MinedTriplets out;
  out.negative.resize(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    Index best = -1;
    Scalar best_d = 0;
    for (Index j = 0; j < n; ++j) {
      if (point_ids[static_cast<std::size_t>(j)] == point_ids[static_cast<std::size_t>(i)]) {
        continue;
      }
      if (best < 0 || dist(i, j) < best_d) {
        best = j;
        best_d = dist(i, j);
      }
    }
    out.negative[static_cast<std::size_t>(i)] = best;
  }
  return out;
}

/// Classic triplet loss: (1/N) sum max(0, m + d_pos_i - d_neg_i).
template <typename Scalar>
Scalar triplet_loss(const VectorX<Scalar>& d_pos, const VectorX<Scalar>& d_neg, Scalar margin) {
  if (d_pos.size() != d_neg.size()) {
    throw ShapeError("triplet_loss length mismatch: " + std::to_string(d_pos.size()) + " vs " +
                     std::to_string(d_neg.size()));
  }
  return (margin + d_pos.array() - d_neg.array()).max(Scalar(0)).mean();
}

/// Teacher-student regularizer: (1/N) sum (d_teacher_i - d_student_i)^2.
/// Used for both the positive-pair and the negative-pair form.
template <typename Scalar>
Scalar ts_regularizer(const VectorX<Scalar>& d_teacher, const VectorX<Scalar>& d_student) {
  if (d_teacher.size() != d_student.size()) {
    throw ShapeError("ts_regularizer length mismatch: " + std::to_string(d_teacher.size()) +
                     " vs " + std::to_string(d_student.size()));
  }
  return (d_teacher - d_student).array().square().mean();
}

/// Weighted combination L_B + alpha_p * L_TSP + alpha_n * L_TSN.
template <typename Scalar>
Scalar total_loss(Scalar base, Scalar ts_pos, Scalar ts_neg, Scalar alpha_p, Scalar alpha_n) {
  if (alpha_p < Scalar(0) || alpha_n < Scalar(0)) {
    throw std::invalid_argument("total_loss weights must be non-negative");
  }
  return base + alpha_p * ts_pos + alpha_n * ts_neg;
}

// --- tape forms of the same losses, for training ---

template <typename Scalar>
Val triplet_loss(Tape<Scalar>& t, Val d_pos, Val d_neg, Scalar margin) {
  detail::require_same_shape(t.value(d_pos), t.value(d_neg), "triplet_loss");
  return reduce_mean(t, relu(t, add_scalar(t, sub(t, d_pos, d_neg), margin)));
}

/// Teacher distances enter as constants: no gradient reaches the teacher.
template <typename Scalar>
Val ts_regularizer(Tape<Scalar>& t, const VectorX<Scalar>& d_teacher, Val d_student) {
  Tensor<Scalar> teacher({d_teacher.size()});
  for (Index i = 0; i < d_teacher.size(); ++i) teacher[i] = d_teacher[i];
  Val gap = sub(t, constant(t, std::move(teacher)), d_student);
  return reduce_mean(t, mul(t, gap, gap));
}

template <typename Scalar>
Val total_loss(Tape<Scalar>& t, Val base, Val ts_pos, Val ts_neg, Scalar alpha_p,
               Scalar alpha_n) {
  if (alpha_p < Scalar(0) || alpha_n < Scalar(0)) {
    throw std::invalid_argument("total_loss weights must be non-negative");
  }
  return add(t, base,
             add(t, mul_scalar(t, ts_pos, alpha_p), mul_scalar(t, ts_neg, alpha_n)));
}

}  // namespace desdis
