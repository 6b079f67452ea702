#pragma once

#include <Eigen/Dense>

#include <span>
#include <vector>

#include "desdis/tensor.hpp"

namespace desdis {

/// False positive rate at 95% recall: tau is the smallest distance admitting
/// at least ceil(0.95 * P) positive pairs, and the result is the fraction of
/// negative pairs with distance <= tau. Invariant under any common strictly
/// increasing rescaling of all distances.
double fpr_at_95_recall(std::span<const double> d_pos, std::span<const double> d_neg);

/// Simplified image-matching average precision: each reference descriptor is
/// assigned its nearest target row (ties toward the smaller index), matches
/// are ranked by ascending distance (ties by reference index), and a match
/// counts as correct iff it agrees with `correspondence`. AP normalizes by
/// the number of reference rows.
double matching_average_precision(const Eigen::Ref<const Eigen::MatrixXd>& desc_ref,
                                  const Eigen::Ref<const Eigen::MatrixXd>& desc_target,
                                  std::span<const Index> correspondence);

}  // namespace desdis
