#include "desdis/metrics.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace desdis {

double fpr_at_95_recall(std::span<const double> d_pos, std::span<const double> d_neg) {
  if (d_pos.empty() || d_neg.empty()) {
    throw std::invalid_argument("fpr_at_95_recall needs non-empty positive and negative sets");
  }
  std::vector<double> pos(d_pos.begin(), d_pos.end());
  std::sort(pos.begin(), pos.end());
  // k = ceil(0.95 * P) in exact integer arithmetic.
  const std::size_t p = pos.size();
  const std::size_t k = (95 * p + 99) / 100;
  const double tau = pos[k - 1];
  std::size_t false_pos = 0;
  for (double d : d_neg) {
    if (d <= tau) ++false_pos;
  }
  return static_cast<double>(false_pos) / static_cast<double>(d_neg.size());
}

double matching_average_precision(const Eigen::Ref<const Eigen::MatrixXd>& desc_ref,
                                  const Eigen::Ref<const Eigen::MatrixXd>& desc_target,
                                  std::span<const Index> correspondence) {
  const Index n = desc_ref.rows();
  if (desc_target.rows() != n || static_cast<Index>(correspondence.size()) != n) {
    throw std::invalid_argument("matching_average_precision size mismatch: " +
                                std::to_string(n) + " references, " +
                                std::to_string(desc_target.rows()) + " targets, " +
                                std::to_string(correspondence.size()) + " correspondences");
  }
  if (desc_ref.cols() != desc_target.cols()) {
    throw std::invalid_argument("descriptor dimension mismatch");
  }

  struct Match {
    double dist;
    Index ref;
    bool correct;
  };
  std::vector<Match> matches;
  matches.reserve(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    Index best = 0;
    double best_d = (desc_ref.row(i) - desc_target.row(0)).norm();
    for (Index j = 1; j < n; ++j) {
      const double d = (desc_ref.row(i) - desc_target.row(j)).norm();
      if (d < best_d) {
        best = j;
        best_d = d;
      }
    }
    matches.push_back({best_d, i, best == correspondence[static_cast<std::size_t>(i)]});
  }
  std::sort(matches.begin(), matches.end(), [](const Match& a, const Match& b) {
    return a.dist != b.dist ? a.dist < b.dist : a.ref < b.ref;
  });

  double ap = 0;
  Index correct = 0;
  for (Index k = 0; k < n; ++k) {
    if (matches[static_cast<std::size_t>(k)].correct) {
      ++correct;
      ap += static_cast<double>(correct) / static_cast<double>(k + 1);
    }
  }
  return ap / static_cast<double>(n);
}

}  // namespace desdis
