#include "desdis/theory.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace desdis {

namespace {
void require_valid(const TripletDistanceRecord& rec) {
  if (!(rec.alpha_p > 0) || !(rec.alpha_n > 0)) {
    throw std::invalid_argument("weights must be positive, got alpha_p=" +
                                std::to_string(rec.alpha_p) +
                                " alpha_n=" + std::to_string(rec.alpha_n));
  }
  if (!(rec.margin > 0)) throw std::invalid_argument("margin must be positive");
  if (rec.d_t_pos < 0 || rec.d_t_neg < 0) {
    throw std::invalid_argument("teacher distances must be non-negative");
  }
}
}  // namespace

StudentDistances closed_form_student(const TripletDistanceRecord& rec) {
  require_valid(rec);
  return {rec.d_t_pos - 1.0 / (2.0 * rec.alpha_p), rec.d_t_neg + 1.0 / (2.0 * rec.alpha_n)};
}

bool geometrically_feasible(const StudentDistances& d) {
  return d.d_s_pos >= 0 && d.d_s_pos <= 2 && d.d_s_neg >= 0 && d.d_s_neg <= 2;
}

StudentDistances hinge_active_gradient(const TripletDistanceRecord& rec,
                                       const StudentDistances& at) {
  return {1.0 + 2.0 * rec.alpha_p * (at.d_s_pos - rec.d_t_pos),
          -1.0 + 2.0 * rec.alpha_n * (at.d_s_neg - rec.d_t_neg)};
}

double hinge_active_objective(const TripletDistanceRecord& rec, const StudentDistances& at) {
  const double gp = at.d_s_pos - rec.d_t_pos;
  const double gn = at.d_s_neg - rec.d_t_neg;
  return (rec.margin + at.d_s_pos - at.d_s_neg) + rec.alpha_p * gp * gp +
         rec.alpha_n * gn * gn;
}

StudentDistances numeric_oracle(const TripletDistanceRecord& rec, const StudentDistances& init) {
  require_valid(rec);
  if (!(rec.margin + init.d_s_pos - init.d_s_neg > 0)) {
    throw std::invalid_argument("numeric_oracle initialization must lie in the hinge-active "
                                "region m + d_pos - d_neg > 0");
  }
  StudentDistances x = init;
  constexpr double kGradTol = 1e-10;
  constexpr int kMaxIters = 200000;
  for (int it = 0; it < kMaxIters; ++it) {
    const StudentDistances g = hinge_active_gradient(rec, x);
    const double gnorm2 = g.d_s_pos * g.d_s_pos + g.d_s_neg * g.d_s_neg;
    if (std::sqrt(gnorm2) < kGradTol) return x;
    const double f = hinge_active_objective(rec, x);
    double step = 1.0;
    // Armijo backtracking along the steepest descent direction.
    for (int bt = 0; bt < 200; ++bt) {
      const StudentDistances trial{x.d_s_pos - step * g.d_s_pos, x.d_s_neg - step * g.d_s_neg};
      if (hinge_active_objective(rec, trial) <= f - 0.5 * step * gnorm2) {
        x = trial;
        break;
      }
      step *= 0.5;
    }
  }
  throw std::runtime_error("numeric_oracle did not converge; the objective is convex, so this "
                           "indicates a bug");
}

HingeConditionStats hinge_condition_stats(std::span<const double> d_pos,
                                          std::span<const double> d_neg, double margin,
                                          int bins) {
  if (d_pos.size() != d_neg.size()) {
    throw std::invalid_argument("hinge_condition_stats length mismatch: " +
                                std::to_string(d_pos.size()) + " vs " +
                                std::to_string(d_neg.size()));
  }
  if (d_pos.empty()) throw std::invalid_argument("hinge_condition_stats: empty input");
  if (bins < 1) throw std::invalid_argument("hinge_condition_stats: bins must be >= 1");

  std::vector<double> values(d_pos.size());
  std::size_t satisfied = 0;
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (std::size_t i = 0; i < d_pos.size(); ++i) {
    const double v = margin + d_pos[i] - d_neg[i];
    values[i] = v;
    if (v > 0) ++satisfied;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (hi == lo) hi = lo + 1.0;  // degenerate spread: one bin catches everything

  HingeConditionStats out;
  out.fraction_satisfied = static_cast<double>(satisfied) / static_cast<double>(values.size());
  out.bin_edges.resize(static_cast<std::size_t>(bins) + 1);
  for (int b = 0; b <= bins; ++b) {
    out.bin_edges[static_cast<std::size_t>(b)] = lo + (hi - lo) * b / bins;
  }
  out.bin_fractions.assign(static_cast<std::size_t>(bins), 0.0);
  const double inv = 1.0 / static_cast<double>(values.size());
  for (double v : values) {
    int b = static_cast<int>((v - lo) / (hi - lo) * bins);
    b = std::clamp(b, 0, bins - 1);
    out.bin_fractions[static_cast<std::size_t>(b)] += inv;
  }
  return out;
}

}  // namespace desdis
