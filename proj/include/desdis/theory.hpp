#pragma once

#include <span>
#include <vector>

namespace desdis {

/// One triplet's teacher distances plus loss weights, the free data of the
/// hinge-active optimality analysis. The student distances are the variables.
struct TripletDistanceRecord {
  double d_t_pos = 0;
  double d_t_neg = 0;
  double alpha_p = 1;
  double alpha_n = 1;
  double margin = 1;
};

struct StudentDistances {
  double d_s_pos = 0;
  double d_s_neg = 0;
};

/// Stationary point of the hinge-active objective in closed form:
///   d_s_pos = d_t_pos - 1/(2 alpha_p),  d_s_neg = d_t_neg + 1/(2 alpha_n).
/// Throws std::invalid_argument for non-positive weights. The result may
/// leave the geometric feasible set (see geometrically_feasible); it is
/// reported as-is, never clamped.
StudentDistances closed_form_student(const TripletDistanceRecord& rec);

/// Whether a distance pair can be realized by unit-norm descriptors
/// (both distances in [0, 2]).
bool geometrically_feasible(const StudentDistances& d);

/// Gradient of the hinge-active objective
///   (m + d_pos - d_neg) + alpha_p (d_pos - d_t_pos)^2 + alpha_n (d_neg - d_t_neg)^2
/// at the given point: (1 + 2 a_p (d_pos - d_t_pos), -1 + 2 a_n (d_neg - d_t_neg)).
StudentDistances hinge_active_gradient(const TripletDistanceRecord& rec,
                                       const StudentDistances& at);

/// Value of the same objective, for the convexity and descent tests.
double hinge_active_objective(const TripletDistanceRecord& rec, const StudentDistances& at);

/// Independent numeric route to the same optimum: gradient descent with
/// backtracking line search from `init`, run until the gradient norm drops
/// below 1e-10. The objective is convex, so failure to converge within the
/// iteration cap signals a bug and throws std::runtime_error.
StudentDistances numeric_oracle(const TripletDistanceRecord& rec, const StudentDistances& init);

/// Empirical study of the hinge-activity condition m + d_pos - d_neg > 0:
/// the satisfied fraction plus a normalized histogram of the margin values.
struct HingeConditionStats {
  double fraction_satisfied = 0;
  std::vector<double> bin_edges;      // bins+1 edges
  std::vector<double> bin_fractions;  // sums to 1
};

HingeConditionStats hinge_condition_stats(std::span<const double> d_pos,
                                          std::span<const double> d_neg, double margin,
                                          int bins = 80);

}  // namespace desdis
