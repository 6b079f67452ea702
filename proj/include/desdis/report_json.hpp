#pragma once

#include <iomanip>
#include <sstream>
#include <string>

#include <json.hpp>

#include "desdis/train.hpp"

namespace desdis {

inline nlohmann::json to_json(const DistanceTrace& t) {
  return {{"pos_mean", t.pos_mean}, {"neg_mean", t.neg_mean}};
}

inline nlohmann::json to_json(const MetricsReport& r) {
  return {
      {"fpr95", r.fpr95},
      {"matching_map", r.matching_map},
      {"mean_pos_dist", r.mean_pos_dist},
      {"mean_neg_dist", r.mean_neg_dist},
      {"loss_trace", r.loss_trace},
      {"train_model", to_json(r.train_model)},
      {"train_teacher", to_json(r.train_teacher)},
      {"holdout_model", to_json(r.holdout_model)},
      {"holdout_teacher", to_json(r.holdout_teacher)},
  };
}

inline nlohmann::json to_json(const EvalMetrics& m) {
  return {
      {"fpr95", m.fpr95},
      {"matching_map", m.matching_map},
      {"mean_pos_dist", m.mean_pos_dist},
      {"mean_neg_dist", m.mean_neg_dist},
  };
}

// Aligned-column text rendering of the headline numbers.
inline std::string report_to_text(const MetricsReport& r) {
  std::ostringstream os;
  os << std::left;
  const auto row = [&os](const char* name, double v) {
    os << "  " << std::setw(16) << name << v << "\n";
  };
  os << "metrics (holdout split)\n";
  row("fpr95", r.fpr95);
  row("matching_map", r.matching_map);
  os << "metrics (training split, final epoch)\n";
  row("mean_pos_dist", r.mean_pos_dist);
  row("mean_neg_dist", r.mean_neg_dist);
  if (!r.loss_trace.empty()) {
    os << "loss\n";
    row("first_epoch", r.loss_trace.front());
    row("final_epoch", r.loss_trace.back());
  }
  return os.str();
}

inline std::string metrics_to_text(const EvalMetrics& m) {
  std::ostringstream os;
  os << std::left;
  const auto row = [&os](const char* name, double v) {
    os << "  " << std::setw(16) << name << v << "\n";
  };
  os << "metrics (holdout split)\n";
  row("fpr95", m.fpr95);
  row("matching_map", m.matching_map);
  row("mean_pos_dist", m.mean_pos_dist);
  row("mean_neg_dist", m.mean_neg_dist);
  return os.str();
}

}  // namespace desdis
