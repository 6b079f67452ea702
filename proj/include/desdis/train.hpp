#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "desdis/arch.hpp"
#include "desdis/checkpoint.hpp"
#include "desdis/dataset.hpp"
#include "desdis/loss.hpp"
#include "desdis/metrics.hpp"
#include "desdis/net.hpp"
#include "desdis/optim.hpp"
#include "desdis/rng.hpp"
#include "desdis/tape.hpp"

namespace desdis {

struct TrainConfig {
  std::string arch = "desdis32";
  Index batch_points = 64;  // point pairs per batch
  int epochs = 30;
  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double margin = 1.0;
  double alpha_p = 0.0;
  double alpha_n = 0.0;
  double bn_momentum = 0.1;
  std::uint64_t seed = 0;
  bool warm_start_from_teacher = false;  // equal-weight distillation only

  void validate() const {
    if (batch_points < 2) throw std::invalid_argument("batch needs at least 2 points");
    if (epochs < 0) throw std::invalid_argument("epochs must be >= 0");
    if (!(lr > 0)) throw std::invalid_argument("learning rate must be positive");
    if (!(beta1 > 0 && beta1 < 1) || !(beta2 > 0 && beta2 < 1)) {
      throw std::invalid_argument("Adam betas must lie in (0, 1)");
    }
    if (!(adam_eps > 0)) throw std::invalid_argument("Adam epsilon must be positive");
    if (!(margin > 0)) throw std::invalid_argument("margin must be positive");
    if (alpha_p < 0 || alpha_n < 0) {
      throw std::invalid_argument("regularizer weights must be non-negative");
    }
    if (!(bn_momentum > 0 && bn_momentum <= 1)) {
      throw std::invalid_argument("batch-norm momentum must lie in (0, 1]");
    }
  }
};

/// Per-epoch means of positive / negative pair distances on one split.
struct DistanceTrace {
  std::vector<double> pos_mean;
  std::vector<double> neg_mean;
};

struct MetricsReport {
  double fpr95 = std::numeric_limits<double>::quiet_NaN();
  double matching_map = std::numeric_limits<double>::quiet_NaN();
  double mean_pos_dist = 0;  // final epoch, training split, trained model
  double mean_neg_dist = 0;
  std::vector<double> loss_trace;  // per-epoch mean batch loss
  // Distance traces for both models on both splits. Negative pairs are the
  // hardest-in-split cross-id pairs mined on the trained model's descriptors
  // and evaluated under both models, so the teacher/model curves compare the
  // same patch pairs. Teacher traces are empty for plain training.
  DistanceTrace train_model, train_teacher, holdout_model, holdout_teacher;
};

template <typename Scalar>
struct TrainOutcome {
  DescriptorNet<Scalar> net;
  AdamState<Scalar> opt;
  MetricsReport report;
  // Final-epoch per-anchor triplet distances on the training split (one
  // anchor per patch, cyclic positive pairing, mined negatives); the input
  // of the hinge-condition study.
  std::vector<double> final_train_d_pos;
  std::vector<double> final_train_d_neg;
};

/// Invoked after every completed epoch with the epoch index that would run
/// next; gives callers a hook to persist a resumable state mid-budget.
template <typename Scalar>
using EpochCallback =
    std::function<void(int next_epoch, const DescriptorNet<Scalar>&, const AdamState<Scalar>&)>;

struct EvalMetrics {
  double fpr95 = std::numeric_limits<double>::quiet_NaN();
  double matching_map = std::numeric_limits<double>::quiet_NaN();
  double mean_pos_dist = 0;
  double mean_neg_dist = 0;
};

namespace detail {

// Fixed pair structure of one split: the member patches in ascending order,
// cyclic anchor/positive pairing, and every within-id pair.
struct EvalPlan {
  std::vector<Index> patch_idx;
  std::vector<std::uint32_t> ids;                    // per entry of patch_idx
  std::vector<Index> positive_of;                    // positions, cyclic within id
  std::vector<std::pair<Index, Index>> all_pos_pairs;  // positions, i < j
};

inline EvalPlan make_eval_plan(const PatchDataset& ds, std::span<const std::uint32_t> split_ids) {
  EvalPlan plan;
  for (std::uint32_t id : split_ids) {
    const auto members = ds.patches_of_point(id);
    const Index base = static_cast<Index>(plan.patch_idx.size());
    const Index k = static_cast<Index>(members.size());
    for (Index a = 0; a < k; ++a) {
      plan.patch_idx.push_back(members[static_cast<std::size_t>(a)]);
      plan.ids.push_back(id);
      plan.positive_of.push_back(base + (a + 1) % k);
      for (Index b = a + 1; b < k; ++b) plan.all_pos_pairs.emplace_back(base + a, base + b);
    }
  }
  return plan;
}

// Eval-mode descriptors of the selected patches, widened to double.
template <typename Scalar>
Eigen::MatrixXd infer_descriptors(const DescriptorNet<Scalar>& net, const PatchDataset& ds,
                                  std::span<const Index> patch_idx) {
  const Index dim = net.spec().descriptor_dim;
  Eigen::MatrixXd out(static_cast<Index>(patch_idx.size()), dim);
  constexpr Index kChunk = 128;
  for (Index begin = 0; begin < out.rows(); begin += kChunk) {
    const Index len = std::min(kChunk, out.rows() - begin);
    Tensor<Scalar> in = gather_standardized<Scalar>(ds, patch_idx.subspan(
                                                            static_cast<std::size_t>(begin),
                                                            static_cast<std::size_t>(len)));
    const Tensor<Scalar> desc = net.infer(in);
    auto dm = desc.matrix();
    for (Index r = 0; r < len; ++r) {
      for (Index c = 0; c < dim; ++c) out(begin + r, c) = static_cast<double>(dm(r, c));
    }
  }
  return out;
}

struct SplitDistances {
  std::vector<double> d_pos;      // per anchor, cyclic positive
  std::vector<double> d_neg;      // per anchor, mined negative
  std::vector<Index> neg_index;   // position of the mined negative
};

// Anchor-wise triplet distances on a split. Negatives are mined as the
// hardest cross-id patch under `mine_on`; distances are then read from
// `desc`, so a frozen teacher can be evaluated on the pairs mined from the
// student by passing its own descriptor matrix as `desc`.
inline SplitDistances split_distances(const EvalPlan& plan, const Eigen::MatrixXd& desc,
                                      const Eigen::MatrixXd& mine_on) {
  SplitDistances out;
  const Index n = desc.rows();
  const Eigen::MatrixXd dist = distance_matrix<double>(
      RowMajorMatrix<double>(mine_on), RowMajorMatrix<double>(mine_on));
  const MinedTriplets mined = mine_hardest_negatives(dist, plan.ids);
  out.neg_index = mined.negative;
  out.d_pos.resize(static_cast<std::size_t>(n));
  out.d_neg.resize(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    out.d_pos[static_cast<std::size_t>(i)] =
        (desc.row(i) - desc.row(plan.positive_of[static_cast<std::size_t>(i)])).norm();
    out.d_neg[static_cast<std::size_t>(i)] =
        (desc.row(i) - desc.row(mined.negative[static_cast<std::size_t>(i)])).norm();
  }
  return out;
}

inline double mean_of(std::span<const double> v) {
  double s = 0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

inline std::vector<double> all_pair_distances(const EvalPlan& plan,
                                              const Eigen::MatrixXd& desc) {
  std::vector<double> out;
  out.reserve(plan.all_pos_pairs.size());
  for (const auto& [a, b] : plan.all_pos_pairs) {
    out.push_back((desc.row(a) - desc.row(b)).norm());
  }
  return out;
}

// Patch-verification and matching metrics on one split: FPR@95 over all
// within-id pairs vs mined negatives, and matching AP between the first and
// second view of every id under a pinned target permutation.
inline EvalMetrics split_metrics(const EvalPlan& plan, const Eigen::MatrixXd& desc) {
  EvalMetrics m;
  const std::vector<double> pos = all_pair_distances(plan, desc);
  const SplitDistances sd = split_distances(plan, desc, desc);
  if (!pos.empty() && !sd.d_neg.empty()) {
    m.fpr95 = fpr_at_95_recall(pos, sd.d_neg);
  }
  m.mean_pos_dist = mean_of(sd.d_pos);
  m.mean_neg_dist = mean_of(sd.d_neg);

  // First view of each id as reference, second as target.
  std::vector<Index> first_pos, second_pos;
  std::uint32_t last_id = plan.ids.empty() ? 0 : plan.ids[0] + 1;
  for (std::size_t i = 0; i < plan.ids.size(); ++i) {
    if (plan.ids[i] != last_id) {
      last_id = plan.ids[i];
      first_pos.push_back(static_cast<Index>(i));
      second_pos.push_back(plan.positive_of[i]);
    }
  }
  const Index k = static_cast<Index>(first_pos.size());
  if (k >= 2) {
    std::vector<Index> perm(static_cast<std::size_t>(k));
    for (Index i = 0; i < k; ++i) perm[static_cast<std::size_t>(i)] = i;
    Rng rng(derive_seed(0x9A7C, static_cast<std::uint64_t>(k)));
    rng.shuffle(perm);
    Eigen::MatrixXd ref(k, desc.cols()), tgt(k, desc.cols());
    for (Index i = 0; i < k; ++i) {
      ref.row(i) = desc.row(first_pos[static_cast<std::size_t>(i)]);
      tgt.row(perm[static_cast<std::size_t>(i)]) =
          desc.row(second_pos[static_cast<std::size_t>(i)]);
    }
    m.matching_map = matching_average_precision(ref, tgt, perm);
  }
  return m;
}

}  // namespace detail

/// Eval-mode metrics of a network on a dataset's holdout split.
template <typename Scalar>
EvalMetrics evaluate_net(const PatchDataset& ds, const DescriptorNet<Scalar>& net) {
  const auto holdout_ids = ds.holdout_point_ids();
  if (holdout_ids.size() < 2) {
    throw std::invalid_argument("holdout split needs at least 2 point ids");
  }
  const detail::EvalPlan plan = detail::make_eval_plan(ds, holdout_ids);
  const Eigen::MatrixXd desc = detail::infer_descriptors(net, ds, plan.patch_idx);
  return detail::split_metrics(plan, desc);
}

namespace detail {

// Shared loop behind teacher training and distillation. `teacher`, when
// present, is used frozen in eval mode; negatives are always mined on the
// trained model's distances and the same pair indices are read from both
// models, so the regularizer compares like with like.
template <typename Scalar>
TrainOutcome<Scalar> run_training(const PatchDataset& ds, const TrainConfig& cfg,
                                  const DescriptorNet<Scalar>* teacher,
                                  DescriptorNet<Scalar> net, AdamState<Scalar> opt,
                                  int start_epoch,
                                  const EpochCallback<Scalar>& on_epoch = {}) {
  cfg.validate();
  const auto train_ids = ds.train_point_ids();
  const auto holdout_ids = ds.holdout_point_ids();
  if (static_cast<Index>(train_ids.size()) < cfg.batch_points) {
    throw std::invalid_argument("dataset too small for batch: " +
                                std::to_string(train_ids.size()) + " training points, batch " +
                                std::to_string(cfg.batch_points));
  }
  const bool use_regularizer =
      teacher != nullptr && (cfg.alpha_p > 0 || cfg.alpha_n > 0);

  const EvalPlan train_plan = make_eval_plan(ds, train_ids);
  const EvalPlan holdout_plan = make_eval_plan(ds, holdout_ids);
  const bool eval_holdout = holdout_ids.size() >= 2;

  // Teacher descriptors per split are constants; compute them once.
  Eigen::MatrixXd teacher_train_desc, teacher_holdout_desc;
  if (teacher != nullptr) {
    teacher_train_desc = infer_descriptors(*teacher, ds, train_plan.patch_idx);
    if (eval_holdout) {
      teacher_holdout_desc = infer_descriptors(*teacher, ds, holdout_plan.patch_idx);
    }
  }

  const Index steps_per_epoch =
      (static_cast<Index>(train_ids.size()) + cfg.batch_points - 1) / cfg.batch_points;
  const std::int64_t total_steps = static_cast<std::int64_t>(steps_per_epoch) * cfg.epochs;

  TrainOutcome<Scalar> out{std::move(net), std::move(opt), {}, {}, {}};
  MetricsReport& report = out.report;

  for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    Rng rng(derive_seed(cfg.seed, 0x45504F43ull + static_cast<std::uint64_t>(epoch)));
    double loss_sum = 0;
    for (Index step = 0; step < steps_per_epoch; ++step) {
      TripletBatch batch = sample_triplet_batch(ds, train_ids, cfg.batch_points, rng);
      const Index b = static_cast<Index>(batch.anchor_idx.size());
      std::vector<Index> stacked(batch.anchor_idx);
      stacked.insert(stacked.end(), batch.positive_idx.begin(), batch.positive_idx.end());
      Tensor<Scalar> patches = gather_standardized<Scalar>(ds, stacked);

      Tape<Scalar> tape;
      Val in = tape.leaf(patches, /*trainable=*/false);
      auto handles = out.net.forward(tape, in, DescriptorNet<Scalar>::Mode::kTrain);
      std::vector<Index> lo(static_cast<std::size_t>(b)), hi(static_cast<std::size_t>(b));
      for (Index i = 0; i < b; ++i) {
        lo[static_cast<std::size_t>(i)] = i;
        hi[static_cast<std::size_t>(i)] = b + i;
      }
      Val anchor_desc = gather_rows(tape, handles.output, lo);
      Val positive_desc = gather_rows(tape, handles.output, hi);

      // Hardest-in-batch negatives on the trained model's own distances.
      const Tensor<Scalar>& desc_v = tape.value(handles.output);
      auto desc_m = desc_v.matrix();
      const MatrixX<Scalar> batch_dist =
          distance_matrix<Scalar>(desc_m.topRows(b), desc_m.bottomRows(b));
      const MinedTriplets mined = mine_hardest_negatives(batch_dist, batch.point_ids);
      batch.negative_idx = mined.negative;

      Val negative_desc = gather_rows(tape, positive_desc, mined.negative);
      Val d_pos = rowwise_distance(tape, anchor_desc, positive_desc);
      Val d_neg = rowwise_distance(tape, anchor_desc, negative_desc);
      Val loss = triplet_loss(tape, d_pos, d_neg, static_cast<Scalar>(cfg.margin));

      if (use_regularizer) {
        const Tensor<Scalar> tdesc = teacher->infer(patches);
        auto tm = tdesc.matrix();
        VectorX<Scalar> t_pos(b), t_neg(b);
        for (Index i = 0; i < b; ++i) {
          t_pos[i] = (tm.row(i) - tm.row(b + i)).norm();
          t_neg[i] = (tm.row(i) - tm.row(b + mined.negative[static_cast<std::size_t>(i)])).norm();
        }
        Val ts_pos = ts_regularizer(tape, t_pos, d_pos);
        Val ts_neg = ts_regularizer(tape, t_neg, d_neg);
        loss = total_loss(tape, loss, ts_pos, ts_neg, static_cast<Scalar>(cfg.alpha_p),
                          static_cast<Scalar>(cfg.alpha_n));
      }

      tape.backward(loss);
      auto params = out.net.parameters();
      for (std::size_t i = 0; i < params.size(); ++i) {
        params[i].grad = tape.grad(handles.param_vals[i]);
      }
      // Linear decay to zero over the full step budget.
      const double frac = static_cast<double>(out.opt.step) / static_cast<double>(total_steps);
      const Scalar lr = static_cast<Scalar>(cfg.lr * (1.0 - frac));
      adam_step(params, out.opt, lr, static_cast<Scalar>(cfg.beta1),
                static_cast<Scalar>(cfg.beta2), static_cast<Scalar>(cfg.adam_eps));
      loss_sum += static_cast<double>(tape.value(loss).value());
    }
    report.loss_trace.push_back(loss_sum / static_cast<double>(steps_per_epoch));

    // Epoch-end distance study in eval mode.
    const Eigen::MatrixXd model_train_desc = infer_descriptors(out.net, ds, train_plan.patch_idx);
    const SplitDistances train_sd = split_distances(train_plan, model_train_desc,
                                                    model_train_desc);
    report.train_model.pos_mean.push_back(mean_of(train_sd.d_pos));
    report.train_model.neg_mean.push_back(mean_of(train_sd.d_neg));
    if (teacher != nullptr) {
      SplitDistances t_sd;
      t_sd.d_pos.resize(train_sd.d_pos.size());
      t_sd.d_neg.resize(train_sd.d_neg.size());
      for (std::size_t i = 0; i < train_sd.neg_index.size(); ++i) {
        const Index a = static_cast<Index>(i);
        t_sd.d_pos[i] = (teacher_train_desc.row(a) -
                         teacher_train_desc.row(train_plan.positive_of[i])).norm();
        t_sd.d_neg[i] = (teacher_train_desc.row(a) -
                         teacher_train_desc.row(train_sd.neg_index[i])).norm();
      }
      report.train_teacher.pos_mean.push_back(mean_of(t_sd.d_pos));
      report.train_teacher.neg_mean.push_back(mean_of(t_sd.d_neg));
    }
    if (eval_holdout) {
      const Eigen::MatrixXd model_holdout_desc =
          infer_descriptors(out.net, ds, holdout_plan.patch_idx);
      const SplitDistances h_sd = split_distances(holdout_plan, model_holdout_desc,
                                                  model_holdout_desc);
      report.holdout_model.pos_mean.push_back(mean_of(h_sd.d_pos));
      report.holdout_model.neg_mean.push_back(mean_of(h_sd.d_neg));
      if (teacher != nullptr) {
        double tp = 0, tn = 0;
        for (std::size_t i = 0; i < h_sd.neg_index.size(); ++i) {
          const Index a = static_cast<Index>(i);
          tp += (teacher_holdout_desc.row(a) -
                 teacher_holdout_desc.row(holdout_plan.positive_of[i])).norm();
          tn += (teacher_holdout_desc.row(a) -
                 teacher_holdout_desc.row(h_sd.neg_index[i])).norm();
        }
        const double n = static_cast<double>(h_sd.neg_index.size());
        report.holdout_teacher.pos_mean.push_back(tp / n);
        report.holdout_teacher.neg_mean.push_back(tn / n);
      }
    }
    if (epoch + 1 == cfg.epochs) {
      out.final_train_d_pos = train_sd.d_pos;
      out.final_train_d_neg = train_sd.d_neg;
    }
    if (on_epoch) on_epoch(epoch + 1, out.net, out.opt);
  }

  // Final metrics. The epochs == 0 path still has to fill the final-state
  // distances from the untouched initialization.
  if (out.final_train_d_pos.empty()) {
    const Eigen::MatrixXd model_train_desc = infer_descriptors(out.net, ds, train_plan.patch_idx);
    const SplitDistances train_sd = split_distances(train_plan, model_train_desc,
                                                    model_train_desc);
    out.final_train_d_pos = train_sd.d_pos;
    out.final_train_d_neg = train_sd.d_neg;
  }
  report.mean_pos_dist = mean_of(out.final_train_d_pos);
  report.mean_neg_dist = mean_of(out.final_train_d_neg);
  if (eval_holdout) {
    const EvalMetrics m =
        split_metrics(holdout_plan, infer_descriptors(out.net, ds, holdout_plan.patch_idx));
    report.fpr95 = m.fpr95;
    report.matching_map = m.matching_map;
  }
  return out;
}

}  // namespace detail

inline constexpr std::uint64_t kInitStream = 0x494E4954ull;

/// Trains a network on the classic triplet loss with hardest-in-batch mining.
template <typename Scalar>
TrainOutcome<Scalar> train_teacher(const PatchDataset& ds, const TrainConfig& cfg,
                                   const EpochCallback<Scalar>& on_epoch = {}) {
  DescriptorNet<Scalar> net(build_spec(cfg.arch), derive_seed(cfg.seed, kInitStream),
                            static_cast<Scalar>(cfg.bn_momentum));
  AdamState<Scalar> opt = AdamState<Scalar>::init_for(net.parameters());
  return detail::run_training<Scalar>(ds, cfg, nullptr, std::move(net), std::move(opt), 0,
                                      on_epoch);
}

/// Distills a student (cfg.arch) against a frozen teacher on the combined
/// objective. Teacher and student architectures and descriptor dimensions
/// may differ freely: only pair distances are matched.
template <typename Scalar>
TrainOutcome<Scalar> distill_student(const PatchDataset& ds, const DescriptorNet<Scalar>& teacher,
                                     const TrainConfig& cfg,
                                     const EpochCallback<Scalar>& on_epoch = {}) {
  DescriptorNet<Scalar> frozen = teacher;
  frozen.set_trainable(false);
  DescriptorNet<Scalar> net = [&] {
    if (cfg.warm_start_from_teacher) {
      if (teacher.spec().name != cfg.arch) {
        throw std::invalid_argument("warm start needs matching architectures, teacher is " +
                                    teacher.spec().name + ", student is " + cfg.arch);
      }
      DescriptorNet<Scalar> n = teacher;
      n.set_trainable(true);
      return n;
    }
    return DescriptorNet<Scalar>(build_spec(cfg.arch), derive_seed(cfg.seed, kInitStream),
                                 static_cast<Scalar>(cfg.bn_momentum));
  }();
  AdamState<Scalar> opt = AdamState<Scalar>::init_for(net.parameters());
  return detail::run_training<Scalar>(ds, cfg, &frozen, std::move(net), std::move(opt), 0,
                                      on_epoch);
}

// --- mid-training persistence ---

template <typename Scalar>
struct TrainState {
  DescriptorNet<Scalar> net;
  AdamState<Scalar> opt;
  int next_epoch = 0;
};

template <typename Scalar>
void save_train_state(const DescriptorNet<Scalar>& net, const AdamState<Scalar>& opt,
                      int next_epoch, const std::filesystem::path& path) {
  CheckpointData ck = to_checkpoint(net);
  const auto params = net.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    ck.records.push_back(detail::tensor_record("opt.m." + params[i].name, opt.m[i]));
    ck.records.push_back(detail::tensor_record("opt.v." + params[i].name, opt.v[i]));
  }
  CheckpointData::Record progress;
  progress.name = "train.progress";
  progress.dims = {2};
  progress.values = {static_cast<float>(opt.step), static_cast<float>(next_epoch)};
  ck.records.push_back(std::move(progress));
  write_checkpoint_file(ck, path);
}

template <typename Scalar>
TrainState<Scalar> load_train_state(const std::filesystem::path& path,
                                    Scalar bn_momentum = Scalar(0.1)) {
  const CheckpointData ck = read_checkpoint_file(path);
  TrainState<Scalar> st{net_from_checkpoint<Scalar>(ck, bn_momentum), {}, 0};
  st.opt = AdamState<Scalar>::init_for(st.net.parameters());
  const auto params = st.net.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    for (bool first : {true, false}) {
      const std::string name = (first ? "opt.m." : "opt.v.") + params[i].name;
      const auto* rec = ck.find(name);
      if (rec == nullptr) throw FormatError("train state is missing '" + name + "'");
      Tensor<Scalar> t = detail::record_tensor<Scalar>(*rec);
      if (!t.same_shape(params[i].value)) {
        throw FormatError("train state moment '" + name + "' shape mismatch");
      }
      (first ? st.opt.m[i] : st.opt.v[i]) = std::move(t);
    }
  }
  const auto* progress = ck.find("train.progress");
  if (progress == nullptr || progress->values.size() != 2) {
    throw FormatError("train state is missing 'train.progress'");
  }
  st.opt.step = static_cast<std::int64_t>(progress->values[0]);
  st.next_epoch = static_cast<int>(progress->values[1]);
  return st;
}

/// Continues an interrupted run; with the same config the trajectory is
/// bit-identical to the uninterrupted one.
template <typename Scalar>
TrainOutcome<Scalar> resume_training(const PatchDataset& ds, const TrainConfig& cfg,
                                     TrainState<Scalar> state,
                                     const DescriptorNet<Scalar>* teacher = nullptr,
                                     const EpochCallback<Scalar>& on_epoch = {}) {
  return detail::run_training<Scalar>(ds, cfg, teacher, std::move(state.net),
                                      std::move(state.opt), state.next_epoch, on_epoch);
}

}  // namespace desdis
