// Command-line surface: dataset synthesis, two-phase training, evaluation,
// parameter accounting, and the analytic verifier.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "desdis/arch.hpp"
#include "desdis/checkpoint.hpp"
#include "desdis/dataset.hpp"
#include "desdis/report_json.hpp"
#include "desdis/rng.hpp"
#include "desdis/theory.hpp"
#include "desdis/train.hpp"

namespace {

using desdis::TrainConfig;

struct CommonTrainFlags {
  std::string data;
  std::string out;
  std::string json;
  std::string resume;
  std::string save_state;
  TrainConfig cfg;
};

void add_train_flags(CLI::App* cmd, CommonTrainFlags& f, bool distill) {
  cmd->add_option("--data", f.data, "dataset file (DSDS)")->required();
  cmd->add_option("--arch", f.cfg.arch, "architecture name")
      ->check(CLI::IsMember(desdis::known_arch_names()));
  cmd->add_option("--batch", f.cfg.batch_points, "point pairs per batch");
  cmd->add_option("--epochs", f.cfg.epochs, "training epochs");
  cmd->add_option("--lr", f.cfg.lr, "initial Adam learning rate (linear decay to 0)");
  cmd->add_option("--margin", f.cfg.margin, "triplet margin m");
  cmd->add_option("--seed", f.cfg.seed, "training seed");
  cmd->add_option("--out", f.out, "checkpoint output path")->required();
  cmd->add_option("--json", f.json, "write the metrics report as JSON here");
  cmd->add_option("--resume", f.resume, "continue from a train-state file");
  cmd->add_option("--save-state", f.save_state, "also write a resumable train-state file");
  if (distill) {
    f.cfg.alpha_p = 1.0;
    f.cfg.alpha_n = 15.0;
    cmd->add_option("--alpha-p", f.cfg.alpha_p, "positive-pair regularizer weight");
    cmd->add_option("--alpha-n", f.cfg.alpha_n, "negative-pair regularizer weight");
    cmd->add_flag("--warm-start", f.cfg.warm_start_from_teacher,
                  "initialize the student from the teacher (equal-weight only)");
  }
}

void write_json_file(const nlohmann::json& j, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw desdis::IoError("cannot open '" + path + "' for writing");
  out << j.dump(2) << "\n";
}

int run_train(const CommonTrainFlags& f, const std::string* teacher_ckpt) {
  using Scalar = float;
  const desdis::PatchDataset ds = desdis::load_dataset(f.data);
  // With --save-state, a resumable snapshot is refreshed after every epoch so
  // an interrupted run can continue from the last completed one.
  desdis::EpochCallback<Scalar> on_epoch;
  if (!f.save_state.empty()) {
    on_epoch = [&f](int next_epoch, const desdis::DescriptorNet<Scalar>& net,
                    const desdis::AdamState<Scalar>& opt) {
      desdis::save_train_state(net, opt, next_epoch, f.save_state);
    };
  }
  desdis::TrainOutcome<Scalar> outcome = [&] {
    if (teacher_ckpt != nullptr) {
      desdis::DescriptorNet<Scalar> teacher = desdis::load_checkpoint<Scalar>(
          *teacher_ckpt, static_cast<Scalar>(f.cfg.bn_momentum));
      if (!f.resume.empty()) {
        auto state = desdis::load_train_state<Scalar>(f.resume,
                                                      static_cast<Scalar>(f.cfg.bn_momentum));
        teacher.set_trainable(false);
        return desdis::resume_training(ds, f.cfg, std::move(state), &teacher, on_epoch);
      }
      return desdis::distill_student(ds, teacher, f.cfg, on_epoch);
    }
    if (!f.resume.empty()) {
      auto state = desdis::load_train_state<Scalar>(f.resume,
                                                    static_cast<Scalar>(f.cfg.bn_momentum));
      return desdis::resume_training<Scalar>(ds, f.cfg, std::move(state), nullptr, on_epoch);
    }
    return desdis::train_teacher<Scalar>(ds, f.cfg, on_epoch);
  }();
  desdis::save_checkpoint(outcome.net, f.out);
  std::cout << desdis::report_to_text(outcome.report);
  if (!f.json.empty()) write_json_file(desdis::to_json(outcome.report), f.json);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DesDis: descriptor distillation at desk scale"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic patch dataset");
  std::string synth_out;
  int points = 256, per_point = 4;
  double noise = 1.0;
  std::uint64_t synth_seed = 0;
  synth->add_option("--out", synth_out, "dataset output path")->required();
  synth->add_option("--points", points, "number of 3D points");
  synth->add_option("--per-point", per_point, "patches per point");
  synth->add_option("--noise", noise, "warp/pixel noise level (0 = identical views)");
  synth->add_option("--seed", synth_seed, "generator seed");

  // count-params
  auto* cp = app.add_subcommand("count-params", "parameter accounting for an architecture");
  std::string cp_arch;
  bool cp_bn = false, cp_json = false;
  cp->add_option("--arch", cp_arch, "architecture name")
      ->required()
      ->check(CLI::IsMember(desdis::known_arch_names()));
  cp->add_flag("--bn-affine", cp_bn, "include batch-norm gamma/beta in the count");
  cp->add_flag("--json", cp_json, "emit JSON");

  // train-teacher
  auto* tt = app.add_subcommand("train-teacher", "train a network on the triplet loss");
  CommonTrainFlags tt_flags;
  add_train_flags(tt, tt_flags, /*distill=*/false);

  // distill
  auto* di = app.add_subcommand("distill", "train a student against a frozen teacher");
  CommonTrainFlags di_flags;
  std::string teacher_ckpt;
  add_train_flags(di, di_flags, /*distill=*/true);
  di->add_option("--teacher-ckpt", teacher_ckpt, "teacher checkpoint (DDCK)")->required();

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on the holdout split");
  std::string ev_data, ev_ckpt, ev_json;
  ev->add_option("--data", ev_data, "dataset file")->required();
  ev->add_option("--ckpt", ev_ckpt, "checkpoint to evaluate")->required();
  ev->add_option("--json", ev_json, "write metrics JSON here");

  // verify-prop1
  auto* vp = app.add_subcommand("verify-prop1",
                                "closed form vs numeric optimum of the distillation objective");
  int cases = 1000;
  std::uint64_t vp_seed = 0;
  double vp_margin = 1.0;
  std::string vp_csv, vp_json;
  vp->add_option("--cases", cases, "number of random records");
  vp->add_option("--seed", vp_seed, "sweep seed");
  vp->add_option("--margin", vp_margin, "triplet margin m");
  vp->add_option("--out", vp_csv, "write the per-record CSV here");
  vp->add_option("--json", vp_json, "write the JSON summary here");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth) {
      const desdis::PatchDataset ds = desdis::synth_dataset(points, per_point, noise, synth_seed);
      desdis::save_dataset(ds, synth_out);
      std::cout << "wrote " << ds.num_patches() << " patches (" << ds.num_points()
                << " points) to " << synth_out << "\n";
      return 0;
    }
    if (*cp) {
      const desdis::NetworkSpec spec = desdis::build_spec(cp_arch);
      const std::int64_t n = desdis::count_params(spec, cp_bn);
      if (cp_json) {
        nlohmann::json j{{"arch", cp_arch},
                         {"params", n},
                         {"includes_bn_affine", cp_bn},
                         {"layers", spec.layers.size()}};
        std::cout << j.dump(2) << "\n";
      } else {
        std::cout << cp_arch << ": " << n << " parameters ("
                  << static_cast<double>(n) / 1e6 << "M, " << spec.layers.size()
                  << " layers)\n";
      }
      return 0;
    }
    if (*tt) return run_train(tt_flags, nullptr);
    if (*di) return run_train(di_flags, &teacher_ckpt);
    if (*ev) {
      const desdis::PatchDataset ds = desdis::load_dataset(ev_data);
      const auto net = desdis::load_checkpoint<float>(ev_ckpt);
      const desdis::EvalMetrics m = desdis::evaluate_net(ds, net);
      std::cout << desdis::metrics_to_text(m);
      if (!ev_json.empty()) write_json_file(desdis::to_json(m), ev_json);
      return 0;
    }
    if (*vp) {
      desdis::Rng rng(vp_seed);
      std::ostringstream csv;
      csv << "alpha_p,alpha_n,d_t_pos,d_t_neg,cf_d_s_pos,cf_d_s_neg,num_d_s_pos,num_d_s_neg,"
             "abs_gap,feasible\n";
      double max_gap = 0;
      int hinge_active = 0, feasible = 0;
      std::vector<double> cf_pos(static_cast<std::size_t>(cases)),
          cf_neg(static_cast<std::size_t>(cases));
      for (int i = 0; i < cases; ++i) {
        desdis::TripletDistanceRecord rec;
        rec.alpha_p = rng.uniform(0.5, 20.0);
        rec.alpha_n = rng.uniform(0.5, 20.0);
        rec.d_t_pos = rng.uniform(0.0, 2.0);
        rec.d_t_neg = rng.uniform(0.0, 2.0);
        rec.margin = vp_margin;
        const desdis::StudentDistances cf = desdis::closed_form_student(rec);
        const desdis::StudentDistances num =
            desdis::numeric_oracle(rec, {rec.d_t_pos, rec.d_t_neg});
        const double gap = std::max(std::abs(cf.d_s_pos - num.d_s_pos),
                                    std::abs(cf.d_s_neg - num.d_s_neg));
        max_gap = std::max(max_gap, gap);
        const bool feas = desdis::geometrically_feasible(cf);
        feasible += feas;
        hinge_active += (rec.margin + cf.d_s_pos - cf.d_s_neg) > 0;
        cf_pos[static_cast<std::size_t>(i)] = cf.d_s_pos;
        cf_neg[static_cast<std::size_t>(i)] = cf.d_s_neg;
        csv << rec.alpha_p << ',' << rec.alpha_n << ',' << rec.d_t_pos << ',' << rec.d_t_neg
            << ',' << cf.d_s_pos << ',' << cf.d_s_neg << ',' << num.d_s_pos << ','
            << num.d_s_neg << ',' << gap << ',' << (feas ? 1 : 0) << "\n";
      }
      const desdis::HingeConditionStats stats =
          desdis::hinge_condition_stats(cf_pos, cf_neg, vp_margin);
      nlohmann::json summary{
          {"cases", cases},
          {"max_abs_gap", max_gap},
          {"condition_fraction", stats.fraction_satisfied},
          {"hinge_active_at_optimum", hinge_active},
          {"feasible_fraction", static_cast<double>(feasible) / cases},
          {"margin", vp_margin},
          {"seed", vp_seed},
      };
      if (!vp_csv.empty()) {
        std::ofstream out(vp_csv, std::ios::trunc);
        if (!out) throw desdis::IoError("cannot open '" + vp_csv + "' for writing");
        out << csv.str();
      }
      if (!vp_json.empty()) {
        write_json_file(summary, vp_json);
      }
      std::cout << summary.dump(2) << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
