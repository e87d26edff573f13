/*
 * Copyright 2026 The detcal Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "commands.hpp"

#include <algorithm>
#include <filesystem>
#include <iomanip>
#include <ostream>

#include "CLI11.hpp"
#include "detcal/bpc_loss.hpp"
#include "detcal/calibration.hpp"
#include "detcal/io.hpp"
#include "detcal/matcher.hpp"
#include "detcal/toy_detector.hpp"

namespace detcal::cli {

namespace fs = std::filesystem;
using io::fixed6;

namespace {

struct EvalOptions {
  std::string gt;
  std::string dets;
  double iou = 0.5;
  int bins = 10;
  double min_score = 0.0;
  std::string out;
  std::string format;
};

struct LossOptions {
  std::string matched_csv;
  double th = 0.5;
};

struct TrainOptions {
  bool with_bpc = false;
  bool baseline = false;
  std::uint64_t seed = 42;
  int batch_size = 2;
  double th = 0.5;
  int epochs = toy::TrainConfig{}.epochs;
  double lr = toy::TrainConfig{}.learning_rate;
  std::string out_dir = ".";
};

void add_match_flags(CLI::App* cmd, EvalOptions& o, bool with_out) {
  cmd->add_option("--gt", o.gt, "COCO ground-truth JSON")->required();
  cmd->add_option("--dets", o.dets, "COCO detection results JSON")->required();
  cmd->add_option("--iou", o.iou, "IoU threshold rho for a correct detection")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  cmd->add_option("--bins", o.bins, "number of equal-width confidence bins")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  cmd->add_option("--min-score", o.min_score, "drop detections scoring below this")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  if (with_out) {
    cmd->add_option("--out", o.out, "write the calibration report here");
    cmd->add_option("--format", o.format, "json or csv (default: from the --out extension)")
        ->check(CLI::IsMember({"json", "csv"}));
  }
}

CalibrationReport dataset_report(const EvalOptions& o) {
  const io::DatasetBundle bundle = io::load_bundle(o.gt, o.dets);
  MatchConfig match;
  match.iou_threshold = o.iou;
  match.validate();
  const auto outcomes = match_dataset(bundle.detections, bundle.ground_truths, match);
  return d_ece(bundle.detections, outcomes, o.bins, o.min_score);
}

int cmd_evaluate(const EvalOptions& o, std::ostream& out) {
  const CalibrationReport report = dataset_report(o);
  out << "d_ece " << fixed6(report.metric_value) << "\n";
  out << "samples " << report.total_samples << "\n";
  out << "degenerate " << (report.degenerate() ? "true" : "false") << "\n";
  if (!o.out.empty()) {
    io::Format format = io::Format::kJson;
    if (!o.format.empty())
      format = io::format_from_string(o.format);
    else if (fs::path(o.out).extension() == ".csv")
      format = io::Format::kCsv;
    io::write_report(report, o.out, format);
  }
  return kOk;
}

int cmd_reliability(const EvalOptions& o, std::ostream& out) {
  const CalibrationReport report = dataset_report(o);
  if (o.out.empty())
    out << io::reliability_csv(report);
  else
    io::write_report(report, o.out, io::Format::kCsv);
  return kOk;
}

int cmd_loss(const LossOptions& o, std::ostream& out) {
  const std::vector<ScoredSample> rows = io::load_matched_csv(o.matched_csv);
  Eigen::VectorXd scores(static_cast<Eigen::Index>(rows.size()));
  Eigen::VectorXd k(scores.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    scores(static_cast<Eigen::Index>(i)) = rows[i].score;
    k(static_cast<Eigen::Index>(i)) = rows[i].correct ? 1.0 : 0.0;
  }
  BpcConfig cfg;
  cfg.score_threshold = o.th;
  cfg.validate();

  const PartitionCounts hard = hard_counts(scores, k, cfg);
  const PcRatio ratio = pc_ratio(hard);
  const PartitionCounts soft = soft_counts(scores, k, cfg);
  const LossValue loss = bpc_loss(scores, k, cfg);

  out << "detections " << rows.size() << "\n";
  out << "hard t_ac " << hard.t_ac << " t_an " << hard.t_an << " t_ic " << hard.t_ic << " t_in " << hard.t_in
      << "\n";
  out << "pc_ratio " << fixed6(ratio.value) << "\n";
  out << "soft t_ac " << fixed6(soft.t_ac) << " t_an " << fixed6(soft.t_an) << " t_ic " << fixed6(soft.t_ic)
      << " t_in " << fixed6(soft.t_in) << "\n";
  out << "l_bpc " << fixed6(loss.value) << "\n";
  out << "degenerate " << (ratio.degenerate ? "true" : "false") << "\n";
  return kOk;
}

int cmd_train_demo(const TrainOptions& o, std::ostream& out) {
  toy::TrainConfig cfg;
  cfg.with_bpc = o.with_bpc;
  cfg.seed = o.seed;
  cfg.batch_size = o.batch_size;
  cfg.bpc.score_threshold = o.th;
  cfg.epochs = o.epochs;
  cfg.learning_rate = o.lr;
  cfg.validate();

  const toy::ExperimentResult r = toy::run_experiment(cfg);
  const fs::path dir(o.out_dir);
  fs::create_directories(dir);
  io::write_report(r.in_domain, dir / "eval_in.json");
  io::write_report(r.out_domain, dir / "eval_out.json");
  io::write_file(dir / "training_curve.csv", io::curve_csv(r.training.curve));

  out << "model " << (o.with_bpc ? "bpc" : "baseline") << "  seed " << o.seed << "  epochs " << o.epochs
      << "\n";
  out << "domain  d_ece     map_at_05\n";
  for (const toy::EvalSummary* s : {&r.in_domain, &r.out_domain})
    out << std::left << std::setw(8) << toy::to_string(s->domain) << fixed6(s->d_ece) << "  "
        << fixed6(s->map_at_05) << "\n";
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"detcal: calibration metrics and the BPC loss for object detection"};
  app.name("detcal");
  app.require_subcommand(1);

  EvalOptions eval_opts;
  auto* evaluate = app.add_subcommand("evaluate", "D-ECE of COCO-format detections");
  add_match_flags(evaluate, eval_opts, true);

  EvalOptions rel_opts;
  auto* reliability = app.add_subcommand("reliability", "reliability-diagram table as CSV");
  add_match_flags(reliability, rel_opts, false);
  reliability->add_option("--out", rel_opts.out, "CSV path (default: stdout)");

  LossOptions loss_opts;
  auto* loss = app.add_subcommand("loss", "partition counts and BPC loss of (score, k) rows");
  loss->add_option("--matched-csv", loss_opts.matched_csv, "CSV of score,k rows")->required();
  loss->add_option("--th", loss_opts.th, "confidence threshold")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();

  TrainOptions train_opts;
  auto* demo = app.add_subcommand("train-demo", "train and evaluate the synthetic detector");
  auto* with_bpc = demo->add_flag("--with-bpc", train_opts.with_bpc, "train with L_det + L_BPC");
  auto* baseline = demo->add_flag("--baseline", train_opts.baseline, "train with L_det only");
  with_bpc->excludes(baseline);
  demo->add_option("--seed", train_opts.seed)->capture_default_str();
  demo->add_option("--batch-size", train_opts.batch_size)->check(CLI::PositiveNumber)->capture_default_str();
  demo->add_option("--th", train_opts.th)->check(CLI::Range(0.0, 1.0))->capture_default_str();
  demo->add_option("--epochs", train_opts.epochs)->check(CLI::NonNegativeNumber)->capture_default_str();
  demo->add_option("--lr", train_opts.lr)->check(CLI::NonNegativeNumber)->capture_default_str();
  demo->add_option("--out-dir", train_opts.out_dir)->capture_default_str();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e, out, err);
    return rc == 0 ? kOk : kInputError;
  }

  try {
    if (*evaluate) return cmd_evaluate(eval_opts, out);
    if (*reliability) return cmd_reliability(rel_opts, out);
    if (*loss) return cmd_loss(loss_opts, out);
    if (*demo) return cmd_train_demo(train_opts, out);
  } catch (const toy::TrainingDiverged& e) {
    err << "error: training diverged: " << e.what() << "\n";
    return kDiverged;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kInputError;
  }
  return kInputError;
}

}  // namespace detcal::cli
