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

#pragma once

// Desk-scale detection task and a proposal-based linear detector trained
// with focal + L1 losses, optionally plus the BPC calibration loss.

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "detcal/box.hpp"
#include "detcal/bpc_loss.hpp"
#include "detcal/calibration.hpp"
#include "detcal/matcher.hpp"

namespace detcal::toy {

struct Proposal {
  Eigen::VectorXd feature;
  Box anchor;
};

struct SyntheticScene {
  ImageId image_id = 0;
  std::vector<GroundTruth> gt;
  std::vector<Proposal> proposals;
};

struct GeneratorConfig {
  int num_classes = 4;      // C
  int feature_dim = 16;     // F
  int distractors = 20;     // D, background proposals per scene
  double noise_level = 2.0; // std of Gaussian noise around the prototypes
  // Prototype separation. Prototypes come from a fixed stream so that
  // datasets drawn with different seeds describe the same task.
  double prototype_scale = 1.0;
  ImageId first_image_id = 0;
};

/// Deterministic given `seed`. Each scene holds 1-5 objects in [0,1]^2, one
/// jittered proposal per object (anchor IoU >= 0.5) and `distractors`
/// background proposals.
std::vector<SyntheticScene> generate_dataset(std::uint64_t seed, int num_scenes,
                                             const GeneratorConfig& cfg);

/// Class prototypes (rows 0..C-1) and the background prototype (row C).
Eigen::MatrixXd prototypes(const GeneratorConfig& cfg);

/// Adds N(0, shift_strength^2) noise to every proposal feature.
std::vector<SyntheticScene> shift_dataset(std::span<const SyntheticScene> data,
                                          std::uint64_t shift_seed, double shift_strength);

/// Linear detector. Class scores are sigmoid(W f + b); box offsets
/// (x_min, y_min, x_max, y_max) are R f + r in units of the anchor's width
/// (x corners) and height (y corners), added to the anchor corners.
struct ToyModel {
  Eigen::MatrixXd class_weights;  // C x F
  Eigen::VectorXd class_bias;     // C
  Eigen::MatrixXd box_weights;    // 4 x F
  Eigen::VectorXd box_bias;       // 4

  static ToyModel zeros(int num_classes, int feature_dim);
  static ToyModel initialize(int num_classes, int feature_dim, std::uint64_t seed,
                             double weight_scale = 0.01, double prior_prob = 0.01);

  int num_classes() const { return static_cast<int>(class_weights.rows()); }
  int feature_dim() const { return static_cast<int>(class_weights.cols()); }
  Eigen::Index num_parameters() const;

  Eigen::VectorXd flatten() const;
  void assign(const Eigen::VectorXd& flat);

  bool is_finite() const;

  friend bool operator==(const ToyModel& a, const ToyModel& b);
};

/// Per-proposal forward values needed for backpropagation.
struct ForwardCache {
  Eigen::MatrixXd logits;         // proposals x C
  Eigen::MatrixXd scores;         // proposals x C
  std::vector<int> predicted_class;
  Eigen::MatrixXd boxes;          // proposals x 4, raw corners before sanitizing
  Eigen::MatrixXd anchor_scale;   // proposals x 4, (w, h, w, h) of each anchor
};

ForwardCache forward_cache(const ToyModel& model, const SyntheticScene& scene);

/// One detection per proposal: argmax class, its score, anchor + offsets.
std::vector<Detection> forward(const ToyModel& model, const SyntheticScene& scene);

struct FocalConfig {
  double alpha = 0.25;
  double gamma = 2.0;
};

/// Sigmoid focal loss for one logit and its derivative with respect to it.
double focal_loss(double logit, bool target, const FocalConfig& cfg, double* dlogit = nullptr);

/// Anchor assignment: index of the GT with highest anchor IoU if it reaches
/// 0.5, else -1.
std::vector<int> assign_targets(const SyntheticScene& scene, double iou_threshold = 0.5);

struct LossBreakdown {
  double det = 0.0;
  double bpc = 0.0;
  double total = 0.0;
  ToyModel gradient;
};

/// Focal classification loss over every proposal and class plus L1 corner
/// loss over positive proposals, summed over the batch and divided by
/// max(1, number of positives).
LossBreakdown detection_loss(const ToyModel& model, std::span<const SyntheticScene* const> batch,
                             const FocalConfig& focal = {});

/// L_det + L_BPC. The BPC term covers every detection forwarded for the
/// batch, with K from greedy matching at rho = `match.iou_threshold`; the
/// argmax class and K are held fixed when differentiating.
LossBreakdown total_loss(const ToyModel& model, std::span<const SyntheticScene* const> batch,
                         const FocalConfig& focal, const BpcConfig& bpc, const MatchConfig& match,
                         bool with_bpc);

struct TrainConfig {
  int num_classes = 4;
  int batch_size = 2;
  std::uint64_t seed = 42;
  BpcConfig bpc{};
  MatchConfig match{};
  FocalConfig focal{};
  double learning_rate = 0.01;
  int epochs = 60;
  double init_scale = 0.01;
  bool with_bpc = true;

  void validate() const;
};

struct EpochStats {
  int epoch = 0;
  double det = 0.0;
  double bpc = 0.0;
  double total = 0.0;
};

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainResult {
  ToyModel model;
  std::vector<EpochStats> curve;
};

/// Minibatch SGD. Single-threaded and bit-reproducible for a given config.
/// Throws TrainingDiverged on a non-finite loss or parameter.
TrainResult train(const TrainConfig& config, std::span<const SyntheticScene> data);

struct EvalConfig {
  MatchConfig match{};
  int num_bins = 10;
  double min_score = 0.0;
  double score_threshold = 0.5;
};

enum class Domain { kIn, kOut };

std::string_view to_string(Domain d);
Domain domain_from_string(std::string_view name);

struct EvalSummary {
  double d_ece = 0.0;
  bool d_ece_degenerate = false;
  double ap_at_05 = 0.0;   // class-agnostic AP over all detections at IoU 0.5
  double map_at_05 = 0.0;  // mean of per-class AP at IoU 0.5
  PartitionCounts partition_counts_hard{};
  std::size_t num_detections = 0;
  Domain domain = Domain::kIn;

  double aligned_fraction() const { return pc_ratio(partition_counts_hard).value; }

  friend bool operator==(const EvalSummary&, const EvalSummary&) = default;
};

/// All-point interpolated AP. Samples are ranked by descending score (ties by
/// position); `num_gt` is the number of ground truths they compete for.
double average_precision(std::span<const ScoredSample> detections, std::size_t num_gt);

/// Evaluates precomputed detections, `dets[i]` belonging to `scenes[i]`.
EvalSummary evaluate_detections(std::span<const std::vector<Detection>> dets,
                                std::span<const SyntheticScene> scenes, Domain domain,
                                const EvalConfig& cfg = {});

EvalSummary evaluate(const ToyModel& model, std::span<const SyntheticScene> data, Domain domain,
                     const EvalConfig& cfg = {});

/// Train / in-domain / shifted splits of the synthetic benchmark.
struct BenchmarkConfig {
  GeneratorConfig generator{};
  int train_scenes = 100;
  int eval_scenes = 100;
  double shift_strength = 1.0;
};

struct Benchmark {
  std::vector<SyntheticScene> train;
  std::vector<SyntheticScene> in_domain;
  std::vector<SyntheticScene> out_domain;
};

/// All three splits derive from `seed`; the out-domain split is the
/// in-domain split passed through shift_dataset.
Benchmark make_benchmark(std::uint64_t seed, const BenchmarkConfig& cfg = {});

struct ExperimentResult {
  TrainResult training;
  EvalSummary in_domain;
  EvalSummary out_domain;
};

/// generate -> train -> evaluate on both domains, with config.seed seeding
/// the benchmark as well as the model.
ExperimentResult run_experiment(const TrainConfig& config, const BenchmarkConfig& bench = {},
                                const EvalConfig& eval = {});

}  // namespace detcal::toy
