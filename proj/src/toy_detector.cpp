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

#include "detcal/toy_detector.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "detcal/rng.hpp"

namespace detcal::toy {

namespace {

// Stream tags for mix_seed.
constexpr std::uint64_t kSceneStream = 1;
constexpr std::uint64_t kShiftStream = 2;
constexpr std::uint64_t kInitStream = 3;
constexpr std::uint64_t kShuffleStream = 4;
constexpr std::uint64_t kTrainSplitStream = 10;
constexpr std::uint64_t kEvalSplitStream = 11;
constexpr std::uint64_t kShiftSplitStream = 12;
constexpr std::uint64_t kPrototypeSeed = 0x70726f746f747970ULL;

Box random_box(Rng& rng) {
  const double w = rng.uniform(0.1, 0.4);
  const double h = rng.uniform(0.1, 0.4);
  const double x = rng.uniform(0.0, 1.0 - w);
  const double y = rng.uniform(0.0, 1.0 - h);
  return Box::FromXywh(x, y, w, h);
}

Box jittered_anchor(Rng& rng, const Box& gt) {
  for (int attempt = 0; attempt < 64; ++attempt) {
    const double jx = 0.15 * gt.width();
    const double jy = 0.15 * gt.height();
    Box a{gt.x_min + rng.uniform(-jx, jx), gt.y_min + rng.uniform(-jy, jy),
          gt.x_max + rng.uniform(-jx, jx), gt.y_max + rng.uniform(-jy, jy)};
    if (a.valid() && iou(a, gt) >= 0.5) return a;
  }
  return gt;
}

Eigen::VectorXd noisy(const Eigen::VectorXd& base, double noise, Rng& rng) {
  Eigen::VectorXd f = base;
  for (Eigen::Index j = 0; j < f.size(); ++j) f(j) += noise * rng.normal();
  return f;
}

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double sign(double x) { return static_cast<double>((x > 0.0) - (x < 0.0)); }

Box sanitize(double x0, double y0, double x1, double y1) {
  return Box{x0, y0, std::max(x0, x1), std::max(y0, y1)};
}

}  // namespace

Eigen::MatrixXd prototypes(const GeneratorConfig& cfg) {
  Rng rng(mix_seed(kPrototypeSeed, static_cast<std::uint64_t>(cfg.feature_dim)));
  Eigen::MatrixXd protos(cfg.num_classes + 1, cfg.feature_dim);
  for (Eigen::Index r = 0; r < protos.rows(); ++r)
    for (Eigen::Index c = 0; c < protos.cols(); ++c) protos(r, c) = cfg.prototype_scale * rng.normal();
  return protos;
}

std::vector<SyntheticScene> generate_dataset(std::uint64_t seed, int num_scenes,
                                             const GeneratorConfig& cfg) {
  if (num_scenes < 1 || cfg.num_classes < 1 || cfg.feature_dim < 1 || cfg.distractors < 1)
    throw std::invalid_argument("scene, class, feature and distractor counts must be >= 1");
  if (!(cfg.noise_level >= 0.0)) throw std::invalid_argument("noise level must be >= 0");

  const Eigen::MatrixXd protos = prototypes(cfg);
  Rng rng(mix_seed(seed, kSceneStream));
  std::vector<SyntheticScene> scenes(static_cast<std::size_t>(num_scenes));
  for (int s = 0; s < num_scenes; ++s) {
    SyntheticScene& scene = scenes[static_cast<std::size_t>(s)];
    scene.image_id = cfg.first_image_id + s;
    const auto objects = 1 + rng.below(5);
    for (std::uint64_t o = 0; o < objects; ++o) {
      const int cls = static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.num_classes)));
      scene.gt.push_back({scene.image_id, random_box(rng), cls});
    }
    for (const auto& g : scene.gt) {
      Box anchor = jittered_anchor(rng, g.box);
      scene.proposals.push_back({noisy(protos.row(g.class_id).transpose(), cfg.noise_level, rng), anchor});
    }
    for (int d = 0; d < cfg.distractors; ++d) {
      Box anchor = random_box(rng);
      scene.proposals.push_back({noisy(protos.row(cfg.num_classes).transpose(), cfg.noise_level, rng), anchor});
    }
  }
  return scenes;
}

std::vector<SyntheticScene> shift_dataset(std::span<const SyntheticScene> data,
                                          std::uint64_t shift_seed, double shift_strength) {
  if (!(shift_strength >= 0.0)) throw std::invalid_argument("shift strength must be >= 0");
  std::vector<SyntheticScene> out(data.begin(), data.end());
  if (shift_strength == 0.0) return out;
  Rng rng(mix_seed(shift_seed, kShiftStream));
  for (auto& scene : out)
    for (auto& p : scene.proposals) p.feature = noisy(p.feature, shift_strength, rng);
  return out;
}

// ToyModel

ToyModel ToyModel::zeros(int num_classes, int feature_dim) {
  ToyModel m;
  m.class_weights = Eigen::MatrixXd::Zero(num_classes, feature_dim);
  m.class_bias = Eigen::VectorXd::Zero(num_classes);
  m.box_weights = Eigen::MatrixXd::Zero(4, feature_dim);
  m.box_bias = Eigen::VectorXd::Zero(4);
  return m;
}

ToyModel ToyModel::initialize(int num_classes, int feature_dim, std::uint64_t seed,
                              double weight_scale, double prior_prob) {
  ToyModel m = zeros(num_classes, feature_dim);
  Rng rng(mix_seed(seed, kInitStream));
  for (Eigen::Index i = 0; i < m.class_weights.size(); ++i)
    m.class_weights.data()[i] = weight_scale * rng.normal();
  // Focal-loss prior: every class starts at score prior_prob.
  m.class_bias.setConstant(-std::log((1.0 - prior_prob) / prior_prob));
  return m;
}

Eigen::Index ToyModel::num_parameters() const {
  return class_weights.size() + class_bias.size() + box_weights.size() + box_bias.size();
}

Eigen::VectorXd ToyModel::flatten() const {
  Eigen::VectorXd flat(num_parameters());
  flat << class_weights.reshaped(), class_bias, box_weights.reshaped(), box_bias;
  return flat;
}

void ToyModel::assign(const Eigen::VectorXd& flat) {
  if (flat.size() != num_parameters()) throw std::invalid_argument("parameter vector size mismatch");
  Eigen::Index at = 0;
  auto take = [&](auto& dst) {
    dst.reshaped() = flat.segment(at, dst.size());
    at += dst.size();
  };
  take(class_weights);
  take(class_bias);
  take(box_weights);
  take(box_bias);
}

bool ToyModel::is_finite() const {
  return class_weights.allFinite() && class_bias.allFinite() && box_weights.allFinite() &&
         box_bias.allFinite();
}

bool operator==(const ToyModel& a, const ToyModel& b) {
  return a.class_weights == b.class_weights && a.class_bias == b.class_bias &&
         a.box_weights == b.box_weights && a.box_bias == b.box_bias;
}

// Forward

ForwardCache forward_cache(const ToyModel& model, const SyntheticScene& scene) {
  const auto n = static_cast<Eigen::Index>(scene.proposals.size());
  Eigen::MatrixXd features(n, model.feature_dim());
  Eigen::MatrixXd anchors(n, 4);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Proposal& p = scene.proposals[static_cast<std::size_t>(i)];
    if (p.feature.size() != model.feature_dim())
      throw std::invalid_argument("proposal feature dimension does not match the model");
    features.row(i) = p.feature.transpose();
    anchors.row(i) << p.anchor.x_min, p.anchor.y_min, p.anchor.x_max, p.anchor.y_max;
  }

  ForwardCache cache;
  cache.logits = (features * model.class_weights.transpose()).rowwise() + model.class_bias.transpose();
  cache.scores = cache.logits.unaryExpr([](double z) { return sigmoid(z); });
  cache.anchor_scale.resize(n, 4);
  cache.anchor_scale.col(0) = anchors.col(2) - anchors.col(0);
  cache.anchor_scale.col(1) = anchors.col(3) - anchors.col(1);
  cache.anchor_scale.col(2) = cache.anchor_scale.col(0);
  cache.anchor_scale.col(3) = cache.anchor_scale.col(1);
  const Eigen::MatrixXd offsets = (features * model.box_weights.transpose()).rowwise() + model.box_bias.transpose();
  cache.boxes = anchors + offsets.cwiseProduct(cache.anchor_scale);
  cache.predicted_class.resize(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::Index best = 0;
    cache.scores.row(i).maxCoeff(&best);  // first maximum on ties
    cache.predicted_class[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return cache;
}

namespace {

std::vector<Detection> detections_from(const ForwardCache& cache, ImageId image_id) {
  std::vector<Detection> dets(cache.predicted_class.size());
  for (std::size_t i = 0; i < dets.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    const int c = cache.predicted_class[i];
    dets[i] = {image_id, sanitize(cache.boxes(r, 0), cache.boxes(r, 1), cache.boxes(r, 2), cache.boxes(r, 3)),
               c, cache.scores(r, c)};
  }
  return dets;
}

}  // namespace

std::vector<Detection> forward(const ToyModel& model, const SyntheticScene& scene) {
  return detections_from(forward_cache(model, scene), scene.image_id);
}

// Losses

double focal_loss(double logit, bool target, const FocalConfig& cfg, double* dlogit) {
  const double p = sigmoid(logit);
  if (target) {
    const double log_p = -softplus(-logit);
    const double w = std::pow(1.0 - p, cfg.gamma);
    if (dlogit) *dlogit = cfg.alpha * w * (cfg.gamma * p * log_p - (1.0 - p));
    return -cfg.alpha * w * log_p;
  }
  const double log_q = -softplus(logit);
  const double w = std::pow(p, cfg.gamma);
  if (dlogit) *dlogit = -(1.0 - cfg.alpha) * w * (cfg.gamma * (1.0 - p) * log_q - p);
  return -(1.0 - cfg.alpha) * w * log_q;
}

std::vector<int> assign_targets(const SyntheticScene& scene, double iou_threshold) {
  std::vector<int> assigned(scene.proposals.size(), -1);
  for (std::size_t i = 0; i < scene.proposals.size(); ++i) {
    double best = -1.0;
    for (std::size_t g = 0; g < scene.gt.size(); ++g) {
      const double v = iou(scene.proposals[i].anchor, scene.gt[g].box);
      if (v > best) {
        best = v;
        assigned[i] = static_cast<int>(g);
      }
    }
    if (best < iou_threshold) assigned[i] = -1;
  }
  return assigned;
}

namespace {

void check_batch(std::span<const SyntheticScene* const> batch) {
  if (batch.empty()) throw std::invalid_argument("empty batch");
}

}  // namespace

LossBreakdown detection_loss(const ToyModel& model, std::span<const SyntheticScene* const> batch,
                             const FocalConfig& focal) {
  check_batch(batch);
  LossBreakdown out;
  out.gradient = ToyModel::zeros(model.num_classes(), model.feature_dim());
  ToyModel& g = out.gradient;
  double sum = 0.0;
  std::size_t positives = 0;

  for (const SyntheticScene* scene : batch) {
    const ForwardCache cache = forward_cache(model, *scene);
    const std::vector<int> assigned = assign_targets(*scene);
    for (std::size_t i = 0; i < scene->proposals.size(); ++i) {
      const auto r = static_cast<Eigen::Index>(i);
      const Eigen::VectorXd& f = scene->proposals[i].feature;
      const GroundTruth* target = assigned[i] >= 0 ? &scene->gt[static_cast<std::size_t>(assigned[i])] : nullptr;
      for (int c = 0; c < model.num_classes(); ++c) {
        double d = 0.0;
        sum += focal_loss(cache.logits(r, c), target && target->class_id == c, focal, &d);
        g.class_weights.row(c) += d * f.transpose();
        g.class_bias(c) += d;
      }
      if (!target) continue;
      ++positives;
      const double goal[4] = {target->box.x_min, target->box.y_min, target->box.x_max, target->box.y_max};
      for (int j = 0; j < 4; ++j) {
        const double diff = cache.boxes(r, j) - goal[j];
        const double d = sign(diff) * cache.anchor_scale(r, j);
        sum += std::abs(diff);
        g.box_weights.row(j) += d * f.transpose();
        g.box_bias(j) += d;
      }
    }
  }

  const double norm = 1.0 / static_cast<double>(std::max<std::size_t>(positives, 1));
  out.det = sum * norm;
  out.total = out.det;
  g.class_weights *= norm;
  g.class_bias *= norm;
  g.box_weights *= norm;
  g.box_bias *= norm;
  return out;
}

LossBreakdown total_loss(const ToyModel& model, std::span<const SyntheticScene* const> batch,
                         const FocalConfig& focal, const BpcConfig& bpc, const MatchConfig& match,
                         bool with_bpc) {
  LossBreakdown out = detection_loss(model, batch, focal);
  if (!with_bpc) return out;

  struct Source {
    const SyntheticScene* scene;
    std::size_t proposal;
    int cls;
  };
  std::vector<Source> sources;
  std::vector<double> scores;
  std::vector<double> accurate;
  for (const SyntheticScene* scene : batch) {
    const ForwardCache cache = forward_cache(model, *scene);
    const std::vector<Detection> dets = detections_from(cache, scene->image_id);
    const std::vector<MatchOutcome> outcomes = match_image(dets, scene->gt, match);
    for (std::size_t i = 0; i < dets.size(); ++i) {
      sources.push_back({scene, i, dets[i].class_id});
      scores.push_back(dets[i].score);
      accurate.push_back(outcomes[i].k ? 1.0 : 0.0);
    }
  }

  const auto n = static_cast<Eigen::Index>(scores.size());
  const LossValue loss = bpc_loss(Eigen::Map<const Eigen::VectorXd>(scores.data(), n),
                                  Eigen::Map<const Eigen::VectorXd>(accurate.data(), n), bpc);
  out.bpc = loss.value;
  out.total = out.det + out.bpc;
  for (Eigen::Index i = 0; i < n; ++i) {
    const Source& src = sources[static_cast<std::size_t>(i)];
    const double s = scores[static_cast<std::size_t>(i)];
    const double dz = loss.gradients(i) * s * (1.0 - s);
    out.gradient.class_weights.row(src.cls) += dz * src.scene->proposals[src.proposal].feature.transpose();
    out.gradient.class_bias(src.cls) += dz;
  }
  return out;
}

// Training

void TrainConfig::validate() const {
  if (num_classes < 1) throw std::invalid_argument("num_classes must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
    throw std::invalid_argument("learning rate must be finite and non-negative");
  if (epochs < 0) throw std::invalid_argument("epochs must be >= 0");
  bpc.validate();
  match.validate();
}

TrainResult train(const TrainConfig& config, std::span<const SyntheticScene> data) {
  config.validate();
  if (data.empty() || data.front().proposals.empty())
    throw std::invalid_argument("training data is empty");
  const int feature_dim = static_cast<int>(data.front().proposals.front().feature.size());

  TrainResult result;
  result.model = ToyModel::initialize(config.num_classes, feature_dim, config.seed, config.init_scale);
  ToyModel& model = result.model;

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng shuffle_rng(mix_seed(config.seed, kShuffleStream));
  const auto batch_size = static_cast<std::size_t>(config.batch_size);
  std::vector<const SyntheticScene*> batch;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    EpochStats stats{epoch + 1, 0.0, 0.0, 0.0};
    std::size_t steps = 0;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
      batch.clear();
      for (std::size_t i = start; i < std::min(order.size(), start + batch_size); ++i)
        batch.push_back(&data[order[i]]);
      const LossBreakdown loss =
          total_loss(model, batch, config.focal, config.bpc, config.match, config.with_bpc);
      if (!std::isfinite(loss.total) || !loss.gradient.is_finite())
        throw TrainingDiverged("non-finite loss at epoch " + std::to_string(epoch + 1) + ", step " +
                               std::to_string(steps + 1) + " (det " + std::to_string(loss.det) +
                               ", bpc " + std::to_string(loss.bpc) + ")");
      model.class_weights -= config.learning_rate * loss.gradient.class_weights;
      model.class_bias -= config.learning_rate * loss.gradient.class_bias;
      model.box_weights -= config.learning_rate * loss.gradient.box_weights;
      model.box_bias -= config.learning_rate * loss.gradient.box_bias;
      if (!model.is_finite())
        throw TrainingDiverged("non-finite parameters after epoch " + std::to_string(epoch + 1) +
                               ", step " + std::to_string(steps + 1));
      stats.det += loss.det;
      stats.bpc += loss.bpc;
      stats.total += loss.total;
      ++steps;
    }
    const double inv = 1.0 / static_cast<double>(steps);
    stats.det *= inv;
    stats.bpc *= inv;
    stats.total *= inv;
    result.curve.push_back(stats);
  }
  return result;
}

// Evaluation

std::string_view to_string(Domain d) { return d == Domain::kIn ? "in" : "out"; }

Domain domain_from_string(std::string_view name) {
  if (name == "in") return Domain::kIn;
  if (name == "out") return Domain::kOut;
  throw std::invalid_argument("unknown domain '" + std::string(name) + "'");
}

double average_precision(std::span<const ScoredSample> detections, std::size_t num_gt) {
  if (num_gt == 0 || detections.empty()) return 0.0;
  std::vector<std::size_t> order(detections.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return detections[a].score > detections[b].score;
  });

  std::vector<double> precision(order.size());
  std::vector<double> recall(order.size());
  std::size_t tp = 0;
  for (std::size_t i = 0; i < order.size(); ++i) {
    tp += detections[order[i]].correct ? 1 : 0;
    precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
    recall[i] = static_cast<double>(tp) / static_cast<double>(num_gt);
  }
  // Precision envelope, then area under the step curve.
  for (std::size_t i = order.size() - 1; i > 0; --i) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double ap = 0.0;
  double prev_recall = 0.0;
  for (std::size_t i = 0; i < order.size(); ++i) {
    ap += (recall[i] - prev_recall) * precision[i];
    prev_recall = recall[i];
  }
  return ap;
}

EvalSummary evaluate_detections(std::span<const std::vector<Detection>> dets,
                                std::span<const SyntheticScene> scenes, Domain domain,
                                const EvalConfig& cfg) {
  if (dets.size() != scenes.size()) throw std::invalid_argument("one detection list per scene required");

  int num_classes = 0;
  for (const auto& scene : scenes)
    for (const auto& g : scene.gt) num_classes = std::max(num_classes, g.class_id + 1);
  for (const auto& list : dets)
    for (const auto& d : list) num_classes = std::max(num_classes, d.class_id + 1);

  std::vector<ScoredSample> all;
  std::vector<std::vector<ScoredSample>> per_class(static_cast<std::size_t>(num_classes));
  std::vector<std::size_t> gt_per_class(static_cast<std::size_t>(num_classes), 0);
  std::size_t gt_total = 0;
  std::vector<double> scores;
  std::vector<double> accurate;

  for (std::size_t s = 0; s < scenes.size(); ++s) {
    for (const auto& g : scenes[s].gt) ++gt_per_class[static_cast<std::size_t>(g.class_id)];
    gt_total += scenes[s].gt.size();
    const auto outcomes = match_image(dets[s], scenes[s].gt, cfg.match);
    for (std::size_t i = 0; i < dets[s].size(); ++i) {
      const Detection& d = dets[s][i];
      if (d.score < cfg.min_score) continue;
      const ScoredSample sample{d.score, outcomes[i].k};
      all.push_back(sample);
      per_class[static_cast<std::size_t>(d.class_id)].push_back(sample);
      scores.push_back(d.score);
      accurate.push_back(outcomes[i].k ? 1.0 : 0.0);
    }
  }

  EvalSummary summary;
  summary.domain = domain;
  summary.num_detections = all.size();
  const CalibrationReport report = d_ece(all, cfg.num_bins, cfg.min_score);
  summary.d_ece = report.metric_value;
  summary.d_ece_degenerate = report.degenerate();
  summary.ap_at_05 = average_precision(all, gt_total);

  double ap_sum = 0.0;
  int classes_with_gt = 0;
  for (std::size_t c = 0; c < per_class.size(); ++c) {
    if (gt_per_class[c] == 0) continue;
    ap_sum += average_precision(per_class[c], gt_per_class[c]);
    ++classes_with_gt;
  }
  summary.map_at_05 = classes_with_gt > 0 ? ap_sum / classes_with_gt : 0.0;

  BpcConfig th;
  th.score_threshold = cfg.score_threshold;
  const auto n = static_cast<Eigen::Index>(scores.size());
  summary.partition_counts_hard = hard_counts(Eigen::Map<const Eigen::VectorXd>(scores.data(), n),
                                              Eigen::Map<const Eigen::VectorXd>(accurate.data(), n), th);
  return summary;
}

EvalSummary evaluate(const ToyModel& model, std::span<const SyntheticScene> data, Domain domain,
                     const EvalConfig& cfg) {
  std::vector<std::vector<Detection>> dets;
  dets.reserve(data.size());
  for (const auto& scene : data) dets.push_back(forward(model, scene));
  return evaluate_detections(dets, data, domain, cfg);
}

Benchmark make_benchmark(std::uint64_t seed, const BenchmarkConfig& cfg) {
  Benchmark b;
  GeneratorConfig gen = cfg.generator;
  gen.first_image_id = 0;
  b.train = generate_dataset(mix_seed(seed, kTrainSplitStream), cfg.train_scenes, gen);
  gen.first_image_id = cfg.train_scenes;
  b.in_domain = generate_dataset(mix_seed(seed, kEvalSplitStream), cfg.eval_scenes, gen);
  b.out_domain = shift_dataset(b.in_domain, mix_seed(seed, kShiftSplitStream), cfg.shift_strength);
  return b;
}

ExperimentResult run_experiment(const TrainConfig& config, const BenchmarkConfig& bench,
                                const EvalConfig& eval) {
  TrainConfig tc = config;
  tc.num_classes = bench.generator.num_classes;
  const Benchmark data = make_benchmark(config.seed, bench);
  ExperimentResult r;
  r.training = train(tc, data.train);
  r.in_domain = evaluate(r.training.model, data.in_domain, Domain::kIn, eval);
  r.out_domain = evaluate(r.training.model, data.out_domain, Domain::kOut, eval);
  return r;
}

}  // namespace detcal::toy
