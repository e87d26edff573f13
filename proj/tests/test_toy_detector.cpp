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

#include <cmath>
#include <random>

#include "detcal/toy_detector.hpp"
#include "gtest/gtest.h"
#include "oracles.hpp"

namespace detcal::toy {
namespace {

GeneratorConfig small_generator() {
  GeneratorConfig g;
  g.num_classes = 3;
  g.feature_dim = 4;
  g.distractors = 3;
  return g;
}

ToyModel random_model(int classes, int features, std::uint64_t seed, double scale) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  ToyModel m = ToyModel::zeros(classes, features);
  Eigen::VectorXd flat(m.num_parameters());
  for (Eigen::Index i = 0; i < flat.size(); ++i) flat(i) = n(rng);
  m.assign(flat);
  return m;
}

std::vector<const SyntheticScene*> pointers(const std::vector<SyntheticScene>& data) {
  std::vector<const SyntheticScene*> out;
  for (const auto& s : data) out.push_back(&s);
  return out;
}

TEST(Generator, SameSeedSameData) {
  const auto cfg = small_generator();
  const auto a = generate_dataset(5, 6, cfg);
  const auto b = generate_dataset(5, 6, cfg);
  const auto c = generate_dataset(6, 6, cfg);
  ASSERT_EQ(a.size(), 6u);
  bool differs = false;
  for (std::size_t s = 0; s < a.size(); ++s) {
    ASSERT_EQ(a[s].gt.size(), b[s].gt.size());
    ASSERT_EQ(a[s].proposals.size(), b[s].proposals.size());
    for (std::size_t g = 0; g < a[s].gt.size(); ++g) EXPECT_EQ(a[s].gt[g].box, b[s].gt[g].box);
    for (std::size_t p = 0; p < a[s].proposals.size(); ++p) {
      EXPECT_EQ(a[s].proposals[p].feature, b[s].proposals[p].feature);
      EXPECT_EQ(a[s].proposals[p].anchor, b[s].proposals[p].anchor);
    }
    if (a[s].gt.size() != c[s].gt.size() || !(a[s].gt[0].box == c[s].gt[0].box)) differs = true;
  }
  EXPECT_TRUE(differs);
}

TEST(Generator, NoiselessFeaturesArePrototypes) {
  auto cfg = small_generator();
  cfg.noise_level = 0.0;
  const auto protos = prototypes(cfg);
  ASSERT_EQ(protos.rows(), cfg.num_classes + 1);
  for (const auto& scene : generate_dataset(9, 5, cfg)) {
    for (std::size_t i = 0; i < scene.proposals.size(); ++i) {
      const int row = i < scene.gt.size() ? scene.gt[i].class_id : cfg.num_classes;
      EXPECT_EQ(scene.proposals[i].feature, protos.row(row).transpose());
    }
  }
}

TEST(Generator, SceneShapeAndAnchorOverlap) {
  GeneratorConfig cfg;
  cfg.num_classes = 4;
  cfg.distractors = 3;
  const auto data = generate_dataset(17, 100, cfg);
  for (std::size_t s = 0; s < data.size(); ++s) {
    const auto& scene = data[s];
    EXPECT_EQ(scene.image_id, static_cast<ImageId>(s));
    ASSERT_GE(scene.gt.size(), 1u);
    ASSERT_LE(scene.gt.size(), 5u);
    EXPECT_EQ(scene.proposals.size(), scene.gt.size() + 3);
    for (std::size_t g = 0; g < scene.gt.size(); ++g) {
      const Box& b = scene.gt[g].box;
      EXPECT_GE(b.x_min, 0.0);
      EXPECT_LE(b.x_max, 1.0);
      EXPECT_GE(b.y_min, 0.0);
      EXPECT_LE(b.y_max, 1.0);
      EXPECT_GE(scene.gt[g].class_id, 0);
      EXPECT_LT(scene.gt[g].class_id, 4);
      EXPECT_GE(iou(scene.proposals[g].anchor, b), 0.5);
    }
  }
}

TEST(Generator, RejectsBadConfig) {
  auto cfg = small_generator();
  EXPECT_THROW(generate_dataset(1, 0, cfg), std::invalid_argument);
  cfg.noise_level = -1.0;
  EXPECT_THROW(generate_dataset(1, 1, cfg), std::invalid_argument);
}

TEST(Shift, ZeroStrengthIsIdentityAndShiftIsDeterministic) {
  const auto data = generate_dataset(3, 4, small_generator());
  const auto same = shift_dataset(data, 99, 0.0);
  const auto a = shift_dataset(data, 99, 1.0);
  const auto b = shift_dataset(data, 99, 1.0);
  for (std::size_t s = 0; s < data.size(); ++s) {
    for (std::size_t p = 0; p < data[s].proposals.size(); ++p) {
      EXPECT_EQ(same[s].proposals[p].feature, data[s].proposals[p].feature);
      EXPECT_EQ(a[s].proposals[p].feature, b[s].proposals[p].feature);
      EXPECT_NE(a[s].proposals[p].feature, data[s].proposals[p].feature);
      EXPECT_EQ(a[s].proposals[p].anchor, data[s].proposals[p].anchor);
    }
  }
  EXPECT_THROW(shift_dataset(data, 1, -0.5), std::invalid_argument);
}

TEST(Model, FlattenAssignRoundTrip) {
  const ToyModel m = random_model(3, 4, 1, 1.0);
  ToyModel n = ToyModel::zeros(3, 4);
  n.assign(m.flatten());
  EXPECT_EQ(n, m);
  EXPECT_EQ(m.num_parameters(), 3 * 4 + 3 + 4 * 4 + 4);
  EXPECT_THROW(n.assign(Eigen::VectorXd(3)), std::invalid_argument);
}

TEST(Model, InitializationPrior) {
  const ToyModel m = ToyModel::initialize(3, 4, 7, 0.0, 0.01);
  EXPECT_NEAR(sigmoid(m.class_bias(0)), 0.01, 1e-15);
  EXPECT_TRUE(m.box_weights.isZero());
  EXPECT_EQ(ToyModel::initialize(3, 4, 7), ToyModel::initialize(3, 4, 7));
}

TEST(Forward, ZeroModelScoresOneHalf) {
  const auto data = generate_dataset(2, 1, small_generator());
  const auto dets = forward(ToyModel::zeros(3, 4), data[0]);
  ASSERT_EQ(dets.size(), data[0].proposals.size());
  for (std::size_t i = 0; i < dets.size(); ++i) {
    EXPECT_EQ(dets[i].score, 0.5);
    EXPECT_EQ(dets[i].class_id, 0);
    EXPECT_EQ(dets[i].box, data[0].proposals[i].anchor);
    EXPECT_EQ(dets[i].image_id, data[0].image_id);
  }
}

TEST(Forward, SingleClassSingleProposal) {
  SyntheticScene scene;
  scene.image_id = 4;
  scene.proposals.push_back({Eigen::Vector2d(1.0, 2.0), Box{0.1, 0.1, 0.5, 0.3}});
  ToyModel m = ToyModel::zeros(1, 2);
  const auto dets = forward(m, scene);
  ASSERT_EQ(dets.size(), 1u);
  EXPECT_EQ(dets[0].class_id, 0);
}

TEST(Forward, HandSetWeights) {
  SyntheticScene scene;
  scene.proposals.push_back({Eigen::Vector2d(1.0, -1.0), Box{0.2, 0.2, 0.6, 0.4}});
  ToyModel m = ToyModel::zeros(2, 2);
  m.class_weights << 1.0, 0.0,
                     0.0, -2.0;
  m.class_bias << 0.0, -0.5;
  m.box_weights.row(0) << 0.25, 0.0;   // x_min += 0.25 * w
  m.box_bias(3) = 0.5;                 // y_max += 0.5 * h
  const auto dets = forward(m, scene);
  ASSERT_EQ(dets.size(), 1u);
  EXPECT_EQ(dets[0].class_id, 1);
  EXPECT_NEAR(dets[0].score, 1.0 / (1.0 + std::exp(-1.5)), 1e-15);
  EXPECT_NEAR(dets[0].box.x_min, 0.3, 1e-15);
  EXPECT_NEAR(dets[0].box.y_max, 0.5, 1e-15);
  EXPECT_NEAR(dets[0].box.x_max, 0.6, 1e-15);
}

TEST(Forward, CollapsedBoxIsSanitized) {
  SyntheticScene scene;
  scene.proposals.push_back({Eigen::Vector2d(1.0, 0.0), Box{0.2, 0.2, 0.6, 0.4}});
  ToyModel m = ToyModel::zeros(1, 2);
  m.box_bias(0) = 2.0;
  const auto dets = forward(m, scene);
  EXPECT_TRUE(dets[0].box.valid());
  EXPECT_EQ(dets[0].box.width(), 0.0);
}

TEST(Focal, DerivativeMatchesFiniteDifferences) {
  const FocalConfig cfg;
  for (double z : {-6.0, -2.0, -0.3, 0.0, 0.7, 3.0, 8.0}) {
    for (bool y : {false, true}) {
      double d = 0.0;
      focal_loss(z, y, cfg, &d);
      const double h = 1e-6;
      const double fd = (focal_loss(z + h, y, cfg) - focal_loss(z - h, y, cfg)) / (2 * h);
      EXPECT_NEAR(d, fd, 1e-8 + 1e-6 * std::abs(fd)) << "z=" << z << " y=" << y;
    }
  }
}

TEST(Focal, KnownValues) {
  const FocalConfig cfg;
  // p = 0.5: alpha * 0.25 * ln 2 and (1 - alpha) * 0.25 * ln 2
  EXPECT_NEAR(focal_loss(0.0, true, cfg), 0.25 * 0.25 * std::log(2.0), 1e-15);
  EXPECT_NEAR(focal_loss(0.0, false, cfg), 0.75 * 0.25 * std::log(2.0), 1e-15);
  EXPECT_LT(focal_loss(40.0, true, cfg), 1e-17);
  EXPECT_LT(focal_loss(-40.0, false, cfg), 1e-17);
  EXPECT_TRUE(std::isfinite(focal_loss(-800.0, true, cfg)));
}

TEST(Targets, AnchorsOfObjectsArePositive) {
  const auto data = generate_dataset(12, 20, small_generator());
  for (const auto& scene : data) {
    const auto t = assign_targets(scene);
    for (std::size_t g = 0; g < scene.gt.size(); ++g) EXPECT_GE(t[g], 0);
  }
}

double det_loss_at(const ToyModel& shape, const Eigen::VectorXd& x, std::span<const SyntheticScene* const> batch) {
  ToyModel m = shape;
  m.assign(x);
  return detection_loss(m, batch).det;
}

TEST(DetectionLoss, GradientMatchesFiniteDifferences) {
  const auto data = generate_dataset(21, 3, small_generator());
  const auto batch = pointers(data);
  const ToyModel m = random_model(3, 4, 22, 0.3);
  const auto analytic = detection_loss(m, batch).gradient.flatten();
  const auto numeric =
      testing::central_difference([&](const Eigen::VectorXd& x) { return det_loss_at(m, x, batch); }, m.flatten(), 1e-7);
  EXPECT_LE(testing::max_relative_error(analytic, numeric), 1e-5);
}

TEST(DetectionLoss, DuplicatedBatchKeepsMean) {
  const auto data = generate_dataset(23, 2, small_generator());
  const ToyModel m = random_model(3, 4, 24, 0.3);
  auto once = pointers(data);
  auto twice = once;
  twice.insert(twice.end(), once.begin(), once.end());
  const auto a = detection_loss(m, once);
  const auto b = detection_loss(m, twice);
  EXPECT_NEAR(a.det, b.det, 1e-12);
  EXPECT_LE((a.gradient.flatten() - b.gradient.flatten()).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_THROW(detection_loss(m, std::vector<const SyntheticScene*>{}), std::invalid_argument);
}

TEST(DetectionLoss, VanishesForAPerfectPredictor) {
  // One proposal exactly on its object with a one-hot feature.
  SyntheticScene scene;
  scene.gt.push_back({0, Box{0.2, 0.2, 0.6, 0.6}, 1});
  scene.proposals.push_back({Eigen::Vector2d(1.0, 0.0), Box{0.2, 0.2, 0.6, 0.6}});
  const std::vector<const SyntheticScene*> batch{&scene};
  double previous = 1e9;
  for (double scale : {2.0, 6.0, 12.0, 24.0}) {
    ToyModel m = ToyModel::zeros(2, 2);
    m.class_bias << -scale, scale;
    const double loss = detection_loss(m, batch).det;
    EXPECT_LT(loss, previous);
    previous = loss;
  }
  EXPECT_LT(previous, 1e-20);
}

double total_loss_at(const ToyModel& shape, const Eigen::VectorXd& x, std::span<const SyntheticScene* const> batch) {
  ToyModel m = shape;
  m.assign(x);
  return total_loss(m, batch, {}, {}, {}, true).total;
}

TEST(TotalLoss, GradientMatchesFiniteDifferences) {
  const auto data = generate_dataset(25, 3, small_generator());
  const auto batch = pointers(data);
  const ToyModel m = random_model(3, 4, 26, 0.3);
  const auto loss = total_loss(m, batch, {}, {}, {}, true);
  EXPECT_GT(loss.bpc, 0.0);
  EXPECT_NEAR(loss.total, loss.det + loss.bpc, 1e-15);
  const auto numeric =
      testing::central_difference([&](const Eigen::VectorXd& x) { return total_loss_at(m, x, batch); }, m.flatten(), 1e-7);
  EXPECT_LE(testing::max_relative_error(loss.gradient.flatten(), numeric), 1e-5);
}

TEST(TotalLoss, BaselineIsDetectionLoss) {
  const auto data = generate_dataset(27, 2, small_generator());
  const auto batch = pointers(data);
  const ToyModel m = random_model(3, 4, 28, 0.3);
  const auto a = total_loss(m, batch, {}, {}, {}, false);
  const auto b = detection_loss(m, batch);
  EXPECT_EQ(a.total, b.det);
  EXPECT_EQ(a.bpc, 0.0);
  EXPECT_EQ(a.gradient, b.gradient);
}

TrainConfig small_train(int epochs) {
  TrainConfig c;
  c.num_classes = 3;
  c.epochs = epochs;
  return c;
}

TEST(Train, ZeroLearningRateLeavesInitialization) {
  const auto data = generate_dataset(30, 4, small_generator());
  auto cfg = small_train(3);
  cfg.learning_rate = 0.0;
  const auto r = train(cfg, data);
  EXPECT_EQ(r.model, ToyModel::initialize(3, 4, cfg.seed, cfg.init_scale));
  ASSERT_EQ(r.curve.size(), 3u);
  EXPECT_EQ(r.curve[0].epoch, 1);
}

TEST(Train, BitReproducible) {
  const auto data = generate_dataset(31, 6, small_generator());
  const auto cfg = small_train(4);
  const auto a = train(cfg, data);
  const auto b = train(cfg, data);
  EXPECT_EQ(a.model, b.model);
  for (std::size_t e = 0; e < a.curve.size(); ++e) {
    EXPECT_EQ(a.curve[e].det, b.curve[e].det);
    EXPECT_EQ(a.curve[e].bpc, b.curve[e].bpc);
  }
}

TEST(Train, ZeroEpochsAndBadConfig) {
  const auto data = generate_dataset(32, 2, small_generator());
  const auto r = train(small_train(0), data);
  EXPECT_TRUE(r.curve.empty());
  auto cfg = small_train(1);
  cfg.batch_size = 0;
  EXPECT_THROW(train(cfg, data), std::invalid_argument);
  cfg = small_train(1);
  cfg.learning_rate = -1.0;
  EXPECT_THROW(train(cfg, data), std::invalid_argument);
  EXPECT_THROW(train(small_train(1), std::vector<SyntheticScene>{}), std::invalid_argument);
}

TEST(Train, HugeLearningRateReportsDivergence) {
  const auto data = generate_dataset(33, 4, small_generator());
  auto cfg = small_train(50);
  cfg.learning_rate = 1e308;
  EXPECT_THROW(train(cfg, data), TrainingDiverged);
}

TEST(Train, LossDecreasesOnTheBenchmark) {
  const auto bench = make_benchmark(42, {});
  TrainConfig cfg;
  cfg.epochs = 5;
  const auto r = train(cfg, bench.train);
  EXPECT_LT(r.curve.back().det, r.curve.front().det);
}

TEST(AveragePrecision, HandComputed) {
  const std::vector<ScoredSample> dets{{0.9, true}, {0.8, false}, {0.7, true}, {0.6, false}, {0.5, true}};
  // Envelope precisions at the three recall steps: 1, 2/3, 3/5.
  EXPECT_NEAR(average_precision(dets, 4), 0.25 * (1.0 + 2.0 / 3.0 + 0.6), 1e-15);
  EXPECT_EQ(average_precision(dets, 0), 0.0);
  EXPECT_EQ(average_precision({}, 3), 0.0);
  EXPECT_EQ(average_precision(std::vector<ScoredSample>{{0.2, true}}, 1), 1.0);
}

TEST(AveragePrecision, RankOnlyWhileCalibrationIsNot) {
  std::mt19937_64 rng(40);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<ScoredSample> a(40), b(40);
    for (std::size_t i = 0; i < a.size(); ++i) {
      a[i] = {u(rng), u(rng) < 0.5};
      b[i] = {a[i].score * a[i].score * 0.5, a[i].correct};  // monotone map
    }
    EXPECT_NEAR(average_precision(a, 30), average_precision(b, 30), 1e-15);
    EXPECT_NE(d_ece(a).metric_value, d_ece(b).metric_value);
  }
}

TEST(Evaluate, OracleDetectorIsPerfect) {
  const auto data = generate_dataset(50, 20, small_generator());
  std::vector<std::vector<Detection>> dets;
  for (const auto& scene : data) {
    std::vector<Detection> list;
    for (const auto& g : scene.gt) list.push_back({scene.image_id, g.box, g.class_id, 1.0});
    dets.push_back(list);
  }
  const auto s = evaluate_detections(dets, data, Domain::kIn);
  EXPECT_EQ(s.map_at_05, 1.0);
  EXPECT_EQ(s.ap_at_05, 1.0);
  EXPECT_EQ(s.d_ece, 0.0);
  EXPECT_EQ(s.aligned_fraction(), 1.0);
  EXPECT_FALSE(s.d_ece_degenerate);
}

TEST(Evaluate, ScoreCutoffAboveEverythingIsDegenerate) {
  const auto data = generate_dataset(51, 3, small_generator());
  EvalConfig cfg;
  cfg.min_score = 0.9;
  const auto s = evaluate(ToyModel::zeros(3, 4), data, Domain::kOut, cfg);
  EXPECT_TRUE(s.d_ece_degenerate);
  EXPECT_EQ(s.num_detections, 0u);
  EXPECT_EQ(s.d_ece, 0.0);
  EXPECT_EQ(s.map_at_05, 0.0);
  EXPECT_EQ(s.domain, Domain::kOut);
}

TEST(Evaluate, DomainNames) {
  EXPECT_EQ(to_string(Domain::kIn), "in");
  EXPECT_EQ(domain_from_string("out"), Domain::kOut);
  EXPECT_THROW(domain_from_string("sideways"), std::invalid_argument);
}

TEST(Benchmark, ShiftHurtsATrainedModel) {
  const auto bench = make_benchmark(42, {});
  TrainConfig cfg;
  cfg.epochs = 20;
  cfg.with_bpc = false;
  const auto model = train(cfg, bench.train).model;
  const auto in = evaluate(model, bench.in_domain, Domain::kIn);
  const auto out = evaluate(model, bench.out_domain, Domain::kOut);
  EXPECT_LT(out.map_at_05, in.map_at_05);
  EXPECT_EQ(bench.in_domain.front().image_id, 100);
}

}  // namespace
}  // namespace detcal::toy
