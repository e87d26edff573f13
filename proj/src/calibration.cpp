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

#include "detcal/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace detcal {

std::string_view to_string(MetricKind kind) {
  return kind == MetricKind::kEce ? "ECE" : "D-ECE";
}

MetricKind metric_kind_from_string(std::string_view name) {
  if (name == "ECE") return MetricKind::kEce;
  if (name == "D-ECE") return MetricKind::kDece;
  throw std::invalid_argument("unknown metric kind '" + std::string(name) + "'");
}

int bin_index(double score, int num_bins) {
  int idx = static_cast<int>(std::floor(score * num_bins));
  idx = std::clamp(idx, 0, num_bins - 1);
  // Resolve rounding in score * L against the exact edges l / L.
  while (idx > 0 && score < bin_edge(idx, num_bins)) --idx;
  while (idx < num_bins - 1 && score >= bin_edge(idx + 1, num_bins)) ++idx;
  return idx;
}

BinAccumulator::BinAccumulator(int num_bins, double min_score)
    : num_bins_(num_bins),
      min_score_(min_score),
      counts_(static_cast<std::size_t>(std::max(num_bins, 0)), 0),
      correct_(counts_.size(), 0),
      score_sums_(counts_.size(), 0.0) {
  if (num_bins < 1) throw std::invalid_argument("number of bins must be >= 1");
  if (!(min_score >= 0.0 && min_score <= 1.0))
    throw std::invalid_argument("min_score must lie in [0, 1]");
}

void BinAccumulator::add(const ScoredSample& sample) {
  if (!(sample.score >= 0.0 && sample.score <= 1.0))
    throw std::out_of_range("sample score " + std::to_string(sample.score) + " outside [0,1]");
  if (sample.score < min_score_) return;
  const auto l = static_cast<std::size_t>(bin_index(sample.score, num_bins_));
  ++counts_[l];
  correct_[l] += sample.correct ? 1 : 0;
  score_sums_[l] += sample.score;
}

void BinAccumulator::add(std::span<const ScoredSample> samples) {
  for (const auto& s : samples) add(s);
}

void BinAccumulator::merge(const BinAccumulator& other) {
  if (other.num_bins_ != num_bins_ || other.min_score_ != min_score_)
    throw std::invalid_argument("cannot merge accumulators with different binning");
  for (std::size_t l = 0; l < counts_.size(); ++l) {
    counts_[l] += other.counts_[l];
    correct_[l] += other.correct_[l];
    score_sums_[l] += other.score_sums_[l];
  }
}

std::vector<BinStats> BinAccumulator::stats() const {
  std::vector<BinStats> bins(counts_.size());
  for (int l = 0; l < num_bins_; ++l) {
    const auto u = static_cast<std::size_t>(l);
    BinStats& b = bins[u];
    b.bin_index = l;
    b.lower = bin_edge(l, num_bins_);
    b.upper = bin_edge(l + 1, num_bins_);
    b.count = counts_[u];
    if (b.count > 0) {
      const auto n = static_cast<double>(b.count);
      b.mean_confidence = score_sums_[u] / n;
      b.precision_or_accuracy = static_cast<double>(correct_[u]) / n;
    }
  }
  return bins;
}

std::vector<BinStats> bin_samples(std::span<const ScoredSample> samples, int num_bins,
                                  double min_score) {
  BinAccumulator acc(num_bins, min_score);
  acc.add(samples);
  return acc.stats();
}

double calibration_error(std::span<const BinStats> bins) {
  std::size_t total = 0;
  for (const auto& b : bins) total += b.count;
  if (total == 0) return 0.0;
  double err = 0.0;
  for (const auto& b : bins) {
    if (b.count == 0) continue;
    err += static_cast<double>(b.count) / static_cast<double>(total) *
           std::abs(b.precision_or_accuracy - b.mean_confidence);
  }
  return err;
}

CalibrationReport make_report(std::vector<BinStats> bins, MetricKind kind) {
  CalibrationReport r;
  r.num_bins = static_cast<int>(bins.size());
  for (const auto& b : bins) r.total_samples += b.count;
  r.metric_value = calibration_error(bins);
  r.bins = std::move(bins);
  r.kind = kind;
  return r;
}

CalibrationReport ece(std::span<const ScoredSample> samples, int num_bins) {
  return make_report(bin_samples(samples, num_bins, 0.0), MetricKind::kEce);
}

CalibrationReport d_ece(std::span<const ScoredSample> samples, int num_bins, double min_score) {
  return make_report(bin_samples(samples, num_bins, min_score), MetricKind::kDece);
}

std::vector<ScoredSample> to_samples(std::span<const Detection> dets,
                                     std::span<const MatchOutcome> outcomes) {
  if (dets.size() != outcomes.size())
    throw std::invalid_argument("detections and match outcomes differ in length");
  std::vector<ScoredSample> samples(dets.size());
  for (std::size_t i = 0; i < dets.size(); ++i) {
    const std::size_t d = outcomes[i].detection_index;
    if (d >= dets.size()) throw std::out_of_range("match outcome refers to a missing detection");
    samples[i] = {dets[d].score, outcomes[i].k};
  }
  return samples;
}

CalibrationReport d_ece(std::span<const Detection> dets, std::span<const MatchOutcome> outcomes,
                        int num_bins, double min_score) {
  const auto samples = to_samples(dets, outcomes);
  return d_ece(samples, num_bins, min_score);
}

std::vector<ReliabilityRow> reliability_data(const CalibrationReport& report) {
  std::vector<ReliabilityRow> rows;
  rows.reserve(report.bins.size());
  for (const auto& b : report.bins) {
    rows.push_back({b.lower, b.upper, b.count, b.mean_confidence, b.precision_or_accuracy,
                    b.precision_or_accuracy - b.mean_confidence});
  }
  return rows;
}

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double logit(double p) {
  if (p <= 0.0) return -std::numeric_limits<double>::infinity();
  if (p >= 1.0) return std::numeric_limits<double>::infinity();
  return std::log(p) - std::log1p(-p);
}

std::vector<double> temperature_scale(std::span<const double> raw_logits, double temperature) {
  if (!(temperature > 0.0)) throw std::invalid_argument("temperature must be positive");
  std::vector<double> out(raw_logits.size());
  for (std::size_t i = 0; i < raw_logits.size(); ++i) out[i] = sigmoid(raw_logits[i] / temperature);
  return out;
}

double fit_temperature(std::span<const double> val_logits, std::span<const MatchOutcome> outcomes,
                       std::span<const double> grid, int num_bins, double min_score) {
  if (grid.empty()) throw std::invalid_argument("temperature grid is empty");
  if (val_logits.empty()) throw std::invalid_argument("hold-out set is empty");
  if (val_logits.size() != outcomes.size())
    throw std::invalid_argument("logits and match outcomes differ in length");

  double best_t = 0.0;
  double best_err = std::numeric_limits<double>::infinity();
  std::vector<ScoredSample> samples(val_logits.size());
  for (double t : grid) {
    const auto scores = temperature_scale(val_logits, t);
    for (std::size_t i = 0; i < scores.size(); ++i) samples[i] = {scores[i], outcomes[i].k};
    const double err = d_ece(samples, num_bins, min_score).metric_value;
    if (err < best_err || (err == best_err && t < best_t)) {
      best_err = err;
      best_t = t;
    }
  }
  return best_t;
}

std::vector<double> temperature_grid(double lo, double hi, int count) {
  if (!(lo > 0.0) || !(hi >= lo) || count < 1)
    throw std::invalid_argument("temperature grid needs 0 < lo <= hi and count >= 1");
  std::vector<double> grid(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i)
    grid[static_cast<std::size_t>(i)] =
        count == 1 ? lo : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(count - 1);
  return grid;
}

}  // namespace detcal
