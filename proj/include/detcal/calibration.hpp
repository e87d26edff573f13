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

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "detcal/box.hpp"
#include "detcal/matcher.hpp"

namespace detcal {

/// One confidence/correctness pair. For detections `correct` is K; for
/// classification it is the top-1 accuracy indicator.
struct ScoredSample {
  double score = 0.0;
  bool correct = false;
};

struct BinStats {
  int bin_index = 0;
  double lower = 0.0;
  double upper = 0.0;
  std::size_t count = 0;
  double mean_confidence = 0.0;        // 0 when the bin is empty
  double precision_or_accuracy = 0.0;  // 0 when the bin is empty

  friend bool operator==(const BinStats&, const BinStats&) = default;
};

enum class MetricKind { kEce, kDece };

std::string_view to_string(MetricKind kind);
MetricKind metric_kind_from_string(std::string_view name);

struct CalibrationReport {
  std::vector<BinStats> bins;
  double metric_value = 0.0;
  std::size_t total_samples = 0;
  int num_bins = 0;
  MetricKind kind = MetricKind::kDece;

  /// No samples survived the score cutoff; metric_value is reported as 0.
  bool degenerate() const { return total_samples == 0; }

  friend bool operator==(const CalibrationReport&, const CalibrationReport&) = default;
};

/// Running per-bin sums. Two accumulators over disjoint sample sets merge
/// into the accumulator of their union.
class BinAccumulator {
 public:
  explicit BinAccumulator(int num_bins, double min_score = 0.0);

  void add(const ScoredSample& sample);
  void add(std::span<const ScoredSample> samples);
  void merge(const BinAccumulator& other);

  int num_bins() const { return num_bins_; }
  std::vector<BinStats> stats() const;

 private:
  int num_bins_;
  double min_score_;
  std::vector<std::size_t> counts_;
  std::vector<std::size_t> correct_;
  std::vector<double> score_sums_;
};

/// Lower edge of bin `index` out of `num_bins` equal-width bins on [0, 1].
inline double bin_edge(int index, int num_bins) {
  return static_cast<double>(index) / static_cast<double>(num_bins);
}

/// Bin of `score`: bin l covers [l/L, (l+1)/L), the last bin is closed at 1.
int bin_index(double score, int num_bins);

std::vector<BinStats> bin_samples(std::span<const ScoredSample> samples, int num_bins,
                                  double min_score = 0.0);

/// Weighted mean absolute gap sum_l |B(l)|/|D| * |acc(l) - conf(l)|.
double calibration_error(std::span<const BinStats> bins);

CalibrationReport make_report(std::vector<BinStats> bins, MetricKind kind);

CalibrationReport ece(std::span<const ScoredSample> samples, int num_bins = 10);

/// Detection ECE: precision of K within each confidence bin against the
/// bin's mean confidence. `outcomes[i]` must describe `dets[i]`.
CalibrationReport d_ece(std::span<const Detection> dets, std::span<const MatchOutcome> outcomes,
                        int num_bins = 10, double min_score = 0.0);
CalibrationReport d_ece(std::span<const ScoredSample> samples, int num_bins = 10,
                        double min_score = 0.0);

std::vector<ScoredSample> to_samples(std::span<const Detection> dets,
                                     std::span<const MatchOutcome> outcomes);

struct ReliabilityRow {
  double bin_lower = 0.0;
  double bin_upper = 0.0;
  std::size_t count = 0;
  double mean_confidence = 0.0;
  double precision = 0.0;
  double gap = 0.0;  // precision - mean_confidence, signed
};

std::vector<ReliabilityRow> reliability_data(const CalibrationReport& report);

double sigmoid(double z);
double logit(double p);

/// sigmoid(z / T) for every logit. Throws for T <= 0.
std::vector<double> temperature_scale(std::span<const double> raw_logits, double temperature);

/// Grid point minimizing D-ECE of the temperature-scaled hold-out scores;
/// ties go to the smaller temperature.
double fit_temperature(std::span<const double> val_logits, std::span<const MatchOutcome> outcomes,
                       std::span<const double> grid, int num_bins = 10, double min_score = 0.0);

/// `count` temperatures evenly spaced over [lo, hi].
std::vector<double> temperature_grid(double lo, double hi, int count);

}  // namespace detcal
