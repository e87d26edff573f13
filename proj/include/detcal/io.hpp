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

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "detcal/box.hpp"
#include "detcal/calibration.hpp"
#include "detcal/toy_detector.hpp"

namespace detcal::io {

/// Malformed input. The message names the file or JSON path at fault.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CocoGroundTruth {
  std::vector<GroundTruth> ground_truths;
  std::map<int, std::string> categories;
  std::size_t crowd_skipped = 0;
};

/// Ground truths, detections and category names of one evaluation.
struct DatasetBundle {
  std::vector<GroundTruth> ground_truths;
  std::vector<Detection> detections;
  std::map<int, std::string> categories;

  /// Throws ParseError when a detection uses a category missing from a
  /// non-empty category map.
  void validate() const;
};

// COCO ground truth: `annotations[].{image_id, category_id, bbox}` and
// `categories[].{id, name}`; `images` is ignored. bbox is (x, y, w, h) and
// is stored in corner form. Annotations with `iscrowd: 1` are skipped and
// counted.
CocoGroundTruth parse_coco_gt(std::string_view text, std::string_view source = "<string>");
CocoGroundTruth load_coco_gt(const std::filesystem::path& path);

// COCO results: array of `{image_id, category_id, bbox, score}`. Scores
// outside [0, 1] are rejected, never clamped.
std::vector<Detection> parse_coco_dets(std::string_view text, std::string_view source = "<string>");
std::vector<Detection> load_coco_dets(const std::filesystem::path& path);

DatasetBundle load_bundle(const std::filesystem::path& gt_path, const std::filesystem::path& dets_path);

/// `score,k` rows with an optional header line.
std::vector<ScoredSample> parse_matched_csv(std::string_view text, std::string_view source = "<string>");
std::vector<ScoredSample> load_matched_csv(const std::filesystem::path& path);

enum class Format { kJson, kCsv };

Format format_from_string(std::string_view name);

/// Fixed-point with 6 decimals; never prints a negative zero.
std::string fixed6(double v);

std::string report_to_json(const CalibrationReport& report);
CalibrationReport report_from_json(std::string_view text);

/// Header `bin_lower,bin_upper,count,mean_confidence,precision,gap`, one row
/// per bin, LF line endings.
std::string reliability_csv(const CalibrationReport& report);

std::string summary_to_json(const toy::EvalSummary& summary);
toy::EvalSummary summary_from_json(std::string_view text);

std::string curve_csv(const std::vector<toy::EpochStats>& curve);

void write_report(const CalibrationReport& report, const std::filesystem::path& path, Format format);
void write_report(const toy::EvalSummary& summary, const std::filesystem::path& path,
                  Format format = Format::kJson);

CalibrationReport read_report(const std::filesystem::path& path);
toy::EvalSummary read_summary(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view contents);

}  // namespace detcal::io
