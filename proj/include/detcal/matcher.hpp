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

#include <optional>
#include <span>
#include <vector>

#include "detcal/box.hpp"

namespace detcal {

struct MatchConfig {
  double iou_threshold = 0.5;  // rho, must lie in (0, 1]

  void validate() const;
};

/// Accuracy indicator K of one detection. `k` implies a matched ground truth
/// whose IoU reached the threshold.
struct MatchOutcome {
  std::size_t detection_index = 0;
  bool k = false;
  std::optional<std::size_t> matched_gt_index;
  std::optional<double> iou_at_match;
};

// Greedy class-aware one-to-one matching for a single image. Detections are
// visited by descending score, ties by ascending index; each takes the
// unmatched same-class ground truth of highest IoU when it reaches the
// threshold. Output is in input detection order.
std::vector<MatchOutcome> match_image(std::span<const Detection> dets,
                                      std::span<const GroundTruth> gts,
                                      const MatchConfig& cfg = {});

// Groups by image id and runs match_image per image. detection_index is the
// position in `dets`; matched_gt_index is the position in `gts`.
std::vector<MatchOutcome> match_dataset(std::span<const Detection> dets,
                                        std::span<const GroundTruth> gts,
                                        const MatchConfig& cfg = {});

}  // namespace detcal
