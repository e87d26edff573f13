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

#include "detcal/matcher.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <stdexcept>

namespace detcal {

void MatchConfig::validate() const {
  if (!(iou_threshold > 0.0 && iou_threshold <= 1.0))
    throw std::invalid_argument("iou threshold must lie in (0, 1]");
}

namespace {

std::vector<std::size_t> score_order(std::span<const Detection> dets) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return dets[a].score > dets[b].score;
  });
  return order;
}

}  // namespace

std::vector<MatchOutcome> match_image(std::span<const Detection> dets,
                                      std::span<const GroundTruth> gts,
                                      const MatchConfig& cfg) {
  cfg.validate();
  std::vector<MatchOutcome> out(dets.size());
  for (std::size_t i = 0; i < dets.size(); ++i) out[i].detection_index = i;

  std::vector<bool> taken(gts.size(), false);
  for (std::size_t di : score_order(dets)) {
    const Detection& det = dets[di];
    double best_iou = -1.0;
    std::optional<std::size_t> best;
    for (std::size_t gi = 0; gi < gts.size(); ++gi) {
      if (taken[gi] || gts[gi].class_id != det.class_id) continue;
      const double v = iou(det.box, gts[gi].box);
      if (v > best_iou) {
        best_iou = v;
        best = gi;
      }
    }
    if (best && best_iou >= cfg.iou_threshold) {
      taken[*best] = true;
      out[di].k = true;
      out[di].matched_gt_index = best;
      out[di].iou_at_match = best_iou;
    }
  }
  return out;
}

std::vector<MatchOutcome> match_dataset(std::span<const Detection> dets,
                                        std::span<const GroundTruth> gts,
                                        const MatchConfig& cfg) {
  cfg.validate();
  std::map<ImageId, std::vector<std::size_t>> det_idx, gt_idx;
  for (std::size_t i = 0; i < dets.size(); ++i) det_idx[dets[i].image_id].push_back(i);
  for (std::size_t i = 0; i < gts.size(); ++i) gt_idx[gts[i].image_id].push_back(i);

  std::vector<MatchOutcome> out(dets.size());
  std::vector<Detection> local_dets;
  std::vector<GroundTruth> local_gts;
  for (const auto& [image, didx] : det_idx) {
    local_dets.clear();
    local_gts.clear();
    for (std::size_t i : didx) local_dets.push_back(dets[i]);
    const auto git = gt_idx.find(image);
    if (git != gt_idx.end())
      for (std::size_t i : git->second) local_gts.push_back(gts[i]);

    const auto local = match_image(local_dets, local_gts, cfg);
    for (std::size_t j = 0; j < local.size(); ++j) {
      MatchOutcome m = local[j];
      m.detection_index = didx[j];
      if (m.matched_gt_index) m.matched_gt_index = git->second[*m.matched_gt_index];
      out[didx[j]] = m;
    }
  }
  return out;
}

}  // namespace detcal
