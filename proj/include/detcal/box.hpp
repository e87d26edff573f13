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

#include <algorithm>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace detcal {

/// Axis-aligned box in corner form. Coordinates are unit-agnostic; callers
/// must keep one convention (pixels or normalized) within a dataset.
template <typename Scalar>
struct BoxT {
  Scalar x_min{0};
  Scalar y_min{0};
  Scalar x_max{0};
  Scalar y_max{0};

  static BoxT FromXywh(Scalar x, Scalar y, Scalar w, Scalar h) {
    return BoxT{x, y, x + w, y + h};
  }

  Scalar width() const { return x_max - x_min; }
  Scalar height() const { return y_max - y_min; }
  Scalar area() const { return width() * height(); }
  bool valid() const { return x_max >= x_min && y_max >= y_min; }

  BoxT translated(Scalar dx, Scalar dy) const {
    return BoxT{x_min + dx, y_min + dy, x_max + dx, y_max + dy};
  }

  friend bool operator==(const BoxT&, const BoxT&) = default;
};

using Box = BoxT<double>;

/// Intersection over union. Zero when the union has no area.
template <typename Scalar>
Scalar iou(const BoxT<Scalar>& a, const BoxT<Scalar>& b) {
  const Scalar iw = std::max(Scalar(0), std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min));
  const Scalar ih = std::max(Scalar(0), std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min));
  const Scalar inter = iw * ih;
  const Scalar uni = a.area() + b.area() - inter;
  if (!(uni > Scalar(0))) return Scalar(0);
  return std::clamp(inter / uni, Scalar(0), Scalar(1));
}

using ImageId = std::int64_t;

struct Detection {
  ImageId image_id{0};
  Box box;
  int class_id{0};
  double score{0.0};

  friend bool operator==(const Detection&, const Detection&) = default;
};

struct GroundTruth {
  ImageId image_id{0};
  Box box;
  int class_id{0};

  friend bool operator==(const GroundTruth&, const GroundTruth&) = default;
};

inline void validate(const Box& box) {
  if (!box.valid()) throw std::invalid_argument("box has x_max < x_min or y_max < y_min");
}

inline void validate(const Detection& det) {
  validate(det.box);
  if (det.class_id < 0) throw std::invalid_argument("negative class id");
  if (!(det.score >= 0.0 && det.score <= 1.0))
    throw std::out_of_range("detection score " + std::to_string(det.score) + " outside [0,1]");
}

}  // namespace detcal
