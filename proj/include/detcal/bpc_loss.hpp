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

// Precision/confidence partition counts and the differentiable train-time
// calibration loss built on them.
//
// Every detection falls in one of four partitions, fixed by its accuracy
// indicator K and whether its score reaches the threshold th:
//
//   AC  K = 1, s >= th      AN  K = 1, s < th
//   IC  K = 0, s >= th      IN  K = 0, s < th
//
// Soft counts weight each member by a tanh-modulated score:
//
//   t_ac = sum s tanh(s)          t_an = sum s (1 - tanh(s))
//   t_ic = sum (1 - s) tanh(s)    t_in = sum (1 - s)(1 - tanh(s))
//
// and the loss is log(1 + (t_an + t_ic) / (t_ac + t_in + eps)). Membership
// is a constant of the forward pass, so gradients are taken with the
// partitions frozen.

#include <cmath>
#include <stdexcept>
#include <vector>

#include <Eigen/Core>

namespace detcal {

struct BpcConfig {
  double score_threshold = 0.5;  // th, in (0, 1)
  double epsilon = 1e-8;

  void validate() const {
    if (!(score_threshold > 0.0 && score_threshold < 1.0))
      throw std::invalid_argument("score threshold must lie in (0, 1)");
    if (!(epsilon > 0.0)) throw std::invalid_argument("epsilon must be positive");
  }
};

enum class CountMode { kHard, kSoft };

enum class Partition { kAC, kAN, kIC, kIN };

inline Partition partition_of(double score, bool accurate, double threshold) {
  const bool confident = score >= threshold;
  if (accurate) return confident ? Partition::kAC : Partition::kAN;
  return confident ? Partition::kIC : Partition::kIN;
}

template <typename Scalar>
struct PartitionCountsT {
  Scalar t_ac{0};
  Scalar t_an{0};
  Scalar t_ic{0};
  Scalar t_in{0};
  CountMode mode = CountMode::kHard;

  Scalar aligned() const { return t_ac + t_in; }
  Scalar misaligned() const { return t_an + t_ic; }
  Scalar total() const { return aligned() + misaligned(); }

  Scalar& operator[](Partition p) {
    switch (p) {
      case Partition::kAC: return t_ac;
      case Partition::kAN: return t_an;
      case Partition::kIC: return t_ic;
      default: return t_in;
    }
  }

  PartitionCountsT& operator+=(const PartitionCountsT& o) {
    t_ac += o.t_ac;
    t_an += o.t_an;
    t_ic += o.t_ic;
    t_in += o.t_in;
    return *this;
  }

  friend bool operator==(const PartitionCountsT&, const PartitionCountsT&) = default;
};

using PartitionCounts = PartitionCountsT<double>;

template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
struct LossValueT {
  Scalar value{0};
  VectorX<Scalar> gradients;  // d value / d score_i
};

using LossValue = LossValueT<double>;

struct PcRatio {
  double value = 0.0;
  bool degenerate = false;  // all counts zero; value reported as 0
};

namespace internal {

template <typename DerivedS, typename DerivedK>
void check_inputs(const Eigen::DenseBase<DerivedS>& scores, const Eigen::DenseBase<DerivedK>& k,
                  const BpcConfig& cfg) {
  cfg.validate();
  if (scores.size() != k.size())
    throw std::invalid_argument("scores and accuracy indicators differ in length");
}

/// Soft contribution of one score to its partition and its derivative.
template <typename Scalar>
void soft_term(Scalar s, Partition p, Scalar& value, Scalar& deriv) {
  using std::tanh;
  const Scalar t = tanh(s);
  const Scalar sech2 = Scalar(1) - t * t;
  switch (p) {
    case Partition::kAC:
      value = s * t;
      deriv = t + s * sech2;
      break;
    case Partition::kAN:
      value = s * (Scalar(1) - t);
      deriv = Scalar(1) - t - s * sech2;
      break;
    case Partition::kIC:
      value = (Scalar(1) - s) * t;
      deriv = -t + (Scalar(1) - s) * sech2;
      break;
    case Partition::kIN:
      value = (Scalar(1) - s) * (Scalar(1) - t);
      deriv = -(Scalar(1) - t) - (Scalar(1) - s) * sech2;
      break;
  }
}

}  // namespace internal

template <typename DerivedS, typename DerivedK>
PartitionCountsT<typename DerivedS::Scalar> hard_counts(const Eigen::DenseBase<DerivedS>& scores,
                                                        const Eigen::DenseBase<DerivedK>& k,
                                                        const BpcConfig& cfg = {}) {
  using Scalar = typename DerivedS::Scalar;
  internal::check_inputs(scores, k, cfg);
  PartitionCountsT<Scalar> counts;
  counts.mode = CountMode::kHard;
  for (Eigen::Index i = 0; i < scores.size(); ++i) {
    const auto s = static_cast<double>(scores.derived().coeff(i));
    counts[partition_of(s, static_cast<bool>(k.derived().coeff(i)), cfg.score_threshold)] += Scalar(1);
  }
  return counts;
}

template <typename Scalar>
PcRatio pc_ratio(const PartitionCountsT<Scalar>& counts) {
  const auto total = static_cast<double>(counts.total());
  if (!(total > 0.0)) return {0.0, true};
  return {static_cast<double>(counts.aligned()) / total, false};
}

template <typename DerivedS, typename DerivedK>
PartitionCountsT<typename DerivedS::Scalar> soft_counts(const Eigen::DenseBase<DerivedS>& scores,
                                                        const Eigen::DenseBase<DerivedK>& k,
                                                        const BpcConfig& cfg = {}) {
  using Scalar = typename DerivedS::Scalar;
  internal::check_inputs(scores, k, cfg);
  PartitionCountsT<Scalar> counts;
  counts.mode = CountMode::kSoft;
  for (Eigen::Index i = 0; i < scores.size(); ++i) {
    const Scalar s = scores.derived().coeff(i);
    const Partition p =
        partition_of(static_cast<double>(s), static_cast<bool>(k.derived().coeff(i)), cfg.score_threshold);
    Scalar v, d;
    internal::soft_term(s, p, v, d);
    counts[p] += v;
  }
  return counts;
}

/// Loss value and its gradient with respect to every score.
template <typename DerivedS, typename DerivedK>
LossValueT<typename DerivedS::Scalar> bpc_loss(const Eigen::DenseBase<DerivedS>& scores,
                                               const Eigen::DenseBase<DerivedK>& k,
                                               const BpcConfig& cfg = {}) {
  using Scalar = typename DerivedS::Scalar;
  internal::check_inputs(scores, k, cfg);
  const Eigen::Index n = scores.size();

  PartitionCountsT<Scalar> counts;
  counts.mode = CountMode::kSoft;
  std::vector<Partition> parts(static_cast<std::size_t>(n));
  VectorX<Scalar> term_grad(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Scalar s = scores.derived().coeff(i);
    Partition& p = parts[static_cast<std::size_t>(i)];
    p = partition_of(static_cast<double>(s), static_cast<bool>(k.derived().coeff(i)), cfg.score_threshold);
    Scalar v;
    internal::soft_term(s, p, v, term_grad(i));
    counts[p] += v;
  }

  using std::log1p;
  const Scalar aligned = counts.aligned() + Scalar(cfg.epsilon);
  const Scalar misaligned = counts.misaligned();

  LossValueT<Scalar> out;
  out.value = log1p(misaligned / aligned);
  // dL/dA = -B / (A (A + B)),  dL/dB = 1 / (A + B)
  const Scalar d_aligned = -misaligned / (aligned * (aligned + misaligned));
  const Scalar d_misaligned = Scalar(1) / (aligned + misaligned);
  out.gradients.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Partition p = parts[static_cast<std::size_t>(i)];
    const bool in_aligned = p == Partition::kAC || p == Partition::kIN;
    out.gradients(i) = (in_aligned ? d_aligned : d_misaligned) * term_grad(i);
  }
  return out;
}

/// |-log(A / (A + B)) - log(1 + B / A)| over soft counts without epsilon.
/// Throws when t_ac + t_in is zero.
template <typename DerivedS, typename DerivedK>
double equivalence_check(const Eigen::DenseBase<DerivedS>& scores, const Eigen::DenseBase<DerivedK>& k,
                         const BpcConfig& cfg = {}) {
  const auto counts = soft_counts(scores, k, cfg);
  const auto a = static_cast<double>(counts.aligned());
  const auto b = static_cast<double>(counts.misaligned());
  if (!(a > 0.0)) throw std::domain_error("t_ac + t_in must be positive");
  const double ratio_form = -std::log(a / (a + b));
  const double simplified = std::log(1.0 + b / a);
  return std::abs(ratio_form - simplified);
}

}  // namespace detcal
