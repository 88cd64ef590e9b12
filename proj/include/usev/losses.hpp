#pragma once

// Training objectives. Each loss exists in two forms: a plain evaluation
// over sample spans, and a graph form over ad::Tensor estimates for
// training. Both compute the same expression in the same order.

#include <span>
#include <string>

#include "usev/autodiff.hpp"
#include "usev/scenario.hpp"

namespace usev {

/// Stabilizer used by every loss and metric.
inline constexpr double kEpsilon = 1e-8;

/// Weights of the QQ, SQ, SS and QS terms.
struct LossWeights {
  double alpha = 0.005;  // QQ
  double beta = 1.0;     // SQ
  double gamma = 1.0;    // SS
  double delta = 0.005;  // QS

  double of(Scenario s) const;
  /// All >= 0 and not all zero.
  void validate() const;
  std::string str() const;  // "a-b-c-d"
  static LossWeights parse(const std::string& s);  // "a-b-c-d" or "a,b,c,d"
  bool operator==(const LossWeights&) const = default;
};

/// -10 log10((|s|^2 + eps) / (|est - s|^2 + eps))
double loss_uniform(std::span<const double> est, std::span<const double> ref);
/// -10 log10(|s|^2 / (|est - s|^2 + eps) + eps)
double loss_sdr(std::span<const double> est, std::span<const double> ref);
/// 10 log10(|est|^2 + eps)
double loss_energy(std::span<const double> est);
/// Weighted sum over scenario kinds present in `track`; samples of one kind
/// are concatenated across the clip before the kind's loss is applied.
double loss_differentiated(std::span<const double> est, std::span<const double> ref,
                           const ScenarioTrack& track, const LossWeights& w);

// Graph forms. `est` is a rank-1 tensor; references are constants.
ad::Tensor loss_uniform(const ad::Tensor& est, std::span<const double> ref);
ad::Tensor loss_sdr(const ad::Tensor& est, std::span<const double> ref);
ad::Tensor loss_energy(const ad::Tensor& est);
ad::Tensor loss_differentiated(const ad::Tensor& est, std::span<const double> ref,
                               const ScenarioTrack& track, const LossWeights& w);

}  // namespace usev
