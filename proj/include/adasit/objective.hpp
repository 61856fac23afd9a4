#pragma once

#include "adasit/data.hpp"
#include "adasit/params.hpp"

#include <span>

namespace adasit {

using SampleBatch = std::span<const EpisodeSample* const>;

/// A differentiable loss over a batch of samples. The meta-learning loop only
/// talks to this interface, so tests can swap in closed-form objectives.
class Objective {
 public:
  virtual ~Objective() = default;

  virtual double loss(const ParamVector& params, SampleBatch batch) const = 0;
  /// Overwrites `grad` with the gradient at `params` and returns the loss.
  virtual double loss_grad(const ParamVector& params, SampleBatch batch, ParamVector& grad) const = 0;
  /// Probability of label 1 for one sample.
  virtual double predict(const ParamVector& params, const EpisodeSample& sample) const = 0;
};

}  // namespace adasit
