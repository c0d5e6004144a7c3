#pragma once

#include <cstddef>
#include <string>
#include <variant>

#include "bilevel/param_vector.hpp"

namespace bilevel {

struct SgdSpec {
  double lr = 1e-2;
};

struct MomentumSpec {
  double lr = 1e-2;
  double mu = 0.9;
};

struct AdamSpec {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps_hat = 1e-8;
};

using MetaOptimizerSpec = std::variant<SgdSpec, MomentumSpec, AdamSpec>;

// Upper-level update rule with its state. State vectors are allocated lazily
// on the first step with the layout of x and stay zero until then.
class MetaOptimizer {
 public:
  explicit MetaOptimizer(MetaOptimizerSpec spec = MomentumSpec{});

  const MetaOptimizerSpec& spec() const noexcept { return spec_; }
  std::size_t step_count() const noexcept { return step_count_; }
  const ParamVector& velocity() const noexcept { return first_; }
  const ParamVector& second_moment() const noexcept { return second_; }

  //   Sgd:      x - lr g
  //   Momentum: v = mu v + g; x - lr v
  //   Adam:     bias-corrected moments, x - lr m_hat / (sqrt(v_hat) + eps_hat)
  ParamVector step(const ParamVector& x, const ParamVector& g);

 private:
  void ensure_state(const ParamVector& x);

  MetaOptimizerSpec spec_;
  ParamVector first_;
  ParamVector second_;
  std::size_t step_count_ = 0;
};

void validate(const MetaOptimizerSpec& spec);
std::string describe(const MetaOptimizerSpec& spec);

}  // namespace bilevel
