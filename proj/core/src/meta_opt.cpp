#include "bilevel/meta_opt.hpp"

#include <cmath>

#include "bilevel/error.hpp"

namespace bilevel {

namespace {

void check(bool ok, const char* message) {
  if (!ok) throw Error(ErrorCode::kInvalidArgument, message);
}

}  // namespace

void validate(const MetaOptimizerSpec& spec) {
  if (const auto* s = std::get_if<SgdSpec>(&spec)) {
    check(s->lr > 0.0, "sgd: lr must be > 0");
  } else if (const auto* m = std::get_if<MomentumSpec>(&spec)) {
    check(m->lr > 0.0, "momentum: lr must be > 0");
    check(m->mu >= 0.0 && m->mu < 1.0, "momentum: mu must lie in [0, 1)");
  } else if (const auto* a = std::get_if<AdamSpec>(&spec)) {
    check(a->lr > 0.0, "adam: lr must be > 0");
    check(a->beta1 >= 0.0 && a->beta1 < 1.0, "adam: beta1 must lie in [0, 1)");
    check(a->beta2 >= 0.0 && a->beta2 < 1.0, "adam: beta2 must lie in [0, 1)");
    check(a->eps_hat > 0.0, "adam: eps_hat must be > 0");
  }
}

std::string describe(const MetaOptimizerSpec& spec) {
  switch (spec.index()) {
    case 0: return "sgd";
    case 1: return "momentum";
    default: return "adam";
  }
}

MetaOptimizer::MetaOptimizer(MetaOptimizerSpec spec) : spec_(spec) { validate(spec_); }

void MetaOptimizer::ensure_state(const ParamVector& x) {
  if (step_count_ == 0 && first_.size() == 0 && x.size() != 0) {
    first_ = ParamVector::zeros_like(x);
    second_ = ParamVector::zeros_like(x);
  }
  if (!first_.same_layout(x)) {
    throw Error(ErrorCode::kLayoutMismatch, "meta optimizer state does not match the layout of x");
  }
}

ParamVector MetaOptimizer::step(const ParamVector& x, const ParamVector& g) {
  require_same_layout(x, g, "meta_step");
  require_finite(g, "meta_step gradient");
  ensure_state(x);

  ParamVector next = x;
  if (const auto* s = std::get_if<SgdSpec>(&spec_)) {
    next.axpy(-s->lr, g);
  } else if (const auto* m = std::get_if<MomentumSpec>(&spec_)) {
    first_ *= m->mu;
    first_ += g;
    next.axpy(-m->lr, first_);
  } else if (const auto* a = std::get_if<AdamSpec>(&spec_)) {
    const double t = static_cast<double>(step_count_ + 1);
    const double c1 = 1.0 - std::pow(a->beta1, t);
    const double c2 = 1.0 - std::pow(a->beta2, t);
    for (std::size_t i = 0; i < x.size(); ++i) {
      first_[i] = a->beta1 * first_[i] + (1.0 - a->beta1) * g[i];
      second_[i] = a->beta2 * second_[i] + (1.0 - a->beta2) * g[i] * g[i];
      const double m_hat = first_[i] / c1;
      const double v_hat = second_[i] / c2;
      next[i] -= a->lr * m_hat / (std::sqrt(v_hat) + a->eps_hat);
    }
  }
  ++step_count_;
  require_finite(next, "meta_step");
  return next;
}

}  // namespace bilevel
