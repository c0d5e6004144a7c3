#include "bilevel/objectives.hpp"

#include <cmath>

#include "bilevel/error.hpp"

namespace bilevel {

std::span<const Example> examples(const TaskDataset& task, Split split) {
  return split == Split::kTrain ? std::span<const Example>(task.train)
                                : std::span<const Example>(task.val);
}

Regularizer Regularizer::l1(double coef) {
  if (!(coef >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "L1 coefficient must be >= 0");
  return {Kind::kL1, coef};
}

Regularizer Regularizer::l2(double coef) {
  if (!(coef >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "L2 coefficient must be >= 0");
  return {Kind::kL2, coef};
}

double Regularizer::value(const ParamVector& y) const {
  double acc = 0.0;
  switch (kind) {
    case Kind::kNone:
      return 0.0;
    case Kind::kL1:
      for (double v : y.values()) acc += std::abs(v);
      return coef * acc;
    case Kind::kL2:
      for (double v : y.values()) acc += v * v;
      return 0.5 * coef * acc;
  }
  return 0.0;
}

void Regularizer::add_grad(const ParamVector& y, ParamVector& grad) const {
  auto g = grad.values();
  auto vals = y.values();
  switch (kind) {
    case Kind::kNone:
      return;
    case Kind::kL1:
      for (std::size_t i = 0; i < g.size(); ++i) {
        g[i] += coef * static_cast<double>((vals[i] > 0.0) - (vals[i] < 0.0));
      }
      return;
    case Kind::kL2:
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += coef * vals[i];
      return;
  }
}

void Regularizer::add_hvp(const ParamVector& v, ParamVector& out) const {
  // L1 has zero curvature away from the kinks.
  if (kind == Kind::kL2) out.axpy(coef, v);
}

std::optional<double> BilevelObjective::accuracy(const ParamVector&, const ParamVector&,
                                                 const TaskDataset&, Split) const {
  return std::nullopt;
}

void BilevelObjective::init_meta(ParamVector&, RngStream&) const {}

void BilevelObjective::check_layouts(const ParamVector& x, const ParamVector& y,
                                     std::string_view context) const {
  require_layout(y, y_layout(), context);
  for (const Segment& s : meta_layout().segments()) {
    const Segment* found = x.layout().find(s.name);
    if (found == nullptr) {
      throw Error(ErrorCode::kLayoutMismatch,
                  std::string(context) + ": x lacks meta segment '" + s.name + "'");
    }
    if (found->length != s.length) {
      throw Error(ErrorCode::kLayoutMismatch,
                  std::string(context) + ": x segment '" + s.name + "' has the wrong length");
    }
  }
}

double eval_f(const BilevelObjective& problem, const ParamVector& x, const ParamVector& y,
              const TaskDataset& task) {
  problem.check_layouts(x, y, "eval_f");
  const double f = problem.value(x, y, task, Split::kTrain);
  require_finite(f, "eval_f");
  return f;
}

double eval_F_batch(const BilevelObjective& problem, const ParamVector& x,
                    const std::vector<ParamVector>& ys, const TaskBatch& batch) {
  if (ys.size() != batch.tasks.size()) {
    throw Error(ErrorCode::kLengthMismatch, "eval_F_batch: " + std::to_string(ys.size()) +
                                                " parameter vectors for " +
                                                std::to_string(batch.tasks.size()) + " tasks");
  }
  if (ys.empty()) throw Error(ErrorCode::kLengthMismatch, "eval_F_batch: empty batch");
  double acc = 0.0;
  for (std::size_t i = 0; i < ys.size(); ++i) {
    problem.check_layouts(x, ys[i], "eval_F_batch");
    acc += problem.value(x, ys[i], batch.tasks[i], Split::kVal);
  }
  const double mean = acc / static_cast<double>(ys.size());
  require_finite(mean, "eval_F_batch");
  return mean;
}

}  // namespace bilevel
