#pragma once

#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bilevel/data.hpp"
#include "bilevel/param_vector.hpp"
#include "bilevel/rng.hpp"

namespace bilevel {

enum class Split { kTrain, kVal };

enum class LossKind { kCrossEntropy, kMeanSquaredError };

enum class Paradigm { kMetaInit, kMetaFeature };

std::span<const Example> examples(const TaskDataset& task, Split split);

// Applied to y on the training split only; the validation loss is never
// regularized. L1 uses sign(0) = 0.
struct Regularizer {
  enum class Kind { kNone, kL1, kL2 };

  Kind kind = Kind::kNone;
  double coef = 0.0;

  static Regularizer none() { return {}; }
  static Regularizer l1(double coef);
  static Regularizer l2(double coef);

  double value(const ParamVector& y) const;
  void add_grad(const ParamVector& y, ParamVector& grad) const;
  void add_hvp(const ParamVector& v, ParamVector& out) const;
};

// Oracle bundle for one bilevel problem. `value` on Split::kTrain is the
// lower-level objective f, on Split::kVal the per-task upper-level loss.
// The x passed in may carry more segments than meta_layout(); gradients with
// respect to x always come back in x's own layout with foreign segments zero.
class BilevelObjective {
 public:
  virtual ~BilevelObjective() = default;

  virtual std::string name() const = 0;
  virtual const Layout& y_layout() const = 0;
  // Segments of x read directly by the loss.
  virtual const Layout& meta_layout() const = 0;
  // True when hvp_yy and cross_hvp are analytic rather than finite differences.
  virtual bool exact_hvp() const = 0;

  virtual double value(const ParamVector& x, const ParamVector& y, const TaskDataset& task,
                       Split split) const = 0;
  virtual ParamVector grad_y(const ParamVector& x, const ParamVector& y, const TaskDataset& task,
                             Split split) const = 0;
  virtual ParamVector grad_x(const ParamVector& x, const ParamVector& y, const TaskDataset& task,
                             Split split) const = 0;
  // Hessian of the loss in y applied to v (layout of y).
  virtual ParamVector hvp_yy(const ParamVector& x, const ParamVector& y, const TaskDataset& task,
                             Split split, const ParamVector& v) const = 0;
  // Gradient with respect to x of <grad_y loss(x, y), v> (layout of x).
  virtual ParamVector cross_hvp(const ParamVector& x, const ParamVector& y,
                                const TaskDataset& task, Split split,
                                const ParamVector& v) const = 0;

  // Fraction of correctly classified examples, for classifiers.
  virtual std::optional<double> accuracy(const ParamVector& x, const ParamVector& y,
                                         const TaskDataset& task, Split split) const;

  // Draws the problem's own meta segments inside a full x.
  virtual void init_meta(ParamVector& x, RngStream& rng) const;

  void check_layouts(const ParamVector& x, const ParamVector& y, std::string_view context) const;
};

using ProblemPtr = std::shared_ptr<const BilevelObjective>;

// f(x, y) on the task's training split, including the regularizer.
double eval_f(const BilevelObjective& problem, const ParamVector& x, const ParamVector& y,
              const TaskDataset& task);

// Mean validation loss over the batch (no regularizer).
double eval_F_batch(const BilevelObjective& problem, const ParamVector& x,
                    const std::vector<ParamVector>& ys, const TaskBatch& batch);

// f = 1/2 ||y - A x||^2 + lam/2 ||y||^2,  F = 1/2 ||y - b||^2. Data splits are
// ignored; x lives in segment "feat", y in segment "y".
struct QuadraticSpec {
  std::vector<double> a;  // row-major, rows = b.size()
  std::size_t cols = 0;
  double lam = 1.0;
  std::vector<double> b;

  // A = a * I with the dimension of b.
  static QuadraticSpec scalar(double a, double lam, std::vector<double> b);
};

ProblemPtr make_quadratic(const QuadraticSpec& spec);

// x is a dim_feat x dim_in linear feature map (segment "feat"); y is a softmax
// head with segments "weights" (way x dim_feat) and "bias" (way).
ProblemPtr make_meta_feature_softmax(std::size_t dim_in, std::size_t dim_feat, std::size_t way,
                                     Regularizer reg);

// y holds every MLP weight (tanh hidden layer). hidden = 0 gives a purely
// linear model with segments "w" and "b"; otherwise "w1", "b1", "w2", "b2".
// The loss never reads x, and second-order products use finite differences.
ProblemPtr make_meta_init_mlp(std::size_t dim_in, std::size_t hidden, std::size_t dim_out,
                              LossKind loss, Regularizer reg);

}  // namespace bilevel
