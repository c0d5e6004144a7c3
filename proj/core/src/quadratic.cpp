#include <algorithm>
#include <cmath>

#include "bilevel/error.hpp"
#include "bilevel/objectives.hpp"

namespace bilevel {

QuadraticSpec QuadraticSpec::scalar(double a, double lam, std::vector<double> b) {
  QuadraticSpec spec;
  const std::size_t n = b.size();
  spec.a.assign(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) spec.a[i * n + i] = a;
  spec.cols = n;
  spec.lam = lam;
  spec.b = std::move(b);
  return spec;
}

namespace {

class QuadraticProblem final : public BilevelObjective {
 public:
  explicit QuadraticProblem(QuadraticSpec spec)
      : spec_(std::move(spec)),
        y_layout_({{"y", spec_.b.size()}}),
        meta_layout_({{"feat", spec_.cols}}) {}

  std::string name() const override { return "quadratic"; }
  const Layout& y_layout() const override { return y_layout_; }
  const Layout& meta_layout() const override { return meta_layout_; }
  bool exact_hvp() const override { return true; }

  double value(const ParamVector& x, const ParamVector& y, const TaskDataset&,
               Split split) const override {
    double acc = 0.0;
    if (split == Split::kTrain) {
      const std::vector<double> r = residual(x, y);
      for (std::size_t i = 0; i < r.size(); ++i) acc += r[i] * r[i] + spec_.lam * y[i] * y[i];
    } else {
      for (std::size_t i = 0; i < y.size(); ++i) acc += (y[i] - spec_.b[i]) * (y[i] - spec_.b[i]);
    }
    return 0.5 * acc;
  }

  ParamVector grad_y(const ParamVector& x, const ParamVector& y, const TaskDataset&,
                     Split split) const override {
    ParamVector g = ParamVector::zeros_like(y);
    if (split == Split::kTrain) {
      const std::vector<double> r = residual(x, y);
      for (std::size_t i = 0; i < r.size(); ++i) g[i] = r[i] + spec_.lam * y[i];
    } else {
      for (std::size_t i = 0; i < y.size(); ++i) g[i] = y[i] - spec_.b[i];
    }
    return g;
  }

  ParamVector grad_x(const ParamVector& x, const ParamVector& y, const TaskDataset&,
                     Split split) const override {
    ParamVector g = ParamVector::zeros_like(x);
    if (split == Split::kTrain) {
      std::vector<double> r = residual(x, y);
      for (double& v : r) v = -v;
      apply_at(r, g.segment("feat"));
    }
    return g;
  }

  ParamVector hvp_yy(const ParamVector&, const ParamVector&, const TaskDataset&, Split split,
                     const ParamVector& v) const override {
    ParamVector out = v;
    if (split == Split::kTrain) out *= 1.0 + spec_.lam;
    return out;
  }

  ParamVector cross_hvp(const ParamVector& x, const ParamVector&, const TaskDataset&, Split split,
                        const ParamVector& v) const override {
    ParamVector out = ParamVector::zeros_like(x);
    if (split == Split::kTrain) {
      std::vector<double> neg(v.values().begin(), v.values().end());
      for (double& e : neg) e = -e;
      apply_at(neg, out.segment("feat"));
    }
    return out;
  }

 private:
  // y - A x
  std::vector<double> residual(const ParamVector& x, const ParamVector& y) const {
    const auto feat = x.segment("feat");
    std::vector<double> r(y.values().begin(), y.values().end());
    for (std::size_t i = 0; i < r.size(); ++i) {
      for (std::size_t j = 0; j < spec_.cols; ++j) r[i] -= spec_.a[i * spec_.cols + j] * feat[j];
    }
    return r;
  }

  // out = A^T u
  void apply_at(const std::vector<double>& u, std::span<double> out) const {
    for (std::size_t i = 0; i < u.size(); ++i) {
      for (std::size_t j = 0; j < spec_.cols; ++j) out[j] += spec_.a[i * spec_.cols + j] * u[i];
    }
  }

  QuadraticSpec spec_;
  Layout y_layout_;
  Layout meta_layout_;
};

}  // namespace

ProblemPtr make_quadratic(const QuadraticSpec& spec) {
  if (!(spec.lam > 0.0)) throw Error(ErrorCode::kInvalidArgument, "quadratic: lam must be > 0");
  if (spec.b.empty() || spec.cols == 0) {
    throw Error(ErrorCode::kInvalidArgument, "quadratic: dimensions must be >= 1");
  }
  if (spec.a.size() != spec.b.size() * spec.cols) {
    throw Error(ErrorCode::kInvalidArgument, "quadratic: A must have b.size() x cols entries");
  }
  const bool finite = std::all_of(spec.a.begin(), spec.a.end(), [](double v) { return std::isfinite(v); }) &&
                      std::all_of(spec.b.begin(), spec.b.end(), [](double v) { return std::isfinite(v); });
  if (!finite) throw Error(ErrorCode::kNonFiniteValue, "quadratic: non-finite coefficient");
  return std::make_shared<QuadraticProblem>(spec);
}

}  // namespace bilevel
