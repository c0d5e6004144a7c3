#include <algorithm>
#include <cmath>

#include "bilevel/error.hpp"
#include "bilevel/finite_diff.hpp"
#include "bilevel/objectives.hpp"

namespace bilevel {

namespace {

class MlpProblem final : public BilevelObjective {
 public:
  MlpProblem(std::size_t dim_in, std::size_t hidden, std::size_t dim_out, LossKind loss,
             Regularizer reg)
      : dim_in_(dim_in),
        hidden_(hidden),
        dim_out_(dim_out),
        loss_(loss),
        reg_(reg),
        y_layout_(hidden == 0 ? Layout({{"w", dim_out * dim_in}, {"b", dim_out}})
                              : Layout({{"w1", hidden * dim_in},
                                        {"b1", hidden},
                                        {"w2", dim_out * hidden},
                                        {"b2", dim_out}})) {}

  std::string name() const override { return hidden_ == 0 ? "linear" : "mlp"; }
  const Layout& y_layout() const override { return y_layout_; }
  const Layout& meta_layout() const override { return meta_layout_; }
  bool exact_hvp() const override { return false; }

  double value(const ParamVector&, const ParamVector& y, const TaskDataset& task,
               Split split) const override {
    const auto data = examples(task, split);
    double acc = 0.0;
    for (const Example& ex : data) {
      const Forward fw = forward(y, ex);
      if (loss_ == LossKind::kCrossEntropy) {
        acc += log_sum_exp(fw.out) - fw.out[ex.label];
      } else {
        for (std::size_t k = 0; k < dim_out_; ++k) {
          const double r = fw.out[k] - target(ex, k);
          acc += 0.5 * r * r;
        }
      }
    }
    double v = data.empty() ? 0.0 : acc / static_cast<double>(data.size());
    if (split == Split::kTrain) v += reg_.value(y);
    return v;
  }

  ParamVector grad_y(const ParamVector&, const ParamVector& y, const TaskDataset& task,
                     Split split) const override {
    return loss_grad(y, task, split);
  }

  ParamVector grad_x(const ParamVector& x, const ParamVector&, const TaskDataset&,
                     Split) const override {
    return ParamVector::zeros_like(x);
  }

  ParamVector hvp_yy(const ParamVector&, const ParamVector& y, const TaskDataset& task,
                     Split split, const ParamVector& v) const override {
    require_same_layout(y, v, "mlp hvp_yy");
    return fd_hvp([&](const ParamVector& p) { return loss_grad(p, task, split); }, y, v);
  }

  ParamVector cross_hvp(const ParamVector& x, const ParamVector&, const TaskDataset&, Split,
                        const ParamVector&) const override {
    return ParamVector::zeros_like(x);
  }

  std::optional<double> accuracy(const ParamVector&, const ParamVector& y, const TaskDataset& task,
                                 Split split) const override {
    const auto data = examples(task, split);
    if (data.empty()) return std::nullopt;
    std::size_t correct = 0;
    for (const Example& ex : data) {
      const Forward fw = forward(y, ex);
      const auto best = std::max_element(fw.out.begin(), fw.out.end()) - fw.out.begin();
      correct += static_cast<std::size_t>(best) == ex.label;
    }
    return static_cast<double>(correct) / static_cast<double>(data.size());
  }

 private:
  struct Forward {
    std::vector<double> hidden;  // tanh activations (empty for the linear model)
    std::vector<double> out;
  };

  static double log_sum_exp(const std::vector<double>& z) {
    const double m = *std::max_element(z.begin(), z.end());
    double s = 0.0;
    for (double v : z) s += std::exp(v - m);
    return m + std::log(s);
  }

  // One-hot regression target for MSE.
  static double target(const Example& ex, std::size_t k) { return k == ex.label ? 1.0 : 0.0; }

  const std::vector<double>& input(const Example& ex) const {
    if (ex.features.size() != dim_in_) {
      throw Error(ErrorCode::kLayoutMismatch, "mlp: example has " + std::to_string(ex.features.size()) +
                                                  " features, expected " + std::to_string(dim_in_));
    }
    if (ex.label >= dim_out_) throw Error(ErrorCode::kInvalidArgument, "mlp: label out of range");
    return ex.features;
  }

  Forward forward(const ParamVector& y, const Example& ex) const {
    const auto& z = input(ex);
    Forward fw;
    if (hidden_ == 0) {
      dense(y.segment("w"), y.segment("b"), z, fw.out);
      return fw;
    }
    dense(y.segment("w1"), y.segment("b1"), z, fw.hidden);
    for (double& h : fw.hidden) h = std::tanh(h);
    dense(y.segment("w2"), y.segment("b2"), fw.hidden, fw.out);
    return fw;
  }

  static void dense(std::span<const double> w, std::span<const double> b,
                    const std::vector<double>& in, std::vector<double>& out) {
    out.assign(b.begin(), b.end());
    for (std::size_t r = 0; r < out.size(); ++r) {
      for (std::size_t c = 0; c < in.size(); ++c) out[r] += w[r * in.size() + c] * in[c];
    }
  }

  static void dense_backward(std::span<double> gw, std::span<double> gb, const std::vector<double>& in,
                             const std::vector<double>& dout, double scale) {
    for (std::size_t r = 0; r < dout.size(); ++r) {
      gb[r] += scale * dout[r];
      for (std::size_t c = 0; c < in.size(); ++c) gw[r * in.size() + c] += scale * dout[r] * in[c];
    }
  }

  ParamVector loss_grad(const ParamVector& y, const TaskDataset& task, Split split) const {
    ParamVector g = ParamVector::zeros_like(y);
    const auto data = examples(task, split);
    const double inv_n = data.empty() ? 0.0 : 1.0 / static_cast<double>(data.size());
    for (const Example& ex : data) {
      const Forward fw = forward(y, ex);
      std::vector<double> dout(dim_out_);
      if (loss_ == LossKind::kCrossEntropy) {
        const double lse = log_sum_exp(fw.out);
        for (std::size_t k = 0; k < dim_out_; ++k) dout[k] = std::exp(fw.out[k] - lse) - target(ex, k);
      } else {
        for (std::size_t k = 0; k < dim_out_; ++k) dout[k] = fw.out[k] - target(ex, k);
      }
      if (hidden_ == 0) {
        dense_backward(g.segment("w"), g.segment("b"), ex.features, dout, inv_n);
        continue;
      }
      dense_backward(g.segment("w2"), g.segment("b2"), fw.hidden, dout, inv_n);
      const auto w2 = y.segment("w2");
      std::vector<double> dpre(hidden_, 0.0);
      for (std::size_t k = 0; k < dim_out_; ++k) {
        for (std::size_t h = 0; h < hidden_; ++h) dpre[h] += w2[k * hidden_ + h] * dout[k];
      }
      for (std::size_t h = 0; h < hidden_; ++h) dpre[h] *= 1.0 - fw.hidden[h] * fw.hidden[h];
      dense_backward(g.segment("w1"), g.segment("b1"), ex.features, dpre, inv_n);
    }
    if (split == Split::kTrain) reg_.add_grad(y, g);
    return g;
  }

  std::size_t dim_in_;
  std::size_t hidden_;
  std::size_t dim_out_;
  LossKind loss_;
  Regularizer reg_;
  Layout y_layout_;
  Layout meta_layout_;
};

}  // namespace

ProblemPtr make_meta_init_mlp(std::size_t dim_in, std::size_t hidden, std::size_t dim_out,
                              LossKind loss, Regularizer reg) {
  if (dim_in < 1 || dim_out < 1) {
    throw Error(ErrorCode::kInvalidArgument, "mlp: dim_in and dim_out must be >= 1");
  }
  return std::make_shared<MlpProblem>(dim_in, hidden, dim_out, loss, reg);
}

}  // namespace bilevel
