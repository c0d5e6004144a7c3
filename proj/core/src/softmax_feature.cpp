#include <algorithm>
#include <cmath>

#include "bilevel/error.hpp"
#include "bilevel/objectives.hpp"

namespace bilevel {

namespace {

void softmax_inplace(std::vector<double>& z) {
  const double m = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (double& v : z) {
    v = std::exp(v - m);
    sum += v;
  }
  for (double& v : z) v /= sum;
}

// (diag(p) - p p^T) d
std::vector<double> softmax_jacobian_apply(const std::vector<double>& p, const std::vector<double>& d) {
  double pd = 0.0;
  for (std::size_t c = 0; c < p.size(); ++c) pd += p[c] * d[c];
  std::vector<double> out(p.size());
  for (std::size_t c = 0; c < p.size(); ++c) out[c] = p[c] * (d[c] - pd);
  return out;
}

class SoftmaxFeatureProblem final : public BilevelObjective {
 public:
  SoftmaxFeatureProblem(std::size_t dim_in, std::size_t dim_feat, std::size_t way, Regularizer reg)
      : dim_in_(dim_in),
        dim_feat_(dim_feat),
        way_(way),
        reg_(reg),
        y_layout_({{"weights", way * dim_feat}, {"bias", way}}),
        meta_layout_({{"feat", dim_feat * dim_in}}) {}

  std::string name() const override { return "softmax_feature"; }
  const Layout& y_layout() const override { return y_layout_; }
  const Layout& meta_layout() const override { return meta_layout_; }
  bool exact_hvp() const override { return true; }

  double value(const ParamVector& x, const ParamVector& y, const TaskDataset& task,
               Split split) const override {
    const auto data = examples(task, split);
    double acc = 0.0;
    for (const Example& ex : data) {
      const Forward fw = forward(x, y, ex);
      acc -= std::log(std::max(fw.prob[ex.label], 1e-300));
    }
    double v = data.empty() ? 0.0 : acc / static_cast<double>(data.size());
    if (split == Split::kTrain) v += reg_.value(y);
    return v;
  }

  ParamVector grad_y(const ParamVector& x, const ParamVector& y, const TaskDataset& task,
                     Split split) const override {
    ParamVector g = ParamVector::zeros_like(y);
    const auto data = examples(task, split);
    auto gw = g.segment("weights");
    auto gb = g.segment("bias");
    const double inv_n = data.empty() ? 0.0 : 1.0 / static_cast<double>(data.size());
    for (const Example& ex : data) {
      const Forward fw = forward(x, y, ex);
      for (std::size_t c = 0; c < way_; ++c) {
        const double d = (fw.prob[c] - (c == ex.label ? 1.0 : 0.0)) * inv_n;
        for (std::size_t f = 0; f < dim_feat_; ++f) gw[c * dim_feat_ + f] += d * fw.feat[f];
        gb[c] += d;
      }
    }
    if (split == Split::kTrain) reg_.add_grad(y, g);
    return g;
  }

  ParamVector grad_x(const ParamVector& x, const ParamVector& y, const TaskDataset& task,
                     Split split) const override {
    ParamVector g = ParamVector::zeros_like(x);
    const auto data = examples(task, split);
    auto gfeat = g.segment("feat");
    const auto head = y.segment("weights");
    const double inv_n = data.empty() ? 0.0 : 1.0 / static_cast<double>(data.size());
    for (const Example& ex : data) {
      const Forward fw = forward(x, y, ex);
      std::vector<double> dfeat(dim_feat_, 0.0);
      for (std::size_t c = 0; c < way_; ++c) {
        const double d = fw.prob[c] - (c == ex.label ? 1.0 : 0.0);
        for (std::size_t f = 0; f < dim_feat_; ++f) dfeat[f] += head[c * dim_feat_ + f] * d;
      }
      accumulate_outer(dfeat, ex.features, inv_n, gfeat);
    }
    return g;
  }

  ParamVector hvp_yy(const ParamVector& x, const ParamVector& y, const TaskDataset& task,
                     Split split, const ParamVector& v) const override {
    require_same_layout(y, v, "softmax_feature hvp_yy");
    ParamVector out = ParamVector::zeros_like(y);
    const auto data = examples(task, split);
    auto ow = out.segment("weights");
    auto ob = out.segment("bias");
    const double inv_n = data.empty() ? 0.0 : 1.0 / static_cast<double>(data.size());
    for (const Example& ex : data) {
      const Forward fw = forward(x, y, ex);
      const std::vector<double> u = softmax_jacobian_apply(fw.prob, head_jvp(v, fw.feat));
      for (std::size_t c = 0; c < way_; ++c) {
        for (std::size_t f = 0; f < dim_feat_; ++f) ow[c * dim_feat_ + f] += u[c] * fw.feat[f] * inv_n;
        ob[c] += u[c] * inv_n;
      }
    }
    if (split == Split::kTrain) reg_.add_hvp(v, out);
    return out;
  }

  // d/dx <grad_y loss, v>: with phi = W z and logits = H phi + c, the inner
  // product per example is (p - e)^T (V_H phi + v_c), whose phi-gradient is
  // V_H^T (p - e) + H^T S (V_H phi + v_c), S = diag(p) - p p^T.
  ParamVector cross_hvp(const ParamVector& x, const ParamVector& y, const TaskDataset& task,
                        Split split, const ParamVector& v) const override {
    require_same_layout(y, v, "softmax_feature cross_hvp");
    ParamVector out = ParamVector::zeros_like(x);
    const auto data = examples(task, split);
    auto ofeat = out.segment("feat");
    const auto head = y.segment("weights");
    const auto vw = v.segment("weights");
    const double inv_n = data.empty() ? 0.0 : 1.0 / static_cast<double>(data.size());
    for (const Example& ex : data) {
      const Forward fw = forward(x, y, ex);
      const std::vector<double> u = softmax_jacobian_apply(fw.prob, head_jvp(v, fw.feat));
      std::vector<double> gphi(dim_feat_, 0.0);
      for (std::size_t c = 0; c < way_; ++c) {
        const double d = fw.prob[c] - (c == ex.label ? 1.0 : 0.0);
        for (std::size_t f = 0; f < dim_feat_; ++f) {
          gphi[f] += vw[c * dim_feat_ + f] * d + head[c * dim_feat_ + f] * u[c];
        }
      }
      accumulate_outer(gphi, ex.features, inv_n, ofeat);
    }
    return out;
  }

  std::optional<double> accuracy(const ParamVector& x, const ParamVector& y,
                                 const TaskDataset& task, Split split) const override {
    const auto data = examples(task, split);
    if (data.empty()) return std::nullopt;
    std::size_t correct = 0;
    for (const Example& ex : data) {
      const Forward fw = forward(x, y, ex);
      const auto best = std::max_element(fw.logits.begin(), fw.logits.end()) - fw.logits.begin();
      correct += static_cast<std::size_t>(best) == ex.label;
    }
    return static_cast<double>(correct) / static_cast<double>(data.size());
  }

  void init_meta(ParamVector& x, RngStream& rng) const override {
    const double sd = 1.0 / std::sqrt(static_cast<double>(dim_in_));
    for (double& w : x.segment("feat")) w = rng.normal(0.0, sd);
  }

 private:
  struct Forward {
    std::vector<double> feat;
    std::vector<double> logits;
    std::vector<double> prob;
  };

  Forward forward(const ParamVector& x, const ParamVector& y, const Example& ex) const {
    if (ex.features.size() != dim_in_) {
      throw Error(ErrorCode::kLayoutMismatch, "softmax_feature: example has " +
                                                  std::to_string(ex.features.size()) +
                                                  " features, expected " + std::to_string(dim_in_));
    }
    if (ex.label >= way_) throw Error(ErrorCode::kInvalidArgument, "softmax_feature: label out of range");
    const auto w = x.segment("feat");
    const auto head = y.segment("weights");
    const auto bias = y.segment("bias");
    Forward fw;
    fw.feat.assign(dim_feat_, 0.0);
    for (std::size_t f = 0; f < dim_feat_; ++f) {
      for (std::size_t i = 0; i < dim_in_; ++i) fw.feat[f] += w[f * dim_in_ + i] * ex.features[i];
    }
    fw.logits.assign(bias.begin(), bias.end());
    for (std::size_t c = 0; c < way_; ++c) {
      for (std::size_t f = 0; f < dim_feat_; ++f) fw.logits[c] += head[c * dim_feat_ + f] * fw.feat[f];
    }
    fw.prob = fw.logits;
    softmax_inplace(fw.prob);
    return fw;
  }

  // V_H phi + v_c
  std::vector<double> head_jvp(const ParamVector& v, const std::vector<double>& feat) const {
    const auto vw = v.segment("weights");
    const auto vb = v.segment("bias");
    std::vector<double> d(vb.begin(), vb.end());
    for (std::size_t c = 0; c < way_; ++c) {
      for (std::size_t f = 0; f < dim_feat_; ++f) d[c] += vw[c * dim_feat_ + f] * feat[f];
    }
    return d;
  }

  void accumulate_outer(const std::vector<double>& u, const std::vector<double>& z, double scale,
                        std::span<double> out) const {
    for (std::size_t f = 0; f < dim_feat_; ++f) {
      for (std::size_t i = 0; i < dim_in_; ++i) out[f * dim_in_ + i] += scale * u[f] * z[i];
    }
  }

  std::size_t dim_in_;
  std::size_t dim_feat_;
  std::size_t way_;
  Regularizer reg_;
  Layout y_layout_;
  Layout meta_layout_;
};

}  // namespace

ProblemPtr make_meta_feature_softmax(std::size_t dim_in, std::size_t dim_feat, std::size_t way,
                                     Regularizer reg) {
  if (dim_in < 1 || dim_feat < 1 || way < 1) {
    throw Error(ErrorCode::kInvalidArgument, "softmax_feature: dimensions must be >= 1");
  }
  return std::make_shared<SoftmaxFeatureProblem>(dim_in, dim_feat, way, reg);
}

}  // namespace bilevel
