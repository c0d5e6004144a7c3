#include "bilevel/param_vector.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "bilevel/error.hpp"

namespace bilevel {

namespace {

const std::shared_ptr<const Layout>& empty_layout() {
  static const auto layout = std::make_shared<const Layout>();
  return layout;
}

}  // namespace

Layout::Layout(const std::vector<std::pair<std::string, std::size_t>>& segments) {
  std::set<std::string, std::less<>> seen;
  for (const auto& [name, length] : segments) {
    if (!seen.insert(name).second) {
      throw Error(ErrorCode::kInvalidArgument, "duplicate segment name '" + name + "'");
    }
    segments_.push_back({name, size_, length});
    size_ += length;
  }
}

Layout Layout::from_segments(std::vector<Segment> segments) {
  std::vector<std::pair<std::string, std::size_t>> pairs;
  std::size_t expected_offset = 0;
  for (const auto& s : segments) {
    if (s.offset != expected_offset) {
      throw Error(ErrorCode::kInvalidArgument,
                  "segment '" + s.name + "' is not contiguous with its predecessor");
    }
    expected_offset += s.length;
    pairs.emplace_back(s.name, s.length);
  }
  return Layout(pairs);
}

const Segment* Layout::find(std::string_view name) const noexcept {
  auto it = std::find_if(segments_.begin(), segments_.end(),
                         [&](const Segment& s) { return s.name == name; });
  return it == segments_.end() ? nullptr : &*it;
}

const Segment& Layout::at(std::string_view name) const {
  if (const Segment* s = find(name)) return *s;
  throw Error(ErrorCode::kMissingSegment, "no segment named '" + std::string(name) + "'");
}

Layout Layout::appended(std::string name, std::size_t length) const {
  std::vector<std::pair<std::string, std::size_t>> pairs;
  for (const auto& s : segments_) pairs.emplace_back(s.name, s.length);
  pairs.emplace_back(std::move(name), length);
  return Layout(pairs);
}

ParamVector::ParamVector() : layout_(empty_layout()) {}

ParamVector::ParamVector(Layout layout, double fill)
    : layout_(std::make_shared<const Layout>(std::move(layout))),
      values_(layout_->size(), fill) {}

ParamVector::ParamVector(std::shared_ptr<const Layout> layout, std::vector<double> values)
    : layout_(layout ? std::move(layout) : empty_layout()), values_(std::move(values)) {
  if (values_.size() != layout_->size()) {
    throw Error(ErrorCode::kLengthMismatch, "value count " + std::to_string(values_.size()) +
                                                " does not match layout size " +
                                                std::to_string(layout_->size()));
  }
}

ParamVector ParamVector::zeros_like(const ParamVector& other) {
  return ParamVector(other.layout_, std::vector<double>(other.size(), 0.0));
}

std::span<double> ParamVector::segment(std::string_view name) {
  const Segment& s = layout_->at(name);
  return std::span<double>(values_).subspan(s.offset, s.length);
}

std::span<const double> ParamVector::segment(std::string_view name) const {
  const Segment& s = layout_->at(name);
  return std::span<const double>(values_).subspan(s.offset, s.length);
}

bool ParamVector::same_layout(const ParamVector& other) const noexcept {
  return layout_ == other.layout_ || *layout_ == *other.layout_;
}

ParamVector& ParamVector::operator+=(const ParamVector& other) { return axpy(1.0, other); }

ParamVector& ParamVector::operator-=(const ParamVector& other) { return axpy(-1.0, other); }

ParamVector& ParamVector::operator*=(double scale) {
  for (double& v : values_) v *= scale;
  return *this;
}

ParamVector& ParamVector::axpy(double alpha, const ParamVector& other) {
  require_same_layout(*this, other, "axpy");
  for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += alpha * other.values_[i];
  return *this;
}

void ParamVector::set_zero() { std::fill(values_.begin(), values_.end(), 0.0); }

ParamVector operator+(ParamVector lhs, const ParamVector& rhs) { return lhs += rhs; }

ParamVector operator-(ParamVector lhs, const ParamVector& rhs) { return lhs -= rhs; }

ParamVector operator*(double scale, ParamVector v) { return v *= scale; }

ParamVector hadamard(ParamVector lhs, const ParamVector& rhs) {
  require_same_layout(lhs, rhs, "hadamard");
  auto out = lhs.values();
  auto in = rhs.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= in[i];
  return lhs;
}

double dot(const ParamVector& a, const ParamVector& b) {
  require_same_layout(a, b, "dot");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

double norm(const ParamVector& v) { return std::sqrt(dot(v, v)); }

double norm_inf(const ParamVector& v) {
  double m = 0.0;
  for (double x : v.values()) m = std::max(m, std::abs(x));
  return m;
}

bool all_finite(const ParamVector& v) noexcept {
  return std::all_of(v.values().begin(), v.values().end(),
                     [](double x) { return std::isfinite(x); });
}

void require_same_layout(const ParamVector& a, const ParamVector& b, std::string_view context) {
  if (!a.same_layout(b)) {
    throw Error(ErrorCode::kLayoutMismatch, std::string(context) + ": operand layouts differ");
  }
}

void require_layout(const ParamVector& v, const Layout& expected, std::string_view context) {
  if (!(v.layout() == expected)) {
    throw Error(ErrorCode::kLayoutMismatch,
                std::string(context) + ": vector does not have the expected layout");
  }
}

void require_finite(const ParamVector& v, std::string_view context) {
  if (!all_finite(v)) {
    throw Error(ErrorCode::kNonFiniteValue, std::string(context) + ": non-finite entry");
  }
}

void require_finite(double value, std::string_view context) {
  if (!std::isfinite(value)) {
    throw Error(ErrorCode::kNonFiniteValue, std::string(context) + ": non-finite value");
  }
}

double relative_error(const ParamVector& a, const ParamVector& b, double floor) {
  return norm(a - b) / std::max(norm(b), floor);
}

double max_abs_diff(const ParamVector& a, const ParamVector& b) { return norm_inf(a - b); }

}  // namespace bilevel
