#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace bilevel {

struct Segment {
  std::string name;
  std::size_t offset = 0;
  std::size_t length = 0;

  bool operator==(const Segment&) const = default;
};

// Ordered, contiguous, non-overlapping named segments covering [0, size()).
class Layout {
 public:
  Layout() = default;

  // Segments are laid out back to back in the given order.
  explicit Layout(const std::vector<std::pair<std::string, std::size_t>>& segments);

  // Validates an explicit table (used when reading serialized vectors).
  static Layout from_segments(std::vector<Segment> segments);

  std::size_t size() const noexcept { return size_; }
  const std::vector<Segment>& segments() const noexcept { return segments_; }

  const Segment* find(std::string_view name) const noexcept;
  const Segment& at(std::string_view name) const;
  bool has(std::string_view name) const noexcept { return find(name) != nullptr; }

  Layout appended(std::string name, std::size_t length) const;

  bool operator==(const Layout& other) const { return segments_ == other.segments_; }

 private:
  std::vector<Segment> segments_;
  std::size_t size_ = 0;
};

// Flat dense vector of doubles with a shared immutable layout. Arithmetic
// between two vectors requires identical layouts.
class ParamVector {
 public:
  ParamVector();
  explicit ParamVector(Layout layout, double fill = 0.0);
  ParamVector(std::shared_ptr<const Layout> layout, std::vector<double> values);

  static ParamVector zeros_like(const ParamVector& other);

  const Layout& layout() const noexcept { return *layout_; }
  const std::shared_ptr<const Layout>& layout_ptr() const noexcept { return layout_; }
  std::size_t size() const noexcept { return values_.size(); }

  std::span<double> values() noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }
  const std::vector<double>& raw() const noexcept { return values_; }

  std::span<double> segment(std::string_view name);
  std::span<const double> segment(std::string_view name) const;

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  bool same_layout(const ParamVector& other) const noexcept;

  ParamVector& operator+=(const ParamVector& other);
  ParamVector& operator-=(const ParamVector& other);
  ParamVector& operator*=(double scale);
  // this += alpha * other
  ParamVector& axpy(double alpha, const ParamVector& other);
  void set_zero();

 private:
  std::shared_ptr<const Layout> layout_;
  std::vector<double> values_;
};

ParamVector operator+(ParamVector lhs, const ParamVector& rhs);
ParamVector operator-(ParamVector lhs, const ParamVector& rhs);
ParamVector operator*(double scale, ParamVector v);
ParamVector hadamard(ParamVector lhs, const ParamVector& rhs);

double dot(const ParamVector& a, const ParamVector& b);
double norm(const ParamVector& v);
double norm_inf(const ParamVector& v);
bool all_finite(const ParamVector& v) noexcept;

// Throw LayoutMismatch / NonFiniteValue with `context` in the message.
void require_same_layout(const ParamVector& a, const ParamVector& b, std::string_view context);
void require_layout(const ParamVector& v, const Layout& expected, std::string_view context);
void require_finite(const ParamVector& v, std::string_view context);
void require_finite(double value, std::string_view context);

// ||a - b|| / max(||b||, floor)
double relative_error(const ParamVector& a, const ParamVector& b, double floor = 1e-12);
double max_abs_diff(const ParamVector& a, const ParamVector& b);

}  // namespace bilevel
