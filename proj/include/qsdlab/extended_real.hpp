#pragma once

#include <cmath>
#include <compare>
#include <limits>
#include <ostream>
#include <stdexcept>

namespace qsdlab {

// Value in [0, +inf] (or any real plus +inf). +inf is a legitimate result of a rate
// function, not an overflow sentinel; NaN and -inf are rejected at construction.
class ExtendedReal {
 public:
  constexpr ExtendedReal() = default;
  explicit ExtendedReal(double v) : v_(v) {
    if (std::isnan(v) || v == -std::numeric_limits<double>::infinity())
      throw std::invalid_argument("ExtendedReal: NaN or -inf");
  }
  static ExtendedReal infinity() { return ExtendedReal(std::numeric_limits<double>::infinity()); }

  bool is_infinite() const { return std::isinf(v_); }
  bool is_finite() const { return !std::isinf(v_); }
  double value() const { return v_; }

  ExtendedReal& operator+=(ExtendedReal o) {
    v_ = (is_infinite() || o.is_infinite()) ? std::numeric_limits<double>::infinity() : v_ + o.v_;
    return *this;
  }
  friend ExtendedReal operator+(ExtendedReal a, ExtendedReal b) { return a += b; }
  friend auto operator<=>(ExtendedReal a, ExtendedReal b) { return a.v_ <=> b.v_; }
  friend bool operator==(ExtendedReal a, ExtendedReal b) { return a.v_ == b.v_; }

  friend std::ostream& operator<<(std::ostream& os, ExtendedReal e) {
    return e.is_infinite() ? (os << "inf") : (os << e.v_);
  }

 private:
  double v_ = 0.0;
};

}  // namespace qsdlab
