#pragma once

#include <cmath>
#include <limits>

namespace gpp {

// Log-space density accumulator. Addition models density multiplication;
// the distinguished impossible value (weight zero) absorbs.
class LogWeight {
public:
  LogWeight() : lw_(0.0) {}
  explicit LogWeight(double lw) : lw_(lw) {}

  static LogWeight zero() { return LogWeight(0.0); }  // density 1
  static LogWeight impossible() {
    return LogWeight(-std::numeric_limits<double>::infinity());
  }

  bool is_impossible() const { return std::isinf(lw_) && lw_ < 0; }
  bool is_finite() const { return std::isfinite(lw_); }
  double log_value() const { return lw_; }

  LogWeight& operator+=(LogWeight o) {
    lw_ = is_impossible() || o.is_impossible()
              ? -std::numeric_limits<double>::infinity()
              : lw_ + o.lw_;
    return *this;
  }
  friend LogWeight operator+(LogWeight a, LogWeight b) { return a += b; }

  friend bool operator==(LogWeight a, LogWeight b) { return a.lw_ == b.lw_; }
  friend bool operator<(LogWeight a, LogWeight b) { return a.lw_ < b.lw_; }
  friend bool operator>(LogWeight a, LogWeight b) { return a.lw_ > b.lw_; }

private:
  double lw_;
};

}  // namespace gpp
