#pragma once

#include <cstddef>
#include <cstdio>
#include <string>

namespace sidefx {

struct PRF {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;

  // Zero when there is nothing to divide by.
  double precision() const { return tp + fp == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp); }
  double recall() const { return tp + fn == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn); }
  double f1() const {
    const double p = precision(), r = recall();
    return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
  }

  PRF& operator+=(const PRF& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }
};

// "P=0.64, R=0.64, F1=0.64"
inline std::string format_prf(const PRF& m) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "P=%.2f, R=%.2f, F1=%.2f", m.precision(), m.recall(), m.f1());
  return buf;
}

}  // namespace sidefx
