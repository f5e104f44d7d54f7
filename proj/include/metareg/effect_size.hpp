#pragma once

#include <metareg/error.hpp>

#include <cmath>
#include <string>

namespace metareg {

struct GroupSummary {
  double mean = 0.0;
  double sd = 0.0;
  int n = 0;
};

/// Bias-corrected standardized mean difference and its approximate
/// sampling variance.
struct EffectEstimate {
  double y = 0.0;          // corrected SMD
  double v = 0.0;          // sampling variance of y
  double g = 0.0;          // uncorrected Hedges' g
  double correction = 1.0; // small-sample factor J
};

/// J = 1 - 3 / (4N - 9), N the total sample size.
inline double hedges_correction(int total_n) {
  return 1.0 - 3.0 / (4.0 * total_n - 9.0);
}

inline EffectEstimate hedges_smd(const GroupSummary &exp,
                                 const GroupSummary &ctl) {
  if (exp.n < 2 || ctl.n < 2)
    throw ValidationError("group sizes must be at least 2");
  if (exp.sd < 0.0 || ctl.sd < 0.0)
    throw ValidationError("standard deviations must be non-negative");
  const double ne = exp.n;
  const double nc = ctl.n;
  const double pooled =
      ((ne - 1.0) * exp.sd * exp.sd + (nc - 1.0) * ctl.sd * ctl.sd) /
      (ne + nc - 2.0);
  if (!(pooled > 0.0))
    throw ValidationError("zero pooled variance");

  EffectEstimate out;
  out.g = (exp.mean - ctl.mean) / std::sqrt(pooled);
  out.correction = hedges_correction(exp.n + ctl.n);
  out.y = out.correction * out.g;
  out.v = 1.0 / ne + 1.0 / nc + out.y * out.y / (2.0 * (ne + nc));
  return out;
}

} // namespace metareg
