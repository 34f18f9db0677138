#pragma once

#include <functional>

#include "dladan/autodiff.hpp"

namespace testutil {

using dladan::Mat;
using dladan::Param;
using dladan::Tape;
using dladan::Var;

// Central finite differences against the tape gradient for every coordinate
// of every parameter. `build` must construct the loss from scratch on the
// given tape, reading current parameter values. Coordinates where both
// gradients sit below the fp noise floor are accepted as matching.
struct GradCheckResult {
  double max_rel_err = 0.0;
  std::string worst;
};

inline GradCheckResult check_gradients(const std::vector<Param*>& params,
                                       const std::function<Var(Tape&)>& build, double h = 1e-6,
                                       double noise_floor = 1e-7) {
  for (Param* p : params) p->zero_grad();
  {
    Tape t;
    t.backward(build(t));
  }
  auto eval = [&]() {
    Tape t;
    return t.val(build(t))(0, 0);
  };
  GradCheckResult res;
  for (Param* p : params) {
    for (size_t i = 0; i < p->value.size(); ++i) {
      double orig = p->value.a[i];
      p->value.a[i] = orig + h;
      double fp = eval();
      p->value.a[i] = orig - h;
      double fm = eval();
      p->value.a[i] = orig;
      double fd = (fp - fm) / (2.0 * h);
      double ad = p->grad.a[i];
      double mag = std::max(std::abs(ad), std::abs(fd));
      // fp roundoff in the central difference is ~1e-10 here; differences
      // below the floor are unresolvable, not disagreements
      if (std::abs(ad - fd) < noise_floor) continue;
      double rel = std::abs(ad - fd) / mag;
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst = p->name + "[" + std::to_string(i) + "] ad=" + std::to_string(ad) +
                    " fd=" + std::to_string(fd);
      }
    }
  }
  return res;
}

inline Mat random_mat(int r, int c, uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  return Mat::uniform(r, c, lo, hi, rng);
}

}  // namespace testutil
