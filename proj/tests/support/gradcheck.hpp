#pragma once

#include <cmath>
#include <functional>

#include "fss/core/autodiff.hpp"

namespace fss::test {

// Central finite differences against the autodiff gradient. The builder must
// rebuild the graph from the current leaf values and return the scalar loss.
struct GradCheckResult {
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  int checked = 0;
};

inline double central_diff(const std::function<fss::Var()>& builder, fss::TensorD& leaf_value,
                           fss::Index coord, double h) {
  const double orig = leaf_value[coord];
  leaf_value[coord] = orig + h;
  const double up = builder()->value.value();
  leaf_value[coord] = orig - h;
  const double dn = builder()->value.value();
  leaf_value[coord] = orig;
  return (up - dn) / (2.0 * h);
}

// Checks d(loss)/d(leaf[coord]) for every coordinate of `leaf` (or a stride
// subset when the tensor is big).
inline GradCheckResult gradcheck_leaf(const std::function<fss::Var()>& builder,
                                      const fss::Var& leaf, double h = 1e-6,
                                      fss::Index stride = 1) {
  auto loss = builder();
  fss::backward(loss);
  GradCheckResult res;
  for (fss::Index i = 0; i < leaf->value.size(); i += stride) {
    const double analytic = leaf->has_grad() ? leaf->grad[i] : 0.0;
    const double numeric = central_diff(builder, leaf->value, i, h);
    const double abs_err = std::abs(analytic - numeric);
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    res.max_abs_err = std::max(res.max_abs_err, abs_err);
    res.max_rel_err = std::max(res.max_rel_err, abs_err / denom);
    ++res.checked;
  }
  return res;
}

}  // namespace fss::test
