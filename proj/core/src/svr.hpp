#pragma once

#include <span>
#include <vector>

#include "handstate/models.hpp"
#include "nn.hpp"

namespace handstate::detail {

/// x is d x N, one sample per column.
SvrDual solve_svr(const Mat& x, std::span<const double> y, const SvrParams& p);

/// sklearn's gamma="scale": 1 / (d * Var(x)) over all entries, 1 if Var is 0.
double scale_gamma(const Mat& x);

/// One target's decision function: sum_k coef_k K(sv_k, x) + bias.
struct SvrTerm {
  double bias = 0.0;
  Vec coef;
  Mat support;  // d x n_sv
  Vec support_sq;

  double eval(const Vec& x, double gamma) const;
};

/// Unpacks the two targets' terms from a trained parameter array.
std::array<SvrTerm, 2> unpack_svr(const ModelState& m);

}  // namespace handstate::detail
