#pragma once

#include <functional>
#include <vector>

#include "fpam/tensor.hpp"

namespace fpam {

// Compares reverse-mode gradients of a scalar `loss_fn` against central
// differences (f(x+eps) - f(x-eps)) / 2eps for every element of every tensor
// in `wrt`. Returns the worst |a - n| / (max(|a|, |n|) + 1e-8). `loss_fn` must
// be pure and deterministic; non-finite values throw NumericError.
double grad_check(const std::function<Tensor()>& loss_fn, std::vector<Tensor> wrt, double eps = 1e-5);

}  // namespace fpam
