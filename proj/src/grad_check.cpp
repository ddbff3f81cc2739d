#include "fpam/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace fpam {

double grad_check(const std::function<Tensor()>& loss_fn, std::vector<Tensor> wrt, double eps) {
  for (auto& t : wrt) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  const Tensor loss = loss_fn();
  if (!std::isfinite(static_cast<double>(loss.item()))) throw NumericError("grad_check: loss is not finite");
  backward(loss);

  double worst = 0;
  NoGradGuard no_grad;
  for (std::size_t k = 0; k < wrt.size(); ++k) {
    auto& t = wrt[k];
    std::vector<Real> analytic(t.numel(), Real(0));
    if (t.has_grad()) std::copy(t.grad().begin(), t.grad().end(), analytic.begin());
    auto values = t.mutable_values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const Real saved = values[i];
      values[i] = saved + static_cast<Real>(eps);
      const double plus = loss_fn().item();
      values[i] = saved - static_cast<Real>(eps);
      const double minus = loss_fn().item();
      values[i] = saved;
      const double numeric = (plus - minus) / (2 * eps);
      const double a = analytic[i];
      if (!std::isfinite(numeric) || !std::isfinite(a)) {
        throw NumericError("grad_check: non-finite gradient at tensor " + std::to_string(k) + " element " +
                           std::to_string(i));
      }
      const double rel = std::abs(a - numeric) / (std::max(std::abs(a), std::abs(numeric)) + 1e-8);
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

}  // namespace fpam
