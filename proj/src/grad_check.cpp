#include "elm/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "elm/rng.hpp"

namespace elm {

namespace {

double project(const Tensor& out, const std::vector<double>& w) {
  const double* p = out.ptr();
  double acc = 0.0;
  for (size_t i = 0; i < w.size(); ++i) acc += p[i] * w[i];
  return acc;
}

}  // namespace

GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& op, const Tensor& input,
                           double tol, uint64_t seed, double step) {
  Tensor x = input.clone();
  x.requires_grad = true;
  x.grad_ptr();  // allocate before op() copies the handle anywhere

  Tensor y = op(x);
  if (!y.data) throw std::invalid_argument("grad_check: op returned an empty tensor");
  Rng rng(mix_seed(seed, 0x67726164ull));
  std::vector<double> w(static_cast<size_t>(y.numel()));
  for (double& v : w) v = rng.uniform(-1.0, 1.0);

  backward(y, &w);
  std::vector<double> g_ad(static_cast<size_t>(x.numel()), 0.0);
  if (x.has_grad()) g_ad.assign(x.grad->begin(), x.grad->end());

  GradCheckReport rep;
  rep.tolerance = tol;
  double* xv = x.ptr();
  {
    NoGradGuard ng;
    for (int64_t i = 0; i < x.numel(); ++i) {
      const double keep = xv[i];
      xv[i] = keep + step;
      const double fp = project(op(x), w);
      xv[i] = keep - step;
      const double fm = project(op(x), w);
      xv[i] = keep;
      const double fd = (fp - fm) / (2.0 * step);
      const double ad = g_ad[static_cast<size_t>(i)];
      const double denom = std::max({1.0, std::abs(ad), std::abs(fd)});
      rep.max_rel_error = std::max(rep.max_rel_error, std::abs(ad - fd) / denom);
    }
  }
  rep.passed = rep.max_rel_error < tol;
  return rep;
}

}  // namespace elm
