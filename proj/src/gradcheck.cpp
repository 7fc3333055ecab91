#include "heba/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "heba/errors.hpp"
#include "heba/rng.hpp"

namespace heba {

namespace {

// Below this magnitude a relative comparison is meaningless (central
// differences carry O(h^2) absolute noise), so both values just have to be
// small. Same policy as the usual gradient-check harnesses.
constexpr double kSmallGuard = 1e-6;
constexpr double kSmallAbsTol = 1e-7;

}  // namespace

Tensor finite_diff_grad(const ScalarFn& f, const Tensor& x, double h) {
  if (h <= 0.0) throw InvariantError("finite_diff_grad: h must be positive");
  Tensor probe = x.detached_copy();
  const Index n = probe.numel();
  Eigen::ArrayXd g(n);
  for (Index i = 0; i < n; ++i) {
    const double v = probe.values()[i];
    probe.values()[i] = v + h;
    const double fp = f(probe);
    probe.values()[i] = v - h;
    const double fm = f(probe);
    probe.values()[i] = v;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return Tensor::from_array(x.shape(), std::move(g));
}

GradCheckReport run_case(const GradCheckCase& check, double tol, double h, Rng& rng) {
  GradCheckReport report;
  report.op = check.name;
  report.trials = check.trials;
  report.pass = true;
  for (int trial = 0; trial < check.trials; ++trial) {
    auto [params, thunk] = check.setup(rng);
    Tensor loss = thunk();
    backward(loss);
    for (auto& p : params) {
      if (!p.requires_grad()) continue;
      ScalarFn f = [&](const Tensor& probe) {
        Eigen::ArrayXd saved = p.values();
        p.values() = probe.values();
        const double v = thunk().item();
        p.values() = saved;
        return v;
      };
      Tensor fd = finite_diff_grad(f, p, h);
      const Eigen::ArrayXd& analytic = p.grad();
      for (Index i = 0; i < p.numel(); ++i) {
        const double a = analytic[i];
        const double n = fd.values()[i];
        const double m = std::max(std::abs(a), std::abs(n));
        ++report.coords_checked;
        if (m < kSmallGuard) {
          if (std::abs(a - n) > kSmallAbsTol) report.pass = false;
          continue;
        }
        const double rel = std::abs(a - n) / m;
        report.max_rel_err = std::max(report.max_rel_err, rel);
        if (rel >= tol) report.pass = false;
      }
    }
  }
  return report;
}

std::vector<GradCheckReport> run_gradient_suite(double tol, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<GradCheckReport> reports;
  for (const auto& check : gradient_suite_cases()) {
    reports.push_back(run_case(check, tol, 1e-5, rng));
  }
  return reports;
}

}  // namespace heba
