#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "heba/tensor.hpp"

namespace heba {

class Rng;

using ScalarFn = std::function<double(const Tensor&)>;

// Central differences (f(x + h*e_i) - f(x - h*e_i)) / 2h per element. The
// probe tensor is a detached copy, so f never sees graph state.
Tensor finite_diff_grad(const ScalarFn& f, const Tensor& x, double h);

struct GradCheckReport {
  std::string op;
  double max_rel_err = 0.0;
  Index coords_checked = 0;
  int trials = 0;
  bool pass = false;
};

// A case owns its randomized setup: fresh differentiable parameters plus a
// thunk that rebuilds the scalar loss graph from the parameters' current
// values. The finite-difference side perturbs parameter values in place and
// re-runs the thunk, staying independent of the backward implementation.
struct GradCheckCase {
  std::string name;
  int trials = 10;
  std::function<std::pair<std::vector<Tensor>, std::function<Tensor()>>(Rng&)> setup;
};

GradCheckReport run_case(const GradCheckCase& check, double tol, double h, Rng& rng);

// Every differentiable operation plus the composite adapter/model cases.
std::vector<GradCheckCase> gradient_suite_cases();
std::vector<GradCheckReport> run_gradient_suite(double tol = 1e-4,
                                                std::uint64_t seed = 20240817);

}  // namespace heba
