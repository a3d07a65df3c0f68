#pragma once

#include <functional>
#include <string>
#include <vector>

#include "dabf/rng.hpp"
#include "dabf/tensor.hpp"

namespace dabf {

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst;  // "input 1 coord 7" of the largest error
  long long coords_checked = 0;

  bool passes(double tol) const { return max_rel_err <= tol; }
};

using TensorFn = std::function<Tensor(const std::vector<Tensor>&)>;

/// Central differences against backward() for every coordinate of every
/// requires_grad input. f must be scalar-valued and pure; relative error
/// uses max(|analytic|, |numeric|, 1e-8) as denominator.
GradCheckReport finite_diff_check(const TensorFn& f, const std::vector<Tensor>& at,
                                  double eps = 1e-5);

/// Single-input convenience form.
GradCheckReport finite_diff_check(const std::function<Tensor(const Tensor&)>& f,
                                  const Tensor& at, double eps = 1e-5);

/// Draws inputs from `gen` until a forward pass of f keeps at least
/// `margin` distance from every kink (monitored inside the ops). Throws
/// after `max_tries` rejections.
std::vector<Tensor> sample_smooth_point(Rng& rng, const TensorFn& f,
                                        const std::function<std::vector<Tensor>(Rng&)>& gen,
                                        double margin = 1e-3, int max_tries = 200);

struct GradCheckCase {
  std::string name;
  std::string module;  // tensor | dahead | bwfpn | loss | detector
  double tol = 1e-4;
  std::function<GradCheckReport()> run;
};

struct GradCheckResult {
  std::string name;
  std::string module;
  double max_rel_err = 0.0;
  double tol = 0.0;
  bool pass = false;
};

std::vector<GradCheckCase>& gradcheck_registry();
void register_gradcheck(GradCheckCase c);

/// Registers the shipped suites exactly once (tensor ops, attention head,
/// fusion neck, box losses, tiny end-to-end pipeline).
void register_builtin_gradchecks();

/// Runs the registry, optionally filtered by module ("all" for everything).
std::vector<GradCheckResult> run_gradchecks(const std::string& module_filter);

}  // namespace dabf
