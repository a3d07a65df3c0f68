#include "dabf/gradcheck.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace dabf {

GradCheckReport finite_diff_check(const TensorFn& f, const std::vector<Tensor>& at, double eps) {
  // Analytic pass.
  Tensor out = f(at);
  if (out.numel() != 1) {
    throw std::invalid_argument("finite_diff_check: f must be scalar-valued, got shape " +
                                shape_str(out.shape()));
  }
  backward(out);
  std::vector<std::vector<double>> analytic;
  analytic.reserve(at.size());
  for (const Tensor& t : at) analytic.push_back(t.grad());

  GradCheckReport report;
  for (size_t i = 0; i < at.size(); ++i) {
    if (!at[i].requires_grad()) continue;
    const std::vector<double>& base = at[i].data();
    for (size_t j = 0; j < base.size(); ++j) {
      auto eval_at = [&](double delta) {
        std::vector<Tensor> probe;
        probe.reserve(at.size());
        for (size_t q = 0; q < at.size(); ++q) {
          if (q == i) {
            std::vector<double> d = base;
            d[j] += delta;
            probe.push_back(Tensor::from(at[q].shape(), std::move(d), false));
          } else {
            probe.push_back(Tensor::from(at[q].shape(), at[q].data(), false));
          }
        }
        return f(probe).item();
      };
      double numeric = (eval_at(eps) - eval_at(-eps)) / (2.0 * eps);
      double a = analytic[i][j];
      double rel = std::abs(numeric - a) / std::max({std::abs(numeric), std::abs(a), 1e-8});
      ++report.coords_checked;
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        std::ostringstream os;
        os << "input " << i << " coord " << j << " analytic " << a << " numeric " << numeric;
        report.worst = os.str();
      }
    }
  }
  return report;
}

GradCheckReport finite_diff_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& at,
                                  double eps) {
  return finite_diff_check([&f](const std::vector<Tensor>& xs) { return f(xs[0]); },
                           std::vector<Tensor>{at}, eps);
}

std::vector<Tensor> sample_smooth_point(Rng& rng, const TensorFn& f,
                                        const std::function<std::vector<Tensor>(Rng&)>& gen,
                                        double margin, int max_tries) {
  KinkMonitor& mon = KinkMonitor::instance();
  for (int attempt = 0; attempt < max_tries; ++attempt) {
    std::vector<Tensor> candidate = gen(rng);
    mon.enabled = true;
    mon.reset();
    f(candidate);
    mon.enabled = false;
    if (mon.min_margin >= margin) return candidate;
  }
  throw std::runtime_error("sample_smooth_point: no kink-free sample after " +
                           std::to_string(max_tries) + " tries");
}

std::vector<GradCheckCase>& gradcheck_registry() {
  static std::vector<GradCheckCase> reg;
  return reg;
}

void register_gradcheck(GradCheckCase c) { gradcheck_registry().push_back(std::move(c)); }

std::vector<GradCheckResult> run_gradchecks(const std::string& module_filter) {
  register_builtin_gradchecks();
  std::vector<GradCheckResult> results;
  for (const GradCheckCase& c : gradcheck_registry()) {
    if (module_filter != "all" && module_filter != c.module) continue;
    GradCheckReport rep = c.run();
    results.push_back({c.name, c.module, rep.max_rel_err, c.tol, rep.passes(c.tol)});
  }
  return results;
}

}  // namespace dabf
