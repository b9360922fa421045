#include "focalforge/autodiff/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "focalforge/error.hpp"

namespace focalforge::ad {

namespace {

double probe(const Var& out, const Tensor& r) {
  double s = 0.0;
  for (std::int64_t i = 0; i < r.numel(); ++i) s += out.value()[i] * r[i];
  return s;
}

}  // namespace

GradcheckReport gradcheck(const std::function<Var()>& forward, const std::vector<GradcheckInput>& inputs,
                          const GradcheckOptions& opts) {
  for (const auto& in : inputs)
    if (!in.var.requires_grad()) throw ValidationError("gradcheck: input " + in.name + " does not require grad");
  std::mt19937_64 rng(opts.seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);

  for (auto in : inputs) in.var.zero_grad();
  Var out = forward();
  Tensor r(out.shape());
  for (double& v : r.values()) v = u(rng);
  backward(out, r);
  std::vector<Tensor> analytic;
  for (const auto& in : inputs) analytic.push_back(in.var.grad());

  GradcheckReport report;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Var v = inputs[k].var;
    const std::int64_t n = v.value().numel();
    std::vector<std::int64_t> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    const bool sampled = opts.max_elements > 0 && n > opts.max_elements;
    if (sampled) std::shuffle(idx.begin(), idx.end(), rng);
    const std::int64_t want = sampled ? opts.max_elements : n;
    GradcheckEntry e;
    e.name = inputs[k].name;
    for (std::int64_t i : idx) {
      if (e.checked >= want) break;
      double& x = v.mutable_value()[i];
      const double saved = x;
      const double ana = analytic[k][i];
      auto central = [&](double h, double* fp_out, double* fm_out) {
        x = saved + h;
        const double fp = probe(forward(), r);
        x = saved - h;
        const double fm = probe(forward(), r);
        x = saved;
        if (fp_out) *fp_out = fp;
        if (fm_out) *fm_out = fm;
        return (fp - fm) / (2.0 * h);
      };
      auto rel_of = [&](double num) {
        return std::abs(ana - num) / std::max({std::abs(ana), std::abs(num), opts.floor});
      };
      double fp = 0.0, fm = 0.0;
      const double num = central(opts.eps, &fp, &fm);
      double abs_err = std::abs(ana - num);
      double rel = rel_of(num);
      if (rel >= opts.tolerance) {
        for (double h : opts.retry_steps) {
          const double n2 = central(h, nullptr, nullptr);
          if (rel_of(n2) < rel) {
            rel = rel_of(n2);
            abs_err = std::abs(ana - n2);
          }
          if (rel < opts.tolerance) {
            ++e.retried;
            break;
          }
        }
      }
      if (rel >= opts.tolerance && opts.skip_nonsmooth) {
        const double f0 = probe(forward(), r);
        const double left = (f0 - fm) / opts.eps, right = (fp - f0) / opts.eps;
        if (std::abs(right - left) >= std::abs(ana - num)) {
          ++e.nonsmooth;
          continue;
        }
      }
      e.max_abs_error = std::max(e.max_abs_error, abs_err);
      e.max_rel_error = std::max(e.max_rel_error, rel);
      ++e.checked;
    }
    if (n > 0 && e.checked == 0) e.passed = false;
    e.passed = e.passed && e.max_rel_error < opts.tolerance;
    report.max_rel_error = std::max(report.max_rel_error, e.max_rel_error);
    report.passed = report.passed && e.passed;
    report.entries.push_back(std::move(e));
  }
  for (auto in : inputs) in.var.zero_grad();
  return report;
}

}  // namespace focalforge::ad
