#include "focalforge/autodiff/nn.hpp"

#include <cmath>

#include "focalforge/error.hpp"

namespace focalforge::ad {

Var ParameterSet::create(const std::string& name, Shape shape, Init init, double fan_in, double value) {
  if (find(name)) throw ValidationError("duplicate parameter name: " + name);
  Tensor t(std::move(shape));
  switch (init) {
    case Init::kFanInUniform: {
      const double bound = 1.0 / std::sqrt(std::max(fan_in, 1.0));
      std::uniform_real_distribution<double> u(-bound, bound);
      for (double& v : t.values()) v = u(rng_);
      break;
    }
    case Init::kZeros:
      break;
    case Init::kConstant:
      t.fill(value);
      break;
  }
  Var v(std::move(t), true);
  params_.push_back({name, v, init});
  return v;
}

std::vector<Var> ParameterSet::vars() const {
  std::vector<Var> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.var);
  return out;
}

const Parameter* ParameterSet::find(const std::string& name) const {
  for (const auto& p : params_)
    if (p.name == name) return &p;
  return nullptr;
}

Var ParameterSet::get(const std::string& name) const {
  const Parameter* p = find(name);
  if (!p) throw ValidationError("unknown parameter: " + name);
  return p->var;
}

std::int64_t ParameterSet::scalar_count() const {
  std::int64_t n = 0;
  for (const auto& p : params_) n += p.var.value().numel();
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& p : params_) p.var.zero_grad();
}

Conv2d Conv2d::create(ParameterSet& ps, const std::string& name, std::int64_t cin, std::int64_t cout, int k,
                      int stride, bool bias, Init init) {
  if (k % 2 == 0) throw ValidationError("conv kernel size must be odd: " + name);
  Conv2d c;
  const double fan_in = static_cast<double>(cin * k * k);
  c.w = ps.create(name + ".w", {cout, cin, k, k}, init, fan_in);
  if (bias) c.b = ps.create(name + ".b", {cout}, init, fan_in);
  c.stride = stride;
  c.pad = k / 2;
  return c;
}

Affine Affine::create(ParameterSet& ps, const std::string& name, std::int64_t din, std::int64_t dout, Init init) {
  Affine a;
  a.w = ps.create(name + ".w", {dout, din}, init, static_cast<double>(din));
  a.b = ps.create(name + ".b", {dout}, init, static_cast<double>(din));
  return a;
}

ResBlock ResBlock::create(ParameterSet& ps, const std::string& name, std::int64_t channels) {
  return {Conv2d::create(ps, name + ".c1", channels, channels, 3), Conv2d::create(ps, name + ".c2", channels, channels, 3)};
}

}  // namespace focalforge::ad
