#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "focalforge/autodiff/ops.hpp"

namespace focalforge::ad {

enum class Init { kFanInUniform, kZeros, kConstant };

struct Parameter {
  std::string name;
  Var var;
  Init init = Init::kFanInUniform;
};

/// Owns the named trainable tensors of a model. Names are unique.
class ParameterSet {
 public:
  explicit ParameterSet(std::uint64_t seed = 0) : rng_(seed) {}

  // kFanInUniform draws from U(-1/sqrt(fan_in), 1/sqrt(fan_in)); kConstant
  // fills with `value`.
  Var create(const std::string& name, Shape shape, Init init, double fan_in = 1.0, double value = 0.0);

  const std::vector<Parameter>& params() const { return params_; }
  std::vector<Var> vars() const;
  const Parameter* find(const std::string& name) const;
  Var get(const std::string& name) const;  // throws if missing
  std::int64_t scalar_count() const;
  void zero_grad();

 private:
  std::mt19937_64 rng_;
  std::vector<Parameter> params_;
};

struct Conv2d {
  Var w, b;  // b may be undefined
  int stride = 1;
  int pad = 0;

  static Conv2d create(ParameterSet& ps, const std::string& name, std::int64_t cin, std::int64_t cout, int k,
                       int stride = 1, bool bias = true, Init init = Init::kFanInUniform);
  Var operator()(const Var& x) const { return conv2d(x, w, b, stride, pad); }
};

struct Affine {
  Var w, b;

  static Affine create(ParameterSet& ps, const std::string& name, std::int64_t din, std::int64_t dout,
                       Init init = Init::kFanInUniform);
  Var operator()(const Var& x) const { return affine(x, w, b); }
};

/// relu(x + conv(relu(conv(x)))) with 3x3 convolutions, channel preserving.
struct ResBlock {
  Conv2d c1, c2;

  static ResBlock create(ParameterSet& ps, const std::string& name, std::int64_t channels);
  Var operator()(const Var& x) const { return relu(add(x, c2(relu(c1(x))))); }
};

}  // namespace focalforge::ad
