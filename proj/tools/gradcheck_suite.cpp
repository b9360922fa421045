#include "gradcheck_suite.hpp"

#include <random>

#include "focalforge/autodiff/gradcheck.hpp"
#include "focalforge/autodiff/nn.hpp"
#include "focalforge/cmos.hpp"
#include "focalforge/error.hpp"
#include "focalforge/gia.hpp"

namespace focalforge::tools {

namespace {

using ad::GradcheckInput;
using ad::Tensor;
using ad::Var;

Var random_var(std::mt19937_64& rng, ad::Shape shape, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (double& v : t.values()) v = u(rng);
  return Var(std::move(t), true);
}

nlohmann::json report_json(const std::string& name, const ad::GradcheckReport& r) {
  nlohmann::json j{{"name", name}, {"passed", r.passed}, {"max_rel_error", r.max_rel_error}};
  for (const auto& e : r.entries)
    j["inputs"].push_back({{"name", e.name},
                           {"checked", e.checked},
                           {"nonsmooth_skipped", e.nonsmooth},
                           {"retried", e.retried},
                           {"max_rel_error", e.max_rel_error},
                           {"passed", e.passed}});
  return j;
}

std::vector<GradcheckInput> param_inputs(const ad::ParameterSet& ps) {
  std::vector<GradcheckInput> in;
  for (const auto& p : ps.params()) in.push_back({p.name, p.var});
  return in;
}

// Sets alpha/beta and flow weights away from zero so every path carries gradient.
void wake_couplings(ad::ParameterSet& ps, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-0.3, 0.3);
  for (const auto& p : ps.params()) {
    const auto& n = p.name;
    const bool coupling = n.ends_with(".alpha") || n.ends_with(".beta") || n.find(".flow.") != std::string::npos;
    if (!coupling) continue;
    Var v = p.var;
    for (double& x : v.mutable_value().values()) x = u(rng);
  }
}

nlohmann::json ops_suite(std::mt19937_64& rng) {
  nlohmann::json out = nlohmann::json::array();
  auto run = [&](const std::string& name, const std::function<Var()>& f, std::vector<GradcheckInput> in) {
    out.push_back(report_json(name, ad::gradcheck(f, in)));
  };
  {
    Var a = random_var(rng, {2, 3, 4}), b = random_var(rng, {3, 1});
    run("add", [&] { return ad::add(a, b); }, {{"a", a}, {"b", b}});
    run("sub", [&] { return ad::sub(a, b); }, {{"a", a}, {"b", b}});
    run("mul", [&] { return ad::mul(a, b); }, {{"a", a}, {"b", b}});
    run("scale", [&] { return ad::scale(a, -1.7); }, {{"a", a}});
    run("sigmoid", [&] { return ad::sigmoid(a); }, {{"a", a}});
    run("relu", [&] { return ad::relu(a); }, {{"a", a}});
    run("sum", [&] { return ad::sum(a); }, {{"a", a}});
    run("mean", [&] { return ad::mean(a); }, {{"a", a}});
  }
  {
    Var x = random_var(rng, {1, 2, 5, 5}), w = random_var(rng, {3, 2, 3, 3}), b = random_var(rng, {3});
    run("conv2d", [&] { return ad::conv2d(x, w, b, 1, 1); }, {{"x", x}, {"w", w}, {"b", b}});
    run("conv2d_stride2", [&] { return ad::conv2d(x, w, b, 2, 1); }, {{"x", x}, {"w", w}, {"b", b}});
  }
  {
    Var a = random_var(rng, {4, 3}), b = random_var(rng, {3, 4});
    run("matmul", [&] { return ad::matmul(a, b); }, {{"a", a}, {"b", b}});
    Var ba = random_var(rng, {2, 4, 3}), bb = random_var(rng, {3, 5});
    run("matmul_batched", [&] { return ad::matmul(ba, bb); }, {{"a", ba}, {"b", bb}});
  }
  {
    Var x = random_var(rng, {2, 5}), w = random_var(rng, {3, 5}), b = random_var(rng, {3});
    run("affine", [&] { return ad::affine(x, w, b); }, {{"x", x}, {"w", w}, {"b", b}});
  }
  {
    Var x = random_var(rng, {2, 3, 4, 5});
    run("global_avg_pool", [&] { return ad::global_avg_pool(x); }, {{"x", x}});
    run("bilinear_resize", [&] { return ad::bilinear_resize(x, 7, 9); }, {{"x", x}});
    run("pad_replicate", [&] { return ad::pad_replicate(x, 1, 2, 3, 1); }, {{"x", x}});
    run("crop", [&] { return ad::crop(x, 1, 1, 2, 3); }, {{"x", x}});
    run("permute", [&] { return ad::permute(x, {0, 2, 3, 1}); }, {{"x", x}});
    run("reshape", [&] { return ad::reshape(x, {6, -1}); }, {{"x", x}});
    Var y = random_var(rng, {2, 2, 4, 5});
    run("concat", [&] { return ad::concat({x, y}, 1); }, {{"x", x}, {"y", y}});
    Var flow = random_var(rng, {2, 2, 6, 7}, -0.8, 0.8);
    run("grid_sample_flow", [&] { return ad::grid_sample_flow(x, flow); }, {{"x", x}, {"flow", flow}});
  }
  {
    Var z = random_var(rng, {2, 3, 2, 2}, -2.0, 2.0);
    std::vector<std::uint8_t> labels = {0, 1, 2, 255, 2, 2, 0, 1};
    run("softmax_cross_entropy", [&] { return ad::softmax_cross_entropy(z, labels); }, {{"logits", z}});
    Var p = random_var(rng, {2, 3});
    Tensor t({2, 3}, std::vector<double>{0.5, -0.5, 0.25, 0.9, -0.9, 0.1});
    run("l1_loss", [&] { return ad::l1_loss(p, t); }, {{"pred", p}});
  }
  return out;
}

nlohmann::json gia_suite(std::mt19937_64& rng, std::uint64_t seed) {
  ad::ParameterSet ps(seed);
  GiaConfig cfg;
  cfg.channels = 4;
  cfg.channel_groups = 2;
  Gia g = Gia::create(ps, "gia", cfg);
  wake_couplings(ps, rng);
  Var f1 = random_var(rng, {1, 4, 16, 16}), f2 = random_var(rng, {1, 4, 8, 8});
  auto in = param_inputs(ps);
  in.push_back({"f1", f1});
  in.push_back({"f2", f2});
  auto fwd = [&] {
    auto [a, b] = g.forward(f1, f2);
    return ad::concat({a, b}, 1);
  };
  ad::GradcheckOptions opts;
  opts.max_elements = 24;
  opts.eps = 1e-4;
  opts.retry_steps = {1e-5, 1e-6, 1e-3};
  return nlohmann::json::array({report_json("gia_forward", ad::gradcheck(fwd, in, opts))});
}

nlohmann::json cmos_suite(std::mt19937_64& rng, std::uint64_t seed) {
  CmosConfig cfg;
  cfg.widths = {8, 8, 4, 4};
  cfg.classes = 3;
  cfg.gia.channel_groups = 2;
  cfg.gia.window = 4;
  CmosLite model(cfg, seed);
  wake_couplings(model.params(), rng);
  Var x = random_var(rng, {1, 3, 16, 16}, -0.5, 0.5);
  Targets t;
  t.blur = Tensor({1, 1, 64, 64});
  std::uniform_real_distribution<double> u(0.0, 5.0);
  for (double& v : t.blur.values()) v = u(rng);
  t.labels.resize(64 * 64);
  for (auto& l : t.labels) l = static_cast<std::uint8_t>(rng() % 3);
  auto fwd = [&] { return total_loss(model.forward(x), t).total; };
  ad::GradcheckOptions opts;
  opts.max_elements = 4;
  opts.eps = 1e-4;
  opts.retry_steps = {1e-5, 1e-6, 1e-3};
  return nlohmann::json::array({report_json("cmos_total_loss", ad::gradcheck(fwd, param_inputs(model.params()), opts))});
}

}  // namespace

nlohmann::json run_gradcheck_suite(const std::string& module, std::uint64_t seed) {
  if (module != "ops" && module != "gia" && module != "cmos" && module != "all")
    throw ValidationError("unknown gradcheck module '" + module + "' (ops, gia, cmos, all)");
  std::mt19937_64 rng(seed);
  nlohmann::json checks = nlohmann::json::array();
  auto append = [&](const nlohmann::json& a) {
    for (const auto& c : a) checks.push_back(c);
  };
  if (module == "ops" || module == "all") append(ops_suite(rng));
  if (module == "gia" || module == "all") append(gia_suite(rng, seed));
  if (module == "cmos" || module == "all") append(cmos_suite(rng, seed));
  bool passed = true;
  double worst = 0.0;
  for (const auto& c : checks) {
    passed = passed && c["passed"].get<bool>();
    worst = std::max(worst, c["max_rel_error"].get<double>());
  }
  return {{"module", module}, {"passed", passed}, {"max_rel_error", worst}, {"checks", checks}};
}

}  // namespace focalforge::tools
