#include "focalforge/autodiff/optim.hpp"

#include <cmath>
#include <numbers>

#include "focalforge/error.hpp"

namespace focalforge::ad {

void adam_step(std::vector<Tensor*> params, const std::vector<const Tensor*>& grads, AdamState& state, double lr,
               const AdamConfig& cfg) {
  if (grads.size() != params.size()) throw ValidationError("adam_step: parameter/gradient count mismatch");
  if (state.m.empty() && state.step == 0) {
    for (const Tensor* p : params) {
      state.m.emplace_back(p->shape());
      state.v.emplace_back(p->shape());
    }
  }
  if (state.m.size() != params.size() || state.v.size() != params.size())
    throw ValidationError("adam_step: state holds " + std::to_string(state.m.size()) + " tensors, expected " +
                          std::to_string(params.size()));
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = *params[k];
    Tensor& m = state.m[k];
    Tensor& v = state.v[k];
    if (m.shape() != p.shape() || v.shape() != p.shape())
      throw ValidationError("adam_step: state shape " + to_string(m.shape()) + " does not match parameter " +
                            to_string(p.shape()));
    const Tensor* g = grads[k];
    if (g && !g->empty() && g->shape() != p.shape()) throw ValidationError("adam_step: gradient shape mismatch");
    for (std::int64_t i = 0; i < p.numel(); ++i) {
      const double gi = (g && !g->empty()) ? (*g)[i] : 0.0;
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p[i] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

Adam::Adam(std::vector<Var> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  for (const Var& p : params_) {
    state_.m.emplace_back(p.shape());
    state_.v.emplace_back(p.shape());
  }
}

void Adam::step(double lr) {
  std::vector<Tensor*> ps;
  std::vector<const Tensor*> gs;
  for (Var& p : params_) {
    ps.push_back(&p.mutable_value());
    gs.push_back(p.has_grad() ? &p.node()->grad : nullptr);
  }
  adam_step(std::move(ps), gs, state_, lr, cfg_);
}

void Adam::load_state(AdamState state) {
  if (state.m.size() != params_.size() || state.v.size() != params_.size())
    throw ValidationError("optimizer state has " + std::to_string(state.m.size()) + " tensors, model has " +
                          std::to_string(params_.size()));
  for (std::size_t k = 0; k < params_.size(); ++k)
    if (state.m[k].shape() != params_[k].shape() || state.v[k].shape() != params_[k].shape())
      throw ValidationError("optimizer state shape mismatch at parameter " + std::to_string(k));
  state_ = std::move(state);
}

double cosine_warmup_lr(double epoch, int total, int warmup, double base) {
  if (warmup < 0 || warmup >= total) throw ValidationError("cosine_warmup_lr: need 0 <= warmup < total");
  if (!(epoch >= 0.0) || epoch >= total)
    throw ValidationError("cosine_warmup_lr: epoch " + std::to_string(epoch) + " outside [0, " +
                          std::to_string(total) + ")");
  if (epoch < warmup) return base * epoch / warmup;
  const double t = (epoch - warmup) / static_cast<double>(total - warmup);
  return base * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

}  // namespace focalforge::ad
