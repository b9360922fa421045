#pragma once

#include <cstdint>
#include <string>
#include <utility>

#include "focalforge/autodiff/nn.hpp"

namespace focalforge {

enum class Squash { kNone, kSigmoid };

std::string to_string(Squash s);
Squash squash_from_string(const std::string& s);

struct GiaConfig {
  std::int64_t channels = 32;
  int window = 8;
  int channel_groups = 8;
  bool use_flow_align = true;
  Squash attn_squash = Squash::kNone;

  void validate() const;
};

/// Weights private to one of the two inputs.
struct GiaBranch {
  ad::Conv2d conv_in;     // 3x3, before window partition
  ad::Conv2d group_proj;  // 1x1 on windows, yields the per-pixel groups
  ad::Conv2d m_o;         // 1x1 C -> 1
  ad::Conv2d m_a;         // 1x1 window^2 -> 1
  ad::Conv2d smooth;      // 3x3 after restore
  ad::Affine mlp_o;       // C -> C
  ad::Affine mlp_a;       // groups^2 -> C
};

/// Intermediate values of one forward pass, for inspection.
struct GiaTrace {
  ad::Var f_w[2], m_o[2], m_a[2];
  ad::Var a_o[2], a_a[2];
  ad::Var aligned;  // second input on the first input's grid
};

class Gia {
 public:
  Gia() = default;
  static Gia create(ad::ParameterSet& ps, const std::string& name, const GiaConfig& cfg);

  const GiaConfig& config() const { return cfg_; }
  const ad::Var& alpha() const { return alpha_; }
  const ad::Var& beta() const { return beta_; }
  const GiaBranch& branch(int i) const { return br_[i]; }
  const ad::Conv2d& flow_conv() const { return flow_conv_; }

  // f1[N,C,H,W], f2[N,C,H',W'] with H' <= H, W' <= W. Both outputs have f1's
  // shape.
  std::pair<ad::Var, ad::Var> forward(const ad::Var& f1, const ad::Var& f2, GiaTrace* trace = nullptr) const;

  std::pair<ad::Var, ad::Var> spatial(const ad::Var& f1, const ad::Var& f2, GiaTrace* trace = nullptr) const;
  std::pair<ad::Var, ad::Var> channel(const ad::Var& f1, const ad::Var& f2, GiaTrace* trace = nullptr) const;
  ad::Var flow_align(const ad::Var& f_hi, const ad::Var& f_lo) const;

 private:
  GiaConfig cfg_;
  GiaBranch br_[2];
  ad::Var alpha_, beta_;
  ad::Conv2d flow_conv_;
};

// g1, g2: [B,N,D] -> [B,N,N] with entry (i,j) = <g1_i, g2_j>.
ad::Var feature_group_interaction(const ad::Var& g1, const ad::Var& g2);

// [N,C,H,W] (H, W multiples of ws) <-> [N*(H/ws)*(W/ws), C, ws, ws].
ad::Var window_partition(const ad::Var& x, int ws);
ad::Var window_restore(const ad::Var& windows, std::int64_t n, std::int64_t h, std::int64_t w, int ws);

}  // namespace focalforge
