#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "focalforge/autodiff/nn.hpp"
#include "focalforge/gia.hpp"
#include "focalforge/imageio.hpp"

namespace focalforge {

inline constexpr int kLevels = 4;

enum class SingleTask { kNone, kBlur, kSeg };

std::string to_string(SingleTask t);
SingleTask single_task_from_string(const std::string& s);

struct CmosConfig {
  // Channel widths per level, coarse (1/16) to fine (1/1).
  std::array<std::int64_t, kLevels> widths = {128, 64, 48, 32};
  int classes = 40;
  int scale = 4;
  double sigma_max = 5.0;
  // channels is overwritten per level.
  GiaConfig gia;
  // Replace every GIA by plain addition of (upsampled) inputs.
  bool ablate_gia = false;
  SingleTask single_task = SingleTask::kNone;

  void validate() const;
};

void to_json(nlohmann::json& j, const CmosConfig& c);
void from_json(const nlohmann::json& j, CmosConfig& c);

/// Encoder levels F^0..F^3 at 1/16, 1/8, 1/4 and 1 of the (padded) input.
struct FeaturePyramid {
  std::array<ad::Var, kLevels> levels;
};

struct TaskFeatures {
  std::array<ad::Var, kLevels> blur, seg;          // F_blur^i, F_seg^i
  std::array<ad::Var, kLevels> blur_hat, seg_hat;  // refined pair
  ad::Var aux_blur, aux_seg;                       // level-3 resolution
};

struct CmosOutputs {
  ad::Var blur;  // [N,1,sH,sW], linear
  ad::Var seg;   // [N,classes,sH,sW] logits
  ad::Var aux_blur, aux_seg;
};

struct LossTerms {
  ad::Var total;
  double aux_blur = 0.0, aux_seg = 0.0, blur = 0.0, seg = 0.0;
};

/// Ground truth at HR resolution for a batch.
struct Targets {
  ad::Tensor blur;                   // [N,1,sH,sW]
  std::vector<std::uint8_t> labels;  // N*sH*sW
  int ignore_value = 255;
};

class CmosLite {
 public:
  CmosLite(const CmosConfig& cfg, std::uint64_t seed);

  const CmosConfig& config() const { return cfg_; }
  ad::ParameterSet& params() { return ps_; }
  const ad::ParameterSet& params() const { return ps_; }

  // x: [N,3,H,W] with H, W multiples of 16.
  FeaturePyramid encode(const ad::Var& x) const;
  TaskFeatures stage2(const FeaturePyramid& pyr) const;
  CmosOutputs stage3(const TaskFeatures& tf) const;
  // Pads to a multiple of 16 when needed and crops the outputs back.
  CmosOutputs forward(const ad::Var& x) const;

  const Gia* gia(const std::string& name) const;  // e.g. "m2"; null when ablated

 private:
  std::pair<ad::Var, ad::Var> interact(const Gia* g, const ad::Var& a, const ad::Var& b) const;

  CmosConfig cfg_;
  ad::ParameterSet ps_;
  ad::Conv2d stem_, down_[4];
  ad::ResBlock enc_[kLevels];
  ad::Conv2d adapt_b_[kLevels], adapt_s_[kLevels];
  std::array<std::array<ad::ResBlock, 2>, kLevels> head_b_, head_s_;
  std::vector<std::pair<std::string, Gia>> gias_;
  ad::Conv2d aux_b1_, aux_b2_, aux_s1_, aux_s2_;
  ad::Conv2d final_b_, final_s_;
};

// L1 + L2 + L3 + L4 (MAE/CE on aux and final maps). Aux
// targets are the HR ground truth resized to the aux resolution (bilinear for
// blur, nearest for labels). use_aux = false drops L1 and L2.
LossTerms total_loss(const CmosOutputs& out, const Targets& gt, bool use_aux = true);

// [N,3,H,W] tensor from images; each must be RGB with equal size. Values are
// shifted to be centered on zero.
ad::Tensor images_to_tensor(const std::vector<const ImagePlane*>& images);

struct Estimate {
  BlurMap blur;  // clamped to [0, sigma_max]
  LabelMap labels;
};

Estimate estimate(const CmosLite& model, const ImagePlane& lr);

// Rebuilds a model from a checkpoint written by train.
CmosLite load_model(const std::filesystem::path& checkpoint);

}  // namespace focalforge
