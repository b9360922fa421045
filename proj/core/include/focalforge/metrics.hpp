#pragma once

#include <vector>

#include "focalforge/imageio.hpp"

namespace focalforge {

inline constexpr double kPsnrCap = 100.0;

struct MetricReport {
  double psnr = 0.0;
  double ssim = 0.0;
  double miou = 0.0;
  std::vector<double> per_class_iou;  // NaN for classes absent from both maps
};

// 10 log10(range^2 / MSE); identical inputs return kPsnrCap.
double psnr(const ImagePlane& a, const ImagePlane& b, double data_range = 1.0);
double psnr(const BlurMap& a, const BlurMap& b, double data_range);

// Mean SSIM over the valid region of an 11x11 Gaussian window (sigma 1.5),
// K1 = 0.01, K2 = 0.03. Single-channel inputs of at least 11x11.
double ssim(const ImagePlane& a, const ImagePlane& b, double data_range = 1.0);

struct IouResult {
  double miou = 0.0;
  std::vector<double> per_class_iou;
};

// Confusion counts over pixels whose ground truth is not ignore_value.
// Classes absent from both maps are excluded from the mean.
IouResult miou(const LabelMap& pred, const LabelMap& gt, int classes);

/// Square confusion matrix, rows = ground truth, cols = prediction.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int classes);

  void accumulate(const LabelMap& pred, const LabelMap& gt);
  IouResult iou() const;
  long long at(int gt, int pred) const { return counts_[static_cast<std::size_t>(gt) * classes_ + pred]; }
  int classes() const { return classes_; }

 private:
  int classes_;
  std::vector<long long> counts_;
  // Ground-truth pixels whose prediction was outside [0, classes).
  std::vector<long long> missed_;
};

// Normalizes both maps by sigma_max, then PSNR/SSIM with data range 1.
MetricReport eval_blurmap(const BlurMap& pred, const BlurMap& gt, double sigma_max);

}  // namespace focalforge
