#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "focalforge/cmos.hpp"
#include "focalforge/datagen.hpp"
#include "focalforge/log.hpp"

namespace focalforge {

struct TrainConfig {
  int epochs = 700;
  int batch = 8;
  double lr = 1e-4;
  int warmup = 10;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double flip_prob = 0.5;
  bool scale_augment = true;  // ratios {1, 1.2, 1.5}
  // Square LR crop side per sample; 0 trains on whole images.
  int crop = 0;
  bool use_aux = true;
  std::uint64_t seed = 0;

  void validate() const;
  // 40 epochs, batch 4, 96x96 crops.
  static TrainConfig desk_scale();
};

/// One training/evaluation sample: LR input with HR targets.
struct Sample {
  std::string id;
  ImagePlane lr;
  BlurMap blur;
  LabelMap labels;
};

// Loads entries of the given split. Label maps are read with `classes`.
std::vector<Sample> load_samples(const std::vector<ManifestEntry>& entries, Split split, int classes);

struct EvalResult {
  double loss = 0.0;       // mean total loss per image
  double blur_psnr = 0.0;  // mean over images, maps normalized by sigma_max
  double blur_mae = 0.0;   // mean absolute sigma error over all pixels
  double miou = 0.0;       // from one confusion matrix over all images
};

EvalResult evaluate(const CmosLite& model, const std::vector<Sample>& samples, bool use_aux = true);

// Mean absolute error of predicting the constant `mean_sigma` everywhere.
double constant_blur_mae(const std::vector<Sample>& samples, double mean_sigma);
double mean_blur(const std::vector<Sample>& samples);

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  EvalResult val;
};

struct TrainResult {
  EvalResult initial;  // validation before the first update
  std::vector<EpochRecord> epochs;
  std::vector<double> step_losses;
  double best_psnr = 0.0;
  double best_miou = 0.0;
  int best_psnr_epoch = -1;
  int best_miou_epoch = -1;
  std::filesystem::path best_psnr_ckpt, best_miou_ckpt, last_ckpt;
};

// Adam with the cosine warmup schedule evaluated at fractional epochs. Writes
// best_psnr.ckpt, best_miou.ckpt and last.ckpt to out_dir when it is non-empty.
// Throws on an empty training set or a non-finite loss.
TrainResult train(CmosLite& model, const std::vector<Sample>& train_set, const std::vector<Sample>& val_set,
                  const TrainConfig& cfg, const std::filesystem::path& out_dir, RunLog* log = nullptr);

}  // namespace focalforge
