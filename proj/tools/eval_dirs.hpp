#pragma once

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

namespace focalforge::tools {

// kind: "sr" (Y-channel PSNR/SSIM of PNGs), "blur" (PFM maps normalized by
// sigma_max) or "seg" (label PNGs, mIoU over one confusion matrix). Files are
// paired by name; every ground-truth file needs a prediction.
nlohmann::json eval_dirs(const std::filesystem::path& pred, const std::filesystem::path& gt, const std::string& kind,
                         int classes, double sigma_max);

}  // namespace focalforge::tools
