#include "eval_dirs.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "focalforge/error.hpp"
#include "focalforge/metrics.hpp"

namespace focalforge::tools {

namespace fs = std::filesystem;

namespace {

std::vector<fs::path> list_files(const fs::path& dir, const std::string& ext) {
  if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ext) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  if (out.empty()) throw IoError("no " + ext + " files in " + dir.string());
  return out;
}

// Accepts `name.ext` or the estimate output name `name<suffix>.ext`.
fs::path partner(const fs::path& pred_dir, const fs::path& gt_file, const std::string& suffix) {
  fs::path p = pred_dir / gt_file.filename();
  if (!fs::exists(p) && !suffix.empty())
    p = pred_dir / (gt_file.stem().string() + suffix + gt_file.extension().string());
  if (!fs::exists(p)) throw IoError("missing prediction for " + gt_file.filename().string() + " in " + pred_dir.string());
  return p;
}

ImagePlane luma(const ImagePlane& img) { return img.channels() == 3 ? rgb_to_ycbcr_y(img) : img; }

}  // namespace

nlohmann::json eval_dirs(const fs::path& pred, const fs::path& gt, const std::string& kind, int classes,
                         double sigma_max) {
  nlohmann::json report{{"kind", kind}, {"pred", pred.string()}, {"gt", gt.string()}};
  nlohmann::json per = nlohmann::json::array();
  if (kind == "sr" || kind == "blur") {
    const auto files = list_files(gt, kind == "sr" ? ".png" : ".pfm");
    double psum = 0.0, ssum = 0.0;
    int scount = 0;
    for (const auto& g : files) {
      const fs::path p = partner(pred, g, kind == "blur" ? "_blur" : "");
      MetricReport m;
      if (kind == "sr") {
        const ImagePlane a = luma(load_image(p)), b = luma(load_image(g));
        m.psnr = psnr(a, b);
        m.ssim = (a.height() >= 11 && a.width() >= 11) ? ssim(a, b) : std::nan("");
      } else {
        m = eval_blurmap(load_float_map<BlurTag>(p), load_float_map<BlurTag>(g), sigma_max);
      }
      psum += m.psnr;
      if (std::isfinite(m.ssim)) {
        ssum += m.ssim;
        ++scount;
      }
      per.push_back({{"file", g.filename().string()}, {"psnr", m.psnr}, {"ssim", m.ssim}});
    }
    report["count"] = files.size();
    report["mean_psnr"] = psum / static_cast<double>(files.size());
    report["mean_ssim"] = scount ? ssum / scount : std::nan("");
  } else if (kind == "seg") {
    const auto files = list_files(gt, ".png");
    ConfusionMatrix cm(classes);
    for (const auto& g : files) {
      const LabelMap gl = load_labels(g, classes);
      // Predictions may contain any id; out-of-range ones count as misses.
      const LabelMap pl = load_labels(partner(pred, g, "_labels"), 255, 255);
      cm.accumulate(pl, gl);
      per.push_back({{"file", g.filename().string()}, {"miou", miou(pl, gl, classes).miou}});
    }
    const IouResult r = cm.iou();
    report["count"] = files.size();
    report["miou"] = r.miou;
    report["per_class_iou"] = r.per_class_iou;
  } else {
    throw ValidationError("eval kind must be sr, blur or seg, got '" + kind + "'");
  }
  report["per_image"] = per;
  return report;
}

}  // namespace focalforge::tools
