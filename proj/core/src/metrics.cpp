#include "focalforge/metrics.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include "focalforge/error.hpp"

namespace focalforge {

namespace {

void require_same_shape(int h1, int w1, int c1, int h2, int w2, int c2, const char* what) {
  if (h1 != h2 || w1 != w2 || c1 != c2) {
    std::ostringstream os;
    os << what << ": shape mismatch " << h1 << "x" << w1 << "x" << c1 << " vs " << h2 << "x" << w2 << "x" << c2;
    throw ValidationError(os.str());
  }
}

double psnr_from_mse(double mse, double data_range) {
  if (mse <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(data_range * data_range / mse));
}

template <class A, class B>
double mse(const A& a, const B& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    s += d * d;
  }
  return a.empty() ? 0.0 : s / static_cast<double>(a.size());
}

constexpr int kWin = 11;
constexpr double kWinSigma = 1.5;

std::vector<double> ssim_window() {
  std::vector<double> g(kWin);
  double sum = 0.0;
  for (int i = 0; i < kWin; ++i) {
    const double d = i - kWin / 2;
    g[i] = std::exp(-d * d / (2.0 * kWinSigma * kWinSigma));
    sum += g[i];
  }
  for (double& v : g) v /= sum;
  return g;
}

// Separable valid-region filtering of a single plane.
std::vector<double> filter_valid(const std::vector<double>& src, int h, int w, const std::vector<double>& g) {
  const int oh = h - kWin + 1, ow = w - kWin + 1;
  std::vector<double> tmp(static_cast<std::size_t>(h) * ow);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int k = 0; k < kWin; ++k) s += g[k] * src[static_cast<std::size_t>(y) * w + x + k];
      tmp[static_cast<std::size_t>(y) * ow + x] = s;
    }
  std::vector<double> out(static_cast<std::size_t>(oh) * ow);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int k = 0; k < kWin; ++k) s += g[k] * tmp[static_cast<std::size_t>(y + k) * ow + x];
      out[static_cast<std::size_t>(y) * ow + x] = s;
    }
  return out;
}

}  // namespace

double psnr(const ImagePlane& a, const ImagePlane& b, double data_range) {
  require_same_shape(a.height(), a.width(), a.channels(), b.height(), b.width(), b.channels(), "psnr");
  if (!(data_range > 0.0)) throw ValidationError("psnr: data_range must be > 0");
  return psnr_from_mse(mse(a.data(), b.data()), data_range);
}

double psnr(const BlurMap& a, const BlurMap& b, double data_range) {
  require_same_shape(a.height, a.width, 1, b.height, b.width, 1, "psnr");
  if (!(data_range > 0.0)) throw ValidationError("psnr: data_range must be > 0");
  return psnr_from_mse(mse(a.data, b.data), data_range);
}

double ssim(const ImagePlane& a, const ImagePlane& b, double data_range) {
  require_same_shape(a.height(), a.width(), a.channels(), b.height(), b.width(), b.channels(), "ssim");
  if (a.channels() != 1) throw ValidationError("ssim: expected single-channel input (convert to Y first)");
  if (a.height() < kWin || a.width() < kWin) throw ValidationError("ssim: image smaller than the 11x11 window");
  const int h = a.height(), w = a.width();
  const std::size_t n = static_cast<std::size_t>(h) * w;
  std::vector<double> x(n), y(n), xx(n), yy(n), xy(n);
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = a.data()[i];
    y[i] = b.data()[i];
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  const auto g = ssim_window();
  const auto mx = filter_valid(x, h, w, g), my = filter_valid(y, h, w, g);
  const auto exx = filter_valid(xx, h, w, g), eyy = filter_valid(yy, h, w, g), exy = filter_valid(xy, h, w, g);
  const double c1 = (0.01 * data_range) * (0.01 * data_range);
  const double c2 = (0.03 * data_range) * (0.03 * data_range);
  double total = 0.0;
  for (std::size_t i = 0; i < mx.size(); ++i) {
    const double mxy = mx[i] * my[i];
    const double sxx = exx[i] - mx[i] * mx[i];
    const double syy = eyy[i] - my[i] * my[i];
    const double sxy = exy[i] - mxy;
    const double num = (2.0 * mxy + c1) * (2.0 * sxy + c2);
    const double den = (mx[i] * mx[i] + my[i] * my[i] + c1) * (sxx + syy + c2);
    total += num / den;
  }
  return total / static_cast<double>(mx.size());
}

ConfusionMatrix::ConfusionMatrix(int classes)
    : classes_(classes), counts_(static_cast<std::size_t>(classes) * classes, 0), missed_(classes, 0) {
  if (classes < 1) throw ValidationError("ConfusionMatrix: classes must be >= 1");
}

void ConfusionMatrix::accumulate(const LabelMap& pred, const LabelMap& gt) {
  require_same_shape(pred.height, pred.width, 1, gt.height, gt.width, 1, "miou");
  for (std::size_t i = 0; i < gt.data.size(); ++i) {
    const int g = gt.data[i];
    if (g == gt.ignore_value || g >= classes_) continue;
    const int p = pred.data[i];
    if (p < classes_)
      ++counts_[static_cast<std::size_t>(g) * classes_ + p];
    else
      ++missed_[g];
  }
}

IouResult ConfusionMatrix::iou() const {
  IouResult r;
  r.per_class_iou.assign(classes_, std::numeric_limits<double>::quiet_NaN());
  double sum = 0.0;
  int present = 0;
  for (int c = 0; c < classes_; ++c) {
    const long long tp = at(c, c);
    long long fn = missed_[c], fp = 0;
    for (int k = 0; k < classes_; ++k) {
      if (k == c) continue;
      fn += at(c, k);
      fp += at(k, c);
    }
    const long long denom = tp + fp + fn;
    if (denom == 0) continue;
    r.per_class_iou[c] = static_cast<double>(tp) / static_cast<double>(denom);
    sum += r.per_class_iou[c];
    ++present;
  }
  r.miou = present > 0 ? sum / present : 0.0;
  return r;
}

IouResult miou(const LabelMap& pred, const LabelMap& gt, int classes) {
  ConfusionMatrix cm(classes);
  cm.accumulate(pred, gt);
  return cm.iou();
}

MetricReport eval_blurmap(const BlurMap& pred, const BlurMap& gt, double sigma_max) {
  require_same_shape(pred.height, pred.width, 1, gt.height, gt.width, 1, "eval_blurmap");
  if (!(sigma_max > 0.0)) throw ValidationError("eval_blurmap: sigma_max must be > 0");
  ImagePlane p(pred.height, pred.width, 1), g(gt.height, gt.width, 1);
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    p.data()[i] = static_cast<float>(pred.data[i] / sigma_max);
    g.data()[i] = static_cast<float>(gt.data[i] / sigma_max);
  }
  MetricReport r;
  r.psnr = psnr(p, g, 1.0);
  r.ssim = (p.height() >= 11 && p.width() >= 11) ? ssim(p, g, 1.0) : std::numeric_limits<double>::quiet_NaN();
  return r;
}

}  // namespace focalforge
