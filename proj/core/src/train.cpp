#include "focalforge/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "focalforge/autodiff/checkpoint.hpp"
#include "focalforge/autodiff/optim.hpp"
#include "focalforge/error.hpp"
#include "focalforge/metrics.hpp"
#include "focalforge/parallel.hpp"

namespace focalforge {

using ad::Var;

void TrainConfig::validate() const {
  if (epochs < 1) throw ValidationError("epochs must be positive");
  if (warmup < 0 || warmup >= epochs) throw ValidationError("warmup must satisfy 0 <= warmup < epochs");
  if (batch < 1) throw ValidationError("batch must be positive");
  if (!(lr > 0.0)) throw ValidationError("lr must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ValidationError("betas must be in [0,1)");
  if (!(flip_prob >= 0.0 && flip_prob <= 1.0)) throw ValidationError("flip_prob must be in [0,1]");
  if (crop < 0 || (crop > 0 && crop < 16)) throw ValidationError("crop must be 0 or at least 16");
}

TrainConfig TrainConfig::desk_scale() {
  TrainConfig c;
  c.epochs = 40;
  c.batch = 4;
  c.warmup = 2;
  c.crop = 96;
  return c;
}

std::vector<Sample> load_samples(const std::vector<ManifestEntry>& entries, Split split, int classes) {
  std::vector<Sample> out;
  for (const auto& e : entries) {
    if (e.split != split) continue;
    Sample s;
    s.id = e.id;
    s.lr = load_image(e.lr_path);
    s.blur = load_float_map<BlurTag>(e.blurmap_path);
    s.labels = load_labels(e.label_path, classes);
    if (s.blur.height != s.labels.height || s.blur.width != s.labels.width)
      throw ValidationError("sample " + e.id + ": blur map and labels differ in size");
    if (s.lr.channels() != 3) throw ValidationError("sample " + e.id + ": LR image must be RGB");
    out.push_back(std::move(s));
  }
  return out;
}

namespace {

Targets make_targets(const std::vector<const Sample*>& batch) {
  const int h = batch[0]->blur.height, w = batch[0]->blur.width;
  Targets t;
  t.blur = ad::Tensor({static_cast<std::int64_t>(batch.size()), 1, h, w});
  t.ignore_value = batch[0]->labels.ignore_value;
  std::int64_t k = 0;
  for (const Sample* s : batch) {
    for (float v : s->blur.data) t.blur[k++] = v;
    t.labels.insert(t.labels.end(), s->labels.data.begin(), s->labels.data.end());
  }
  return t;
}

template <class Map>
Map crop_map(const Map& m, int top, int left, int h, int w) {
  Map out = m;
  out.height = h;
  out.width = w;
  out.data.assign(static_cast<std::size_t>(h) * w, {});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) out.at(y, x) = m.at(top + y, left + x);
  return out;
}

ImagePlane crop_image(const ImagePlane& img, int top, int left, int h, int w) {
  ImagePlane out(h, w, img.channels());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < img.channels(); ++c) out.at(y, x, c) = img.at(top + y, left + x, c);
  return out;
}

// Scale/flip augmentation applied jointly to the LR input and its HR targets.
Sample augment_sample(const Sample& s, const AugmentParams& p) {
  Sample a;
  a.id = s.id;
  if (p.ratio == 1.0) {
    a.lr = s.lr;
    a.blur = s.blur;
    a.labels = s.labels;
  } else {
    const int h = std::max(16, static_cast<int>(std::lround(s.lr.height() / p.ratio)));
    const int w = std::max(16, static_cast<int>(std::lround(s.lr.width() / p.ratio)));
    const int sh = h * s.blur.height / s.lr.height(), sw = w * s.blur.width / s.lr.width();
    a.lr = resize_bilinear(s.lr, h, w);
    a.blur = resize_bilinear(s.blur, sh, sw);
    for (float& v : a.blur.data) v = static_cast<float>(v / p.ratio);
    a.labels = resize_nearest(s.labels, sh, sw);
  }
  if (p.flip) {
    a.lr = flip_horizontal(a.lr);
    a.blur = flip_horizontal(a.blur);
    a.labels = flip_horizontal(a.labels);
  }
  return a;
}

}  // namespace

double mean_blur(const std::vector<Sample>& samples) {
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& x : samples) {
    for (float v : x.blur.data) s += v;
    n += x.blur.data.size();
  }
  return n ? s / static_cast<double>(n) : 0.0;
}

double constant_blur_mae(const std::vector<Sample>& samples, double mean_sigma) {
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& x : samples) {
    for (float v : x.blur.data) s += std::abs(static_cast<double>(v) - mean_sigma);
    n += x.blur.data.size();
  }
  return n ? s / static_cast<double>(n) : 0.0;
}

EvalResult evaluate(const CmosLite& model, const std::vector<Sample>& samples, bool use_aux) {
  EvalResult r;
  if (samples.empty()) return r;
  const auto& cfg = model.config();
  ConfusionMatrix cm(cfg.classes);
  double abs_sum = 0.0;
  std::size_t pixels = 0;
  int psnr_count = 0;
  for (const auto& s : samples) {
    const Var x(images_to_tensor({&s.lr}));
    const CmosOutputs out = model.forward(x);
    const Targets t = make_targets({&s});
    r.loss += total_loss(out, t, use_aux).total.value()[0];
    if (out.blur.defined()) {
      BlurMap pred(s.blur.height, s.blur.width);
      for (std::size_t i = 0; i < pred.data.size(); ++i) {
        const double v = std::clamp(out.blur.value()[static_cast<std::int64_t>(i)], 0.0, cfg.sigma_max);
        pred.data[i] = static_cast<float>(v);
        abs_sum += std::abs(v - s.blur.data[i]);
      }
      pixels += pred.data.size();
      r.blur_psnr += psnr(pred, s.blur, cfg.sigma_max);
      ++psnr_count;
    }
    if (out.seg.defined()) {
      LabelMap pred(s.labels.height, s.labels.width, cfg.classes);
      const double* z = out.seg.value().data();
      const std::int64_t hw = static_cast<std::int64_t>(pred.height) * pred.width;
      for (std::int64_t p = 0; p < hw; ++p) {
        int best = 0;
        for (int k = 1; k < cfg.classes; ++k)
          if (z[k * hw + p] > z[best * hw + p]) best = k;
        pred.data[static_cast<std::size_t>(p)] = static_cast<std::uint8_t>(best);
      }
      cm.accumulate(pred, s.labels);
    }
  }
  r.loss /= static_cast<double>(samples.size());
  if (psnr_count) r.blur_psnr /= psnr_count;
  if (pixels) r.blur_mae = abs_sum / static_cast<double>(pixels);
  r.miou = cm.iou().miou;
  return r;
}

namespace {

nlohmann::json eval_json(const EvalResult& e) {
  return {{"loss", e.loss}, {"blur_psnr", e.blur_psnr}, {"blur_mae", e.blur_mae}, {"miou", e.miou}};
}

}  // namespace

TrainResult train(CmosLite& model, const std::vector<Sample>& train_set, const std::vector<Sample>& val_set,
                  const TrainConfig& cfg, const std::filesystem::path& out_dir, RunLog* log) {
  cfg.validate();
  if (train_set.empty()) throw ValidationError("training set is empty");
  RunLog quiet;
  RunLog& lg = log ? *log : quiet;
  if (!out_dir.empty()) std::filesystem::create_directories(out_dir);

  TrainResult res;
  ad::Adam opt(model.params().vars(), {cfg.beta1, cfg.beta2, 1e-8});
  const int sc = model.config().scale;
  const std::int64_t steps_per_epoch = (static_cast<std::int64_t>(train_set.size()) + cfg.batch - 1) / cfg.batch;

  auto meta_for = [&](int epoch, const EvalResult& e) {
    nlohmann::json m;
    m["model"] = model.config();
    m["seed"] = cfg.seed;
    m["epoch"] = epoch;
    m["val"] = eval_json(e);
    return m;
  };

  res.initial = evaluate(model, val_set, cfg.use_aux);
  lg.event("init", {{"train_images", train_set.size()},
                    {"val_images", val_set.size()},
                    {"parameters", model.params().scalar_count()},
                    {"val", eval_json(res.initial)}});

  std::vector<std::size_t> order(train_set.size());
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 shuffle_rng(keyed_seed(cfg.seed, "shuffle:" + std::to_string(epoch)));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double loss_sum = 0.0;
    double lr = 0.0;
    for (std::int64_t step = 0; step < steps_per_epoch; ++step) {
      const std::size_t lo = static_cast<std::size_t>(step) * cfg.batch;
      const std::size_t hi = std::min(order.size(), lo + cfg.batch);
      std::vector<Sample> batch;
      for (std::size_t k = lo; k < hi; ++k) {
        const Sample& s = train_set[order[k]];
        const std::string key = std::to_string(epoch) + ":" + std::to_string(k);
        AugmentParams ap = draw_augment(keyed_seed(cfg.seed, "aug:" + key), cfg.flip_prob);
        if (!cfg.scale_augment) ap.ratio = 1.0;
        batch.push_back(augment_sample(s, ap));
      }
      // Common crop size for the batch.
      int ch = cfg.crop > 0 ? cfg.crop : batch[0].lr.height();
      int cw = cfg.crop > 0 ? cfg.crop : batch[0].lr.width();
      for (const auto& s : batch) {
        ch = std::min(ch, s.lr.height());
        cw = std::min(cw, s.lr.width());
      }
      std::mt19937_64 crop_rng(keyed_seed(cfg.seed, "crop:" + std::to_string(epoch) + ":" + std::to_string(step)));
      for (auto& s : batch) {
        if (s.lr.height() == ch && s.lr.width() == cw) continue;
        const int top = std::uniform_int_distribution<int>(0, s.lr.height() - ch)(crop_rng);
        const int left = std::uniform_int_distribution<int>(0, s.lr.width() - cw)(crop_rng);
        s.lr = crop_image(s.lr, top, left, ch, cw);
        s.blur = crop_map(s.blur, top * sc, left * sc, ch * sc, cw * sc);
        s.labels = crop_map(s.labels, top * sc, left * sc, ch * sc, cw * sc);
      }
      std::vector<const ImagePlane*> imgs;
      std::vector<const Sample*> ptrs;
      for (const auto& s : batch) {
        imgs.push_back(&s.lr);
        ptrs.push_back(&s);
      }
      const CmosOutputs out = model.forward(Var(images_to_tensor(imgs)));
      const LossTerms lt = total_loss(out, make_targets(ptrs), cfg.use_aux);
      const double loss = lt.total.value()[0];
      if (!std::isfinite(loss)) {
        lg.event("abort", {{"epoch", epoch}, {"step", step}, {"reason", "non-finite loss"}});
        throw std::runtime_error("non-finite loss at epoch " + std::to_string(epoch) + " step " +
                                 std::to_string(step) + " (aux_blur=" + std::to_string(lt.aux_blur) +
                                 " aux_seg=" + std::to_string(lt.aux_seg) + " blur=" + std::to_string(lt.blur) +
                                 " seg=" + std::to_string(lt.seg) + ")");
      }
      model.params().zero_grad();
      ad::backward(lt.total);
      lr = ad::cosine_warmup_lr(epoch + static_cast<double>(step) / static_cast<double>(steps_per_epoch), cfg.epochs,
                                cfg.warmup, cfg.lr);
      opt.step(lr);
      loss_sum += loss;
      res.step_losses.push_back(loss);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.train_loss = loss_sum / static_cast<double>(steps_per_epoch);
    rec.val = evaluate(model, val_set, cfg.use_aux);
    res.epochs.push_back(rec);
    lg.event("epoch", {{"epoch", epoch}, {"lr", lr}, {"train_loss", rec.train_loss}, {"val", eval_json(rec.val)}});

    if (!out_dir.empty()) {
      const auto meta = meta_for(epoch, rec.val);
      if (res.best_psnr_epoch < 0 || rec.val.blur_psnr > res.best_psnr) {
        res.best_psnr_ckpt = out_dir / "best_psnr.ckpt";
        ad::save_checkpoint(res.best_psnr_ckpt, model.params(), meta);
      }
      if (res.best_miou_epoch < 0 || rec.val.miou > res.best_miou) {
        res.best_miou_ckpt = out_dir / "best_miou.ckpt";
        ad::save_checkpoint(res.best_miou_ckpt, model.params(), meta);
      }
    }
    if (res.best_psnr_epoch < 0 || rec.val.blur_psnr > res.best_psnr) {
      res.best_psnr = rec.val.blur_psnr;
      res.best_psnr_epoch = epoch;
    }
    if (res.best_miou_epoch < 0 || rec.val.miou > res.best_miou) {
      res.best_miou = rec.val.miou;
      res.best_miou_epoch = epoch;
    }
  }
  if (!out_dir.empty()) {
    res.last_ckpt = out_dir / "last.ckpt";
    ad::save_checkpoint(res.last_ckpt, model.params(), meta_for(cfg.epochs - 1, res.epochs.back().val), &opt);
  }
  lg.event("done", {{"best_psnr", res.best_psnr},
                    {"best_psnr_epoch", res.best_psnr_epoch},
                    {"best_miou", res.best_miou},
                    {"best_miou_epoch", res.best_miou_epoch}});
  return res;
}

}  // namespace focalforge
