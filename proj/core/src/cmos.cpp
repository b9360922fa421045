#include "focalforge/cmos.hpp"

#include <algorithm>

#include "focalforge/autodiff/checkpoint.hpp"
#include "focalforge/error.hpp"

namespace focalforge {

using ad::Var;

std::string to_string(SingleTask t) {
  switch (t) {
    case SingleTask::kBlur:
      return "blur";
    case SingleTask::kSeg:
      return "seg";
    default:
      return "none";
  }
}

SingleTask single_task_from_string(const std::string& s) {
  if (s == "none" || s.empty()) return SingleTask::kNone;
  if (s == "blur") return SingleTask::kBlur;
  if (s == "seg") return SingleTask::kSeg;
  throw ValidationError("single task must be blur or seg, got '" + s + "'");
}

void CmosConfig::validate() const {
  for (auto w : widths) {
    if (w < 1) throw ValidationError("model widths must be positive");
    if (w % gia.channel_groups != 0)
      throw ValidationError("model width " + std::to_string(w) + " not divisible by channel_groups " +
                            std::to_string(gia.channel_groups));
  }
  if (classes < 1 || classes > 255) throw ValidationError("classes must be in [1, 255]");
  if (scale < 1) throw ValidationError("scale must be positive");
  if (!(sigma_max > 0.0)) throw ValidationError("sigma_max must be positive");
  if (gia.window < 1) throw ValidationError("gia window must be positive");
}

void to_json(nlohmann::json& j, const CmosConfig& c) {
  j = {{"widths", c.widths},
       {"classes", c.classes},
       {"scale", c.scale},
       {"sigma_max", c.sigma_max},
       {"window", c.gia.window},
       {"channel_groups", c.gia.channel_groups},
       {"use_flow_align", c.gia.use_flow_align},
       {"attn_squash", to_string(c.gia.attn_squash)},
       {"ablate_gia", c.ablate_gia},
       {"single_task", to_string(c.single_task)}};
}

void from_json(const nlohmann::json& j, CmosConfig& c) {
  c.widths = j.at("widths").get<std::array<std::int64_t, kLevels>>();
  c.classes = j.at("classes").get<int>();
  c.scale = j.at("scale").get<int>();
  c.sigma_max = j.at("sigma_max").get<double>();
  c.gia.window = j.at("window").get<int>();
  c.gia.channel_groups = j.at("channel_groups").get<int>();
  c.gia.use_flow_align = j.at("use_flow_align").get<bool>();
  c.gia.attn_squash = squash_from_string(j.at("attn_squash").get<std::string>());
  c.ablate_gia = j.at("ablate_gia").get<bool>();
  c.single_task = single_task_from_string(j.at("single_task").get<std::string>());
}

CmosLite::CmosLite(const CmosConfig& cfg, std::uint64_t seed) : cfg_(cfg), ps_(seed) {
  cfg_.validate();
  const auto& w = cfg_.widths;
  const bool blur = cfg_.single_task != SingleTask::kSeg;
  const bool seg = cfg_.single_task != SingleTask::kBlur;
  const bool both = blur && seg;

  stem_ = ad::Conv2d::create(ps_, "enc.stem", 3, w[3], 3);
  enc_[3] = ad::ResBlock::create(ps_, "enc.res3", w[3]);
  down_[0] = ad::Conv2d::create(ps_, "enc.down0", w[3], w[3], 3, 2);
  down_[1] = ad::Conv2d::create(ps_, "enc.down1", w[3], w[2], 3, 2);
  enc_[2] = ad::ResBlock::create(ps_, "enc.res2", w[2]);
  down_[2] = ad::Conv2d::create(ps_, "enc.down2", w[2], w[1], 3, 2);
  enc_[1] = ad::ResBlock::create(ps_, "enc.res1", w[1]);
  down_[3] = ad::Conv2d::create(ps_, "enc.down3", w[1], w[0], 3, 2);
  enc_[0] = ad::ResBlock::create(ps_, "enc.res0", w[0]);

  auto make_gia = [&](const std::string& tag, int level) {
    if (cfg_.ablate_gia) return;
    GiaConfig g = cfg_.gia;
    g.channels = w[level];
    gias_.emplace_back(tag + std::to_string(level), Gia::create(ps_, "gia." + tag + std::to_string(level), g));
  };

  for (int i = 0; i < kLevels; ++i) {
    const std::string li = std::to_string(i);
    if (i > 0) {
      if (blur) {
        adapt_b_[i] = ad::Conv2d::create(ps_, "adapt_b" + li, w[i - 1], w[i], 1);
        make_gia("b", i);
      }
      if (seg) {
        adapt_s_[i] = ad::Conv2d::create(ps_, "adapt_s" + li, w[i - 1], w[i], 1);
        make_gia("s", i);
      }
    }
    for (int k = 0; k < 2; ++k) {
      if (blur) head_b_[i][k] = ad::ResBlock::create(ps_, "head_b" + li + "." + std::to_string(k), w[i]);
      if (seg) head_s_[i][k] = ad::ResBlock::create(ps_, "head_s" + li + "." + std::to_string(k), w[i]);
    }
    if (both) make_gia("m", i);
  }
  if (both)
    for (int i = 0; i < kLevels; ++i) make_gia("l", i);

  std::int64_t total = 0;
  for (auto v : w) total += v;
  if (blur) {
    aux_b1_ = ad::Conv2d::create(ps_, "aux.b1", w[3], w[3], 3);
    aux_b2_ = ad::Conv2d::create(ps_, "aux.b2", w[3], 1, 1);
    final_b_ = ad::Conv2d::create(ps_, "final.b", total, 1, 3);
  }
  if (seg) {
    aux_s1_ = ad::Conv2d::create(ps_, "aux.s1", w[3], w[3], 3);
    aux_s2_ = ad::Conv2d::create(ps_, "aux.s2", w[3], cfg_.classes, 1);
    final_s_ = ad::Conv2d::create(ps_, "final.s", total, cfg_.classes, 3);
  }
}

const Gia* CmosLite::gia(const std::string& name) const {
  for (const auto& [n, g] : gias_)
    if (n == name) return &g;
  return nullptr;
}

std::pair<Var, Var> CmosLite::interact(const Gia* g, const Var& a, const Var& b) const {
  if (g) return g->forward(a, b);
  const auto& as = a.shape();
  const Var bb = (b.shape() == as) ? b : ad::bilinear_resize(b, as[2], as[3]);
  const Var s = ad::add(a, bb);
  return {s, s};
}

FeaturePyramid CmosLite::encode(const Var& x) const {
  const auto& s = x.shape();
  if (s.size() != 4 || s[1] != 3) throw ValidationError("encoder expects [N,3,H,W], got " + ad::to_string(s));
  if (s[2] < 16 || s[3] < 16) throw ValidationError("encoder input smaller than 16x16: " + ad::to_string(s));
  if (s[2] % 16 || s[3] % 16) throw ValidationError("encoder input dims must be multiples of 16");
  FeaturePyramid p;
  p.levels[3] = enc_[3](ad::relu(stem_(x)));
  Var t = ad::relu(down_[0](p.levels[3]));
  p.levels[2] = enc_[2](ad::relu(down_[1](t)));
  p.levels[1] = enc_[1](ad::relu(down_[2](p.levels[2])));
  p.levels[0] = enc_[0](ad::relu(down_[3](p.levels[1])));
  return p;
}

TaskFeatures CmosLite::stage2(const FeaturePyramid& pyr) const {
  const bool blur = cfg_.single_task != SingleTask::kSeg;
  const bool seg = cfg_.single_task != SingleTask::kBlur;
  TaskFeatures tf;
  for (int i = 0; i < kLevels; ++i) {
    const std::string li = std::to_string(i);
    Var fb = pyr.levels[i], fs = pyr.levels[i];
    if (i > 0) {
      if (blur) {
        auto [o1, o2] = interact(gia("b" + li), pyr.levels[i], adapt_b_[i](tf.blur_hat[i - 1]));
        fb = ad::add(o1, o2);
      }
      if (seg) {
        auto [o1, o2] = interact(gia("s" + li), pyr.levels[i], adapt_s_[i](tf.seg_hat[i - 1]));
        fs = ad::add(o1, o2);
      }
    }
    if (blur) tf.blur[i] = head_b_[i][1](head_b_[i][0](fb));
    if (seg) tf.seg[i] = head_s_[i][1](head_s_[i][0](fs));
    if (blur && seg) {
      auto [bh, sh] = interact(gia("m" + li), tf.blur[i], tf.seg[i]);
      tf.blur_hat[i] = bh;
      tf.seg_hat[i] = sh;
    } else {
      tf.blur_hat[i] = tf.blur[i];
      tf.seg_hat[i] = tf.seg[i];
    }
  }
  if (blur) tf.aux_blur = aux_b2_(ad::relu(aux_b1_(tf.blur_hat[3])));
  if (seg) tf.aux_seg = aux_s2_(ad::relu(aux_s1_(tf.seg_hat[3])));
  return tf;
}

CmosOutputs CmosLite::stage3(const TaskFeatures& tf) const {
  const bool blur = cfg_.single_task != SingleTask::kSeg;
  const bool seg = cfg_.single_task != SingleTask::kBlur;
  const Var& ref = blur ? tf.blur[3] : tf.seg[3];
  const std::int64_t h = ref.shape()[2], w = ref.shape()[3];
  std::vector<Var> fb, fs;
  for (int i = 0; i < kLevels; ++i) {
    Var b = tf.blur[i], s = tf.seg[i];
    if (blur && seg) std::tie(b, s) = interact(gia("l" + std::to_string(i)), tf.blur[i], tf.seg[i]);
    if (i < kLevels - 1) {
      if (blur) b = ad::bilinear_resize(b, h, w);
      if (seg) s = ad::bilinear_resize(s, h, w);
    }
    fb.push_back(b);
    fs.push_back(s);
  }
  CmosOutputs out;
  const std::int64_t sh = h * cfg_.scale, sw = w * cfg_.scale;
  if (blur) {
    out.blur = ad::bilinear_resize(final_b_(ad::concat(fb, 1)), sh, sw);
    out.aux_blur = tf.aux_blur;
  }
  if (seg) {
    out.seg = ad::bilinear_resize(final_s_(ad::concat(fs, 1)), sh, sw);
    out.aux_seg = tf.aux_seg;
  }
  return out;
}

CmosOutputs CmosLite::forward(const Var& x) const {
  const auto& s = x.shape();
  if (s.size() != 4) throw ValidationError("model input must be [N,3,H,W]");
  const std::int64_t h = s[2], w = s[3];
  if (h < 16 || w < 16) throw ValidationError("model input smaller than 16x16: " + ad::to_string(s));
  const std::int64_t hp = (h + 15) / 16 * 16, wp = (w + 15) / 16 * 16;
  const bool padded = hp != h || wp != w;
  const Var xin = padded ? ad::pad_replicate(x, 0, static_cast<int>(hp - h), 0, static_cast<int>(wp - w)) : x;
  CmosOutputs out = stage3(stage2(encode(xin)));
  if (padded) {
    const std::int64_t sc = cfg_.scale;
    auto crop_hr = [&](Var& v) {
      if (v.defined()) v = ad::crop(v, 0, 0, h * sc, w * sc);
    };
    auto crop_lr = [&](Var& v) {
      if (v.defined()) v = ad::crop(v, 0, 0, h, w);
    };
    crop_hr(out.blur);
    crop_hr(out.seg);
    crop_lr(out.aux_blur);
    crop_lr(out.aux_seg);
  }
  return out;
}

namespace {

std::vector<std::uint8_t> nearest_labels(const std::vector<std::uint8_t>& labels, std::int64_t n, std::int64_t h,
                                         std::int64_t w, std::int64_t oh, std::int64_t ow) {
  std::vector<std::uint8_t> out(static_cast<std::size_t>(n * oh * ow));
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t y = 0; y < oh; ++y) {
      const std::int64_t sy = std::min(h - 1, (2 * y + 1) * h / (2 * oh));
      for (std::int64_t x = 0; x < ow; ++x) {
        const std::int64_t sx = std::min(w - 1, (2 * x + 1) * w / (2 * ow));
        out[static_cast<std::size_t>((b * oh + y) * ow + x)] = labels[static_cast<std::size_t>((b * h + sy) * w + sx)];
      }
    }
  return out;
}

}  // namespace

LossTerms total_loss(const CmosOutputs& out, const Targets& gt, bool use_aux) {
  LossTerms t;
  std::vector<Var> terms;
  if (out.blur.defined()) {
    if (out.blur.shape() != gt.blur.shape())
      throw ValidationError("blur prediction " + ad::to_string(out.blur.shape()) + " vs target " +
                            ad::to_string(gt.blur.shape()));
    Var l3 = ad::l1_loss(out.blur, gt.blur);
    t.blur = l3.value()[0];
    terms.push_back(l3);
    if (use_aux && out.aux_blur.defined()) {
      const auto& as = out.aux_blur.shape();
      Var l1 = ad::l1_loss(out.aux_blur, ad::bilinear_resize(gt.blur, as[2], as[3]));
      t.aux_blur = l1.value()[0];
      terms.push_back(l1);
    }
  }
  if (out.seg.defined()) {
    const auto& ss = out.seg.shape();
    if (static_cast<std::int64_t>(gt.labels.size()) != ss[0] * ss[2] * ss[3])
      throw ValidationError("label target size does not match seg prediction " + ad::to_string(ss));
    Var l4 = ad::softmax_cross_entropy(out.seg, gt.labels, gt.ignore_value);
    t.seg = l4.value()[0];
    terms.push_back(l4);
    if (use_aux && out.aux_seg.defined()) {
      const auto& as = out.aux_seg.shape();
      const auto small = nearest_labels(gt.labels, ss[0], ss[2], ss[3], as[2], as[3]);
      Var l2 = ad::softmax_cross_entropy(out.aux_seg, small, gt.ignore_value);
      t.aux_seg = l2.value()[0];
      terms.push_back(l2);
    }
  }
  if (terms.empty()) throw ValidationError("total_loss: model produced no outputs");
  t.total = terms[0];
  for (std::size_t k = 1; k < terms.size(); ++k) t.total = ad::add(t.total, terms[k]);
  return t;
}

ad::Tensor images_to_tensor(const std::vector<const ImagePlane*>& images) {
  if (images.empty()) throw ValidationError("images_to_tensor: empty batch");
  const int h = images[0]->height(), w = images[0]->width();
  ad::Tensor t({static_cast<std::int64_t>(images.size()), 3, h, w});
  for (std::size_t b = 0; b < images.size(); ++b) {
    const ImagePlane& im = *images[b];
    if (im.channels() != 3 || im.height() != h || im.width() != w)
      throw ValidationError("images_to_tensor: images must be RGB of equal size");
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          t[((static_cast<std::int64_t>(b) * 3 + c) * h + y) * w + x] = static_cast<double>(im.at(y, x, c)) - 0.5;
  }
  return t;
}

Estimate estimate(const CmosLite& model, const ImagePlane& lr) {
  const CmosOutputs out = model.forward(Var(images_to_tensor({&lr})));
  const auto& cfg = model.config();
  const int sh = lr.height() * cfg.scale, sw = lr.width() * cfg.scale;
  Estimate e;
  if (out.blur.defined()) {
    e.blur = BlurMap(sh, sw);
    for (std::size_t i = 0; i < e.blur.data.size(); ++i)
      e.blur.data[i] = static_cast<float>(std::clamp(out.blur.value()[static_cast<std::int64_t>(i)], 0.0, cfg.sigma_max));
  }
  if (out.seg.defined()) {
    e.labels = LabelMap(sh, sw, cfg.classes);
    const double* z = out.seg.value().data();
    const std::int64_t hw = static_cast<std::int64_t>(sh) * sw;
    for (std::int64_t p = 0; p < hw; ++p) {
      int best = 0;
      for (int k = 1; k < cfg.classes; ++k)
        if (z[k * hw + p] > z[best * hw + p]) best = k;
      e.labels.data[static_cast<std::size_t>(p)] = static_cast<std::uint8_t>(best);
    }
  }
  return e;
}

CmosLite load_model(const std::filesystem::path& checkpoint) {
  const auto meta = ad::read_checkpoint_meta(checkpoint);
  if (!meta.contains("model")) throw ValidationError("checkpoint sidecar lacks a model section: " + checkpoint.string());
  CmosLite model(meta.at("model").get<CmosConfig>(), meta.value("seed", std::uint64_t{0}));
  ad::load_checkpoint(checkpoint, model.params());
  return model;
}

}  // namespace focalforge
