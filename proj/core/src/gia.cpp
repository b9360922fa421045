#include "focalforge/gia.hpp"

#include "focalforge/error.hpp"

namespace focalforge {

using ad::Var;

std::string to_string(Squash s) { return s == Squash::kSigmoid ? "sigmoid" : "none"; }

Squash squash_from_string(const std::string& s) {
  if (s == "none") return Squash::kNone;
  if (s == "sigmoid") return Squash::kSigmoid;
  throw ValidationError("attn_squash must be none or sigmoid, got '" + s + "'");
}

void GiaConfig::validate() const {
  if (channels < 1) throw ValidationError("gia channels must be positive");
  if (window < 1) throw ValidationError("gia window must be positive");
  if (channel_groups < 1 || channels % channel_groups != 0)
    throw ValidationError("gia channels (" + std::to_string(channels) + ") not divisible by channel_groups (" +
                          std::to_string(channel_groups) + ")");
}

Gia Gia::create(ad::ParameterSet& ps, const std::string& name, const GiaConfig& cfg) {
  cfg.validate();
  Gia g;
  g.cfg_ = cfg;
  const std::int64_t c = cfg.channels;
  const std::int64_t p = static_cast<std::int64_t>(cfg.window) * cfg.window;
  const std::int64_t ng = cfg.channel_groups;
  for (int i = 0; i < 2; ++i) {
    const std::string b = name + ".in" + std::to_string(i + 1);
    GiaBranch& br = g.br_[i];
    br.conv_in = ad::Conv2d::create(ps, b + ".conv_in", c, c, 3);
    br.group_proj = ad::Conv2d::create(ps, b + ".group_proj", c, c, 1);
    br.m_o = ad::Conv2d::create(ps, b + ".m_o", c, 1, 1);
    br.m_a = ad::Conv2d::create(ps, b + ".m_a", p, 1, 1);
    br.smooth = ad::Conv2d::create(ps, b + ".smooth", c, c, 3);
    br.mlp_o = ad::Affine::create(ps, b + ".mlp_o", c, c);
    br.mlp_a = ad::Affine::create(ps, b + ".mlp_a", ng * ng, c);
  }
  g.alpha_ = ps.create(name + ".alpha", {1}, ad::Init::kZeros);
  g.beta_ = ps.create(name + ".beta", {1}, ad::Init::kZeros);
  if (cfg.use_flow_align) g.flow_conv_ = ad::Conv2d::create(ps, name + ".flow", 2 * c, 2, 3, 1, true, ad::Init::kZeros);
  return g;
}

Var feature_group_interaction(const Var& g1, const Var& g2) {
  if (g1.shape() != g2.shape())
    throw ValidationError("feature_group_interaction: " + ad::to_string(g1.shape()) + " vs " +
                          ad::to_string(g2.shape()));
  return ad::matmul(g1, ad::permute(g2, {0, 2, 1}));
}

Var window_partition(const Var& x, int ws) {
  const auto& s = x.shape();
  if (s.size() != 4 || s[2] % ws != 0 || s[3] % ws != 0)
    throw ValidationError("window_partition: " + ad::to_string(s) + " not tiled by " + std::to_string(ws));
  const std::int64_t n = s[0], c = s[1], nh = s[2] / ws, nw = s[3] / ws;
  Var t = ad::reshape(x, {n, c, nh, ws, nw, ws});
  t = ad::permute(t, {0, 2, 4, 1, 3, 5});
  return ad::reshape(t, {n * nh * nw, c, ws, ws});
}

Var window_restore(const Var& windows, std::int64_t n, std::int64_t h, std::int64_t w, int ws) {
  const std::int64_t c = windows.shape()[1], nh = h / ws, nw = w / ws;
  Var t = ad::reshape(windows, {n, nh, nw, c, ws, ws});
  t = ad::permute(t, {0, 3, 1, 4, 2, 5});
  return ad::reshape(t, {n, c, h, w});
}

namespace {

Var squash(const Var& x, Squash s) { return s == Squash::kSigmoid ? ad::sigmoid(x) : x; }

std::int64_t round_up(std::int64_t v, int m) { return (v + m - 1) / m * m; }

}  // namespace

std::pair<Var, Var> Gia::spatial(const Var& f1, const Var& f2, GiaTrace* trace) const {
  if (f1.shape() != f2.shape())
    throw ValidationError("spatial interaction: " + ad::to_string(f1.shape()) + " vs " + ad::to_string(f2.shape()));
  const int ws = cfg_.window;
  const auto& s = f1.shape();
  const std::int64_t n = s[0], h = s[2], w = s[3];
  const std::int64_t hp = round_up(h, ws), wp = round_up(w, ws);
  const std::int64_t p = static_cast<std::int64_t>(ws) * ws;

  Var fw[2], groups[2];
  const Var* in[2] = {&f1, &f2};
  for (int i = 0; i < 2; ++i) {
    Var t = br_[i].conv_in(*in[i]);
    if (hp != h || wp != w) t = ad::pad_replicate(t, 0, static_cast<int>(hp - h), 0, static_cast<int>(wp - w));
    fw[i] = window_partition(t, ws);
    const std::int64_t b = fw[i].shape()[0];
    Var g = ad::reshape(br_[i].group_proj(fw[i]), {b, cfg_.channels, p});
    groups[i] = ad::permute(g, {0, 2, 1});  // [B, N = ws^2, D = C]
  }
  const Var fuse = feature_group_interaction(groups[0], groups[1]);  // [B, N1, N2]
  const std::int64_t b = fuse.shape()[0];
  // Input 1 reads rows of F_fuse, input 2 reads columns.
  const Var map1 = ad::reshape(ad::permute(fuse, {0, 2, 1}), {b, p, ws, ws});
  const Var map2 = ad::reshape(fuse, {b, p, ws, ws});
  const Var* maps[2] = {&map1, &map2};

  Var out[2];
  for (int i = 0; i < 2; ++i) {
    const Var mo = br_[i].m_o(fw[i]);
    const Var ma = br_[i].m_a(*maps[i]);
    const Var gate = squash(ad::add(mo, ad::mul(alpha_, ma)), cfg_.attn_squash);
    Var t = window_restore(ad::mul(fw[i], gate), n, hp, wp, ws);
    if (hp != h || wp != w) t = ad::crop(t, 0, 0, h, w);
    out[i] = br_[i].smooth(t);
    if (trace) {
      trace->f_w[i] = fw[i];
      trace->m_o[i] = mo;
      trace->m_a[i] = ma;
    }
  }
  return {out[0], out[1]};
}

std::pair<Var, Var> Gia::channel(const Var& f1, const Var& f2, GiaTrace* trace) const {
  if (f1.shape()[1] != f2.shape()[1]) throw ValidationError("channel interaction: channel counts differ");
  const std::int64_t n = f1.shape()[0], c = cfg_.channels, ng = cfg_.channel_groups;
  const Var* in[2] = {&f1, &f2};
  Var ao[2], groups[2];
  for (int i = 0; i < 2; ++i) {
    ao[i] = br_[i].mlp_o(ad::global_avg_pool(*in[i]));
    groups[i] = ad::reshape(ao[i], {n, ng, c / ng});
  }
  const Var flat = ad::reshape(feature_group_interaction(groups[0], groups[1]), {n, ng * ng});
  Var out[2];
  for (int i = 0; i < 2; ++i) {
    const Var aa = br_[i].mlp_a(flat);
    const Var gate = squash(ad::add(ao[i], ad::mul(beta_, aa)), cfg_.attn_squash);
    out[i] = ad::mul(*in[i], ad::reshape(gate, {n, c, 1, 1}));
    if (trace) {
      trace->a_o[i] = ao[i];
      trace->a_a[i] = aa;
    }
  }
  return {out[0], out[1]};
}

Var Gia::flow_align(const Var& f_hi, const Var& f_lo) const {
  const auto& hs = f_hi.shape();
  const auto& ls = f_lo.shape();
  if (ls[2] > hs[2] || ls[3] > hs[3])
    throw ValidationError("flow_align: low-resolution input " + ad::to_string(ls) + " larger than " +
                          ad::to_string(hs));
  const Var up = ad::bilinear_resize(f_lo, hs[2], hs[3]);
  if (!cfg_.use_flow_align) return up;
  const Var flow = flow_conv_(ad::concat({f_hi, up}, 1));
  return ad::grid_sample_flow(up, flow);
}

std::pair<Var, Var> Gia::forward(const Var& f1, const Var& f2, GiaTrace* trace) const {
  if (f1.shape().size() != 4 || f2.shape().size() != 4 || f1.shape()[1] != cfg_.channels ||
      f2.shape()[1] != cfg_.channels || f1.shape()[0] != f2.shape()[0])
    throw ValidationError("gia: inputs " + ad::to_string(f1.shape()) + " and " + ad::to_string(f2.shape()) +
                          " do not match " + std::to_string(cfg_.channels) + " channels");
  const Var aligned = flow_align(f1, f2);
  if (trace) trace->aligned = aligned;
  auto [s1, s2] = spatial(f1, aligned, trace);
  auto [c1, c2] = channel(f1, aligned, trace);
  return {ad::add(s1, c1), ad::add(s2, c2)};
}

}  // namespace focalforge
