#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "qsep/rng.hpp"
#include "qsep/spectral.hpp"

namespace qsep {

template <typename T>
struct Tensor3 {
  int ch = 0, h = 0, w = 0;
  std::vector<T> v;

  Tensor3() = default;
  Tensor3(int c, int hh, int ww) : ch(c), h(hh), w(ww) {
    v.assign(static_cast<std::size_t>(c) * hh * ww, T(0));
  }
  T& at(int c, int y, int x) {
    return v[(static_cast<std::size_t>(c) * h + y) * w + x];
  }
  T at(int c, int y, int x) const {
    return v[(static_cast<std::size_t>(c) * h + y) * w + x];
  }
  T* plane(int c) { return v.data() + static_cast<std::size_t>(c) * h * w; }
  const T* plane(int c) const {
    return v.data() + static_cast<std::size_t>(c) * h * w;
  }
  std::size_t size() const { return v.size(); }
};

struct ModelHyper {
  int depth = 5;
  int k = 8;           // intermediate mask channels
  int embed_dim = 64;  // query feature dimension
  int base_width = 8;  // encoder width grows as base_width * (level + 1)
};

// Analysis parameters a saved model was trained under; stored in the
// checkpoint so inference can rebuild the same front end.
struct SpectralParams {
  int fft_size = 512;
  int hop = 128;
  int window_size = 512;
  int sample_rate = 8000;
};

namespace detail {

constexpr double kLeakySlope = 0.1;
constexpr double kPreClamp = 30.0;

template <typename T>
inline void leaky_relu_inplace(Tensor3<T>& t) {
  for (T& x : t.v)
    if (x < T(0)) x *= T(kLeakySlope);
}

// 3x3 convolution, zero padding 1, stride 1 or 2. Output size is
// (h + stride - 1) / stride per axis. The tap loops sit outside the
// spatial loops so the innermost loop is a clean fused multiply-add
// stream the compiler can vectorize.
template <typename T>
inline void conv3x3(const Tensor3<T>& in, const T* wgt, const T* bias,
                    int out_ch, int stride, Tensor3<T>& out) {
  const int oh = (in.h + stride - 1) / stride;
  const int ow = (in.w + stride - 1) / stride;
  out = Tensor3<T>(out_ch, oh, ow);
  for (int oc = 0; oc < out_ch; ++oc) {
    T* op = out.plane(oc);
    const T b = bias[oc];
    for (int i = 0; i < oh * ow; ++i) op[i] = b;
    for (int ic = 0; ic < in.ch; ++ic) {
      const T* ip = in.plane(ic);
      const T* wp = wgt + (static_cast<std::size_t>(oc) * in.ch + ic) * 9;
      for (int dy = -1; dy <= 1; ++dy) {
        // oy*stride + dy must land in [0, in.h)
        const int oy_lo = std::max(0, (-dy + stride - 1) / stride);
        const int oy_hi = std::min(oh - 1, (in.h - 1 - dy) / stride);
        for (int dx = -1; dx <= 1; ++dx) {
          const T wv = wp[(dy + 1) * 3 + (dx + 1)];
          const int ox_lo = std::max(0, (-dx + stride - 1) / stride);
          const int ox_hi = std::min(ow - 1, (in.w - 1 - dx) / stride);
          for (int oy = oy_lo; oy <= oy_hi; ++oy) {
            const T* irow = ip + (oy * stride + dy) * in.w + dx;
            T* orow = op + oy * ow;
            if (stride == 1) {
              for (int ox = ox_lo; ox <= ox_hi; ++ox)
                orow[ox] += wv * irow[ox];
            } else {
              for (int ox = ox_lo; ox <= ox_hi; ++ox)
                orow[ox] += wv * irow[ox * stride];
            }
          }
        }
      }
    }
  }
}

// Gradients of conv3x3 with respect to input, weights and bias.
// g_in may be null when the input needs no gradient (network input).
template <typename T>
inline void conv3x3_backward(const Tensor3<T>& in, const T* wgt,
                             const Tensor3<T>& g_out, int stride, T* g_wgt,
                             T* g_bias, Tensor3<T>* g_in) {
  const int out_ch = g_out.ch, oh = g_out.h, ow = g_out.w;
  if (g_in != nullptr) *g_in = Tensor3<T>(in.ch, in.h, in.w);
  for (int oc = 0; oc < out_ch; ++oc) {
    const T* gp = g_out.plane(oc);
    T acc_b = T(0);
    for (int i = 0; i < oh * ow; ++i) acc_b += gp[i];
    g_bias[oc] += acc_b;
    for (int ic = 0; ic < in.ch; ++ic) {
      const T* ip = in.plane(ic);
      T* gip = g_in != nullptr ? g_in->plane(ic) : nullptr;
      const std::size_t wbase =
          (static_cast<std::size_t>(oc) * in.ch + ic) * 9;
      for (int dy = -1; dy <= 1; ++dy) {
        const int oy_lo = std::max(0, (-dy + stride - 1) / stride);
        const int oy_hi = std::min(oh - 1, (in.h - 1 - dy) / stride);
        for (int dx = -1; dx <= 1; ++dx) {
          const int ox_lo = std::max(0, (-dx + stride - 1) / stride);
          const int ox_hi = std::min(ow - 1, (in.w - 1 - dx) / stride);
          const T wv = wgt[wbase + (dy + 1) * 3 + (dx + 1)];
          T acc_w = T(0);
          for (int oy = oy_lo; oy <= oy_hi; ++oy) {
            const T* irow = ip + (oy * stride + dy) * in.w + dx;
            const T* grow = gp + oy * ow;
            if (stride == 1) {
              for (int ox = ox_lo; ox <= ox_hi; ++ox)
                acc_w += grow[ox] * irow[ox];
            } else {
              for (int ox = ox_lo; ox <= ox_hi; ++ox)
                acc_w += grow[ox] * irow[ox * stride];
            }
          }
          if (gip != nullptr) {
            for (int oy = oy_lo; oy <= oy_hi; ++oy) {
              T* girow = gip + (oy * stride + dy) * in.w + dx;
              const T* grow = gp + oy * ow;
              if (stride == 1) {
                for (int ox = ox_lo; ox <= ox_hi; ++ox)
                  girow[ox] += wv * grow[ox];
              } else {
                for (int ox = ox_lo; ox <= ox_hi; ++ox)
                  girow[ox * stride] += wv * grow[ox];
              }
            }
          }
          g_wgt[wbase + (dy + 1) * 3 + (dx + 1)] += acc_w;
        }
      }
    }
  }
}

template <typename T>
inline Tensor3<T> upsample2(const Tensor3<T>& in) {
  Tensor3<T> out(in.ch, in.h * 2, in.w * 2);
  for (int c = 0; c < in.ch; ++c) {
    const T* ip = in.plane(c);
    T* op = out.plane(c);
    for (int y = 0; y < out.h; ++y) {
      const T* irow = ip + (y / 2) * in.w;
      T* orow = op + y * out.w;
      for (int x = 0; x < out.w; ++x) orow[x] = irow[x / 2];
    }
  }
  return out;
}

template <typename T>
inline Tensor3<T> upsample2_backward(const Tensor3<T>& g_out, int in_h,
                                     int in_w) {
  Tensor3<T> g_in(g_out.ch, in_h, in_w);
  for (int c = 0; c < g_out.ch; ++c) {
    const T* gp = g_out.plane(c);
    T* gip = g_in.plane(c);
    for (int y = 0; y < g_out.h; ++y) {
      T* girow = gip + (y / 2) * in_w;
      const T* grow = gp + y * g_out.w;
      for (int x = 0; x < g_out.w; ++x) girow[x / 2] += grow[x];
    }
  }
  return g_in;
}

template <typename T>
inline Tensor3<T> concat_channels(const Tensor3<T>& a, const Tensor3<T>& b) {
  Tensor3<T> out(a.ch + b.ch, a.h, a.w);
  std::copy(a.v.begin(), a.v.end(), out.v.begin());
  std::copy(b.v.begin(), b.v.end(), out.v.begin() + a.v.size());
  return out;
}

}  // namespace detail

// Query-conditioned masking network. A small strided-convolution
// encoder/decoder with skip connections maps the log-magnitude
// spectrogram to k intermediate masks; a per-query head projects the
// query feature to k channel gains and squashes the weighted sum of the
// intermediate masks into one soft mask. The expensive image-to-masks
// pass depends only on the mixture, so many queries (or many negative-
// query strengths) can reuse one backbone evaluation.
template <typename T>
class SeparationModelT {
 public:
  struct TensorSpec {
    std::string name;
    std::vector<int> shape;
    std::size_t offset = 0;
    std::size_t count = 0;
  };

  explicit SeparationModelT(const ModelHyper& hy) : hy_(hy) {
    if (hy.depth < 1 || hy.depth > 8)
      throw std::invalid_argument("model depth must be in [1, 8]");
    if (hy.k < 1 || hy.embed_dim < 1 || hy.base_width < 1 || hy.k > 4096 ||
        hy.embed_dim > 65536 || hy.base_width > 4096)
      throw std::invalid_argument("model sizes out of range");
    build_layout();
    params_.assign(total_, T(0));
    grads_.assign(total_, T(0));
  }

  const ModelHyper& hyper() const { return hy_; }
  int width(int level) const { return hy_.base_width * (level + 1); }
  std::size_t param_count() const { return total_; }
  std::vector<T>& params() { return params_; }
  const std::vector<T>& params() const { return params_; }
  std::vector<T>& grads() { return grads_; }
  const std::vector<T>& grads() const { return grads_; }
  const std::vector<TensorSpec>& layout() const { return layout_; }

  void zero_grads() { std::fill(grads_.begin(), grads_.end(), T(0)); }

  // Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) weights, zero biases.
  void init_params(std::uint64_t seed) {
    Rng rng(mix_seed({seed, 0x1417ull}));
    for (const auto& spec : layout_) {
      T* p = params_.data() + spec.offset;
      const bool is_bias = spec.shape.size() == 1 &&
                           (spec.name.ends_with(".b") ||
                            spec.name.ends_with(".bq"));
      if (is_bias) {
        for (std::size_t i = 0; i < spec.count; ++i) p[i] = T(0);
        continue;
      }
      std::size_t fan_in = 1;
      for (std::size_t d = 1; d < spec.shape.size(); ++d)
        fan_in *= static_cast<std::size_t>(spec.shape[d]);
      if (spec.name == "head.cw") fan_in = static_cast<std::size_t>(hy_.k);
      const double lim = 1.0 / std::sqrt(static_cast<double>(fan_in));
      for (std::size_t i = 0; i < spec.count; ++i)
        p[i] = static_cast<T>(rng.uniform(-lim, lim));
    }
  }

  struct Cache {
    Tensor3<T> a0;                     // padded log-magnitude input
    std::vector<Tensor3<T>> enc_act;   // depth activations
    std::vector<Tensor3<T>> dec_cat;   // inputs to the depth decoder convs
    std::vector<Tensor3<T>> dec_act;   // depth-1 decoder activations
    int frames = 0, bins = 0;          // unpadded size
  };

  // Mixture magnitude -> k intermediate masks (cropped to frames x bins).
  // `cache` may be null when no backward pass will follow.
  Tensor3<T> intermediate_masks(const Grid& mag, Cache* cache) const {
    const int L = hy_.depth;
    const int mult = 1 << L;
    const int hp = ((mag.frames + mult - 1) / mult) * mult;
    const int wp = ((mag.bins + mult - 1) / mult) * mult;
    Tensor3<T> a0(1, hp, wp);
    for (int y = 0; y < mag.frames; ++y)
      for (int x = 0; x < mag.bins; ++x)
        a0.at(0, y, x) =
            static_cast<T>(std::log1p(static_cast<double>(mag.at(y, x))));

    Cache local;
    Cache& cc = cache != nullptr ? *cache : local;
    cc.frames = mag.frames;
    cc.bins = mag.bins;
    cc.enc_act.clear();
    cc.dec_cat.clear();
    cc.dec_act.clear();

    Tensor3<T> x = a0;
    for (int i = 0; i < L; ++i) {
      Tensor3<T> y;
      detail::conv3x3(x, pw(enc_w_[i]), pw(enc_b_[i]), width(i), 2, y);
      detail::leaky_relu_inplace(y);
      cc.enc_act.push_back(y);
      x = std::move(y);
    }
    for (int c = 0; c < L - 1; ++c) {
      Tensor3<T> u = detail::upsample2(x);
      const Tensor3<T>& skip = cc.enc_act[L - 2 - c];
      Tensor3<T> cat = detail::concat_channels(u, skip);
      Tensor3<T> y;
      detail::conv3x3(cat, pw(dec_w_[c]), pw(dec_b_[c]), width(L - 2 - c), 1,
                      y);
      detail::leaky_relu_inplace(y);
      cc.dec_cat.push_back(std::move(cat));
      cc.dec_act.push_back(y);
      x = std::move(y);
    }
    {
      Tensor3<T> u = detail::upsample2(x);
      Tensor3<T> cat = detail::concat_channels(u, a0);
      Tensor3<T> y;
      detail::conv3x3(cat, pw(final_w_), pw(final_b_), hy_.k, 1, y);
      cc.dec_cat.push_back(std::move(cat));
      x = std::move(y);  // linear output
    }
    cc.a0 = std::move(a0);

    Tensor3<T> out(hy_.k, mag.frames, mag.bins);
    for (int c = 0; c < hy_.k; ++c)
      for (int y = 0; y < mag.frames; ++y)
        for (int xx = 0; xx < mag.bins; ++xx)
          out.at(c, y, xx) = x.at(c, y, xx);
    if (cache != nullptr) cc.dec_act.push_back(std::move(x));  // padded out
    return out;
  }

  struct HeadCache {
    std::vector<double> query;
    std::vector<T> q;      // projected query, k values
    std::vector<T> gains;  // channel weight * q, k values
    std::vector<T> pre;    // raw pre-activation, frames*bins
  };

  // Combine intermediate masks under one query feature:
  // mask = sigmoid(sum_j cw[j] * (Wq q + bq)[j] * mtilde_j + b),
  // the pre-activation clamped to +-30 before the sigmoid.
  std::vector<T> combine(const Tensor3<T>& mtilde,
                         const std::vector<double>& query,
                         HeadCache* hc) const {
    if (static_cast<int>(query.size()) != hy_.embed_dim)
      throw std::invalid_argument("combine: query dimension mismatch");
    if (mtilde.ch != hy_.k)
      throw std::invalid_argument("combine: channel count mismatch");
    const int n = mtilde.h * mtilde.w;
    std::vector<T> q(hy_.k), gains(hy_.k);
    const T* wq = pw(head_wq_);
    const T* bq = pw(head_bq_);
    const T* cw = pw(head_cw_);
    const T bias = params_[layout_[head_b_].offset];
    for (int j = 0; j < hy_.k; ++j) {
      double acc = static_cast<double>(bq[j]);
      const T* row = wq + static_cast<std::size_t>(j) * hy_.embed_dim;
      for (int d = 0; d < hy_.embed_dim; ++d)
        acc += static_cast<double>(row[d]) * query[d];
      q[j] = static_cast<T>(acc);
      gains[j] = cw[j] * q[j];
    }
    std::vector<T> pre(static_cast<std::size_t>(n), bias);
    for (int j = 0; j < hy_.k; ++j) {
      const T g = gains[j];
      const T* mp = mtilde.plane(j);
      for (int i = 0; i < n; ++i) pre[i] += g * mp[i];
    }
    std::vector<T> mhat(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      const double pr = std::clamp(static_cast<double>(pre[i]),
                                   -detail::kPreClamp, detail::kPreClamp);
      mhat[i] = static_cast<T>(1.0 / (1.0 + std::exp(-pr)));
    }
    if (hc != nullptr) {
      hc->query = query;
      hc->q = std::move(q);
      hc->gains = std::move(gains);
      hc->pre = std::move(pre);
    }
    return mhat;
  }

  // Accumulates head parameter gradients and the gradient with respect
  // to the intermediate masks. g_mhat is dLoss/dmask; g_mtilde must be
  // pre-sized k x frames x bins (accumulated into, so several queries
  // against one backbone pass can sum their contributions).
  void head_backward(const Tensor3<T>& mtilde, const HeadCache& hc,
                     const std::vector<T>& g_mhat,
                     Tensor3<T>& g_mtilde) const {
    const int n = mtilde.h * mtilde.w;
    const T* cw = pw(head_cw_);
    T* g_wq = grads_.data() + layout_[head_wq_].offset;
    T* g_bq = grads_.data() + layout_[head_bq_].offset;
    T* g_cw = grads_.data() + layout_[head_cw_].offset;
    T* g_b = grads_.data() + layout_[head_b_].offset;

    std::vector<T> g_pre(static_cast<std::size_t>(n));
    double acc_bias = 0.0;
    for (int i = 0; i < n; ++i) {
      const double pr = static_cast<double>(hc.pre[i]);
      if (pr <= -detail::kPreClamp || pr >= detail::kPreClamp) {
        g_pre[i] = T(0);
        continue;
      }
      const double s = 1.0 / (1.0 + std::exp(-pr));
      g_pre[i] = static_cast<T>(static_cast<double>(g_mhat[i]) * s * (1.0 - s));
      acc_bias += static_cast<double>(g_pre[i]);
    }
    g_b[0] += static_cast<T>(acc_bias);

    for (int j = 0; j < hy_.k; ++j) {
      const T* mp = mtilde.plane(j);
      T* gmp = g_mtilde.plane(j);
      double acc_g = 0.0;
      const T gj = hc.gains[j];
      for (int i = 0; i < n; ++i) {
        acc_g += static_cast<double>(g_pre[i]) * static_cast<double>(mp[i]);
        gmp[i] += gj * g_pre[i];
      }
      const T g_gain = static_cast<T>(acc_g);
      g_cw[j] += g_gain * hc.q[j];
      const T g_q = g_gain * cw[j];
      g_bq[j] += g_q;
      T* grow = g_wq + static_cast<std::size_t>(j) * hy_.embed_dim;
      for (int d = 0; d < hy_.embed_dim; ++d)
        grow[d] += g_q * static_cast<T>(hc.query[d]);
    }
  }

  // Backpropagates the (cropped) intermediate-mask gradient through the
  // network, accumulating parameter gradients.
  void backbone_backward(const Cache& cc, const Tensor3<T>& g_mtilde) const {
    const int L = hy_.depth;
    const Tensor3<T>& out_padded = cc.dec_act.back();
    Tensor3<T> g_out(out_padded.ch, out_padded.h, out_padded.w);
    for (int c = 0; c < hy_.k; ++c)
      for (int y = 0; y < cc.frames; ++y)
        for (int x = 0; x < cc.bins; ++x)
          g_out.at(c, y, x) = g_mtilde.at(c, y, x);

    std::vector<Tensor3<T>> g_enc(L);

    // final conv (linear)
    Tensor3<T> g_cat;
    detail::conv3x3_backward(cc.dec_cat[L - 1], pw(final_w_), g_out, 1,
                             gw(final_w_), gw(final_b_), &g_cat);
    const int up_ch0 = width(0);
    Tensor3<T> g_up(up_ch0, g_cat.h, g_cat.w);
    std::copy(g_cat.v.begin(),
              g_cat.v.begin() + static_cast<std::size_t>(up_ch0) * g_cat.h *
                                    g_cat.w,
              g_up.v.begin());
    Tensor3<T> g_x = detail::upsample2_backward(g_up, g_cat.h / 2,
                                                g_cat.w / 2);

    for (int c = L - 2; c >= 0; --c) {
      // g_x is the gradient at dec_act[c]
      const Tensor3<T>& act = cc.dec_act[c];
      Tensor3<T> g_pre(act.ch, act.h, act.w);
      for (std::size_t i = 0; i < act.v.size(); ++i)
        g_pre.v[i] = act.v[i] > T(0) ? g_x.v[i]
                                     : g_x.v[i] * T(detail::kLeakySlope);
      Tensor3<T> g_cat_c;
      detail::conv3x3_backward(cc.dec_cat[c], pw(dec_w_[c]), g_pre, 1,
                               gw(dec_w_[c]), gw(dec_b_[c]), &g_cat_c);
      const int skip_level = L - 2 - c;
      const int skip_ch = width(skip_level);
      const int u_ch = g_cat_c.ch - skip_ch;
      Tensor3<T> g_u(u_ch, g_cat_c.h, g_cat_c.w);
      std::copy(g_cat_c.v.begin(),
                g_cat_c.v.begin() +
                    static_cast<std::size_t>(u_ch) * g_cat_c.h * g_cat_c.w,
                g_u.v.begin());
      Tensor3<T>& ge = g_enc[skip_level];
      ge = Tensor3<T>(skip_ch, g_cat_c.h, g_cat_c.w);
      std::copy(g_cat_c.v.begin() +
                    static_cast<std::size_t>(u_ch) * g_cat_c.h * g_cat_c.w,
                g_cat_c.v.end(), ge.v.begin());
      g_x = detail::upsample2_backward(g_u, g_cat_c.h / 2, g_cat_c.w / 2);
    }

    // g_x now belongs to enc_act[L-1]
    if (g_enc[L - 1].size() == 0)
      g_enc[L - 1] = Tensor3<T>(g_x.ch, g_x.h, g_x.w);
    for (std::size_t i = 0; i < g_x.v.size(); ++i)
      g_enc[L - 1].v[i] += g_x.v[i];

    for (int i = L - 1; i >= 0; --i) {
      const Tensor3<T>& act = cc.enc_act[i];
      Tensor3<T> g_pre(act.ch, act.h, act.w);
      for (std::size_t j = 0; j < act.v.size(); ++j)
        g_pre.v[j] = act.v[j] > T(0)
                         ? g_enc[i].v[j]
                         : g_enc[i].v[j] * T(detail::kLeakySlope);
      const Tensor3<T>& in = i == 0 ? cc.a0 : cc.enc_act[i - 1];
      Tensor3<T> g_in;
      detail::conv3x3_backward(in, pw(enc_w_[i]), g_pre, 2, gw(enc_w_[i]),
                               gw(enc_b_[i]), i > 0 ? &g_in : nullptr);
      if (i > 0)
        for (std::size_t j = 0; j < g_in.v.size(); ++j)
          g_enc[i - 1].v[j] += g_in.v[j];
    }
  }

  // ---- checkpoint ----------------------------------------------------

  static constexpr char kMagic[] = "QSEPMODL";
  static constexpr std::uint32_t kVersion = 1;

  void save(const std::string& path, const SpectralParams& sp) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("model save: cannot open " + path);
    os.write(kMagic, 8);
    put_u32(os, kVersion);
    for (int v : {hy_.depth, hy_.k, hy_.embed_dim, hy_.base_width,
                  sp.fft_size, sp.hop, sp.window_size, sp.sample_rate})
      put_u32(os, static_cast<std::uint32_t>(v));
    put_u32(os, static_cast<std::uint32_t>(layout_.size()));
    for (const auto& spec : layout_) {
      put_u32(os, static_cast<std::uint32_t>(spec.shape.size()));
      for (int d : spec.shape) put_u32(os, static_cast<std::uint32_t>(d));
      const T* p = params_.data() + spec.offset;
      for (std::size_t i = 0; i < spec.count; ++i) {
        const float f = static_cast<float>(p[i]);
        std::uint32_t u;
        std::memcpy(&u, &f, 4);
        put_u32(os, u);
      }
    }
    if (!os) throw std::runtime_error("model save: write failed: " + path);
  }

  static SeparationModelT load(const std::string& path, SpectralParams* sp) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("model load: cannot open " + path);
    char magic[8];
    if (!is.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0)
      throw std::runtime_error("model load: bad magic in " + path);
    if (get_u32(is) != kVersion)
      throw std::runtime_error("model load: unsupported version");
    ModelHyper hy;
    hy.depth = static_cast<int>(get_u32(is));
    hy.k = static_cast<int>(get_u32(is));
    hy.embed_dim = static_cast<int>(get_u32(is));
    hy.base_width = static_cast<int>(get_u32(is));
    SpectralParams sph;
    sph.fft_size = static_cast<int>(get_u32(is));
    sph.hop = static_cast<int>(get_u32(is));
    sph.window_size = static_cast<int>(get_u32(is));
    sph.sample_rate = static_cast<int>(get_u32(is));
    if (sp != nullptr) *sp = sph;
    SeparationModelT model(hy);
    const std::uint32_t n_tensors = get_u32(is);
    if (n_tensors != model.layout_.size())
      throw std::runtime_error("model load: tensor count mismatch");
    for (const auto& spec : model.layout_) {
      const std::uint32_t rank = get_u32(is);
      if (rank != spec.shape.size())
        throw std::runtime_error("model load: tensor rank mismatch");
      for (int d : spec.shape)
        if (get_u32(is) != static_cast<std::uint32_t>(d))
          throw std::runtime_error("model load: tensor shape mismatch");
      T* p = model.params_.data() + spec.offset;
      for (std::size_t i = 0; i < spec.count; ++i) {
        const std::uint32_t u = get_u32(is);
        float f;
        std::memcpy(&f, &u, 4);
        p[i] = static_cast<T>(f);
      }
    }
    return model;
  }

 private:
  static void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
  }
  static std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4))
      throw std::runtime_error("model load: truncated file");
    return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) |
           (std::uint32_t(b[2]) << 16) | (std::uint32_t(b[3]) << 24);
  }

  std::size_t add_tensor(const std::string& name, std::vector<int> shape) {
    TensorSpec spec;
    spec.name = name;
    spec.shape = std::move(shape);
    spec.offset = total_;
    spec.count = 1;
    for (int d : spec.shape) spec.count *= static_cast<std::size_t>(d);
    total_ += spec.count;
    layout_.push_back(std::move(spec));
    return layout_.size() - 1;
  }

  void build_layout() {
    const int L = hy_.depth;
    total_ = 0;
    for (int i = 0; i < L; ++i) {
      const int in_ch = i == 0 ? 1 : width(i - 1);
      enc_w_.push_back(add_tensor("enc" + std::to_string(i) + ".w",
                                  {width(i), in_ch, 3, 3}));
      enc_b_.push_back(
          add_tensor("enc" + std::to_string(i) + ".b", {width(i)}));
    }
    for (int c = 0; c < L - 1; ++c) {
      const int in_ch = width(L - 1 - c) + width(L - 2 - c);
      dec_w_.push_back(add_tensor("dec" + std::to_string(c) + ".w",
                                  {width(L - 2 - c), in_ch, 3, 3}));
      dec_b_.push_back(
          add_tensor("dec" + std::to_string(c) + ".b", {width(L - 2 - c)}));
    }
    final_w_ = add_tensor("final.w", {hy_.k, width(0) + 1, 3, 3});
    final_b_ = add_tensor("final.b", {hy_.k});
    head_wq_ = add_tensor("head.wq", {hy_.k, hy_.embed_dim});
    head_bq_ = add_tensor("head.bq", {hy_.k});
    head_cw_ = add_tensor("head.cw", {hy_.k});
    head_b_ = add_tensor("head.b", {1});
  }

  const T* pw(std::size_t idx) const {
    return params_.data() + layout_[idx].offset;
  }
  T* gw(std::size_t idx) const { return grads_.data() + layout_[idx].offset; }

  ModelHyper hy_;
  std::vector<TensorSpec> layout_;
  std::size_t total_ = 0;
  std::vector<T> params_;
  mutable std::vector<T> grads_;
  std::vector<std::size_t> enc_w_, enc_b_, dec_w_, dec_b_;
  std::size_t final_w_ = 0, final_b_ = 0;
  std::size_t head_wq_ = 0, head_bq_ = 0, head_cw_ = 0, head_b_ = 0;
};

using SeparationModel = SeparationModelT<float>;

}  // namespace qsep
