#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "qsep/embedding.hpp"
#include "qsep/rng.hpp"
#include "qsep/sepnet.hpp"
#include "qsep/spectral.hpp"
#include "qsep/synthdata.hpp"

namespace qsep {

// Weighted binary cross-entropy between a target mask and a predicted
// soft mask, each cell weighted by the mixture magnitude and the total
// normalized by the weight mass. Predictions are clamped to
// [1e-7, 1 - 1e-7] inside the log terms; where the clamp binds, the
// gradient is zero (matching the clamped forward exactly).
template <typename T>
inline double wbce_loss(const Grid& weight, const Grid& target,
                        const std::vector<T>& mhat,
                        std::vector<T>* g_mhat = nullptr,
                        double grad_scale = 1.0) {
  const std::size_t n = weight.v.size();
  if (target.v.size() != n || mhat.size() != n)
    throw std::invalid_argument("wbce_loss: size mismatch");
  constexpr double lo = 1e-7, hi = 1.0 - 1e-7;
  double wsum = 0.0;
  for (std::size_t i = 0; i < n; ++i) wsum += static_cast<double>(weight.v[i]);
  const double norm = wsum + 1e-8;
  if (g_mhat != nullptr) g_mhat->assign(n, T(0));
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = static_cast<double>(weight.v[i]);
    const double m = static_cast<double>(target.v[i]);
    const double raw = static_cast<double>(mhat[i]);
    const double p = std::clamp(raw, lo, hi);
    loss += x * -(m * std::log(p) + (1.0 - m) * std::log1p(-p));
    if (g_mhat != nullptr && raw > lo && raw < hi) {
      (*g_mhat)[i] = static_cast<T>(grad_scale * x * (p - m) /
                                    (p * (1.0 - p)) / norm);
    }
  }
  return loss / norm;
}

// Loss for one mixture: the backbone runs once, each source's query is
// combined and scored against its own target mask, and gradients (when
// requested) accumulate into the model. Returns the mean per-source
// loss.
template <typename T>
inline double example_loss(SeparationModelT<T>& model, const Grid& mix_mag,
                           const std::vector<Grid>& targets,
                           const std::vector<std::vector<double>>& queries,
                           bool with_grad) {
  if (targets.size() != queries.size() || targets.empty())
    throw std::invalid_argument("example_loss: sources/queries mismatch");
  typename SeparationModelT<T>::Cache cache;
  Tensor3<T> mtilde =
      model.intermediate_masks(mix_mag, with_grad ? &cache : nullptr);
  Tensor3<T> g_mtilde;
  if (with_grad) g_mtilde = Tensor3<T>(mtilde.ch, mtilde.h, mtilde.w);
  const double scale = 1.0 / static_cast<double>(targets.size());
  double total = 0.0;
  std::vector<T> g_mhat;
  for (std::size_t s = 0; s < targets.size(); ++s) {
    typename SeparationModelT<T>::HeadCache hc;
    std::vector<T> mhat = model.combine(mtilde, queries[s], &hc);
    total += scale * wbce_loss<T>(mix_mag, targets[s], mhat,
                                  with_grad ? &g_mhat : nullptr, scale);
    if (with_grad) model.head_backward(mtilde, hc, g_mhat, g_mtilde);
  }
  if (with_grad) model.backbone_backward(cache, g_mtilde);
  return total;
}

// ---- optimizer -------------------------------------------------------------

// Adam with bias correction; first/second moments kept in double no
// matter the parameter precision.
struct AdamState {
  std::vector<double> m, v;
  std::int64_t t = 0;

  explicit AdamState(std::size_t n) : m(n, 0.0), v(n, 0.0) {}
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
inline void adam_step(std::vector<T>& params, const std::vector<T>& grads,
                      AdamState& st, double lr, const AdamConfig& cfg = {}) {
  if (params.size() != grads.size() || params.size() != st.m.size())
    throw std::invalid_argument("adam_step: size mismatch");
  st.t += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = static_cast<double>(grads[i]);
    st.m[i] = cfg.beta1 * st.m[i] + (1.0 - cfg.beta1) * g;
    st.v[i] = cfg.beta2 * st.v[i] + (1.0 - cfg.beta2) * g * g;
    const double mhat = st.m[i] / bc1;
    const double vhat = st.v[i] / bc2;
    params[i] = static_cast<T>(static_cast<double>(params[i]) -
                               lr * mhat / (std::sqrt(vhat) + cfg.eps));
  }
}

// Linear ramp from 0 to peak over `warmup` steps, constant afterwards.
inline double lr_schedule(int step, double peak_lr, int warmup) {
  if (warmup <= 0 || step >= warmup) return peak_lr;
  return peak_lr * static_cast<double>(step + 1) / static_cast<double>(warmup);
}

// Global-norm clipping; returns the pre-clip norm.
template <typename T>
inline double clip_gradients(std::vector<T>& grads, double max_norm) {
  double sq = 0.0;
  for (const T& g : grads) {
    const double d = static_cast<double>(g);
    sq += d * d;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (T& g : grads) g = static_cast<T>(static_cast<double>(g) * s);
  }
  return norm;
}

// ---- example assembly ------------------------------------------------------

struct TrainConfig {
  int steps = 3000;
  int batch_size = 8;
  double peak_lr = 2e-3;
  int warmup_steps = 200;
  double clip_norm = 5.0;
  AdamConfig adam;
  std::uint64_t seed = 7;
  bool use_mixup = true;
  // Query modalities used when mixup is off; one entry pins the
  // modality, several entries switch uniformly per example.
  std::vector<Modality> modality_subset = {Modality::text};
  int log_every = 200;
};

// Draws the query feature for one source under the configured regime.
inline QueryEmbedding sample_train_query(const SyntheticEmbeddingSpace& space,
                                         std::uint32_t class_id,
                                         const TrainConfig& cfg, Rng& rng) {
  if (cfg.use_mixup) {
    const QueryEmbedding qa =
        space.embed(class_id, Modality::audio, rng.next_u64());
    const QueryEmbedding qv =
        space.embed(class_id, Modality::image, rng.next_u64());
    const QueryEmbedding qt =
        space.embed(class_id, Modality::text, rng.next_u64());
    return mix_queries(qa, qv, qt, sample_mixup_weights(rng));
  }
  if (cfg.modality_subset.empty())
    throw std::invalid_argument("modality subset must not be empty");
  const Modality m =
      cfg.modality_subset.size() == 1
          ? cfg.modality_subset[0]
          : cfg.modality_subset[rng.below(cfg.modality_subset.size())];
  return space.embed(class_id, m, rng.next_u64());
}

struct TrainExample {
  Grid mix_mag;
  std::vector<Grid> targets;
  std::vector<std::vector<double>> queries;
};

// Renders a fresh two-source training example: mixture magnitude,
// per-source ideal binary masks, per-source queries.
inline TrainExample sample_train_example(const DatasetSpec& ds,
                                         const SyntheticEmbeddingSpace& space,
                                         const SpectralParams& sp,
                                         const TrainConfig& cfg, Rng& rng) {
  const std::uint32_t n_cls = static_cast<std::uint32_t>(ds.classes.size());
  const std::uint32_t a = static_cast<std::uint32_t>(rng.below(n_cls));
  std::uint32_t b = a;
  while (b == a) b = static_cast<std::uint32_t>(rng.below(n_cls));
  const std::uint64_t sa = instance_seed(ds.seed, a, Split::train,
                                         rng.next_u64());
  const std::uint64_t sb = instance_seed(ds.seed, b, Split::train,
                                         rng.next_u64());
  MixtureExample ex = make_mixture(ds, a, b, sa, sb);
  std::vector<Spectrogram> specs;
  for (const auto& src : ex.sources)
    specs.push_back(stft(src, sp.fft_size, sp.hop, sp.window_size));
  Spectrogram mix = stft(ex.mixture, sp.fft_size, sp.hop, sp.window_size);
  TrainExample out;
  out.mix_mag = std::move(mix.magnitude);
  for (std::size_t s = 0; s < ex.sources.size(); ++s) {
    out.targets.push_back(ideal_binary_mask(specs, s).values);
    out.queries.push_back(
        sample_train_query(space, ex.class_ids[s], cfg, rng).vector);
  }
  return out;
}

// ---- training loop ---------------------------------------------------------

struct LossPoint {
  int step = 0;
  double lr = 0.0;
  double loss = 0.0;
};

struct TrainResult {
  std::vector<LossPoint> history;
  double last_loss = 0.0;
};

inline void save_loss_history(const std::vector<LossPoint>& hist,
                              const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("save_loss_history: cannot open " + path);
  os << "step lr loss\n";
  char buf[96];
  for (const auto& p : hist) {
    std::snprintf(buf, sizeof buf, "%d %.9g %.9g\n", p.step, p.lr, p.loss);
    os << buf;
  }
}

template <typename T>
inline TrainResult train_model(SeparationModelT<T>& model,
                               const DatasetSpec& ds,
                               const SyntheticEmbeddingSpace& space,
                               const SpectralParams& sp,
                               const TrainConfig& cfg,
                               std::ostream* log = nullptr) {
  if (cfg.steps < 1 || cfg.batch_size < 1)
    throw std::invalid_argument("train_model: steps and batch must be >= 1");
  model.init_params(cfg.seed);
  AdamState adam(model.param_count());
  Rng rng(mix_seed({cfg.seed, 0x7EA1ull}));
  TrainResult res;
  res.history.reserve(static_cast<std::size_t>(cfg.steps));
  const double bscale = 1.0 / static_cast<double>(cfg.batch_size);
  for (int step = 0; step < cfg.steps; ++step) {
    model.zero_grads();
    double loss = 0.0;
    for (int bi = 0; bi < cfg.batch_size; ++bi) {
      TrainExample ex = sample_train_example(ds, space, sp, cfg, rng);
      loss += bscale * example_loss(model, ex.mix_mag, ex.targets, ex.queries,
                                    true);
    }
    // example_loss scales per-source; fold in the batch mean here.
    for (T& g : model.grads()) g = static_cast<T>(g * bscale);
    clip_gradients(model.grads(), cfg.clip_norm);
    const double lr = lr_schedule(step, cfg.peak_lr, cfg.warmup_steps);
    adam_step(model.params(), model.grads(), adam, lr, cfg.adam);
    res.history.push_back({step, lr, loss});
    res.last_loss = loss;
    if (log != nullptr && cfg.log_every > 0 &&
        (step % cfg.log_every == 0 || step == cfg.steps - 1)) {
      char buf[96];
      std::snprintf(buf, sizeof buf, "step %d lr %.3g loss %.6f\n", step, lr,
                    loss);
      *log << buf << std::flush;
    }
  }
  return res;
}

}  // namespace qsep
