#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "qsep/embedding.hpp"
#include "qsep/rng.hpp"
#include "qsep/sepnet.hpp"
#include "qsep/spectral.hpp"
#include "qsep/synthdata.hpp"

namespace qsep {

// ---- metrics ---------------------------------------------------------------

// Signal-to-distortion ratio in dB, clamped to [-60, 60] so silent or
// perfect estimates stay finite.
inline double sdr_db(const std::vector<double>& ref,
                     const std::vector<double>& est) {
  if (ref.size() != est.size())
    throw std::invalid_argument("sdr_db: length mismatch");
  if (ref.empty()) throw std::invalid_argument("sdr_db: empty signals");
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    num += ref[i] * ref[i];
    const double d = ref[i] - est[i];
    den += d * d;
  }
  if (num == 0.0) throw std::invalid_argument("sdr_db: silent reference");
  if (den == 0.0) return 60.0;
  return std::clamp(10.0 * std::log10(num / den), -60.0, 60.0);
}

struct Stats {
  double mean = 0.0;
  double median = 0.0;
  double std_of_mean = 0.0;  // bootstrap
  std::size_t count = 0;
};

// Mean, median, and a bootstrap estimate (1000 resamples) of the
// standard deviation of the mean.
inline Stats bootstrap_stats(const std::vector<double>& values,
                             std::uint64_t seed, int n_resamples = 1000) {
  if (values.empty())
    throw std::invalid_argument("bootstrap_stats: empty sample");
  Stats st;
  st.count = values.size();
  double acc = 0.0;
  for (double v : values) acc += v;
  st.mean = acc / static_cast<double>(values.size());
  std::vector<double> sorted = values;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  st.median = n % 2 == 1 ? sorted[n / 2]
                         : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  if (n_resamples > 1 && n > 1) {
    Rng rng(mix_seed({seed, 0xB007ull}));
    std::vector<double> means;
    means.reserve(static_cast<std::size_t>(n_resamples));
    for (int r = 0; r < n_resamples; ++r) {
      double m = 0.0;
      for (std::size_t i = 0; i < n; ++i) m += values[rng.below(n)];
      means.push_back(m / static_cast<double>(n));
    }
    double mb = 0.0;
    for (double m : means) mb += m;
    mb /= means.size();
    double sq = 0.0;
    for (double m : means) sq += (m - mb) * (m - mb);
    st.std_of_mean = std::sqrt(sq / static_cast<double>(means.size() - 1));
  }
  return st;
}

// ---- separation ------------------------------------------------------------

// Everything query-independent about one mixture: its spectrogram and
// the backbone's intermediate masks. Sweeps over many queries pay for
// the network once.
template <typename T>
struct MixtureContext {
  Spectrogram spec;
  Tensor3<T> mtilde;
  std::size_t n_samples = 0;
  int sample_rate = 0;
};

template <typename T>
inline MixtureContext<T> prepare_mixture(const SeparationModelT<T>& model,
                                         const SpectralParams& sp,
                                         const Waveform& mix) {
  MixtureContext<T> ctx;
  ctx.spec = stft(mix, sp.fft_size, sp.hop, sp.window_size);
  ctx.mtilde = model.intermediate_masks(ctx.spec.magnitude, nullptr);
  ctx.n_samples = mix.samples.size();
  ctx.sample_rate = mix.sample_rate;
  return ctx;
}

template <typename T>
inline Mask predict_mask(const SeparationModelT<T>& model,
                         const MixtureContext<T>& ctx,
                         const std::vector<double>& query) {
  std::vector<T> mhat = model.combine(ctx.mtilde, query, nullptr);
  Mask m;
  m.kind = MaskKind::soft;
  m.values.frames = ctx.spec.frames;
  m.values.bins = ctx.spec.bins;
  m.values.v.resize(mhat.size());
  for (std::size_t i = 0; i < mhat.size(); ++i)
    m.values.v[i] = static_cast<float>(mhat[i]);
  return m;
}

template <typename T>
inline Waveform estimate_source(const SeparationModelT<T>& model,
                                const MixtureContext<T>& ctx,
                                const std::vector<double>& query) {
  const Mask m = predict_mask(model, ctx, query);
  const Spectrogram masked = apply_mask(ctx.spec, m);
  return istft(masked, ctx.n_samples, ctx.sample_rate);
}

template <typename T>
inline Waveform separate(const SeparationModelT<T>& model,
                         const SpectralParams& sp, const Waveform& mix,
                         const std::vector<double>& query) {
  const MixtureContext<T> ctx = prepare_mixture(model, sp, mix);
  return estimate_source(model, ctx, query);
}

// ---- evaluation protocols --------------------------------------------------

enum class TaskKind { tqss, iqss, aqss, composed };

inline const char* task_name(TaskKind t) {
  switch (t) {
    case TaskKind::tqss: return "tqss";
    case TaskKind::iqss: return "iqss";
    case TaskKind::aqss: return "aqss";
    case TaskKind::composed: return "composed";
  }
  return "?";
}

struct EvalOptions {
  int n_mixtures = 100;
  std::uint64_t seed = 99;
  // 0 keeps text/image queries at the clean anchors and audio instances
  // at the space's own instance noise; > 0 forces that noise level on
  // every modality (used to stress query quality).
  double query_sigma = 0.0;
  int audio_samples = 5;  // instances averaged for audio queries
};

struct SdrRecord {
  int mixture = 0;
  int source = 0;
  std::uint32_t class_id = 0;
  std::uint32_t interferer_id = 0;
  double sdr_mix = 0.0;
  double sdr = 0.0;
  double sdri = 0.0;
};

struct TaskResult {
  TaskKind task = TaskKind::tqss;
  std::vector<SdrRecord> records;
  Stats sdr_stats;
  Stats sdri_stats;
};

namespace detail {

// Fixed per-(mixture, source, modality, sample) seed so every task and
// repeat run sees the same query instances.
inline std::uint64_t query_instance_seed(std::uint64_t eval_seed, int mixture,
                                         int source, Modality m, int sample) {
  return mix_seed({eval_seed, 0x9E5Eull, static_cast<std::uint64_t>(mixture),
                   static_cast<std::uint64_t>(source),
                   static_cast<std::uint64_t>(m),
                   static_cast<std::uint64_t>(sample)});
}

inline QueryEmbedding single_modality_query(const SyntheticEmbeddingSpace& sp,
                                            std::uint32_t cls, Modality m,
                                            const EvalOptions& opts,
                                            int mixture, int source) {
  if (m == Modality::audio) {
    const double sig =
        opts.query_sigma > 0.0 ? opts.query_sigma : sp.instance_sigma();
    std::vector<QueryEmbedding> inst;
    for (int j = 0; j < opts.audio_samples; ++j)
      inst.push_back(sp.embed_with_sigma(
          cls, Modality::audio,
          query_instance_seed(opts.seed, mixture, source, Modality::audio, j),
          sig));
    return average_audio_queries(inst);
  }
  if (opts.query_sigma > 0.0)
    return sp.embed_with_sigma(
        cls, m, query_instance_seed(opts.seed, mixture, source, m, 0),
        opts.query_sigma);
  return sp.anchor(cls, m);
}

}  // namespace detail

inline QueryEmbedding task_query(const SyntheticEmbeddingSpace& space,
                                 std::uint32_t cls, TaskKind task,
                                 const EvalOptions& opts, int mixture,
                                 int source) {
  switch (task) {
    case TaskKind::tqss:
      return detail::single_modality_query(space, cls, Modality::text, opts,
                                           mixture, source);
    case TaskKind::iqss:
      return detail::single_modality_query(space, cls, Modality::image, opts,
                                           mixture, source);
    case TaskKind::aqss:
      return detail::single_modality_query(space, cls, Modality::audio, opts,
                                           mixture, source);
    case TaskKind::composed: {
      const QueryEmbedding qa = detail::single_modality_query(
          space, cls, Modality::audio, opts, mixture, source);
      const QueryEmbedding qv = detail::single_modality_query(
          space, cls, Modality::image, opts, mixture, source);
      const QueryEmbedding qt = detail::single_modality_query(
          space, cls, Modality::text, opts, mixture, source);
      return mix_queries(qa, qv, qt, {1.0, 1.0, 1.0});
    }
  }
  throw std::logic_error("task_query: unreachable");
}

// The shared evaluation mixture list: class pairs and instance seeds
// depend only on the dataset and the evaluation seed, so every task and
// sweep sees identical material.
struct EvalMixturePlan {
  std::uint32_t cls_a = 0, cls_b = 0;
  std::uint64_t seed_a = 0, seed_b = 0;
};

inline std::vector<EvalMixturePlan> plan_eval_mixtures(const DatasetSpec& ds,
                                                       int n,
                                                       std::uint64_t seed) {
  const std::uint32_t n_cls = static_cast<std::uint32_t>(ds.classes.size());
  if (n_cls < 2)
    throw std::invalid_argument("plan_eval_mixtures: need >= 2 classes");
  Rng rng(mix_seed({seed, 0xE7A1ull}));
  std::vector<EvalMixturePlan> plans;
  for (int i = 0; i < n; ++i) {
    EvalMixturePlan p;
    p.cls_a = static_cast<std::uint32_t>(rng.below(n_cls));
    p.cls_b = p.cls_a;
    while (p.cls_b == p.cls_a)
      p.cls_b = static_cast<std::uint32_t>(rng.below(n_cls));
    p.seed_a = instance_seed(ds.seed, p.cls_a, Split::eval,
                             static_cast<std::uint64_t>(2 * i));
    p.seed_b = instance_seed(ds.seed, p.cls_b, Split::eval,
                             static_cast<std::uint64_t>(2 * i + 1));
    plans.push_back(p);
  }
  return plans;
}

template <typename T>
inline TaskResult run_task(const SeparationModelT<T>& model,
                           const DatasetSpec& ds,
                           const SyntheticEmbeddingSpace& space,
                           const SpectralParams& sp, TaskKind task,
                           const EvalOptions& opts) {
  TaskResult res;
  res.task = task;
  const auto plans = plan_eval_mixtures(ds, opts.n_mixtures, opts.seed);
  for (int i = 0; i < opts.n_mixtures; ++i) {
    const auto& p = plans[i];
    const MixtureExample ex =
        make_mixture(ds, p.cls_a, p.cls_b, p.seed_a, p.seed_b);
    const MixtureContext<T> ctx = prepare_mixture(model, sp, ex.mixture);
    for (int s = 0; s < 2; ++s) {
      SdrRecord rec;
      rec.mixture = i;
      rec.source = s;
      rec.class_id = ex.class_ids[s];
      rec.interferer_id = ex.class_ids[1 - s];
      const QueryEmbedding q =
          task_query(space, rec.class_id, task, opts, i, s);
      const Waveform est = estimate_source(model, ctx, q.vector);
      rec.sdr_mix = sdr_db(ex.sources[s].samples, ex.mixture.samples);
      rec.sdr = sdr_db(ex.sources[s].samples, est.samples);
      rec.sdri = rec.sdr - rec.sdr_mix;
      res.records.push_back(rec);
    }
  }
  std::vector<double> sdrs, sdris;
  for (const auto& r : res.records) {
    sdrs.push_back(r.sdr);
    sdris.push_back(r.sdri);
  }
  res.sdr_stats = bootstrap_stats(sdrs, opts.seed, 1000);
  res.sdri_stats = bootstrap_stats(sdris, opts.seed, 1000);
  return res;
}

// ---- negative-query sweep ---------------------------------------------------

struct NqSweepPoint {
  double alpha = 0.0;
  Stats proportional;  // (1 + a) Q - a Qn
  Stats naive;         // Q - a Qn
};

struct NqSweepResult {
  std::vector<double> alphas;
  std::vector<NqSweepPoint> points;
  double proportional_range = 0.0;  // max - min of mean SDR over alphas
  double naive_range = 0.0;
};

template <typename T>
inline NqSweepResult nq_sweep(const SeparationModelT<T>& model,
                              const DatasetSpec& ds,
                              const SyntheticEmbeddingSpace& space,
                              const SpectralParams& sp,
                              const std::vector<double>& alphas,
                              const EvalOptions& opts) {
  NqSweepResult res;
  res.alphas = alphas;
  const auto plans = plan_eval_mixtures(ds, opts.n_mixtures, opts.seed);
  std::vector<std::vector<double>> prop(alphas.size()), nai(alphas.size());
  for (int i = 0; i < opts.n_mixtures; ++i) {
    const auto& p = plans[i];
    const MixtureExample ex =
        make_mixture(ds, p.cls_a, p.cls_b, p.seed_a, p.seed_b);
    const MixtureContext<T> ctx = prepare_mixture(model, sp, ex.mixture);
    for (int s = 0; s < 2; ++s) {
      const QueryEmbedding q =
          space.anchor(ex.class_ids[s], Modality::text);
      const QueryEmbedding qn =
          space.anchor(ex.class_ids[1 - s], Modality::text);
      for (std::size_t ai = 0; ai < alphas.size(); ++ai) {
        const QueryEmbedding qp = negative_query(q, qn, alphas[ai]);
        const QueryEmbedding qv = naive_negative_query(q, qn, alphas[ai]);
        const Waveform est_p = estimate_source(model, ctx, qp.vector);
        const Waveform est_n = estimate_source(model, ctx, qv.vector);
        prop[ai].push_back(sdr_db(ex.sources[s].samples, est_p.samples));
        nai[ai].push_back(sdr_db(ex.sources[s].samples, est_n.samples));
      }
    }
  }
  double pmin = 0.0, pmax = 0.0, nmin = 0.0, nmax = 0.0;
  for (std::size_t ai = 0; ai < alphas.size(); ++ai) {
    NqSweepPoint pt;
    pt.alpha = alphas[ai];
    pt.proportional = bootstrap_stats(prop[ai], opts.seed, 1000);
    pt.naive = bootstrap_stats(nai[ai], opts.seed, 1000);
    if (ai == 0) {
      pmin = pmax = pt.proportional.mean;
      nmin = nmax = pt.naive.mean;
    } else {
      pmin = std::min(pmin, pt.proportional.mean);
      pmax = std::max(pmax, pt.proportional.mean);
      nmin = std::min(nmin, pt.naive.mean);
      nmax = std::max(nmax, pt.naive.mean);
    }
    res.points.push_back(pt);
  }
  res.proportional_range = pmax - pmin;
  res.naive_range = nmax - nmin;
  return res;
}

// ---- out-of-domain query comparison -----------------------------------------

struct QueryAugResultStats {
  double magnitude = 0.0;
  double retrieval_accuracy = 0.0;
  Stats raw;        // separation driven by the perturbed description
  Stats augmented;  // separation driven by the retrieved clean feature
  Stats in_domain;  // separation driven by the clean anchor directly
};

template <typename T>
inline QueryAugResultStats query_aug_comparison(
    const SeparationModelT<T>& model, const DatasetSpec& ds,
    const SyntheticEmbeddingSpace& space, const SpectralParams& sp,
    const QuerySet& qs, double magnitude, const EvalOptions& opts) {
  QueryAugResultStats res;
  res.magnitude = magnitude;
  const auto plans = plan_eval_mixtures(ds, opts.n_mixtures, opts.seed);
  std::vector<double> raw, aug, indom;
  int hits = 0, total = 0;
  for (int i = 0; i < opts.n_mixtures; ++i) {
    const auto& p = plans[i];
    const MixtureExample ex =
        make_mixture(ds, p.cls_a, p.cls_b, p.seed_a, p.seed_b);
    const MixtureContext<T> ctx = prepare_mixture(model, sp, ex.mixture);
    for (int s = 0; s < 2; ++s) {
      const std::uint32_t cls = ex.class_ids[s];
      const QueryEmbedding q_ood = simulate_ood_description(
          space, cls, magnitude,
          detail::query_instance_seed(opts.seed, i, s, Modality::text, 1));
      const QueryAugResult ret = query_aug(q_ood, qs);
      total += 1;
      if (ret.class_id == cls) hits += 1;
      const QueryEmbedding q_clean = space.anchor(cls, Modality::text);
      const Waveform est_raw = estimate_source(model, ctx, q_ood.vector);
      const Waveform est_aug = estimate_source(model, ctx,
                                               ret.embedding.vector);
      const Waveform est_dom = estimate_source(model, ctx, q_clean.vector);
      raw.push_back(sdr_db(ex.sources[s].samples, est_raw.samples));
      aug.push_back(sdr_db(ex.sources[s].samples, est_aug.samples));
      indom.push_back(sdr_db(ex.sources[s].samples, est_dom.samples));
    }
  }
  res.retrieval_accuracy = static_cast<double>(hits) / total;
  res.raw = bootstrap_stats(raw, opts.seed, 1000);
  res.augmented = bootstrap_stats(aug, opts.seed, 1000);
  res.in_domain = bootstrap_stats(indom, opts.seed, 1000);
  return res;
}

// ---- reports ----------------------------------------------------------------

using ordered_json = nlohmann::ordered_json;

inline ordered_json record_to_json(const SdrRecord& r) {
  ordered_json j;
  j["mixture"] = r.mixture;
  j["source"] = r.source;
  j["class"] = r.class_id;
  j["interferer"] = r.interferer_id;
  j["sdr_mix"] = r.sdr_mix;
  j["sdr"] = r.sdr;
  j["sdri"] = r.sdri;
  return j;
}

inline ordered_json stats_to_json(const Stats& s) {
  ordered_json j;
  j["mean"] = s.mean;
  j["median"] = s.median;
  j["std_of_mean"] = s.std_of_mean;
  j["count"] = s.count;
  return j;
}

inline void save_task_records(const TaskResult& res, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("save_task_records: cannot open " + path);
  for (const auto& r : res.records) os << record_to_json(r).dump() << "\n";
}

inline ordered_json task_summary_json(const TaskResult& res) {
  ordered_json j;
  j["task"] = task_name(res.task);
  j["sdr"] = stats_to_json(res.sdr_stats);
  j["sdri"] = stats_to_json(res.sdri_stats);
  return j;
}

inline void save_json(const ordered_json& j, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("save_json: cannot open " + path);
  os << j.dump(2) << "\n";
}

// ---- PGM rendering ----------------------------------------------------------

namespace detail {

inline void write_pgm(const std::string& path, int w, int h,
                      const std::vector<unsigned char>& pix) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("write_pgm: cannot open " + path);
  os << "P5\n" << w << " " << h << "\n255\n";
  os.write(reinterpret_cast<const char*>(pix.data()),
           static_cast<std::streamsize>(pix.size()));
}

}  // namespace detail

// Grayscale spectrogram image: time left-to-right, low frequencies at
// the bottom, log-compressed magnitude, white = loud.
inline void render_spectrogram_pgm(const Grid& mag, const std::string& path) {
  const int w = mag.frames, h = mag.bins;
  if (w < 1 || h < 1)
    throw std::invalid_argument("render_spectrogram_pgm: empty grid");
  double top = 0.0;
  for (float v : mag.v) top = std::max(top, std::log1p(double(v)));
  std::vector<unsigned char> pix(static_cast<std::size_t>(w) * h, 0);
  for (int y = 0; y < h; ++y) {
    const int bin = h - 1 - y;
    for (int x = 0; x < w; ++x) {
      const double v = std::log1p(static_cast<double>(mag.at(x, bin)));
      const double u = top > 0.0 ? v / top : 0.0;
      pix[static_cast<std::size_t>(y) * w + x] =
          static_cast<unsigned char>(std::lround(255.0 * u));
    }
  }
  detail::write_pgm(path, w, h, pix);
}

// Mask image: values in [0, 1] mapped linearly to gray, low
// frequencies at the bottom, white = keep.
inline void render_mask_pgm(const Grid& mask, const std::string& path) {
  const int w = mask.frames, h = mask.bins;
  if (w < 1 || h < 1) throw std::invalid_argument("render_mask_pgm: empty");
  std::vector<unsigned char> pix(static_cast<std::size_t>(w) * h, 0);
  for (int y = 0; y < h; ++y) {
    const int bin = h - 1 - y;
    for (int x = 0; x < w; ++x) {
      const double v =
          std::clamp(static_cast<double>(mask.at(x, bin)), 0.0, 1.0);
      pix[static_cast<std::size_t>(y) * w + x] =
          static_cast<unsigned char>(std::lround(255.0 * v));
    }
  }
  detail::write_pgm(path, w, h, pix);
}

// Minimal line plot: white background, black axes, one gray level per
// series. Used for the negative-query strength sweep.
inline void plot_series_pgm(const std::string& path,
                            const std::vector<double>& xs,
                            const std::vector<std::vector<double>>& series,
                            int w = 640, int h = 400) {
  if (xs.size() < 2) throw std::invalid_argument("plot_series_pgm: need >= 2 points");
  for (const auto& s : series)
    if (s.size() != xs.size())
      throw std::invalid_argument("plot_series_pgm: ragged series");
  double xmin = xs.front(), xmax = xs.front();
  for (double x : xs) {
    xmin = std::min(xmin, x);
    xmax = std::max(xmax, x);
  }
  double ymin = series[0][0], ymax = series[0][0];
  for (const auto& s : series)
    for (double v : s) {
      ymin = std::min(ymin, v);
      ymax = std::max(ymax, v);
    }
  if (xmax == xmin) xmax = xmin + 1.0;
  if (ymax == ymin) ymax = ymin + 1.0;
  const double ypad = 0.05 * (ymax - ymin);
  ymin -= ypad;
  ymax += ypad;
  const int ml = 40, mb = 30, mt = 10, mr = 10;
  std::vector<unsigned char> pix(static_cast<std::size_t>(w) * h, 255);
  auto put = [&](int x, int y, unsigned char v) {
    if (x >= 0 && x < w && y >= 0 && y < h)
      pix[static_cast<std::size_t>(y) * w + x] = v;
  };
  auto px = [&](double x) {
    return ml + static_cast<int>(std::lround((x - xmin) / (xmax - xmin) *
                                             (w - ml - mr - 1)));
  };
  auto py = [&](double y) {
    return h - mb - 1 -
           static_cast<int>(std::lround((y - ymin) / (ymax - ymin) *
                                        (h - mt - mb - 1)));
  };
  for (int x = ml; x < w - mr; ++x) put(x, h - mb - 1, 0);
  for (int y = mt; y < h - mb; ++y) put(ml, y, 0);
  auto line = [&](int x0, int y0, int x1, int y1, unsigned char v) {
    const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
    const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    for (;;) {
      put(x0, y0, v);
      if (x0 == x1 && y0 == y1) break;
      const int e2 = 2 * err;
      if (e2 >= dy) {
        err += dy;
        x0 += sx;
      }
      if (e2 <= dx) {
        err += dx;
        y0 += sy;
      }
    }
  };
  for (std::size_t si = 0; si < series.size(); ++si) {
    const unsigned char v = static_cast<unsigned char>(
        series.size() <= 1 ? 0 : 170 * si / (series.size() - 1));
    for (std::size_t i = 0; i + 1 < xs.size(); ++i)
      line(px(xs[i]), py(series[si][i]), px(xs[i + 1]), py(series[si][i + 1]),
           v);
    // mark points
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const int cx = px(xs[i]), cy = py(series[si][i]);
      for (int dy2 = -1; dy2 <= 1; ++dy2)
        for (int dx2 = -1; dx2 <= 1; ++dx2) put(cx + dx2, cy + dy2, v);
    }
  }
  detail::write_pgm(path, w, h, pix);
}

}  // namespace qsep
