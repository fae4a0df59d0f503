#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "qsep/embedding.hpp"
#include "qsep/rng.hpp"
#include "qsep/spectral.hpp"

namespace qsep {

enum class GeneratorKind : std::uint8_t {
  pure_tone,
  harmonic_stack,
  chirp,
  am_noise,
  filtered_noise,
  click_train,
  fm_tone,
  beating_pair,
};

inline const char* generator_name(GeneratorKind k) {
  switch (k) {
    case GeneratorKind::pure_tone: return "pure_tone";
    case GeneratorKind::harmonic_stack: return "harmonic_stack";
    case GeneratorKind::chirp: return "chirp";
    case GeneratorKind::am_noise: return "am_noise";
    case GeneratorKind::filtered_noise: return "filtered_noise";
    case GeneratorKind::click_train: return "click_train";
    case GeneratorKind::fm_tone: return "fm_tone";
    case GeneratorKind::beating_pair: return "beating_pair";
  }
  return "?";
}

inline GeneratorKind parse_generator(const std::string& s) {
  for (int k = 0; k <= static_cast<int>(GeneratorKind::beating_pair); ++k)
    if (s == generator_name(static_cast<GeneratorKind>(k)))
      return static_cast<GeneratorKind>(k);
  throw std::invalid_argument("unknown generator kind: " + s);
}

// Three (lo, hi) ranges, interpreted per generator kind:
//   f0    main frequency / band lower edge / carrier / fundamental
//   f1    band upper edge / sweep end / harmonic count / FM depth
//   rate  AM rate / click rate / FM rate / beat spacing (Hz)
struct GenParams {
  double f0_lo = 0.0, f0_hi = 0.0;
  double f1_lo = 0.0, f1_hi = 0.0;
  double rate_lo = 0.0, rate_hi = 0.0;
};

struct SoundClass {
  std::uint32_t class_id = 0;
  std::string label;
  GeneratorKind kind = GeneratorKind::pure_tone;
  GenParams params;
};

namespace detail {

// Brickwall band-pass via FFT of the zero-padded signal.
inline void bandpass(std::vector<double>& x, int sample_rate, double lo_hz,
                     double hi_hz) {
  const std::size_t n = x.size();
  std::size_t m = 1;
  while (m < n) m <<= 1;
  std::vector<std::complex<double>> buf(m);
  for (std::size_t i = 0; i < n; ++i) buf[i] = x[i];
  fft_radix2(buf, false);
  const double hz_per_bin = static_cast<double>(sample_rate) / double(m);
  for (std::size_t k = 0; k <= m / 2; ++k) {
    const double f = double(k) * hz_per_bin;
    if (f < lo_hz || f > hi_hz) {
      buf[k] = 0.0;
      if (k != 0 && k != m / 2) buf[m - k] = 0.0;
    }
  }
  fft_radix2(buf, true);
  for (std::size_t i = 0; i < n; ++i) x[i] = buf[i].real();
}

inline double draw(Rng& rng, double lo, double hi) {
  return rng.uniform(lo, hi);
}

}  // namespace detail

// Renders one instance of a class. Each instance seed fixes every random
// choice (frequencies, phases, noise), so the same seed always yields the
// same waveform. Output is peak-normalized to 0.5 so two-source mixtures
// stay inside [-1, 1].
inline Waveform generate_source(const SoundClass& cls,
                                std::uint64_t instance_seed, double duration,
                                int sample_rate) {
  if (duration <= 0.0) throw std::invalid_argument("duration must be > 0");
  if (sample_rate <= 0) throw std::invalid_argument("sample rate must be > 0");
  const std::size_t n =
      static_cast<std::size_t>(std::llround(duration * sample_rate));
  if (n == 0) throw std::invalid_argument("duration too short");
  Rng rng(mix_seed({instance_seed, static_cast<std::uint64_t>(cls.kind)}));
  const GenParams& p = cls.params;
  const double dt = 1.0 / sample_rate;
  std::vector<double> x(n, 0.0);

  switch (cls.kind) {
    case GeneratorKind::pure_tone: {
      const double f = detail::draw(rng, p.f0_lo, p.f0_hi);
      const double phi = rng.uniform(0.0, 2.0 * kPi);
      for (std::size_t i = 0; i < n; ++i)
        x[i] = std::sin(2.0 * kPi * f * i * dt + phi);
      break;
    }
    case GeneratorKind::harmonic_stack: {
      const double f0 = detail::draw(rng, p.f0_lo, p.f0_hi);
      const int nh = static_cast<int>(
          std::lround(detail::draw(rng, p.f1_lo, p.f1_hi)));
      for (int h = 1; h <= nh; ++h) {
        const double fh = f0 * h;
        if (fh >= 0.5 * sample_rate) break;
        const double phi = rng.uniform(0.0, 2.0 * kPi);
        const double amp = 1.0 / h;
        for (std::size_t i = 0; i < n; ++i)
          x[i] += amp * std::sin(2.0 * kPi * fh * i * dt + phi);
      }
      break;
    }
    case GeneratorKind::chirp: {
      const double fs = detail::draw(rng, p.f0_lo, p.f0_hi);
      const double fe = detail::draw(rng, p.f1_lo, p.f1_hi);
      const double phi = rng.uniform(0.0, 2.0 * kPi);
      const double T = n * dt;
      for (std::size_t i = 0; i < n; ++i) {
        const double t = i * dt;
        x[i] = std::sin(2.0 * kPi * (fs * t + 0.5 * (fe - fs) * t * t / T) +
                        phi);
      }
      break;
    }
    case GeneratorKind::am_noise: {
      for (double& v : x) v = rng.normal();
      detail::bandpass(x, sample_rate, p.f0_lo, p.f1_hi);
      const double rate = detail::draw(rng, p.rate_lo, p.rate_hi);
      const double phi = rng.uniform(0.0, 2.0 * kPi);
      for (std::size_t i = 0; i < n; ++i)
        x[i] *= 0.55 + 0.45 * std::sin(2.0 * kPi * rate * i * dt + phi);
      break;
    }
    case GeneratorKind::filtered_noise: {
      for (double& v : x) v = rng.normal();
      detail::bandpass(x, sample_rate, p.f0_lo, p.f1_hi);
      break;
    }
    case GeneratorKind::click_train: {
      const double fc = detail::draw(rng, p.f0_lo, p.f0_hi);
      const double rate = detail::draw(rng, p.rate_lo, p.rate_hi);
      const double period = sample_rate / rate;
      const double tau = 0.008 * sample_rate;  // 8 ms decay
      double pos = rng.uniform(0.0, period);
      while (pos < double(n)) {
        const std::size_t start = static_cast<std::size_t>(pos);
        const double phi = rng.uniform(0.0, 2.0 * kPi);
        const std::size_t len =
            std::min(n - start, static_cast<std::size_t>(6.0 * tau));
        for (std::size_t j = 0; j < len; ++j)
          x[start + j] += std::exp(-double(j) / tau) *
                          std::sin(2.0 * kPi * fc * j * dt + phi);
        pos += period * rng.uniform(0.9, 1.1);
      }
      break;
    }
    case GeneratorKind::fm_tone: {
      const double fc = detail::draw(rng, p.f0_lo, p.f0_hi);
      const double depth = detail::draw(rng, p.f1_lo, p.f1_hi);
      const double rate = detail::draw(rng, p.rate_lo, p.rate_hi);
      double phase = rng.uniform(0.0, 2.0 * kPi);
      const double phi_m = rng.uniform(0.0, 2.0 * kPi);
      for (std::size_t i = 0; i < n; ++i) {
        const double f_inst =
            fc + depth * std::sin(2.0 * kPi * rate * i * dt + phi_m);
        phase += 2.0 * kPi * f_inst * dt;
        x[i] = std::sin(phase);
      }
      break;
    }
    case GeneratorKind::beating_pair: {
      const double f = detail::draw(rng, p.f0_lo, p.f0_hi);
      const double delta = detail::draw(rng, p.rate_lo, p.rate_hi);
      const double p1 = rng.uniform(0.0, 2.0 * kPi);
      const double p2 = rng.uniform(0.0, 2.0 * kPi);
      for (std::size_t i = 0; i < n; ++i) {
        const double t = i * dt;
        x[i] = 0.5 * (std::sin(2.0 * kPi * f * t + p1) +
                      std::sin(2.0 * kPi * (f + delta) * t + p2));
      }
      break;
    }
  }

  double peak = 0.0;
  for (double v : x) peak = std::max(peak, std::abs(v));
  if (peak < 1e-12)
    throw std::runtime_error("generate_source: silent render for class " +
                             cls.label);
  const double scale = 0.5 / peak;
  Waveform w;
  w.sample_rate = sample_rate;
  w.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) w.samples[i] = x[i] * scale;
  return w;
}

// Mean magnitude spectrum over a few probe instances: the catalog audit
// uses these to confirm classes occupy distinct spectral territory.
inline std::vector<double> mean_magnitude_spectrum(const SoundClass& cls,
                                                   int sample_rate,
                                                   std::uint64_t seed,
                                                   int probes = 3) {
  const double duration = 0.5;
  std::vector<double> acc;
  for (int k = 0; k < probes; ++k) {
    Waveform w = generate_source(
        cls,
        mix_seed({seed, 0xA0D17ull, cls.class_id,
                  static_cast<std::uint64_t>(k)}),
        duration, sample_rate);
    std::size_t m = 1;
    while (m < w.samples.size()) m <<= 1;
    std::vector<std::complex<double>> buf(m);
    for (std::size_t i = 0; i < w.samples.size(); ++i) buf[i] = w.samples[i];
    detail::fft_radix2(buf, false);
    if (acc.empty()) acc.assign(m / 2 + 1, 0.0);
    for (std::size_t i = 0; i <= m / 2; ++i) acc[i] += std::abs(buf[i]);
  }
  for (double& v : acc) v /= probes;
  return acc;
}

namespace detail {

inline double vec_cosine(const std::vector<double>& a,
                         const std::vector<double>& b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

}  // namespace detail

// Largest pairwise cosine between class mean spectra (lower = more
// separable material).
inline double catalog_max_pairwise_cosine(const std::vector<SoundClass>& cat,
                                          int sample_rate,
                                          std::uint64_t seed) {
  std::vector<std::vector<double>> spectra;
  for (const auto& c : cat)
    spectra.push_back(mean_magnitude_spectrum(c, sample_rate, seed));
  double worst = 0.0;
  for (std::size_t i = 0; i < spectra.size(); ++i)
    for (std::size_t j = i + 1; j < spectra.size(); ++j)
      worst = std::max(worst, detail::vec_cosine(spectra[i], spectra[j]));
  return worst;
}

constexpr double kCatalogCosineLimit = 0.9;

// Eight archetype classes with distinct spectral bands; per-catalog seed
// jitters the band edges slightly. If a jitter draw lands two classes too
// close together (audited by pairwise spectral cosine), the whole catalog
// is redrawn with a rotated seed, a bounded number of times.
inline std::vector<SoundClass> build_catalog(std::uint64_t seed,
                                             int sample_rate) {
  struct Arch {
    const char* label;
    GeneratorKind kind;
    GenParams p;
  };
  static const Arch kArch[] = {
      {"tone_low", GeneratorKind::pure_tone, {300, 420, 0, 0, 0, 0}},
      {"harmonic_drone", GeneratorKind::harmonic_stack,
       {90, 130, 4, 6, 0, 0}},
      {"chirp_up", GeneratorKind::chirp, {480, 560, 1650, 1850, 0, 0}},
      {"pulsed_noise", GeneratorKind::am_noise, {1600, 1600, 2400, 2400, 4, 8}},
      {"hiss_band", GeneratorKind::filtered_noise,
       {2900, 2900, 3400, 3400, 0, 0}},
      {"click_train", GeneratorKind::click_train, {850, 1150, 0, 0, 8, 12}},
      {"warble_high", GeneratorKind::fm_tone, {3450, 3650, 60, 120, 2, 5}},
      {"beat_pair", GeneratorKind::beating_pair, {1950, 2150, 0, 0, 2, 6}},
  };
  const int n = static_cast<int>(std::size(kArch));

  for (int attempt = 0; attempt < 5; ++attempt) {
    Rng rng(mix_seed({seed, 0xCA7Aull, static_cast<std::uint64_t>(attempt)}));
    std::vector<SoundClass> cat;
    for (int i = 0; i < n; ++i) {
      SoundClass c;
      c.class_id = static_cast<std::uint32_t>(i);
      c.label = kArch[i].label;
      c.kind = kArch[i].kind;
      c.params = kArch[i].p;
      // Shift frequency ranges by up to +-2% per catalog; keeps classes
      // near their archetype bands while varying across dataset seeds.
      const double shift = 1.0 + rng.uniform(-0.02, 0.02);
      c.params.f0_lo *= shift;
      c.params.f0_hi *= shift;
      // The f1 pair holds harmonic counts / FM depths for some kinds;
      // only scale it where it is a frequency.
      const bool f1_is_freq = c.kind == GeneratorKind::chirp ||
                              c.kind == GeneratorKind::am_noise ||
                              c.kind == GeneratorKind::filtered_noise;
      if (f1_is_freq) {
        c.params.f1_lo *= shift;
        c.params.f1_hi *= shift;
      }
      cat.push_back(std::move(c));
    }
    const double worst =
        catalog_max_pairwise_cosine(cat, sample_rate, mix_seed({seed, 0xF00Dull}));
    if (worst < kCatalogCosineLimit) return cat;
  }
  throw std::runtime_error(
      "build_catalog: could not reach the spectral separability target");
}

enum class Split : std::uint32_t { train = 0, eval = 1 };

inline const char* split_name(Split s) {
  return s == Split::train ? "train" : "eval";
}

// Per-instance seed; the split tag keeps train and eval instance pools
// disjoint by construction.
inline std::uint64_t instance_seed(std::uint64_t dataset_seed,
                                   std::uint32_t class_id, Split split,
                                   std::uint64_t index) {
  return mix_seed({dataset_seed, 0x1257A7CEull, class_id,
                   static_cast<std::uint64_t>(split), index});
}

struct DatasetSpec {
  std::uint64_t seed = 42;
  int sample_rate = 8000;
  double duration = 0.5;
  std::vector<SoundClass> classes;
};

inline DatasetSpec make_dataset(std::uint64_t seed, int sample_rate,
                                double duration) {
  DatasetSpec ds;
  ds.seed = seed;
  ds.sample_rate = sample_rate;
  ds.duration = duration;
  ds.classes = build_catalog(seed, sample_rate);
  return ds;
}

struct MixtureExample {
  Waveform mixture;
  std::vector<Waveform> sources;
  std::vector<std::uint32_t> class_ids;
  std::vector<std::uint64_t> seeds;
};

// Two-source mixture: plain sample-wise sum of independently rendered
// sources from distinct classes.
inline MixtureExample make_mixture(const DatasetSpec& ds, std::uint32_t cls_a,
                                   std::uint32_t cls_b, std::uint64_t seed_a,
                                   std::uint64_t seed_b) {
  if (cls_a == cls_b)
    throw std::invalid_argument("make_mixture: classes must differ");
  if (cls_a >= ds.classes.size() || cls_b >= ds.classes.size())
    throw std::invalid_argument("make_mixture: class id out of range");
  MixtureExample ex;
  ex.class_ids = {cls_a, cls_b};
  ex.seeds = {seed_a, seed_b};
  ex.sources.push_back(
      generate_source(ds.classes[cls_a], seed_a, ds.duration, ds.sample_rate));
  ex.sources.push_back(
      generate_source(ds.classes[cls_b], seed_b, ds.duration, ds.sample_rate));
  ex.mixture.sample_rate = ds.sample_rate;
  ex.mixture.samples.resize(ex.sources[0].samples.size(), 0.0);
  for (const auto& s : ex.sources)
    for (std::size_t i = 0; i < s.samples.size(); ++i)
      ex.mixture.samples[i] += s.samples[i];
  return ex;
}

// ---- manifest -------------------------------------------------------------

constexpr char kManifestSchema[] = "qsep-dataset v1";

inline void save_manifest(const DatasetSpec& ds, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("save_manifest: cannot open " + path);
  os << kManifestSchema << "\n";
  os << "seed " << ds.seed << "\n";
  os << "sample_rate " << ds.sample_rate << "\n";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", ds.duration);
  os << "duration " << buf << "\n";
  os << "n_classes " << ds.classes.size() << "\n";
  for (const auto& c : ds.classes) {
    os << "class " << c.class_id << " " << c.label << " "
       << generator_name(c.kind);
    for (double v : {c.params.f0_lo, c.params.f0_hi, c.params.f1_lo,
                     c.params.f1_hi, c.params.rate_lo, c.params.rate_hi}) {
      std::snprintf(buf, sizeof buf, "%.17g", v);
      os << " " << buf;
    }
    os << "\n";
  }
  os << "end\n";
  if (!os) throw std::runtime_error("save_manifest: write failed: " + path);
}

inline DatasetSpec load_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("load_manifest: cannot open " + path);
  std::string line;
  if (!std::getline(is, line) || line != kManifestSchema)
    throw std::runtime_error("load_manifest: unsupported schema in " + path);
  DatasetSpec ds;
  ds.classes.clear();
  std::size_t expect_classes = 0;
  bool ended = false;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "seed") {
      ls >> ds.seed;
    } else if (key == "sample_rate") {
      ls >> ds.sample_rate;
    } else if (key == "duration") {
      ls >> ds.duration;
    } else if (key == "n_classes") {
      ls >> expect_classes;
    } else if (key == "class") {
      SoundClass c;
      std::string kind;
      ls >> c.class_id >> c.label >> kind >> c.params.f0_lo >> c.params.f0_hi >>
          c.params.f1_lo >> c.params.f1_hi >> c.params.rate_lo >>
          c.params.rate_hi;
      if (!ls) throw std::runtime_error("load_manifest: bad class line");
      c.kind = parse_generator(kind);
      ds.classes.push_back(std::move(c));
    } else if (key == "end") {
      ended = true;
      break;
    } else {
      throw std::runtime_error("load_manifest: unknown key '" + key + "'");
    }
    if (!ls && key != "end")
      throw std::runtime_error("load_manifest: malformed line: " + line);
  }
  if (!ended) throw std::runtime_error("load_manifest: missing end marker");
  if (ds.classes.size() != expect_classes)
    throw std::runtime_error("load_manifest: class count mismatch");
  return ds;
}

// ---- out-of-domain text simulator -----------------------------------------

// Simulates a free-form description of a class: the clean text feature
// plus isotropic drift and a fixed off-manifold shift, both growing with
// `magnitude`. Retrieval over class anchors only sees the drift's
// projection onto the anchor subspace, so moderate magnitudes still
// retrieve correctly while the raw vector is already far from anything
// the separator was trained on.
constexpr double kOodNoiseGain = 6.0;

inline QueryEmbedding simulate_ood_description(
    const SyntheticEmbeddingSpace& space, std::uint32_t class_id,
    double magnitude, std::uint64_t seed) {
  if (!(magnitude >= 0.0))
    throw std::invalid_argument("simulate_ood_description: magnitude >= 0");
  QueryEmbedding q = space.anchor(class_id, Modality::text);
  const std::size_t d = q.dim();
  Rng rng(mix_seed({space.seed(), 0x00DDull, class_id, seed,
                    std::bit_cast<std::uint64_t>(magnitude)}));
  const double comp =
      kOodNoiseGain * magnitude / std::sqrt(static_cast<double>(d));
  const std::vector<double>& dir = space.paraphrase_dir();
  for (std::size_t i = 0; i < d; ++i)
    q.vector[i] += comp * rng.normal() + 0.5 * magnitude * dir[i];
  return q;
}

}  // namespace qsep
