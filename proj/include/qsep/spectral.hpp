#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace qsep {

constexpr double kPi = 3.141592653589793238462643383279502884;

// Mono audio in [-1, 1] nominal range.
struct Waveform {
  std::vector<double> samples;
  int sample_rate = 0;
};

// Row-major frames x bins grid of f32 values (magnitudes, masks, ...).
struct Grid {
  int frames = 0;
  int bins = 0;
  std::vector<float> v;

  Grid() = default;
  Grid(int t, int f, float fill = 0.0f)
      : frames(t), bins(f), v(static_cast<std::size_t>(t) * f, fill) {}

  float& at(int t, int f) { return v[static_cast<std::size_t>(t) * bins + f]; }
  float at(int t, int f) const {
    return v[static_cast<std::size_t>(t) * bins + f];
  }
  bool same_shape(const Grid& o) const {
    return frames == o.frames && bins == o.bins;
  }
};

struct Spectrogram {
  int frames = 0;
  int bins = 0;  // fft_size / 2 + 1
  int fft_size = 0;
  int hop = 0;
  int window_size = 0;
  std::vector<std::complex<double>> cells;  // frames x bins
  Grid magnitude;

  std::complex<double>& cell(int t, int f) {
    return cells[static_cast<std::size_t>(t) * bins + f];
  }
  const std::complex<double>& cell(int t, int f) const {
    return cells[static_cast<std::size_t>(t) * bins + f];
  }
};

enum class MaskKind { binary, soft };

struct Mask {
  Grid values;
  MaskKind kind = MaskKind::soft;
};

namespace detail {

inline bool is_pow2(int n) { return n > 0 && (n & (n - 1)) == 0; }

// In-place iterative radix-2 FFT. n must be a power of two.
inline void fft_radix2(std::vector<std::complex<double>>& a, bool inverse) {
  const int n = static_cast<int>(a.size());
  for (int i = 1, j = 0; i < n; ++i) {
    int bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (int len = 2; len <= n; len <<= 1) {
    const double ang = 2.0 * kPi / len * (inverse ? 1.0 : -1.0);
    const std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (int i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (int j = 0; j < len / 2; ++j) {
        const std::complex<double> u = a[i + j];
        const std::complex<double> v = a[i + j + len / 2] * w;
        a[i + j] = u + v;
        a[i + j + len / 2] = u - v;
        w *= wl;
      }
    }
  }
  if (inverse) {
    for (auto& x : a) x /= static_cast<double>(n);
  }
}

// Periodic Hann, exact overlap-add partner of itself at hop <= size/2.
inline std::vector<double> hann_window(int size) {
  std::vector<double> w(size);
  for (int i = 0; i < size; ++i)
    w[i] = 0.5 - 0.5 * std::cos(2.0 * kPi * i / size);
  return w;
}

inline int stft_frame_count(std::size_t n_samples, int hop) {
  return 1 + static_cast<int>((n_samples + hop - 1) / hop);
}

}  // namespace detail

// Analysis STFT. Frames are centered at t*hop; the signal is treated as
// zero outside its support, so every sample is covered.
inline Spectrogram stft(const Waveform& w, int fft_size, int hop,
                        int window_size) {
  if (w.samples.empty()) throw std::invalid_argument("stft: empty waveform");
  if (fft_size <= 0 || hop <= 0 || window_size <= 0)
    throw std::invalid_argument("stft: sizes must be positive");
  if (!detail::is_pow2(fft_size))
    throw std::invalid_argument("stft: fft_size must be a power of two");
  if (window_size > fft_size)
    throw std::invalid_argument("stft: window_size exceeds fft_size");
  if (hop > window_size)
    throw std::invalid_argument("stft: hop exceeds window_size");
  for (double s : w.samples)
    if (!std::isfinite(s))
      throw std::invalid_argument("stft: non-finite sample");

  const int n = static_cast<int>(w.samples.size());
  const int frames = detail::stft_frame_count(w.samples.size(), hop);
  const int bins = fft_size / 2 + 1;
  const std::vector<double> win = detail::hann_window(window_size);

  Spectrogram s;
  s.frames = frames;
  s.bins = bins;
  s.fft_size = fft_size;
  s.hop = hop;
  s.window_size = window_size;
  s.cells.resize(static_cast<std::size_t>(frames) * bins);
  s.magnitude = Grid(frames, bins);

  std::vector<std::complex<double>> buf(fft_size);
  for (int t = 0; t < frames; ++t) {
    const int start = t * hop - window_size / 2;
    for (int i = 0; i < fft_size; ++i) {
      double x = 0.0;
      if (i < window_size) {
        const int src = start + i;
        if (src >= 0 && src < n) x = w.samples[src] * win[i];
      }
      buf[i] = {x, 0.0};
    }
    detail::fft_radix2(buf, false);
    for (int f = 0; f < bins; ++f) {
      s.cell(t, f) = buf[f];
      s.magnitude.at(t, f) = static_cast<float>(std::abs(buf[f]));
    }
  }
  return s;
}

// Weighted overlap-add synthesis with the same Hann window; exact inverse
// of stft (up to rounding) for hop <= window_size / 2.
inline Waveform istft(const Spectrogram& s, std::size_t out_len,
                      int sample_rate = 0) {
  if (s.bins != s.fft_size / 2 + 1)
    throw std::invalid_argument("istft: bins do not match fft_size");
  if (s.cells.size() != static_cast<std::size_t>(s.frames) * s.bins)
    throw std::invalid_argument("istft: cell count does not match geometry");
  if (s.hop > s.window_size / 2)
    throw std::invalid_argument(
        "istft: overlap-add needs hop <= window_size / 2");

  const std::vector<double> win = detail::hann_window(s.window_size);
  std::vector<double> acc(out_len, 0.0);
  std::vector<double> norm(out_len, 0.0);

  std::vector<std::complex<double>> buf(s.fft_size);
  for (int t = 0; t < s.frames; ++t) {
    for (int f = 0; f < s.bins; ++f) buf[f] = s.cell(t, f);
    for (int f = s.bins; f < s.fft_size; ++f)
      buf[f] = std::conj(s.cell(t, s.fft_size - f));
    detail::fft_radix2(buf, true);
    const int start = t * s.hop - s.window_size / 2;
    for (int i = 0; i < s.window_size; ++i) {
      const int dst = start + i;
      if (dst < 0 || dst >= static_cast<int>(out_len)) continue;
      acc[dst] += buf[i].real() * win[i];
      norm[dst] += win[i] * win[i];
    }
  }

  Waveform out;
  out.sample_rate = sample_rate;
  out.samples.resize(out_len);
  for (std::size_t i = 0; i < out_len; ++i)
    out.samples[i] = norm[i] > 1e-12 ? acc[i] / norm[i] : 0.0;
  return out;
}

// Scale complex cells elementwise; phase is untouched.
inline Spectrogram apply_mask(const Spectrogram& s, const Mask& m) {
  if (m.values.frames != s.frames || m.values.bins != s.bins)
    throw std::invalid_argument("apply_mask: geometry mismatch");
  Spectrogram out = s;
  for (int t = 0; t < s.frames; ++t) {
    for (int f = 0; f < s.bins; ++f) {
      const double g = m.values.at(t, f);
      out.cell(t, f) = s.cell(t, f) * g;
      out.magnitude.at(t, f) = static_cast<float>(std::abs(out.cell(t, f)));
    }
  }
  return out;
}

// Per-bin indicator that source i dominates all others; ties go to the
// lowest source index so the n masks always partition the grid.
inline Mask ideal_binary_mask(const std::vector<Spectrogram>& sources,
                              std::size_t index) {
  if (sources.empty())
    throw std::invalid_argument("ideal_binary_mask: no sources");
  if (index >= sources.size())
    throw std::invalid_argument("ideal_binary_mask: index out of range");
  const Spectrogram& first = sources.front();
  for (const Spectrogram& s : sources)
    if (s.frames != first.frames || s.bins != first.bins)
      throw std::invalid_argument("ideal_binary_mask: geometry mismatch");

  Mask m;
  m.kind = MaskKind::binary;
  m.values = Grid(first.frames, first.bins);
  for (int t = 0; t < first.frames; ++t) {
    for (int f = 0; f < first.bins; ++f) {
      std::size_t winner = 0;
      float best = sources[0].magnitude.at(t, f);
      for (std::size_t i = 1; i < sources.size(); ++i) {
        const float mag = sources[i].magnitude.at(t, f);
        if (mag > best) {
          best = mag;
          winner = i;
        }
      }
      m.values.at(t, f) = (winner == index) ? 1.0f : 0.0f;
    }
  }
  return m;
}

}  // namespace qsep
