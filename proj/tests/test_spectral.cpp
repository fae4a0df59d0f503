#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <complex>
#include <filesystem>
#include <vector>

#include "qsep/rng.hpp"
#include "qsep/spectral.hpp"
#include "qsep/wav.hpp"

using namespace qsep;

namespace {

Waveform random_waveform(std::size_t n, std::uint64_t seed,
                         int sample_rate = 8000) {
  Rng rng(seed);
  Waveform w;
  w.sample_rate = sample_rate;
  w.samples.resize(n);
  for (double& x : w.samples) x = rng.uniform(-0.9, 0.9);
  return w;
}

// Textbook single-frame DFT, written independently of the fft used by
// the library: frame t covers samples t*hop - win/2 .. + fft-1 window
// applied over the first win samples, zeros elsewhere.
std::complex<double> naive_stft_cell(const Waveform& w, int fft, int hop,
                                     int win, int frame, int bin) {
  const std::vector<double> window = detail::hann_window(win);
  std::complex<double> acc(0.0, 0.0);
  const long start = static_cast<long>(frame) * hop - win / 2;
  for (int i = 0; i < win; ++i) {
    const long s = start + i;
    double x = 0.0;
    if (s >= 0 && s < static_cast<long>(w.samples.size()))
      x = w.samples[static_cast<std::size_t>(s)];
    const double ang = -2.0 * kPi * bin * i / fft;
    acc += x * window[static_cast<std::size_t>(i)] *
           std::complex<double>(std::cos(ang), std::sin(ang));
  }
  return acc;
}

}  // namespace

TEST_CASE("hann window is periodic and symmetric") {
  const auto w = detail::hann_window(16);
  REQUIRE(w.size() == 16);
  CHECK(w[0] == Catch::Approx(0.0).margin(1e-15));
  double sum = 0.0;
  for (double v : w) sum += v;
  CHECK(sum == Catch::Approx(8.0).margin(1e-12));  // N/2 for periodic hann
  for (int i = 1; i < 16; ++i)
    CHECK(w[i] == Catch::Approx(w[16 - i]).margin(1e-15));
}

TEST_CASE("frame count covers the signal with one frame beyond") {
  CHECK(detail::stft_frame_count(1, 16) == 2);
  CHECK(detail::stft_frame_count(16, 16) == 2);
  CHECK(detail::stft_frame_count(17, 16) == 3);
  CHECK(detail::stft_frame_count(160, 16) == 11);
}

TEST_CASE("stft matches a naive per-frame dft") {
  const Waveform w = random_waveform(500, 11);
  const int fft = 64, hop = 16, win = 64;
  const Spectrogram s = stft(w, fft, hop, win);
  REQUIRE(s.bins == fft / 2 + 1);
  REQUIRE(s.frames == static_cast<int>(detail::stft_frame_count(500, hop)));
  double worst = 0.0;
  for (int t = 0; t < s.frames; t += 7) {
    for (int f = 0; f < s.bins; f += 5) {
      const std::complex<double> ref = naive_stft_cell(w, fft, hop, win, t, f);
      worst = std::max(worst, std::abs(ref - s.cell(t, f)));
    }
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("stft matches the naive dft with a window shorter than the fft") {
  const Waveform w = random_waveform(300, 12);
  const int fft = 128, hop = 16, win = 64;
  const Spectrogram s = stft(w, fft, hop, win);
  double worst = 0.0;
  for (int t = 0; t < s.frames; t += 3)
    for (int f = 0; f < s.bins; f += 11)
      worst = std::max(
          worst, std::abs(naive_stft_cell(w, fft, hop, win, t, f) -
                          s.cell(t, f)));
  CHECK(worst < 1e-6);
}

TEST_CASE("magnitude grid mirrors the complex cells") {
  const Waveform w = random_waveform(256, 13);
  const Spectrogram s = stft(w, 64, 16, 64);
  for (int t = 0; t < s.frames; ++t)
    for (int f = 0; f < s.bins; ++f)
      CHECK(static_cast<double>(s.magnitude.at(t, f)) ==
            Catch::Approx(std::abs(s.cell(t, f))).margin(1e-5));
}

TEST_CASE("istft inverts stft") {
  for (std::uint64_t seed : {21ull, 22ull, 23ull}) {
    const Waveform w = random_waveform(1000 + 37 * seed, seed);
    const Spectrogram s = stft(w, 256, 64, 256);
    const Waveform back = istft(s, w.samples.size(), w.sample_rate);
    REQUIRE(back.samples.size() == w.samples.size());
    double worst = 0.0;
    for (std::size_t i = 0; i < w.samples.size(); ++i)
      worst = std::max(worst, std::abs(w.samples[i] - back.samples[i]));
    CHECK(worst < 1e-6);
  }
}

TEST_CASE("istft inverts stft with zero-padded window") {
  const Waveform w = random_waveform(800, 31);
  const Spectrogram s = stft(w, 256, 32, 128);
  const Waveform back = istft(s, w.samples.size(), w.sample_rate);
  double worst = 0.0;
  for (std::size_t i = 0; i < w.samples.size(); ++i)
    worst = std::max(worst, std::abs(w.samples[i] - back.samples[i]));
  CHECK(worst < 1e-6);
}

TEST_CASE("stft validates its arguments") {
  Waveform w = random_waveform(100, 1);
  CHECK_THROWS(stft(Waveform{}, 64, 16, 64));
  CHECK_THROWS(stft(w, 63, 16, 63));   // not a power of two
  CHECK_THROWS(stft(w, 64, 0, 64));    // hop must be positive
  CHECK_THROWS(stft(w, 64, 16, 128));  // window larger than fft
  CHECK_THROWS(stft(w, 64, 65, 64));   // hop larger than window
  Waveform bad = w;
  bad.samples[3] = std::nan("");
  CHECK_THROWS(stft(bad, 64, 16, 64));
}

TEST_CASE("istft requires enough overlap") {
  const Waveform w = random_waveform(300, 2);
  const Spectrogram s = stft(w, 64, 48, 64);  // hop > win/2: analysis only
  CHECK_THROWS(istft(s, w.samples.size(), w.sample_rate));
}

TEST_CASE("ideal binary masks partition every bin, ties to lowest index") {
  // Hand-build three spectrograms with controlled magnitudes.
  const int frames = 6, bins = 5;
  std::vector<Spectrogram> specs(3);
  Rng rng(77);
  for (auto& s : specs) {
    s.frames = frames;
    s.bins = bins;
    s.fft_size = 8;
    s.hop = 2;
    s.window_size = 8;
    s.cells.resize(static_cast<std::size_t>(frames) * bins);
    s.magnitude.frames = frames;
    s.magnitude.bins = bins;
    s.magnitude.v.resize(s.cells.size());
    for (std::size_t i = 0; i < s.cells.size(); ++i) {
      // Coarse quantization forces plenty of exact ties.
      const double m = std::floor(rng.uniform() * 4.0);
      s.cells[i] = std::complex<double>(m, 0.0);
      s.magnitude.v[i] = static_cast<float>(m);
    }
  }
  std::vector<Mask> masks;
  for (std::size_t i = 0; i < specs.size(); ++i)
    masks.push_back(ideal_binary_mask(specs, i));
  for (int t = 0; t < frames; ++t) {
    for (int f = 0; f < bins; ++f) {
      double total = 0.0;
      int winner = -1;
      for (std::size_t i = 0; i < masks.size(); ++i) {
        const float v = masks[i].values.at(t, f);
        REQUIRE((v == 0.0f || v == 1.0f));
        total += v;
        if (v == 1.0f) winner = static_cast<int>(i);
      }
      CHECK(total == 1.0);  // exactly one owner per bin
      // Brute-force expected winner: largest magnitude, lowest index wins.
      int expect = 0;
      double best = std::abs(specs[0].cell(t, f));
      for (int i = 1; i < 3; ++i) {
        const double m = std::abs(specs[i].cell(t, f));
        if (m > best) {
          best = m;
          expect = i;
        }
      }
      CHECK(winner == expect);
    }
  }
}

TEST_CASE("apply_mask scales cells and magnitudes") {
  const Waveform w = random_waveform(400, 5);
  const Spectrogram s = stft(w, 64, 16, 64);
  Mask m;
  m.kind = MaskKind::soft;
  m.values.frames = s.frames;
  m.values.bins = s.bins;
  m.values.v.assign(static_cast<std::size_t>(s.frames) * s.bins, 0.0f);
  Rng rng(6);
  for (float& v : m.values.v) v = static_cast<float>(rng.uniform());
  const Spectrogram out = apply_mask(s, m);
  for (int t = 0; t < s.frames; t += 3) {
    for (int f = 0; f < s.bins; f += 2) {
      const double g = static_cast<double>(m.values.at(t, f));
      CHECK(std::abs(out.cell(t, f) - s.cell(t, f) * g) < 1e-12);
      CHECK(static_cast<double>(out.magnitude.at(t, f)) ==
            Catch::Approx(std::abs(s.cell(t, f)) * g).margin(1e-4));
    }
  }
  Mask bad = m;
  bad.values.frames -= 1;
  bad.values.v.resize(static_cast<std::size_t>(bad.values.frames) * s.bins);
  CHECK_THROWS(apply_mask(s, bad));
}

TEST_CASE("masking a two-tone mixture with its ideal masks separates it") {
  // 440 Hz vs 2500 Hz tones: nearly disjoint spectral support, so the
  // binary mask applied to the mixture should recover each tone well.
  const int sr = 8000, n = 4000;
  Waveform a, b, mix;
  a.sample_rate = b.sample_rate = mix.sample_rate = sr;
  a.samples.resize(n);
  b.samples.resize(n);
  mix.samples.resize(n);
  for (int i = 0; i < n; ++i) {
    a.samples[i] = 0.4 * std::sin(2.0 * kPi * 440.0 * i / sr);
    b.samples[i] = 0.4 * std::sin(2.0 * kPi * 2500.0 * i / sr);
    mix.samples[i] = a.samples[i] + b.samples[i];
  }
  std::vector<Spectrogram> specs = {stft(a, 512, 128, 512),
                                    stft(b, 512, 128, 512)};
  const Spectrogram mix_spec = stft(mix, 512, 128, 512);
  for (int s = 0; s < 2; ++s) {
    const Mask m = ideal_binary_mask(specs, static_cast<std::size_t>(s));
    const Waveform est = istft(apply_mask(mix_spec, m), n, sr);
    const std::vector<double>& ref = s == 0 ? a.samples : b.samples;
    double num = 0.0, den = 0.0;
    for (int i = 0; i < n; ++i) {
      num += ref[i] * ref[i];
      const double d = ref[i] - est.samples[i];
      den += d * d;
    }
    const double sdr = 10.0 * std::log10(num / den);
    CHECK(sdr > 10.0);
  }
}

TEST_CASE("wav files round-trip") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "qsep_wav_test";
  fs::create_directories(dir);
  const Waveform w = random_waveform(777, 9, 8000);
  const std::string path = (dir / "t.wav").string();
  write_wav(path, w);
  const Waveform r = read_wav(path);
  REQUIRE(r.sample_rate == 8000);
  REQUIRE(r.samples.size() == w.samples.size());
  double worst = 0.0;
  for (std::size_t i = 0; i < w.samples.size(); ++i)
    worst = std::max(worst, std::abs(w.samples[i] - r.samples[i]));
  CHECK(worst <= 1.0 / 32768.0 + 1e-9);
  fs::remove_all(dir);
}

TEST_CASE("radix-2 fft round trips and matches a direct dft") {
  Rng rng(123);
  std::vector<std::complex<double>> x(64);
  for (auto& c : x) c = std::complex<double>(rng.normal(), rng.normal());
  // direct DFT
  std::vector<std::complex<double>> ref(64);
  for (int k = 0; k < 64; ++k) {
    std::complex<double> acc(0, 0);
    for (int i = 0; i < 64; ++i) {
      const double ang = -2.0 * kPi * k * i / 64.0;
      acc += x[static_cast<std::size_t>(i)] *
             std::complex<double>(std::cos(ang), std::sin(ang));
    }
    ref[static_cast<std::size_t>(k)] = acc;
  }
  auto y = x;
  detail::fft_radix2(y, false);
  for (int k = 0; k < 64; ++k)
    CHECK(std::abs(y[static_cast<std::size_t>(k)] -
                   ref[static_cast<std::size_t>(k)]) < 1e-9);
  detail::fft_radix2(y, true);
  for (int i = 0; i < 64; ++i)
    CHECK(std::abs(y[static_cast<std::size_t>(i)] -
                   x[static_cast<std::size_t>(i)]) < 1e-12);
}
