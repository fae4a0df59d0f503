#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "qsep/spectral.hpp"

namespace qsep {

namespace detail {

inline void put_u32(std::string& s, std::uint32_t v) {
  char b[4];
  b[0] = static_cast<char>(v & 0xff);
  b[1] = static_cast<char>((v >> 8) & 0xff);
  b[2] = static_cast<char>((v >> 16) & 0xff);
  b[3] = static_cast<char>((v >> 24) & 0xff);
  s.append(b, 4);
}

inline void put_u16(std::string& s, std::uint16_t v) {
  char b[2];
  b[0] = static_cast<char>(v & 0xff);
  b[1] = static_cast<char>((v >> 8) & 0xff);
  s.append(b, 2);
}

inline std::uint32_t get_u32(const unsigned char* p) {
  return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) |
         (std::uint32_t(p[2]) << 16) | (std::uint32_t(p[3]) << 24);
}

inline std::uint16_t get_u16(const unsigned char* p) {
  return std::uint16_t(p[0] | (p[1] << 8));
}

}  // namespace detail

// 16-bit PCM mono RIFF writer.
inline void write_wav(const std::string& path, const Waveform& w) {
  if (w.sample_rate <= 0)
    throw std::invalid_argument("write_wav: sample_rate must be positive");
  std::string out;
  const std::uint32_t n = static_cast<std::uint32_t>(w.samples.size());
  const std::uint32_t data_bytes = n * 2;
  out.append("RIFF");
  detail::put_u32(out, 36 + data_bytes);
  out.append("WAVEfmt ");
  detail::put_u32(out, 16);
  detail::put_u16(out, 1);  // PCM
  detail::put_u16(out, 1);  // mono
  detail::put_u32(out, static_cast<std::uint32_t>(w.sample_rate));
  detail::put_u32(out, static_cast<std::uint32_t>(w.sample_rate) * 2);
  detail::put_u16(out, 2);   // block align
  detail::put_u16(out, 16);  // bits per sample
  out.append("data");
  detail::put_u32(out, data_bytes);
  for (double s : w.samples) {
    double x = s;
    if (x > 1.0) x = 1.0;
    if (x < -1.0) x = -1.0;
    const int v = static_cast<int>(std::lround(x * 32767.0));
    detail::put_u16(out, static_cast<std::uint16_t>(v & 0xffff));
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("write_wav: cannot open " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw std::runtime_error("write_wav: write failed for " + path);
}

// Reads 16-bit PCM mono RIFF files; anything else is rejected.
inline Waveform read_wav(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("read_wav: cannot open " + path);
  std::vector<unsigned char> raw((std::istreambuf_iterator<char>(f)),
                                 std::istreambuf_iterator<char>());
  if (raw.size() < 44 || std::memcmp(raw.data(), "RIFF", 4) != 0 ||
      std::memcmp(raw.data() + 8, "WAVE", 4) != 0)
    throw std::runtime_error("read_wav: not a RIFF/WAVE file: " + path);

  std::size_t pos = 12;
  int sample_rate = 0;
  int channels = 0;
  int bits = 0;
  bool have_fmt = false;
  const unsigned char* data = nullptr;
  std::uint32_t data_len = 0;
  while (pos + 8 <= raw.size()) {
    const char* id = reinterpret_cast<const char*>(raw.data() + pos);
    const std::uint32_t len = detail::get_u32(raw.data() + pos + 4);
    if (pos + 8 + len > raw.size())
      throw std::runtime_error("read_wav: truncated chunk in " + path);
    if (std::memcmp(id, "fmt ", 4) == 0 && len >= 16) {
      const unsigned char* p = raw.data() + pos + 8;
      const int format = detail::get_u16(p);
      channels = detail::get_u16(p + 2);
      sample_rate = static_cast<int>(detail::get_u32(p + 4));
      bits = detail::get_u16(p + 14);
      if (format != 1)
        throw std::runtime_error("read_wav: only PCM is supported: " + path);
      have_fmt = true;
    } else if (std::memcmp(id, "data", 4) == 0) {
      data = raw.data() + pos + 8;
      data_len = len;
    }
    pos += 8 + len + (len & 1);
  }
  if (!have_fmt || data == nullptr)
    throw std::runtime_error("read_wav: missing fmt/data chunk: " + path);
  if (channels != 1)
    throw std::runtime_error("read_wav: only mono is supported: " + path);
  if (bits != 16)
    throw std::runtime_error("read_wav: only 16-bit PCM is supported: " +
                             path);

  Waveform w;
  w.sample_rate = sample_rate;
  w.samples.resize(data_len / 2);
  for (std::size_t i = 0; i < w.samples.size(); ++i) {
    const std::int16_t v =
        static_cast<std::int16_t>(detail::get_u16(data + 2 * i));
    w.samples[i] = static_cast<double>(v) / 32767.0;
  }
  return w;
}

}  // namespace qsep
