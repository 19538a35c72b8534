#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "vcraft/errors.hpp"

namespace vcraft {

namespace detail {
inline void put_le(std::ofstream& out, std::uint32_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xff));
}
}  // namespace detail

// 16-bit PCM mono RIFF/WAVE. Samples are clipped to [-1, 1].
inline void write_wav(const std::filesystem::path& path, std::span<const float> samples,
                      int sample_rate) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  const auto data_bytes = static_cast<std::uint32_t>(samples.size() * 2);
  out.write("RIFF", 4);
  detail::put_le(out, 36 + data_bytes, 4);
  out.write("WAVEfmt ", 8);
  detail::put_le(out, 16, 4);
  detail::put_le(out, 1, 2);  // PCM
  detail::put_le(out, 1, 2);  // mono
  detail::put_le(out, static_cast<std::uint32_t>(sample_rate), 4);
  detail::put_le(out, static_cast<std::uint32_t>(sample_rate * 2), 4);
  detail::put_le(out, 2, 2);
  detail::put_le(out, 16, 2);
  out.write("data", 4);
  detail::put_le(out, data_bytes, 4);
  for (float s : samples) {
    const float c = std::clamp(s, -1.0f, 1.0f);
    const auto v = static_cast<std::int16_t>(std::lround(c * 32767.0f));
    detail::put_le(out, static_cast<std::uint16_t>(v), 2);
  }
  if (!out) throw IoError("write failed for " + path.string());
}

struct WavData {
  std::vector<float> samples;
  int sample_rate = 0;
};

// Reads what write_wav produces: 16-bit PCM mono. Unknown chunks are
// skipped.
inline WavData read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  auto u32 = [&](const char* what) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw IoError(path.string() + ": truncated " + what);
    return static_cast<std::uint32_t>(b[0] | (b[1] << 8) | (b[2] << 16) | (std::uint32_t{b[3]} << 24));
  };
  char tag[4];
  in.read(tag, 4);
  if (!in || std::string(tag, 4) != "RIFF") throw IoError(path.string() + ": not a RIFF file");
  u32("riff size");
  in.read(tag, 4);
  if (!in || std::string(tag, 4) != "WAVE") throw IoError(path.string() + ": not a WAVE file");
  WavData wav;
  bool have_fmt = false;
  while (in.read(tag, 4)) {
    const std::string id(tag, 4);
    const std::uint32_t size = u32("chunk size");
    if (id == "fmt ") {
      std::vector<unsigned char> f(size);
      in.read(reinterpret_cast<char*>(f.data()), size);
      if (!in || size < 16) throw IoError(path.string() + ": bad fmt chunk");
      const int format = f[0] | (f[1] << 8), channels = f[2] | (f[3] << 8), bits = f[14] | (f[15] << 8);
      if (format != 1 || channels != 1 || bits != 16) {
        throw IoError(path.string() + ": only 16-bit PCM mono is supported");
      }
      wav.sample_rate = static_cast<int>(f[4] | (f[5] << 8) | (f[6] << 16) | (std::uint32_t{f[7]} << 24));
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) throw IoError(path.string() + ": data chunk before fmt");
      std::vector<unsigned char> d(size);
      in.read(reinterpret_cast<char*>(d.data()), size);
      if (!in) throw IoError(path.string() + ": truncated data chunk");
      wav.samples.resize(size / 2);
      for (std::size_t i = 0; i < wav.samples.size(); ++i) {
        const auto v = static_cast<std::int16_t>(d[2 * i] | (d[2 * i + 1] << 8));
        wav.samples[i] = static_cast<float>(v) / 32767.0f;
      }
      return wav;
    } else {
      in.seekg(size + (size & 1), std::ios::cur);
    }
  }
  throw IoError(path.string() + ": no data chunk");
}

}  // namespace vcraft
