#pragma once

// Frame-level features of a 16 kHz waveform: magnitude spectrogram, MFCC,
// autocorrelation F0 and spectral RMS energy. All share one frame layout:
// frame i covers samples [i*hop, i*hop + window), no padding.

#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <unsupported/Eigen/FFT>

#include "vcraft/errors.hpp"

namespace vcraft {

struct SpectrogramConfig {
  std::size_t window_length = 640;
  std::size_t hop = 160;
  std::size_t fft_size = 1024;
  std::size_t mel_bands = 40;
  std::size_t mfcc_order = 13;
  double sample_rate = 16000.0;
  double log_floor = 1e-10;

  void validate() const {
    if (hop < 1 || hop > window_length || window_length > fft_size) {
      throw ConfigError("spectrogram needs hop <= window_length <= fft_size");
    }
    if (mel_bands < 2 || mfcc_order < 1 || mfcc_order >= mel_bands) {
      throw ConfigError("spectrogram needs 1 <= mfcc_order < mel_bands");
    }
  }
};

struct F0Config {
  double f_min = 80.0;
  double f_max = 600.0;
  double voicing_threshold = 0.3;
  SpectrogramConfig frames;

  void validate() const {
    frames.validate();
    if (!(f_min > 0.0 && f_min < f_max && f_max < frames.sample_rate / 2)) {
      throw ConfigError("f0 needs 0 < f_min < f_max < sample_rate / 2");
    }
  }
};

using FeatureSeq = std::vector<std::vector<double>>;

inline std::size_t frame_count(std::size_t samples, const SpectrogramConfig& cfg) {
  if (samples < cfg.window_length) {
    throw InvalidInput("waveform of " + std::to_string(samples) + " samples is shorter than the " +
                       std::to_string(cfg.window_length) + "-sample window");
  }
  return 1 + (samples - cfg.window_length) / cfg.hop;
}

inline std::vector<double> hann_window(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));
  }
  return w;
}

// |FFT| of each Hann-windowed frame, fft_size / 2 + 1 bins.
inline FeatureSeq magnitude_spectrogram(std::span<const float> wav, const SpectrogramConfig& cfg) {
  cfg.validate();
  const std::size_t frames = frame_count(wav.size(), cfg);
  const auto window = hann_window(cfg.window_length);
  const std::size_t bins = cfg.fft_size / 2 + 1;
  Eigen::FFT<double> fft;
  std::vector<double> buf(cfg.fft_size);
  std::vector<std::complex<double>> spec;
  FeatureSeq out(frames, std::vector<double>(bins));
  for (std::size_t f = 0; f < frames; ++f) {
    std::fill(buf.begin(), buf.end(), 0.0);
    for (std::size_t i = 0; i < cfg.window_length; ++i) {
      buf[i] = window[i] * static_cast<double>(wav[f * cfg.hop + i]);
    }
    fft.fwd(spec, buf);
    for (std::size_t b = 0; b < bins; ++b) out[f][b] = std::abs(spec[b]);
  }
  return out;
}

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

// Triangular HTK-spaced filters from 0 Hz to Nyquist; mel_bands x bins.
inline FeatureSeq mel_filterbank(const SpectrogramConfig& cfg) {
  const std::size_t bins = cfg.fft_size / 2 + 1;
  const double top = hz_to_mel(cfg.sample_rate / 2.0);
  std::vector<double> edges(cfg.mel_bands + 2);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    edges[i] = mel_to_hz(top * static_cast<double>(i) / static_cast<double>(cfg.mel_bands + 1));
  }
  FeatureSeq fb(cfg.mel_bands, std::vector<double>(bins, 0.0));
  for (std::size_t m = 0; m < cfg.mel_bands; ++m) {
    const double lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
    for (std::size_t b = 0; b < bins; ++b) {
      const double f = static_cast<double>(b) * cfg.sample_rate / static_cast<double>(cfg.fft_size);
      if (f > lo && f <= mid) {
        fb[m][b] = (f - lo) / (mid - lo);
      } else if (f > mid && f < hi) {
        fb[m][b] = (hi - f) / (hi - mid);
      }
    }
  }
  return fb;
}

// Log mel power, orthonormal DCT-II, coefficients 1..mfcc_order.
inline FeatureSeq mfcc(std::span<const float> wav, const SpectrogramConfig& cfg = {}) {
  const FeatureSeq spec = magnitude_spectrogram(wav, cfg);
  const FeatureSeq fb = mel_filterbank(cfg);
  const std::size_t nm = cfg.mel_bands;
  FeatureSeq out;
  out.reserve(spec.size());
  std::vector<double> logmel(nm);
  for (const auto& frame : spec) {
    for (std::size_t m = 0; m < nm; ++m) {
      double e = 0.0;
      for (std::size_t b = 0; b < frame.size(); ++b) e += fb[m][b] * frame[b] * frame[b];
      logmel[m] = std::log(std::max(e, cfg.log_floor));
    }
    std::vector<double> c(cfg.mfcc_order);
    for (std::size_t n = 1; n <= cfg.mfcc_order; ++n) {
      double s = 0.0;
      for (std::size_t m = 0; m < nm; ++m) {
        s += logmel[m] * std::cos(std::numbers::pi * static_cast<double>(n) *
                                  (static_cast<double>(m) + 0.5) / static_cast<double>(nm));
      }
      c[n - 1] = std::sqrt(2.0 / static_cast<double>(nm)) * s;
    }
    out.push_back(std::move(c));
  }
  return out;
}

// Normalized autocorrelation over lags for [f_min, f_max]. The smallest
// local peak within 95% of the best one is refined by parabolic
// interpolation; frames whose best correlation is under the voicing
// threshold report 0.
inline std::vector<double> f0_track(std::span<const float> wav, const F0Config& cfg = {}) {
  cfg.validate();
  const auto& fc = cfg.frames;
  const std::size_t frames = frame_count(wav.size(), fc);
  const auto lag_min = static_cast<std::size_t>(std::floor(fc.sample_rate / cfg.f_max));
  const auto lag_max = static_cast<std::size_t>(std::ceil(fc.sample_rate / cfg.f_min));
  if (lag_max + 2 >= fc.window_length) throw ConfigError("f0 lag range exceeds the window");
  std::vector<double> out(frames, 0.0);
  std::vector<double> r(lag_max + 2, 0.0);
  for (std::size_t f = 0; f < frames; ++f) {
    const float* x = wav.data() + f * fc.hop;
    const std::size_t w = fc.window_length;
    double rmax = -1.0;
    for (std::size_t lag = lag_min - 1; lag <= lag_max + 1; ++lag) {
      double xy = 0.0, xx = 0.0, yy = 0.0;
      for (std::size_t n = 0; n + lag < w; ++n) {
        const double a = x[n], b = x[n + lag];
        xy += a * b;
        xx += a * a;
        yy += b * b;
      }
      r[lag] = xx > 0.0 && yy > 0.0 ? xy / std::sqrt(xx * yy) : 0.0;
      if (lag >= lag_min && lag <= lag_max) rmax = std::max(rmax, r[lag]);
    }
    if (rmax < cfg.voicing_threshold) continue;
    for (std::size_t lag = lag_min; lag <= lag_max; ++lag) {
      if (r[lag] < 0.95 * rmax || r[lag] < r[lag - 1] || r[lag] < r[lag + 1]) continue;
      const double a = r[lag - 1], b = r[lag], c = r[lag + 1];
      const double denom = a - 2.0 * b + c;
      const double shift = denom < 0.0 ? 0.5 * (a - c) / denom : 0.0;
      out[f] = fc.sample_rate / (static_cast<double>(lag) + shift);
      break;
    }
  }
  return out;
}

// Root mean square over frequency bins of the magnitude spectrogram.
inline std::vector<double> energy_track(std::span<const float> wav,
                                        const SpectrogramConfig& cfg = {}) {
  const FeatureSeq spec = magnitude_spectrogram(wav, cfg);
  std::vector<double> out;
  out.reserve(spec.size());
  for (const auto& frame : spec) {
    double s = 0.0;
    for (double v : frame) s += v * v;
    out.push_back(std::sqrt(s / static_cast<double>(frame.size())));
  }
  return out;
}

}  // namespace vcraft
