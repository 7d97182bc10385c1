#pragma once

// Record-level signal conditioning and the spectrogram front end: Butterworth
// band-pass, rational polyphase resampling, robust per-channel scaling, the
// Hamming-window STFT and temporal-context normalization.

#include <cstdint>
#include <span>
#include <vector>

#include "sleepnet/common.hpp"

namespace sleepnet {

struct PreprocessConfig {
  double band_low_hz = 0.2;
  double band_high_hz = 30.0;
  double target_rate_hz = 60.0;
  double clip_multiplier = 20.0;
  std::int64_t n_fft = 128;
  std::int64_t n_stride = 60;

  std::int64_t f_fft() const { return n_fft / 2 + 1; }
  void validate() const;
};

// Causal 3rd-order Butterworth band-pass, run as second-order sections.
// Requires fs > 2 * high.
std::vector<float> bandpass(std::span<const float> signal, double fs, double low, double high);

// Rational polyphase resampling with a windowed-sinc anti-aliasing low-pass.
// Output length is round(len * fs_out / fs_in).
std::vector<float> resample(std::span<const float> signal, double fs_in, double fs_out);

// Subtract the median, divide by the interquartile range, clip to
// +-clip_multiplier. A channel with IQR below 1e-12 becomes all zeros.
std::vector<float> robust_scale_channel(std::span<const float> channel, double clip_multiplier);

double median_of(std::span<const float> values);
double iqr_of(std::span<const float> values);

// Log-magnitude spectrogram, F_fft x L_fft with bins on rows. Frame t covers
// samples [t * n_stride, t * n_stride + n_fft); L_fft = (L - n_fft) / n_stride
// by integer division. Values are log(magnitude + 1e-20).
struct Spectrogram {
  std::int64_t n_bins = 0;    // F_fft
  std::int64_t n_frames = 0;  // L_fft
  std::vector<float> values;  // [bin][frame]

  float at(std::int64_t bin, std::int64_t frame) const { return values[static_cast<std::size_t>(bin * n_frames + frame)]; }
};

// Precomputed window and DFT tables, reusable across epochs and threads.
class StftPlan {
 public:
  StftPlan(std::int64_t n_fft, std::int64_t n_stride);
  Spectrogram run(std::span<const float> epoch) const;
  std::int64_t n_fft() const { return n_fft_; }
  std::int64_t n_stride() const { return n_stride_; }

 private:
  std::int64_t n_fft_;
  std::int64_t n_stride_;
  std::vector<double> window_;  // Hamming
  std::vector<double> cos_;     // [bin][sample]
  std::vector<double> sin_;
};

Spectrogram stft(std::span<const float> epoch, const PreprocessConfig& cfg);

// Normalized spectrogram tensor for T consecutive epochs; the model's input.
// Values laid out as [epoch][channel][frame][bin].
struct SpectrogramContext {
  std::int64_t n_epochs = 0;    // T
  std::int64_t n_channels = 0;  // C
  std::int64_t n_bins = 0;      // F_fft
  std::int64_t n_frames = 0;    // L_fft

  std::vector<float> values;

  std::int64_t size() const { return n_epochs * n_channels * n_bins * n_frames; }
  float& at(std::int64_t t, std::int64_t c, std::int64_t frame, std::int64_t bin) {
    return values[static_cast<std::size_t>(((t * n_channels + c) * n_frames + frame) * n_bins + bin)];
  }
  float at(std::int64_t t, std::int64_t c, std::int64_t frame, std::int64_t bin) const {
    return values[static_cast<std::size_t>(((t * n_channels + c) * n_frames + frame) * n_bins + bin)];
  }
};

// For every (channel, frequency-bin) pair, subtract the mean and divide by the
// standard deviation taken over all T * L_fft frames of the context. Bins with
// a deviation below 1e-12 are zeroed.
void normalize_context(SpectrogramContext& ctx);

}  // namespace sleepnet
