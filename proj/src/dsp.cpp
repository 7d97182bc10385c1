#include "sleepnet/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numeric>

namespace sleepnet {

namespace {

constexpr double kPi = 3.14159265358979323846;

struct Biquad {
  double b0 = 1, b1 = 0, b2 = 0;  // numerator
  double a1 = 0, a2 = 0;          // denominator, a0 = 1
};

// 3rd-order Butterworth band-pass via the analog prototype, the low-pass to
// band-pass transform and the bilinear transform. Returns three sections with
// the overall gain folded into the first.
std::vector<Biquad> design_butter_bandpass(double fs, double low, double high) {
  using cplx = std::complex<double>;
  const int order = 3;

  const double w1 = 2.0 * fs * std::tan(kPi * low / fs);
  const double w2 = 2.0 * fs * std::tan(kPi * high / fs);
  const double w0 = std::sqrt(w1 * w2);
  const double bw = w2 - w1;

  // prototype poles on the unit circle, left half-plane
  std::vector<cplx> proto;
  for (int k = 1; k <= order; ++k) {
    const double theta = kPi * (2.0 * k + order - 1.0) / (2.0 * order);
    proto.emplace_back(std::cos(theta), std::sin(theta));
  }

  // band-pass poles: s = (bw p +- sqrt((bw p)^2 - 4 w0^2)) / 2
  std::vector<cplx> analog;
  for (const cplx& p : proto) {
    const cplx bp = bw * p;
    const cplx disc = std::sqrt(bp * bp - 4.0 * w0 * w0);
    analog.push_back((bp + disc) * 0.5);
    analog.push_back((bp - disc) * 0.5);
  }

  // bilinear transform
  std::vector<cplx> zpoles;
  for (const cplx& s : analog) zpoles.push_back((2.0 * fs + s) / (2.0 * fs - s));

  // pair conjugates (and the real poles with each other) into sections
  std::vector<cplx> complex_poles;
  std::vector<double> real_poles;
  for (const cplx& p : zpoles) {
    if (std::abs(p.imag()) < 1e-12)
      real_poles.push_back(p.real());
    else if (p.imag() > 0.0)
      complex_poles.push_back(p);
  }
  std::vector<Biquad> sections;
  for (const cplx& p : complex_poles) {
    Biquad s;
    s.b0 = 1;
    s.b1 = 0;
    s.b2 = -1;  // zeros at z = +1 and z = -1
    s.a1 = -2.0 * p.real();
    s.a2 = std::norm(p);
    sections.push_back(s);
  }
  for (std::size_t i = 0; i + 1 < real_poles.size(); i += 2) {
    Biquad s;
    s.b0 = 1;
    s.b1 = 0;
    s.b2 = -1;
    s.a1 = -(real_poles[i] + real_poles[i + 1]);
    s.a2 = real_poles[i] * real_poles[i + 1];
    sections.push_back(s);
  }

  // unit gain at the digital center frequency
  const double wc = 2.0 * std::atan(w0 / (2.0 * fs));
  const cplx z = std::exp(cplx(0.0, wc));
  const cplx z2 = z * z;
  cplx h(1.0, 0.0);
  for (const Biquad& s : sections) h *= (s.b0 * z2 + s.b1 * z + s.b2) / (z2 + s.a1 * z + s.a2);
  const double gain = 1.0 / std::abs(h);
  sections.front().b0 *= gain;
  sections.front().b1 *= gain;
  sections.front().b2 *= gain;
  return sections;
}

}  // namespace

void PreprocessConfig::validate() const {
  if (!(band_low_hz > 0.0) || !(band_low_hz < band_high_hz))
    throw ConfigError("preprocess: band edges must satisfy 0 < low < high");
  if (!(band_high_hz < target_rate_hz / 2.0))
    throw ConfigError("preprocess: band high edge must stay below the target Nyquist");
  if (n_fft <= 0 || n_stride <= 0 || n_stride > n_fft)
    throw ConfigError("preprocess: need 0 < N_stride <= N_fft");
  if (clip_multiplier <= 0.0) throw ConfigError("preprocess: clip multiplier must be positive");
}

std::vector<float> bandpass(std::span<const float> signal, double fs, double low, double high) {
  if (!(fs > 2.0 * high))
    throw ContractError("bandpass: sampling rate " + std::to_string(fs) +
                        " Hz cannot carry a " + std::to_string(high) + " Hz band edge");
  if (!(low > 0.0) || !(low < high)) throw ContractError("bandpass: need 0 < low < high");

  auto sections = design_butter_bandpass(fs, low, high);
  std::vector<float> out(signal.size());
  std::vector<double> s1(sections.size(), 0.0), s2(sections.size(), 0.0);
  for (std::size_t n = 0; n < signal.size(); ++n) {
    double x = static_cast<double>(signal[n]);
    for (std::size_t si = 0; si < sections.size(); ++si) {
      const Biquad& q = sections[si];
      const double y = q.b0 * x + s1[si];
      s1[si] = q.b1 * x - q.a1 * y + s2[si];
      s2[si] = q.b2 * x - q.a2 * y;
      x = y;
    }
    out[n] = static_cast<float>(x);
  }
  return out;
}

std::vector<float> resample(std::span<const float> signal, double fs_in, double fs_out) {
  if (!(fs_in > 0.0) || !(fs_out > 0.0)) throw ContractError("resample: rates must be positive");

  // rational factors from rates rounded to 3 decimals
  const std::int64_t a = std::llround(fs_in * 1000.0);
  const std::int64_t b = std::llround(fs_out * 1000.0);
  const std::int64_t g = std::gcd(a, b);
  const std::int64_t up = b / g;    // L
  const std::int64_t down = a / g;  // M
  if (up == down) return std::vector<float>(signal.begin(), signal.end());

  const std::int64_t len = static_cast<std::int64_t>(signal.size());
  const std::int64_t n_out = (2 * len * up + down) / (2 * down);  // round(len * L / M)

  // windowed-sinc low-pass at the upsampled rate; cutoff pi / max(L, M), gain L
  const std::int64_t half = 10 * std::max(up, down);
  const std::int64_t taps = 2 * half + 1;
  const double fc = 1.0 / static_cast<double>(std::max(up, down));
  std::vector<double> h(static_cast<std::size_t>(taps));
  for (std::int64_t j = 0; j < taps; ++j) {
    const double t = static_cast<double>(j - half);
    const double sinc = (t == 0.0) ? 1.0 : std::sin(kPi * fc * t) / (kPi * fc * t);
    const double win = 0.54 - 0.46 * std::cos(2.0 * kPi * j / (taps - 1));
    h[static_cast<std::size_t>(j)] = static_cast<double>(up) * fc * sinc * win;
  }

  std::vector<float> out(static_cast<std::size_t>(n_out));
  for (std::int64_t n = 0; n < n_out; ++n) {
    // output sample sits at upsampled index n * M; the filter is centered there
    const std::int64_t center = n * down + half;
    std::int64_t j = center % up;  // smallest tap hitting a real input sample
    double acc = 0.0;
    for (; j < taps; j += up) {
      const std::int64_t src = (center - j) / up;
      if (src < 0) break;  // earlier taps only reach further back
      if (src >= len) continue;
      acc += h[static_cast<std::size_t>(j)] * static_cast<double>(signal[static_cast<std::size_t>(src)]);
    }
    out[static_cast<std::size_t>(n)] = static_cast<float>(acc);
  }
  return out;
}

namespace {

double quantile_sorted(const std::vector<double>& sorted, double p) {
  const std::size_t n = sorted.size();
  if (n == 1) return sorted[0];
  const double h = static_cast<double>(n - 1) * p;
  const std::size_t lo = static_cast<std::size_t>(h);
  const double frac = h - static_cast<double>(lo);
  if (lo + 1 >= n) return sorted[n - 1];
  return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

}  // namespace

double median_of(std::span<const float> values) {
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  return quantile_sorted(v, 0.5);
}

double iqr_of(std::span<const float> values) {
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  return quantile_sorted(v, 0.75) - quantile_sorted(v, 0.25);
}

std::vector<float> robust_scale_channel(std::span<const float> channel, double clip_multiplier) {
  if (channel.empty()) throw ContractError("robust_scale: empty channel");
  std::vector<double> sorted(channel.begin(), channel.end());
  std::sort(sorted.begin(), sorted.end());
  const double med = quantile_sorted(sorted, 0.5);
  const double iqr = quantile_sorted(sorted, 0.75) - quantile_sorted(sorted, 0.25);
  std::vector<float> out(channel.size());
  if (iqr < 1e-12) return out;  // degenerate channel -> zeros
  for (std::size_t i = 0; i < channel.size(); ++i) {
    double v = (static_cast<double>(channel[i]) - med) / iqr;
    v = std::clamp(v, -clip_multiplier, clip_multiplier);
    out[i] = static_cast<float>(v);
  }
  return out;
}

StftPlan::StftPlan(std::int64_t n_fft, std::int64_t n_stride) : n_fft_(n_fft), n_stride_(n_stride) {
  const std::int64_t bins = n_fft / 2 + 1;
  window_.resize(static_cast<std::size_t>(n_fft));
  for (std::int64_t i = 0; i < n_fft; ++i)
    window_[static_cast<std::size_t>(i)] =
        0.54 - 0.46 * std::cos(2.0 * kPi * static_cast<double>(i) / static_cast<double>(n_fft - 1));
  cos_.resize(static_cast<std::size_t>(bins * n_fft));
  sin_.resize(static_cast<std::size_t>(bins * n_fft));
  for (std::int64_t k = 0; k < bins; ++k)
    for (std::int64_t i = 0; i < n_fft; ++i) {
      const double ang = 2.0 * kPi * static_cast<double>(k) * static_cast<double>(i) /
                         static_cast<double>(n_fft);
      cos_[static_cast<std::size_t>(k * n_fft + i)] = std::cos(ang);
      sin_[static_cast<std::size_t>(k * n_fft + i)] = std::sin(ang);
    }
}

Spectrogram StftPlan::run(std::span<const float> epoch) const {
  const std::int64_t L = static_cast<std::int64_t>(epoch.size());
  if (L < n_fft_)
    throw ContractError("stft: epoch of " + std::to_string(L) + " samples is shorter than N_fft = " +
                        std::to_string(n_fft_));
  const std::int64_t bins = n_fft_ / 2 + 1;
  const std::int64_t frames = (L - n_fft_) / n_stride_;

  Spectrogram spec;
  spec.n_bins = bins;
  spec.n_frames = frames;
  spec.values.resize(static_cast<std::size_t>(bins * frames));

  std::vector<double> buf(static_cast<std::size_t>(n_fft_));
  for (std::int64_t t = 0; t < frames; ++t) {
    const float* src = epoch.data() + t * n_stride_;
    for (std::int64_t i = 0; i < n_fft_; ++i)
      buf[static_cast<std::size_t>(i)] = window_[static_cast<std::size_t>(i)] * static_cast<double>(src[i]);
    for (std::int64_t k = 0; k < bins; ++k) {
      const double* ct = cos_.data() + k * n_fft_;
      const double* st = sin_.data() + k * n_fft_;
      double re = 0.0, im = 0.0;
      for (std::int64_t i = 0; i < n_fft_; ++i) {
        re += buf[static_cast<std::size_t>(i)] * ct[i];
        im -= buf[static_cast<std::size_t>(i)] * st[i];
      }
      const double mag = std::sqrt(re * re + im * im);
      spec.values[static_cast<std::size_t>(k * frames + t)] = static_cast<float>(std::log(mag + 1e-20));
    }
  }
  return spec;
}

Spectrogram stft(std::span<const float> epoch, const PreprocessConfig& cfg) {
  return StftPlan(cfg.n_fft, cfg.n_stride).run(epoch);
}

void normalize_context(SpectrogramContext& ctx) {
  if (ctx.n_epochs < 1) throw ContractError("normalize_context: need at least one epoch");
  const std::int64_t samples = ctx.n_epochs * ctx.n_frames;
  for (std::int64_t c = 0; c < ctx.n_channels; ++c) {
    for (std::int64_t bin = 0; bin < ctx.n_bins; ++bin) {
      double mean = 0.0;
      for (std::int64_t t = 0; t < ctx.n_epochs; ++t)
        for (std::int64_t f = 0; f < ctx.n_frames; ++f) mean += static_cast<double>(ctx.at(t, c, f, bin));
      mean /= static_cast<double>(samples);
      double var = 0.0;
      for (std::int64_t t = 0; t < ctx.n_epochs; ++t)
        for (std::int64_t f = 0; f < ctx.n_frames; ++f) {
          const double d = static_cast<double>(ctx.at(t, c, f, bin)) - mean;
          var += d * d;
        }
      var /= static_cast<double>(samples);
      const double sd = std::sqrt(var);
      if (sd < 1e-12) {
        for (std::int64_t t = 0; t < ctx.n_epochs; ++t)
          for (std::int64_t f = 0; f < ctx.n_frames; ++f) ctx.at(t, c, f, bin) = 0.0f;
      } else {
        const double inv = 1.0 / sd;
        for (std::int64_t t = 0; t < ctx.n_epochs; ++t)
          for (std::int64_t f = 0; f < ctx.n_frames; ++f)
            ctx.at(t, c, f, bin) = static_cast<float>((static_cast<double>(ctx.at(t, c, f, bin)) - mean) * inv);
      }
    }
  }
}

}  // namespace sleepnet
