#include "sleepnet/model.hpp"

namespace sleepnet {

void ModelConfig::validate() const {
  auto positive = [](std::int64_t v, const char* name) {
    if (v < 1) throw ConfigError(std::string("model: ") + name + " must be positive");
  };
  positive(temporal_context, "temporal_context");
  positive(epoch_samples, "epoch_samples");
  positive(n_fft, "n_fft");
  positive(n_stride, "n_stride");
  positive(freq_bins_reduced, "freq_bins_reduced");
  positive(n_heads, "n_heads");
  positive(channel_attention_size, "channel_attention_size");
  positive(epoch_gru_hidden, "epoch_gru_hidden");
  positive(epoch_features, "epoch_features");
  positive(frame_attention_size, "frame_attention_size");
  positive(seq_gru_hidden, "seq_gru_hidden");
  if (n_classes != kNumStages)
    throw ConfigError("model: the stager is defined for exactly " + std::to_string(kNumStages) +
                      " classes");
  if (epoch_samples < n_fft) throw ConfigError("model: an epoch must hold at least N_fft samples");
  if (n_stride > n_fft) throw ConfigError("model: N_stride must not exceed N_fft");
  if (epoch_dropout < 0.0 || epoch_dropout >= 1.0 || seq_dropout < 0.0 || seq_dropout >= 1.0)
    throw ConfigError("model: dropout probabilities must lie in [0, 1)");
  if (l_fft() < 1) throw ConfigError("model: configuration yields an empty spectrogram");
}

std::vector<double> channel_count_probabilities(std::int64_t c_max) {
  if (c_max < 1) throw ContractError("channel sampler: c_max must be at least 1");
  double harmonic = 0.0;
  for (std::int64_t k = 1; k <= c_max; ++k) harmonic += 1.0 / static_cast<double>(k);
  std::vector<double> p(static_cast<std::size_t>(c_max));
  for (std::int64_t n = 1; n <= c_max; ++n)
    p[static_cast<std::size_t>(n - 1)] = 1.0 / (static_cast<double>(n) * harmonic);
  return p;
}

std::int64_t sample_channel_count(std::int64_t c_max, Rng& rng) {
  const auto probs = channel_count_probabilities(c_max);
  double u = rng.uniform();
  for (std::int64_t n = 1; n <= c_max; ++n) {
    u -= probs[static_cast<std::size_t>(n - 1)];
    if (u < 0.0) return n;
  }
  return c_max;
}

std::vector<std::int64_t> select_channels(std::int64_t n_channels, std::int64_t c_batch, Rng& rng) {
  if (n_channels < 1) throw ContractError("select_channels: record has no channels");
  if (c_batch < 1) throw ContractError("select_channels: must pick at least one channel");
  std::vector<std::int64_t> out;
  out.reserve(static_cast<std::size_t>(c_batch));
  if (c_batch <= n_channels) {
    std::vector<std::int64_t> pool(static_cast<std::size_t>(n_channels));
    for (std::int64_t i = 0; i < n_channels; ++i) pool[static_cast<std::size_t>(i)] = i;
    for (std::int64_t i = 0; i < c_batch; ++i) {
      const std::int64_t j = i + rng.uniform_int(n_channels - i);
      std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
      out.push_back(pool[static_cast<std::size_t>(i)]);
    }
  } else {
    for (std::int64_t i = 0; i < c_batch; ++i) out.push_back(rng.uniform_int(n_channels));
  }
  return out;
}

}  // namespace sleepnet
