#include "sleepnet/config_json.hpp"

namespace sleepnet {

using nlohmann::json;

void reject_unknown_keys(const json& j, const std::vector<std::string>& allowed,
                         const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected a JSON object");
  for (const auto& [key, value] : j.items()) {
    (void)value;
    bool known = false;
    for (const auto& k : allowed) known = known || k == key;
    if (!known) throw ConfigError(where + ": unknown key \"" + key + "\"");
  }
}

json model_config_to_json(const ModelConfig& c) {
  return json{{"temporal_context", c.temporal_context},
              {"epoch_samples", c.epoch_samples},
              {"n_fft", c.n_fft},
              {"n_stride", c.n_stride},
              {"freq_bins_reduced", c.freq_bins_reduced},
              {"n_heads", c.n_heads},
              {"channel_attention_size", c.channel_attention_size},
              {"epoch_gru_hidden", c.epoch_gru_hidden},
              {"epoch_dropout", c.epoch_dropout},
              {"epoch_features", c.epoch_features},
              {"frame_attention_size", c.frame_attention_size},
              {"seq_gru_hidden", c.seq_gru_hidden},
              {"seq_dropout", c.seq_dropout},
              {"n_classes", c.n_classes}};
}

ModelConfig model_config_from_json(const json& j, ModelConfig c) {
  reject_unknown_keys(j,
                      {"temporal_context", "epoch_samples", "n_fft", "n_stride",
                       "freq_bins_reduced", "n_heads", "channel_attention_size",
                       "epoch_gru_hidden", "epoch_dropout", "epoch_features",
                       "frame_attention_size", "seq_gru_hidden", "seq_dropout", "n_classes"},
                      "model config");
  try {
    if (j.contains("temporal_context")) c.temporal_context = j["temporal_context"].get<std::int64_t>();
    if (j.contains("epoch_samples")) c.epoch_samples = j["epoch_samples"].get<std::int64_t>();
    if (j.contains("n_fft")) c.n_fft = j["n_fft"].get<std::int64_t>();
    if (j.contains("n_stride")) c.n_stride = j["n_stride"].get<std::int64_t>();
    if (j.contains("freq_bins_reduced")) c.freq_bins_reduced = j["freq_bins_reduced"].get<std::int64_t>();
    if (j.contains("n_heads")) c.n_heads = j["n_heads"].get<std::int64_t>();
    if (j.contains("channel_attention_size"))
      c.channel_attention_size = j["channel_attention_size"].get<std::int64_t>();
    if (j.contains("epoch_gru_hidden")) c.epoch_gru_hidden = j["epoch_gru_hidden"].get<std::int64_t>();
    if (j.contains("epoch_dropout")) c.epoch_dropout = j["epoch_dropout"].get<double>();
    if (j.contains("epoch_features")) c.epoch_features = j["epoch_features"].get<std::int64_t>();
    if (j.contains("frame_attention_size"))
      c.frame_attention_size = j["frame_attention_size"].get<std::int64_t>();
    if (j.contains("seq_gru_hidden")) c.seq_gru_hidden = j["seq_gru_hidden"].get<std::int64_t>();
    if (j.contains("seq_dropout")) c.seq_dropout = j["seq_dropout"].get<double>();
    if (j.contains("n_classes")) c.n_classes = j["n_classes"].get<std::int64_t>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

json preprocess_config_to_json(const PreprocessConfig& c) {
  return json{{"band_low_hz", c.band_low_hz},     {"band_high_hz", c.band_high_hz},
              {"target_rate_hz", c.target_rate_hz}, {"clip_multiplier", c.clip_multiplier},
              {"n_fft", c.n_fft},                 {"n_stride", c.n_stride}};
}

PreprocessConfig preprocess_config_from_json(const json& j, PreprocessConfig c) {
  reject_unknown_keys(
      j, {"band_low_hz", "band_high_hz", "target_rate_hz", "clip_multiplier", "n_fft", "n_stride"},
      "preprocess config");
  try {
    if (j.contains("band_low_hz")) c.band_low_hz = j["band_low_hz"].get<double>();
    if (j.contains("band_high_hz")) c.band_high_hz = j["band_high_hz"].get<double>();
    if (j.contains("target_rate_hz")) c.target_rate_hz = j["target_rate_hz"].get<double>();
    if (j.contains("clip_multiplier")) c.clip_multiplier = j["clip_multiplier"].get<double>();
    if (j.contains("n_fft")) c.n_fft = j["n_fft"].get<std::int64_t>();
    if (j.contains("n_stride")) c.n_stride = j["n_stride"].get<std::int64_t>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("preprocess config: ") + e.what());
  }
  c.validate();
  return c;
}

}  // namespace sleepnet
