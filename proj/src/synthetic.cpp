#include "sleepnet/synthetic.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

namespace sleepnet {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kPi = 3.14159265358979323846;

}  // namespace

SyntheticSpec SyntheticSpec::defaults() {
  SyntheticSpec s;
  s.channels = {
      {"EEG_F", Modality::EEG, 100.0, 0.0},
      {"EEG_O", Modality::EEG, 100.0, 0.0},
      {"EOG", Modality::EOG, 100.0, 0.0},
      {"EMG", Modality::EMG, 100.0, 0.0},
  };
  // rows: from-stage (Wake, N1, N2, N3, REM)
  s.transition = {{{0.60, 0.25, 0.10, 0.02, 0.03},
                   {0.12, 0.45, 0.33, 0.05, 0.05},
                   {0.04, 0.08, 0.58, 0.20, 0.10},
                   {0.02, 0.04, 0.24, 0.63, 0.07},
                   {0.08, 0.10, 0.14, 0.03, 0.65}}};
  s.recipes[0] = {{{8.0, 12.0, 1.0, false}}};
  s.recipes[1] = {{{4.0, 7.0, 1.0, false}}};
  s.recipes[2] = {{{4.0, 7.0, 1.0, false}, {12.0, 14.0, 1.2, true}}};
  s.recipes[3] = {{{0.5, 2.0, 2.5, false}}};
  s.recipes[4] = {{{4.0, 8.0, 0.45, false}}};
  return s;
}

void SyntheticSpec::validate() const {
  if (n_records < 1) throw ConfigError("synthetic: need at least one record");
  if (channels.empty()) throw ConfigError("synthetic: need at least one channel");
  if (epochs_per_record < 1) throw ConfigError("synthetic: need at least one epoch per record");
  for (const auto& c : channels) {
    if (c.sample_rate <= 0) throw ConfigError("synthetic: channel " + c.name + " has no sample rate");
    if (c.name.empty()) throw ConfigError("synthetic: channel without a name");
  }
  for (int i = 0; i < kNumStages; ++i) {
    double row = 0.0;
    for (int j = 0; j < kNumStages; ++j) {
      if (transition[i][j] < 0) throw ConfigError("synthetic: negative transition probability");
      row += transition[i][j];
    }
    if (std::abs(row - 1.0) > 1e-9)
      throw ConfigError("synthetic: transition row " + std::string(kStageNames[i]) +
                        " sums to " + std::to_string(row) + ", expected 1");
  }
  if (noise_level < 0) throw ConfigError("synthetic: negative noise level");
}

std::array<double, kNumStages> SyntheticSpec::stationary_distribution() const {
  std::array<double, kNumStages> pi{};
  pi.fill(1.0 / kNumStages);
  for (int iter = 0; iter < 500; ++iter) {
    std::array<double, kNumStages> next{};
    for (int j = 0; j < kNumStages; ++j)
      for (int i = 0; i < kNumStages; ++i) next[j] += pi[i] * transition[i][j];
    pi = next;
  }
  return pi;
}

std::vector<int> markov_stage_sequence(const SyntheticSpec& spec, std::int64_t n, Rng& rng) {
  const auto pi = spec.stationary_distribution();
  std::vector<int> stages(static_cast<std::size_t>(n));
  auto draw = [&rng](const auto& probs) {
    double u = rng.uniform();
    for (int s = 0; s < kNumStages; ++s) {
      u -= probs[s];
      if (u < 0) return s;
    }
    return kNumStages - 1;
  };
  int cur = draw(pi);
  for (std::int64_t t = 0; t < n; ++t) {
    stages[static_cast<std::size_t>(t)] = cur;
    cur = draw(spec.transition[cur]);
  }
  return stages;
}

namespace {

struct Sinusoid {
  double freq = 0.0;
  double phase = 0.0;
  double amplitude = 0.0;
  bool burst = false;
};

// Per-epoch mixture shared by all channels of a record.
std::vector<Sinusoid> epoch_mixture(const StageRecipe& recipe, Rng& rng) {
  std::vector<Sinusoid> mix;
  for (const auto& band : recipe.bands) {
    const int k = 3;
    for (int i = 0; i < k; ++i) {
      Sinusoid s;
      s.freq = rng.uniform(band.low_hz, band.high_hz);
      s.phase = rng.uniform(0.0, 2.0 * kPi);
      // amplitude = per-sinusoid peak giving a band RMS near band.amplitude
      s.amplitude = band.amplitude * std::sqrt(2.0 / k);
      s.burst = band.burst;
      mix.push_back(s);
    }
  }
  return mix;
}

// Raised-cosine on/off envelope with a few one-second bursts per epoch.
struct BurstEnvelope {
  std::vector<std::pair<double, double>> intervals;  // [start, end) in seconds

  static BurstEnvelope draw(double epoch_seconds, Rng& rng) {
    BurstEnvelope env;
    const int n_bursts = 3 + static_cast<int>(rng.uniform_int(3));  // 3..5
    for (int i = 0; i < n_bursts; ++i) {
      const double start = rng.uniform(0.0, epoch_seconds - 1.5);
      env.intervals.emplace_back(start, start + 1.0);
    }
    return env;
  }

  double value(double t) const {
    for (const auto& [s, e] : intervals) {
      if (t >= s && t < e) {
        const double u = (t - s) / (e - s);
        return 0.5 - 0.5 * std::cos(2.0 * kPi * u);  // smooth rise and fall
      }
    }
    return 0.0;
  }
};

}  // namespace

void generate_synthetic_dataset(const SyntheticSpec& spec, const fs::path& out_dir) {
  spec.validate();
  fs::create_directories(out_dir);
  {
    std::ofstream ds(out_dir / "dataset.json", std::ios::trunc);
    if (!ds) throw LoadError("cannot write " + (out_dir / "dataset.json").string());
    ds << synthetic_spec_to_json(spec);
  }

  const double epoch_seconds = 30.0;
  Rng root(spec.seed);

  for (std::int64_t r = 0; r < spec.n_records; ++r) {
    Rng rng = root.derive(static_cast<std::uint64_t>(r) + 1);

    Record rec;
    char buf[32];
    std::snprintf(buf, sizeof buf, "%03lld", static_cast<long long>(r));
    rec.manifest.record_id = spec.name + "-r" + buf;
    rec.manifest.subject_id = spec.name + "-s" + buf;

    const auto stages = markov_stage_sequence(spec, spec.epochs_per_record, rng);

    std::vector<double> gains;
    for (const auto& ch : spec.channels)
      gains.push_back(ch.gain > 0.0 ? ch.gain : rng.uniform(0.5, 1.5));

    // prepare channel buffers
    std::vector<std::vector<float>> signals(spec.channels.size());
    for (std::size_t c = 0; c < spec.channels.size(); ++c) {
      const auto n = static_cast<std::size_t>(spec.epochs_per_record * epoch_seconds *
                                              spec.channels[c].sample_rate);
      signals[c].resize(n);
    }

    for (std::int64_t e = 0; e < spec.epochs_per_record; ++e) {
      const int stage = stages[static_cast<std::size_t>(e)];
      const auto mix = epoch_mixture(spec.recipes[static_cast<std::size_t>(stage)], rng);
      bool any_burst = false;
      for (const auto& s : mix) any_burst = any_burst || s.burst;
      const BurstEnvelope env = any_burst ? BurstEnvelope::draw(epoch_seconds, rng)
                                          : BurstEnvelope{};

      for (std::size_t c = 0; c < spec.channels.size(); ++c) {
        const double fs = spec.channels[c].sample_rate;
        const auto epoch_len = static_cast<std::int64_t>(epoch_seconds * fs);
        float* dst = signals[c].data() + e * epoch_len;
        const double g = gains[c];
        for (std::int64_t i = 0; i < epoch_len; ++i) {
          const double t = static_cast<double>(i) / fs;
          double v = 0.0;
          for (const auto& s : mix) {
            double contrib = s.amplitude * std::sin(2.0 * kPi * s.freq * t + s.phase);
            if (s.burst) contrib *= env.value(t);
            v += contrib;
          }
          dst[i] = static_cast<float>(g * v + spec.noise_level * rng.normal());
        }
      }
    }

    for (std::size_t c = 0; c < spec.channels.size(); ++c) {
      const auto& ch = spec.channels[c];
      ChannelInfo ci;
      ci.name = ch.name;
      ci.modality = ch.modality;
      ci.sample_rate = ch.sample_rate;
      ci.file = ch.name + ".f32";
      ci.sample_count = static_cast<std::int64_t>(signals[c].size());
      rec.manifest.channels.push_back(ci);
    }
    rec.signals = std::move(signals);
    rec.manifest.hypnograms.push_back({"synthetic", "hypnogram.txt"});
    rec.hypnograms.push_back({"synthetic", stages});

    save_record(rec, out_dir / rec.manifest.record_id);
  }
}

std::string synthetic_spec_to_json(const SyntheticSpec& spec) {
  json j;
  j["name"] = spec.name;
  j["n_records"] = spec.n_records;
  j["epochs_per_record"] = spec.epochs_per_record;
  j["noise_level"] = spec.noise_level;
  j["seed"] = spec.seed;
  j["channels"] = json::array();
  for (const auto& c : spec.channels) {
    json jc = {{"name", c.name},
               {"modality", modality_to_string(c.modality)},
               {"sample_rate", c.sample_rate}};
    if (c.gain > 0.0) jc["gain"] = c.gain;
    j["channels"].push_back(jc);
  }
  j["transition"] = json::array();
  for (const auto& row : spec.transition) j["transition"].push_back(row);
  j["recipes"] = json::object();
  for (int s = 0; s < kNumStages; ++s) {
    json bands = json::array();
    for (const auto& b : spec.recipes[static_cast<std::size_t>(s)].bands) {
      json jb = {{"low_hz", b.low_hz}, {"high_hz", b.high_hz}, {"amplitude", b.amplitude}};
      if (b.burst) jb["burst"] = true;
      bands.push_back(jb);
    }
    j["recipes"][kStageNames[s]] = bands;
  }
  return j.dump(2) + "\n";
}

SyntheticSpec synthetic_spec_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("synthetic spec is not valid JSON: ") + e.what());
  }
  SyntheticSpec spec = SyntheticSpec::defaults();
  static const std::vector<std::string> allowed = {"name",       "n_records", "epochs_per_record",
                                                   "noise_level", "seed",     "channels",
                                                   "transition",  "recipes"};
  for (const auto& [key, value] : j.items()) {
    (void)value;
    bool known = false;
    for (const auto& k : allowed) known = known || k == key;
    if (!known) throw ConfigError("synthetic spec: unknown key \"" + key + "\"");
  }
  try {
    if (j.contains("name")) spec.name = j["name"].get<std::string>();
    if (j.contains("n_records")) spec.n_records = j["n_records"].get<std::int64_t>();
    if (j.contains("epochs_per_record"))
      spec.epochs_per_record = j["epochs_per_record"].get<std::int64_t>();
    if (j.contains("noise_level")) spec.noise_level = j["noise_level"].get<double>();
    if (j.contains("seed")) spec.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("channels")) {
      spec.channels.clear();
      for (const auto& c : j["channels"]) {
        SyntheticChannelSpec ch;
        ch.name = c.at("name").get<std::string>();
        ch.modality = modality_from_string(c.at("modality").get<std::string>());
        ch.sample_rate = c.at("sample_rate").get<double>();
        if (c.contains("gain")) ch.gain = c["gain"].get<double>();
        spec.channels.push_back(std::move(ch));
      }
    }
    if (j.contains("transition")) {
      const auto& tr = j["transition"];
      if (tr.size() != kNumStages) throw ConfigError("synthetic spec: transition must be 5x5");
      for (int i = 0; i < kNumStages; ++i) {
        if (tr[static_cast<std::size_t>(i)].size() != kNumStages)
          throw ConfigError("synthetic spec: transition must be 5x5");
        for (int k = 0; k < kNumStages; ++k)
          spec.transition[i][k] = tr[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)].get<double>();
      }
    }
    if (j.contains("recipes")) {
      for (int s = 0; s < kNumStages; ++s) {
        if (!j["recipes"].contains(kStageNames[s])) continue;
        StageRecipe recipe;
        for (const auto& b : j["recipes"][kStageNames[s]]) {
          SyntheticBand band;
          band.low_hz = b.at("low_hz").get<double>();
          band.high_hz = b.at("high_hz").get<double>();
          band.amplitude = b.at("amplitude").get<double>();
          if (b.contains("burst")) band.burst = b["burst"].get<bool>();
          recipe.bands.push_back(band);
        }
        spec.recipes[static_cast<std::size_t>(s)] = recipe;
      }
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("synthetic spec: ") + e.what());
  }
  spec.validate();
  return spec;
}

}  // namespace sleepnet
