#pragma once

// Synthetic polysomnography generator: Markov-chain hypnograms plus
// stage-dependent band-limited signals, written out in the record container
// format. Deterministic under its seed.

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sleepnet/common.hpp"
#include "sleepnet/record.hpp"

namespace sleepnet {

struct SyntheticBand {
  double low_hz = 0.0;
  double high_hz = 0.0;
  double amplitude = 1.0;
  bool burst = false;  // gated on/off within the epoch instead of continuous
};

struct StageRecipe {
  std::vector<SyntheticBand> bands;
};

struct SyntheticChannelSpec {
  std::string name;
  Modality modality = Modality::EEG;
  double sample_rate = 100.0;
  double gain = 0.0;  // 0 = draw per record in [0.5, 1.5]
};

struct SyntheticSpec {
  std::string name = "synthetic";
  std::int64_t n_records = 10;
  std::vector<SyntheticChannelSpec> channels;
  std::int64_t epochs_per_record = 120;
  std::array<std::array<double, kNumStages>, kNumStages> transition{};  // rows sum to 1
  std::array<StageRecipe, kNumStages> recipes;
  double noise_level = 0.15;
  std::uint64_t seed = 1;

  // Dominant bands per stage: Wake 8-12 Hz, N1 4-7 Hz, N2 4-7 Hz with
  // 12-14 Hz bursts, N3 high-amplitude 0.5-2 Hz, REM low-amplitude 4-8 Hz.
  static SyntheticSpec defaults();

  void validate() const;
  std::array<double, kNumStages> stationary_distribution() const;
};

std::string synthetic_spec_to_json(const SyntheticSpec& spec);
SyntheticSpec synthetic_spec_from_json(const std::string& text);

// Writes one directory per record under out_dir, plus dataset.json echoing
// the spec. Existing record directories are overwritten.
void generate_synthetic_dataset(const SyntheticSpec& spec, const std::filesystem::path& out_dir);

// Stage sequence of the configured Markov chain (exposed for tests).
std::vector<int> markov_stage_sequence(const SyntheticSpec& spec, std::int64_t n, Rng& rng);

}  // namespace sleepnet
