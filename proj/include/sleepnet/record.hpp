#pragma once

// On-disk record container: a directory holding manifest.json, one raw
// 32-bit little-endian file per channel and one newline-delimited integer
// file per hypnogram. Stage codes: 0=Wake 1=N1 2=N2 3=N3 4=REM, -1=unscored.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sleepnet/common.hpp"

namespace sleepnet {

inline constexpr int kNumStages = 5;
inline const char* kStageNames[kNumStages] = {"Wake", "N1", "N2", "N3", "REM"};

enum class Modality { EEG, EOG, EMG, Other };

std::string modality_to_string(Modality m);
Modality modality_from_string(const std::string& s);

struct ChannelInfo {
  std::string name;
  Modality modality = Modality::Other;
  double sample_rate = 0.0;
  std::string file;  // relative to the record directory
  std::int64_t sample_count = 0;
};

struct HypnogramRef {
  std::string scorer;
  std::string file;  // relative to the record directory
};

struct RecordManifest {
  std::string record_id;
  std::string subject_id;
  std::vector<ChannelInfo> channels;
  std::vector<HypnogramRef> hypnograms;

  double duration_seconds() const;
  std::int64_t n_epochs() const;  // floor(duration / 30)
};

struct Hypnogram {
  std::string scorer;
  std::vector<int> stages;  // -1..4
};

struct Record {
  RecordManifest manifest;
  std::vector<std::vector<float>> signals;  // one per channel
  std::vector<Hypnogram> hypnograms;        // keyed by scorer id, manifest order

  const Hypnogram& hypnogram(const std::string& scorer = "") const;
};

// Serializes a manifest to/from JSON text.
std::string manifest_to_json(const RecordManifest& m);
RecordManifest manifest_from_json(const std::string& text);

// Loads the record whose manifest.json lives at `manifest_path` (either the
// file itself or its directory). Cross-checks every declared length.
Record load_record(const std::filesystem::path& manifest_path);

// Writes manifest, channel files and hypnogram files under `record_dir`.
void save_record(const Record& record, const std::filesystem::path& record_dir);

// Raw float32 little-endian channel files.
std::vector<float> read_f32_file(const std::filesystem::path& path);
void write_f32_file(const std::filesystem::path& path, std::span<const float> values);

// Hypnogram text files: one integer per line, -1 allowed.
std::vector<int> read_hypnogram_file(const std::filesystem::path& path);
void write_hypnogram_file(const std::filesystem::path& path, std::span<const int> stages);

}  // namespace sleepnet
