#pragma once

// Dataset scanning, subject-wise k-fold splits, record preprocessing with a
// per-epoch spectrogram cache, and train/inference windowing.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "sleepnet/common.hpp"
#include "sleepnet/dsp.hpp"
#include "sleepnet/record.hpp"

namespace sleepnet {

struct Dataset {
  std::string name;
  std::filesystem::path root;
  std::vector<RecordManifest> records;  // sorted by record id
};

// Scans a directory of record subdirectories (each holding manifest.json).
Dataset open_dataset(const std::filesystem::path& root);

// Subject -> fold assignment. Subjects are shuffled by seed and dealt
// round-robin, so folds differ in size by at most one subject.
struct DatasetSplit {
  int n_folds = 0;
  std::map<std::string, int> subject_fold;

  int fold_of(const std::string& subject) const;
};

DatasetSplit kfold_split(const std::vector<RecordManifest>& records, int k, std::uint64_t seed);

// A record after band-pass, resampling, robust scaling and epoch-wise STFT.
// Spectra are cached unnormalized; context normalization happens per window.
struct PreprocessedRecord {
  std::string record_id;
  std::string subject_id;
  std::string dataset;
  std::vector<std::string> channel_names;
  std::vector<Modality> modalities;
  std::int64_t n_epochs = 0;
  std::int64_t n_bins = 0;    // F_fft
  std::int64_t n_frames = 0;  // L_fft
  std::vector<int> labels;    // reference hypnogram, -1 = unscored

  // per channel: n_epochs * n_bins * n_frames values, [epoch][bin][frame]
  std::vector<std::vector<float>> epoch_spectra;

  std::int64_t n_channels() const { return static_cast<std::int64_t>(epoch_spectra.size()); }
  float spectrum_at(std::int64_t channel, std::int64_t epoch, std::int64_t bin, std::int64_t frame) const {
    return epoch_spectra[static_cast<std::size_t>(channel)]
                        [static_cast<std::size_t>((epoch * n_bins + bin) * n_frames + frame)];
  }
  std::int64_t scored_epochs() const;
};

// Runs the full conditioning pipeline on one record: band-pass, resample to
// the target rate, robust scale, then per-epoch log-magnitude STFT.
PreprocessedRecord preprocess_record(const Record& record, const PreprocessConfig& cfg,
                                     const std::string& scorer = "");

// One training/inference window of T consecutive epochs.
struct EpochWindow {
  std::int64_t start = 0;  // first epoch index
  std::int64_t length = 0; // T
  std::vector<int> labels;          // length T, -1 where unscored or padded
  std::vector<std::uint8_t> valid;  // length T, 0 where unscored or padded
};

enum class WindowMode { Train, Inference };

// Inference: every window of T consecutive epochs at stride 1; records
// shorter than T yield one left-aligned window whose padding is masked.
// Train: stride-T tiling with a random phase drawn per call.
std::vector<EpochWindow> window_batches(const PreprocessedRecord& record, std::int64_t T,
                                        WindowMode mode, Rng* rng);

// Assembles the normalized spectrogram context for a window. `channels`
// selects (and may repeat) channel indices; empty means all channels.
// Epochs past the end of the record are zero before normalization.
SpectrogramContext make_context(const PreprocessedRecord& record, const EpochWindow& window,
                                const std::vector<std::int64_t>& channels = {});

}  // namespace sleepnet
