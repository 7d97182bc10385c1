#include "sleepnet/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace sleepnet {

namespace fs = std::filesystem;

Dataset open_dataset(const fs::path& root) {
  if (!fs::is_directory(root)) throw LoadError("dataset root " + root.string() + " is not a directory");
  Dataset ds;
  ds.root = root;
  ds.name = root.filename().string();
  std::vector<fs::path> dirs;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory() && fs::exists(entry.path() / "manifest.json"))
      dirs.push_back(entry.path());
  }
  std::sort(dirs.begin(), dirs.end());
  for (const auto& dir : dirs) {
    std::ifstream in(dir / "manifest.json");
    std::stringstream ss;
    ss << in.rdbuf();
    ds.records.push_back(manifest_from_json(ss.str()));
  }
  if (ds.records.empty()) throw LoadError("dataset " + root.string() + " holds no records");
  return ds;
}

int DatasetSplit::fold_of(const std::string& subject) const {
  auto it = subject_fold.find(subject);
  if (it == subject_fold.end()) throw ContractError("split: unknown subject \"" + subject + "\"");
  return it->second;
}

DatasetSplit kfold_split(const std::vector<RecordManifest>& records, int k, std::uint64_t seed) {
  std::vector<std::string> subjects;
  for (const auto& r : records)
    if (std::find(subjects.begin(), subjects.end(), r.subject_id) == subjects.end())
      subjects.push_back(r.subject_id);
  std::sort(subjects.begin(), subjects.end());
  if (k < 1 || k > static_cast<int>(subjects.size()))
    throw ContractError("kfold: cannot split " + std::to_string(subjects.size()) +
                        " subjects into " + std::to_string(k) + " folds");
  Rng rng(seed);
  rng.shuffle(subjects);
  DatasetSplit split;
  split.n_folds = k;
  for (std::size_t i = 0; i < subjects.size(); ++i)
    split.subject_fold[subjects[i]] = static_cast<int>(i % static_cast<std::size_t>(k));
  return split;
}

std::int64_t PreprocessedRecord::scored_epochs() const {
  std::int64_t n = 0;
  for (int s : labels)
    if (s >= 0) ++n;
  return n;
}

PreprocessedRecord preprocess_record(const Record& record, const PreprocessConfig& cfg,
                                     const std::string& scorer) {
  cfg.validate();
  PreprocessedRecord out;
  out.record_id = record.manifest.record_id;
  out.subject_id = record.manifest.subject_id;
  out.labels = record.hypnogram(scorer).stages;
  out.n_bins = cfg.f_fft();

  const auto epoch_samples = static_cast<std::int64_t>(30.0 * cfg.target_rate_hz);
  out.n_frames = (epoch_samples - cfg.n_fft) / cfg.n_stride;

  const StftPlan plan(cfg.n_fft, cfg.n_stride);

  for (std::size_t c = 0; c < record.signals.size(); ++c) {
    const auto& info = record.manifest.channels[c];
    out.channel_names.push_back(info.name);
    out.modalities.push_back(info.modality);

    // band-pass -> resample -> robust scale (with clipping), in that order
    auto sig = bandpass(record.signals[c], info.sample_rate, cfg.band_low_hz, cfg.band_high_hz);
    sig = resample(sig, info.sample_rate, cfg.target_rate_hz);
    sig = robust_scale_channel(sig, cfg.clip_multiplier);

    const std::int64_t epochs_in_signal = static_cast<std::int64_t>(sig.size()) / epoch_samples;
    const std::int64_t epochs = std::min<std::int64_t>(
        epochs_in_signal, static_cast<std::int64_t>(out.labels.size()));
    if (out.n_epochs == 0)
      out.n_epochs = epochs;
    else if (out.n_epochs != epochs)
      throw LoadError(out.record_id + ": channels disagree on epoch count");

    std::vector<float> spectra(static_cast<std::size_t>(epochs * out.n_bins * out.n_frames));
    for (std::int64_t e = 0; e < epochs; ++e) {
      const Spectrogram spec = plan.run(
          std::span<const float>(sig.data() + e * epoch_samples, static_cast<std::size_t>(epoch_samples)));
      std::copy(spec.values.begin(), spec.values.end(),
                spectra.begin() + e * out.n_bins * out.n_frames);
    }
    out.epoch_spectra.push_back(std::move(spectra));
  }
  out.labels.resize(static_cast<std::size_t>(out.n_epochs), -1);
  return out;
}

std::vector<EpochWindow> window_batches(const PreprocessedRecord& record, std::int64_t T,
                                        WindowMode mode, Rng* rng) {
  if (T < 1) throw ContractError("window: temporal context must be positive");
  if (record.scored_epochs() == 0)
    throw ContractError("window: record " + record.record_id + " has no scored epoch");
  const std::int64_t n = record.n_epochs;

  auto build = [&](std::int64_t start) {
    EpochWindow w;
    w.start = start;
    w.length = T;
    w.labels.resize(static_cast<std::size_t>(T), -1);
    w.valid.resize(static_cast<std::size_t>(T), 0);
    for (std::int64_t i = 0; i < T; ++i) {
      const std::int64_t e = start + i;
      if (e < n) {
        w.labels[static_cast<std::size_t>(i)] = record.labels[static_cast<std::size_t>(e)];
        w.valid[static_cast<std::size_t>(i)] = record.labels[static_cast<std::size_t>(e)] >= 0 ? 1 : 0;
      }
    }
    return w;
  };

  std::vector<EpochWindow> windows;
  if (mode == WindowMode::Inference) {
    if (n < T) {
      windows.push_back(build(0));  // single left-aligned window, padding masked
    } else {
      for (std::int64_t s = 0; s + T <= n; ++s) windows.push_back(build(s));
    }
  } else {
    if (!rng) throw ContractError("window: training mode needs a random stream");
    if (n >= T) {
      const std::int64_t phase = rng->uniform_int(T);
      for (std::int64_t s = phase; s + T <= n; s += T) windows.push_back(build(s));
      if (windows.empty()) windows.push_back(build(0));
    } else {
      windows.push_back(build(0));
    }
    // windows whose epochs are all unscored carry no loss; drop them
    std::erase_if(windows, [](const EpochWindow& w) {
      for (auto v : w.valid)
        if (v) return false;
      return true;
    });
    if (windows.empty()) windows.push_back(build(0));
  }
  return windows;
}

SpectrogramContext make_context(const PreprocessedRecord& record, const EpochWindow& window,
                                const std::vector<std::int64_t>& channels) {
  std::vector<std::int64_t> chan = channels;
  if (chan.empty()) {
    chan.resize(static_cast<std::size_t>(record.n_channels()));
    for (std::size_t i = 0; i < chan.size(); ++i) chan[i] = static_cast<std::int64_t>(i);
  }
  for (auto c : chan)
    if (c < 0 || c >= record.n_channels())
      throw ContractError("context: channel index " + std::to_string(c) + " out of range");

  SpectrogramContext ctx;
  ctx.n_epochs = window.length;
  ctx.n_channels = static_cast<std::int64_t>(chan.size());
  ctx.n_bins = record.n_bins;
  ctx.n_frames = record.n_frames;
  ctx.values.assign(static_cast<std::size_t>(ctx.size()), 0.0f);

  for (std::int64_t t = 0; t < window.length; ++t) {
    const std::int64_t e = window.start + t;
    if (e >= record.n_epochs) continue;  // padded epoch stays zero
    for (std::int64_t ci = 0; ci < ctx.n_channels; ++ci) {
      const std::int64_t c = chan[static_cast<std::size_t>(ci)];
      for (std::int64_t bin = 0; bin < ctx.n_bins; ++bin)
        for (std::int64_t f = 0; f < ctx.n_frames; ++f)
          ctx.at(t, ci, f, bin) = record.spectrum_at(c, e, bin, f);
    }
  }
  normalize_context(ctx);
  return ctx;
}

}  // namespace sleepnet
