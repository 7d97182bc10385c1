#include "sleepnet/record.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <span>
#include <sstream>

#include <json.hpp>

namespace sleepnet {

namespace fs = std::filesystem;
using nlohmann::json;

std::string modality_to_string(Modality m) {
  switch (m) {
    case Modality::EEG: return "EEG";
    case Modality::EOG: return "EOG";
    case Modality::EMG: return "EMG";
    case Modality::Other: return "OTHER";
  }
  return "OTHER";
}

Modality modality_from_string(const std::string& s) {
  if (s == "EEG") return Modality::EEG;
  if (s == "EOG") return Modality::EOG;
  if (s == "EMG") return Modality::EMG;
  if (s == "OTHER") return Modality::Other;
  throw LoadError("unknown channel modality \"" + s + "\"");
}

double RecordManifest::duration_seconds() const {
  if (channels.empty()) throw LoadError("record " + record_id + " has no channels");
  return static_cast<double>(channels.front().sample_count) / channels.front().sample_rate;
}

std::int64_t RecordManifest::n_epochs() const {
  return static_cast<std::int64_t>(duration_seconds() / 30.0);
}

const Hypnogram& Record::hypnogram(const std::string& scorer) const {
  if (hypnograms.empty()) throw LoadError("record " + manifest.record_id + " has no hypnogram");
  if (scorer.empty()) return hypnograms.front();
  for (const auto& h : hypnograms)
    if (h.scorer == scorer) return h;
  throw LoadError("record " + manifest.record_id + " has no hypnogram from scorer \"" + scorer + "\"");
}

std::string manifest_to_json(const RecordManifest& m) {
  json j;
  j["record_id"] = m.record_id;
  j["subject_id"] = m.subject_id;
  j["channels"] = json::array();
  for (const auto& c : m.channels) {
    j["channels"].push_back({{"name", c.name},
                             {"modality", modality_to_string(c.modality)},
                             {"sample_rate", c.sample_rate},
                             {"file", c.file},
                             {"sample_count", c.sample_count}});
  }
  j["hypnograms"] = json::array();
  for (const auto& h : m.hypnograms) j["hypnograms"].push_back({{"scorer", h.scorer}, {"file", h.file}});
  return j.dump(2) + "\n";
}

RecordManifest manifest_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw LoadError(std::string("manifest is not valid JSON: ") + e.what());
  }
  RecordManifest m;
  try {
    m.record_id = j.at("record_id").get<std::string>();
    m.subject_id = j.at("subject_id").get<std::string>();
    for (const auto& c : j.at("channels")) {
      ChannelInfo ci;
      ci.name = c.at("name").get<std::string>();
      ci.modality = modality_from_string(c.at("modality").get<std::string>());
      ci.sample_rate = c.at("sample_rate").get<double>();
      ci.file = c.at("file").get<std::string>();
      ci.sample_count = c.at("sample_count").get<std::int64_t>();
      m.channels.push_back(std::move(ci));
    }
    for (const auto& h : j.at("hypnograms"))
      m.hypnograms.push_back({h.at("scorer").get<std::string>(), h.at("file").get<std::string>()});
  } catch (const json::exception& e) {
    throw LoadError(std::string("manifest is missing required fields: ") + e.what());
  }
  if (m.channels.empty()) throw LoadError("manifest for " + m.record_id + " declares no channels");
  return m;
}

std::vector<float> read_f32_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open " + path.string());
  in.seekg(0, std::ios::end);
  const std::streamoff bytes = in.tellg();
  in.seekg(0, std::ios::beg);
  if (bytes % 4 != 0) throw LoadError(path.string() + " is not a whole number of float32 values");
  std::vector<unsigned char> raw(static_cast<std::size_t>(bytes));
  in.read(reinterpret_cast<char*>(raw.data()), bytes);
  if (!in) throw LoadError("short read on " + path.string());
  std::vector<float> out(raw.size() / 4);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const std::uint32_t u = static_cast<std::uint32_t>(raw[i * 4]) |
                            (static_cast<std::uint32_t>(raw[i * 4 + 1]) << 8) |
                            (static_cast<std::uint32_t>(raw[i * 4 + 2]) << 16) |
                            (static_cast<std::uint32_t>(raw[i * 4 + 3]) << 24);
    out[i] = std::bit_cast<float>(u);
  }
  return out;
}

void write_f32_file(const fs::path& path, std::span<const float> values) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw LoadError("cannot write " + path.string());
  std::vector<unsigned char> raw(values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const std::uint32_t u = std::bit_cast<std::uint32_t>(values[i]);
    raw[i * 4] = static_cast<unsigned char>(u & 0xff);
    raw[i * 4 + 1] = static_cast<unsigned char>((u >> 8) & 0xff);
    raw[i * 4 + 2] = static_cast<unsigned char>((u >> 16) & 0xff);
    raw[i * 4 + 3] = static_cast<unsigned char>((u >> 24) & 0xff);
  }
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
}

std::vector<int> read_hypnogram_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open " + path.string());
  std::vector<int> stages;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    int v = 0;
    try {
      v = std::stoi(line);
    } catch (const std::exception&) {
      throw LoadError(path.string() + ": \"" + line + "\" is not a stage code");
    }
    if (v < -1 || v >= kNumStages)
      throw LoadError(path.string() + ": unknown stage value " + std::to_string(v));
    stages.push_back(v);
  }
  return stages;
}

void write_hypnogram_file(const fs::path& path, std::span<const int> stages) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw LoadError("cannot write " + path.string());
  for (int s : stages) out << s << "\n";
}

Record load_record(const fs::path& manifest_path) {
  fs::path mpath = manifest_path;
  if (fs::is_directory(mpath)) mpath /= "manifest.json";
  std::ifstream in(mpath);
  if (!in) throw LoadError("cannot open " + mpath.string());
  std::stringstream ss;
  ss << in.rdbuf();

  Record rec;
  rec.manifest = manifest_from_json(ss.str());
  const fs::path dir = mpath.parent_path();

  const double duration = rec.manifest.duration_seconds();
  for (const auto& c : rec.manifest.channels) {
    auto data = read_f32_file(dir / c.file);
    if (static_cast<std::int64_t>(data.size()) != c.sample_count)
      throw LoadError(rec.manifest.record_id + "/" + c.name + ": manifest declares " +
                      std::to_string(c.sample_count) + " samples but " + c.file + " holds " +
                      std::to_string(data.size()));
    // every channel must describe the same duration, within one sample
    const double chan_duration = static_cast<double>(c.sample_count) / c.sample_rate;
    if (std::abs(chan_duration - duration) > 1.0 / c.sample_rate + 1e-9)
      throw LoadError(rec.manifest.record_id + "/" + c.name + ": duration " +
                      std::to_string(chan_duration) + " s disagrees with the record's " +
                      std::to_string(duration) + " s");
    rec.signals.push_back(std::move(data));
  }

  const std::int64_t epochs = rec.manifest.n_epochs();
  for (const auto& h : rec.manifest.hypnograms) {
    Hypnogram hyp;
    hyp.scorer = h.scorer;
    hyp.stages = read_hypnogram_file(dir / h.file);
    if (static_cast<std::int64_t>(hyp.stages.size()) != epochs)
      throw LoadError(rec.manifest.record_id + "/" + h.scorer + ": hypnogram has " +
                      std::to_string(hyp.stages.size()) + " epochs, record spans " +
                      std::to_string(epochs));
    rec.hypnograms.push_back(std::move(hyp));
  }
  return rec;
}

void save_record(const Record& record, const fs::path& record_dir) {
  if (record.signals.size() != record.manifest.channels.size())
    throw LoadError("save_record: " + std::to_string(record.signals.size()) + " signals for " +
                    std::to_string(record.manifest.channels.size()) + " declared channels");
  if (record.hypnograms.size() != record.manifest.hypnograms.size())
    throw LoadError("save_record: hypnogram count disagrees with the manifest");
  fs::create_directories(record_dir);
  std::ofstream out(record_dir / "manifest.json", std::ios::trunc);
  if (!out) throw LoadError("cannot write " + (record_dir / "manifest.json").string());
  out << manifest_to_json(record.manifest);
  out.close();
  for (std::size_t i = 0; i < record.manifest.channels.size(); ++i)
    write_f32_file(record_dir / record.manifest.channels[i].file, record.signals[i]);
  for (std::size_t i = 0; i < record.manifest.hypnograms.size(); ++i)
    write_hypnogram_file(record_dir / record.manifest.hypnograms[i].file, record.hypnograms[i].stages);
}

}  // namespace sleepnet
