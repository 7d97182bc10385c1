#pragma once

// Parameter serialization: a flat blob of 32-bit little-endian reals plus a
// JSON header listing tensor name, shape and byte offset. A model checkpoint
// adds the model and preprocessing configurations, making it self-describing.

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>

#include <json.hpp>

#include "sleepnet/config_json.hpp"
#include "sleepnet/model.hpp"

namespace sleepnet {

namespace detail {

inline void write_f32_le(std::ofstream& out, float v) {
  const auto u = std::bit_cast<std::uint32_t>(v);
  const unsigned char b[4] = {static_cast<unsigned char>(u & 0xff),
                              static_cast<unsigned char>((u >> 8) & 0xff),
                              static_cast<unsigned char>((u >> 16) & 0xff),
                              static_cast<unsigned char>((u >> 24) & 0xff)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

inline float read_f32_le(const unsigned char* p) {
  const std::uint32_t u = static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
                          (static_cast<std::uint32_t>(p[2]) << 16) |
                          (static_cast<std::uint32_t>(p[3]) << 24);
  return std::bit_cast<float>(u);
}

}  // namespace detail

inline constexpr const char* kCheckpointFormat = "sleepnet-checkpoint-v1";

// Writes <prefix>.json and <prefix>.bin.
template <typename Real>
void save_checkpoint(const ModelParameters<Real>& params, const PreprocessConfig& preprocess,
                     const std::filesystem::path& prefix) {
  namespace fs = std::filesystem;
  const fs::path json_path = prefix.string() + ".json";
  const fs::path bin_path = prefix.string() + ".bin";
  if (!prefix.parent_path().empty()) fs::create_directories(prefix.parent_path());

  nlohmann::json header;
  header["format"] = kCheckpointFormat;
  header["blob"] = bin_path.filename().string();
  header["model_config"] = model_config_to_json(params.config);
  header["preprocess_config"] = preprocess_config_to_json(preprocess);
  header["tensors"] = nlohmann::json::array();

  std::ofstream bin(bin_path, std::ios::binary | std::ios::trunc);
  if (!bin) throw LoadError("cannot write " + bin_path.string());
  std::int64_t offset = 0;
  params.visit([&](const std::string& name, const Tensor<Real>& t) {
    header["tensors"].push_back(
        {{"name", name}, {"shape", t.shape()}, {"offset", offset}});
    for (Real v : t.data()) detail::write_f32_le(bin, static_cast<float>(v));
    offset += t.size() * 4;
  });
  bin.close();

  std::ofstream js(json_path, std::ios::trunc);
  if (!js) throw LoadError("cannot write " + json_path.string());
  js << header.dump(2) << "\n";
}

// Loads a checkpoint saved by save_checkpoint. `prefix` may be the bare
// prefix or the .json path itself.
template <typename Real>
ModelParameters<Real> load_checkpoint(const std::filesystem::path& prefix,
                                      PreprocessConfig* preprocess_out = nullptr) {
  namespace fs = std::filesystem;
  fs::path json_path = prefix;
  if (json_path.extension() != ".json") json_path = prefix.string() + ".json";
  std::ifstream js(json_path);
  if (!js) throw LoadError("cannot open checkpoint " + json_path.string());
  nlohmann::json header;
  try {
    js >> header;
  } catch (const nlohmann::json::exception& e) {
    throw LoadError("checkpoint header is not valid JSON: " + std::string(e.what()));
  }
  if (!header.contains("format") || header["format"] != kCheckpointFormat)
    throw LoadError("checkpoint " + json_path.string() + " has an unknown format");

  const ModelConfig cfg = model_config_from_json(header.at("model_config"));
  if (preprocess_out) *preprocess_out = preprocess_config_from_json(header.at("preprocess_config"));

  const fs::path bin_path = json_path.parent_path() / header.at("blob").get<std::string>();
  std::ifstream bin(bin_path, std::ios::binary);
  if (!bin) throw LoadError("cannot open checkpoint blob " + bin_path.string());
  std::vector<unsigned char> blob((std::istreambuf_iterator<char>(bin)),
                                  std::istreambuf_iterator<char>());

  struct Entry {
    Shape shape;
    std::int64_t offset;
  };
  std::map<std::string, Entry> entries;
  for (const auto& t : header.at("tensors"))
    entries[t.at("name").get<std::string>()] = {t.at("shape").get<Shape>(),
                                                t.at("offset").get<std::int64_t>()};

  Rng dummy(0);
  auto params = ModelParameters<Real>::init(cfg, dummy);
  params.visit([&](const std::string& name, Tensor<Real>& t) {
    auto it = entries.find(name);
    if (it == entries.end()) throw LoadError("checkpoint is missing tensor \"" + name + "\"");
    if (it->second.shape != t.shape())
      throw LoadError("checkpoint tensor \"" + name + "\" has shape " +
                      shape_to_string(it->second.shape) + ", expected " + shape_to_string(t.shape()));
    const std::int64_t bytes = t.size() * 4;
    if (it->second.offset < 0 ||
        it->second.offset + bytes > static_cast<std::int64_t>(blob.size()))
      throw LoadError("checkpoint tensor \"" + name + "\" lies outside the blob");
    const unsigned char* src = blob.data() + it->second.offset;
    auto dst = t.data();
    for (std::int64_t i = 0; i < t.size(); ++i)
      dst[i] = static_cast<Real>(detail::read_f32_le(src + i * 4));
    entries.erase(it);
  });
  if (!entries.empty())
    throw LoadError("checkpoint holds unknown tensor \"" + entries.begin()->first + "\"");
  return params;
}

}  // namespace sleepnet
