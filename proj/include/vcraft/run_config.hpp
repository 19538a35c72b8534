#pragma once

// One structured config file covering every stage, plus dotted-path
// overrides and a stable hash for report headers.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "vcraft/errors.hpp"
#include "vcraft/infer.hpp"
#include "vcraft/metrics/features.hpp"
#include "vcraft/model/config.hpp"
#include "vcraft/sampling.hpp"
#include "vcraft/synthcodec.hpp"
#include "vcraft/train.hpp"

namespace vcraft {

inline void to_json(nlohmann::json& j, const ToyCodecConfig& c) {
  j = {{"alphabet_size", c.alphabet_size},
       {"frames_per_symbol", c.frames_per_symbol},
       {"num_codebooks", c.num_codebooks},
       {"codebook_size", c.codebook_size},
       {"frame_rate", c.frame_rate},
       {"sample_rate", c.sample_rate},
       {"table_seed", c.table_seed},
       {"jitter_radius", c.jitter_radius},
       {"jitter_seed", c.jitter_seed ? nlohmann::json(*c.jitter_seed) : nlohmann::json(nullptr)},
       {"gains", c.gains}};
}

inline void from_json(const nlohmann::json& j, ToyCodecConfig& c) {
  const ToyCodecConfig d = c;
  c.alphabet_size = j.value("alphabet_size", d.alphabet_size);
  c.frames_per_symbol = j.value("frames_per_symbol", d.frames_per_symbol);
  c.num_codebooks = j.value("num_codebooks", d.num_codebooks);
  c.codebook_size = j.value("codebook_size", d.codebook_size);
  c.frame_rate = j.value("frame_rate", d.frame_rate);
  c.sample_rate = j.value("sample_rate", d.sample_rate);
  c.table_seed = j.value("table_seed", d.table_seed);
  c.jitter_radius = j.value("jitter_radius", d.jitter_radius);
  if (j.contains("jitter_seed")) {
    const auto& s = j.at("jitter_seed");
    c.jitter_seed = s.is_null() ? std::nullopt : std::optional<std::uint64_t>(s.get<std::uint64_t>());
  }
  if (j.contains("gains")) {
    c.gains = j.at("gains").get<std::vector<double>>();
  } else if (c.gains.size() != static_cast<std::size_t>(c.num_codebooks)) {
    // Changing K without gains: first codebook loudest, the rest shared.
    c.gains.assign(static_cast<std::size_t>(c.num_codebooks), 0.4 / std::max(1, c.num_codebooks - 1));
    c.gains[0] = 0.6;
  }
}

inline void to_json(nlohmann::json& j, const CorpusConfig& c) {
  j = {{"num_train", c.num_train},   {"num_validation", c.num_validation},
       {"min_length", c.min_length}, {"max_length", c.max_length},
       {"branching", c.branching},   {"branch_decay", c.branch_decay},
       {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, CorpusConfig& c) {
  const CorpusConfig d = c;
  c.num_train = j.value("num_train", d.num_train);
  c.num_validation = j.value("num_validation", d.num_validation);
  c.min_length = j.value("min_length", d.min_length);
  c.max_length = j.value("max_length", d.max_length);
  c.branching = j.value("branching", d.branching);
  c.branch_decay = j.value("branch_decay", d.branch_decay);
  c.seed = j.value("seed", d.seed);
}

inline void to_json(nlohmann::json& j, const SpectrogramConfig& c) {
  j = {{"window_length", c.window_length}, {"hop", c.hop},
       {"fft_size", c.fft_size},           {"mel_bands", c.mel_bands},
       {"mfcc_order", c.mfcc_order},       {"sample_rate", c.sample_rate},
       {"log_floor", c.log_floor}};
}

inline void from_json(const nlohmann::json& j, SpectrogramConfig& c) {
  const SpectrogramConfig d = c;
  c.window_length = j.value("window_length", d.window_length);
  c.hop = j.value("hop", d.hop);
  c.fft_size = j.value("fft_size", d.fft_size);
  c.mel_bands = j.value("mel_bands", d.mel_bands);
  c.mfcc_order = j.value("mfcc_order", d.mfcc_order);
  c.sample_rate = j.value("sample_rate", d.sample_rate);
  c.log_floor = j.value("log_floor", d.log_floor);
}

inline void to_json(nlohmann::json& j, const F0Config& c) {
  j = {{"f_min", c.f_min}, {"f_max", c.f_max}, {"voicing_threshold", c.voicing_threshold}};
}

inline void from_json(const nlohmann::json& j, F0Config& c) {
  const F0Config d = c;
  c.f_min = j.value("f_min", d.f_min);
  c.f_max = j.value("f_max", d.f_max);
  c.voicing_threshold = j.value("voicing_threshold", d.voicing_threshold);
}

struct MetricsConfig {
  SpectrogramConfig spectrogram;
  F0Config f0;
};

inline void to_json(nlohmann::json& j, const MetricsConfig& c) {
  j = {{"spectrogram", c.spectrogram}, {"f0", c.f0}};
}

inline void from_json(const nlohmann::json& j, MetricsConfig& c) {
  if (j.contains("spectrogram")) c.spectrogram = j.at("spectrogram").get<SpectrogramConfig>();
  if (j.contains("f0")) c.f0 = j.at("f0").get<F0Config>();
  c.f0.frames = c.spectrogram;
}

struct RunConfig {
  ToyCodecConfig codec;
  CorpusConfig corpus;
  ModelConfig model;
  TrainConfig train;
  SamplingConfig sampling;
  EditConfig edit;
  MetricsConfig metrics;

  void validate() const {
    codec.validate();
    corpus.validate();
    model.validate();
    train.validate();
    sampling.validate();
    edit.validate();
    metrics.f0.validate();
    if (model.text_vocab_size < codec.alphabet_size) {
      throw ConfigError("model.text_vocab_size must cover codec.alphabet_size");
    }
    if (model.codebook_sizes != codec.codebook_sizes()) {
      throw ConfigError("model.codebook_sizes must match the codec's codebooks");
    }
  }
};

inline void to_json(nlohmann::json& j, const RunConfig& c) {
  j = {{"codec", c.codec},       {"corpus", c.corpus},     {"model", c.model},
       {"train", c.train},       {"sampling", c.sampling}, {"edit", c.edit},
       {"metrics", c.metrics}};
}

namespace detail {

// Every key in `given` must exist in `known` (the defaults' JSON form).
inline void check_known_keys(const nlohmann::json& given, const nlohmann::json& known,
                             const std::string& path) {
  if (!given.is_object()) return;
  if (!known.is_object()) throw ConfigError("config field '" + path + "' is not a section");
  for (const auto& [key, value] : given.items()) {
    const std::string here = path.empty() ? key : path + "." + key;
    if (!known.contains(key)) throw ConfigError("unknown config field '" + here + "'");
    if (value.is_object()) check_known_keys(value, known.at(key), here);
  }
}

template <class T>
T section(const nlohmann::json& j, const char* name, T value) {
  if (!j.contains(name)) return value;
  try {
    from_json(j.at(name), value);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config section '") + name + "': " + e.what());
  }
  return value;
}

}  // namespace detail

inline RunConfig run_config_from_json(const nlohmann::json& j) {
  const RunConfig defaults;
  detail::check_known_keys(j, nlohmann::json(defaults), "");
  RunConfig c;
  c.codec = detail::section(j, "codec", c.codec);
  c.corpus = detail::section(j, "corpus", c.corpus);
  // Model vocabularies follow the codec unless stated.
  c.model.codebook_sizes = c.codec.codebook_sizes();
  c.model.text_vocab_size = c.codec.alphabet_size;
  c.model.loss_weights.resize(c.model.codebook_sizes.size(), c.model.loss_weights.back());
  c.model = detail::section(j, "model", c.model);
  c.train = detail::section(j, "train", c.train);
  c.sampling = detail::section(j, "sampling", c.sampling);
  c.edit = detail::section(j, "edit", c.edit);
  c.metrics = detail::section(j, "metrics", c.metrics);
  c.validate();
  return c;
}

// "a.b.c=value"; value is parsed as JSON, falling back to a string.
inline void apply_override(nlohmann::json& j, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) {
    throw ConfigError("override '" + std::string(assignment) + "' is not key=value");
  }
  const std::string key(assignment.substr(0, eq));
  const std::string raw(assignment.substr(eq + 1));
  nlohmann::json value = nlohmann::json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  std::string pointer;
  std::istringstream parts(key);
  std::string part;
  while (std::getline(parts, part, '.')) pointer += "/" + part;
  j[nlohmann::json::json_pointer(pointer)] = std::move(value);
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

inline RunConfig load_run_config(const std::optional<std::filesystem::path>& path,
                                 const std::vector<std::string>& overrides = {}) {
  nlohmann::json j = path ? read_json_file(*path) : nlohmann::json::object();
  for (const auto& o : overrides) apply_override(j, o);
  try {
    return run_config_from_json(j);
  } catch (const ConfigError& e) {
    throw ConfigError((path ? path->string() + ": " : std::string()) + e.what());
  }
}

// 64-bit FNV-1a over the canonical (sorted-key) JSON dump.
inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string config_hash(const nlohmann::json& j) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a64(j.dump())));
  return buf;
}

}  // namespace vcraft
