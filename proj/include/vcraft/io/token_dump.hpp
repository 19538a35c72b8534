#pragma once

// Line-delimited token dumps: one JSON object per utterance,
//   {"codebook_sizes":[...],"frame_rate":50,"frames":[[..K..],...],
//    "id":"...","spans":[[start,end],...]}
// "spans" is optional. Integers only.

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "vcraft/codec_matrix.hpp"
#include "vcraft/errors.hpp"

namespace vcraft {

struct TokenRecord {
  std::string id;
  CodecMatrix tokens;
  std::optional<std::vector<Span>> spans;
};

inline nlohmann::json to_json(const TokenRecord& rec) {
  nlohmann::json j;
  j["id"] = rec.id;
  j["frame_rate"] = rec.tokens.frame_rate();
  j["codebook_sizes"] = rec.tokens.codebook_sizes();
  auto frames = nlohmann::json::array();
  for (std::size_t t = 0; t < rec.tokens.frames(); ++t) {
    auto f = rec.tokens.frame(t);
    frames.push_back(std::vector<Token>(f.begin(), f.end()));
  }
  j["frames"] = std::move(frames);
  if (rec.spans) {
    auto spans = nlohmann::json::array();
    for (const Span& s : *rec.spans) spans.push_back({s.start, s.end});
    j["spans"] = std::move(spans);
  }
  return j;
}

inline TokenRecord token_record_from_json(const nlohmann::json& j) {
  try {
    TokenRecord rec{j.at("id").get<std::string>(),
                    CodecMatrix(j.at("codebook_sizes").get<std::vector<int>>(),
                                j.at("frame_rate").get<int>()),
                    std::nullopt};
    for (const auto& f : j.at("frames")) rec.tokens.push_frame(f.get<std::vector<Token>>());
    if (j.contains("spans")) {
      std::vector<Span> spans;
      for (const auto& s : j.at("spans")) {
        spans.push_back({s.at(0).get<std::size_t>(), s.at(1).get<std::size_t>()});
      }
      validate_spans(spans, rec.tokens.frames());
      rec.spans = std::move(spans);
    }
    return rec;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(std::string("malformed token record: ") + e.what());
  }
}

inline void write_token_dump(const std::filesystem::path& path,
                             const std::vector<TokenRecord>& records) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  for (const auto& rec : records) out << to_json(rec).dump() << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

inline std::vector<TokenRecord> read_token_dump(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<TokenRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      records.push_back(token_record_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw InvalidInput(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const Error& e) {
      throw InvalidInput(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return records;
}

inline std::optional<TokenRecord> find_token_record(const std::filesystem::path& path,
                                                    const std::string& id) {
  for (auto& rec : read_token_dump(path)) {
    if (rec.id == id) return rec;
  }
  return std::nullopt;
}

}  // namespace vcraft
