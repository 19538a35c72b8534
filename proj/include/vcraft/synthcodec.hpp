#pragma once

// Deterministic, exactly invertible stand-in for a neural speech codec.
// Every transcript symbol becomes F frames; frame j of symbol s carries a
// fixed table entry per codebook. Codebooks 1-2 are injective in (s, j)
// and decode exactly; codebooks 3+ are "texture" and may be jittered.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <numbers>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "vcraft/codec_matrix.hpp"
#include "vcraft/errors.hpp"

namespace vcraft {

using Symbol = int;
using Transcript = std::vector<Symbol>;

struct ToyCodecConfig {
  int alphabet_size = 26;
  int frames_per_symbol = 4;
  int num_codebooks = 4;
  int codebook_size = 256;
  int frame_rate = 50;
  int sample_rate = 16000;
  std::uint64_t table_seed = 20240101;
  // Jitter radius on texture codebooks (k >= 3); 0 disables.
  int jitter_radius = 2;
  std::optional<std::uint64_t> jitter_seed;
  std::vector<double> gains = {0.6, 0.2, 0.12, 0.08};

  void validate() const {
    if (alphabet_size < 1) throw ConfigError("codec.alphabet_size must be >= 1");
    if (frames_per_symbol < 1) throw ConfigError("codec.frames_per_symbol must be >= 1");
    if (num_codebooks < 1) throw ConfigError("codec.num_codebooks must be >= 1");
    if (codebook_size < alphabet_size * frames_per_symbol) {
      throw ConfigError("codec.codebook_size must be >= alphabet_size * frames_per_symbol");
    }
    if (frame_rate < 1 || sample_rate % frame_rate != 0) {
      throw ConfigError("codec.sample_rate must be a multiple of codec.frame_rate");
    }
    if (jitter_radius < 0) throw ConfigError("codec.jitter_radius must be >= 0");
    if (gains.size() != static_cast<std::size_t>(num_codebooks)) {
      throw ConfigError("codec.gains needs one entry per codebook");
    }
  }

  std::vector<int> codebook_sizes() const {
    return std::vector<int>(static_cast<std::size_t>(num_codebooks), codebook_size);
  }
};

// Transcript text form: single letters for the first 26 symbols, "s<id>"
// beyond that, whitespace separated.
inline std::string symbol_name(Symbol s) {
  if (s >= 0 && s < 26) return std::string(1, static_cast<char>('a' + s));
  return "s" + std::to_string(s);
}

inline std::string transcript_text(const Transcript& t) {
  std::string out;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (i) out += ' ';
    out += t[i] < 0 ? std::string("?") : symbol_name(t[i]);
  }
  return out;
}

inline Transcript parse_transcript(std::string_view text, int alphabet_size) {
  Transcript out;
  std::istringstream in{std::string(text)};
  std::string word;
  while (in >> word) {
    Symbol s = -1;
    if (word.size() == 1 && word[0] >= 'a' && word[0] <= 'z') {
      s = word[0] - 'a';
    } else if (word.size() > 1 && word[0] == 's' &&
               std::all_of(word.begin() + 1, word.end(), [](char c) { return c >= '0' && c <= '9'; })) {
      s = std::stoi(word.substr(1));
    }
    if (s < 0 || s >= alphabet_size) throw VocabularyError("unknown symbol '" + word + "'");
    out.push_back(s);
  }
  return out;
}

struct DecodeResult {
  Transcript symbols;       // -1 where a block matched nothing
  bool partial_block = false;  // trailing frames did not fill a whole symbol
};

struct EncodedUtterance {
  CodecMatrix tokens;
  Alignment alignment;
};

class ToyCodec {
 public:
  explicit ToyCodec(ToyCodecConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    const auto kc = static_cast<std::size_t>(cfg_.num_codebooks);
    const auto entries = static_cast<std::size_t>(cfg_.alphabet_size * cfg_.frames_per_symbol);
    table_.resize(kc);
    reverse_.assign(std::min<std::size_t>(kc, 2),
                    std::vector<int>(static_cast<std::size_t>(cfg_.codebook_size), -1));
    std::mt19937_64 rng(cfg_.table_seed);
    for (std::size_t k = 0; k < kc; ++k) {
      std::vector<Token> perm(static_cast<std::size_t>(cfg_.codebook_size));
      std::iota(perm.begin(), perm.end(), Token{0});
      std::shuffle(perm.begin(), perm.end(), rng);
      table_[k].assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(entries));
      if (k < reverse_.size()) {
        for (std::size_t e = 0; e < entries; ++e) {
          reverse_[k][static_cast<std::size_t>(table_[k][e])] = static_cast<int>(e);
        }
      }
    }
  }

  const ToyCodecConfig& config() const noexcept { return cfg_; }

  Token table_entry(std::size_t codebook, Symbol s, int phase) const {
    return table_[codebook][static_cast<std::size_t>(s * cfg_.frames_per_symbol + phase)];
  }

  EncodedUtterance encode(const Transcript& symbols) const { return encode_impl(symbols, nullptr); }

  EncodedUtterance encode(const Transcript& symbols, std::mt19937_64& jitter_rng) const {
    return encode_impl(symbols, &jitter_rng);
  }

  // Block-wise majority vote over the invertible codebooks.
  DecodeResult decode(const CodecMatrix& tokens) const {
    DecodeResult out;
    const auto f = static_cast<std::size_t>(cfg_.frames_per_symbol);
    const std::size_t t_total = tokens.frames();
    out.partial_block = t_total % f != 0;
    std::vector<int> votes(static_cast<std::size_t>(cfg_.alphabet_size));
    for (std::size_t block = 0; block * f < t_total; ++block) {
      std::fill(votes.begin(), votes.end(), 0);
      for (std::size_t j = 0; j < f && block * f + j < t_total; ++j) {
        for (std::size_t k = 0; k < reverse_.size() && k < tokens.codebooks(); ++k) {
          const Token tok = tokens.at(block * f + j, k);
          if (tok < 0 || tok >= cfg_.codebook_size) continue;
          const int entry = reverse_[k][static_cast<std::size_t>(tok)];
          if (entry >= 0 && static_cast<std::size_t>(entry) % f == j) {
            ++votes[static_cast<std::size_t>(entry) / f];
          }
        }
      }
      const auto best = std::max_element(votes.begin(), votes.end());
      out.symbols.push_back(*best > 0 ? static_cast<Symbol>(best - votes.begin()) : -1);
    }
    return out;
  }

  // Codebook-1 tokens map into [80, 600] Hz; texture codebooks sit higher.
  double token_frequency(std::size_t codebook, Token id) const {
    const double span_ids = std::max(1, cfg_.codebook_size - 1);
    if (codebook == 0) return 80.0 + id * std::min(2.0, 520.0 / span_ids);
    return 700.0 + 900.0 * static_cast<double>(codebook - 1) + 800.0 * id / span_ids;
  }

  // One sinusoid per codebook with continuous phase; sample_rate /
  // frame_rate samples per frame.
  std::vector<float> render(const CodecMatrix& tokens) const {
    const auto per_frame = static_cast<std::size_t>(cfg_.sample_rate / cfg_.frame_rate);
    std::vector<float> wav(tokens.frames() * per_frame, 0.0f);
    const std::size_t kc = std::min(tokens.codebooks(), cfg_.gains.size());
    std::vector<double> phase(kc, 0.0);
    const double two_pi = 2.0 * std::numbers::pi;
    for (std::size_t t = 0; t < tokens.frames(); ++t) {
      for (std::size_t k = 0; k < kc; ++k) {
        const double gain = cfg_.gains[k];
        const double step = two_pi * token_frequency(k, tokens.at(t, k)) / cfg_.sample_rate;
        for (std::size_t n = 0; n < per_frame; ++n) {
          if (gain != 0.0) wav[t * per_frame + n] += static_cast<float>(gain * std::sin(phase[k]));
          phase[k] = std::fmod(phase[k] + step, two_pi);
        }
      }
    }
    return wav;
  }

 private:
  EncodedUtterance encode_impl(const Transcript& symbols, std::mt19937_64* jitter_rng) const {
    EncodedUtterance out{CodecMatrix(cfg_.codebook_sizes(), cfg_.frame_rate), {}};
    const auto kc = static_cast<std::size_t>(cfg_.num_codebooks);
    std::vector<Token> frame(kc);
    std::uniform_int_distribution<int> jitter(-cfg_.jitter_radius, cfg_.jitter_radius);
    for (std::size_t i = 0; i < symbols.size(); ++i) {
      const Symbol s = symbols[i];
      if (s < 0 || s >= cfg_.alphabet_size) {
        throw VocabularyError("symbol " + std::to_string(s) + " outside alphabet of " +
                              std::to_string(cfg_.alphabet_size));
      }
      const std::size_t start = out.tokens.frames();
      for (int j = 0; j < cfg_.frames_per_symbol; ++j) {
        for (std::size_t k = 0; k < kc; ++k) {
          Token tok = table_entry(k, s, j);
          if (k >= 2 && jitter_rng != nullptr && cfg_.jitter_radius > 0) {
            tok = (tok + jitter(*jitter_rng) + cfg_.codebook_size) % cfg_.codebook_size;
          }
          frame[k] = tok;
        }
        out.tokens.push_frame(frame);
      }
      out.alignment.push_back({start, out.tokens.frames()});
    }
    return out;
  }

  ToyCodecConfig cfg_;
  std::vector<std::vector<Token>> table_;    // [codebook][s * F + phase]
  std::vector<std::vector<int>> reverse_;    // invertible codebooks: token -> entry
};

struct ToyUtterance {
  std::string id;
  Transcript transcript;
  CodecMatrix tokens;
  Alignment alignment;
  std::string split;  // "train" or "validation"
};

struct CorpusConfig {
  int num_train = 1000;
  int num_validation = 100;
  int min_length = 5;
  int max_length = 20;
  // Order-2 symbol process: each (prev2, prev1) context allows `branching`
  // successors with geometrically decaying weights.
  int branching = 3;
  double branch_decay = 0.35;
  std::uint64_t seed = 7;

  void validate() const {
    if (num_train < 0 || num_validation < 0 || num_train + num_validation < 1) {
      throw ConfigError("corpus needs a positive number of utterances");
    }
    if (min_length < 1 || max_length < min_length) {
      throw ConfigError("corpus.min_length/max_length must satisfy 1 <= min <= max");
    }
    if (branching < 1) throw ConfigError("corpus.branching must be >= 1");
    if (!(branch_decay > 0.0 && branch_decay <= 1.0)) {
      throw ConfigError("corpus.branch_decay must be in (0, 1]");
    }
  }
};

// Seeded order-2 symbol grammar.
class SymbolGrammar {
 public:
  SymbolGrammar(int alphabet_size, const CorpusConfig& cfg) : alphabet_(alphabet_size) {
    std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
    const int width = std::min(cfg.branching, alphabet_);
    std::vector<double> weights(static_cast<std::size_t>(width));
    double w = 1.0;
    for (auto& x : weights) {
      x = w;
      w *= cfg.branch_decay;
    }
    successors_.resize(static_cast<std::size_t>(alphabet_ * alphabet_));
    for (auto& succ : successors_) {
      std::vector<Symbol> all(static_cast<std::size_t>(alphabet_));
      std::iota(all.begin(), all.end(), 0);
      std::shuffle(all.begin(), all.end(), rng);
      succ.symbols.assign(all.begin(), all.begin() + width);
      succ.dist = std::discrete_distribution<int>(weights.begin(), weights.end());
    }
  }

  Transcript sample(int length, std::mt19937_64& rng) {
    Transcript out;
    std::uniform_int_distribution<Symbol> any(0, alphabet_ - 1);
    for (int i = 0; i < length; ++i) {
      if (i < 2) {
        out.push_back(any(rng));
        continue;
      }
      auto& succ = successors_[static_cast<std::size_t>(out[out.size() - 2] * alphabet_ +
                                                        out[out.size() - 1])];
      out.push_back(succ.symbols[static_cast<std::size_t>(succ.dist(rng))]);
    }
    return out;
  }

 private:
  struct Successors {
    std::vector<Symbol> symbols;
    std::discrete_distribution<int> dist;
  };
  int alphabet_;
  std::vector<Successors> successors_;
};

// Training utterances come first, then validation; ids encode the split.
inline std::vector<ToyUtterance> gen_corpus(const CorpusConfig& cfg, const ToyCodec& codec) {
  cfg.validate();
  SymbolGrammar grammar(codec.config().alphabet_size, cfg);
  std::mt19937_64 rng(cfg.seed);
  std::mt19937_64 jitter_rng(codec.config().jitter_seed.value_or(cfg.seed + 1));
  std::uniform_int_distribution<int> length(cfg.min_length, cfg.max_length);
  std::vector<ToyUtterance> out;
  const int total = cfg.num_train + cfg.num_validation;
  out.reserve(static_cast<std::size_t>(total));
  for (int i = 0; i < total; ++i) {
    const bool train = i < cfg.num_train;
    const int index = train ? i : i - cfg.num_train;
    char id[32];
    std::snprintf(id, sizeof(id), "%s-%05d", train ? "train" : "val", index);
    Transcript transcript = grammar.sample(length(rng), rng);
    EncodedUtterance enc = codec.config().jitter_radius > 0 ? codec.encode(transcript, jitter_rng)
                                                            : codec.encode(transcript);
    out.push_back({id, std::move(transcript), std::move(enc.tokens), std::move(enc.alignment),
                   train ? "train" : "validation"});
  }
  return out;
}

}  // namespace vcraft
