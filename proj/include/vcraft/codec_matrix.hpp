#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "vcraft/errors.hpp"

namespace vcraft {

using Token = std::int32_t;

// Filler for stacked coordinates that the delay pattern leaves without a
// real token. Never stored in a CodecMatrix.
inline constexpr Token kEmptyToken = -1;

// Half-open frame range [start, end).
struct Span {
  std::size_t start = 0;
  std::size_t end = 0;

  std::size_t length() const noexcept { return end - start; }
  friend bool operator==(const Span&, const Span&) = default;
};

// Frame span of each transcript word, in word order.
using Alignment = std::vector<Span>;

// Throws InvalidSpan unless spans are non-empty, sorted, pairwise disjoint
// and inside [0, frame_count).
inline void validate_spans(std::span<const Span> spans, std::size_t frame_count) {
  std::size_t prev_end = 0;
  for (std::size_t i = 0; i < spans.size(); ++i) {
    const Span& s = spans[i];
    if (s.start >= s.end) {
      throw InvalidSpan("span " + std::to_string(i) + " is empty or reversed");
    }
    if (s.end > frame_count) {
      throw InvalidSpan("span " + std::to_string(i) + " ends at " + std::to_string(s.end) +
                        " beyond frame count " + std::to_string(frame_count));
    }
    if (i > 0 && s.start < prev_end) {
      throw InvalidSpan("span " + std::to_string(i) + " overlaps or precedes span " +
                        std::to_string(i - 1));
    }
    prev_end = s.end;
  }
}

// T x K grid of codec token ids, stored frame-major.
class CodecMatrix {
 public:
  CodecMatrix() : CodecMatrix(std::vector<int>{256}) {}

  explicit CodecMatrix(std::vector<int> codebook_sizes, int frame_rate = 50)
      : codebook_sizes_(std::move(codebook_sizes)), frame_rate_(frame_rate) {
    if (codebook_sizes_.empty()) throw InvalidInput("codec matrix needs at least one codebook");
    for (int size : codebook_sizes_) {
      if (size < 1) throw InvalidInput("codebook sizes must be positive");
    }
    if (frame_rate_ < 1) throw InvalidInput("frame rate must be positive");
  }

  std::size_t frames() const noexcept { return data_.size() / codebooks(); }
  std::size_t codebooks() const noexcept { return codebook_sizes_.size(); }
  bool empty() const noexcept { return data_.empty(); }
  int frame_rate() const noexcept { return frame_rate_; }
  const std::vector<int>& codebook_sizes() const noexcept { return codebook_sizes_; }

  std::span<const Token> frame(std::size_t t) const {
    return {data_.data() + t * codebooks(), codebooks()};
  }
  Token at(std::size_t t, std::size_t k) const { return data_[t * codebooks() + k]; }
  const std::vector<Token>& data() const noexcept { return data_; }

  void push_frame(std::span<const Token> codes) {
    check_frame(codes);
    data_.insert(data_.end(), codes.begin(), codes.end());
  }

  void set(std::size_t t, std::size_t k, Token value) {
    if (value < 0 || value >= codebook_sizes_[k]) {
      throw VocabularyError("token " + std::to_string(value) + " out of range for codebook " +
                            std::to_string(k));
    }
    data_[t * codebooks() + k] = value;
  }

  // Copy of frames [begin, end).
  CodecMatrix slice(std::size_t begin, std::size_t end) const {
    CodecMatrix out(codebook_sizes_, frame_rate_);
    out.data_.assign(data_.begin() + static_cast<std::ptrdiff_t>(begin * codebooks()),
                     data_.begin() + static_cast<std::ptrdiff_t>(end * codebooks()));
    return out;
  }

  void append(const CodecMatrix& other) {
    if (other.codebook_sizes_ != codebook_sizes_) {
      throw InvalidInput("cannot append codec matrices with different codebooks");
    }
    data_.insert(data_.end(), other.data_.begin(), other.data_.end());
  }

  void check_frame(std::span<const Token> codes) const {
    if (codes.size() != codebooks()) {
      throw InvalidInput("frame has " + std::to_string(codes.size()) + " codes, expected " +
                         std::to_string(codebooks()));
    }
    for (std::size_t k = 0; k < codes.size(); ++k) {
      if (codes[k] < 0 || codes[k] >= codebook_sizes_[k]) {
        throw VocabularyError("token " + std::to_string(codes[k]) +
                              " out of range for codebook " + std::to_string(k));
      }
    }
  }

  friend bool operator==(const CodecMatrix&, const CodecMatrix&) = default;

 private:
  std::vector<int> codebook_sizes_;
  int frame_rate_;
  std::vector<Token> data_;
};

}  // namespace vcraft
