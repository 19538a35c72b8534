#pragma once

// Token rearrangement: causal masking (masked spans relocated behind an
// end-of-utterance marker) and delayed stacking (codebook k shifted by
// k-1 steps), with exact inverses, splice-back and the training-time
// span sampler.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "vcraft/codec_matrix.hpp"
#include "vcraft/errors.hpp"

namespace vcraft {

enum class StepKind : std::uint8_t { kFrame, kMask, kEos, kEou };

// One element of a rearranged or stacked sequence: either a frame of K
// codes or a marker occupying a whole step. In a StackedSequence frame
// codes may be kEmptyToken.
struct Step {
  StepKind kind = StepKind::kFrame;
  int mask_index = 0;  // 1-based, kMask only
  std::vector<Token> codes;

  static Step frame(std::vector<Token> codes) { return {StepKind::kFrame, 0, std::move(codes)}; }
  static Step frame(std::span<const Token> codes) {
    return {StepKind::kFrame, 0, {codes.begin(), codes.end()}};
  }
  static Step mask(int index) { return {StepKind::kMask, index, {}}; }
  static Step eos() { return {StepKind::kEos, 0, {}}; }
  static Step eou() { return {StepKind::kEou, 0, {}}; }

  bool is_frame() const noexcept { return kind == StepKind::kFrame; }
  friend bool operator==(const Step&, const Step&) = default;
};

enum class SpanRole : std::uint8_t { kUnmasked, kMasked };

// Where a contiguous run of frames came from and where it sits now.
struct SpanRecord {
  SpanRole role = SpanRole::kUnmasked;
  Span source;             // frame range in the original matrix
  std::size_t first_item;  // item range in the owning sequence
  std::size_t last_item;
  friend bool operator==(const SpanRecord&, const SpanRecord&) = default;
};

// Layout: U1 <M1> U2 <M2> ... U_{n+1} EOU <M1> D1 EOS <M2> D2 EOS ...
struct RearrangedSequence {
  std::vector<int> codebook_sizes;
  int frame_rate = 50;
  std::vector<Step> items;
  std::vector<SpanRecord> span_table;  // non-empty runs, in item order

  std::size_t codebooks() const noexcept { return codebook_sizes.size(); }
  friend bool operator==(const RearrangedSequence&, const RearrangedSequence&) = default;
};

// Delay-patterned form: every run of L frames becomes L + K - 1 steps.
struct StackedSequence {
  std::vector<int> codebook_sizes;
  int frame_rate = 50;
  std::vector<Step> items;
  std::vector<SpanRecord> span_table;  // item ranges index stacked steps

  std::size_t codebooks() const noexcept { return codebook_sizes.size(); }
  friend bool operator==(const StackedSequence&, const StackedSequence&) = default;
};

struct MaskSamplingConfig {
  double lambda = 1.0;
  int min_spans = 1;
  int max_spans = 3;
  std::size_t max_span_len = 60;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(lambda > 0.0)) throw ConfigError("mask.lambda must be positive");
    if (min_spans < 1) throw ConfigError("mask.min_spans must be >= 1");
    if (max_spans < min_spans) throw ConfigError("mask.max_spans must be >= mask.min_spans");
    if (max_span_len < 1) throw ConfigError("mask.max_span_len must be >= 1");
  }
};

namespace detail {

struct ParsedLayout {
  std::vector<std::pair<std::size_t, std::size_t>> unmasked;  // item ranges, n+1 entries
  std::vector<std::pair<std::size_t, std::size_t>> masked;    // item ranges, n entries
};

inline void check_codes(const Step& step, std::size_t index, const std::vector<int>& sizes,
                        bool allow_empty) {
  if (step.codes.size() != sizes.size()) {
    throw StructureError(index, "frame has " + std::to_string(step.codes.size()) +
                                    " codes, expected " + std::to_string(sizes.size()));
  }
  for (std::size_t k = 0; k < sizes.size(); ++k) {
    const Token c = step.codes[k];
    if (allow_empty && c == kEmptyToken) continue;
    if (c < 0 || c >= sizes[k]) {
      throw VocabularyError("item " + std::to_string(index) + ": code " + std::to_string(c) +
                            " out of range for codebook " + std::to_string(k));
    }
  }
}

// Validates the causal-mask grammar; frames must be complete (no EMPTY).
inline ParsedLayout parse_layout(const std::vector<Step>& items, const std::vector<int>& sizes) {
  ParsedLayout out;
  std::size_t i = 0;
  std::size_t run_start = 0;
  int expected_mask = 1;
  for (; i < items.size(); ++i) {
    const Step& s = items[i];
    if (s.kind == StepKind::kEou) break;
    if (s.kind == StepKind::kFrame) {
      check_codes(s, i, sizes, false);
    } else if (s.kind == StepKind::kMask) {
      if (s.mask_index != expected_mask) {
        throw StructureError(i, "mask marker " + std::to_string(s.mask_index) +
                                    " out of order, expected " + std::to_string(expected_mask));
      }
      out.unmasked.emplace_back(run_start, i);
      run_start = i + 1;
      ++expected_mask;
    } else {
      throw StructureError(i, "EOS before end of utterance");
    }
  }
  if (i == items.size()) throw StructureError(i, "missing EOU");
  out.unmasked.emplace_back(run_start, i);
  ++i;
  const int n_masks = expected_mask - 1;
  for (int m = 1; m <= n_masks; ++m) {
    if (i >= items.size()) throw StructureError(i, "dangling mask marker " + std::to_string(m));
    if (items[i].kind != StepKind::kMask || items[i].mask_index != m) {
      throw StructureError(i, "expected relocated span for mask " + std::to_string(m));
    }
    const std::size_t begin = ++i;
    for (; i < items.size() && items[i].kind == StepKind::kFrame; ++i) {
      check_codes(items[i], i, sizes, false);
    }
    if (i >= items.size()) throw StructureError(i, "masked span without EOS");
    if (items[i].kind != StepKind::kEos) throw StructureError(i, "masked span not closed by EOS");
    if (i == begin) throw StructureError(i, "empty masked span");
    out.masked.emplace_back(begin, i);
    ++i;
  }
  if (i < items.size()) {
    throw StructureError(i, items[i].kind == StepKind::kEos ? "unmatched EOS" : "trailing item");
  }
  return out;
}

inline std::vector<SpanRecord> table_from_layout(const ParsedLayout& layout) {
  std::vector<SpanRecord> table;
  std::vector<Span> masked_sources;
  std::size_t frame = 0;
  for (std::size_t u = 0; u < layout.unmasked.size(); ++u) {
    const auto [ub, ue] = layout.unmasked[u];
    if (ue > ub) table.push_back({SpanRole::kUnmasked, {frame, frame + ue - ub}, ub, ue});
    frame += ue - ub;
    if (u < layout.masked.size()) {
      const auto [mb, me] = layout.masked[u];
      masked_sources.push_back({frame, frame + me - mb});
      frame += me - mb;
    }
  }
  for (std::size_t m = 0; m < layout.masked.size(); ++m) {
    table.push_back(
        {SpanRole::kMasked, masked_sources[m], layout.masked[m].first, layout.masked[m].second});
  }
  return table;
}

}  // namespace detail

// Relocates each span behind EOU, introduced by its mask marker and closed
// by EOS. Mask(i) goes to the i-th span from the left.
inline RearrangedSequence causal_mask(const CodecMatrix& x, std::span<const Span> spans) {
  validate_spans(spans, x.frames());
  RearrangedSequence y{x.codebook_sizes(), x.frame_rate(), {}, {}};
  y.items.reserve(x.frames() + 3 * spans.size() + 1);
  std::size_t t = 0;
  for (std::size_t i = 0; i < spans.size(); ++i) {
    for (; t < spans[i].start; ++t) y.items.push_back(Step::frame(x.frame(t)));
    y.items.push_back(Step::mask(static_cast<int>(i + 1)));
    t = spans[i].end;
  }
  for (; t < x.frames(); ++t) y.items.push_back(Step::frame(x.frame(t)));
  y.items.push_back(Step::eou());
  for (std::size_t i = 0; i < spans.size(); ++i) {
    y.items.push_back(Step::mask(static_cast<int>(i + 1)));
    for (std::size_t f = spans[i].start; f < spans[i].end; ++f) {
      y.items.push_back(Step::frame(x.frame(f)));
    }
    y.items.push_back(Step::eos());
  }
  y.span_table = detail::table_from_layout(detail::parse_layout(y.items, y.codebook_sizes));
  return y;
}

inline std::pair<CodecMatrix, std::vector<Span>> uncausal_mask(const RearrangedSequence& y) {
  const detail::ParsedLayout layout = detail::parse_layout(y.items, y.codebook_sizes);
  CodecMatrix x(y.codebook_sizes, y.frame_rate);
  std::vector<Span> spans;
  for (std::size_t u = 0; u < layout.unmasked.size(); ++u) {
    for (std::size_t i = layout.unmasked[u].first; i < layout.unmasked[u].second; ++i) {
      x.push_frame(y.items[i].codes);
    }
    if (u < layout.masked.size()) {
      const std::size_t start = x.frames();
      for (std::size_t i = layout.masked[u].first; i < layout.masked[u].second; ++i) {
        x.push_frame(y.items[i].codes);
      }
      spans.push_back({start, x.frames()});
    }
  }
  return {std::move(x), std::move(spans)};
}

// Applies the delay pattern run-by-run to any item list (complete layouts
// or generation prefixes). Stacked step t of a run holds, at codebook k
// (0-based), the run's frame t - k, or EMPTY outside [0, L).
inline std::vector<Step> stack_steps(std::span<const Step> items, std::size_t num_codebooks) {
  std::vector<Step> out;
  out.reserve(items.size() + num_codebooks * 4);
  std::size_t i = 0;
  while (i < items.size()) {
    if (!items[i].is_frame()) {
      out.push_back(items[i]);
      ++i;
      continue;
    }
    std::size_t end = i;
    while (end < items.size() && items[end].is_frame()) ++end;
    const std::size_t len = end - i;
    for (std::size_t t = 0; t < len + num_codebooks - 1; ++t) {
      Step step = Step::frame(std::vector<Token>(num_codebooks, kEmptyToken));
      for (std::size_t k = 0; k < num_codebooks; ++k) {
        if (t >= k && t - k < len) step.codes[k] = items[i + t - k].codes[k];
      }
      out.push_back(std::move(step));
    }
    i = end;
  }
  return out;
}

inline StackedSequence delay_stack(const RearrangedSequence& y) {
  const std::size_t k = y.codebooks();
  const auto table = detail::table_from_layout(detail::parse_layout(y.items, y.codebook_sizes));
  StackedSequence z{y.codebook_sizes, y.frame_rate, stack_steps(y.items, k), {}};
  // Every run grows by K - 1 steps; shift item ranges accordingly.
  std::vector<SpanRecord> ordered = table;
  std::sort(ordered.begin(), ordered.end(),
            [](const SpanRecord& a, const SpanRecord& b) { return a.first_item < b.first_item; });
  std::size_t shift = 0;
  for (SpanRecord rec : ordered) {
    const std::size_t len = rec.last_item - rec.first_item;
    rec.first_item += shift;
    rec.last_item = rec.first_item + len + k - 1;
    shift += k - 1;
    z.span_table.push_back(rec);
  }
  return z;
}

inline RearrangedSequence unstack(const StackedSequence& z) {
  const std::size_t kc = z.codebooks();
  RearrangedSequence y{z.codebook_sizes, z.frame_rate, {}, {}};
  std::size_t i = 0;
  while (i < z.items.size()) {
    if (!z.items[i].is_frame()) {
      y.items.push_back(z.items[i]);
      ++i;
      continue;
    }
    std::size_t end = i;
    while (end < z.items.size() && z.items[end].is_frame()) ++end;
    const std::size_t run = end - i;
    if (run < kc) {
      throw StructureError(i, "stacked run of " + std::to_string(run) + " steps is shorter than " +
                                  std::to_string(kc) + " codebooks");
    }
    const std::size_t len = run - kc + 1;
    std::vector<Step> frames(len, Step::frame(std::vector<Token>(kc, 0)));
    for (std::size_t t = 0; t < run; ++t) {
      const Step& s = z.items[i + t];
      detail::check_codes(s, i + t, z.codebook_sizes, true);
      for (std::size_t k = 0; k < kc; ++k) {
        const bool real = t >= k && t - k < len;
        if (real && s.codes[k] == kEmptyToken) {
          throw StructureError(i + t, "EMPTY where codebook " + std::to_string(k + 1) +
                                          " must hold a token");
        }
        if (!real && s.codes[k] != kEmptyToken) {
          throw StructureError(i + t, "token where codebook " + std::to_string(k + 1) +
                                          " must be EMPTY");
        }
        if (real) frames[t - k].codes[k] = s.codes[k];
      }
    }
    for (auto& f : frames) y.items.push_back(std::move(f));
    i = end;
  }
  y.span_table = detail::table_from_layout(detail::parse_layout(y.items, y.codebook_sizes));
  return y;
}

// Replaces each span of x by the matching generated frames. Frames outside
// the spans are copied verbatim.
inline CodecMatrix splice(const CodecMatrix& x, std::span<const Span> spans,
                          std::span<const CodecMatrix> generated) {
  validate_spans(spans, x.frames());
  if (spans.size() != generated.size()) {
    throw InvalidInput("splice got " + std::to_string(generated.size()) + " generations for " +
                       std::to_string(spans.size()) + " spans");
  }
  CodecMatrix out(x.codebook_sizes(), x.frame_rate());
  std::size_t t = 0;
  for (std::size_t i = 0; i < spans.size(); ++i) {
    out.append(x.slice(t, spans[i].start));
    out.append(generated[i]);
    t = spans[i].end;
  }
  out.append(x.slice(t, x.frames()));
  return out;
}

// Places spans of the given lengths left to right, choosing the gap
// composition uniformly (stars and bars) among all disjoint placements.
template <class Rng>
std::vector<Span> place_spans(std::size_t frame_count, std::vector<std::size_t> lengths, Rng& rng) {
  if (frame_count == 0) throw InvalidInput("cannot place spans in an empty sequence");
  std::size_t total = 0;
  std::size_t n = 0;
  for (; n < lengths.size(); ++n) {
    if (lengths[n] < 1) throw InvalidInput("span lengths must be positive");
    if (total + lengths[n] > frame_count) break;
    total += lengths[n];
  }
  lengths.resize(n);
  if (n == 0) return {};
  const std::size_t free_frames = frame_count - total;
  // Choose n bar positions among free + n slots; the stars between bars are gaps.
  std::vector<std::size_t> slots(free_frames + n);
  std::iota(slots.begin(), slots.end(), std::size_t{0});
  for (std::size_t i = 0; i < n; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, slots.size() - 1);
    std::swap(slots[i], slots[pick(rng)]);
  }
  std::vector<std::size_t> bars(slots.begin(), slots.begin() + static_cast<std::ptrdiff_t>(n));
  std::sort(bars.begin(), bars.end());
  std::vector<Span> spans;
  std::size_t cursor = 0;
  std::size_t consumed_stars = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t stars_before = bars[i] - i;
    cursor += stars_before - consumed_stars;
    consumed_stars = stars_before;
    spans.push_back({cursor, cursor + lengths[i]});
    cursor += lengths[i];
  }
  return spans;
}

// Span count from Poisson(lambda) conditioned on [min_spans, max_spans].
template <class Rng>
int sample_span_count(const MaskSamplingConfig& cfg, Rng& rng) {
  std::vector<double> weights;
  double pmf = std::exp(-cfg.lambda);
  for (int n = 0; n <= cfg.max_spans; ++n) {
    if (n > 0) pmf *= cfg.lambda / n;
    if (n >= cfg.min_spans) weights.push_back(pmf);
  }
  std::discrete_distribution<int> dist(weights.begin(), weights.end());
  return cfg.min_spans + dist(rng);
}

template <class Rng>
std::vector<Span> sample_mask_spans(std::size_t frame_count, const MaskSamplingConfig& cfg,
                                    Rng& rng) {
  if (frame_count == 0) throw InvalidInput("cannot sample mask spans for an empty sequence");
  cfg.validate();
  const int n = sample_span_count(cfg, rng);
  const std::size_t cap = std::min(cfg.max_span_len, frame_count);
  std::uniform_int_distribution<std::size_t> len_dist(1, cap);
  std::vector<std::size_t> lengths(static_cast<std::size_t>(n));
  for (auto& l : lengths) l = len_dist(rng);
  return place_spans(frame_count, std::move(lengths), rng);
}

// Symbolic layout, e.g. "X1 <M1> X5 X6 EOU <M1> X2 X3 X4 EOS", naming each
// frame by its 1-based position in the original matrix.
inline std::string layout_symbols(const RearrangedSequence& y) {
  std::vector<std::size_t> source(y.items.size(), 0);
  for (const SpanRecord& r : y.span_table) {
    for (std::size_t i = r.first_item; i < r.last_item; ++i) source[i] = r.source.start + (i - r.first_item);
  }
  std::string out;
  for (std::size_t i = 0; i < y.items.size(); ++i) {
    if (i) out += ' ';
    switch (y.items[i].kind) {
      case StepKind::kFrame:
        out += "X" + std::to_string(source[i] + 1);
        break;
      case StepKind::kMask:
        out += "<M" + std::to_string(y.items[i].mask_index) + ">";
        break;
      case StepKind::kEos:
        out += "EOS";
        break;
      case StepKind::kEou:
        out += "EOU";
        break;
    }
  }
  return out;
}

}  // namespace vcraft
