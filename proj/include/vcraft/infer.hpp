#pragma once

// Editing and continuation: transcript diff, margin-extended edit spans,
// the delay-pattern decode loop, candidate sweeps and selection.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "vcraft/codec_matrix.hpp"
#include "vcraft/errors.hpp"
#include "vcraft/model/config.hpp"
#include "vcraft/rearrange.hpp"
#include "vcraft/sampling.hpp"

namespace vcraft {

// Anything that decodes incrementally: feed stacked steps, read the K
// heads' logits at the last fed position.
template <class S>
concept DecodeSessionLike = requires(S s, const Step& step) {
  s.feed(step);
  { s.head_logits() } -> std::convertible_to<std::vector<std::vector<double>>>;
};

template <class M>
concept InfillModel = requires(const M& m, std::span<const int> text) {
  { m.config() } -> std::convertible_to<const ModelConfig&>;
  { m.start(text) } -> DecodeSessionLike;
};

enum class EditKind : std::uint8_t { kInsertion, kDeletion, kSubstitution };

inline const char* edit_kind_name(EditKind k) {
  switch (k) {
    case EditKind::kInsertion:
      return "insertion";
    case EditKind::kDeletion:
      return "deletion";
    case EditKind::kSubstitution:
      return "substitution";
  }
  return "?";
}

// Word ranges are half-open. An insertion has an empty original range
// positioned before original word `orig_begin`.
struct EditOp {
  EditKind kind = EditKind::kSubstitution;
  std::size_t orig_begin = 0, orig_end = 0;
  std::size_t new_begin = 0, new_end = 0;
  friend bool operator==(const EditOp&, const EditOp&) = default;
};

struct EditScript {
  std::vector<EditOp> ops;
  bool empty() const noexcept { return ops.empty(); }
};

// Minimal unit-cost word edit script; runs of adjacent changes merge into
// one op.
template <class Word>
EditScript diff_transcripts(std::span<const Word> a, std::span<const Word> b) {
  const std::size_t n = a.size(), m = b.size();
  std::vector<std::size_t> d((n + 1) * (m + 1));
  auto at = [&](std::size_t i, std::size_t j) -> std::size_t& { return d[i * (m + 1) + j]; };
  for (std::size_t i = 0; i <= n; ++i) at(i, 0) = i;
  for (std::size_t j = 0; j <= m; ++j) at(0, j) = j;
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      at(i, j) = std::min({at(i - 1, j - 1) + (a[i - 1] == b[j - 1] ? 0 : 1), at(i - 1, j) + 1,
                           at(i, j - 1) + 1});
    }
  }
  // Backtrace into per-position moves, then group non-matches.
  struct Move {
    bool match;
    std::size_t i, j;  // position before the move
    std::size_t di, dj;
  };
  std::vector<Move> moves;
  std::size_t i = n, j = m;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0 && a[i - 1] == b[j - 1] && at(i, j) == at(i - 1, j - 1)) {
      moves.push_back({true, i - 1, j - 1, 1, 1});
      --i, --j;
    } else if (i > 0 && j > 0 && at(i, j) == at(i - 1, j - 1) + 1) {
      moves.push_back({false, i - 1, j - 1, 1, 1});
      --i, --j;
    } else if (i > 0 && at(i, j) == at(i - 1, j) + 1) {
      moves.push_back({false, i - 1, j, 1, 0});
      --i;
    } else {
      moves.push_back({false, i, j - 1, 0, 1});
      --j;
    }
  }
  std::reverse(moves.begin(), moves.end());
  EditScript script;
  for (std::size_t s = 0; s < moves.size();) {
    if (moves[s].match) {
      ++s;
      continue;
    }
    EditOp op;
    op.orig_begin = op.orig_end = moves[s].i;
    op.new_begin = op.new_end = moves[s].j;
    for (; s < moves.size() && !moves[s].match; ++s) {
      op.orig_end += moves[s].di;
      op.new_end += moves[s].dj;
    }
    if (op.orig_begin == op.orig_end) {
      op.kind = EditKind::kInsertion;
    } else if (op.new_begin == op.new_end) {
      op.kind = EditKind::kDeletion;
    } else {
      op.kind = EditKind::kSubstitution;
    }
    script.ops.push_back(op);
  }
  return script;
}

template <class Word>
EditScript diff_transcripts(const std::vector<Word>& a, const std::vector<Word>& b) {
  return diff_transcripts(std::span<const Word>(a), std::span<const Word>(b));
}

inline std::size_t margin_frames(double epsilon, int frame_rate) {
  if (epsilon < 0.0) throw InvalidInput("margin must be non-negative");
  return static_cast<std::size_t>(std::floor(epsilon * frame_rate + 1e-9));
}

// Sorted spans with overlapping or touching neighbours merged.
inline std::vector<Span> merge_spans(std::vector<Span> spans) {
  std::sort(spans.begin(), spans.end(),
            [](const Span& a, const Span& b) { return a.start < b.start; });
  std::vector<Span> out;
  for (const Span& s : spans) {
    if (!out.empty() && s.start <= out.back().end) {
      out.back().end = std::max(out.back().end, s.end);
    } else {
      out.push_back(s);
    }
  }
  return out;
}

// Frame spans to regenerate for a script. Substitutions and deletions
// cover their words plus the margin on both sides; an insertion gets a
// span centred on the midpoint between its neighbours, at least one frame
// each side.
inline std::vector<Span> select_edit_spans(const EditScript& script, const Alignment& align,
                                           double epsilon, int frame_rate, std::size_t frames) {
  validate_spans(align, frames);
  const std::size_t margin = margin_frames(epsilon, frame_rate);
  std::vector<Span> spans;
  for (const EditOp& op : script.ops) {
    if (op.orig_end > align.size()) {
      throw AlignmentError("edit references word " + std::to_string(op.orig_end - 1) +
                           " but the alignment covers " + std::to_string(align.size()) + " words");
    }
    std::size_t lo = 0, hi = 0;
    if (op.kind == EditKind::kInsertion) {
      std::size_t boundary = 0;
      if (align.empty()) {
        boundary = frames;
      } else if (op.orig_begin == 0) {
        boundary = align.front().start;
      } else if (op.orig_begin >= align.size()) {
        boundary = align.back().end;
      } else {
        boundary = (align[op.orig_begin - 1].end + align[op.orig_begin].start) / 2;
      }
      const std::size_t half = std::max<std::size_t>(margin, 1);
      lo = boundary > half ? boundary - half : 0;
      hi = std::min(frames, boundary + half);
    } else {
      lo = align[op.orig_begin].start;
      hi = align[op.orig_end - 1].end;
      lo = lo > margin ? lo - margin : 0;
      hi = std::min(frames, hi + margin);
    }
    if (hi > lo) spans.push_back({lo, hi});
  }
  return merge_spans(std::move(spans));
}

struct GenerationResult {
  std::vector<CodecMatrix> spans;  // one per mask, in order
  std::vector<bool> truncated;
  std::size_t steps = 0;  // stacked steps generated across masks
};

namespace detail {

inline std::vector<double> restrict_logits(const std::vector<double>& logits, int codes,
                                           std::span<const int> extra) {
  std::vector<double> out(logits.size(), -std::numeric_limits<double>::infinity());
  for (int i = 0; i < codes; ++i) out[static_cast<std::size_t>(i)] = logits[static_cast<std::size_t>(i)];
  for (int id : extra) out[static_cast<std::size_t>(id)] = logits[static_cast<std::size_t>(id)];
  return out;
}

}  // namespace detail

// Feeds W, the stacked unmasked context (items up to and including EOU),
// then for each mask marker decodes one delay-patterned run. Codebook 1's
// head may end the run by emitting EMPTY or EOS; the remaining K-1 steps
// finish the trailing codebooks with forced EMPTYs, then EOS is fed.
// Coordinates outside the delay pattern are always forced to EMPTY, so the
// generated steps unstack cleanly.
template <InfillModel M>
GenerationResult generate_infill(const M& model, std::span<const int> text,
                                 std::span<const Step> context, int num_masks,
                                 const SamplingConfig& cfg) {
  cfg.validate();
  const ModelConfig& mc = model.config();
  const std::size_t kc = mc.num_codebooks();
  if (num_masks < 0) throw InvalidInput("negative mask count");
  if (num_masks > mc.max_masks) {
    throw CapacityError("edit needs " + std::to_string(num_masks) + " masks but the model supports " +
                        std::to_string(mc.max_masks));
  }
  GenerationResult out;
  if (num_masks == 0) return out;
  std::mt19937_64 rng(cfg.seed);
  auto session = model.start(text);
  std::size_t position = text.size();
  for (const Step& s : stack_steps(context, kc)) {
    session.feed(s);
    ++position;
  }
  const auto capacity = static_cast<std::size_t>(mc.max_positions);

  for (int mask = 1; mask <= num_masks; ++mask) {
    session.feed(Step::mask(mask));
    ++position;
    std::vector<RunState> runs(kc);
    std::vector<Step> run_steps;
    std::size_t length = 0;  // frames, fixed once codebook 1 ends
    bool ended = false;
    bool truncated = false;
    for (std::size_t t = 0;; ++t) {
      if (ended && t == length + kc - 1) break;
      if (!ended && t >= 1 &&
          (t >= cfg.max_generated_steps || position + (kc - 1) + 1 >= capacity)) {
        ended = true;
        truncated = true;
        length = t;
        if (t == length + kc - 1) break;  // K == 1
      }
      const auto logits = session.head_logits();
      Step step = Step::frame(std::vector<Token>(kc, kEmptyToken));
      for (std::size_t k = 0; k < kc; ++k) {
        const int codes = mc.codebook_sizes[k];
        if (k == 0 && !ended) {
          std::vector<int> extra;
          if (t >= 1) {
            extra = {mc.head_special(0, mc.empty_special()), mc.head_special(0, mc.eos_special())};
          }
          const auto z = detail::restrict_logits(logits[0], codes, extra);
          const int id = sample_token(z, cfg, runs[0], rng);
          if (id >= codes) {
            ended = true;
            length = t;
          } else {
            step.codes[0] = id;
            runs[0].update(id);
          }
          continue;
        }
        const bool real = t >= k && (!ended || t - k < length);
        if (!real) continue;
        const auto z = detail::restrict_logits(logits[k], codes, {});
        const int id = sample_token(z, cfg, runs[k], rng);
        step.codes[k] = id;
        runs[k].update(id);
      }
      if (ended && t == length + kc - 1) break;  // K == 1 and codebook 1 just ended
      session.feed(step);
      ++position;
      run_steps.push_back(std::move(step));
    }
    session.feed(Step::eos());
    ++position;

    CodecMatrix frames(mc.codebook_sizes);
    std::vector<Token> f(kc);
    for (std::size_t j = 0; j < length; ++j) {
      for (std::size_t k = 0; k < kc; ++k) f[k] = run_steps[j + k].codes[k];
      frames.push_frame(f);
    }
    out.steps += run_steps.size();
    out.spans.push_back(std::move(frames));
    out.truncated.push_back(truncated);
  }
  return out;
}

struct EditConfig {
  std::vector<double> margin_schedule = {0.05, 0.06, 0.07, 0.08, 0.09,
                                         0.10, 0.11, 0.12, 0.13, 0.14};
  std::size_t num_candidates = 10;
  std::size_t num_discard_longest = 4;
  std::size_t tts_num_samples = 5;
  std::uint64_t selection_seed = 0;

  void validate() const {
    if (num_candidates < 1) throw ConfigError("edit.num_candidates must be >= 1");
    if (margin_schedule.size() != num_candidates) {
      throw ConfigError("edit.margin_schedule needs exactly edit.num_candidates entries");
    }
    for (double e : margin_schedule) {
      if (!(e >= 0.0)) throw ConfigError("edit.margin_schedule entries must be >= 0");
    }
    if (num_discard_longest >= num_candidates) {
      throw ConfigError("edit.num_discard_longest must be < edit.num_candidates");
    }
    if (tts_num_samples < 1) throw ConfigError("edit.tts_num_samples must be >= 1");
  }
};

inline void to_json(nlohmann::json& j, const EditConfig& c) {
  j = {{"margin_schedule", c.margin_schedule},
       {"num_candidates", c.num_candidates},
       {"num_discard_longest", c.num_discard_longest},
       {"tts_num_samples", c.tts_num_samples},
       {"selection_seed", c.selection_seed}};
}

inline void from_json(const nlohmann::json& j, EditConfig& c) {
  const EditConfig d = c;
  c.margin_schedule = j.value("margin_schedule", d.margin_schedule);
  c.num_candidates = j.value("num_candidates", d.num_candidates);
  c.num_discard_longest = j.value("num_discard_longest", d.num_discard_longest);
  c.tts_num_samples = j.value("tts_num_samples", d.tts_num_samples);
  c.selection_seed = j.value("selection_seed", d.selection_seed);
}

// Indices kept after dropping the `discard` longest; among equal lengths
// the later index goes first.
inline std::vector<std::size_t> surviving_candidates(std::span<const std::size_t> lengths,
                                                     std::size_t discard) {
  std::vector<std::size_t> order(lengths.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (lengths[a] != lengths[b]) return lengths[a] > lengths[b];
    return a > b;
  });
  std::vector<std::size_t> kept(order.begin() + static_cast<std::ptrdiff_t>(std::min(discard, order.size())),
                                order.end());
  std::sort(kept.begin(), kept.end());
  return kept;
}

// Index of the shortest length; ties go to the lowest index.
inline std::size_t shortest_candidate(std::span<const std::size_t> lengths) {
  if (lengths.empty()) throw InvalidInput("no candidates to choose from");
  return static_cast<std::size_t>(std::min_element(lengths.begin(), lengths.end()) - lengths.begin());
}

struct EditCandidate {
  double epsilon = 0.0;
  std::vector<Span> spans;
  std::vector<std::size_t> generated_lengths;
  std::size_t total_frames = 0;
  bool truncated = false;
};

struct EditReport {
  EditScript script;
  std::vector<EditCandidate> candidates;
  std::vector<std::size_t> discarded;
  int chosen = -1;  // -1 when the script is empty
};

inline void to_json(nlohmann::json& j, const EditReport& r) {
  nlohmann::json ops = nlohmann::json::array();
  for (const auto& op : r.script.ops) {
    ops.push_back({{"kind", edit_kind_name(op.kind)},
                   {"orig", {op.orig_begin, op.orig_end}},
                   {"new", {op.new_begin, op.new_end}}});
  }
  nlohmann::json cands = nlohmann::json::array();
  for (const auto& c : r.candidates) {
    nlohmann::json spans = nlohmann::json::array();
    for (const auto& s : c.spans) spans.push_back({s.start, s.end});
    cands.push_back({{"epsilon", c.epsilon},
                     {"spans", spans},
                     {"generated_lengths", c.generated_lengths},
                     {"total_frames", c.total_frames},
                     {"truncated", c.truncated}});
  }
  std::vector<std::size_t> lengths;
  for (const auto& c : r.candidates) lengths.push_back(c.total_frames);
  j = {{"ops", ops},
       {"candidate_lengths", lengths},
       {"candidates", cands},
       {"discarded", r.discarded},
       {"chosen", r.chosen}};
}

struct EditResult {
  CodecMatrix tokens;
  EditReport report;
};

// Runs the candidate sweep: one generation per margin, candidate i seeded
// with sampling.seed + i.
template <InfillModel M, class Word>
EditResult edit_speech(const M& model, const CodecMatrix& x, const Alignment& align,
                       std::span<const Word> original, std::span<const Word> target,
                       std::span<const int> target_ids, const EditConfig& ecfg,
                       const SamplingConfig& scfg) {
  ecfg.validate();
  scfg.validate();
  if (align.size() != original.size()) {
    throw AlignmentError("alignment has " + std::to_string(align.size()) + " spans for " +
                         std::to_string(original.size()) + " words");
  }
  EditResult res{x, {}};
  res.report.script = diff_transcripts(original, target);
  if (res.report.script.empty()) return res;

  std::vector<CodecMatrix> outputs;
  std::vector<std::size_t> lengths;
  for (std::size_t i = 0; i < ecfg.num_candidates; ++i) {
    EditCandidate cand;
    cand.epsilon = ecfg.margin_schedule[i];
    cand.spans = select_edit_spans(res.report.script, align, cand.epsilon, x.frame_rate(), x.frames());
    const RearrangedSequence y = causal_mask(x, cand.spans);
    const auto eou = std::find_if(y.items.begin(), y.items.end(),
                                  [](const Step& s) { return s.kind == StepKind::kEou; });
    const std::span<const Step> context(y.items.data(),
                                        static_cast<std::size_t>(eou - y.items.begin()) + 1);
    SamplingConfig sc = scfg;
    sc.seed = scfg.seed + i;
    GenerationResult gen =
        generate_infill(model, target_ids, context, static_cast<int>(cand.spans.size()), sc);
    for (std::size_t s = 0; s < gen.spans.size(); ++s) {
      cand.generated_lengths.push_back(gen.spans[s].frames());
      cand.truncated = cand.truncated || gen.truncated[s];
    }
    outputs.push_back(splice(x, cand.spans, gen.spans));
    cand.total_frames = outputs.back().frames();
    lengths.push_back(cand.total_frames);
    res.report.candidates.push_back(std::move(cand));
  }
  const auto kept = surviving_candidates(lengths, ecfg.num_discard_longest);
  for (std::size_t i = 0; i < lengths.size(); ++i) {
    if (!std::binary_search(kept.begin(), kept.end(), i)) res.report.discarded.push_back(i);
  }
  std::mt19937_64 pick_rng(ecfg.selection_seed);
  std::uniform_int_distribution<std::size_t> pick(0, kept.size() - 1);
  const std::size_t chosen = kept[pick(pick_rng)];
  res.report.chosen = static_cast<int>(chosen);
  res.tokens = std::move(outputs[chosen]);
  return res;
}

// True when every frame outside `spans` in x appears unchanged at its
// shifted position in `edited`, given the generated length of each span.
inline bool unedited_regions_match(const CodecMatrix& x, std::span<const Span> spans,
                                   std::span<const std::size_t> generated,
                                   const CodecMatrix& edited) {
  if (spans.size() != generated.size()) return false;
  std::size_t src = 0, dst = 0;
  auto same = [&](std::size_t from, std::size_t to, std::size_t at) {
    for (std::size_t t = from; t < to; ++t, ++at) {
      if (at >= edited.frames()) return false;
      for (std::size_t k = 0; k < x.codebooks(); ++k) {
        if (x.at(t, k) != edited.at(at, k)) return false;
      }
    }
    return true;
  };
  for (std::size_t i = 0; i < spans.size(); ++i) {
    if (!same(src, spans[i].start, dst)) return false;
    dst += spans[i].start - src + generated[i];
    src = spans[i].end;
  }
  if (!same(src, x.frames(), dst)) return false;
  return dst + (x.frames() - src) == edited.frames();
}

struct TtsReport {
  std::vector<std::size_t> candidate_lengths;  // generated frames per sample
  std::vector<bool> truncated;
  int chosen = -1;  // -1 for an empty target text
};

inline void to_json(nlohmann::json& j, const TtsReport& r) {
  j = {{"candidate_lengths", r.candidate_lengths},
       {"truncated", r.truncated},
       {"chosen", r.chosen}};
}

struct TtsResult {
  CodecMatrix tokens;
  TtsReport report;
};

// Continuation as an insertion at the end: W = prompt text + target text,
// context = prompt frames, Mask1, EOU. Sample i is seeded sampling.seed + i;
// the shortest continuation wins.
template <InfillModel M>
TtsResult zero_shot_tts(const M& model, const CodecMatrix& prompt, std::span<const int> prompt_text,
                        std::span<const int> target_text, const EditConfig& ecfg,
                        const SamplingConfig& scfg) {
  ecfg.validate();
  scfg.validate();
  TtsResult res{prompt, {}};
  if (target_text.empty()) return res;
  std::vector<int> text(prompt_text.begin(), prompt_text.end());
  text.insert(text.end(), target_text.begin(), target_text.end());
  std::vector<Step> context;
  for (std::size_t t = 0; t < prompt.frames(); ++t) context.push_back(Step::frame(prompt.frame(t)));
  context.push_back(Step::mask(1));
  context.push_back(Step::eou());
  std::vector<CodecMatrix> outputs;
  for (std::size_t i = 0; i < ecfg.tts_num_samples; ++i) {
    SamplingConfig sc = scfg;
    sc.seed = scfg.seed + i;
    GenerationResult gen = generate_infill(model, text, context, 1, sc);
    res.report.candidate_lengths.push_back(gen.spans.front().frames());
    res.report.truncated.push_back(gen.truncated.front());
    outputs.push_back(std::move(gen.spans.front()));
  }
  const std::size_t chosen = shortest_candidate(res.report.candidate_lengths);
  res.report.chosen = static_cast<int>(chosen);
  res.tokens.append(outputs[chosen]);
  return res;
}

}  // namespace vcraft
