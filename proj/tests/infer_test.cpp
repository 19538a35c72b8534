#include <algorithm>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "stub_model.hpp"
#include "vcraft/infer.hpp"
#include "vcraft/synthcodec.hpp"

using namespace vcraft;
using vcraft::stub::Frames;
using vcraft::stub::ScriptedModel;

namespace {

std::vector<std::string> words(const std::string& s) {
  std::vector<std::string> out;
  std::string w;
  for (char c : s) {
    if (c == ' ') {
      if (!w.empty()) out.push_back(w);
      w.clear();
    } else {
      w += c;
    }
  }
  if (!w.empty()) out.push_back(w);
  return out;
}

template <class Word>
std::vector<Word> apply_script(const std::vector<Word>& a, const std::vector<Word>& b, const EditScript& s) {
  std::vector<Word> out;
  std::size_t i = 0;
  for (const EditOp& op : s.ops) {
    while (i < op.orig_begin) out.push_back(a[i++]);
    for (std::size_t j = op.new_begin; j < op.new_end; ++j) out.push_back(b[j]);
    i = op.orig_end;
  }
  while (i < a.size()) out.push_back(a[i++]);
  return out;
}

// Edit distance by exhaustive recursion over (delete, insert, keep/replace).
std::size_t brute_distance(const std::vector<std::string>& a, std::size_t i,
                           const std::vector<std::string>& b, std::size_t j) {
  if (i == a.size()) return b.size() - j;
  if (j == b.size()) return a.size() - i;
  const std::size_t del = 1 + brute_distance(a, i + 1, b, j);
  const std::size_t ins = 1 + brute_distance(a, i, b, j + 1);
  const std::size_t rep = (a[i] == b[j] ? 0 : 1) + brute_distance(a, i + 1, b, j + 1);
  return std::min({del, ins, rep});
}

// Unit costs of a script: substitution of n->m words costs max(n, m).
std::size_t script_cost(const EditScript& s) {
  std::size_t c = 0;
  for (const EditOp& op : s.ops) c += std::max(op.orig_end - op.orig_begin, op.new_end - op.new_begin);
  return c;
}

Alignment uniform_alignment(std::size_t words, std::size_t width) {
  Alignment a;
  for (std::size_t i = 0; i < words; ++i) a.push_back({i * width, i * width + width});
  return a;
}

ModelConfig stub_config(std::size_t kc = 4, int size = 32) {
  ModelConfig c;
  c.codebook_sizes.assign(kc, size);
  c.loss_weights.assign(kc, 1.0);
  c.max_positions = 4096;
  return c;
}

// Random logits over codes only, so codebook 1 never ends on its own.
class NeverEndingModel {
 public:
  explicit NeverEndingModel(ModelConfig cfg) : cfg_(std::move(cfg)) {}
  struct Session {
    const ModelConfig* cfg;
    std::mt19937_64 rng{42};
    void feed(const Step&) {}
    std::vector<std::vector<double>> head_logits() {
      std::normal_distribution<double> n;
      std::vector<std::vector<double>> out;
      for (std::size_t k = 0; k < cfg->num_codebooks(); ++k) {
        std::vector<double> z(static_cast<std::size_t>(cfg->head_vocab(k)), -1e9);
        for (int i = 0; i < cfg->codebook_sizes[k]; ++i) z[static_cast<std::size_t>(i)] = n(rng);
        out.push_back(std::move(z));
      }
      return out;
    }
  };
  const ModelConfig& config() const { return cfg_; }
  Session start(std::span<const int>) const { return Session{&cfg_}; }

 private:
  ModelConfig cfg_;
};

}  // namespace

// ---- diff_transcripts ------------------------------------------------------

TEST(Diff, IdentityIsEmpty) {
  const auto a = words("a b c");
  EXPECT_TRUE(diff_transcripts(a, a).empty());
}

TEST(Diff, SingleSubstitution) {
  const auto s = diff_transcripts(words("a b c"), words("a x c"));
  ASSERT_EQ(s.ops.size(), 1u);
  EXPECT_EQ(s.ops[0], (EditOp{EditKind::kSubstitution, 1, 2, 1, 2}));
}

TEST(Diff, TwoWordInsertionMatchesBruteForce) {
  const auto a = words("a b"), b = words("a x y b");
  const auto s = diff_transcripts(a, b);
  ASSERT_EQ(s.ops.size(), 1u);
  EXPECT_EQ(s.ops[0], (EditOp{EditKind::kInsertion, 1, 1, 1, 3}));
  EXPECT_EQ(script_cost(s), brute_distance(a, 0, b, 0));
}

TEST(Diff, DeletionAtEnds) {
  auto s = diff_transcripts(words("a b c"), words("b c"));
  ASSERT_EQ(s.ops.size(), 1u);
  EXPECT_EQ(s.ops[0], (EditOp{EditKind::kDeletion, 0, 1, 0, 0}));
  s = diff_transcripts(words("a b c"), words("a b"));
  ASSERT_EQ(s.ops.size(), 1u);
  EXPECT_EQ(s.ops[0], (EditOp{EditKind::kDeletion, 2, 3, 2, 2}));
}

TEST(Diff, RandomPairsReproduceTargetAtMinimalCost) {
  std::mt19937_64 rng(8);
  const std::vector<std::string> vocab = {"a", "b", "c", "d"};
  std::uniform_int_distribution<int> len(0, 7), pick(0, 3);
  for (int trial = 0; trial < 400; ++trial) {
    std::vector<std::string> a, b;
    for (int i = len(rng); i > 0; --i) a.push_back(vocab[static_cast<std::size_t>(pick(rng))]);
    for (int i = len(rng); i > 0; --i) b.push_back(vocab[static_cast<std::size_t>(pick(rng))]);
    const auto s = diff_transcripts(a, b);
    EXPECT_EQ(apply_script(a, b, s), b);
    EXPECT_EQ(script_cost(s), brute_distance(a, 0, b, 0));
    for (std::size_t i = 1; i < s.ops.size(); ++i) {
      // Sorted and separated by at least one kept word.
      EXPECT_LT(s.ops[i - 1].orig_end, s.ops[i].orig_begin);
    }
  }
}

// ---- select_edit_spans ----------------------------------------------------

TEST(EditSpans, SubstitutionWithMargin) {
  const auto align = uniform_alignment(6, 10);
  EditScript s{{{EditKind::kSubstitution, 2, 3, 2, 3}}};
  EXPECT_EQ(margin_frames(0.04, 50), 2u);
  const auto spans = select_edit_spans(s, align, 0.04, 50, 60);
  ASSERT_EQ(spans.size(), 1u);
  EXPECT_EQ(spans[0], (Span{18, 32}));
}

TEST(EditSpans, ZeroMarginDeletionIsTheWord) {
  const auto align = uniform_alignment(6, 10);
  EditScript s{{{EditKind::kDeletion, 0, 1, 0, 0}}};
  const auto spans = select_edit_spans(s, align, 0.0, 50, 60);
  ASSERT_EQ(spans.size(), 1u);
  EXPECT_EQ(spans[0], (Span{0, 10}));
}

TEST(EditSpans, InsertionCentredOnBoundary) {
  const auto align = uniform_alignment(6, 10);
  EditScript s{{{EditKind::kInsertion, 2, 2, 2, 3}}};
  const auto spans = select_edit_spans(s, align, 0.04, 50, 60);
  ASSERT_EQ(spans.size(), 1u);
  EXPECT_EQ(spans[0], (Span{18, 22}));
}

TEST(EditSpans, InsertionMidpointOfGap) {
  Alignment align = {{0, 10}, {14, 24}};
  EditScript s{{{EditKind::kInsertion, 1, 1, 1, 2}}};
  const auto spans = select_edit_spans(s, align, 0.06, 50, 30);
  ASSERT_EQ(spans.size(), 1u);
  EXPECT_EQ(spans[0], (Span{9, 15}));
}

TEST(EditSpans, ZeroMarginInsertionStillCoversAFrame) {
  const auto align = uniform_alignment(3, 10);
  EditScript s{{{EditKind::kInsertion, 1, 1, 1, 2}}};
  const auto spans = select_edit_spans(s, align, 0.0, 50, 30);
  ASSERT_EQ(spans.size(), 1u);
  EXPECT_EQ(spans[0], (Span{9, 11}));
}

TEST(EditSpans, ClippedAndMerged) {
  const auto align = uniform_alignment(6, 10);
  EditScript s{{{EditKind::kSubstitution, 0, 1, 0, 1},
                {EditKind::kSubstitution, 2, 3, 2, 3},
                {EditKind::kDeletion, 5, 6, 4, 4}}};
  const auto spans = select_edit_spans(s, align, 0.1, 50, 60);
  // Margin 5: [0,15) and [15,35) touch and merge; [45,60) is clipped.
  ASSERT_EQ(spans.size(), 2u);
  EXPECT_EQ(spans[0], (Span{0, 35}));
  EXPECT_EQ(spans[1], (Span{45, 60}));
}

TEST(EditSpans, MissingAlignmentThrows) {
  const auto align = uniform_alignment(2, 10);
  EditScript s{{{EditKind::kSubstitution, 2, 3, 2, 3}}};
  EXPECT_THROW(select_edit_spans(s, align, 0.05, 50, 20), AlignmentError);
}

// ---- generate_infill -------------------------------------------------------

TEST(Generate, NoMasksGivesNothing) {
  ScriptedModel m(stub_config(), [](std::size_t, int) { return Frames{}; });
  const std::vector<int> text = {1, 2};
  const auto r = generate_infill(m, text, std::vector<Step>{Step::eou()}, 0, SamplingConfig{});
  EXPECT_TRUE(r.spans.empty());
  EXPECT_EQ(m.calls(), 0u);
}

TEST(Generate, EchoesScriptedSpansAndFeedsDelayPattern) {
  for (std::size_t kc = 1; kc <= 4; ++kc) {
    const ModelConfig cfg = stub_config(kc);
    const Frames a = stub::counting_frames(5, kc, 32);
    Frames b = stub::counting_frames(3, kc, 32);
    for (auto& f : b) f[0] = (f[0] + 11) % 32;
    ScriptedModel m(cfg, [&](std::size_t, int mask) { return mask == 1 ? a : b; });
    const std::vector<int> text = {3, 1, 4};
    std::vector<Step> context = {Step::frame(std::vector<Token>(kc, 1)), Step::mask(1),
                                 Step::frame(std::vector<Token>(kc, 2)), Step::mask(2), Step::eou()};
    const auto r = generate_infill(m, text, context, 2, SamplingConfig{});
    ASSERT_EQ(r.spans.size(), 2u);
    for (int s = 0; s < 2; ++s) {
      const Frames& want = s == 0 ? a : b;
      ASSERT_EQ(r.spans[static_cast<std::size_t>(s)].frames(), want.size()) << "K=" << kc;
      for (std::size_t t = 0; t < want.size(); ++t) {
        for (std::size_t k = 0; k < kc; ++k) EXPECT_EQ(r.spans[static_cast<std::size_t>(s)].at(t, k), want[t][k]);
      }
      EXPECT_FALSE(r.truncated[static_cast<std::size_t>(s)]);
    }
    EXPECT_EQ(r.steps, a.size() + b.size() + 2 * (kc - 1));

    // After the context, the fed sequence is <M1> stacked(a) EOS <M2> stacked(b) EOS.
    const auto& log = m.logs().at(0);
    EXPECT_EQ(log.text, text);
    const auto ctx = stack_steps(context, kc);
    std::vector<Step> expect(ctx.begin(), ctx.end());
    for (int s = 0; s < 2; ++s) {
      const Frames& f = s == 0 ? a : b;
      expect.push_back(Step::mask(s + 1));
      for (std::size_t t = 0; t < f.size() + kc - 1; ++t) {
        std::vector<Token> codes(kc, kEmptyToken);
        for (std::size_t k = 0; k < kc; ++k) {
          if (t >= k && t - k < f.size()) codes[k] = f[t - k][k];
        }
        expect.push_back(Step::frame(codes));
      }
      expect.push_back(Step::eos());
    }
    EXPECT_EQ(log.steps, expect) << "K=" << kc;
  }
}

TEST(Generate, TruncationIsFlaggedAndStillUnstacks) {
  const ModelConfig cfg = stub_config(4);
  NeverEndingModel m(cfg);
  SamplingConfig sc;
  sc.max_generated_steps = 17;
  sc.repetition_gamma = 0.0;
  const auto r = generate_infill(m, std::vector<int>{1}, std::vector<Step>{Step::mask(1), Step::eou()}, 1, sc);
  ASSERT_EQ(r.spans.size(), 1u);
  EXPECT_TRUE(r.truncated[0]);
  EXPECT_EQ(r.spans[0].frames(), 17u);
  EXPECT_EQ(r.steps, 17u + 3u);
  for (Token t : r.spans[0].data()) {
    EXPECT_GE(t, 0);
    EXPECT_LT(t, 32);
  }
}

TEST(Generate, CapacityTruncates) {
  ModelConfig cfg = stub_config(2);
  cfg.max_positions = 30;
  NeverEndingModel m(cfg);
  const std::vector<int> text = {1, 2, 3};
  const auto r = generate_infill(m, text, std::vector<Step>{Step::mask(1), Step::eou()}, 1, SamplingConfig{});
  EXPECT_TRUE(r.truncated[0]);
  // text + <M1> EOU + <M1> + run + EOS must fit.
  EXPECT_LE(text.size() + 3 + r.steps + 1, 30u);
}

TEST(Generate, TooManyMasksIsCapacityError) {
  ScriptedModel m(stub_config(), [](std::size_t, int) { return Frames{}; });
  EXPECT_THROW(generate_infill(m, std::vector<int>{}, std::vector<Step>{Step::eou()}, 4, SamplingConfig{}),
               CapacityError);
}

// ---- selection rules ------------------------------------------------------

TEST(Selection, DiscardsFourLongest) {
  std::vector<std::size_t> lengths = {104, 100, 109, 102, 107, 101, 108, 103, 106, 105};
  const auto kept = surviving_candidates(lengths, 4);
  std::vector<std::size_t> kept_lengths;
  for (auto i : kept) kept_lengths.push_back(lengths[i]);
  std::sort(kept_lengths.begin(), kept_lengths.end());
  EXPECT_EQ(kept_lengths, (std::vector<std::size_t>{100, 101, 102, 103, 104, 105}));
}

TEST(Selection, LongestTiesDropHigherIndexFirst) {
  std::vector<std::size_t> lengths = {5, 9, 9, 9, 1};
  EXPECT_EQ(surviving_candidates(lengths, 2), (std::vector<std::size_t>{0, 1, 4}));
}

TEST(Selection, ShortestFirstOccurrence) {
  std::vector<std::size_t> lengths = {12, 9, 15, 9, 20};
  EXPECT_EQ(shortest_candidate(lengths), 1u);
}

// ---- edit_speech -----------------------------------------------------------

TEST(EditSpeech, IdentityEditReturnsInputExactly) {
  ToyCodec codec{ToyCodecConfig{}};
  const Transcript w = {1, 2, 3, 4};
  const auto enc = codec.encode(w);
  ScriptedModel m(stub_config(4, 256), [](std::size_t, int) { return Frames{}; });
  const auto r = edit_speech(m, enc.tokens, enc.alignment, std::span<const int>(w), std::span<const int>(w),
                             std::span<const int>(w), EditConfig{}, SamplingConfig{});
  EXPECT_EQ(r.tokens.data(), enc.tokens.data());
  EXPECT_TRUE(r.report.script.empty());
  EXPECT_EQ(m.calls(), 0u);
}

TEST(EditSpeech, SweepsTenMarginsDiscardsFourLongest) {
  ToyCodec codec{ToyCodecConfig{}};
  Transcript w;
  for (int i = 0; i < 30; ++i) w.push_back(i % 26);
  const auto enc = codec.encode(w);
  Transcript w2 = w;
  w2[15] = 0;
  // Generated lengths drawn from a seeded shuffle, one per candidate.
  std::vector<std::size_t> gen(10);
  for (std::size_t i = 0; i < gen.size(); ++i) gen[i] = 20 + 3 * i;
  std::shuffle(gen.begin(), gen.end(), std::mt19937_64(2024));
  ScriptedModel m(stub_config(4, 256), [&](std::size_t call, int) {
    return stub::counting_frames(gen.at(call), 4, 256);
  });
  EditConfig ec;
  ec.selection_seed = 77;
  const auto r = edit_speech(m, enc.tokens, enc.alignment, std::span<const int>(w), std::span<const int>(w2),
                             std::span<const int>(w2), ec, SamplingConfig{});
  ASSERT_EQ(r.report.candidates.size(), 10u);
  EXPECT_EQ(m.calls(), 10u);
  std::vector<std::size_t> totals;
  for (std::size_t i = 0; i < 10; ++i) {
    const auto& c = r.report.candidates[i];
    EXPECT_NEAR(c.epsilon, 0.05 + 0.01 * static_cast<double>(i), 1e-12);
    const std::size_t margin = static_cast<std::size_t>(std::floor(c.epsilon * 50 + 1e-9));
    ASSERT_EQ(c.spans.size(), 1u);
    EXPECT_EQ(c.spans[0], (Span{60 - margin, 64 + margin}));
    EXPECT_EQ(c.total_frames, enc.tokens.frames() - c.spans[0].length() + gen[i]);
    totals.push_back(c.total_frames);
  }
  // The four longest totals are the discarded ones.
  std::vector<std::size_t> order(10);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) {
    return totals[a] != totals[b] ? totals[a] > totals[b] : a > b;
  });
  std::vector<std::size_t> expect_discard(order.begin(), order.begin() + 4);
  std::sort(expect_discard.begin(), expect_discard.end());
  EXPECT_EQ(r.report.discarded, expect_discard);

  std::vector<std::size_t> survivors(order.begin() + 4, order.end());
  std::sort(survivors.begin(), survivors.end());
  std::mt19937_64 pick_rng(77);
  const std::size_t expect_chosen = survivors[std::uniform_int_distribution<std::size_t>(0, 5)(pick_rng)];
  EXPECT_EQ(static_cast<std::size_t>(r.report.chosen), expect_chosen);
  const auto& chosen = r.report.candidates[expect_chosen];
  EXPECT_EQ(r.tokens.frames(), chosen.total_frames);
  EXPECT_TRUE(unedited_regions_match(enc.tokens, chosen.spans, chosen.generated_lengths, r.tokens));

  const nlohmann::json j = r.report;
  EXPECT_EQ(j["candidate_lengths"].size(), 10u);
  EXPECT_EQ(j["chosen"].get<int>(), r.report.chosen);
}

TEST(EditSpeech, OracleModelSubstitutionDecodesToTarget) {
  ToyCodec codec{ToyCodecConfig{}};
  const Transcript w = {3, 7, 1, 9, 4, 4, 12, 0};
  Transcript w2 = w;
  w2[3] = 20;
  w2[6] = 5;
  const auto enc = codec.encode(w);
  const auto enc2 = codec.encode(w2);
  // The oracle knows the target utterance and regenerates exactly the
  // frames under each candidate's spans.
  EditConfig ec;
  std::vector<std::vector<Span>> spans_per_call;
  const auto script = diff_transcripts(std::span<const int>(w), std::span<const int>(w2));
  for (double eps : ec.margin_schedule) {
    spans_per_call.push_back(select_edit_spans(script, enc.alignment, eps, 50, enc.tokens.frames()));
  }
  ScriptedModel m(stub_config(4, 256), [&](std::size_t call, int mask) {
    const Span s = spans_per_call.at(call).at(static_cast<std::size_t>(mask - 1));
    return stub::frames_of(enc2.tokens, s.start, s.end);
  });
  const auto r = edit_speech(m, enc.tokens, enc.alignment, std::span<const int>(w), std::span<const int>(w2),
                             std::span<const int>(w2), ec, SamplingConfig{});
  EXPECT_EQ(codec.decode(r.tokens).symbols, w2);
  EXPECT_EQ(r.tokens.data(), enc2.tokens.data());
}

TEST(EditSpeech, AlignmentSizeMismatchThrows) {
  ToyCodec codec{ToyCodecConfig{}};
  const Transcript w = {1, 2, 3};
  const auto enc = codec.encode(w);
  Alignment bad(enc.alignment.begin(), enc.alignment.begin() + 2);
  ScriptedModel m(stub_config(4, 256), [](std::size_t, int) { return Frames{}; });
  const Transcript w2 = {1, 5, 3};
  EXPECT_THROW(edit_speech(m, enc.tokens, bad, std::span<const int>(w), std::span<const int>(w2),
                           std::span<const int>(w2), EditConfig{}, SamplingConfig{}),
               AlignmentError);
}

TEST(UneditedRegions, DetectsChangedFrame) {
  ToyCodec codec{ToyCodecConfig{}};
  const auto x = codec.encode(Transcript{1, 2, 3, 4, 5}).tokens;
  const std::vector<Span> spans = {{4, 8}};
  const std::vector<std::size_t> gen = {6};
  std::vector<CodecMatrix> g = {CodecMatrix(x.codebook_sizes())};
  for (std::size_t t = 0; t < 6; ++t) g[0].push_frame(x.frame(0));
  CodecMatrix edited = splice(x, spans, g);
  EXPECT_TRUE(unedited_regions_match(x, spans, gen, edited));
  edited.set(edited.frames() - 1, 3, (edited.at(edited.frames() - 1, 3) + 1) % 256);
  EXPECT_FALSE(unedited_regions_match(x, spans, gen, edited));
}

// ---- zero_shot_tts --------------------------------------------------------

TEST(Tts, ShortestOfFiveFirstOccurrence) {
  const std::vector<std::size_t> lengths = {12, 9, 15, 9, 20};
  ScriptedModel m(stub_config(4, 256), [&](std::size_t call, int) {
    Frames f = stub::counting_frames(lengths.at(call), 4, 256);
    for (auto& fr : f) fr[3] = static_cast<Token>(call);  // tag the sample
    return f;
  });
  ToyCodec codec{ToyCodecConfig{}};
  const auto prompt = codec.encode(Transcript{1, 2, 3});
  const std::vector<int> pt = {1, 2, 3}, tt = {4, 5};
  const auto r = zero_shot_tts(m, prompt.tokens, pt, tt, EditConfig{}, SamplingConfig{});
  EXPECT_EQ(m.calls(), 5u);
  EXPECT_EQ(r.report.candidate_lengths, lengths);
  EXPECT_EQ(r.report.chosen, 1);
  ASSERT_EQ(r.tokens.frames(), prompt.tokens.frames() + 9);
  for (std::size_t t = 0; t < prompt.tokens.frames(); ++t) {
    for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(r.tokens.at(t, k), prompt.tokens.at(t, k));
  }
  EXPECT_EQ(r.tokens.at(prompt.tokens.frames(), 3), 1);
  // W is prompt text then target text; context is prompt, <M1>, EOU.
  EXPECT_EQ(m.logs()[0].text, (std::vector<int>{1, 2, 3, 4, 5}));
}

TEST(Tts, EmptyTargetReturnsPrompt) {
  ScriptedModel m(stub_config(4, 256), [](std::size_t, int) { return Frames{}; });
  ToyCodec codec{ToyCodecConfig{}};
  const auto prompt = codec.encode(Transcript{1, 2, 3});
  const auto r = zero_shot_tts(m, prompt.tokens, std::vector<int>{1, 2, 3}, std::vector<int>{}, EditConfig{},
                               SamplingConfig{});
  EXPECT_EQ(r.tokens.data(), prompt.tokens.data());
  EXPECT_EQ(m.calls(), 0u);
}

TEST(Tts, OracleContinuationDecodesSecondHalf) {
  ToyCodec codec{ToyCodecConfig{}};
  const Transcript full = {5, 1, 18, 2, 9, 9, 14, 3};
  const auto enc = codec.encode(full);
  const std::size_t half = 4 * 4;
  ScriptedModel m(stub_config(4, 256),
                  [&](std::size_t, int) { return stub::frames_of(enc.tokens, half, enc.tokens.frames()); });
  const std::vector<int> pt(full.begin(), full.begin() + 4), tt(full.begin() + 4, full.end());
  const auto r = zero_shot_tts(m, enc.tokens.slice(0, half), pt, tt, EditConfig{}, SamplingConfig{});
  const auto decoded = codec.decode(r.tokens.slice(half, r.tokens.frames())).symbols;
  EXPECT_EQ(decoded, Transcript(full.begin() + 4, full.end()));
}

TEST(EditConfigJson, RoundTripAndValidation) {
  EditConfig c;
  ASSERT_EQ(c.margin_schedule.size(), 10u);
  EXPECT_NEAR(c.margin_schedule.front(), 0.05, 1e-12);
  EXPECT_NEAR(c.margin_schedule.back(), 0.14, 1e-12);
  c.selection_seed = 5;
  const auto back = nlohmann::json(c).get<EditConfig>();
  EXPECT_EQ(back.selection_seed, 5u);
  EXPECT_EQ(back.margin_schedule, c.margin_schedule);
  c.num_discard_longest = 10;
  EXPECT_THROW(c.validate(), ConfigError);
}
