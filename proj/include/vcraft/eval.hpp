#pragma once

// Stratified evaluation over edit manifests, and held-out masked
// reconstruction on the toy corpus.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "vcraft/codec_matrix.hpp"
#include "vcraft/errors.hpp"
#include "vcraft/infer.hpp"
#include "vcraft/metrics/features.hpp"
#include "vcraft/metrics/scores.hpp"
#include "vcraft/rearrange.hpp"
#include "vcraft/run_config.hpp"
#include "vcraft/synthcodec.hpp"

namespace vcraft {

// ---- manifest ---------------------------------------------------------------

// Word-count buckets of the edit taxonomy; "0" holds identity records.
inline std::string length_bucket(std::size_t words) {
  if (words == 0) return "0";
  if (words <= 2) return "1-2";
  if (words <= 6) return "3-6";
  if (words <= 12) return "7-12";
  return "13+";
}

// Words an op touches: the longer of its two sides.
inline std::size_t edited_words(const EditScript& s) {
  std::size_t n = 0;
  for (const EditOp& op : s.ops) n += std::max(op.orig_end - op.orig_begin, op.new_end - op.new_begin);
  return n;
}

struct EvalRecord {
  std::string id;
  Transcript original;
  Transcript edited;
  std::vector<std::string> edit_types;  // one per span, in order
  std::string bucket;
  std::string tokens;     // token dump path
  std::string token_id;   // record id inside the dump; defaults to id
};

inline std::string stratum_key(const EvalRecord& r) {
  std::string types;
  for (const auto& t : r.edit_types) types += (types.empty() ? "" : "+") + t;
  return (types.empty() ? std::string("none") : types) + "|" + r.bucket;
}

// Checks the declared types and bucket against the actual diff.
inline void validate_eval_record(const EvalRecord& r) {
  const EditScript s = diff_transcripts(std::span<const Symbol>(r.original), std::span<const Symbol>(r.edited));
  if (s.ops.size() > 2) {
    throw InvalidInput(r.id + ": edit has " + std::to_string(s.ops.size()) + " spans, at most 2 supported");
  }
  std::vector<std::string> actual;
  for (const EditOp& op : s.ops) actual.emplace_back(edit_kind_name(op.kind));
  if (actual != r.edit_types) {
    std::string got;
    for (const auto& t : actual) got += (got.empty() ? "" : ",") + t;
    throw InvalidInput(r.id + ": declared edit types disagree with the diff (" +
                       (got.empty() ? std::string("none") : got) + ")");
  }
  const std::string bucket = length_bucket(edited_words(s));
  if (bucket != r.bucket) {
    throw InvalidInput(r.id + ": declared bucket " + r.bucket + " but the diff edits " +
                       std::to_string(edited_words(s)) + " words (" + bucket + ")");
  }
}

inline EvalRecord eval_record_from_json(const nlohmann::json& j, int alphabet_size) {
  try {
    EvalRecord r;
    r.id = j.at("id").get<std::string>();
    r.original = parse_transcript(j.at("original").get<std::string>(), alphabet_size);
    r.edited = parse_transcript(j.at("edited").get<std::string>(), alphabet_size);
    r.edit_types = j.value("edit_types", std::vector<std::string>{});
    r.bucket = j.at("bucket").get<std::string>();
    r.tokens = j.at("tokens").get<std::string>();
    r.token_id = j.value("token_id", r.id);
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(std::string("malformed manifest record: ") + e.what());
  }
}

inline nlohmann::json to_json(const EvalRecord& r) {
  nlohmann::json j = {{"id", r.id},
                      {"original", transcript_text(r.original)},
                      {"edited", transcript_text(r.edited)},
                      {"edit_types", r.edit_types},
                      {"bucket", r.bucket},
                      {"tokens", r.tokens}};
  if (r.token_id != r.id) j["token_id"] = r.token_id;
  return j;
}

// Sorted by id; duplicate ids are rejected.
inline std::vector<EvalRecord> read_eval_manifest(const std::filesystem::path& path, int alphabet_size) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  std::vector<EvalRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(eval_record_from_json(nlohmann::json::parse(line), alphabet_size));
      validate_eval_record(out.back());
    } catch (const nlohmann::json::exception& e) {
      throw InvalidInput(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const Error& e) {
      throw InvalidInput(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  for (std::size_t i = 1; i < out.size(); ++i) {
    if (out[i].id == out[i - 1].id) throw InvalidInput(path.string() + ": duplicate id " + out[i].id);
  }
  return out;
}

// ---- per-record metrics ----------------------------------------------------

// Reference result of an edit: unedited words keep their frames in x,
// replacement words take their codec encoding.
inline CodecMatrix reference_edit(const CodecMatrix& x, const Alignment& align, const Transcript& original,
                                  const Transcript& edited, const ToyCodec& codec) {
  const EditScript s = diff_transcripts(std::span<const Symbol>(original), std::span<const Symbol>(edited));
  CodecMatrix out(x.codebook_sizes(), x.frame_rate());
  auto copy_words = [&](std::size_t from, std::size_t to) {
    for (std::size_t w = from; w < to; ++w) {
      for (std::size_t t = align[w].start; t < align[w].end; ++t) out.push_frame(x.frame(t));
    }
  };
  std::size_t w = 0;
  for (const EditOp& op : s.ops) {
    copy_words(w, op.orig_begin);
    const Transcript added(edited.begin() + static_cast<std::ptrdiff_t>(op.new_begin),
                           edited.begin() + static_cast<std::ptrdiff_t>(op.new_end));
    out.append(codec.encode(added).tokens);
    w = op.orig_end;
  }
  copy_words(w, original.size());
  return out;
}

struct RecordMetrics {
  double ser = 0.0;
  std::size_t symbol_errors = 0;
  std::size_t reference_symbols = 0;
  double mcd = 0.0;
  double f0_distance = 0.0;
  double energy_distance = 0.0;
};

inline void to_json(nlohmann::json& j, const RecordMetrics& m) {
  j = {{"ser", m.ser}, {"symbol_errors", m.symbol_errors}, {"reference_symbols", m.reference_symbols},
       {"mcd", m.mcd}, {"f0_distance", m.f0_distance},   {"energy_distance", m.energy_distance}};
}

// Too-short waveforms are zero-padded to one analysis window.
inline std::vector<float> padded_to_window(std::vector<float> wav, const SpectrogramConfig& cfg) {
  if (wav.size() < cfg.window_length) wav.resize(cfg.window_length, 0.0f);
  return wav;
}

inline RecordMetrics score_output(const CodecMatrix& reference, const CodecMatrix& output,
                                  const Transcript& target, const ToyCodec& codec, const MetricsConfig& mc) {
  RecordMetrics m;
  const Transcript hyp = codec.decode(output).symbols;
  m.symbol_errors = levenshtein(std::span<const Symbol>(target), std::span<const Symbol>(hyp));
  m.reference_symbols = target.size();
  m.ser = symbol_error_rate(target, hyp);
  const auto ref_wav = padded_to_window(codec.render(reference), mc.spectrogram);
  const auto out_wav = padded_to_window(codec.render(output), mc.spectrogram);
  m.mcd = mcd(mfcc(ref_wav, mc.spectrogram), mfcc(out_wav, mc.spectrogram));
  const auto f0_ref = f0_track(ref_wav, mc.f0), f0_out = f0_track(out_wav, mc.f0);
  m.f0_distance = aligned_distance(std::span<const double>(f0_ref), std::span<const double>(f0_out));
  const auto e_ref = energy_track(ref_wav, mc.spectrogram), e_out = energy_track(out_wav, mc.spectrogram);
  m.energy_distance = aligned_distance(std::span<const double>(e_ref), std::span<const double>(e_out));
  return m;
}

// ---- stratified report -----------------------------------------------------

struct StratumSummary {
  std::string edit_types;
  std::string bucket;
  std::size_t count = 0;
  std::size_t symbol_errors = 0;
  std::size_t reference_symbols = 0;
  double mean_ser = 0.0;
  double mean_mcd = 0.0;
  double mean_f0_distance = 0.0;
  double mean_energy_distance = 0.0;
};

inline void to_json(nlohmann::json& j, const StratumSummary& s) {
  j = {{"edit_types", s.edit_types},
       {"bucket", s.bucket},
       {"count", s.count},
       {"symbol_errors", s.symbol_errors},
       {"reference_symbols", s.reference_symbols},
       {"ser", s.mean_ser},
       {"mcd", s.mean_mcd},
       {"f0_distance", s.mean_f0_distance},
       {"energy_distance", s.mean_energy_distance}};
}

struct EvalOutcome {
  std::string id;
  std::string stratum;
  RecordMetrics metrics;
  nlohmann::json edit;  // edit report of the pipeline, if any
};

struct EvalReport {
  nlohmann::json header;
  std::vector<EvalOutcome> records;
  std::vector<std::string> skipped;  // ids whose tokens could not be loaded
  std::vector<StratumSummary> strata;
};

// Original tokens for a record, or nullopt to skip it.
using TokenLookup = std::function<std::optional<CodecMatrix>(const EvalRecord&)>;
// Runs the edit; returns output tokens and an optional report.
using Editor = std::function<std::pair<CodecMatrix, nlohmann::json>(const EvalRecord&, const CodecMatrix&,
                                                                    const Alignment&)>;

inline nlohmann::json report_header(const nlohmann::json& config, std::uint64_t seed, const MetricsConfig& mc) {
  return {{"type", "header"},
          {"config_hash", config_hash(config)},
          {"seed", seed},
          {"metrics",
           {{"spectrogram", mc.spectrogram},
            {"f0", mc.f0},
            {"dtw_steps", {{1, 0}, {0, 1}, {1, 1}}},
            {"dtw_local_distance", "euclidean"},
            {"mcd_aggregate", "mean over DTW path"},
            {"ser", "levenshtein / max(1, |ref|)"}}}};
}

inline std::vector<StratumSummary> summarize_strata(const std::vector<EvalOutcome>& records) {
  std::map<std::string, StratumSummary> by_key;
  for (const auto& r : records) {
    auto& s = by_key[r.stratum];
    const auto bar = r.stratum.find('|');
    s.edit_types = r.stratum.substr(0, bar);
    s.bucket = r.stratum.substr(bar + 1);
    ++s.count;
    s.symbol_errors += r.metrics.symbol_errors;
    s.reference_symbols += r.metrics.reference_symbols;
    s.mean_ser += r.metrics.ser;
    s.mean_mcd += r.metrics.mcd;
    s.mean_f0_distance += r.metrics.f0_distance;
    s.mean_energy_distance += r.metrics.energy_distance;
  }
  std::vector<StratumSummary> out;
  for (auto& [key, s] : by_key) {
    const auto n = static_cast<double>(s.count);
    s.mean_ser /= n;
    s.mean_mcd /= n;
    s.mean_f0_distance /= n;
    s.mean_energy_distance /= n;
    out.push_back(s);
  }
  return out;
}

// Records are processed in id order, so the report order is stable.
inline EvalReport evaluate_manifest(const std::vector<EvalRecord>& manifest, const ToyCodec& codec,
                                    const MetricsConfig& mc, const TokenLookup& lookup, const Editor& editor,
                                    nlohmann::json header) {
  EvalReport report;
  report.header = std::move(header);
  const auto f = static_cast<std::size_t>(codec.config().frames_per_symbol);
  for (const EvalRecord& r : manifest) {
    std::optional<CodecMatrix> x = lookup(r);
    if (!x || x->frames() != r.original.size() * f) {
      report.skipped.push_back(r.id);
      continue;
    }
    Alignment align;
    for (std::size_t i = 0; i < r.original.size(); ++i) align.push_back({i * f, (i + 1) * f});
    auto [output, edit_report] = editor(r, *x, align);
    const CodecMatrix reference = reference_edit(*x, align, r.original, r.edited, codec);
    report.records.push_back(
        {r.id, stratum_key(r), score_output(reference, output, r.edited, codec, mc), std::move(edit_report)});
  }
  report.strata = summarize_strata(report.records);
  return report;
}

inline void write_eval_report(std::ostream& os, const EvalReport& report) {
  os << report.header.dump() << '\n';
  for (const auto& r : report.records) {
    nlohmann::json j = {{"type", "record"}, {"id", r.id}, {"stratum", r.stratum}};
    j.update(nlohmann::json(r.metrics));
    if (!r.edit.is_null()) j["edit"] = r.edit;
    os << j.dump() << '\n';
  }
  for (const auto& s : report.strata) {
    nlohmann::json j = s;
    j["type"] = "stratum";
    os << j.dump() << '\n';
  }
  os << nlohmann::json{{"type", "summary"},
                       {"records", report.records.size()},
                       {"skipped", report.skipped.size()},
                       {"skipped_ids", report.skipped}}
            .dump()
     << '\n';
}

// ---- held-out masked reconstruction ---------------------------------------

struct ReconstructionCase {
  std::size_t utterance = 0;  // index into the held-out set
  std::size_t first_symbol = 0;
  std::size_t num_symbols = 0;
};

// Symbol-aligned spans of 1..max_symbols symbols, one per case, cycling
// through the utterances.
inline std::vector<ReconstructionCase> make_reconstruction_cases(const std::vector<ToyUtterance>& utts,
                                                                 std::size_t count, std::size_t max_symbols,
                                                                 std::uint64_t seed) {
  if (utts.empty()) throw InvalidInput("no held-out utterances");
  std::mt19937_64 rng(seed);
  std::vector<ReconstructionCase> out;
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t u = i % utts.size();
    const std::size_t len = utts[u].transcript.size();
    if (len == 0) throw InvalidInput(utts[u].id + " has an empty transcript");
    const std::size_t n = std::uniform_int_distribution<std::size_t>(1, std::min(max_symbols, len))(rng);
    const std::size_t first = std::uniform_int_distribution<std::size_t>(0, len - n)(rng);
    out.push_back({u, first, n});
  }
  return out;
}

struct ReconstructionResult {
  Transcript reference;   // symbols touched by the masked frames
  Transcript hypothesis;  // decoded symbols of the regenerated region
  std::size_t errors = 0;
  std::size_t masked_symbols = 0;
  Span span;  // masked frames, margins included
  bool unedited_identical = false;
  bool truncated = false;
  CodecMatrix tokens;
};

// Masks the case's symbols widened by `margin` frames on each side, the
// same way edit spans absorb boundaries, regenerates them given the full
// transcript and splices the result back. Errors are counted over every
// symbol the masked frames touch.
template <InfillModel M>
ReconstructionResult reconstruct(const M& model, const ToyCodec& codec, const ToyUtterance& u,
                                 const ReconstructionCase& c, const SamplingConfig& scfg,
                                 std::size_t margin = 0) {
  const auto f = static_cast<std::size_t>(codec.config().frames_per_symbol);
  const std::size_t total = u.tokens.frames();
  const std::size_t begin = c.first_symbol * f, end = (c.first_symbol + c.num_symbols) * f;
  if (c.num_symbols == 0 || end > total) throw InvalidInput(u.id + ": reconstruction case outside utterance");
  ReconstructionResult r;
  r.span = {begin > margin ? begin - margin : 0, std::min(total, end + margin)};
  const std::vector<Span> spans = {r.span};
  const RearrangedSequence y = causal_mask(u.tokens, spans);
  const auto eou = std::find_if(y.items.begin(), y.items.end(),
                                [](const Step& s) { return s.kind == StepKind::kEou; });
  const std::span<const Step> context(y.items.data(), static_cast<std::size_t>(eou - y.items.begin()) + 1);
  const std::vector<int> text(u.transcript.begin(), u.transcript.end());
  GenerationResult gen = generate_infill(model, text, context, 1, scfg);
  r.truncated = gen.truncated[0];
  r.tokens = splice(u.tokens, spans, gen.spans);
  const std::vector<std::size_t> lengths = {gen.spans[0].frames()};
  r.unedited_identical = unedited_regions_match(u.tokens, spans, lengths, r.tokens);

  // Symbol blocks overlapping the mask; in the output the region grows or
  // shrinks by the length difference of the generated span.
  const std::size_t first = r.span.start / f, last = (r.span.end + f - 1) / f;
  r.reference.assign(u.transcript.begin() + static_cast<std::ptrdiff_t>(first),
                     u.transcript.begin() + static_cast<std::ptrdiff_t>(last));
  const std::size_t region_end = last * f + gen.spans[0].frames() - r.span.length();
  r.hypothesis = codec.decode(r.tokens.slice(first * f, std::max(first * f, region_end))).symbols;
  r.errors = levenshtein(std::span<const Symbol>(r.reference), std::span<const Symbol>(r.hypothesis));
  r.masked_symbols = c.num_symbols;
  return r;
}

}  // namespace vcraft
