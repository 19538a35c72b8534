// vcraft: data generation, training, editing, continuation, layout
// debugging and stratified evaluation on the toy codec.
//
// Exit codes: 0 ok, 1 usage or other failure, 2 config, 3 I/O, 4 numerical.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "vcraft/eval.hpp"
#include "vcraft/infer.hpp"
#include "vcraft/io/token_dump.hpp"
#include "vcraft/io/wav.hpp"
#include "vcraft/model/checkpoint.hpp"
#include "vcraft/model/transformer.hpp"
#include "vcraft/rearrange.hpp"
#include "vcraft/run_config.hpp"
#include "vcraft/synthcodec.hpp"
#include "vcraft/train.hpp"

namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using namespace vcraft;

enum ExitCode : int { kOk = 0, kOther = 1, kConfig = 2, kIo = 3, kNumerical = 4 };

struct Common {
  std::string config;
  std::vector<std::string> sets;
  std::string out;

  RunConfig load() const {
    return load_run_config(config.empty() ? std::nullopt : std::optional<fs::path>(config), sets);
  }

  fs::path root() const {
    if (!out.empty()) return out;
    if (const char* env = std::getenv("VCRAFT_OUT_ROOT"); env && *env) return env;
    return "vcraft-out";
  }
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("-c,--config", c.config, "run config (JSON)");
  sub->add_option("--set", c.sets, "override, e.g. --set train.total_steps=50")->take_all();
  sub->add_option("-o,--out", c.out, "output root (default $VCRAFT_OUT_ROOT or ./vcraft-out)");
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

json config_record(const RunConfig& cfg) {
  json j = cfg;
  return {{"config_hash", config_hash(j)}, {"config", j}};
}

fs::path resolve(const fs::path& p, const fs::path& base) { return p.is_absolute() ? p : base / p; }

Alignment symbol_alignment(std::size_t symbols, int frames_per_symbol) {
  const auto f = static_cast<std::size_t>(frames_per_symbol);
  Alignment a;
  for (std::size_t i = 0; i < symbols; ++i) a.push_back({i * f, (i + 1) * f});
  return a;
}

CodecMatrix load_tokens(const fs::path& dump, const std::string& id) {
  auto rec = find_token_record(dump, id);
  if (!rec) throw IoError(dump.string() + ": no token record with id '" + id + "'");
  return std::move(rec->tokens);
}

Transformer<float> load_model(const fs::path& path, const RunConfig& cfg) {
  Checkpoint ck = load_checkpoint(path);
  if (ck.config.codebook_sizes != cfg.codec.codebook_sizes()) {
    throw ConfigError("checkpoint codebooks do not match codec config");
  }
  return Transformer<float>(ck.config, std::move(ck.params));
}

std::vector<int> ids_of(const Transcript& t) { return {t.begin(), t.end()}; }

// ---- gen-data ---------------------------------------------------------------

int cmd_gen_data(const Common& common) {
  const RunConfig cfg = common.load();
  const ToyCodec codec(cfg.codec);
  const auto corpus = gen_corpus(cfg.corpus, codec);
  const fs::path dir = common.root() / "corpus";
  std::vector<TokenRecord> dump;
  std::ostringstream manifest;
  std::size_t train = 0, validation = 0;
  for (const auto& u : corpus) {
    dump.push_back({u.id, u.tokens, std::nullopt});
    manifest << json{{"id", u.id},
                     {"transcript", transcript_text(u.transcript)},
                     {"tokens", "tokens.jsonl"},
                     {"frames", u.tokens.frames()},
                     {"split", u.split}}
                    .dump()
             << '\n';
    (u.split == "train" ? train : validation) += 1;
  }
  write_token_dump(dir / "tokens.jsonl", dump);
  write_text(dir / "manifest.jsonl", manifest.str());
  write_text(dir / "config.json", config_record(cfg).dump(2) + "\n");
  std::cout << "wrote " << train << " train / " << validation << " validation utterances to "
            << dir.string() << "\n";
  return kOk;
}

std::vector<ToyUtterance> load_corpus(const fs::path& dir, const ToyCodec& codec) {
  const fs::path manifest = dir / "manifest.jsonl";
  std::ifstream in(manifest);
  if (!in) throw IoError("cannot open corpus manifest " + manifest.string());
  std::map<std::string, std::vector<TokenRecord>> dumps;
  std::vector<ToyUtterance> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      ToyUtterance u;
      u.id = j.at("id").get<std::string>();
      u.transcript = parse_transcript(j.at("transcript").get<std::string>(), codec.config().alphabet_size);
      u.split = j.at("split").get<std::string>();
      const std::string ref = j.at("tokens").get<std::string>();
      auto it = dumps.find(ref);
      if (it == dumps.end()) it = dumps.emplace(ref, read_token_dump(resolve(ref, dir))).first;
      bool found = false;
      for (const auto& rec : it->second) {
        if (rec.id == u.id) {
          u.tokens = rec.tokens;
          found = true;
          break;
        }
      }
      if (!found) throw IoError("no tokens for " + u.id + " in " + ref);
      u.alignment = symbol_alignment(u.transcript.size(), codec.config().frames_per_symbol);
      out.push_back(std::move(u));
    } catch (const json::exception& e) {
      throw IoError(manifest.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

// ---- train ------------------------------------------------------------------

struct TrainArgs {
  std::string data;
  std::string run = "train";
  std::string resume;
};

int cmd_train(const Common& common, const TrainArgs& args) {
  const RunConfig cfg = common.load();
  const ToyCodec codec(cfg.codec);
  const fs::path data = args.data.empty() ? common.root() / "corpus" : fs::path(args.data);
  std::vector<Utterance> train;
  for (auto& u : load_corpus(data, codec)) {
    if (u.split == "train") train.push_back({u.id, ids_of(u.transcript), std::move(u.tokens)});
  }
  if (train.empty()) throw ConfigError("corpus at " + data.string() + " has no training utterances");

  std::optional<TrainState> state;
  if (args.resume.empty()) {
    state.emplace(cfg.model, cfg.train);
  } else {
    state.emplace(load_checkpoint(args.resume), cfg.train);
    std::cout << "resuming at step " << state->step << " from " << args.resume << "\n";
  }
  const fs::path run_dir = common.root() / "runs" / args.run;
  fs::create_directories(run_dir);
  RunConfig used = cfg;
  used.model = state->model.config();
  write_text(run_dir / "config.json", config_record(used).dump(2) + "\n");
  std::ofstream log(run_dir / "metrics.jsonl", args.resume.empty() ? std::ios::trunc : std::ios::app);
  if (!log) throw IoError("cannot open " + (run_dir / "metrics.jsonl").string());

  TrainHooks hooks;
  hooks.metric_log = &log;
  hooks.diagnostics = &std::cerr;
  hooks.checkpoint_dir = run_dir / "checkpoints";
  const std::uint64_t every = std::max<std::uint64_t>(1, cfg.train.total_steps / 20);
  hooks.on_step = [&](const StepRecord& r) {
    if (r.step % every == 0 || r.step + 1 == cfg.train.total_steps) {
      std::cout << "step " << r.step << " loss " << std::fixed << std::setprecision(4) << r.loss << " lr "
                << std::scientific << std::setprecision(3) << r.lr << std::defaultfloat << "\n";
    }
  };
  const TrainSummary summary = train_loop(*state, train, cfg.train, hooks);
  std::cout << "trained steps " << summary.first_step << ".." << summary.last_step << " in " << std::fixed
            << std::setprecision(1) << summary.seconds << " s; checkpoints in "
            << hooks.checkpoint_dir->string() << "\n";
  return kOk;
}

// ---- edit / tts -------------------------------------------------------------

void write_outputs(const fs::path& dir, const std::string& id, const CodecMatrix& tokens, const ToyCodec& codec,
                   const json& report) {
  write_token_dump(dir / "tokens.jsonl", {{id, tokens, std::nullopt}});
  write_wav(dir / "audio.wav", codec.render(tokens), codec.config().sample_rate);
  write_text(dir / "report.json", report.dump(2) + "\n");
}

struct EditArgs {
  std::string checkpoint;
  std::string request;
};

int cmd_edit(const Common& common, const EditArgs& args) {
  RunConfig cfg = common.load();
  const json req = read_json_file(args.request);
  const fs::path base = fs::path(args.request).parent_path();
  EditConfig ecfg = cfg.edit;
  SamplingConfig scfg = cfg.sampling;
  std::string id;
  Transcript original, target;
  fs::path dump;
  std::string token_id;
  try {
    id = req.at("id").get<std::string>();
    original = parse_transcript(req.at("original").get<std::string>(), cfg.codec.alphabet_size);
    target = parse_transcript(req.at("target").get<std::string>(), cfg.codec.alphabet_size);
    dump = resolve(req.at("tokens").get<std::string>(), base);
    token_id = req.value("token_id", id);
    if (req.contains("edit")) from_json(req.at("edit"), ecfg);
    if (req.contains("sampling")) from_json(req.at("sampling"), scfg);
  } catch (const json::exception& e) {
    throw ConfigError(args.request + ": " + e.what());
  }
  ecfg.validate();
  scfg.validate();
  const ToyCodec codec(cfg.codec);
  const Transformer<float> model = load_model(args.checkpoint, cfg);
  const CodecMatrix x = load_tokens(dump, token_id);
  const Alignment align = symbol_alignment(original.size(), cfg.codec.frames_per_symbol);
  if (align.empty() ? x.frames() != 0 : align.back().end != x.frames()) {
    throw AlignmentError(id + ": " + std::to_string(x.frames()) + " frames do not match " +
                         std::to_string(original.size()) + " symbols");
  }
  const auto res = edit_speech(model, x, align, std::span<const Symbol>(original), std::span<const Symbol>(target),
                               std::span<const int>(target), ecfg, scfg);
  const Transcript decoded = codec.decode(res.tokens).symbols;
  json report = {{"id", id},
                 {"config_hash", config_hash(json(cfg))},
                 {"seed", scfg.seed},
                 {"selection_seed", ecfg.selection_seed},
                 {"original", transcript_text(original)},
                 {"target", transcript_text(target)},
                 {"decoded", transcript_text(decoded)},
                 {"edit", res.report}};
  const fs::path dir = common.root() / "edits" / id;
  write_outputs(dir, id, res.tokens, codec, report);
  std::cout << "target:  " << transcript_text(target) << "\n"
            << "decoded: " << transcript_text(decoded) << "\n"
            << "candidates " << res.report.candidates.size() << ", chosen " << res.report.chosen << "; wrote "
            << dir.string() << "\n";
  return kOk;
}

struct TtsArgs {
  std::string checkpoint;
  std::string prompt;
  std::string prompt_id;
  std::string prompt_text;
  std::string target_text;
  std::string id = "tts";
};

int cmd_tts(const Common& common, const TtsArgs& args) {
  const RunConfig cfg = common.load();
  const ToyCodec codec(cfg.codec);
  const Transformer<float> model = load_model(args.checkpoint, cfg);
  const auto records = read_token_dump(args.prompt);
  if (records.empty()) throw IoError(args.prompt + ": empty token dump");
  CodecMatrix prompt = records.front().tokens;
  if (!args.prompt_id.empty()) prompt = load_tokens(args.prompt, args.prompt_id);
  const Transcript pt = parse_transcript(args.prompt_text, cfg.codec.alphabet_size);
  const Transcript tt = parse_transcript(args.target_text, cfg.codec.alphabet_size);
  const auto res = zero_shot_tts(model, prompt, std::span<const int>(pt), std::span<const int>(tt), cfg.edit,
                                 cfg.sampling);
  const Transcript decoded = codec.decode(res.tokens.slice(prompt.frames(), res.tokens.frames())).symbols;
  json report = {{"id", args.id},
                 {"config_hash", config_hash(json(cfg))},
                 {"seed", cfg.sampling.seed},
                 {"prompt_text", transcript_text(pt)},
                 {"target_text", transcript_text(tt)},
                 {"decoded_continuation", transcript_text(decoded)},
                 {"prompt_frames", prompt.frames()},
                 {"tts", res.report}};
  const fs::path dir = common.root() / "tts" / args.id;
  write_outputs(dir, args.id, res.tokens, codec, report);
  std::cout << "continuation: " << transcript_text(decoded) << "\n"
            << "samples " << res.report.candidate_lengths.size() << ", chosen " << res.report.chosen
            << "; wrote " << dir.string() << "\n";
  return kOk;
}

// ---- rearrange --------------------------------------------------------------

struct RearrangeArgs {
  std::string tokens;
  std::string id;
  std::string spans;
  bool round_trip = false;
};

std::vector<Span> parse_spans(const std::string& text) {
  std::vector<Span> out;
  std::istringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw InvalidInput("span '" + item + "' is not start:end");
    try {
      out.push_back({std::stoul(item.substr(0, colon)), std::stoul(item.substr(colon + 1))});
    } catch (const std::logic_error&) {
      throw InvalidInput("span '" + item + "' is not start:end");
    }
  }
  return out;
}

std::string step_cell(const Step& s, std::size_t k) {
  switch (s.kind) {
    case StepKind::kFrame:
      return s.codes[k] == kEmptyToken ? "_" : std::to_string(s.codes[k]);
    case StepKind::kMask:
      return "<M" + std::to_string(s.mask_index) + ">";
    case StepKind::kEos:
      return "EOS";
    case StepKind::kEou:
      return "EOU";
  }
  return "?";
}

int cmd_rearrange(const RearrangeArgs& args) {
  const auto records = read_token_dump(args.tokens);
  if (records.empty()) throw IoError(args.tokens + ": empty token dump");
  const TokenRecord* rec = &records.front();
  if (!args.id.empty()) {
    rec = nullptr;
    for (const auto& r : records) {
      if (r.id == args.id) rec = &r;
    }
    if (!rec) throw IoError(args.tokens + ": no token record with id '" + args.id + "'");
  }
  std::vector<Span> spans = args.spans.empty() ? rec->spans.value_or(std::vector<Span>{}) : parse_spans(args.spans);
  const RearrangedSequence y = causal_mask(rec->tokens, spans);
  const StackedSequence z = delay_stack(y);
  std::cout << "Y: " << layout_symbols(y) << "\n";
  std::cout << "Z (" << z.items.size() << " steps):\n";
  for (std::size_t k = 0; k < z.codebooks(); ++k) {
    std::cout << "  k" << k + 1 << ":";
    for (const Step& s : z.items) std::cout << ' ' << std::setw(5) << step_cell(s, k);
    std::cout << "\n";
  }
  if (args.round_trip) {
    const RearrangedSequence back = unstack(z);
    const auto [x, recovered] = uncausal_mask(back);
    const bool ok = back == y && x.data() == rec->tokens.data() && recovered == spans;
    std::cout << "round-trip " << (ok ? "OK" : "FAILED") << "\n";
    if (!ok) return kOther;
  }
  return kOk;
}

// ---- eval -------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint;
  std::string manifest;
  std::string name = "eval";
};

int cmd_eval(const Common& common, const EvalArgs& args) {
  const RunConfig cfg = common.load();
  const ToyCodec codec(cfg.codec);
  const Transformer<float> model = load_model(args.checkpoint, cfg);
  const auto manifest = read_eval_manifest(args.manifest, cfg.codec.alphabet_size);
  const fs::path base = fs::path(args.manifest).parent_path();
  std::map<fs::path, std::optional<std::vector<TokenRecord>>> dumps;
  const TokenLookup lookup = [&](const EvalRecord& r) -> std::optional<CodecMatrix> {
    const fs::path p = resolve(r.tokens, base);
    auto it = dumps.find(p);
    if (it == dumps.end()) {
      std::optional<std::vector<TokenRecord>> loaded;
      if (fs::exists(p)) loaded = read_token_dump(p);
      it = dumps.emplace(p, std::move(loaded)).first;
    }
    if (!it->second) return std::nullopt;
    for (const auto& rec : *it->second) {
      if (rec.id == r.token_id) return rec.tokens;
    }
    return std::nullopt;
  };
  const Editor editor = [&](const EvalRecord& r, const CodecMatrix& x, const Alignment& align) {
    const auto res = edit_speech(model, x, align, std::span<const Symbol>(r.original),
                                 std::span<const Symbol>(r.edited), std::span<const int>(r.edited), cfg.edit,
                                 cfg.sampling);
    return std::make_pair(res.tokens, json(res.report));
  };
  json config = cfg;
  config["model"] = model.config();
  const EvalReport report = evaluate_manifest(manifest, codec, cfg.metrics, lookup, editor,
                                              report_header(config, cfg.sampling.seed, cfg.metrics));
  const fs::path out = common.root() / "eval" / args.name / "report.jsonl";
  std::ostringstream os;
  write_eval_report(os, report);
  write_text(out, os.str());
  std::cout << std::left << std::setw(28) << "stratum" << std::right << std::setw(6) << "n" << std::setw(9)
            << "SER" << std::setw(9) << "MCD" << std::setw(9) << "F0" << std::setw(9) << "energy" << "\n";
  for (const auto& s : report.strata) {
    std::cout << std::left << std::setw(28) << (s.edit_types + " " + s.bucket) << std::right << std::setw(6)
              << s.count << std::fixed << std::setprecision(3) << std::setw(9) << s.mean_ser << std::setw(9)
              << s.mean_mcd << std::setw(9) << s.mean_f0_distance << std::setw(9) << s.mean_energy_distance
              << std::defaultfloat << "\n";
  }
  std::cout << report.records.size() << " records, " << report.skipped.size() << " skipped; wrote "
            << out.string() << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Token infilling for speech editing on a toy codec"};
  app.require_subcommand(1);

  Common gen_common, train_common, edit_common, tts_common, eval_common;
  TrainArgs train_args;
  EditArgs edit_args;
  TtsArgs tts_args;
  RearrangeArgs rearrange_args;
  EvalArgs eval_args;

  auto* gen = app.add_subcommand("gen-data", "generate the toy corpus");
  add_common(gen, gen_common);

  auto* train = app.add_subcommand("train", "train a model on the corpus");
  add_common(train, train_common);
  train->add_option("--data", train_args.data, "corpus directory (default <out>/corpus)");
  train->add_option("--run", train_args.run, "run name under <out>/runs");
  train->add_option("--resume", train_args.resume, "checkpoint to continue from")->check(CLI::ExistingFile);

  auto* edit = app.add_subcommand("edit", "edit an utterance to match a new transcript");
  add_common(edit, edit_common);
  edit->add_option("--checkpoint", edit_args.checkpoint)->required()->check(CLI::ExistingFile);
  edit->add_option("--request", edit_args.request, "edit request (JSON)")->required()->check(CLI::ExistingFile);

  auto* tts = app.add_subcommand("tts", "continue a prompt with new text");
  add_common(tts, tts_common);
  tts->add_option("--checkpoint", tts_args.checkpoint)->required()->check(CLI::ExistingFile);
  tts->add_option("--prompt", tts_args.prompt, "prompt token dump")->required()->check(CLI::ExistingFile);
  tts->add_option("--prompt-id", tts_args.prompt_id, "record id in the dump (default first)");
  tts->add_option("--prompt-text", tts_args.prompt_text)->required();
  tts->add_option("--target-text", tts_args.target_text)->required();
  tts->add_option("--id", tts_args.id, "output name under <out>/tts");

  auto* rearrange = app.add_subcommand("rearrange", "print the masked and delay-stacked forms");
  rearrange->add_option("--tokens", rearrange_args.tokens, "token dump")->required()->check(CLI::ExistingFile);
  rearrange->add_option("--id", rearrange_args.id, "record id (default first)");
  rearrange->add_option("--spans", rearrange_args.spans, "0-based half-open frame spans, e.g. 1:4,6:7");
  rearrange->add_flag("--round-trip", rearrange_args.round_trip, "check that both transforms invert");

  auto* eval = app.add_subcommand("eval", "stratified metrics over an edit manifest");
  add_common(eval, eval_common);
  eval->add_option("--checkpoint", eval_args.checkpoint)->required()->check(CLI::ExistingFile);
  eval->add_option("--manifest", eval_args.manifest)->required()->check(CLI::ExistingFile);
  eval->add_option("--name", eval_args.name, "report name under <out>/eval");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kOther;
  }

  try {
    if (*gen) return cmd_gen_data(gen_common);
    if (*train) return cmd_train(train_common, train_args);
    if (*edit) return cmd_edit(edit_common, edit_args);
    if (*tts) return cmd_tts(tts_common, tts_args);
    if (*rearrange) return cmd_rearrange(rearrange_args);
    if (*eval) return cmd_eval(eval_common, eval_args);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kIo;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kIo;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kOther;
  }
  return kOther;
}
