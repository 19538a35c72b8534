// Acceptance checks: prints one PASS/FAIL line per criterion and exits
// non-zero if any fails.
//
//   acceptance [--work-dir DIR] [--only N]... [--retrain]
//
// Criterion 8 trains the desk-scale model in DIR/infill. A finished run
// is reused when its config hash matches; its recorded training time is
// what gets checked.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "stub_model.hpp"
#include "vcraft/eval.hpp"
#include "vcraft/infer.hpp"
#include "vcraft/metrics/dtw.hpp"
#include "vcraft/metrics/features.hpp"
#include "vcraft/metrics/scores.hpp"
#include "vcraft/model/checkpoint.hpp"
#include "vcraft/model/loss.hpp"
#include "vcraft/model/transformer.hpp"
#include "vcraft/rearrange.hpp"
#include "vcraft/run_config.hpp"
#include "vcraft/synthcodec.hpp"
#include "vcraft/train.hpp"

namespace {

namespace fs = std::filesystem;
using namespace vcraft;
using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v, int precision = 4) {
  std::ostringstream os;
  os << std::setprecision(precision) << v;
  return os.str();
}

CodecMatrix random_matrix(std::size_t frames, std::size_t k, std::mt19937_64& rng) {
  CodecMatrix x(std::vector<int>(k, 64));
  std::uniform_int_distribution<Token> tok(0, 63);
  std::vector<Token> f(k);
  for (std::size_t t = 0; t < frames; ++t) {
    for (auto& v : f) v = tok(rng);
    x.push_frame(f);
  }
  return x;
}

std::vector<Span> random_spans(std::size_t frames, std::mt19937_64& rng) {
  MaskSamplingConfig cfg;
  cfg.max_span_len = 12;
  return sample_mask_spans(frames, cfg, rng);
}

// ---- 1 ----------------------------------------------------------------------

Outcome six_frame_layout() {
  const auto t0 = Clock::now();
  CodecMatrix x(std::vector<int>{1024});
  for (Token t = 1; t <= 6; ++t) x.push_frame(std::vector<Token>{t});
  const std::vector<Span> spans = {{1, 4}};
  const RearrangedSequence y = causal_mask(x, spans);
  auto fr = [](Token v) { return Step::frame(std::vector<Token>{v}); };
  const std::vector<Step> want = {fr(1),         Step::mask(1), fr(5), fr(6), Step::eou(),
                                  Step::mask(1), fr(2),         fr(3), fr(4), Step::eos()};
  const double secs = seconds_since(t0);
  return {y.items == want && secs < 1.0, "layout " + layout_symbols(y) + ", " + fmt(secs * 1e3, 3) + " ms"};
}

// ---- 2 ----------------------------------------------------------------------

Outcome round_trips() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(2);
  int mask_failures = 0, stack_failures = 0;
  for (int c = 0; c < 1000; ++c) {
    const CodecMatrix x = random_matrix(1 + rng() % 60, 1 + c % 4, rng);
    const auto spans = random_spans(x.frames(), rng);
    const auto y = causal_mask(x, spans);
    const auto [back, recovered] = uncausal_mask(y);
    if (!(back == x) || recovered != spans) ++mask_failures;
  }
  for (int c = 0; c < 1000; ++c) {
    const CodecMatrix x = random_matrix(1 + rng() % 60, 1 + c % 4, rng);
    const auto y = causal_mask(x, random_spans(x.frames(), rng));
    if (!(unstack(delay_stack(y)) == y)) ++stack_failures;
  }
  const double secs = seconds_since(t0);
  return {mask_failures == 0 && stack_failures == 0 && secs < 10.0,
          std::to_string(mask_failures) + " mask / " + std::to_string(stack_failures) +
              " stack failures in 2x1000 cases, " + fmt(secs, 3) + " s"};
}

// ---- 3 ----------------------------------------------------------------------

// Reads positions straight off the stacked items: within each run of frame
// steps, the i-th non-EMPTY code of codebook k belongs to frame i.
Outcome delay_order() {
  std::mt19937_64 rng(3);
  std::size_t violations = 0, coordinates = 0, spans_seen = 0;
  int cases = 0;
  while (spans_seen < 200) {
    const std::size_t k = 1 + static_cast<std::size_t>(cases++ % 4);
    const CodecMatrix x = random_matrix(2 + rng() % 40, k, rng);
    const auto spans = random_spans(x.frames(), rng);
    spans_seen += spans.size();
    const auto z = delay_stack(causal_mask(x, spans));
    std::vector<std::vector<std::size_t>> pos(k);
    auto check_run = [&] {
      for (std::size_t kk = 1; kk < k; ++kk) {
        if (pos[kk].size() != pos[0].size()) ++violations;
        for (std::size_t tau = 0; tau < std::min(pos[kk].size(), pos[kk - 1].size()); ++tau) {
          ++coordinates;
          if (pos[kk][tau] <= pos[kk - 1][tau]) ++violations;
        }
      }
      for (auto& p : pos) p.clear();
    };
    for (std::size_t i = 0; i < z.items.size(); ++i) {
      const Step& s = z.items[i];
      if (!s.is_frame()) {
        check_run();
        continue;
      }
      for (std::size_t kk = 0; kk < k; ++kk) {
        if (s.codes[kk] != kEmptyToken) pos[kk].push_back(i);
      }
    }
    check_run();
  }
  return {violations == 0, std::to_string(violations) + " violations over " + std::to_string(coordinates) +
                               " coordinates, " + std::to_string(spans_seen) + " spans"};
}

// ---- 4 ----------------------------------------------------------------------

Outcome span_counts() {
  MaskSamplingConfig cfg;
  std::mt19937_64 rng(4);
  std::array<int, 4> counts{};
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const int c = sample_span_count(cfg, rng);
    if (c < 1 || c > 3) return {false, "drew " + std::to_string(c) + " spans"};
    ++counts[static_cast<std::size_t>(c)];
  }
  const std::array<double, 3> want = {0.6, 0.3, 0.1};
  bool ok = true;
  std::string detail = "P(1..3) =";
  for (std::size_t i = 0; i < 3; ++i) {
    const double p = counts[i + 1] / static_cast<double>(n);
    ok = ok && std::abs(p - want[i]) <= 0.02;
    detail += " " + fmt(p, 4);
  }
  return {ok, detail};
}

// ---- 5 ----------------------------------------------------------------------

Outcome loss_oracle() {
  const std::size_t rows = 64;
  std::vector<Mat<double>> logits(4, Mat<double>::Zero(rows, 256));
  std::vector<int> targets(rows * 4);
  std::mt19937_64 rng(5);
  for (auto& t : targets) t = static_cast<int>(rng() % 256);
  const std::vector<std::uint8_t> all(rows * 4, 1);
  const std::vector<double> alpha = {5, 1, 0.5, 0.1};
  const double got = weighted_loss<double>(logits, targets, all, alpha).total;
  const double want = 6.6 * std::log(256.0);
  const double rel = std::abs(got - want) / want;

  // Perturb every unscored logit row of a real example.
  ModelConfig cfg;
  cfg.num_layers = 1;
  cfg.hidden_dim = 16;
  cfg.ffn_dim = 32;
  cfg.num_heads = 2;
  cfg.max_positions = 128;
  const Transformer<double> model(cfg);
  CodecMatrix x(cfg.codebook_sizes);
  for (int t = 0; t < 12; ++t) {
    x.push_frame(std::vector<Token>{static_cast<Token>(rng() % 256), static_cast<Token>(rng() % 256),
                                    static_cast<Token>(rng() % 256), static_cast<Token>(rng() % 256)});
  }
  Example ex;
  ex.text = {1, 2, 3};
  ex.stacked = delay_stack(causal_mask(x, std::vector<Span>{{2, 5}, {8, 10}})).items;
  build_targets(cfg, ex);
  auto lg = model.logits(ex.text, ex.stacked);
  for (auto& l : lg) l.conservativeResize(static_cast<Eigen::Index>(ex.positions()), Eigen::NoChange);
  const double base = weighted_loss<double>(lg, ex.targets, ex.loss_mask, cfg.loss_weights).total;
  std::size_t perturbed = 0;
  std::normal_distribution<double> g(0.0, 10.0);
  for (std::size_t r = 0; r < ex.positions(); ++r) {
    for (std::size_t k = 0; k < 4; ++k) {
      if (ex.loss_mask[r * 4 + k]) continue;
      for (Eigen::Index c = 0; c < lg[k].cols(); ++c) lg[k](static_cast<Eigen::Index>(r), c) += g(rng);
      ++perturbed;
    }
  }
  const double delta = weighted_loss<double>(lg, ex.targets, ex.loss_mask, cfg.loss_weights).total - base;
  return {rel <= 1e-4 && delta == 0.0 && perturbed > 0,
          "loss " + fmt(got, 10) + " vs " + fmt(want, 10) + " (rel " + fmt(rel, 2) + "), masked-row delta " +
              fmt(delta) + " over " + std::to_string(perturbed) + " rows"};
}

// ---- 6 ----------------------------------------------------------------------

Outcome gradient_check() {
  ModelConfig cfg;
  cfg.num_layers = 1;
  cfg.hidden_dim = 8;
  cfg.ffn_dim = 16;
  cfg.num_heads = 2;
  cfg.codebook_sizes = {6, 6};
  cfg.loss_weights = {5.0, 1.0};
  cfg.text_vocab_size = 5;
  cfg.max_positions = 64;
  cfg.init_std = 0.5;
  cfg.embed_init_std = 0.5;
  cfg.init_seed = 6;
  Transformer<double> model(cfg);
  std::mt19937_64 rng(6);
  CodecMatrix x(cfg.codebook_sizes);
  for (int t = 0; t < 8; ++t) {
    x.push_frame(std::vector<Token>{static_cast<Token>(rng() % 6), static_cast<Token>(rng() % 6)});
  }
  Example ex;
  ex.text = {0, 4, 2};
  ex.stacked = delay_stack(causal_mask(x, std::vector<Span>{{1, 3}, {5, 7}})).items;
  build_targets(cfg, ex);
  PackedInput in;
  in.add_sequence(cfg, ex.text, ex.stacked, PackedInput::HeadRows::kAllButLastStacked);
  auto loss = [&](std::vector<Mat<double>>* dlogits, Activations<double>* keep) {
    Activations<double> act;
    model.forward(in, act);
    const double l = weighted_loss<double>(act.logits, ex.targets, ex.loss_mask, cfg.loss_weights, dlogits).total;
    if (keep) *keep = std::move(act);
    return l;
  };
  std::vector<Mat<double>> dlogits;
  Activations<double> act;
  loss(&dlogits, &act);
  Params<double> grads = model.params().zeros_like();
  model.backward(in, act, dlogits, grads);
  auto p = model.params().tensors();
  auto g = grads.tensors();
  double worst = 0.0;
  int checked = 0;
  for (int i = 0; i < 24; ++i) {
    const std::size_t t = rng() % p.size();
    const Eigen::Index idx = static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(p[t]->size()));
    double& w = const_cast<double&>(p[t]->data()[idx]);
    const double saved = w;
    w = saved + 1e-4;
    const double up = loss(nullptr, nullptr);
    w = saved - 1e-4;
    const double down = loss(nullptr, nullptr);
    w = saved;
    const double numeric = (up - down) / 2e-4;
    const double analytic = g[t]->data()[idx];
    worst = std::max(worst, std::abs(numeric - analytic) /
                                std::max({std::abs(numeric), std::abs(analytic), 1e-6}));
    ++checked;
  }
  return {checked >= 10 && worst <= 1e-4,
          std::to_string(checked) + " coordinates, worst relative error " + fmt(worst, 3)};
}

// ---- 7 ----------------------------------------------------------------------

Outcome eden() {
  const SchedulerConfig cfg;
  auto direct = [&](double t, double e) {
    const double warm = t >= cfg.warmup_steps ? 1.0
                                               : cfg.warmup_start + (1.0 - cfg.warmup_start) * t / cfg.warmup_steps;
    return cfg.base_lr * std::pow((t * t + cfg.step_const * cfg.step_const) / (cfg.step_const * cfg.step_const), -0.25) *
           std::pow((e * e + cfg.epoch_const * cfg.epoch_const) / (cfg.epoch_const * cfg.epoch_const), -0.25) *
           warm;
  };
  const double a = eden_lr(0.0, 0.0, cfg), b = eden_lr(3000.0, 1.0, cfg);
  const double ra = std::abs(a - direct(0, 0)) / direct(0, 0);
  const double rb = std::abs(b - direct(3000, 1)) / direct(3000, 1);
  const bool ok = ra <= 1e-9 && rb <= 1e-9 && std::abs(a - 0.025) <= 1e-12 && std::abs(b - 0.041412) < 5e-7;
  return {ok, "eden(0,0) = " + fmt(a, 10) + ", eden(3000,1) = " + fmt(b, 10)};
}

// ---- 8 ----------------------------------------------------------------------

struct InfillRun {
  fs::path checkpoint;
  double seconds = 0.0;
  std::uint64_t steps = 0;
  bool cached = false;
};

InfillRun train_infill_model(const RunConfig& cfg, const std::vector<ToyUtterance>& corpus, const fs::path& dir,
                             bool retrain) {
  const fs::path meta_path = dir / "run.json";
  const std::string hash = config_hash(nlohmann::json(cfg));
  InfillRun run{dir / "checkpoints" / "last.bin"};
  if (!retrain && fs::exists(meta_path) && fs::exists(run.checkpoint)) {
    const auto meta = nlohmann::json::parse(std::ifstream(meta_path));
    if (meta.value("config_hash", "") == hash) {
      run.seconds = meta.at("seconds").get<double>();
      run.steps = meta.at("steps").get<std::uint64_t>();
      run.cached = true;
      return run;
    }
  }
  fs::remove_all(dir);
  fs::create_directories(dir);
  std::vector<Utterance> train;
  for (const auto& u : corpus) {
    if (u.split == "train") train.push_back({u.id, {u.transcript.begin(), u.transcript.end()}, u.tokens});
  }
  TrainState state(cfg.model, cfg.train);
  std::ofstream log(dir / "metrics.jsonl");
  TrainHooks hooks;
  hooks.metric_log = &log;
  hooks.diagnostics = &std::cerr;
  hooks.checkpoint_dir = dir / "checkpoints";
  hooks.on_step = [](const StepRecord& r) {
    if (r.step % 250 == 0) std::cerr << "  [infill] step " << r.step << " loss " << fmt(r.loss) << "\n";
  };
  const TrainSummary s = train_loop(state, train, cfg.train, hooks);
  run.seconds = s.seconds;
  run.steps = s.last_step;
  std::ofstream(meta_path) << nlohmann::json{{"config_hash", hash}, {"seconds", s.seconds}, {"steps", s.last_step}}
                                  .dump(2)
                           << "\n";
  return run;
}

Outcome end_to_end_infilling(const fs::path& work, bool retrain) {
  const RunConfig cfg = run_config_from_json(nlohmann::json::object());
  if (cfg.model.num_layers != 2 || cfg.model.hidden_dim != 128 || cfg.model.num_codebooks() != 4 ||
      cfg.corpus.num_train != 1000 || cfg.train.total_steps > 2000) {
    return {false, "default config is not the desk-scale setup"};
  }
  const ToyCodec codec(cfg.codec);
  const auto corpus = gen_corpus(cfg.corpus, codec);
  const InfillRun run = train_infill_model(cfg, corpus, work / "infill", retrain);
  const Checkpoint ck = load_checkpoint(run.checkpoint);
  const Transformer<float> model(ck.config, ck.params);

  std::vector<ToyUtterance> held_out;
  for (const auto& u : corpus) {
    if (u.split == "validation") held_out.push_back(u);
  }
  // Masks are widened by the smallest edit margin, as edit spans are.
  const std::size_t margin = margin_frames(cfg.edit.margin_schedule.front(), cfg.codec.frame_rate);
  const auto cases = make_reconstruction_cases(held_out, 100, 5, 2024);
  std::size_t errors = 0, symbols = 0, identical = 0, truncated = 0;
  std::ofstream detail(work / "infill" / "cases.jsonl");
  for (std::size_t i = 0; i < cases.size(); ++i) {
    SamplingConfig sc = cfg.sampling;
    sc.seed = i;
    const auto r = reconstruct(model, codec, held_out[cases[i].utterance], cases[i], sc, margin);
    errors += r.errors;
    symbols += r.masked_symbols;
    identical += r.unedited_identical ? 1 : 0;
    truncated += r.truncated ? 1 : 0;
    detail << nlohmann::json{{"utterance", held_out[cases[i].utterance].id},
                             {"span", {r.span.start, r.span.end}},
                             {"reference", transcript_text(r.reference)},
                             {"hypothesis", transcript_text(r.hypothesis)},
                             {"errors", r.errors},
                             {"unedited_identical", r.unedited_identical}}
                  .dump()
           << "\n";
  }
  const double ser = static_cast<double>(errors) / static_cast<double>(std::max<std::size_t>(1, symbols));
  const bool ok = ser <= 0.15 && identical == cases.size() && run.steps <= 2000 && run.seconds <= 1800.0;
  return {ok, "SER " + fmt(ser, 4) + " (" + std::to_string(errors) + "/" + std::to_string(symbols) +
                  "), unedited identical " + std::to_string(identical) + "/" + std::to_string(cases.size()) +
                  ", truncated " + std::to_string(truncated) + ", trained " + std::to_string(run.steps) +
                  " steps in " + fmt(run.seconds / 60.0, 3) + " min" + (run.cached ? " (cached run)" : "")};
}

// ---- 9 ----------------------------------------------------------------------

ModelConfig stub_config() {
  ModelConfig c;
  c.codebook_sizes.assign(4, 256);
  c.loss_weights.assign(4, 1.0);
  c.max_positions = 4096;
  return c;
}

Outcome heuristic_contracts() {
  const ToyCodec codec{ToyCodecConfig{}};
  Transcript w;
  for (int i = 0; i < 30; ++i) w.push_back((i * 7) % 26);
  const auto enc = codec.encode(w);
  Transcript w2 = w;
  w2[12] = 25;
  std::vector<std::size_t> gen(10);
  for (std::size_t i = 0; i < gen.size(); ++i) gen[i] = 10 + 5 * i;
  std::shuffle(gen.begin(), gen.end(), std::mt19937_64(9));
  stub::ScriptedModel m(stub_config(),
                        [&](std::size_t call, int) { return stub::counting_frames(gen.at(call), 4, 256); });
  EditConfig ec;
  ec.selection_seed = 9;
  const auto r = edit_speech(m, enc.tokens, enc.alignment, std::span<const int>(w), std::span<const int>(w2),
                             std::span<const int>(w2), ec, SamplingConfig{});
  std::vector<std::string> problems;
  if (m.calls() != 10 || r.report.candidates.size() != 10) problems.push_back("candidate count");
  std::vector<std::size_t> totals;
  for (std::size_t i = 0; i < r.report.candidates.size(); ++i) {
    const auto& c = r.report.candidates[i];
    if (std::abs(c.epsilon - (0.05 + 0.01 * static_cast<double>(i))) > 1e-12) problems.push_back("epsilon sweep");
    totals.push_back(c.total_frames);
  }
  std::vector<std::size_t> order(totals.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](auto a, auto b) { return totals[a] != totals[b] ? totals[a] > totals[b] : a > b; });
  std::vector<std::size_t> discard(order.begin(), order.begin() + std::min<std::size_t>(4, order.size()));
  std::sort(discard.begin(), discard.end());
  if (r.report.discarded != discard) problems.push_back("discarded set");
  std::vector<std::size_t> kept(order.begin() + std::min<std::size_t>(4, order.size()), order.end());
  std::sort(kept.begin(), kept.end());
  std::mt19937_64 pick(ec.selection_seed);
  if (kept.empty() ||
      static_cast<std::size_t>(r.report.chosen) != kept[std::uniform_int_distribution<std::size_t>(0, kept.size() - 1)(pick)]) {
    problems.push_back("chosen candidate");
  }

  const std::vector<std::size_t> lengths = {14, 11, 17, 11, 9 + 13};
  stub::ScriptedModel t(stub_config(),
                        [&](std::size_t call, int) { return stub::counting_frames(lengths.at(call), 4, 256); });
  const auto prompt = codec.encode(Transcript{1, 2, 3});
  const std::vector<int> pt = {1, 2, 3}, tt = {4, 5};
  const auto tts = zero_shot_tts(t, prompt.tokens, pt, tt, EditConfig{}, SamplingConfig{});
  if (t.calls() != 5 || tts.report.candidate_lengths != lengths) problems.push_back("tts samples");
  if (tts.report.chosen != 1 || tts.tokens.frames() != prompt.tokens.frames() + 11) {
    problems.push_back("tts shortest");
  }
  std::string detail = "10 candidates, discarded";
  for (auto i : r.report.discarded) detail += " " + std::to_string(i);
  detail += ", chose " + std::to_string(r.report.chosen) + "; tts chose " + std::to_string(tts.report.chosen) +
            " of 5";
  for (const auto& p : problems) detail += "; wrong " + p;
  return {problems.empty(), detail};
}

// ---- 10 ---------------------------------------------------------------------

double brute_dtw(const std::vector<std::vector<double>>& c, std::size_t i, std::size_t j) {
  const std::size_t n = c.size(), m = c[0].size();
  if (i == n - 1 && j == m - 1) return c[i][j];
  double best = std::numeric_limits<double>::infinity();
  if (i + 1 < n) best = std::min(best, brute_dtw(c, i + 1, j));
  if (j + 1 < m) best = std::min(best, brute_dtw(c, i, j + 1));
  if (i + 1 < n && j + 1 < m) best = std::min(best, brute_dtw(c, i + 1, j + 1));
  return c[i][j] + best;
}

std::size_t dp_edit_distance(const std::vector<int>& a, const std::vector<int>& b) {
  std::vector<std::vector<std::size_t>> d(a.size() + 1, std::vector<std::size_t>(b.size() + 1));
  for (std::size_t i = 0; i <= a.size(); ++i) d[i][0] = i;
  for (std::size_t j = 0; j <= b.size(); ++j) d[0][j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      d[i][j] = std::min({d[i - 1][j] + 1, d[i][j - 1] + 1, d[i - 1][j - 1] + (a[i - 1] != b[j - 1] ? 1u : 0u)});
    }
  }
  return d[a.size()][b.size()];
}

Outcome metrics_checks() {
  const auto t0 = Clock::now();
  std::vector<std::string> problems;
  std::mt19937_64 rng(10);

  std::vector<float> wav(16000);
  std::normal_distribution<double> g(0.0, 0.3);
  for (float& v : wav) v = static_cast<float>(g(rng));
  const auto m = mfcc(wav);
  if (mcd(m, m) != 0.0) problems.push_back("MCD(x,x)");

  FeatureSeq ref, off;
  for (int t = 0; t < 40; ++t) {
    std::vector<double> r(13);
    for (double& v : r) v = 50.0 * t + g(rng);
    std::vector<double> s = r;
    for (double& v : s) v += 1.0;
    ref.push_back(r);
    off.push_back(s);
  }
  const double offset_mcd = mcd(ref, off);
  if (std::abs(offset_mcd - 11.0724) > 1e-3) problems.push_back("offset MCD " + fmt(offset_mcd, 8));

  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<std::vector<double>> c(5, std::vector<double>(7));
    for (auto& row : c) {
      for (double& v : row) v = u(rng);
    }
    const auto r = dtw_align(5, 7, [&](std::size_t i, std::size_t j) { return c[i][j]; });
    if (std::abs(r.cost - brute_dtw(c, 0, 0)) > 1e-12) {
      problems.push_back("DTW cost");
      break;
    }
  }

  double worst_f0 = 0.0;
  for (double hz : {100.0, 220.0, 300.0, 500.0}) {
    std::vector<float> s(16000);
    for (std::size_t n = 0; n < s.size(); ++n) {
      s[n] = static_cast<float>(0.5 * std::sin(2.0 * std::numbers::pi * hz * static_cast<double>(n) / 16000.0));
    }
    std::vector<double> voiced;
    for (double f : f0_track(s)) {
      if (f > 0) voiced.push_back(f);
    }
    if (voiced.empty()) {
      problems.push_back("F0 unvoiced at " + fmt(hz));
      continue;
    }
    std::nth_element(voiced.begin(), voiced.begin() + static_cast<std::ptrdiff_t>(voiced.size() / 2), voiced.end());
    worst_f0 = std::max(worst_f0, std::abs(voiced[voiced.size() / 2] - hz) / hz);
  }
  if (worst_f0 > 0.03) problems.push_back("F0 error " + fmt(worst_f0));

  std::size_t ser_mismatch = 0;
  for (int i = 0; i < 1000; ++i) {
    std::vector<int> a(rng() % 15), b(rng() % 15);
    for (int& v : a) v = static_cast<int>(rng() % 5);
    for (int& v : b) v = static_cast<int>(rng() % 5);
    const double want = static_cast<double>(dp_edit_distance(a, b)) / static_cast<double>(std::max<std::size_t>(1, a.size()));
    if (symbol_error_rate(a, b) != want) ++ser_mismatch;
  }
  if (ser_mismatch) problems.push_back(std::to_string(ser_mismatch) + " SER mismatches");

  const double secs = seconds_since(t0);
  if (secs >= 60.0) problems.push_back("too slow");
  std::string detail = "offset MCD " + fmt(offset_mcd, 7) + ", worst F0 error " + fmt(worst_f0 * 100, 3) +
                       "%, " + fmt(secs, 3) + " s";
  for (const auto& p : problems) detail += "; " + p;
  return {problems.empty(), detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance checks"};
  std::string work = "acceptance-work";
  std::vector<int> only;
  bool retrain = false;
  app.add_option("--work-dir", work, "scratch directory for the training run");
  app.add_option("--only", only, "run just these criteria")->check(CLI::Range(1, 10));
  app.add_flag("--retrain", retrain, "ignore a cached training run");
  CLI11_PARSE(app, argc, argv);
  fs::create_directories(work);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"rearrangement six-frame layout", six_frame_layout},
      {"round trips", round_trips},
      {"delay order", delay_order},
      {"span-count distribution", span_counts},
      {"loss oracle", loss_oracle},
      {"gradient check", gradient_check},
      {"learning-rate schedule", eden},
      {"end-to-end infilling", [&] { return end_to_end_infilling(work, retrain); }},
      {"edit and tts heuristics", heuristic_contracts},
      {"metrics", metrics_checks},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failed += o.pass ? 0 : 1;
    std::cout << (o.pass ? "PASS" : "FAIL") << " " << id << " " << criteria[i].first << ": " << o.detail
              << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
