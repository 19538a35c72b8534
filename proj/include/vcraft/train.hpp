#pragma once

// Training: span sampling, rearrangement and packing into frame-budgeted
// batches, AdamW driven by the Eden schedule, checkpointing and resume.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "vcraft/codec_matrix.hpp"
#include "vcraft/errors.hpp"
#include "vcraft/model/checkpoint.hpp"
#include "vcraft/model/config.hpp"
#include "vcraft/model/loss.hpp"
#include "vcraft/model/transformer.hpp"
#include "vcraft/rearrange.hpp"

namespace vcraft {

struct SchedulerConfig {
  double base_lr = 0.05;
  double step_const = 3000.0;
  double epoch_const = 4.0;
  double warmup_start = 0.5;
  double warmup_steps = 500.0;
  std::uint64_t steps_per_pseudo_epoch = 3000;

  void validate() const {
    if (!(base_lr > 0.0)) throw ConfigError("scheduler.base_lr must be positive");
    if (!(step_const > 0.0)) throw ConfigError("scheduler.step_const must be positive");
    if (!(epoch_const > 0.0)) throw ConfigError("scheduler.epoch_const must be positive");
    if (!(warmup_start > 0.0)) throw ConfigError("scheduler.warmup_start must be positive");
    if (!(warmup_steps >= 1.0)) throw ConfigError("scheduler.warmup_steps must be >= 1");
    if (steps_per_pseudo_epoch < 1) {
      throw ConfigError("scheduler.steps_per_pseudo_epoch must be >= 1");
    }
  }
};

inline double eden_lr(double t, double e, const SchedulerConfig& cfg) {
  const double s2 = cfg.step_const * cfg.step_const;
  const double e2 = cfg.epoch_const * cfg.epoch_const;
  const double step_factor = std::pow((t * t + s2) / s2, -0.25);
  const double epoch_factor = std::pow((e * e + e2) / e2, -0.25);
  const double ramp =
      t >= cfg.warmup_steps ? 1.0 : cfg.warmup_start + (1.0 - cfg.warmup_start) * t / cfg.warmup_steps;
  return cfg.base_lr * step_factor * epoch_factor * ramp;
}

// Pseudo-epoch index enters as an integer.
inline double eden_lr(std::uint64_t step, const SchedulerConfig& cfg) {
  const auto e = step / cfg.steps_per_pseudo_epoch;
  return eden_lr(static_cast<double>(step), static_cast<double>(e), cfg);
}

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-8;
  double weight_decay = 0.01;
  double grad_clip = 1.0;  // global norm; <= 0 disables

  void validate() const {
    if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("optimizer.beta1 must be in [0, 1)");
    if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("optimizer.beta2 must be in [0, 1)");
    if (!(eps > 0.0)) throw ConfigError("optimizer.eps must be positive");
    if (!(weight_decay >= 0.0)) throw ConfigError("optimizer.weight_decay must be >= 0");
  }
};

struct TrainConfig {
  std::size_t batch_frame_budget = 4096;
  std::uint64_t total_steps = 2000;
  int grad_accum = 1;
  AdamWConfig optimizer;
  // AdamW wants a far smaller base rate than the schedule's nominal 0.05.
  SchedulerConfig scheduler{.base_lr = 6e-3};
  MaskSamplingConfig mask;
  std::uint64_t seed = 1234;
  std::uint64_t checkpoint_every = 500;
  std::uint64_t log_every = 1;

  void validate() const {
    if (batch_frame_budget < 1) throw ConfigError("train.batch_frame_budget must be positive");
    if (total_steps < 1) throw ConfigError("train.total_steps must be positive");
    if (grad_accum < 1) throw ConfigError("train.grad_accum must be >= 1");
    optimizer.validate();
    scheduler.validate();
    mask.validate();
  }
};

inline void to_json(nlohmann::json& j, const SchedulerConfig& c) {
  j = {{"base_lr", c.base_lr},           {"step_const", c.step_const},
       {"epoch_const", c.epoch_const},   {"warmup_start", c.warmup_start},
       {"warmup_steps", c.warmup_steps}, {"steps_per_pseudo_epoch", c.steps_per_pseudo_epoch}};
}

inline void from_json(const nlohmann::json& j, SchedulerConfig& c) {
  const SchedulerConfig d = c;
  c.base_lr = j.value("base_lr", d.base_lr);
  c.step_const = j.value("step_const", d.step_const);
  c.epoch_const = j.value("epoch_const", d.epoch_const);
  c.warmup_start = j.value("warmup_start", d.warmup_start);
  c.warmup_steps = j.value("warmup_steps", d.warmup_steps);
  c.steps_per_pseudo_epoch = j.value("steps_per_pseudo_epoch", d.steps_per_pseudo_epoch);
}

inline void to_json(nlohmann::json& j, const AdamWConfig& c) {
  j = {{"beta1", c.beta1},
       {"beta2", c.beta2},
       {"eps", c.eps},
       {"weight_decay", c.weight_decay},
       {"grad_clip", c.grad_clip}};
}

inline void from_json(const nlohmann::json& j, AdamWConfig& c) {
  const AdamWConfig d = c;
  c.beta1 = j.value("beta1", d.beta1);
  c.beta2 = j.value("beta2", d.beta2);
  c.eps = j.value("eps", d.eps);
  c.weight_decay = j.value("weight_decay", d.weight_decay);
  c.grad_clip = j.value("grad_clip", d.grad_clip);
}

inline void to_json(nlohmann::json& j, const MaskSamplingConfig& c) {
  j = {{"lambda", c.lambda},
       {"min_spans", c.min_spans},
       {"max_spans", c.max_spans},
       {"max_span_len", c.max_span_len}};
}

inline void from_json(const nlohmann::json& j, MaskSamplingConfig& c) {
  const MaskSamplingConfig d = c;
  c.lambda = j.value("lambda", d.lambda);
  c.min_spans = j.value("min_spans", d.min_spans);
  c.max_spans = j.value("max_spans", d.max_spans);
  c.max_span_len = j.value("max_span_len", d.max_span_len);
}

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"batch_frame_budget", c.batch_frame_budget},
       {"total_steps", c.total_steps},
       {"grad_accum", c.grad_accum},
       {"optimizer", c.optimizer},
       {"scheduler", c.scheduler},
       {"mask", c.mask},
       {"seed", c.seed},
       {"checkpoint_every", c.checkpoint_every},
       {"log_every", c.log_every}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  const TrainConfig d = c;
  c.batch_frame_budget = j.value("batch_frame_budget", d.batch_frame_budget);
  c.total_steps = j.value("total_steps", d.total_steps);
  c.grad_accum = j.value("grad_accum", d.grad_accum);
  if (j.contains("optimizer")) j.at("optimizer").get_to(c.optimizer);
  if (j.contains("scheduler")) j.at("scheduler").get_to(c.scheduler);
  if (j.contains("mask")) j.at("mask").get_to(c.mask);
  c.seed = j.value("seed", d.seed);
  c.checkpoint_every = j.value("checkpoint_every", d.checkpoint_every);
  c.log_every = j.value("log_every", d.log_every);
}

// One training utterance: transcript ids and its codec tokens.
struct Utterance {
  std::string id;
  std::vector<int> text;
  CodecMatrix tokens;
};

// Rearranges one utterance with the given spans into a training example.
inline Example make_example(const ModelConfig& cfg, const Utterance& u,
                            std::span<const Span> spans) {
  Example ex;
  ex.id = u.id;
  ex.text = u.text;
  ex.stacked = delay_stack(causal_mask(u.tokens, spans)).items;
  build_targets(cfg, ex);
  return ex;
}

struct BatchBuild {
  Batch batch;
  std::vector<std::string> skipped;  // utterances over the frame budget
};

// Samples spans per utterance and packs examples in slice order until the
// next one would overflow the frame budget.
template <class Rng>
BatchBuild make_batch(std::span<const Utterance> slice, const TrainConfig& tc,
                      const ModelConfig& mc, Rng& rng) {
  if (slice.empty()) throw InvalidInput("cannot build a batch from an empty corpus slice");
  BatchBuild out;
  for (const Utterance& u : slice) {
    if (u.tokens.frames() == 0) {
      out.skipped.push_back(u.id);
      continue;
    }
    const auto spans = sample_mask_spans(u.tokens.frames(), tc.mask, rng);
    Example ex = make_example(mc, u, spans);
    const std::size_t steps = ex.stacked.size();
    if (steps > tc.batch_frame_budget ||
        ex.text.size() + steps > static_cast<std::size_t>(mc.max_positions)) {
      out.skipped.push_back(u.id);
      continue;
    }
    if (out.batch.frames + steps > tc.batch_frame_budget) break;
    out.batch.frames += steps;
    out.batch.examples.push_back(std::move(ex));
  }
  if (out.batch.empty()) throw InvalidInput("no utterance in the slice fits the frame budget");
  return out;
}

class AdamW {
 public:
  AdamW(const Params<float>& like, AdamWConfig cfg)
      : cfg_(cfg), state_{0, like.zeros_like(), like.zeros_like()} {}
  AdamW(OptimizerState state, AdamWConfig cfg) : cfg_(cfg), state_(std::move(state)) {}

  const OptimizerState& state() const noexcept { return state_; }

  // Clips grads in place to the configured global norm; returns the norm
  // before clipping.
  double clip(Params<float>& grads) const {
    double sq = 0.0;
    grads.visit([&](const std::string&, const Mat<float>& g) {
      sq += g.cast<double>().squaredNorm();
    });
    const double norm = std::sqrt(sq);
    if (cfg_.grad_clip > 0.0 && norm > cfg_.grad_clip) {
      const float scale = static_cast<float>(cfg_.grad_clip / norm);
      grads.visit([&](const std::string&, Mat<float>& g) { g *= scale; });
    }
    return norm;
  }

  // Weight decay applies to matrices only, not to gains, biases or
  // embedding tables.
  void step(Params<float>& params, const Params<float>& grads, double lr) {
    ++state_.t;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(state_.t));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(state_.t));
    auto p = params.tensors();
    auto g = grads.tensors();
    auto m = state_.m.tensors();
    auto v = state_.v.tensors();
    std::vector<std::string> names;
    params.visit([&](const std::string& n, const Mat<float>&) { names.push_back(n); });
    const auto b1 = static_cast<float>(cfg_.beta1);
    const auto b2 = static_cast<float>(cfg_.beta2);
    const auto step_size = static_cast<float>(lr / bc1);
    const auto inv_bc2 = static_cast<float>(1.0 / bc2);
    const auto eps = static_cast<float>(cfg_.eps);
    for (std::size_t i = 0; i < p.size(); ++i) {
      const bool decay = p[i]->rows() > 1 && names[i].find("emb") == std::string::npos;
      if (decay && cfg_.weight_decay > 0.0) *p[i] *= static_cast<float>(1.0 - lr * cfg_.weight_decay);
      m[i]->array() = b1 * m[i]->array() + (1.0f - b1) * g[i]->array();
      v[i]->array() = b2 * v[i]->array() + (1.0f - b2) * g[i]->array().square();
      p[i]->array() -= step_size * m[i]->array() / ((v[i]->array() * inv_bc2).sqrt() + eps);
    }
  }

 private:
  AdamWConfig cfg_;
  OptimizerState state_;
};

struct StepRecord {
  std::uint64_t step = 0;
  double lr = 0.0;
  double loss = 0.0;
  std::vector<double> per_codebook;
  double grad_norm = 0.0;
  std::size_t frames = 0;
};

inline void to_json(nlohmann::json& j, const StepRecord& r) {
  j = {{"step", r.step},           {"lr", r.lr},
       {"loss", r.loss},           {"per_codebook", r.per_codebook},
       {"grad_norm", r.grad_norm}, {"frames", r.frames}};
}

// Loss and gradient of one packed batch, accumulated into grads scaled by
// `scale`.
template <class T>
LossResult batch_loss(const Transformer<T>& model, const Batch& batch, Params<T>* grads,
                      double scale = 1.0) {
  const PackedBatch packed = pack_batch(model.config(), batch);
  Activations<T> act;
  model.forward(packed.input, act);
  std::vector<Mat<T>> dlogits;
  LossResult res = weighted_loss<T>(act.logits, packed.targets, packed.loss_mask,
                                    model.config().loss_weights, grads ? &dlogits : nullptr);
  if (grads && !res.all_masked) {
    if (scale != 1.0) {
      for (auto& d : dlogits) d *= static_cast<T>(scale);
    }
    model.backward(packed.input, act, dlogits, *grads);
  }
  return res;
}

struct TrainState {
  Transformer<float> model;
  AdamW optimizer;
  std::uint64_t step = 0;
  std::mt19937_64 rng;

  TrainState(const ModelConfig& mc, const TrainConfig& tc)
      : model(mc), optimizer(model.params(), tc.optimizer), rng(tc.seed) {}

  TrainState(Checkpoint ck, const TrainConfig& tc)
      : model(ck.config, std::move(ck.params)),
        optimizer(ck.optimizer ? std::move(*ck.optimizer)
                               : OptimizerState{0, model.params().zeros_like(),
                                                model.params().zeros_like()},
                  tc.optimizer),
        step(ck.step) {
    std::istringstream is(ck.rng_state);
    is >> rng;
    if (!is) throw IoError("checkpoint RNG state unreadable");
  }

  Checkpoint checkpoint() const {
    std::ostringstream os;
    os << rng;
    return Checkpoint{model.config(), model.params(), step, os.str(), optimizer.state()};
  }
};

struct TrainHooks {
  std::ostream* metric_log = nullptr;                   // JSONL step records
  std::ostream* diagnostics = nullptr;                  // warnings
  std::optional<std::filesystem::path> checkpoint_dir;  // ckpt-<step>.bin and last.bin
  std::function<void(const StepRecord&)> on_step;
};

struct TrainSummary {
  std::uint64_t first_step = 0;
  std::uint64_t last_step = 0;
  std::vector<StepRecord> records;
  std::vector<std::filesystem::path> checkpoints;
  double seconds = 0.0;
};

// Draws utterances uniformly (with replacement across steps) from the
// corpus until the frame budget is reached.
template <class Rng>
Batch draw_batch(std::span<const Utterance> corpus, const TrainConfig& tc, const ModelConfig& mc,
                 Rng& rng, std::ostream* diagnostics) {
  if (corpus.empty()) throw InvalidInput("training corpus is empty");
  std::uniform_int_distribution<std::size_t> pick(0, corpus.size() - 1);
  Batch batch;
  // Bounded attempts: an oversized draw ends the batch.
  for (std::size_t attempt = 0; attempt < corpus.size() + 64; ++attempt) {
    const Utterance& u = corpus[pick(rng)];
    const std::size_t frames = u.tokens.frames();
    if (frames == 0) continue;
    const auto spans = sample_mask_spans(frames, tc.mask, rng);
    Example ex = make_example(mc, u, spans);
    const std::size_t steps = ex.stacked.size();
    if (steps > tc.batch_frame_budget ||
        ex.text.size() + steps > static_cast<std::size_t>(mc.max_positions)) {
      if (diagnostics) *diagnostics << "warning: skipping " << u.id << " (over frame budget)\n";
      continue;
    }
    if (batch.frames + steps > tc.batch_frame_budget) break;
    batch.frames += steps;
    batch.examples.push_back(std::move(ex));
  }
  if (batch.empty()) throw InvalidInput("no utterance fits the frame budget");
  return batch;
}

inline TrainSummary train_loop(TrainState& state, std::span<const Utterance> corpus,
                               const TrainConfig& tc, const TrainHooks& hooks = {}) {
  tc.validate();
  const auto t0 = std::chrono::steady_clock::now();
  TrainSummary summary;
  summary.first_step = state.step;
  const ModelConfig& mc = state.model.config();
  Params<float> grads = state.model.params().zeros_like();

  auto save = [&](const std::string& name) {
    if (!hooks.checkpoint_dir) return;
    const auto path = *hooks.checkpoint_dir / name;
    save_checkpoint(path, state.checkpoint());
    summary.checkpoints.push_back(path);
  };

  while (state.step < tc.total_steps) {
    grads.set_zero();
    StepRecord rec;
    rec.per_codebook.assign(mc.num_codebooks(), 0.0);
    std::vector<std::string> batch_ids;
    for (int a = 0; a < tc.grad_accum; ++a) {
      Batch batch = draw_batch(corpus, tc, mc, state.rng, hooks.diagnostics);
      for (const auto& ex : batch.examples) batch_ids.push_back(ex.id);
      const LossResult res = batch_loss(state.model, batch, &grads, 1.0 / tc.grad_accum);
      if (res.all_masked && hooks.diagnostics) {
        *hooks.diagnostics << "warning: step " << state.step << " batch has no scored targets\n";
      }
      rec.loss += res.total / tc.grad_accum;
      for (std::size_t k = 0; k < rec.per_codebook.size(); ++k) {
        rec.per_codebook[k] += res.per_codebook[k] / tc.grad_accum;
      }
      rec.frames += batch.frames;
    }
    rec.step = state.step;
    rec.lr = eden_lr(state.step, tc.scheduler);
    if (!std::isfinite(rec.loss)) {
      std::string ids;
      for (const auto& id : batch_ids) ids += (ids.empty() ? "" : ",") + id;
      throw NumericalError("non-finite loss at step " + std::to_string(state.step) +
                           " in batch [" + ids + "]");
    }
    rec.grad_norm = state.optimizer.clip(grads);
    if (!std::isfinite(rec.grad_norm)) {
      throw NumericalError("non-finite gradient norm at step " + std::to_string(state.step));
    }
    state.optimizer.step(state.model.params(), grads, rec.lr);
    ++state.step;
    if (hooks.metric_log && (rec.step % tc.log_every == 0 || state.step == tc.total_steps)) {
      *hooks.metric_log << nlohmann::json(rec).dump() << '\n';
    }
    if (hooks.on_step) hooks.on_step(rec);
    summary.records.push_back(std::move(rec));
    if (tc.checkpoint_every > 0 && state.step % tc.checkpoint_every == 0) {
      save("ckpt-" + std::to_string(state.step) + ".bin");
    }
  }
  save("last.bin");
  if (hooks.metric_log) hooks.metric_log->flush();
  summary.last_step = state.step;
  summary.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return summary;
}

}  // namespace vcraft
