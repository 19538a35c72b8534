#pragma once

// Next-step targets for stacked sequences and the weighted masked
// cross-entropy L = sum_k alpha_k * L_k.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "vcraft/model/config.hpp"
#include "vcraft/model/transformer.hpp"
#include "vcraft/rearrange.hpp"

namespace vcraft {

// One training sequence. Row t of targets/loss_mask (K entries each)
// holds the head-vocab ids of stacked item t + 1.
struct Example {
  std::string id;
  std::vector<int> text;
  std::vector<Step> stacked;
  std::vector<int> targets;
  std::vector<std::uint8_t> loss_mask;

  std::size_t positions() const noexcept { return stacked.empty() ? 0 : stacked.size() - 1; }
};

struct Batch {
  std::vector<Example> examples;
  std::size_t frames = 0;  // stacked steps across examples

  bool empty() const noexcept { return examples.empty(); }
};

// Fills targets and loss_mask from ex.stacked. Mask markers and EMPTY are
// unscored, except codebook 1's EMPTY when cfg.score_run_end is set.
inline void build_targets(const ModelConfig& cfg, Example& ex) {
  const std::size_t kc = cfg.num_codebooks();
  const std::size_t n = ex.positions();
  ex.targets.assign(n * kc, 0);
  ex.loss_mask.assign(n * kc, 0);
  for (std::size_t t = 0; t < n; ++t) {
    const Step& next = ex.stacked[t + 1];
    for (std::size_t k = 0; k < kc; ++k) {
      int target = 0;
      bool scored = true;
      switch (next.kind) {
        case StepKind::kFrame:
          if (next.codes[k] == kEmptyToken) {
            target = cfg.head_special(k, cfg.empty_special());
            scored = k == 0 && cfg.score_run_end;
          } else {
            target = next.codes[k];
          }
          break;
        case StepKind::kMask:
          target = cfg.head_special(k, PackedInput::special_id(cfg, next));
          scored = false;
          break;
        case StepKind::kEos:
          target = cfg.head_special(k, cfg.eos_special());
          break;
        case StepKind::kEou:
          target = cfg.head_special(k, cfg.eou_special());
          break;
      }
      ex.targets[t * kc + k] = target;
      ex.loss_mask[t * kc + k] = scored ? 1 : 0;
    }
  }
}

// Packed model input plus targets aligned with PackedInput::head_rows.
struct PackedBatch {
  PackedInput input;
  std::vector<int> targets;
  std::vector<std::uint8_t> loss_mask;
};

inline PackedBatch pack_batch(const ModelConfig& cfg, const Batch& batch) {
  PackedBatch out;
  for (const Example& ex : batch.examples) {
    out.input.add_sequence(cfg, ex.text, ex.stacked, PackedInput::HeadRows::kAllButLastStacked);
    out.targets.insert(out.targets.end(), ex.targets.begin(), ex.targets.end());
    out.loss_mask.insert(out.loss_mask.end(), ex.loss_mask.begin(), ex.loss_mask.end());
  }
  return out;
}

struct LossResult {
  double total = 0.0;
  std::vector<double> per_codebook;
  std::vector<std::size_t> counts;  // scored positions per codebook
  bool all_masked = false;
};

// logits[k] has one row per position; targets and mask are rows x K.
// When dlogits is given it receives dL/dlogits.
template <class T>
LossResult weighted_loss(const std::vector<Mat<T>>& logits, std::span<const int> targets,
                         std::span<const std::uint8_t> mask, std::span<const double> weights,
                         std::vector<Mat<T>>* dlogits = nullptr) {
  const std::size_t kc = logits.size();
  if (weights.size() != kc) throw InvalidInput("loss needs one weight per head");
  const std::size_t rows = kc == 0 ? 0 : static_cast<std::size_t>(logits[0].rows());
  if (targets.size() != rows * kc || mask.size() != rows * kc) {
    throw InvalidInput("targets and loss mask must have rows x K entries");
  }
  LossResult res;
  res.per_codebook.assign(kc, 0.0);
  res.counts.assign(kc, 0);
  if (dlogits) dlogits->assign(kc, Mat<T>());
  bool any = false;
  for (std::size_t k = 0; k < kc; ++k) {
    const Mat<T>& z = logits[k];
    if (static_cast<std::size_t>(z.rows()) != rows) throw InvalidInput("heads disagree on rows");
    std::size_t count = 0;
    for (std::size_t r = 0; r < rows; ++r) count += mask[r * kc + k] ? 1 : 0;
    res.counts[k] = count;
    if (dlogits) (*dlogits)[k] = Mat<T>::Zero(z.rows(), z.cols());
    if (count == 0) continue;
    any = true;
    double sum = 0.0;
    const double scale = weights[k] / static_cast<double>(count);
    for (std::size_t r = 0; r < rows; ++r) {
      if (!mask[r * kc + k]) continue;
      const int target = targets[r * kc + k];
      if (target < 0 || target >= z.cols()) throw InvalidInput("target outside head vocabulary");
      const auto row = z.row(static_cast<Eigen::Index>(r));
      const T m = row.maxCoeff();
      const auto e = (row.array() - m).exp().eval();
      const double denom = static_cast<double>(e.sum());
      const double log_z = static_cast<double>(m) + std::log(denom);
      sum += log_z - static_cast<double>(row(target));
      if (dlogits) {
        auto g = (*dlogits)[k].row(static_cast<Eigen::Index>(r));
        g = (e * static_cast<T>(scale / denom)).matrix();
        g(target) -= static_cast<T>(scale);
      }
    }
    res.per_codebook[k] = sum / static_cast<double>(count);
    res.total += weights[k] * res.per_codebook[k];
  }
  res.all_masked = !any;
  return res;
}

}  // namespace vcraft
