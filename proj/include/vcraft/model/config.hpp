#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "vcraft/errors.hpp"

namespace vcraft {

// Shape of the decoder and its K prediction heads. Each head scores its
// codebook's ids followed by the special ids
//   Mask(1..max_masks), EOS, EOU, EMPTY
// so specials are scored uniformly by every head.
struct ModelConfig {
  int num_layers = 2;
  int hidden_dim = 128;
  int ffn_dim = 512;
  int num_heads = 4;
  std::vector<int> codebook_sizes = {256, 256, 256, 256};
  int text_vocab_size = 26;
  int max_positions = 512;
  std::vector<double> loss_weights = {5.0, 1.0, 0.5, 0.1};
  int head_mlp_layers = 2;
  int max_masks = 3;
  // Small-transformer defaults; no dropout.
  double init_std = 0.02;
  // Embedding tables start larger so token identity is not drowned by the
  // unit-amplitude sinusoidal positions.
  double embed_init_std = 0.25;
  double layer_norm_eps = 1e-5;
  std::uint64_t init_seed = 1;
  // Score codebook 1's EMPTY targets. They mark where a frame run ends and
  // are the only end-of-span signal a model can learn; every other EMPTY
  // target stays unscored.
  bool score_run_end = true;

  std::size_t num_codebooks() const noexcept { return codebook_sizes.size(); }
  int special_count() const noexcept { return max_masks + 3; }
  int mask_special(int mask_index) const noexcept { return mask_index - 1; }
  int eos_special() const noexcept { return max_masks; }
  int eou_special() const noexcept { return max_masks + 1; }
  int empty_special() const noexcept { return max_masks + 2; }
  int head_vocab(std::size_t k) const { return codebook_sizes.at(k) + special_count(); }
  // Head output index of a special id.
  int head_special(std::size_t k, int special) const { return codebook_sizes.at(k) + special; }

  void validate() const {
    if (num_layers < 1) throw ConfigError("model.num_layers must be >= 1");
    if (hidden_dim < 2 || hidden_dim % 2 != 0) throw ConfigError("model.hidden_dim must be even");
    if (num_heads < 1 || hidden_dim % num_heads != 0) {
      throw ConfigError("model.hidden_dim must be divisible by model.num_heads");
    }
    if (ffn_dim < 1) throw ConfigError("model.ffn_dim must be >= 1");
    if (codebook_sizes.empty()) throw ConfigError("model.codebook_sizes needs K >= 1 entries");
    for (int s : codebook_sizes) {
      if (s < 1) throw ConfigError("model.codebook_sizes entries must be positive");
    }
    if (loss_weights.size() != codebook_sizes.size()) {
      throw ConfigError("model.loss_weights needs one weight per codebook");
    }
    for (double w : loss_weights) {
      if (!(w > 0.0)) throw ConfigError("model.loss_weights must all be > 0");
    }
    if (text_vocab_size < 1) throw ConfigError("model.text_vocab_size must be >= 1");
    if (max_positions < 1) throw ConfigError("model.max_positions must be >= 1");
    if (head_mlp_layers < 1) throw ConfigError("model.head_mlp_layers must be >= 1");
    if (max_masks < 1) throw ConfigError("model.max_masks must be >= 1");
    if (!(init_std > 0.0)) throw ConfigError("model.init_std must be > 0");
    if (!(embed_init_std > 0.0)) throw ConfigError("model.embed_init_std must be > 0");
  }
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"num_layers", c.num_layers},
                     {"hidden_dim", c.hidden_dim},
                     {"ffn_dim", c.ffn_dim},
                     {"num_heads", c.num_heads},
                     {"codebook_sizes", c.codebook_sizes},
                     {"text_vocab_size", c.text_vocab_size},
                     {"max_positions", c.max_positions},
                     {"loss_weights", c.loss_weights},
                     {"head_mlp_layers", c.head_mlp_layers},
                     {"max_masks", c.max_masks},
                     {"init_std", c.init_std},
                     {"embed_init_std", c.embed_init_std},
                     {"layer_norm_eps", c.layer_norm_eps},
                     {"init_seed", c.init_seed},
                     {"score_run_end", c.score_run_end}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  const ModelConfig d = c;
  c.num_layers = j.value("num_layers", d.num_layers);
  c.hidden_dim = j.value("hidden_dim", d.hidden_dim);
  c.ffn_dim = j.value("ffn_dim", d.ffn_dim);
  c.num_heads = j.value("num_heads", d.num_heads);
  c.codebook_sizes = j.value("codebook_sizes", d.codebook_sizes);
  c.text_vocab_size = j.value("text_vocab_size", d.text_vocab_size);
  c.max_positions = j.value("max_positions", d.max_positions);
  c.loss_weights = j.value("loss_weights", d.loss_weights);
  c.head_mlp_layers = j.value("head_mlp_layers", d.head_mlp_layers);
  c.max_masks = j.value("max_masks", d.max_masks);
  c.init_std = j.value("init_std", d.init_std);
  c.embed_init_std = j.value("embed_init_std", d.embed_init_std);
  c.layer_norm_eps = j.value("layer_norm_eps", d.layer_norm_eps);
  c.init_seed = j.value("init_seed", d.init_seed);
  c.score_run_end = j.value("score_run_end", d.score_run_end);
}

}  // namespace vcraft
