#pragma once

// Decoder-only transformer over [W; Z]: summed codebook embeddings plus
// sinusoidal positions, pre-norm blocks with causal attention, and K
// independent MLP heads reading the same final hidden state.
//
// Batches are packed: sequences are concatenated row-wise so the dense
// projections run as single products, while attention is evaluated per
// sequence segment. Backward is hand-written; gradients accumulate.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "vcraft/codec_matrix.hpp"
#include "vcraft/errors.hpp"
#include "vcraft/model/config.hpp"
#include "vcraft/rearrange.hpp"

namespace vcraft {

template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using ColVec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

template <class T>
struct LayerParams {
  Mat<T> ln1_gain, ln1_bias;
  Mat<T> w_qkv, b_qkv;
  Mat<T> w_out, b_out;
  Mat<T> ln2_gain, ln2_bias;
  Mat<T> w_fc1, b_fc1;
  Mat<T> w_fc2, b_fc2;
};

template <class T>
struct HeadParams {
  std::vector<Mat<T>> weights;  // head_mlp_layers entries; last maps to the head vocab
  std::vector<Mat<T>> biases;
};

// Biases and gains are stored as 1 x n matrices so every tensor has the
// same type.
template <class T>
struct Params {
  Mat<T> text_emb;               // text_vocab x d
  std::vector<Mat<T>> code_emb;  // K tables, codebook_size x d
  Mat<T> special_emb;            // (max_masks + 3) x d, EMPTY last
  std::vector<LayerParams<T>> layers;
  Mat<T> lnf_gain, lnf_bias;
  std::vector<HeadParams<T>> heads;

  // Fixed visiting order; checkpoints and optimizer state rely on it.
  template <class F>
  void visit(F&& f) {
    visit_impl(*this, f);
  }
  template <class F>
  void visit(F&& f) const {
    visit_impl(*this, f);
  }

  std::vector<Mat<T>*> tensors() {
    std::vector<Mat<T>*> out;
    visit([&](const std::string&, Mat<T>& m) { out.push_back(&m); });
    return out;
  }
  std::vector<const Mat<T>*> tensors() const {
    std::vector<const Mat<T>*> out;
    visit([&](const std::string&, const Mat<T>& m) { out.push_back(&m); });
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    visit([&](const std::string&, const Mat<T>& m) { n += static_cast<std::size_t>(m.size()); });
    return n;
  }

  Params zeros_like() const {
    Params out = *this;
    out.visit([](const std::string&, Mat<T>& m) { m.setZero(); });
    return out;
  }

  void set_zero() {
    visit([](const std::string&, Mat<T>& m) { m.setZero(); });
  }

 private:
  template <class Self, class F>
  static void visit_impl(Self& p, F& f) {
    f("text_emb", p.text_emb);
    for (std::size_t k = 0; k < p.code_emb.size(); ++k) {
      f("code_emb." + std::to_string(k), p.code_emb[k]);
    }
    f("special_emb", p.special_emb);
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
      auto& L = p.layers[l];
      const std::string pre = "layers." + std::to_string(l) + ".";
      f(pre + "ln1.gain", L.ln1_gain);
      f(pre + "ln1.bias", L.ln1_bias);
      f(pre + "attn.w_qkv", L.w_qkv);
      f(pre + "attn.b_qkv", L.b_qkv);
      f(pre + "attn.w_out", L.w_out);
      f(pre + "attn.b_out", L.b_out);
      f(pre + "ln2.gain", L.ln2_gain);
      f(pre + "ln2.bias", L.ln2_bias);
      f(pre + "ffn.w_fc1", L.w_fc1);
      f(pre + "ffn.b_fc1", L.b_fc1);
      f(pre + "ffn.w_fc2", L.w_fc2);
      f(pre + "ffn.b_fc2", L.b_fc2);
    }
    f("lnf.gain", p.lnf_gain);
    f("lnf.bias", p.lnf_bias);
    for (std::size_t k = 0; k < p.heads.size(); ++k) {
      auto& H = p.heads[k];
      for (std::size_t i = 0; i < H.weights.size(); ++i) {
        const std::string pre = "heads." + std::to_string(k) + "." + std::to_string(i) + ".";
        f(pre + "weight", H.weights[i]);
        f(pre + "bias", H.biases[i]);
      }
    }
  }
};

// Row-wise description of one or more [W; Z] sequences.
struct PackedInput {
  enum class RowKind : std::uint8_t { kText, kFrame, kSpecial };

  struct Segment {
    std::size_t offset = 0;
    std::size_t length = 0;
    std::size_t text_length = 0;
  };

  // Which stacked positions feed the heads.
  enum class HeadRows : std::uint8_t {
    kAllStacked,        // every Z position (inference)
    kAllButLastStacked  // positions that have a next-step target (training)
  };

  std::size_t num_codebooks = 0;
  std::vector<Segment> segments;
  std::vector<RowKind> kind;
  std::vector<int> id;       // text id or special id
  std::vector<Token> codes;  // K per row; meaningful for frame rows
  std::vector<int> position;
  std::vector<std::size_t> head_rows;

  std::size_t rows() const noexcept { return kind.size(); }

  void add_sequence(const ModelConfig& cfg, std::span<const int> text,
                    std::span<const Step> stacked, HeadRows which) {
    const std::size_t kc = cfg.num_codebooks();
    if (num_codebooks == 0) num_codebooks = kc;
    const std::size_t length = text.size() + stacked.size();
    if (length > static_cast<std::size_t>(cfg.max_positions)) {
      throw CapacityError("sequence of " + std::to_string(length) + " positions exceeds " +
                          std::to_string(cfg.max_positions));
    }
    Segment seg{rows(), length, text.size()};
    for (std::size_t i = 0; i < text.size(); ++i) {
      if (text[i] < 0 || text[i] >= cfg.text_vocab_size) {
        throw VocabularyError("text id " + std::to_string(text[i]) + " out of vocabulary");
      }
      push(RowKind::kText, text[i], nullptr, kc, static_cast<int>(i));
    }
    for (std::size_t j = 0; j < stacked.size(); ++j) {
      const Step& s = stacked[j];
      const int pos = static_cast<int>(text.size() + j);
      if (s.is_frame()) {
        if (s.codes.size() != kc) throw VocabularyError("stacked step has wrong codebook count");
        for (std::size_t k = 0; k < kc; ++k) {
          const Token c = s.codes[k];
          if (c != kEmptyToken && (c < 0 || c >= cfg.codebook_sizes[k])) {
            throw VocabularyError("code " + std::to_string(c) + " out of vocabulary for codebook " +
                                  std::to_string(k));
          }
        }
        push(RowKind::kFrame, 0, s.codes.data(), kc, pos);
      } else {
        push(RowKind::kSpecial, special_id(cfg, s), nullptr, kc, pos);
      }
    }
    const std::size_t last = which == HeadRows::kAllStacked ? stacked.size()
                                                            : (stacked.empty() ? 0 : stacked.size() - 1);
    for (std::size_t j = 0; j < last; ++j) head_rows.push_back(seg.offset + text.size() + j);
    segments.push_back(seg);
  }

  static int special_id(const ModelConfig& cfg, const Step& s) {
    switch (s.kind) {
      case StepKind::kMask:
        if (s.mask_index < 1 || s.mask_index > cfg.max_masks) {
          throw VocabularyError("mask index " + std::to_string(s.mask_index) +
                                " exceeds model capacity of " + std::to_string(cfg.max_masks));
        }
        return cfg.mask_special(s.mask_index);
      case StepKind::kEos:
        return cfg.eos_special();
      case StepKind::kEou:
        return cfg.eou_special();
      case StepKind::kFrame:
        break;
    }
    throw VocabularyError("frame step has no special id");
  }

 private:
  void push(RowKind k, int identifier, const Token* c, std::size_t kc, int pos) {
    kind.push_back(k);
    id.push_back(identifier);
    for (std::size_t i = 0; i < kc; ++i) codes.push_back(c ? c[i] : kEmptyToken);
    position.push_back(pos);
  }
};

template <class T>
struct LayerCache {
  Mat<T> x_in, xhat1, h1, qkv, att, x_mid, xhat2, h2, u, g;
  ColVec<T> rstd1, rstd2;
  std::vector<Mat<T>> probs;  // [segment * num_heads + head]
};

template <class T>
struct Activations {
  Mat<T> x0;
  std::vector<LayerCache<T>> layers;
  Mat<T> x_final, xhatf, hf;
  ColVec<T> rstdf;
  Mat<T> head_in;                            // gathered head rows x d
  std::vector<std::vector<Mat<T>>> head_pre;  // [k][hidden layer]
  std::vector<std::vector<Mat<T>>> head_act;
  std::vector<Mat<T>> logits;  // [k] rows x head_vocab(k)
};

namespace nn {

template <class T>
inline T gelu(T x) {
  const T c = static_cast<T>(std::sqrt(2.0 / std::numbers::pi));
  return T(0.5) * x * (T(1) + std::tanh(c * (x + T(0.044715) * x * x * x)));
}

template <class T>
inline T gelu_grad(T x) {
  const T c = static_cast<T>(std::sqrt(2.0 / std::numbers::pi));
  const T t = std::tanh(c * (x + T(0.044715) * x * x * x));
  return T(0.5) * (T(1) + t) + T(0.5) * x * (T(1) - t * t) * c * (T(1) + T(3 * 0.044715) * x * x);
}

// Elementwise forms over whole matrices; Eigen vectorizes tanh.
template <class T>
Mat<T> gelu(const Mat<T>& x) {
  const T c = static_cast<T>(std::sqrt(2.0 / std::numbers::pi));
  const auto a = x.array();
  return (T(0.5) * a * (T(1) + (c * (a + T(0.044715) * a.cube())).tanh())).matrix();
}

template <class T>
Mat<T> gelu_grad(const Mat<T>& x) {
  const T c = static_cast<T>(std::sqrt(2.0 / std::numbers::pi));
  const auto a = x.array();
  const auto t = (c * (a + T(0.044715) * a.cube())).tanh().eval();
  return (T(0.5) * (T(1) + t) +
          T(0.5) * a * (T(1) - t.square()) * c * (T(1) + T(3 * 0.044715) * a.square()))
      .matrix();
}

template <class T>
void layer_norm(const Mat<T>& x, const Mat<T>& gain, const Mat<T>& bias, T eps, Mat<T>& xhat,
                ColVec<T>& rstd, Mat<T>& y) {
  const auto n = x.rows();
  const auto d = x.cols();
  xhat.resize(n, d);
  rstd.resize(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const T mu = x.row(r).mean();
    const T var = (x.row(r).array() - mu).square().mean();
    rstd(r) = T(1) / std::sqrt(var + eps);
    xhat.row(r) = (x.row(r).array() - mu) * rstd(r);
  }
  y = (xhat.array().rowwise() * gain.row(0).array()).rowwise() + bias.row(0).array();
}

template <class T>
void layer_norm_backward(const Mat<T>& dy, const Mat<T>& xhat, const ColVec<T>& rstd,
                         const Mat<T>& gain, Mat<T>& dgain, Mat<T>& dbias, Mat<T>& dx) {
  const auto d = static_cast<T>(xhat.cols());
  Mat<T> dxhat = dy.array().rowwise() * gain.row(0).array();
  dgain.row(0) += (dy.array() * xhat.array()).colwise().sum().matrix();
  dbias.row(0) += dy.colwise().sum();
  dx.resize(dy.rows(), dy.cols());
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    const T mean_d = dxhat.row(r).sum() / d;
    const T mean_dx = dxhat.row(r).dot(xhat.row(r)) / d;
    dx.row(r) = rstd(r) * (dxhat.row(r).array() - mean_d - xhat.row(r).array() * mean_dx).matrix();
  }
}

// Softmax over the causal prefix of each row; entries above the diagonal
// become exact zeros.
template <class T>
void causal_softmax(Mat<T>& s) {
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    const T m = s.row(i).head(i + 1).maxCoeff();
    T sum = 0;
    for (Eigen::Index j = 0; j <= i; ++j) {
      const T e = std::exp(s(i, j) - m);
      s(i, j) = e;
      sum += e;
    }
    s.row(i).head(i + 1) /= sum;
    if (i + 1 < s.cols()) s.row(i).tail(s.cols() - i - 1).setZero();
  }
}

}  // namespace nn

template <class T>
class DecodeSession;

template <class T>
class Transformer {
 public:
  using Scalar = T;

  explicit Transformer(ModelConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    build_positional_table();
    initialize();
  }

  Transformer(ModelConfig cfg, Params<T> params) : cfg_(std::move(cfg)) {
    cfg_.validate();
    build_positional_table();
    initialize();
    auto dst = params_.tensors();
    auto src = params.tensors();
    for (std::size_t i = 0; i < dst.size(); ++i) {
      if (dst[i]->rows() != src[i]->rows() || dst[i]->cols() != src[i]->cols()) {
        throw InvalidInput("parameter shape mismatch at tensor " + std::to_string(i));
      }
    }
    params_ = std::move(params);
  }

  const ModelConfig& config() const noexcept { return cfg_; }
  Params<T>& params() noexcept { return params_; }
  const Params<T>& params() const noexcept { return params_; }

  // Sinusoidal encoding: even dims sin(pos / 10000^(2i/d)), odd dims cos.
  const Mat<T>& positional_table() const noexcept { return pe_; }

  // Summed embedding of one row plus its positional encoding.
  void embed_row(const PackedInput& in, std::size_t r, Eigen::Ref<Mat<T>> out_row) const {
    embed(in.kind[r], in.id[r], in.codes.data() + r * cfg_.num_codebooks(), in.position[r],
          out_row);
  }

  void forward(const PackedInput& in, Activations<T>& act) const {
    const auto n = static_cast<Eigen::Index>(in.rows());
    const auto d = static_cast<Eigen::Index>(cfg_.hidden_dim);
    const int nh = cfg_.num_heads;
    const Eigen::Index hd = d / nh;
    const T scale = T(1) / std::sqrt(static_cast<T>(hd));
    const T eps = static_cast<T>(cfg_.layer_norm_eps);

    act.x0.resize(n, d);
    for (Eigen::Index r = 0; r < n; ++r) embed_row(in, static_cast<std::size_t>(r), act.x0.row(r));

    act.layers.resize(params_.layers.size());
    const Mat<T>* x = &act.x0;
    for (std::size_t l = 0; l < params_.layers.size(); ++l) {
      const auto& P = params_.layers[l];
      auto& C = act.layers[l];
      C.x_in = *x;
      nn::layer_norm(C.x_in, P.ln1_gain, P.ln1_bias, eps, C.xhat1, C.rstd1, C.h1);
      C.qkv.noalias() = C.h1 * P.w_qkv;
      C.qkv.rowwise() += P.b_qkv.row(0);
      C.att.resize(n, d);
      C.probs.resize(in.segments.size() * static_cast<std::size_t>(nh));
      for (std::size_t s = 0; s < in.segments.size(); ++s) {
        const auto o = static_cast<Eigen::Index>(in.segments[s].offset);
        const auto len = static_cast<Eigen::Index>(in.segments[s].length);
        for (int h = 0; h < nh; ++h) {
          auto q = C.qkv.block(o, h * hd, len, hd);
          auto k = C.qkv.block(o, d + h * hd, len, hd);
          auto v = C.qkv.block(o, 2 * d + h * hd, len, hd);
          Mat<T>& p = C.probs[s * static_cast<std::size_t>(nh) + static_cast<std::size_t>(h)];
          p.noalias() = (q * k.transpose()) * scale;
          nn::causal_softmax(p);
          C.att.block(o, h * hd, len, hd).noalias() = p * v;
        }
      }
      C.x_mid.noalias() = C.att * P.w_out;
      C.x_mid.rowwise() += P.b_out.row(0);
      C.x_mid += C.x_in;
      nn::layer_norm(C.x_mid, P.ln2_gain, P.ln2_bias, eps, C.xhat2, C.rstd2, C.h2);
      C.u.noalias() = C.h2 * P.w_fc1;
      C.u.rowwise() += P.b_fc1.row(0);
      C.g = nn::gelu(C.u);
      act.x_final.noalias() = C.g * P.w_fc2;
      act.x_final.rowwise() += P.b_fc2.row(0);
      act.x_final += C.x_mid;
      x = &act.x_final;
    }
    nn::layer_norm(act.x_final, params_.lnf_gain, params_.lnf_bias, eps, act.xhatf, act.rstdf,
                   act.hf);

    const auto rows = static_cast<Eigen::Index>(in.head_rows.size());
    act.head_in.resize(rows, d);
    for (Eigen::Index i = 0; i < rows; ++i) {
      act.head_in.row(i) = act.hf.row(static_cast<Eigen::Index>(in.head_rows[static_cast<std::size_t>(i)]));
    }
    run_heads(act.head_in, act);
  }

  // Accumulates parameter gradients given dL/dlogits for every head.
  void backward(const PackedInput& in, const Activations<T>& act,
                const std::vector<Mat<T>>& dlogits, Params<T>& grads) const {
    const auto n = static_cast<Eigen::Index>(in.rows());
    const auto d = static_cast<Eigen::Index>(cfg_.hidden_dim);
    const int nh = cfg_.num_heads;
    const Eigen::Index hd = d / nh;
    const T scale = T(1) / std::sqrt(static_cast<T>(hd));

    // Heads: independent MLPs over the same gathered hidden rows.
    Mat<T> dhead_in = Mat<T>::Zero(act.head_in.rows(), d);
    for (std::size_t k = 0; k < params_.heads.size(); ++k) {
      const auto& H = params_.heads[k];
      auto& G = grads.heads[k];
      const std::size_t layers = H.weights.size();
      Mat<T> dy = dlogits[k];
      for (std::size_t i = layers; i-- > 0;) {
        const Mat<T>& input = i == 0 ? act.head_in : act.head_act[k][i - 1];
        G.weights[i].noalias() += input.transpose() * dy;
        G.biases[i].row(0) += dy.colwise().sum();
        Mat<T> dinput = dy * H.weights[i].transpose();
        if (i == 0) {
          dhead_in += dinput;
        } else {
          const Mat<T>& pre = act.head_pre[k][i - 1];
          dy = dinput.array() * nn::gelu_grad(pre).array();
        }
      }
    }

    Mat<T> dhf = Mat<T>::Zero(n, d);
    for (std::size_t i = 0; i < in.head_rows.size(); ++i) {
      dhf.row(static_cast<Eigen::Index>(in.head_rows[i])) += dhead_in.row(static_cast<Eigen::Index>(i));
    }
    Mat<T> dx;
    nn::layer_norm_backward(dhf, act.xhatf, act.rstdf, params_.lnf_gain, grads.lnf_gain,
                            grads.lnf_bias, dx);

    for (std::size_t l = params_.layers.size(); l-- > 0;) {
      const auto& P = params_.layers[l];
      const auto& C = act.layers[l];
      auto& G = grads.layers[l];
      // FFN branch: x_out = x_mid + gelu(h2 W1 + b1) W2 + b2
      G.w_fc2.noalias() += C.g.transpose() * dx;
      G.b_fc2.row(0) += dx.colwise().sum();
      Mat<T> du = (dx * P.w_fc2.transpose()).array() *
                  nn::gelu_grad(C.u).array();
      G.w_fc1.noalias() += C.h2.transpose() * du;
      G.b_fc1.row(0) += du.colwise().sum();
      Mat<T> dh2 = du * P.w_fc1.transpose();
      Mat<T> dmid;
      nn::layer_norm_backward(dh2, C.xhat2, C.rstd2, P.ln2_gain, G.ln2_gain, G.ln2_bias, dmid);
      dmid += dx;
      // Attention branch: x_mid = x_in + att W_o + b_o
      G.w_out.noalias() += C.att.transpose() * dmid;
      G.b_out.row(0) += dmid.colwise().sum();
      Mat<T> datt = dmid * P.w_out.transpose();
      Mat<T> dqkv(n, 3 * d);
      for (std::size_t s = 0; s < in.segments.size(); ++s) {
        const auto o = static_cast<Eigen::Index>(in.segments[s].offset);
        const auto len = static_cast<Eigen::Index>(in.segments[s].length);
        for (int h = 0; h < nh; ++h) {
          const Mat<T>& p = C.probs[s * static_cast<std::size_t>(nh) + static_cast<std::size_t>(h)];
          auto q = C.qkv.block(o, h * hd, len, hd);
          auto k = C.qkv.block(o, d + h * hd, len, hd);
          auto v = C.qkv.block(o, 2 * d + h * hd, len, hd);
          auto dout = datt.block(o, h * hd, len, hd);
          Mat<T> dp = dout * v.transpose();
          dqkv.block(o, 2 * d + h * hd, len, hd).noalias() = p.transpose() * dout;
          // Softmax Jacobian row-wise: ds = p * (dp - <p, dp>)
          ColVec<T> inner = (p.array() * dp.array()).rowwise().sum();
          Mat<T> ds = p.array() * (dp.colwise() - inner).array();
          ds *= scale;
          dqkv.block(o, h * hd, len, hd).noalias() = ds * k;
          dqkv.block(o, d + h * hd, len, hd).noalias() = ds.transpose() * q;
        }
      }
      G.w_qkv.noalias() += C.h1.transpose() * dqkv;
      G.b_qkv.row(0) += dqkv.colwise().sum();
      Mat<T> dh1 = dqkv * P.w_qkv.transpose();
      Mat<T> dxin;
      nn::layer_norm_backward(dh1, C.xhat1, C.rstd1, P.ln1_gain, G.ln1_gain, G.ln1_bias, dxin);
      dx = dxin + dmid;
    }

    // Embedding scatter.
    const std::size_t kc = cfg_.num_codebooks();
    for (Eigen::Index r = 0; r < n; ++r) {
      const auto ur = static_cast<std::size_t>(r);
      switch (in.kind[ur]) {
        case PackedInput::RowKind::kText:
          grads.text_emb.row(in.id[ur]) += dx.row(r);
          break;
        case PackedInput::RowKind::kSpecial:
          grads.special_emb.row(in.id[ur]) += dx.row(r);
          break;
        case PackedInput::RowKind::kFrame:
          for (std::size_t k = 0; k < kc; ++k) {
            const Token c = in.codes[ur * kc + k];
            if (c == kEmptyToken) {
              grads.special_emb.row(cfg_.empty_special()) += dx.row(r);
            } else {
              grads.code_emb[k].row(c) += dx.row(r);
            }
          }
          break;
      }
    }
  }

  // Logits for every stacked position of one sequence: entry k has one row
  // per element of `stacked`, predicting the element after it.
  std::vector<Mat<T>> logits(std::span<const int> text, std::span<const Step> stacked) const {
    PackedInput in;
    in.add_sequence(cfg_, text, stacked, PackedInput::HeadRows::kAllStacked);
    Activations<T> act;
    forward(in, act);
    return act.logits;
  }

  DecodeSession<T> start(std::span<const int> text) const;

  // Head MLPs over already-normalized hidden rows.
  void run_heads(const Mat<T>& hidden, Activations<T>& act) const {
    const std::size_t kc = params_.heads.size();
    act.head_pre.assign(kc, {});
    act.head_act.assign(kc, {});
    act.logits.assign(kc, Mat<T>());
    for (std::size_t k = 0; k < kc; ++k) {
      const auto& H = params_.heads[k];
      act.head_pre[k].reserve(H.weights.size());
      act.head_act[k].reserve(H.weights.size());
      const Mat<T>* input = &hidden;
      for (std::size_t i = 0; i + 1 < H.weights.size(); ++i) {
        Mat<T> pre = *input * H.weights[i];
        pre.rowwise() += H.biases[i].row(0);
        act.head_act[k].push_back(nn::gelu(pre));
        act.head_pre[k].push_back(std::move(pre));
        input = &act.head_act[k].back();
      }
      act.logits[k].noalias() = *input * H.weights.back();
      act.logits[k].rowwise() += H.biases.back().row(0);
    }
  }

  void embed(PackedInput::RowKind kind, int id, const Token* codes, int position,
             Eigen::Ref<Mat<T>> out) const {
    if (position < 0 || position >= cfg_.max_positions) {
      throw CapacityError("position " + std::to_string(position) + " exceeds max_positions");
    }
    switch (kind) {
      case PackedInput::RowKind::kText:
        out = params_.text_emb.row(id);
        break;
      case PackedInput::RowKind::kSpecial:
        out = params_.special_emb.row(id);
        break;
      case PackedInput::RowKind::kFrame:
        out.setZero();
        for (std::size_t k = 0; k < cfg_.num_codebooks(); ++k) {
          out += codes[k] == kEmptyToken ? params_.special_emb.row(cfg_.empty_special())
                                         : params_.code_emb[k].row(codes[k]);
        }
        break;
    }
    out += pe_.row(position);
  }

 private:
  void build_positional_table() {
    const int d = cfg_.hidden_dim;
    pe_.resize(cfg_.max_positions, d);
    for (int pos = 0; pos < cfg_.max_positions; ++pos) {
      for (int i = 0; i < d / 2; ++i) {
        const double angle = pos / std::pow(10000.0, 2.0 * i / d);
        pe_(pos, 2 * i) = static_cast<T>(std::sin(angle));
        pe_(pos, 2 * i + 1) = static_cast<T>(std::cos(angle));
      }
    }
  }

  void initialize() {
    std::mt19937_64 rng(cfg_.init_seed);
    const auto d = static_cast<Eigen::Index>(cfg_.hidden_dim);
    const auto f = static_cast<Eigen::Index>(cfg_.ffn_dim);
    const double std_main = cfg_.init_std;
    const double std_proj = cfg_.init_std / std::sqrt(2.0 * cfg_.num_layers);
    auto normal = [&](Eigen::Index r, Eigen::Index c, double sd) {
      std::normal_distribution<double> dist(0.0, sd);
      Mat<T> m(r, c);
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(dist(rng));
      return m;
    };
    auto zeros = [](Eigen::Index c) { return Mat<T>::Zero(1, c).eval(); };
    auto ones = [](Eigen::Index c) { return Mat<T>::Ones(1, c).eval(); };

    const double std_emb = cfg_.embed_init_std;
    params_.text_emb = normal(cfg_.text_vocab_size, d, std_emb);
    params_.code_emb.clear();
    for (int size : cfg_.codebook_sizes) params_.code_emb.push_back(normal(size, d, std_emb));
    params_.special_emb = normal(cfg_.special_count(), d, std_emb);
    params_.layers.clear();
    for (int l = 0; l < cfg_.num_layers; ++l) {
      LayerParams<T> L;
      L.ln1_gain = ones(d);
      L.ln1_bias = zeros(d);
      L.w_qkv = normal(d, 3 * d, std_main);
      L.b_qkv = zeros(3 * d);
      L.w_out = normal(d, d, std_proj);
      L.b_out = zeros(d);
      L.ln2_gain = ones(d);
      L.ln2_bias = zeros(d);
      L.w_fc1 = normal(d, f, std_main);
      L.b_fc1 = zeros(f);
      L.w_fc2 = normal(f, d, std_proj);
      L.b_fc2 = zeros(d);
      params_.layers.push_back(std::move(L));
    }
    params_.lnf_gain = ones(d);
    params_.lnf_bias = zeros(d);
    params_.heads.clear();
    for (std::size_t k = 0; k < cfg_.num_codebooks(); ++k) {
      HeadParams<T> H;
      for (int i = 0; i < cfg_.head_mlp_layers; ++i) {
        const bool last = i + 1 == cfg_.head_mlp_layers;
        const Eigen::Index out = last ? cfg_.head_vocab(k) : d;
        H.weights.push_back(normal(d, out, std_main));
        H.biases.push_back(zeros(out));
      }
      params_.heads.push_back(std::move(H));
    }
  }

  ModelConfig cfg_;
  Params<T> params_;
  Mat<T> pe_;
};

// Incremental decoding with a per-layer key/value cache. Feeding rows one
// at a time reproduces the packed forward pass up to rounding.
template <class T>
class DecodeSession {
 public:
  explicit DecodeSession(const Transformer<T>& model) : model_(&model) {
    const auto& cfg = model.config();
    const auto d = static_cast<Eigen::Index>(cfg.hidden_dim);
    keys_.assign(static_cast<std::size_t>(cfg.num_layers), Mat<T>(cfg.max_positions, d));
    values_.assign(static_cast<std::size_t>(cfg.num_layers), Mat<T>(cfg.max_positions, d));
  }

  std::size_t position() const noexcept { return pos_; }
  const ModelConfig& config() const noexcept { return model_->config(); }

  void feed_text(int id) {
    const auto& cfg = model_->config();
    if (id < 0 || id >= cfg.text_vocab_size) {
      throw VocabularyError("text id " + std::to_string(id) + " out of vocabulary");
    }
    run(PackedInput::RowKind::kText, id, nullptr);
  }

  void feed(const Step& step) {
    const auto& cfg = model_->config();
    if (step.is_frame()) {
      if (step.codes.size() != cfg.num_codebooks()) {
        throw VocabularyError("step has wrong codebook count");
      }
      for (std::size_t k = 0; k < step.codes.size(); ++k) {
        const Token c = step.codes[k];
        if (c != kEmptyToken && (c < 0 || c >= cfg.codebook_sizes[k])) {
          throw VocabularyError("code " + std::to_string(c) + " out of vocabulary");
        }
      }
      run(PackedInput::RowKind::kFrame, 0, step.codes.data());
    } else {
      run(PackedInput::RowKind::kSpecial, PackedInput::special_id(cfg, step), nullptr);
    }
  }

  // Logits of every head at the last fed position.
  std::vector<std::vector<double>> head_logits() const {
    if (pos_ == 0) throw InvalidInput("no position has been fed yet");
    Activations<T> act;
    model_->run_heads(hidden_, act);
    std::vector<std::vector<double>> out;
    for (const auto& l : act.logits) {
      out.emplace_back(l.data(), l.data() + l.size());
    }
    return out;
  }

 private:
  void run(PackedInput::RowKind kind, int id, const Token* codes) {
    const auto& cfg = model_->config();
    if (pos_ >= static_cast<std::size_t>(cfg.max_positions)) {
      throw CapacityError("decode session reached max_positions");
    }
    const auto& params = model_->params();
    const auto d = static_cast<Eigen::Index>(cfg.hidden_dim);
    const int nh = cfg.num_heads;
    const Eigen::Index hd = d / nh;
    const T scale = T(1) / std::sqrt(static_cast<T>(hd));
    const T eps = static_cast<T>(cfg.layer_norm_eps);
    const auto p = static_cast<Eigen::Index>(pos_);

    Mat<T> x(1, d);
    model_->embed(kind, id, codes, static_cast<int>(pos_), x.row(0));
    Mat<T> xhat, h, qkv, att(1, d), tmp;
    ColVec<T> rstd;
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
      const auto& P = params.layers[l];
      nn::layer_norm(x, P.ln1_gain, P.ln1_bias, eps, xhat, rstd, h);
      qkv.noalias() = h * P.w_qkv;
      qkv += P.b_qkv;
      keys_[l].row(p) = qkv.block(0, d, 1, d);
      values_[l].row(p) = qkv.block(0, 2 * d, 1, d);
      for (int hh = 0; hh < nh; ++hh) {
        auto q = qkv.block(0, hh * hd, 1, hd);
        auto k = keys_[l].block(0, hh * hd, p + 1, hd);
        auto v = values_[l].block(0, hh * hd, p + 1, hd);
        Mat<T> s = (q * k.transpose()) * scale;
        const T m = s.maxCoeff();
        s = (s.array() - m).exp();
        s /= s.sum();
        att.block(0, hh * hd, 1, hd).noalias() = s * v;
      }
      tmp.noalias() = att * P.w_out;
      x += tmp + P.b_out;
      nn::layer_norm(x, P.ln2_gain, P.ln2_bias, eps, xhat, rstd, h);
      Mat<T> u = h * P.w_fc1 + P.b_fc1;
      u = nn::gelu(u);
      tmp.noalias() = u * P.w_fc2;
      x += tmp + P.b_fc2;
    }
    nn::layer_norm(x, params.lnf_gain, params.lnf_bias, eps, xhat, rstd, hidden_);
    ++pos_;
  }

  const Transformer<T>* model_;
  std::vector<Mat<T>> keys_, values_;
  Mat<T> hidden_;
  std::size_t pos_ = 0;
};

template <class T>
DecodeSession<T> Transformer<T>::start(std::span<const int> text) const {
  DecodeSession<T> session(*this);
  for (int id : text) session.feed_text(id);
  return session;
}

}  // namespace vcraft
