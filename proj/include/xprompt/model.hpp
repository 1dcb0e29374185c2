#ifndef XPROMPT_MODEL_HPP
#define XPROMPT_MODEL_HPP

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "xprompt/corpus.hpp"
#include "xprompt/error.hpp"
#include "xprompt/random.hpp"
#include "xprompt/syntax.hpp"
#include "xprompt/tensor.hpp"
#include "xprompt/vocab.hpp"

namespace xprompt {

struct EncoderConfig {
  int hidden_width = 16;
  int num_layers = 2;
  int num_heads = 2;
  int ffn_width = 64;
  int max_length = 256;
  /// False selects the seeded tiny encoder; true loads backbone weights.
  bool pretrained = false;

  void validate() const {
    if (hidden_width <= 0 || num_layers <= 0 || num_heads <= 0 || ffn_width <= 0 ||
        max_length <= 0) {
      throw ValidationError("encoder dimensions must be positive");
    }
    if (hidden_width % num_heads != 0) {
      throw ValidationError("hidden width must be divisible by the number of heads");
    }
  }
  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

enum class ParamGroup { backbone, prompts, heads };

template <typename Scalar>
struct NamedTensor {
  std::string name;
  ParamGroup group;
  Mat<Scalar>* value;
};

template <typename Scalar>
struct LayerParams {
  Mat<Scalar> ln1_gain, ln1_bias;
  Mat<Scalar> wq, wk, wv, wo;
  // No key bias: it shifts every score in a row equally and cancels in softmax.
  Mat<Scalar> bq, bv, bo;
  Mat<Scalar> ln2_gain, ln2_bias;
  Mat<Scalar> w1, b1, w2, b2;
};

template <typename Scalar>
struct HeadParams {
  Mat<Scalar> weight;  // fused width x classes
  Mat<Scalar> bias;    // 1 x classes

  int classes() const { return static_cast<int>(weight.cols()); }
};

/// Every parameter of the joint model: shared backbone, soft prompt bank,
/// and the aspect and syntax heads.
template <typename Scalar>
struct ModelParams {
  Mat<Scalar> token_embedding;     // vocab x d
  Mat<Scalar> position_embedding;  // max_length x d
  std::vector<LayerParams<Scalar>> layers;
  Mat<Scalar> final_gain, final_bias;
  Mat<Scalar> prompts;  // bank rows x d
  HeadParams<Scalar> aspect;
  HeadParams<Scalar> syntax;

  int width() const { return static_cast<int>(token_embedding.cols()); }

  std::vector<NamedTensor<Scalar>> tensors() {
    std::vector<NamedTensor<Scalar>> out;
    const auto bb = ParamGroup::backbone;
    out.push_back({"encoder.token_embedding", bb, &token_embedding});
    out.push_back({"encoder.position_embedding", bb, &position_embedding});
    for (std::size_t l = 0; l < layers.size(); ++l) {
      auto& p = layers[l];
      const std::string pre = "encoder.layer" + std::to_string(l) + ".";
      out.push_back({pre + "ln1_gain", bb, &p.ln1_gain});
      out.push_back({pre + "ln1_bias", bb, &p.ln1_bias});
      out.push_back({pre + "wq", bb, &p.wq});
      out.push_back({pre + "bq", bb, &p.bq});
      out.push_back({pre + "wk", bb, &p.wk});
      out.push_back({pre + "wv", bb, &p.wv});
      out.push_back({pre + "bv", bb, &p.bv});
      out.push_back({pre + "wo", bb, &p.wo});
      out.push_back({pre + "bo", bb, &p.bo});
      out.push_back({pre + "ln2_gain", bb, &p.ln2_gain});
      out.push_back({pre + "ln2_bias", bb, &p.ln2_bias});
      out.push_back({pre + "w1", bb, &p.w1});
      out.push_back({pre + "b1", bb, &p.b1});
      out.push_back({pre + "w2", bb, &p.w2});
      out.push_back({pre + "b2", bb, &p.b2});
    }
    out.push_back({"encoder.final_gain", bb, &final_gain});
    out.push_back({"encoder.final_bias", bb, &final_bias});
    out.push_back({"prompt_bank", ParamGroup::prompts, &prompts});
    out.push_back({"aspect_head.weight", ParamGroup::heads, &aspect.weight});
    out.push_back({"aspect_head.bias", ParamGroup::heads, &aspect.bias});
    out.push_back({"syntax_head.weight", ParamGroup::heads, &syntax.weight});
    out.push_back({"syntax_head.bias", ParamGroup::heads, &syntax.bias});
    return out;
  }

  /// Zero tensors with the same shapes (gradient and optimizer buffers).
  ModelParams zeros_like() const {
    ModelParams z = *this;
    for (auto& t : z.tensors()) t.value->setZero();
    return z;
  }

  template <typename To>
  ModelParams<To> cast() const {
    ModelParams<To> out;
    out.layers.resize(layers.size());
    auto self = const_cast<ModelParams*>(this)->tensors();
    auto dst = out.tensors();
    for (std::size_t i = 0; i < self.size(); ++i) *dst[i].value = self[i].value->template cast<To>();
    return out;
  }
};

namespace detail {

template <typename Scalar>
Mat<Scalar> gaussian(Rng& rng, int rows, int cols, double stddev) {
  Mat<Scalar> m(rows, cols);
  // Column-major fill order is part of the reproducibility contract.
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = static_cast<Scalar>(stddev * rng.normal());
  }
  return m;
}

}  // namespace detail

/// Fresh aspect (3-class) and syntax (`pos_classes`) heads over the fused
/// 3d-wide features.
template <typename Scalar>
void init_heads(ModelParams<Scalar>& p, int pos_classes, std::uint64_t seed) {
  if (pos_classes < 1) throw ValidationError("syntax head needs at least one class");
  const int d = p.width();
  Rng rng(derive_seed(seed, "init.heads"));
  const double stddev = 0.1 / std::sqrt(3.0 * d);
  p.aspect.weight = detail::gaussian<Scalar>(rng, 3 * d, 3, stddev);
  p.aspect.bias = Mat<Scalar>::Zero(1, 3);
  p.syntax.weight = detail::gaussian<Scalar>(rng, 3 * d, pos_classes, stddev);
  p.syntax.bias = Mat<Scalar>::Zero(1, pos_classes);
}

/// Seeded tiny-encoder initialization plus fresh heads. The prompt bank is
/// left with `prompt_rows` zero rows; build_prompt_bank fills it.
template <typename Scalar>
ModelParams<Scalar> init_model(const EncoderConfig& cfg, int vocab_size, int pos_classes,
                               int prompt_rows, std::uint64_t seed) {
  cfg.validate();
  const int d = cfg.hidden_width;
  const int f = cfg.ffn_width;
  Rng rng(derive_seed(seed, "init"));
  ModelParams<Scalar> p;
  p.token_embedding = detail::gaussian<Scalar>(rng, vocab_size, d, 1.0);
  p.position_embedding = detail::gaussian<Scalar>(rng, cfg.max_length, d, 0.1);
  const double attn_std = 1.0 / std::sqrt(static_cast<double>(d));
  for (int l = 0; l < cfg.num_layers; ++l) {
    LayerParams<Scalar> L;
    L.ln1_gain = Mat<Scalar>::Ones(1, d);
    L.ln1_bias = Mat<Scalar>::Zero(1, d);
    L.wq = detail::gaussian<Scalar>(rng, d, d, attn_std);
    L.wk = detail::gaussian<Scalar>(rng, d, d, attn_std);
    L.wv = detail::gaussian<Scalar>(rng, d, d, attn_std);
    L.wo = detail::gaussian<Scalar>(rng, d, d, attn_std);
    L.bq = Mat<Scalar>::Zero(1, d);
    L.bv = Mat<Scalar>::Zero(1, d);
    L.bo = Mat<Scalar>::Zero(1, d);
    L.ln2_gain = Mat<Scalar>::Ones(1, d);
    L.ln2_bias = Mat<Scalar>::Zero(1, d);
    L.w1 = detail::gaussian<Scalar>(rng, d, f, attn_std);
    L.b1 = Mat<Scalar>::Zero(1, f);
    L.w2 = detail::gaussian<Scalar>(rng, f, d, 1.0 / std::sqrt(static_cast<double>(f)));
    L.b2 = Mat<Scalar>::Zero(1, d);
    p.layers.push_back(std::move(L));
  }
  p.final_gain = Mat<Scalar>::Ones(1, d);
  p.final_bias = Mat<Scalar>::Zero(1, d);
  p.prompts = Mat<Scalar>::Zero(prompt_rows, d);
  init_heads(p, pos_classes, seed);
  return p;
}

// ---------------------------------------------------------------------------
// Encoder stack (pre-norm transformer, GELU feed-forward).

namespace detail {

inline constexpr double kLayerNormEps = 1e-5;

template <typename Scalar>
struct NormCache {
  Mat<Scalar> normalized;  // before gain/bias
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> inv_std;
};

template <typename Scalar>
Mat<Scalar> layer_norm(const Mat<Scalar>& x, const Mat<Scalar>& gain, const Mat<Scalar>& bias,
                       NormCache<Scalar>& cache) {
  const auto d = x.cols();
  cache.normalized.resize(x.rows(), d);
  cache.inv_std.resize(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const Scalar mean = x.row(r).mean();
    const auto centered = (x.row(r).array() - mean).matrix();
    const Scalar var = centered.squaredNorm() / static_cast<Scalar>(d);
    const Scalar inv = Scalar(1) / std::sqrt(var + static_cast<Scalar>(kLayerNormEps));
    cache.inv_std(r) = inv;
    cache.normalized.row(r) = centered * inv;
  }
  Mat<Scalar> y = (cache.normalized.array().rowwise() * gain.row(0).array()).matrix();
  y.rowwise() += bias.row(0);
  return y;
}

template <typename Scalar>
Mat<Scalar> layer_norm_backward(const Mat<Scalar>& dy, const Mat<Scalar>& gain,
                                const NormCache<Scalar>& cache, Mat<Scalar>& dgain,
                                Mat<Scalar>& dbias) {
  dgain += (dy.array() * cache.normalized.array()).colwise().sum().matrix();
  dbias += dy.colwise().sum();
  const Mat<Scalar> dxhat = (dy.array().rowwise() * gain.row(0).array()).matrix();
  const auto d = static_cast<Scalar>(dy.cols());
  Mat<Scalar> dx(dy.rows(), dy.cols());
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    const Scalar mean_g = dxhat.row(r).sum() / d;
    const Scalar mean_gx = dxhat.row(r).dot(cache.normalized.row(r)) / d;
    dx.row(r) = cache.inv_std(r) *
                (dxhat.row(r).array() - mean_g - cache.normalized.row(r).array() * mean_gx).matrix();
  }
  return dx;
}

template <typename Scalar>
Scalar gelu(Scalar x) {
  const Scalar c = static_cast<Scalar>(0.7978845608028654);  // sqrt(2/pi)
  return Scalar(0.5) * x * (Scalar(1) + std::tanh(c * (x + Scalar(0.044715) * x * x * x)));
}

template <typename Scalar>
Scalar gelu_grad(Scalar x) {
  const Scalar c = static_cast<Scalar>(0.7978845608028654);
  const Scalar inner = c * (x + Scalar(0.044715) * x * x * x);
  const Scalar t = std::tanh(inner);
  const Scalar dinner = c * (Scalar(1) + Scalar(3 * 0.044715) * x * x);
  return Scalar(0.5) * (Scalar(1) + t) + Scalar(0.5) * x * (Scalar(1) - t * t) * dinner;
}

template <typename Scalar>
struct LayerCache {
  Mat<Scalar> input;
  NormCache<Scalar> norm1;
  Mat<Scalar> h1, q, k, v;
  std::vector<Mat<Scalar>> attn;  // per head, L x L
  Mat<Scalar> context;
  Mat<Scalar> mid;
  NormCache<Scalar> norm2;
  Mat<Scalar> h2, pre_act, act;
};

}  // namespace detail

template <typename Scalar>
struct EncoderCache {
  std::vector<detail::LayerCache<Scalar>> layers;
  detail::NormCache<Scalar> final_norm;
  Eigen::Index length = 0;
};

/// Encodes input embeddings (L x d, positions not yet added) into output
/// states (L x d).
template <typename Scalar>
Mat<Scalar> encoder_forward(const ModelParams<Scalar>& p, int num_heads, const Mat<Scalar>& inputs,
                            EncoderCache<Scalar>& cache) {
  const auto L = inputs.rows();
  const int d = p.width();
  if (L > p.position_embedding.rows()) throw ValidationError("sequence exceeds max_length");
  const int dh = d / num_heads;
  const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));
  cache.length = L;
  cache.layers.assign(p.layers.size(), {});
  Mat<Scalar> x = inputs + p.position_embedding.topRows(L);
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const auto& W = p.layers[l];
    auto& c = cache.layers[l];
    c.input = x;
    c.h1 = detail::layer_norm(x, W.ln1_gain, W.ln1_bias, c.norm1);
    c.q = c.h1 * W.wq;
    c.q.rowwise() += W.bq.row(0);
    c.k = c.h1 * W.wk;
    c.v = c.h1 * W.wv;
    c.v.rowwise() += W.bv.row(0);
    c.context.resize(L, d);
    c.attn.resize(static_cast<std::size_t>(num_heads));
    for (int h = 0; h < num_heads; ++h) {
      const Mat<Scalar> scores = (c.q.middleCols(h * dh, dh) * c.k.middleCols(h * dh, dh).transpose()) * scale;
      c.attn[h] = softmax_rows(scores);
      c.context.middleCols(h * dh, dh) = c.attn[h] * c.v.middleCols(h * dh, dh);
    }
    Mat<Scalar> attn_out = c.context * W.wo;
    attn_out.rowwise() += W.bo.row(0);
    c.mid = x + attn_out;
    c.h2 = detail::layer_norm(c.mid, W.ln2_gain, W.ln2_bias, c.norm2);
    c.pre_act = c.h2 * W.w1;
    c.pre_act.rowwise() += W.b1.row(0);
    c.act = c.pre_act.unaryExpr([](Scalar z) { return detail::gelu(z); });
    Mat<Scalar> ffn = c.act * W.w2;
    ffn.rowwise() += W.b2.row(0);
    x = c.mid + ffn;
  }
  return detail::layer_norm(x, p.final_gain, p.final_bias, cache.final_norm);
}

/// Backpropagates d(outputs) through the encoder. Accumulates backbone
/// gradients into `grad` when `accumulate_params`, and returns d(inputs).
template <typename Scalar>
Mat<Scalar> encoder_backward(const ModelParams<Scalar>& p, int num_heads,
                             const EncoderCache<Scalar>& cache, const Mat<Scalar>& d_out,
                             ModelParams<Scalar>& grad, bool accumulate_params) {
  const int d = p.width();
  const int dh = d / num_heads;
  const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));
  const auto L = cache.length;

  Mat<Scalar> dummy_g = Mat<Scalar>::Zero(1, d), dummy_b = Mat<Scalar>::Zero(1, d);
  auto& dfg = accumulate_params ? grad.final_gain : dummy_g;
  auto& dfb = accumulate_params ? grad.final_bias : dummy_b;
  Mat<Scalar> dx = detail::layer_norm_backward(d_out, p.final_gain, cache.final_norm, dfg, dfb);

  for (std::size_t li = p.layers.size(); li-- > 0;) {
    const auto& W = p.layers[li];
    const auto& c = cache.layers[li];
    LayerParams<Scalar> scratch;
    LayerParams<Scalar>* G = &grad.layers[li];
    if (!accumulate_params) {
      scratch = grad.layers[li];
      G = &scratch;
    }
    // Feed-forward residual branch.
    const Mat<Scalar>& d_ffn = dx;
    G->w2 += c.act.transpose() * d_ffn;
    G->b2 += d_ffn.colwise().sum();
    Mat<Scalar> d_act = d_ffn * W.w2.transpose();
    Mat<Scalar> d_pre = d_act.array() *
                        c.pre_act.unaryExpr([](Scalar z) { return detail::gelu_grad(z); }).array();
    G->w1 += c.h2.transpose() * d_pre;
    G->b1 += d_pre.colwise().sum();
    Mat<Scalar> d_h2 = d_pre * W.w1.transpose();
    Mat<Scalar> d_mid = dx + detail::layer_norm_backward(d_h2, W.ln2_gain, c.norm2, G->ln2_gain, G->ln2_bias);

    // Attention residual branch.
    G->wo += c.context.transpose() * d_mid;
    G->bo += d_mid.colwise().sum();
    Mat<Scalar> d_context = d_mid * W.wo.transpose();
    Mat<Scalar> dq(L, d), dk(L, d), dv(L, d);
    for (int h = 0; h < num_heads; ++h) {
      const auto& A = c.attn[h];
      const Mat<Scalar> d_ctx_h = d_context.middleCols(h * dh, dh);
      const Mat<Scalar> dA = d_ctx_h * c.v.middleCols(h * dh, dh).transpose();
      dv.middleCols(h * dh, dh) = A.transpose() * d_ctx_h;
      const auto row_dot = (dA.array() * A.array()).rowwise().sum();
      Mat<Scalar> dS = (A.array() * (dA.array().colwise() - row_dot)).matrix() * scale;
      dq.middleCols(h * dh, dh) = dS * c.k.middleCols(h * dh, dh);
      dk.middleCols(h * dh, dh) = dS.transpose() * c.q.middleCols(h * dh, dh);
    }
    G->wq += c.h1.transpose() * dq;
    G->bq += dq.colwise().sum();
    G->wk += c.h1.transpose() * dk;
    G->wv += c.h1.transpose() * dv;
    G->bv += dv.colwise().sum();
    Mat<Scalar> d_h1 = dq * W.wq.transpose() + dk * W.wk.transpose() + dv * W.wv.transpose();
    dx = d_mid + detail::layer_norm_backward(d_h1, W.ln1_gain, c.norm1, G->ln1_gain, G->ln1_bias);
  }
  if (accumulate_params) grad.position_embedding.topRows(L) += dx;
  return dx;
}

// ---------------------------------------------------------------------------
// Joint model: word / masked-POS / prompt streams fused per token.

/// Which feature streams are active; ablations switch them off.
struct StreamSwitches {
  bool prompts = true;
  bool pos = true;
  friend bool operator==(const StreamSwitches&, const StreamSwitches&) = default;
};

/// Backbone-ready view of one sentence.
struct SentenceInput {
  std::string sentence_id;
  std::vector<int> word_pieces;
  std::vector<int> word_first;  // first piece index of each word
  std::vector<int> pos_pieces;
  std::vector<int> pos_first;
  std::vector<int> prompt_rows;  // bank rows prepended to the word pass

  std::size_t words() const { return word_first.size(); }
};

/// Renders words and (masked) POS tags through the backbone vocabulary. The
/// mask tag maps to the vocabulary's mask sentinel.
inline SentenceInput make_input(const std::string& sentence_id,
                                const std::vector<std::string>& tokens,
                                const std::vector<std::string>& masked_pos,
                                const SubwordVocab& vocab, std::vector<int> prompt_rows,
                                int max_length) {
  if (tokens.empty()) throw ValidationError("sentence " + sentence_id + " is empty");
  if (masked_pos.size() != tokens.size()) {
    throw ValidationError("sentence " + sentence_id + ": POS stream not aligned to tokens");
  }
  SentenceInput in;
  in.sentence_id = sentence_id;
  in.prompt_rows = std::move(prompt_rows);
  for (const auto& w : tokens) {
    in.word_first.push_back(static_cast<int>(in.word_pieces.size()));
    const auto ids = vocab.encode_word(w);
    in.word_pieces.insert(in.word_pieces.end(), ids.begin(), ids.end());
  }
  for (const auto& t : masked_pos) {
    in.pos_first.push_back(static_cast<int>(in.pos_pieces.size()));
    if (t == kMaskTag) {
      in.pos_pieces.push_back(SubwordVocab::kMask);
    } else {
      const auto ids = vocab.encode_word(t);
      in.pos_pieces.insert(in.pos_pieces.end(), ids.begin(), ids.end());
    }
  }
  const auto word_len = in.prompt_rows.size() + in.word_pieces.size();
  if (static_cast<int>(word_len) > max_length || static_cast<int>(in.pos_pieces.size()) > max_length) {
    throw ValidationError("sentence " + sentence_id + " exceeds max_length " +
                          std::to_string(max_length) + " (" + std::to_string(word_len) +
                          " positions)");
  }
  return in;
}

template <typename Scalar>
struct ForwardFeatures {
  Mat<Scalar> word_states;     // n x d
  Mat<Scalar> pos_states;      // n x d
  Mat<Scalar> prompt_summary;  // 1 x d
  Mat<Scalar> fused;           // n x 3d: [word ; pos ; prompt]
};

template <typename Scalar>
struct ForwardCache {
  EncoderCache<Scalar> word_pass;
  EncoderCache<Scalar> pos_pass;
  bool pos_pass_ran = false;
};

/// Runs both encoder passes and assembles per-token fused features.
template <typename Scalar>
ForwardFeatures<Scalar> encode_inputs(const ModelParams<Scalar>& p, const EncoderConfig& cfg,
                                      const SentenceInput& in, const StreamSwitches& streams,
                                      ForwardCache<Scalar>& cache) {
  const int d = p.width();
  if (p.prompts.cols() != d) throw ValidationError("prompt bank width differs from encoder width");
  const auto n = static_cast<Eigen::Index>(in.words());
  const auto m = streams.prompts ? static_cast<Eigen::Index>(in.prompt_rows.size()) : 0;
  const auto Lw = m + static_cast<Eigen::Index>(in.word_pieces.size());
  if (Lw > cfg.max_length || static_cast<int>(in.pos_pieces.size()) > cfg.max_length) {
    throw ValidationError("sentence " + in.sentence_id + " exceeds max_length " +
                          std::to_string(cfg.max_length));
  }

  Mat<Scalar> word_in(Lw, d);
  for (Eigen::Index j = 0; j < m; ++j) word_in.row(j) = p.prompts.row(in.prompt_rows[j]);
  for (std::size_t k = 0; k < in.word_pieces.size(); ++k) {
    word_in.row(m + static_cast<Eigen::Index>(k)) = p.token_embedding.row(in.word_pieces[k]);
  }
  const Mat<Scalar> word_out = encoder_forward(p, cfg.num_heads, word_in, cache.word_pass);

  ForwardFeatures<Scalar> f;
  f.word_states.resize(n, d);
  for (Eigen::Index i = 0; i < n; ++i) f.word_states.row(i) = word_out.row(m + in.word_first[i]);
  f.prompt_summary = Mat<Scalar>::Zero(1, d);
  if (m > 0) f.prompt_summary = word_out.topRows(m).colwise().mean();

  f.pos_states = Mat<Scalar>::Zero(n, d);
  cache.pos_pass_ran = streams.pos;
  if (streams.pos) {
    Mat<Scalar> pos_in(static_cast<Eigen::Index>(in.pos_pieces.size()), d);
    for (std::size_t k = 0; k < in.pos_pieces.size(); ++k) {
      pos_in.row(static_cast<Eigen::Index>(k)) = p.token_embedding.row(in.pos_pieces[k]);
    }
    const Mat<Scalar> pos_out = encoder_forward(p, cfg.num_heads, pos_in, cache.pos_pass);
    for (Eigen::Index i = 0; i < n; ++i) f.pos_states.row(i) = pos_out.row(in.pos_first[i]);
  }

  f.fused.resize(n, 3 * d);
  f.fused.leftCols(d) = f.word_states;
  f.fused.middleCols(d, d) = f.pos_states;
  f.fused.rightCols(d) = f.prompt_summary.replicate(n, 1);
  return f;
}

template <typename Scalar>
ForwardFeatures<Scalar> encode_inputs(const ModelParams<Scalar>& p, const EncoderConfig& cfg,
                                      const SentenceInput& in, const StreamSwitches& streams) {
  ForwardCache<Scalar> cache;
  return encode_inputs(p, cfg, in, streams, cache);
}

template <typename Scalar>
Mat<Scalar> classify(const Mat<Scalar>& fused, const HeadParams<Scalar>& head) {
  if (head.weight.rows() != fused.cols() || head.bias.cols() != head.weight.cols() ||
      head.bias.rows() != 1) {
    throw ValidationError("head width " + std::to_string(head.weight.rows()) +
                          " does not match fused width " + std::to_string(fused.cols()));
  }
  Mat<Scalar> logits = fused * head.weight;
  logits.rowwise() += head.bias.row(0);
  return softmax_rows(logits);
}

/// n x 3 distributions over {B, I, O}.
template <typename Scalar>
Mat<Scalar> classify_aspect(const ForwardFeatures<Scalar>& f, const HeadParams<Scalar>& head) {
  if (head.classes() != 3) throw ValidationError("aspect head must have 3 classes");
  return classify(f.fused, head);
}

/// n x N^pos distributions.
template <typename Scalar>
Mat<Scalar> classify_pos(const ForwardFeatures<Scalar>& f, const HeadParams<Scalar>& head) {
  return classify(f.fused, head);
}

/// Backpropagates d(fused) into prompt bank, token embeddings and (when
/// `train_backbone`) the encoder weights.
template <typename Scalar>
void fused_backward(const ModelParams<Scalar>& p, const EncoderConfig& cfg, const SentenceInput& in,
                    const StreamSwitches& streams, const ForwardCache<Scalar>& cache,
                    const Mat<Scalar>& d_fused, ModelParams<Scalar>& grad, bool train_backbone) {
  const int d = p.width();
  const auto n = static_cast<Eigen::Index>(in.words());
  const auto m = streams.prompts ? static_cast<Eigen::Index>(in.prompt_rows.size()) : 0;

  // Word pass: word states and the mean-pooled prompt summary.
  const bool need_word_pass = train_backbone || m > 0;
  if (need_word_pass) {
    Mat<Scalar> d_out = Mat<Scalar>::Zero(cache.word_pass.length, d);
    for (Eigen::Index i = 0; i < n; ++i) d_out.row(m + in.word_first[i]) += d_fused.row(i).leftCols(d);
    if (m > 0) {
      const Mat<Scalar> d_summary = d_fused.rightCols(d).colwise().sum() / static_cast<Scalar>(m);
      for (Eigen::Index j = 0; j < m; ++j) d_out.row(j) += d_summary;
    }
    const Mat<Scalar> d_in = encoder_backward(p, cfg.num_heads, cache.word_pass, d_out, grad, train_backbone);
    for (Eigen::Index j = 0; j < m; ++j) grad.prompts.row(in.prompt_rows[j]) += d_in.row(j);
    if (train_backbone) {
      for (std::size_t k = 0; k < in.word_pieces.size(); ++k) {
        grad.token_embedding.row(in.word_pieces[k]) += d_in.row(m + static_cast<Eigen::Index>(k));
      }
    }
  }
  // The POS pass has no prompt inputs; it only matters for backbone updates.
  if (train_backbone && cache.pos_pass_ran) {
    Mat<Scalar> d_out = Mat<Scalar>::Zero(cache.pos_pass.length, d);
    for (Eigen::Index i = 0; i < n; ++i) d_out.row(in.pos_first[i]) += d_fused.row(i).middleCols(d, d);
    const Mat<Scalar> d_in = encoder_backward(p, cfg.num_heads, cache.pos_pass, d_out, grad, true);
    for (std::size_t k = 0; k < in.pos_pieces.size(); ++k) {
      grad.token_embedding.row(in.pos_pieces[k]) += d_in.row(static_cast<Eigen::Index>(k));
    }
  }
}

}  // namespace xprompt

#endif  // XPROMPT_MODEL_HPP
