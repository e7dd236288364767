#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "tgate/kernels.hpp"
#include "tgate/prng.hpp"
#include "tgate/tensor.hpp"
#include "tgate/tensor_io.hpp"

namespace tgate {

struct DenoiserConfig {
  int latent_side = 8;
  int channels = 4;
  int patch = 1;
  int width = 64;
  int heads = 4;
  int blocks = 4;
  int mlp_ratio = 4;
  int text_len = 8;
  int text_dim = 64;
  std::uint64_t seed = 7;

  int grid_side() const { return latent_side / patch; }
  int tokens() const { return grid_side() * grid_side(); }
  int head_dim() const { return width / heads; }
  int patch_dim() const { return channels * patch * patch; }
  int mlp_hidden() const { return mlp_ratio * width; }

  void validate() const {
    auto positive = [](int v, const char* name) {
      if (v <= 0) throw ConfigError(std::string(name) + " must be positive");
    };
    positive(latent_side, "latent_side");
    positive(channels, "channels");
    positive(patch, "patch");
    positive(width, "width");
    positive(heads, "heads");
    positive(blocks, "blocks");
    positive(mlp_ratio, "mlp_ratio");
    positive(text_len, "text_len");
    positive(text_dim, "text_dim");
    if (width % heads != 0) throw ConfigError("width must be divisible by heads");
    if (latent_side % patch != 0) throw ConfigError("latent_side must be divisible by patch");
  }

  bool operator==(const DenoiserConfig&) const = default;
};

struct LatentState {
  Tensor z;           // (channels, latent_side, latent_side)
  int step = 1;       // 1-based inference step; step 1 denoises z_n
  int timestep = 0;   // training-grid timestep
};

struct TextCondition {
  Tensor tokens;  // (text_len, text_dim)
  bool is_null = false;
};

enum class AttnKind { self_attn, cross_attn };

inline const char* to_string(AttnKind k) { return k == AttnKind::self_attn ? "self" : "cross"; }

/// Interception points around every attention sublayer.
///
/// `bypass` is consulted before the sublayer runs; a non-null tensor is used as
/// the sublayer output and the sublayer is not computed at all (no MACs).
/// Otherwise the sublayer runs and `on_output` sees its post-projection output
/// together with the pre-projection concatenated heads; a non-null return
/// replaces the output. `on_applied` observes whatever tensor was finally added
/// to the residual stream. Returned pointers must stay valid until the call
/// that produced them returns to the denoiser.
class AttentionHook {
 public:
  virtual ~AttentionHook() = default;
  virtual const Tensor* bypass(int /*block*/, AttnKind /*kind*/) { return nullptr; }
  virtual const Tensor* on_output(int /*block*/, AttnKind /*kind*/, const Tensor& /*output*/,
                                  const Tensor& /*map*/) {
    return nullptr;
  }
  virtual void on_applied(int /*block*/, AttnKind /*kind*/, const Tensor& /*applied*/) {}
};

struct AttentionWeights {
  Tensor wq;  // D_q × D
  Tensor wk;  // D_kv × D
  Tensor wv;  // D_kv × D
  Tensor wo;  // D × D
};

struct AttentionResult {
  Tensor output;  // projected sublayer output, (s × D)
  Tensor map;     // concatenated per-head softmax(QKᵀ/√d)·V before projection, (s × D)
};

/// Multi-head scaled dot-product attention of q_src rows over kv_src rows.
inline AttentionResult attention(const Tensor& q_src, const Tensor& kv_src,
                                 const AttentionWeights& w, int heads,
                                 MacCounter* counter = nullptr,
                                 std::string_view label = "attn") {
  const Tensor q = matmul(q_src, w.wq, counter, label);
  const Tensor k = matmul(kv_src, w.wk, counter, label);
  const Tensor v = matmul(kv_src, w.wv, counter, label);
  const std::size_t width = q.cols();
  if (heads <= 0 || width % static_cast<std::size_t>(heads) != 0)
    throw ShapeError("attention: width not divisible by heads");
  const std::size_t d = width / static_cast<std::size_t>(heads);
  const float inv_sqrt_d = static_cast<float>(1.0 / std::sqrt(static_cast<double>(d)));

  Tensor map({q.rows(), width});
  for (std::size_t h = 0; h < static_cast<std::size_t>(heads); ++h) {
    const Tensor qh = slice_cols(q, h * d, d);
    const Tensor kh_t = transpose(slice_cols(k, h * d, d));
    const Tensor vh = slice_cols(v, h * d, d);
    Tensor logits = matmul(qh, kh_t, counter, label);
    scale_inplace(logits, inv_sqrt_d);
    const Tensor probs = softmax_rows(logits);
    write_cols(map, h * d, matmul(probs, vh, counter, label));
  }
  Tensor out = matmul(map, w.wo, counter, label);
  return {std::move(out), std::move(map)};
}

namespace detail {

inline constexpr int kTextVocab = 4096;

// Sinusoidal encoding of a scalar position into `width` channels.
inline void sinusoid(double position, std::span<float> out) {
  const std::size_t half = out.size() / 2;
  for (std::size_t i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) /
                                 static_cast<double>(half));
    out[i] = static_cast<float>(std::sin(position * freq));
    out[i + half] = static_cast<float>(std::cos(position * freq));
  }
  if (out.size() % 2) out.back() = 0.0f;
}

inline Tensor seeded_matrix(const Prng& stream, std::size_t rows, std::size_t cols,
                            double variance) {
  Tensor t({rows, cols});
  // Uniform on [-a, a) has variance a²/3.
  stream.fill_symmetric(t.data(), static_cast<float>(std::sqrt(3.0 * variance)));
  return t;
}

inline std::vector<std::string_view> split_whitespace(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  auto is_space = [](char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
  };
  while (i < s.size()) {
    while (i < s.size() && is_space(s[i])) ++i;
    std::size_t j = i;
    while (j < s.size() && !is_space(s[j])) ++j;
    if (j > i) out.push_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

}  // namespace detail

/// Deterministic stand-in for a text encoder. Whitespace tokens hash into a
/// seeded embedding table; a sinusoidal position code is added so word order
/// matters. The empty (or all-whitespace) prompt is the null condition: every
/// position holds a dedicated seeded null row plus its position code.
inline TextCondition embed_text(std::string_view prompt, const DenoiserConfig& config,
                                std::uint64_t seed) {
  const auto words = detail::split_whitespace(prompt);
  const Prng root = Prng(seed).split("text");
  const auto len = static_cast<std::size_t>(config.text_len);
  const auto dim = static_cast<std::size_t>(config.text_dim);
  const float half_width = static_cast<float>(std::sqrt(3.0));

  TextCondition cond{Tensor({len, dim}), words.empty()};
  std::vector<float> pos(dim);
  for (std::size_t p = 0; p < len; ++p) {
    Prng row_stream = root.split("pad");
    if (cond.is_null) {
      row_stream = root.split("null");
    } else if (p < words.size()) {
      const auto index = fnv1a64(words[p]) % detail::kTextVocab;
      row_stream = root.split("table").split(index);
    }
    auto row = cond.tokens.row(p);
    row_stream.fill_symmetric(row, half_width);
    detail::sinusoid(static_cast<double>(p), pos);
    for (std::size_t c = 0; c < dim; ++c) row[c] += pos[c];
  }
  return cond;
}

inline TextCondition embed_text(std::string_view prompt, const DenoiserConfig& config) {
  return embed_text(prompt, config, config.seed);
}

/// Toy DiT-style noise predictor with seeded, untrained weights.
///
/// Tokens come from non-overlapping patches of the latent. Each block applies
/// pre-norm residual self-attention, cross-attention against the text tokens,
/// and a GELU MLP. The timestep enters as an additive sinusoidal embedding, so
/// the text condition reaches the network only through cross-attention K and V.
class Denoiser {
 public:
  struct Block {
    Tensor ln1_gain, ln1_bias;
    AttentionWeights self_attn;
    Tensor ln2_gain, ln2_bias;
    AttentionWeights cross_attn;
    Tensor ln3_gain, ln3_bias;
    Tensor mlp_in;   // D × D_f
    Tensor mlp_out;  // D_f × D
  };

  explicit Denoiser(DenoiserConfig config) : config_(config) {
    config_.validate();
    const auto D = static_cast<std::size_t>(config_.width);
    const auto P = static_cast<std::size_t>(config_.patch_dim());
    const auto T = static_cast<std::size_t>(config_.text_dim);
    const auto F = static_cast<std::size_t>(config_.mlp_hidden());
    const double var = 1.0 / static_cast<double>(D);
    const Prng root = Prng(config_.seed).split("weights");

    patch_in_ = detail::seeded_matrix(root.split("patch_in"), P, D, var);
    patch_out_ = detail::seeded_matrix(root.split("patch_out"), D, P, var);
    final_gain_ = Tensor({D}, 1.0f);
    final_bias_ = Tensor({D}, 0.0f);
    blocks_.reserve(static_cast<std::size_t>(config_.blocks));
    for (int b = 0; b < config_.blocks; ++b) {
      const Prng s = root.split("block").split(static_cast<std::uint64_t>(b));
      Block blk;
      blk.ln1_gain = blk.ln2_gain = blk.ln3_gain = Tensor({D}, 1.0f);
      blk.ln1_bias = blk.ln2_bias = blk.ln3_bias = Tensor({D}, 0.0f);
      blk.self_attn = {detail::seeded_matrix(s.split("sa.q"), D, D, var),
                       detail::seeded_matrix(s.split("sa.k"), D, D, var),
                       detail::seeded_matrix(s.split("sa.v"), D, D, var),
                       detail::seeded_matrix(s.split("sa.o"), D, D, var)};
      blk.cross_attn = {detail::seeded_matrix(s.split("ca.q"), D, D, var),
                        detail::seeded_matrix(s.split("ca.k"), T, D, var),
                        detail::seeded_matrix(s.split("ca.v"), T, D, var),
                        detail::seeded_matrix(s.split("ca.o"), D, D, var)};
      blk.mlp_in = detail::seeded_matrix(s.split("mlp.in"), D, F, var);
      blk.mlp_out = detail::seeded_matrix(s.split("mlp.out"), F, D, var);
      blocks_.push_back(std::move(blk));
    }
  }

  const DenoiserConfig& config() const { return config_; }
  const std::vector<Block>& blocks() const { return blocks_; }
  Shape latent_shape() const {
    return {static_cast<std::size_t>(config_.channels),
            static_cast<std::size_t>(config_.latent_side),
            static_cast<std::size_t>(config_.latent_side)};
  }

  /// (channels, side, side) → (tokens, channels·patch²), patch-major then (c, dy, dx).
  Tensor patchify(const Tensor& z) const {
    if (z.shape() != latent_shape())
      throw ShapeError("latent shape " + shape_str(z.shape()) + " does not match config " +
                       shape_str(latent_shape()));
    const int g = config_.grid_side(), p = config_.patch, side = config_.latent_side;
    Tensor tokens({static_cast<std::size_t>(config_.tokens()),
                   static_cast<std::size_t>(config_.patch_dim())});
    for (int gy = 0; gy < g; ++gy)
      for (int gx = 0; gx < g; ++gx) {
        auto row = tokens.row(static_cast<std::size_t>(gy * g + gx));
        std::size_t col = 0;
        for (int c = 0; c < config_.channels; ++c)
          for (int dy = 0; dy < p; ++dy)
            for (int dx = 0; dx < p; ++dx)
              row[col++] = z[static_cast<std::size_t>((c * side + gy * p + dy) * side + gx * p + dx)];
      }
    return tokens;
  }

  Tensor unpatchify(const Tensor& tokens) const {
    const int g = config_.grid_side(), p = config_.patch, side = config_.latent_side;
    Tensor z(latent_shape());
    for (int gy = 0; gy < g; ++gy)
      for (int gx = 0; gx < g; ++gx) {
        auto row = tokens.row(static_cast<std::size_t>(gy * g + gx));
        std::size_t col = 0;
        for (int c = 0; c < config_.channels; ++c)
          for (int dy = 0; dy < p; ++dy)
            for (int dx = 0; dx < p; ++dx)
              z[static_cast<std::size_t>((c * side + gy * p + dy) * side + gx * p + dx)] = row[col++];
      }
    return z;
  }

  Tensor predict_noise(const LatentState& state, const TextCondition& cond,
                       AttentionHook* hook = nullptr, MacCounter* counter = nullptr) const {
    const auto D = static_cast<std::size_t>(config_.width);
    if (cond.tokens.shape() != Shape{static_cast<std::size_t>(config_.text_len),
                                     static_cast<std::size_t>(config_.text_dim)})
      throw ShapeError("text condition shape " + shape_str(cond.tokens.shape()) +
                       " does not match config");

    Tensor x = matmul(patchify(state.z), patch_in_, counter, "proj");
    std::vector<float> emb(D);
    detail::sinusoid(static_cast<double>(state.timestep), emb);
    add_row_inplace(x, emb);
    for (std::size_t t = 0; t < x.rows(); ++t) {
      detail::sinusoid(static_cast<double>(t), emb);
      auto row = x.row(t);
      for (std::size_t c = 0; c < D; ++c) row[c] += emb[c];
    }

    for (std::size_t b = 0; b < blocks_.size(); ++b) {
      const Block& blk = blocks_[b];
      const int bi = static_cast<int>(b);
      apply_attention(x, bi, AttnKind::self_attn, hook, [&] {
        const Tensor h = layernorm(x, blk.ln1_gain, blk.ln1_bias);
        return attention(h, h, blk.self_attn, config_.heads, counter, "sa");
      });
      apply_attention(x, bi, AttnKind::cross_attn, hook, [&] {
        const Tensor h = layernorm(x, blk.ln2_gain, blk.ln2_bias);
        return attention(h, cond.tokens, blk.cross_attn, config_.heads, counter, "ca");
      });
      const Tensor h = layernorm(x, blk.ln3_gain, blk.ln3_bias);
      add_inplace(x, matmul(gelu(matmul(h, blk.mlp_in, counter, "mlp")), blk.mlp_out, counter,
                            "mlp"));
    }

    const Tensor out =
        matmul(layernorm(x, final_gain_, final_bias_), patch_out_, counter, "proj");
    Tensor eps = unpatchify(out);
    require_finite(eps, "predicted noise");
    return eps;
  }

  void dump_weights(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    write_tensor(dir / "patch_in", patch_in_);
    write_tensor(dir / "patch_out", patch_out_);
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
      const auto p = "block" + std::to_string(b) + ".";
      const Block& blk = blocks_[b];
      write_tensor(dir / (p + "sa.q"), blk.self_attn.wq);
      write_tensor(dir / (p + "sa.k"), blk.self_attn.wk);
      write_tensor(dir / (p + "sa.v"), blk.self_attn.wv);
      write_tensor(dir / (p + "sa.o"), blk.self_attn.wo);
      write_tensor(dir / (p + "ca.q"), blk.cross_attn.wq);
      write_tensor(dir / (p + "ca.k"), blk.cross_attn.wk);
      write_tensor(dir / (p + "ca.v"), blk.cross_attn.wv);
      write_tensor(dir / (p + "ca.o"), blk.cross_attn.wo);
      write_tensor(dir / (p + "mlp.in"), blk.mlp_in);
      write_tensor(dir / (p + "mlp.out"), blk.mlp_out);
    }
  }

 private:
  template <typename Compute>
  void apply_attention(Tensor& x, int block, AttnKind kind, AttentionHook* hook,
                       Compute&& compute) const {
    if (hook) {
      if (const Tensor* sub = hook->bypass(block, kind)) {
        require_same_shape(x, *sub, "cached attention output");
        hook->on_applied(block, kind, *sub);
        add_inplace(x, *sub);
        return;
      }
    }
    AttentionResult r = compute();
    const Tensor* applied = &r.output;
    if (hook) {
      if (const Tensor* sub = hook->on_output(block, kind, r.output, r.map)) {
        require_same_shape(r.output, *sub, "substituted attention output");
        applied = sub;
      }
      hook->on_applied(block, kind, *applied);
    }
    add_inplace(x, *applied);
  }

  DenoiserConfig config_;
  Tensor patch_in_, patch_out_;
  Tensor final_gain_, final_bias_;
  std::vector<Block> blocks_;
};

}  // namespace tgate
