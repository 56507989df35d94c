#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cmf/rng.hpp"
#include "cmf/tensor.hpp"

namespace cmf {

enum class ParamGroup { Encoders, Rest };

struct ParamEntry {
  std::string name;
  Tensor tensor;
  bool trainable = true;  // false for running-stat buffers
  ParamGroup group = ParamGroup::Rest;
};

/// Ordered, name-unique store of all model parameters and persistent buffers.
/// Creation order is construction order, which fixes the checkpoint namespace
/// across runs. Names under "visual." or "lang." fall into the encoder
/// parameter group; everything else is "rest".
class ParamRegistry {
 public:
  explicit ParamRegistry(uint64_t init_seed) : rng_(Rng::fork(init_seed, 0x9a7a)) {}

  Tensor zeros(const std::string& name, Shape shape);
  Tensor ones(const std::string& name, Shape shape);
  /// Uniform in ±sqrt(6 / (fan_in + fan_out)).
  Tensor xavier(const std::string& name, Shape shape, Index fan_in, Index fan_out);
  /// Non-trainable persistent state (running statistics).
  Tensor buffer(const std::string& name, Shape shape, double fill);

  const std::vector<ParamEntry>& entries() const { return entries_; }
  Tensor find(const std::string& name) const;
  bool contains(const std::string& name) const;
  Index trainable_size() const;
  void zero_all_grads();

 private:
  Tensor insert(const std::string& name, Tensor t, bool trainable);
  std::vector<ParamEntry> entries_;
  Rng rng_;
};

ParamGroup group_for_name(const std::string& name);

// ---- plain layers ----------------------------------------------------------

class Linear {
 public:
  Linear() = default;
  /// zero_init: weights and bias start at zero (residual-identity outputs).
  Linear(ParamRegistry& reg, const std::string& prefix, Index d_in, Index d_out,
         bool zero_init = false);
  /// x: [S x d_in] or [d_in]; applies xW + b along the last dim.
  Tensor forward(const Tensor& x) const;

  Index d_in() const { return d_in_; }
  Index d_out() const { return d_out_; }
  Tensor weight() const { return w_; }
  Tensor bias() const { return b_; }

 private:
  Index d_in_ = 0, d_out_ = 0;
  Tensor w_;  // [d_in x d_out]
  Tensor b_;  // [1 x d_out]
};

/// 3x3 cross-correlation, stride 1, zero padding 1 (same-size output).
class Conv3x3 {
 public:
  Conv3x3() = default;
  /// with_bias=false for convs feeding batch normalization (the mean
  /// subtraction would make the bias gradient identically zero).
  Conv3x3(ParamRegistry& reg, const std::string& prefix, Index c_in, Index c_out,
          bool with_bias = true);
  /// x: [C_in x H x W] -> [C_out x H x W]
  Tensor forward(const Tensor& x) const;

  Index c_in() const { return c_in_; }
  Index c_out() const { return c_out_; }
  /// Tap layout: w[o, (dy*3+dx)*C_in + c].
  Tensor weight() const { return w_; }
  Tensor bias() const { return b_; }

 private:
  Index c_in_ = 0, c_out_ = 0;
  Tensor w_;  // [c_out x 9*c_in]
  Tensor b_;  // [c_out x 1]
};

/// Pending running-stat update captured during a train-mode forward.
struct BnUpdate {
  const class BatchNorm* layer;
  Array mean, var;
};
using BnStatsSink = std::vector<BnUpdate>;

class BatchNorm {
 public:
  enum class Layout {
    RowsBatch,      // [B x F]: statistics over rows, per feature column
    ChannelsFirst,  // [C x H x W]: statistics over H*W, per channel
  };

  BatchNorm() = default;
  BatchNorm(ParamRegistry& reg, const std::string& prefix, Index features, Layout layout,
            double eps = 1e-5, double momentum = 0.1);

  /// Train mode standardizes by the input's own statistics and, when a sink
  /// is given, records them for a later running-stat update; running stats
  /// themselves are never touched inside forward. Eval mode standardizes by
  /// the running stats (init mean 0 / var 1 before any update).
  Tensor forward(const Tensor& x, bool train, BnStatsSink* sink = nullptr) const;

  /// Applies one momentum step toward the given batch statistics.
  void update_running(const Array& mean, const Array& var) const;

  Index features() const { return features_; }
  Tensor gamma() const { return gamma_; }
  Tensor beta() const { return beta_; }
  Tensor running_mean() const { return run_mean_; }
  Tensor running_var() const { return run_var_; }

 private:
  Index features_ = 0;
  Layout layout_ = Layout::RowsBatch;
  double eps_ = 1e-5, momentum_ = 0.1;
  Tensor gamma_, beta_;        // stat-shaped for broadcast
  Tensor run_mean_, run_var_;  // same broadcast shape, non-trainable
};

class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParamRegistry& reg, const std::string& prefix, Index features, double eps = 1e-5);
  /// x: [S x F], normalized per row.
  Tensor forward(const Tensor& x) const;

 private:
  Index features_ = 0;
  double eps_ = 1e-5;
  Tensor gamma_, beta_;  // [1 x F]
};

/// Key-padding mask over a token sequence; true marks padded positions.
using PadMask = std::vector<uint8_t>;

/// Averaged-over-heads attention weights captured from one forward.
struct AttnDiag {
  Array weights;  // row-major [S x S], rows = queries
  Index tokens = 0;
};

class MultiHeadSelfAttention {
 public:
  MultiHeadSelfAttention() = default;
  MultiHeadSelfAttention(ParamRegistry& reg, const std::string& prefix, Index width, Index heads);

  /// tokens: [S x C]. Padded keys are excluded exactly (their attention
  /// weight underflows to 0.0). If every key is padded the output is defined
  /// as zero for all queries rather than NaN.
  Tensor forward(const Tensor& tokens, const PadMask& key_pad, AttnDiag* diag = nullptr) const;

  Index width() const { return width_; }
  Index heads() const { return heads_; }

 private:
  Index width_ = 0, heads_ = 0, head_dim_ = 0;
  Linear q_, k_, v_, out_;
};

/// Pre-norm transformer encoder block: x + MHSA(LN(x)), then x + FFN(LN(x))
/// with a 4x hidden expansion.
class EncoderLayer {
 public:
  EncoderLayer() = default;
  EncoderLayer(ParamRegistry& reg, const std::string& prefix, Index width, Index heads);
  Tensor forward(const Tensor& tokens, const PadMask& key_pad, AttnDiag* diag = nullptr) const;

 private:
  LayerNorm ln1_, ln2_;
  MultiHeadSelfAttention attn_;
  Linear ffn1_, ffn2_;
};

/// Half-pixel-center bilinear downsampling with edge clamping:
/// source coord = (i + 0.5) * H / H' - 0.5. Upsampling is rejected.
Tensor bilinear_downsample(const Tensor& x, Index out_h, Index out_w);

/// 2-D sinusoidal position encoding [H*W x C]: first C/2 channels encode the
/// row index, the rest the column index, sin/cos interleaved at geometric
/// frequencies (base 10000). C must be divisible by 4.
Tensor sinusoidal_pe(Index h, Index w, Index channels);

/// Rows divided by max(l2norm, 1e-12).
Tensor l2_normalize_rows(const Tensor& x);

/// Three-layer perceptron head: C -> C -> C (ReLU between) -> 4, then
/// sigmoid, producing a normalized (x, y, h, w) box in (0,1)^4.
class Mlp3 {
 public:
  Mlp3() = default;
  Mlp3(ParamRegistry& reg, const std::string& prefix, Index width);
  /// x: [C] or [1 x C] -> [4]
  Tensor forward(const Tensor& x) const;

 private:
  Linear l1_, l2_, l3_;
};

}  // namespace cmf
