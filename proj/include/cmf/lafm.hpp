#pragma once

#include "cmf/encoders.hpp"

namespace cmf {

/// Textual layer-fusion designs. ClsSelfAttn is the full design: per-layer
/// summary vectors, cross-layer affinity, then a two-layer scorer producing
/// simplex weights. The others are the comparison designs selectable for
/// ablation runs.
enum class LafmVariant {
  ClsSelfAttn,   // summary stack + affinity + scorer
  NLearnable,    // free weight vector + softmax
  ClsSoftmax,    // summary stack + scorer (no affinity)
  MaxSelfAttn,   // max-pooled stack + affinity + scorer
  MeanSelfAttn,  // mean-pooled stack + affinity + scorer
  LastLayer,     // bypass: last layer only
};

LafmVariant lafm_variant_from_name(const std::string& name);
const char* lafm_variant_name(LafmVariant v);

struct LafmDiag {
  Array fusion_weights;  // [N]
  Array affinity;        // [N*N], empty for variants without an affinity step
};

/// Per-level adaptive fusion of the N textual layers into one [L x Q]
/// feature matrix. Each pyramid level owns an independent instance.
class Lafm {
 public:
  Lafm() = default;
  Lafm(ParamRegistry& reg, const std::string& prefix, Index text_width, Index text_layers,
       LafmVariant variant);

  /// Stacks the per-layer summary vectors into [N x Q].
  static Tensor stack_cls(const LayeredText& text);

  /// Simplex weights over the N layers, shape [N].
  Tensor fusion_weights(const LayeredText& text, bool train, BnStatsSink* sink = nullptr,
                        LafmDiag* diag = nullptr) const;

  /// Convex combination sum_j s_j * F_j -> [L x Q].
  static Tensor fuse(const Tensor& weights, const LayeredText& text);

  /// fusion_weights + fuse; LastLayer bypasses and returns the final layer.
  Tensor forward(const LayeredText& text, bool train, BnStatsSink* sink = nullptr,
                 LafmDiag* diag = nullptr) const;

  LafmVariant variant() const { return variant_; }

 private:
  Tensor scorer(const Tensor& pooled, bool train, BnStatsSink* sink) const;  // [N x Q] -> [N]

  LafmVariant variant_ = LafmVariant::ClsSelfAttn;
  Index q_ = 0, n_ = 0;
  Linear e_proj_;       // affinity source projection
  Linear score1_;       // Q -> Q/2
  BatchNorm score_bn_;  // over the N rows
  Linear score2_;       // Q/2 -> 1
  Tensor theta_;        // [N], NLearnable only
};

}  // namespace cmf
