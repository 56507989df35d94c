#pragma once

#include "cmf/boxes.hpp"
#include "cmf/lafm.hpp"

namespace cmf {

struct ModelConfig {
  EncoderConfig enc;
  Index fusion_width = 64;  // C0, divisible by 4 and by heads
  Index heads = 4;
  Index vlim_depth = 2;  // 0 disables the per-level interaction stack
  Index vlfm_depth = 6;
  std::vector<Index> levels = {1, 2, 3, 4};  // 1-based pyramid levels in use
  LafmVariant lafm = LafmVariant::ClsSelfAttn;

  void validate() const;
};

/// Joint [text | visual] token sequence entering a per-level interaction
/// stack; offsets make the layout losslessly splittable.
struct JointTokens {
  Tensor tokens;  // [(L + HW) x C0]
  PadMask mask;
  Index text_len = 0;
  Index grid_tokens = 0;
  Index h = 0, w = 0;
};

/// Token-major fused features of one level (or of the cross-level merge).
struct FusedPair {
  Tensor visual;  // [HW x C0]
  Tensor text;    // [L x C0]
  Index h = 0, w = 0;
};

/// Per-level projections to the fusion width. Sinusoidal position encodings
/// are added to visual tokens only; text order comes first in the sequence.
class TokenizePair {
 public:
  TokenizePair() = default;
  TokenizePair(ParamRegistry& reg, const std::string& prefix, Index visual_channels,
               Index text_width, Index fusion_width);
  JointTokens forward(const Tensor& level_map, const Tensor& fused_text,
                      const PadMask& grid_mask, const PadMask& word_mask) const;

 private:
  Linear v_proj_, t_proj_;
  Index fusion_width_ = 0;
};

/// Splits a joint sequence back into its text and visual parts.
FusedPair split_joint(const JointTokens& joint);

/// Per-level interaction stack (independent parameters per level).
class Vlim {
 public:
  Vlim() = default;
  Vlim(ParamRegistry& reg, const std::string& prefix, Index width, Index heads, Index depth);
  FusedPair forward(const JointTokens& joint) const;
  Index depth() const { return static_cast<Index>(layers_.size()); }

 private:
  std::vector<EncoderLayer> layers_;
};

/// Channel-concatenates the per-level features and projects each position
/// back to the fusion width (1x1 linear; no nonlinearity).
class CrossLevelMerge {
 public:
  CrossLevelMerge() = default;
  CrossLevelMerge(ParamRegistry& reg, const std::string& prefix, Index levels,
                  Index fusion_width);
  FusedPair forward(const std::vector<FusedPair>& parts) const;

 private:
  Linear v_proj_, t_proj_;
  Index levels_ = 0;
};

/// Final fusion stack over [REG | text | visual]; the learnable [REG]
/// embedding carries no position encoding, visual tokens get theirs
/// re-added. Returns the [REG] output vector.
class Vlfm {
 public:
  Vlfm() = default;
  Vlfm(ParamRegistry& reg, const std::string& prefix, Index width, Index heads, Index depth);
  Tensor forward(const FusedPair& merged, const PadMask& word_mask, const PadMask& grid_mask,
                 AttnDiag* final_layer_attn = nullptr) const;

 private:
  Tensor reg_token_;  // [1 x C0]
  std::vector<EncoderLayer> layers_;
};

struct CmfDiag {
  std::vector<Array> lafm_weights;  // per used level, [N] each
  std::vector<Array> lafm_affinity;
  Array attn_grid;  // [REG] attention over visual tokens, [HW]
  Index h = 0, w = 0;
};

/// Additive input perturbations for padding-sensitivity probes. Deltas are
/// applied to the language-encoder input embeddings and to the pyramid
/// level maps before tokenization.
struct InputPerturbation {
  Tensor text_embed_delta;            // [Lb x Q]; undefined = none
  std::vector<Tensor> visual_deltas;  // one per used level, [C x h x w]; empty = none
};

/// The full grounding model: encoders, per-level text fusion, per-level
/// interaction, cross-level merge, final fusion, box head.
class CmfModel {
 public:
  explicit CmfModel(ParamRegistry& reg, const ModelConfig& cfg);

  /// Returns the predicted box as a [4] tensor in (0,1)^4.
  Tensor forward(const Tensor& image, const PadMask& pixel_mask, const TokenBatch& tokens,
                 bool train, BnStatsSink* sink = nullptr, CmfDiag* diag = nullptr,
                 const InputPerturbation* probe = nullptr) const;

  const ModelConfig& config() const { return cfg_; }

 private:
  ModelConfig cfg_;
  VisualEncoder visual_;
  ProjectionNeck neck_;
  LanguageEncoder lang_;
  std::vector<Lafm> lafm_;
  std::vector<TokenizePair> tokenize_;
  std::vector<Vlim> vlim_;
  CrossLevelMerge merge_;  // only constructed for multi-level configs
  Vlfm vlfm_;
  Mlp3 head_;
};

}  // namespace cmf
