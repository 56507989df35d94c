#pragma once

#include <array>

#include "cmf/data.hpp"
#include "cmf/layers.hpp"

namespace cmf {

/// Four per-level visual feature maps on a common grid plus the grid-level
/// padding mask (true = padded cell).
struct VisualPyramid {
  std::vector<Tensor> levels;  // each [C x h x w]
  PadMask grid_mask;           // h*w entries, row-major
  Index h = 0, w = 0;
};

/// Per-layer textual features [L x Q] with the position-0 summary vector of
/// each layer and the shared word mask.
struct LayeredText {
  std::vector<Tensor> layers;  // N of [L x Q]
  std::vector<Tensor> cls;     // N of [1 x Q]
  PadMask word_mask;
};

struct EncoderConfig {
  Index image_size = 128;                         // divisible by 16
  std::array<Index, 4> stage_widths = {8, 16, 32, 64};
  Index pyramid_channels = 64;  // C
  Index vocab = 64;             // embedding capacity
  Index text_width = 64;        // Q
  Index text_layers = 6;        // N
  Index max_words = 16;         // L
  Index heads = 4;
};

/// Nearest-neighbor downsampling of a square pixel mask (half-pixel centers).
PadMask downsample_mask(const PadMask& pixel_mask, Index src, Index dst);

/// Small convnet producing raw feature maps at strides 2, 4, 8, 16. Each
/// stage halves the grid (bilinear) and applies two conv-BN-ReLU units.
class VisualEncoder {
 public:
  VisualEncoder() = default;
  VisualEncoder(ParamRegistry& reg, const EncoderConfig& cfg);
  std::vector<Tensor> encode_stages(const Tensor& image, bool train,
                                    BnStatsSink* sink = nullptr) const;

 private:
  struct Stage {
    Conv3x3 conv1, conv2;
    BatchNorm bn1, bn2;
  };
  std::array<Stage, 4> stages_;
  EncoderConfig cfg_;
};

/// Projects each raw stage to the common width (conv-BN-ReLU) and
/// downsamples everything to the deepest stage's grid.
class ProjectionNeck {
 public:
  ProjectionNeck() = default;
  ProjectionNeck(ParamRegistry& reg, const EncoderConfig& cfg);
  VisualPyramid forward(const std::vector<Tensor>& stages, const PadMask& pixel_mask, bool train,
                        BnStatsSink* sink = nullptr) const;

 private:
  struct Level {
    Conv3x3 conv;
    BatchNorm bn;
  };
  std::array<Level, 4> levels_;
  EncoderConfig cfg_;
};

/// Token + learned-position embeddings followed by N masked encoder layers;
/// exposes every layer's hidden states. Sequences shorter than the
/// configured maximum are handled by slicing the position table.
class LanguageEncoder {
 public:
  LanguageEncoder() = default;
  LanguageEncoder(ParamRegistry& reg, const EncoderConfig& cfg);

  /// embed_delta, when given, is added to the input embeddings ([Lb x Q]);
  /// it exists for padding-sensitivity probes.
  LayeredText forward(const TokenBatch& tokens, const Tensor* embed_delta = nullptr) const;

 private:
  Tensor tok_embed_;  // [V x Q]
  Tensor pos_embed_;  // [L x Q]
  std::vector<EncoderLayer> layers_;
  EncoderConfig cfg_;
};

}  // namespace cmf
