#pragma once

#include "cmf/fusion.hpp"
#include "cmf/rng.hpp"

namespace cmf::testutil {

/// Small-but-complete model configuration for fast structural tests.
inline ModelConfig micro_config() {
  ModelConfig cfg;
  cfg.enc.image_size = 32;  // deepest grid 2x2
  cfg.enc.stage_widths = {4, 6, 8, 8};
  cfg.enc.pyramid_channels = 8;
  cfg.enc.vocab = 32;
  cfg.enc.text_width = 8;
  cfg.enc.text_layers = 2;
  cfg.enc.max_words = 8;
  cfg.enc.heads = 2;
  cfg.fusion_width = 8;
  cfg.heads = 2;
  cfg.vlim_depth = 1;
  cfg.vlfm_depth = 2;
  return cfg;
}

inline Tensor random_image(Index size, Rng& rng) {
  Array a(3 * size * size);
  for (Index i = 0; i < a.size(); ++i) a[i] = rng.uniform();
  return Tensor(Shape{3, size, size}, std::move(a));
}

inline LayeredText random_text(Index n, Index l, Index q, Rng& rng) {
  LayeredText t;
  for (Index j = 0; j < n; ++j) {
    Array a(l * q);
    for (Index i = 0; i < a.size(); ++i) a[i] = rng.normal();
    Tensor layer(Shape{l, q}, std::move(a));
    t.layers.push_back(layer);
    t.cls.push_back(slice(layer, 0, 0, 1));
  }
  t.word_mask.assign(static_cast<size_t>(l), 0);
  return t;
}

/// At init the attention output projections are zero (residual identity),
/// so cross-token information flow is off. Sensitivity and connectivity
/// probes randomize them first.
inline void activate_attention(ParamRegistry& reg, Rng& rng, double scale = 0.3) {
  for (const auto& e : reg.entries()) {
    if (e.name.find(".attn.out.w") == std::string::npos) continue;
    Array fresh(e.tensor.size());
    for (Index i = 0; i < fresh.size(); ++i) fresh[i] = rng.normal() * scale;
    *e.tensor.node()->values = fresh;
  }
}

}  // namespace cmf::testutil
