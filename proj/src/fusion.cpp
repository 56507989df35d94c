#include "cmf/fusion.hpp"

#include <algorithm>

namespace cmf {

void ModelConfig::validate() const {
  if (fusion_width % 4 != 0)
    throw ContractError(cat("config: fusion width ", fusion_width, " must be divisible by 4"));
  if (fusion_width % heads != 0)
    throw ContractError(cat("config: fusion width ", fusion_width, " not divisible by heads ",
                            heads));
  if (enc.text_width % 2 != 0)
    throw ContractError("config: text width must be even");
  if (levels.empty()) throw ContractError("config: at least one pyramid level required");
  for (Index l : levels)
    if (l < 1 || l > 4) throw ContractError(cat("config: pyramid level ", l, " outside 1..4"));
  if (vlfm_depth < 1) throw ContractError("config: fusion stack needs at least one layer");
  if (vlim_depth < 0) throw ContractError("config: negative interaction depth");
}

// ---- TokenizePair ---------------------------------------------------------------

TokenizePair::TokenizePair(ParamRegistry& reg, const std::string& prefix, Index visual_channels,
                           Index text_width, Index fusion_width)
    : fusion_width_(fusion_width) {
  v_proj_ = Linear(reg, prefix + ".v_proj", visual_channels, fusion_width);
  t_proj_ = Linear(reg, prefix + ".t_proj", text_width, fusion_width);
}

JointTokens TokenizePair::forward(const Tensor& level_map, const Tensor& fused_text,
                                  const PadMask& grid_mask, const PadMask& word_mask) const {
  const Index c = level_map.extent(0), h = level_map.extent(1), w = level_map.extent(2);
  const Index hw = h * w, lb = fused_text.extent(0);
  if (static_cast<Index>(grid_mask.size()) != hw)
    throw ShapeError(cat("tokenize_pair: grid mask ", grid_mask.size(), " != ", hw));
  if (static_cast<Index>(word_mask.size()) != lb)
    throw ShapeError(cat("tokenize_pair: word mask ", word_mask.size(), " != ", lb));

  Tensor visual_tokens = transpose(reshape(level_map, {c, hw}));  // [HW x C]
  Tensor v = add(v_proj_.forward(visual_tokens), sinusoidal_pe(h, w, fusion_width_));
  Tensor t = t_proj_.forward(fused_text);  // text tokens carry no position encoding

  JointTokens out;
  out.tokens = concat({t, v}, 0);  // text first, then visual
  out.text_len = lb;
  out.grid_tokens = hw;
  out.h = h;
  out.w = w;
  out.mask.reserve(static_cast<size_t>(lb + hw));
  out.mask.insert(out.mask.end(), word_mask.begin(), word_mask.end());
  out.mask.insert(out.mask.end(), grid_mask.begin(), grid_mask.end());
  return out;
}

FusedPair split_joint(const JointTokens& joint) {
  FusedPair p;
  p.text = slice(joint.tokens, 0, 0, joint.text_len);
  p.visual = slice(joint.tokens, 0, joint.text_len, joint.grid_tokens);
  p.h = joint.h;
  p.w = joint.w;
  return p;
}

// ---- Vlim ----------------------------------------------------------------------------

Vlim::Vlim(ParamRegistry& reg, const std::string& prefix, Index width, Index heads, Index depth) {
  for (Index d = 0; d < depth; ++d)
    layers_.emplace_back(reg, cat(prefix, ".layer", d), width, heads);
}

FusedPair Vlim::forward(const JointTokens& joint) const {
  JointTokens cur = joint;
  for (const EncoderLayer& layer : layers_) cur.tokens = layer.forward(cur.tokens, cur.mask);
  return split_joint(cur);
}

// ---- CrossLevelMerge --------------------------------------------------------------------

CrossLevelMerge::CrossLevelMerge(ParamRegistry& reg, const std::string& prefix, Index levels,
                                 Index fusion_width)
    : levels_(levels) {
  v_proj_ = Linear(reg, prefix + ".v_proj", levels * fusion_width, fusion_width);
  t_proj_ = Linear(reg, prefix + ".t_proj", levels * fusion_width, fusion_width);
}

FusedPair CrossLevelMerge::forward(const std::vector<FusedPair>& parts) const {
  if (static_cast<Index>(parts.size()) != levels_)
    throw ShapeError(cat("cross_level_merge: expected ", levels_, " levels, got ", parts.size()));
  std::vector<Tensor> vis, txt;
  for (const FusedPair& p : parts) {
    vis.push_back(p.visual);
    txt.push_back(p.text);
  }
  FusedPair out;
  out.visual = v_proj_.forward(concat(vis, 1));  // per-position projection
  out.text = t_proj_.forward(concat(txt, 1));
  out.h = parts[0].h;
  out.w = parts[0].w;
  return out;
}

// ---- Vlfm ------------------------------------------------------------------------------

Vlfm::Vlfm(ParamRegistry& reg, const std::string& prefix, Index width, Index heads, Index depth) {
  reg_token_ = reg.xavier(prefix + ".reg", {1, width}, 1, width);
  for (Index d = 0; d < depth; ++d)
    layers_.emplace_back(reg, cat(prefix, ".layer", d), width, heads);
}

Tensor Vlfm::forward(const FusedPair& merged, const PadMask& word_mask, const PadMask& grid_mask,
                     AttnDiag* final_layer_attn) const {
  const Index width = merged.visual.extent(1);
  Tensor v = add(merged.visual, sinusoidal_pe(merged.h, merged.w, width));
  Tensor z = concat({reg_token_, merged.text, v}, 0);  // [1 + L + HW, C0]

  PadMask mask;
  mask.reserve(1 + word_mask.size() + grid_mask.size());
  mask.push_back(0);  // [REG] is always attendable
  mask.insert(mask.end(), word_mask.begin(), word_mask.end());
  mask.insert(mask.end(), grid_mask.begin(), grid_mask.end());

  for (size_t d = 0; d < layers_.size(); ++d) {
    AttnDiag* diag = (d + 1 == layers_.size()) ? final_layer_attn : nullptr;
    z = layers_[d].forward(z, mask, diag);
  }
  return slice(z, 0, 0, 1);  // the [REG] position
}

// ---- CmfModel -------------------------------------------------------------------------------

CmfModel::CmfModel(ParamRegistry& reg, const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  visual_ = VisualEncoder(reg, cfg_.enc);
  neck_ = ProjectionNeck(reg, cfg_.enc);
  lang_ = LanguageEncoder(reg, cfg_.enc);
  for (size_t i = 0; i < cfg_.levels.size(); ++i) {
    const Index level = cfg_.levels[i];
    lafm_.emplace_back(reg, cat("lafm.level", level), cfg_.enc.text_width, cfg_.enc.text_layers,
                       cfg_.lafm);
    tokenize_.emplace_back(reg, cat("tok.level", level), cfg_.enc.pyramid_channels,
                           cfg_.enc.text_width, cfg_.fusion_width);
    if (cfg_.vlim_depth > 0)
      vlim_.emplace_back(reg, cat("vlim.level", level), cfg_.fusion_width, cfg_.heads,
                         cfg_.vlim_depth);
  }
  if (cfg_.levels.size() > 1)
    merge_ = CrossLevelMerge(reg, "merge", static_cast<Index>(cfg_.levels.size()),
                             cfg_.fusion_width);
  vlfm_ = Vlfm(reg, "vlfm", cfg_.fusion_width, cfg_.heads, cfg_.vlfm_depth);
  head_ = Mlp3(reg, "head", cfg_.fusion_width);
}

Tensor CmfModel::forward(const Tensor& image, const PadMask& pixel_mask, const TokenBatch& tokens,
                         bool train, BnStatsSink* sink, CmfDiag* diag,
                         const InputPerturbation* probe) const {
  VisualPyramid pyramid =
      neck_.forward(visual_.encode_stages(image, train, sink), pixel_mask, train, sink);
  LayeredText text = lang_.forward(
      tokens, probe && probe->text_embed_delta.defined() ? &probe->text_embed_delta : nullptr);

  std::vector<FusedPair> pairs;
  pairs.reserve(cfg_.levels.size());
  for (size_t i = 0; i < cfg_.levels.size(); ++i) {
    LafmDiag ldiag;
    Tensor fused_text = lafm_[i].forward(text, train, sink, diag ? &ldiag : nullptr);
    if (diag) {
      diag->lafm_weights.push_back(ldiag.fusion_weights);
      diag->lafm_affinity.push_back(ldiag.affinity);
    }
    Tensor level_map = pyramid.levels[static_cast<size_t>(cfg_.levels[i] - 1)];
    if (probe && !probe->visual_deltas.empty() && probe->visual_deltas[i].defined())
      level_map = add(level_map, probe->visual_deltas[i]);
    JointTokens joint =
        tokenize_[i].forward(level_map, fused_text, pyramid.grid_mask, text.word_mask);
    pairs.push_back(cfg_.vlim_depth > 0 ? vlim_[i].forward(joint) : split_joint(joint));
  }

  FusedPair merged = pairs.size() > 1 ? merge_.forward(pairs) : pairs[0];

  AttnDiag attn;
  Tensor reg_out = vlfm_.forward(merged, text.word_mask, pyramid.grid_mask,
                                 diag ? &attn : nullptr);
  if (diag) {
    const Index s = attn.tokens;
    const Index lb = static_cast<Index>(text.word_mask.size());
    diag->h = merged.h;
    diag->w = merged.w;
    diag->attn_grid = Array::Zero(merged.h * merged.w);
    for (Index i = 0; i < merged.h * merged.w; ++i)
      diag->attn_grid[i] = attn.weights[0 * s + 1 + lb + i];  // [REG] query row
  }
  return head_.forward(reshape(reg_out, {cfg_.fusion_width}));
}

}  // namespace cmf
