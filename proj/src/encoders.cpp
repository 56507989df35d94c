#include "cmf/encoders.hpp"

#include <cmath>

namespace cmf {

PadMask downsample_mask(const PadMask& pixel_mask, Index src, Index dst) {
  if (pixel_mask.empty()) return PadMask(static_cast<size_t>(dst * dst), 0);
  if (static_cast<Index>(pixel_mask.size()) != src * src)
    throw ShapeError(cat("downsample_mask: mask size ", pixel_mask.size(), " != ", src, "^2"));
  PadMask out(static_cast<size_t>(dst * dst));
  const double ratio = static_cast<double>(src) / static_cast<double>(dst);
  for (Index i = 0; i < dst; ++i) {
    const Index sy = std::clamp<Index>(
        static_cast<Index>(std::lround((static_cast<double>(i) + 0.5) * ratio - 0.5)), 0, src - 1);
    for (Index j = 0; j < dst; ++j) {
      const Index sx = std::clamp<Index>(
          static_cast<Index>(std::lround((static_cast<double>(j) + 0.5) * ratio - 0.5)), 0,
          src - 1);
      out[static_cast<size_t>(i * dst + j)] = pixel_mask[static_cast<size_t>(sy * src + sx)];
    }
  }
  return out;
}

// ---- VisualEncoder -----------------------------------------------------------

VisualEncoder::VisualEncoder(ParamRegistry& reg, const EncoderConfig& cfg) : cfg_(cfg) {
  Index c_in = 3;
  for (int s = 0; s < 4; ++s) {
    const Index width = cfg.stage_widths[static_cast<size_t>(s)];
    const std::string p = cat("visual.stage", s);
    stages_[static_cast<size_t>(s)] = {
        Conv3x3(reg, p + ".conv1", c_in, width, /*with_bias=*/false),
        Conv3x3(reg, p + ".conv2", width, width, /*with_bias=*/false),
        BatchNorm(reg, p + ".bn1", width, BatchNorm::Layout::ChannelsFirst),
        BatchNorm(reg, p + ".bn2", width, BatchNorm::Layout::ChannelsFirst),
    };
    c_in = width;
  }
}

std::vector<Tensor> VisualEncoder::encode_stages(const Tensor& image, bool train,
                                                 BnStatsSink* sink) const {
  if (image.rank() != 3 || image.extent(0) != 3)
    throw ShapeError(cat("visual_encode: expected [3,H,W], got ", shape_str(image.shape())));
  const Index s0 = image.extent(1);
  if (s0 != image.extent(2) || s0 % 16 != 0)
    throw ContractError(cat("visual_encode: image size ", s0, "x", image.extent(2),
                            " must be square and divisible by 16"));
  std::vector<Tensor> maps;
  Tensor x = image;
  Index grid = s0;
  for (const Stage& st : stages_) {
    grid /= 2;
    x = bilinear_downsample(x, grid, grid);
    x = relu(st.bn1.forward(st.conv1.forward(x), train, sink));
    x = relu(st.bn2.forward(st.conv2.forward(x), train, sink));
    maps.push_back(x);
  }
  return maps;
}

// ---- ProjectionNeck -------------------------------------------------------------

ProjectionNeck::ProjectionNeck(ParamRegistry& reg, const EncoderConfig& cfg) : cfg_(cfg) {
  for (int l = 0; l < 4; ++l) {
    const std::string p = cat("neck.level", l);
    levels_[static_cast<size_t>(l)] = {
        Conv3x3(reg, p + ".conv", cfg.stage_widths[static_cast<size_t>(l)],
                cfg.pyramid_channels, /*with_bias=*/false),
        BatchNorm(reg, p + ".bn", cfg.pyramid_channels, BatchNorm::Layout::ChannelsFirst),
    };
  }
}

VisualPyramid ProjectionNeck::forward(const std::vector<Tensor>& stages, const PadMask& pixel_mask,
                                      bool train, BnStatsSink* sink) const {
  if (stages.size() != 4)
    throw ContractError(cat("project_neck: expected 4 stages, got ", stages.size()));
  const Index target = stages.back().extent(1);  // deepest grid
  VisualPyramid pyr;
  pyr.h = pyr.w = target;
  for (size_t l = 0; l < 4; ++l) {
    Tensor x = relu(levels_[l].bn.forward(levels_[l].conv.forward(stages[l]), train, sink));
    pyr.levels.push_back(bilinear_downsample(x, target, target));
  }
  pyr.grid_mask = downsample_mask(pixel_mask, cfg_.image_size, target);
  return pyr;
}

// ---- LanguageEncoder ----------------------------------------------------------------

LanguageEncoder::LanguageEncoder(ParamRegistry& reg, const EncoderConfig& cfg) : cfg_(cfg) {
  tok_embed_ = reg.xavier("lang.embed.tok", {cfg.vocab, cfg.text_width}, cfg.vocab,
                          cfg.text_width);
  pos_embed_ = reg.xavier("lang.embed.pos", {cfg.max_words, cfg.text_width}, cfg.max_words,
                          cfg.text_width);
  for (Index l = 0; l < cfg.text_layers; ++l)
    layers_.emplace_back(reg, cat("lang.layer", l), cfg.text_width, cfg.heads);
}

LayeredText LanguageEncoder::forward(const TokenBatch& tokens, const Tensor* embed_delta) const {
  const Index lb = static_cast<Index>(tokens.ids.size());
  if (lb < 2 || lb > cfg_.max_words)
    throw ContractError(cat("language_encode: sequence length ", lb, " outside [2,",
                            cfg_.max_words, "]"));
  if (tokens.ids[0] != Vocab::kCls)
    throw ContractError("language_encode: sequence must start with [CLS]");
  Index seps = 0;
  for (Index id : tokens.ids) {
    if (id < 0 || id >= cfg_.vocab)
      throw DataError(cat("language_encode: token id ", id, " outside vocabulary of ",
                          cfg_.vocab));
    if (id == Vocab::kSep) ++seps;
  }
  if (seps != 1) throw ContractError(cat("language_encode: expected one [SEP], found ", seps));
  if (static_cast<Index>(tokens.word_mask.size()) != lb)
    throw ShapeError("language_encode: mask length mismatch");

  // one-hot lookup keeps the embedding gradient a plain matmul
  Array onehot = Array::Zero(lb * cfg_.vocab);
  for (Index i = 0; i < lb; ++i) onehot[i * cfg_.vocab + tokens.ids[static_cast<size_t>(i)]] = 1.0;
  Tensor x = matmul(Tensor(Shape{lb, cfg_.vocab}, std::move(onehot)), tok_embed_);
  x = add(x, lb == cfg_.max_words ? pos_embed_ : slice(pos_embed_, 0, 0, lb));
  if (embed_delta) x = add(x, *embed_delta);

  LayeredText out;
  out.word_mask = tokens.word_mask;
  for (const EncoderLayer& layer : layers_) {
    x = layer.forward(x, tokens.word_mask);
    out.layers.push_back(x);
    out.cls.push_back(slice(x, 0, 0, 1));
  }
  // structural consistency: each summary vector is row 0 of its layer
  for (size_t j = 0; j < out.layers.size(); ++j)
    for (Index q = 0; q < cfg_.text_width; ++q)
      if (out.cls[j].values()[q] != out.layers[j].values()[q])
        throw ContractError("language_encode: cls slice out of sync with layer output");
  return out;
}

}  // namespace cmf
