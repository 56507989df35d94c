#include "cmf/lafm.hpp"

namespace cmf {

LafmVariant lafm_variant_from_name(const std::string& name) {
  if (name == "cls_sa") return LafmVariant::ClsSelfAttn;
  if (name == "n_learnable") return LafmVariant::NLearnable;
  if (name == "cls_softmax") return LafmVariant::ClsSoftmax;
  if (name == "max_sa") return LafmVariant::MaxSelfAttn;
  if (name == "mean_sa") return LafmVariant::MeanSelfAttn;
  if (name == "last_layer") return LafmVariant::LastLayer;
  throw ContractError(cat("unknown fusion variant '", name, "'"));
}

const char* lafm_variant_name(LafmVariant v) {
  switch (v) {
    case LafmVariant::ClsSelfAttn: return "cls_sa";
    case LafmVariant::NLearnable: return "n_learnable";
    case LafmVariant::ClsSoftmax: return "cls_softmax";
    case LafmVariant::MaxSelfAttn: return "max_sa";
    case LafmVariant::MeanSelfAttn: return "mean_sa";
    default: return "last_layer";
  }
}

Lafm::Lafm(ParamRegistry& reg, const std::string& prefix, Index text_width, Index text_layers,
           LafmVariant variant)
    : variant_(variant), q_(text_width), n_(text_layers) {
  switch (variant) {
    case LafmVariant::NLearnable:
      theta_ = reg.zeros(prefix + ".theta", {text_layers});
      break;
    case LafmVariant::LastLayer:
      break;  // parameter-free bypass
    case LafmVariant::ClsSoftmax:
      score1_ = Linear(reg, prefix + ".score1", text_width, text_width / 2);
      score_bn_ = BatchNorm(reg, prefix + ".score_bn", text_width / 2,
                            BatchNorm::Layout::RowsBatch);
      score2_ = Linear(reg, prefix + ".score2", text_width / 2, 1);
      break;
    default:  // affinity designs
      e_proj_ = Linear(reg, prefix + ".e_proj", text_width, text_width);
      score1_ = Linear(reg, prefix + ".score1", text_width, text_width / 2);
      score_bn_ = BatchNorm(reg, prefix + ".score_bn", text_width / 2,
                            BatchNorm::Layout::RowsBatch);
      score2_ = Linear(reg, prefix + ".score2", text_width / 2, 1);
      break;
  }
}

Tensor Lafm::stack_cls(const LayeredText& text) {
  if (text.cls.empty()) throw ContractError("stack_cls: no layers");
  std::vector<Tensor> rows(text.cls.begin(), text.cls.end());
  return concat(rows, 0);  // row j = summary vector of layer j
}

Tensor Lafm::scorer(const Tensor& pooled, bool train, BnStatsSink* sink) const {
  Tensor h = relu(score_bn_.forward(score1_.forward(pooled), train, sink));
  Tensor logits = reshape(score2_.forward(h), {n_});
  return softmax(logits, 0);
}

Tensor Lafm::fusion_weights(const LayeredText& text, bool train, BnStatsSink* sink,
                            LafmDiag* diag) const {
  if (static_cast<Index>(text.layers.size()) != n_)
    throw ShapeError(cat("fusion_weights: expected ", n_, " layers, got ", text.layers.size()));

  Tensor s;
  Array affinity;
  switch (variant_) {
    case LafmVariant::NLearnable:
      s = softmax(theta_, 0);
      break;
    case LafmVariant::LastLayer: {
      Array onehot = Array::Zero(n_);
      onehot[n_ - 1] = 1.0;
      s = Tensor(Shape{n_}, std::move(onehot));
      break;
    }
    case LafmVariant::ClsSoftmax:
      s = scorer(stack_cls(text), train, sink);
      break;
    default: {
      Tensor pooled;
      if (variant_ == LafmVariant::ClsSelfAttn) {
        pooled = stack_cls(text);
      } else {
        std::vector<Tensor> rows;
        rows.reserve(static_cast<size_t>(n_));
        for (const Tensor& layer : text.layers)
          rows.push_back(variant_ == LafmVariant::MaxSelfAttn ? max_reduce(layer, 0, true)
                                                              : mean(layer, 0, true));
        pooled = concat(rows, 0);  // [N x Q]
      }
      Tensor e = e_proj_.forward(pooled);
      Tensor f = l2_normalize_rows(pooled);
      Tensor a = softmax(matmul(e, transpose(f)), 1);  // row-stochastic affinity
      affinity = a.values();
      s = scorer(matmul(a, pooled), train, sink);
      break;
    }
  }
  if (diag) {
    diag->fusion_weights = s.values();
    diag->affinity = affinity;
  }
  return s;
}

Tensor Lafm::fuse(const Tensor& weights, const LayeredText& text) {
  const Index n = static_cast<Index>(text.layers.size());
  if (weights.rank() != 1 || weights.extent(0) != n)
    throw ShapeError(cat("fuse: weight length ", shape_str(weights.shape()), " != layers ", n));
  Tensor acc;
  for (Index j = 0; j < n; ++j) {
    Tensor wj = reshape(slice(weights, 0, j, 1), {1, 1});
    Tensor term = mul(text.layers[static_cast<size_t>(j)], wj);
    acc = j == 0 ? term : add(acc, term);
  }
  return acc;
}

Tensor Lafm::forward(const LayeredText& text, bool train, BnStatsSink* sink,
                     LafmDiag* diag) const {
  if (variant_ == LafmVariant::LastLayer) {
    if (diag) {
      Array onehot = Array::Zero(n_);
      onehot[n_ - 1] = 1.0;
      diag->fusion_weights = onehot;
      diag->affinity = Array();
    }
    return text.layers.back();
  }
  return fuse(fusion_weights(text, train, sink, diag), text);
}

}  // namespace cmf
