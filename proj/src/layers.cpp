#include "cmf/layers.hpp"

#include <algorithm>
#include <cmath>

namespace cmf {

// ---- ParamRegistry -----------------------------------------------------------

ParamGroup group_for_name(const std::string& name) {
  return (name.rfind("visual.", 0) == 0 || name.rfind("lang.", 0) == 0) ? ParamGroup::Encoders
                                                                        : ParamGroup::Rest;
}

Tensor ParamRegistry::insert(const std::string& name, Tensor t, bool trainable) {
  if (contains(name)) throw ContractError(cat("param registry: duplicate name '", name, "'"));
  t.set_requires_grad(trainable);
  entries_.push_back({name, t, trainable, group_for_name(name)});
  return t;
}

Tensor ParamRegistry::zeros(const std::string& name, Shape shape) {
  return insert(name, Tensor::zeros(std::move(shape)), true);
}

Tensor ParamRegistry::ones(const std::string& name, Shape shape) {
  return insert(name, Tensor::ones(std::move(shape)), true);
}

Tensor ParamRegistry::xavier(const std::string& name, Shape shape, Index fan_in, Index fan_out) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Array a(numel(shape));
  for (Index i = 0; i < a.size(); ++i) a[i] = rng_.uniform(-bound, bound);
  return insert(name, Tensor(std::move(shape), std::move(a)), true);
}

Tensor ParamRegistry::buffer(const std::string& name, Shape shape, double fill) {
  return insert(name, Tensor(std::move(shape), fill), false);
}

Tensor ParamRegistry::find(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.name == name) return e.tensor;
  throw ContractError(cat("param registry: unknown name '", name, "'"));
}

bool ParamRegistry::contains(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.name == name) return true;
  return false;
}

Index ParamRegistry::trainable_size() const {
  Index n = 0;
  for (const auto& e : entries_)
    if (e.trainable) n += e.tensor.size();
  return n;
}

void ParamRegistry::zero_all_grads() {
  for (auto& e : entries_) e.tensor.zero_grad();
}

// ---- Linear ------------------------------------------------------------------

Linear::Linear(ParamRegistry& reg, const std::string& prefix, Index d_in, Index d_out,
               bool zero_init)
    : d_in_(d_in), d_out_(d_out) {
  w_ = zero_init ? reg.zeros(prefix + ".w", {d_in, d_out})
                 : reg.xavier(prefix + ".w", {d_in, d_out}, d_in, d_out);
  b_ = reg.zeros(prefix + ".b", {1, d_out});
}

Tensor Linear::forward(const Tensor& x) const {
  if (x.rank() == 1) {
    if (x.extent(0) != d_in_)
      throw ShapeError(cat("linear: expected last dim ", d_in_, ", got ", shape_str(x.shape())));
    Tensor row = reshape(x, {1, d_in_});
    return reshape(add(matmul(row, w_), b_), {d_out_});
  }
  if (x.rank() != 2 || x.extent(1) != d_in_)
    throw ShapeError(cat("linear: expected [S,", d_in_, "], got ", shape_str(x.shape())));
  return add(matmul(x, w_), b_);
}

// ---- Conv3x3 -----------------------------------------------------------------

Conv3x3::Conv3x3(ParamRegistry& reg, const std::string& prefix, Index c_in, Index c_out,
                 bool with_bias)
    : c_in_(c_in), c_out_(c_out) {
  w_ = reg.xavier(prefix + ".w", {c_out, 9 * c_in}, 9 * c_in, 9 * c_out);
  if (with_bias) b_ = reg.zeros(prefix + ".b", {c_out, 1});
}

Tensor Conv3x3::forward(const Tensor& x) const {
  if (x.rank() != 3 || x.extent(0) != c_in_)
    throw ShapeError(cat("conv3x3: expected [", c_in_, ",H,W], got ", shape_str(x.shape())));
  const Index c = c_in_, h = x.extent(1), w = x.extent(2);

  // zero padding of 1 on both spatial axes
  Tensor row_pad = Tensor::zeros({c, 1, w});
  Tensor padded_h = concat({row_pad, x, row_pad}, 1);  // [C, H+2, W]
  Tensor col_pad = Tensor::zeros({c, h + 2, 1});
  Tensor padded = concat({col_pad, padded_h, col_pad}, 2);  // [C, H+2, W+2]

  // gather the nine shifted views; tap order (dy, dx, channel)
  std::vector<Tensor> taps;
  taps.reserve(9);
  for (Index dy = 0; dy < 3; ++dy)
    for (Index dx = 0; dx < 3; ++dx)
      taps.push_back(slice(slice(padded, 1, dy, h), 2, dx, w));
  Tensor cols = reshape(concat(taps, 0), {9 * c, h * w});

  Tensor out = matmul(w_, cols);  // [c_out, HW]
  if (b_.defined()) out = add(out, b_);
  return reshape(out, {c_out_, h, w});
}

// ---- BatchNorm -----------------------------------------------------------------

BatchNorm::BatchNorm(ParamRegistry& reg, const std::string& prefix, Index features, Layout layout,
                     double eps, double momentum)
    : features_(features), layout_(layout), eps_(eps), momentum_(momentum) {
  const Shape stat_shape =
      layout == Layout::RowsBatch ? Shape{1, features} : Shape{features, 1};
  gamma_ = reg.ones(prefix + ".gamma", stat_shape);
  beta_ = reg.zeros(prefix + ".beta", stat_shape);
  run_mean_ = reg.buffer(prefix + ".run_mean", stat_shape, 0.0);
  run_var_ = reg.buffer(prefix + ".run_var", stat_shape, 1.0);
}

Tensor BatchNorm::forward(const Tensor& x, bool train, BnStatsSink* sink) const {
  Tensor flat;  // statistics along axis `stat_axis` of a rank-2 view
  Index stat_axis;
  Shape orig = x.shape();
  if (layout_ == Layout::RowsBatch) {
    if (x.rank() != 2 || x.extent(1) != features_)
      throw ShapeError(cat("batch_norm: expected [B,", features_, "], got ", shape_str(orig)));
    flat = x;
    stat_axis = 0;
  } else {
    if (x.rank() != 3 || x.extent(0) != features_)
      throw ShapeError(cat("batch_norm: expected [", features_, ",H,W], got ", shape_str(orig)));
    flat = reshape(x, {features_, x.extent(1) * x.extent(2)});
    stat_axis = 1;
  }

  Tensor xhat;
  if (train) {
    Tensor mu = mean(flat, stat_axis, true);
    Tensor centered = sub(flat, mu);
    Tensor var = mean(mul(centered, centered), stat_axis, true);
    xhat = div(centered, sqrt(add(var, eps_)));
    if (sink) sink->push_back({this, mu.values(), var.values()});
  } else {
    xhat = div(sub(flat, run_mean_), sqrt(add(run_var_, eps_)));
  }
  Tensor out = add(mul(xhat, gamma_), beta_);
  return layout_ == Layout::RowsBatch ? out : reshape(out, orig);
}

void BatchNorm::update_running(const Array& mean, const Array& var) const {
  Array& rm = *run_mean_.node()->values;
  Array& rv = *run_var_.node()->values;
  rm = (1.0 - momentum_) * rm + momentum_ * mean;
  rv = (1.0 - momentum_) * rv + momentum_ * var;
}

// ---- LayerNorm --------------------------------------------------------------------

LayerNorm::LayerNorm(ParamRegistry& reg, const std::string& prefix, Index features, double eps)
    : features_(features), eps_(eps) {
  gamma_ = reg.ones(prefix + ".gamma", {1, features});
  beta_ = reg.zeros(prefix + ".beta", {1, features});
}

Tensor LayerNorm::forward(const Tensor& x) const {
  if (x.rank() != 2 || x.extent(1) != features_)
    throw ShapeError(cat("layer_norm: expected [S,", features_, "], got ", shape_str(x.shape())));
  Tensor mu = mean(x, 1, true);
  Tensor centered = sub(x, mu);
  Tensor var = mean(mul(centered, centered), 1, true);
  Tensor xhat = div(centered, sqrt(add(var, eps_)));
  return add(mul(xhat, gamma_), beta_);
}

// ---- MultiHeadSelfAttention ----------------------------------------------------------

MultiHeadSelfAttention::MultiHeadSelfAttention(ParamRegistry& reg, const std::string& prefix,
                                               Index width, Index heads)
    : width_(width), heads_(heads), head_dim_(width / heads) {
  if (width % heads != 0)
    throw ContractError(cat("attention: width ", width, " not divisible by heads ", heads));
  q_ = Linear(reg, prefix + ".q", width, width);
  k_ = Linear(reg, prefix + ".k", width, width);
  v_ = Linear(reg, prefix + ".v", width, width);
  out_ = Linear(reg, prefix + ".out", width, width, /*zero_init=*/true);
}

Tensor MultiHeadSelfAttention::forward(const Tensor& tokens, const PadMask& key_pad,
                                       AttnDiag* diag) const {
  const Index s = tokens.extent(0);
  if (tokens.rank() != 2 || tokens.extent(1) != width_)
    throw ShapeError(cat("attention: expected [S,", width_, "], got ", shape_str(tokens.shape())));
  if (!key_pad.empty() && static_cast<Index>(key_pad.size()) != s)
    throw ShapeError(cat("attention: mask length ", key_pad.size(), " != tokens ", s));

  bool any_masked = false, all_masked = true;
  for (Index i = 0; i < s; ++i) {
    const bool m = !key_pad.empty() && key_pad[static_cast<size_t>(i)];
    any_masked = any_masked || m;
    all_masked = all_masked && m;
  }
  if (key_pad.empty()) all_masked = false;

  Tensor keep_row, neg_row;  // [1 x S] constants; exact-zero gate for padded keys
  if (any_masked) {
    Array keep(s), neg(s);
    for (Index i = 0; i < s; ++i) {
      const bool m = key_pad[static_cast<size_t>(i)];
      keep[i] = m ? 0.0 : 1.0;
      neg[i] = m ? -1e30 : 0.0;
    }
    keep_row = Tensor(Shape{1, s}, std::move(keep));
    neg_row = Tensor(Shape{1, s}, std::move(neg));
  }

  Tensor q = q_.forward(tokens), k = k_.forward(tokens), v = v_.forward(tokens);
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim_));

  Array diag_acc;
  if (diag) diag_acc = Array::Zero(s * s);

  std::vector<Tensor> head_outs;
  head_outs.reserve(static_cast<size_t>(heads_));
  for (Index h = 0; h < heads_; ++h) {
    Tensor qh = slice(q, 1, h * head_dim_, head_dim_);
    Tensor kh = slice(k, 1, h * head_dim_, head_dim_);
    Tensor vh = slice(v, 1, h * head_dim_, head_dim_);
    Tensor scores = mul(matmul(qh, transpose(kh)), scale);
    if (any_masked) scores = add(mul(scores, keep_row), neg_row);
    Tensor attn = softmax(scores, 1);
    if (all_masked) attn = mul(attn, 0.0);
    if (diag) diag_acc += attn.values();
    head_outs.push_back(matmul(attn, vh));
  }
  if (diag) {
    diag->weights = diag_acc / static_cast<double>(heads_);
    diag->tokens = s;
  }
  return out_.forward(concat(head_outs, 1));
}

// ---- EncoderLayer ---------------------------------------------------------------------

EncoderLayer::EncoderLayer(ParamRegistry& reg, const std::string& prefix, Index width,
                           Index heads) {
  ln1_ = LayerNorm(reg, prefix + ".ln1", width);
  attn_ = MultiHeadSelfAttention(reg, prefix + ".attn", width, heads);
  ln2_ = LayerNorm(reg, prefix + ".ln2", width);
  ffn1_ = Linear(reg, prefix + ".ffn1", width, 4 * width);
  ffn2_ = Linear(reg, prefix + ".ffn2", 4 * width, width);
}

Tensor EncoderLayer::forward(const Tensor& tokens, const PadMask& key_pad, AttnDiag* diag) const {
  Tensor x = add(tokens, attn_.forward(ln1_.forward(tokens), key_pad, diag));
  return add(x, ffn2_.forward(relu(ffn1_.forward(ln2_.forward(x)))));
}

// ---- bilinear_downsample -----------------------------------------------------------------

namespace {

// [out x in] interpolation weights for half-pixel-center sampling.
Tensor interp_matrix(Index out_n, Index in_n) {
  Array w = Array::Zero(out_n * in_n);
  const double ratio = static_cast<double>(in_n) / static_cast<double>(out_n);
  for (Index i = 0; i < out_n; ++i) {
    double src = (static_cast<double>(i) + 0.5) * ratio - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in_n - 1));  // edge clamping
    const Index i0 = static_cast<Index>(std::floor(src));
    const Index i1 = std::min(i0 + 1, in_n - 1);
    const double frac = src - static_cast<double>(i0);
    w[i * in_n + i0] += 1.0 - frac;
    w[i * in_n + i1] += frac;
  }
  return Tensor(Shape{out_n, in_n}, std::move(w));
}

}  // namespace

Tensor bilinear_downsample(const Tensor& x, Index out_h, Index out_w) {
  if (x.rank() != 3)
    throw ShapeError(cat("bilinear_downsample: expected [C,H,W], got ", shape_str(x.shape())));
  const Index c = x.extent(0), h = x.extent(1), w = x.extent(2);
  if (out_h > h || out_w > w)
    throw ContractError(cat("bilinear_downsample: target ", out_h, "x", out_w,
                            " exceeds source ", h, "x", w, " (downsample only)"));
  if (out_h == h && out_w == w) return x;

  Tensor cols = interp_matrix(out_w, w);  // [W' x W]
  Tensor rows = interp_matrix(out_h, h);  // [H' x H]

  // x . colsT : [C*H, W] x [W, W'] -> [C, H, W']
  Tensor t = reshape(matmul(reshape(x, {c * h, w}), transpose(cols)), {c, h, out_w});
  // rows . t per channel, done by transposing the spatial axes
  t = reshape(permute(t, {0, 2, 1}), {c * out_w, h});           // [C*W', H]
  t = reshape(matmul(t, transpose(rows)), {c, out_w, out_h});   // [C, W', H']
  return permute(t, {0, 2, 1});                                 // [C, H', W']
}

// ---- sinusoidal_pe --------------------------------------------------------------------------

Tensor sinusoidal_pe(Index h, Index w, Index channels) {
  if (channels % 4 != 0)
    throw ContractError(cat("sinusoidal_pe: channels ", channels, " not divisible by 4"));
  const Index half = channels / 2;
  const Index pairs = half / 2;
  Array pe(h * w * channels);
  for (Index r = 0; r < h; ++r) {
    for (Index c = 0; c < w; ++c) {
      double* row = pe.data() + (r * w + c) * channels;
      for (Index k = 0; k < pairs; ++k) {
        const double freq =
            std::pow(10000.0, -2.0 * static_cast<double>(k) / static_cast<double>(half));
        row[2 * k] = std::sin(static_cast<double>(r) * freq);
        row[2 * k + 1] = std::cos(static_cast<double>(r) * freq);
        row[half + 2 * k] = std::sin(static_cast<double>(c) * freq);
        row[half + 2 * k + 1] = std::cos(static_cast<double>(c) * freq);
      }
    }
  }
  return Tensor(Shape{h * w, channels}, std::move(pe));
}

// ---- l2_normalize_rows ------------------------------------------------------------------------

Tensor l2_normalize_rows(const Tensor& x) {
  if (x.rank() != 2)
    throw ShapeError(cat("l2_normalize_rows: expected rank-2, got ", shape_str(x.shape())));
  Tensor norm = sqrt(sum(mul(x, x), 1, true));  // [N x 1]
  Tensor floor_t(Shape{x.extent(0), 1}, 1e-12);
  return div(x, maximum(norm, floor_t));
}

// ---- Mlp3 --------------------------------------------------------------------------------------

Mlp3::Mlp3(ParamRegistry& reg, const std::string& prefix, Index width) {
  l1_ = Linear(reg, prefix + ".l1", width, width);
  l2_ = Linear(reg, prefix + ".l2", width, width);
  l3_ = Linear(reg, prefix + ".l3", width, 4);
}

Tensor Mlp3::forward(const Tensor& x) const {
  Tensor h = x.rank() == 1 ? reshape(x, {1, x.extent(0)}) : x;
  h = relu(l1_.forward(h));
  h = relu(l2_.forward(h));
  return reshape(sigmoid(l3_.forward(h)), {4});
}

}  // namespace cmf
