#include "cmf/boxes.hpp"

#include <algorithm>
#include <cmath>

namespace cmf {

Corners to_corners(const Box& b) {
  auto clamp01 = [](double v) { return std::clamp(v, 0.0, 1.0); };
  return {clamp01(b.x - b.w / 2), clamp01(b.y - b.h / 2), clamp01(b.x + b.w / 2),
          clamp01(b.y + b.h / 2)};
}

namespace {

double area(const Corners& c) { return std::max(0.0, c.x2 - c.x1) * std::max(0.0, c.y2 - c.y1); }

}  // namespace

double iou(const Box& a, const Box& b) {
  const Corners ca = to_corners(a), cb = to_corners(b);
  const double iw = std::max(0.0, std::min(ca.x2, cb.x2) - std::max(ca.x1, cb.x1));
  const double ih = std::max(0.0, std::min(ca.y2, cb.y2) - std::max(ca.y1, cb.y1));
  const double inter = iw * ih;
  const double uni = area(ca) + area(cb) - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

double giou(const Box& a, const Box& b) {
  const Corners ca = to_corners(a), cb = to_corners(b);
  const double iw = std::max(0.0, std::min(ca.x2, cb.x2) - std::max(ca.x1, cb.x1));
  const double ih = std::max(0.0, std::min(ca.y2, cb.y2) - std::max(ca.y1, cb.y1));
  const double inter = iw * ih;
  const double uni = area(ca) + area(cb) - inter;
  const double base = uni > 0.0 ? inter / uni : 0.0;
  const double cw = std::max(ca.x2, cb.x2) - std::min(ca.x1, cb.x1);
  const double ch = std::max(ca.y2, cb.y2) - std::min(ca.y1, cb.y1);
  const double enclosing = cw * ch;
  if (enclosing <= 0.0) return base;
  return base - (enclosing - uni) / enclosing;
}

double acc_at_05(const std::vector<Box>& preds, const std::vector<Box>& gts) {
  if (preds.size() != gts.size())
    throw ShapeError(cat("acc_at_05: ", preds.size(), " predictions vs ", gts.size(), " truths"));
  if (preds.empty()) return 0.0;
  size_t hits = 0;
  for (size_t i = 0; i < preds.size(); ++i)
    if (iou(preds[i], gts[i]) > 0.5) ++hits;  // strictly greater
  return static_cast<double>(hits) / static_cast<double>(preds.size());
}

double raster_iou_oracle(const Box& a, const Box& b, Index grid) {
  if (grid < 64) throw ContractError(cat("raster_iou_oracle: grid ", grid, " < 64"));
  const Corners ca = to_corners(a), cb = to_corners(b);
  // column membership per cell center
  std::vector<uint8_t> col_a(static_cast<size_t>(grid)), col_b(static_cast<size_t>(grid));
  Index cols_a = 0, cols_b = 0, cols_ab = 0, cols_aub = 0;
  for (Index j = 0; j < grid; ++j) {
    const double x = (static_cast<double>(j) + 0.5) / static_cast<double>(grid);
    col_a[static_cast<size_t>(j)] = x >= ca.x1 && x <= ca.x2;
    col_b[static_cast<size_t>(j)] = x >= cb.x1 && x <= cb.x2;
    cols_a += col_a[static_cast<size_t>(j)];
    cols_b += col_b[static_cast<size_t>(j)];
    cols_ab += col_a[static_cast<size_t>(j)] && col_b[static_cast<size_t>(j)];
    cols_aub += col_a[static_cast<size_t>(j)] || col_b[static_cast<size_t>(j)];
  }
  long long inter = 0, uni = 0;
  for (Index i = 0; i < grid; ++i) {
    const double y = (static_cast<double>(i) + 0.5) / static_cast<double>(grid);
    const bool row_a = y >= ca.y1 && y <= ca.y2;
    const bool row_b = y >= cb.y1 && y <= cb.y2;
    if (row_a && row_b) {
      inter += cols_ab;
      uni += cols_aub;
    } else if (row_a) {
      uni += cols_a;
    } else if (row_b) {
      uni += cols_b;
    }
  }
  return uni > 0 ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
}

// ---- differentiable versions ----------------------------------------------------

namespace {

struct TapeCorners {
  Tensor x1, y1, x2, y2;  // [1] each
};

TapeCorners tape_corners(const Tensor& pred) {
  if (pred.rank() != 1 || pred.extent(0) != 4)
    throw ShapeError(cat("box ops: expected [4] prediction, got ", shape_str(pred.shape())));
  Tensor x = slice(pred, 0, 0, 1), y = slice(pred, 0, 1, 1);
  Tensor h = slice(pred, 0, 2, 1), w = slice(pred, 0, 3, 1);
  return {clamp01(sub(x, mul(w, 0.5))), clamp01(sub(y, mul(h, 0.5))),
          clamp01(add(x, mul(w, 0.5))), clamp01(add(y, mul(h, 0.5)))};
}

}  // namespace

Tensor box_l1(const Tensor& pred, const Box& gt) {
  Tensor target = Tensor::from({4}, {gt.x, gt.y, gt.h, gt.w});
  return sum(abs(sub(pred, target)));
}

Tensor box_giou(const Tensor& pred, const Box& gt) {
  const TapeCorners p = tape_corners(pred);
  const Corners g = to_corners(gt);
  Tensor gx1 = Tensor::scalar(g.x1), gy1 = Tensor::scalar(g.y1);
  Tensor gx2 = Tensor::scalar(g.x2), gy2 = Tensor::scalar(g.y2);

  Tensor iw = relu(sub(minimum(p.x2, gx2), maximum(p.x1, gx1)));
  Tensor ih = relu(sub(minimum(p.y2, gy2), maximum(p.y1, gy1)));
  Tensor inter = mul(iw, ih);
  Tensor area_p = mul(sub(p.x2, p.x1), sub(p.y2, p.y1));
  const double area_g = area(g);
  Tensor uni = sub(add(area_p, area_g), inter);
  Tensor base = div(inter, uni);

  Tensor cw = sub(maximum(p.x2, gx2), minimum(p.x1, gx1));
  Tensor ch = sub(maximum(p.y2, gy2), minimum(p.y1, gy1));
  Tensor enclosing = mul(cw, ch);
  return sub(base, div(sub(enclosing, uni), enclosing));
}

Tensor rec_loss(const Tensor& pred, const Box& gt, double lambda_l1, double lambda_giou) {
  if (lambda_l1 < 0 || lambda_giou < 0)
    throw ContractError("rec_loss: loss weights must be non-negative");
  Tensor l1 = box_l1(pred, gt);
  Tensor g = box_giou(pred, gt);
  return add(mul(l1, lambda_l1), mul(sub(1.0, g), lambda_giou));
}

}  // namespace cmf
