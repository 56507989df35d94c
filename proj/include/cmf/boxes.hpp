#pragma once

#include <vector>

#include "cmf/tensor.hpp"

namespace cmf {

/// Axis-aligned box in normalized center-size form; component order is
/// (x, y, h, w) with h the vertical extent.
struct Box {
  double x = 0, y = 0, h = 0, w = 0;
};

struct Corners {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;
};

/// Corner form clamped to the unit frame.
Corners to_corners(const Box& b);

/// Intersection over union; 0 when the union is empty.
double iou(const Box& a, const Box& b);

/// Generalized IoU: iou - (area(C) - area(union)) / area(C) with C the
/// smallest enclosing box. Falls back to iou when C has zero area.
double giou(const Box& a, const Box& b);

/// Fraction of pairs with iou strictly greater than 0.5.
double acc_at_05(const std::vector<Box>& preds, const std::vector<Box>& gts);

/// Differential-testing oracle: rasterizes the unit frame into grid x grid
/// cells and counts cell centers inside the intersection vs the union.
double raster_iou_oracle(const Box& a, const Box& b, Index grid);

// ---- differentiable (tape) versions ------------------------------------------

/// L1 distance in center-size space: sum of |pred - gt| over 4 components.
/// pred: [4] tensor.
Tensor box_l1(const Tensor& pred, const Box& gt);

/// GIoU of a predicted [4] tensor against a ground-truth box, built from
/// tape primitives (corners clamped to the unit frame like to_corners).
Tensor box_giou(const Tensor& pred, const Box& gt);

/// lambda_l1 * l1 + lambda_giou * (1 - giou), a [1] tensor.
Tensor rec_loss(const Tensor& pred, const Box& gt, double lambda_l1, double lambda_giou);

}  // namespace cmf
